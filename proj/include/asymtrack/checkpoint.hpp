#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "asymtrack/tensor.hpp"

namespace asymtrack {

// Flat checkpoint format, all integers little-endian uint32, values
// little-endian IEEE-754 doubles. Records back to back until end of file:
//   name length | name bytes | rank | extents... | values...
// Record order is the deterministic module-construction order.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace detail

template <typename Model>
inline void save_checkpoint(Model& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  model.visit_params([&f](const std::string& name, Tensor& t) {
    detail::write_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(f, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::write_u32(f, static_cast<std::uint32_t>(e));
    for (double v : t.data()) detail::write_f64(f, v);
  });
}

template <typename Model>
inline void load_checkpoint(Model& model, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  model.visit_params([&f, &path](const std::string& name, Tensor& t) {
    std::uint32_t len = detail::read_u32(f);
    std::string stored(len, '\0');
    f.read(stored.data(), len);
    if (stored != name)
      throw std::runtime_error("checkpoint: parameter order mismatch in " + path + ": expected " +
                               name + ", found " + stored);
    std::uint32_t rank = detail::read_u32(f);
    Shape shape(rank);
    for (auto& e : shape) e = detail::read_u32(f);
    if (shape != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name + " in " + path);
    for (auto& v : t.data_mut()) v = detail::read_f64(f);
  });
  f.peek();
  if (!f.eof()) throw std::runtime_error("checkpoint: trailing data in " + path);
}

}  // namespace asymtrack
