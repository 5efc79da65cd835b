#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "asymtrack/head.hpp"
#include "asymtrack/image.hpp"
#include "asymtrack/models.hpp"

namespace asymtrack {

struct TrackerConfig {
  double search_factor = 4.0;
  double template_factor = 2.0;
  bool store_enabled = true;
  int store_capacity = 16;
  double confidence_threshold = 0.7;  // tau
  int refresh_interval = 25;          // N_upd, frames
  double fusion_alpha = 0.5;
};

struct StoreEntry {
  Image crop;  // template-scale crop, re-encoded at refresh time
  double confidence = 0.0;
  long frame_index = 0;
};

// Bounded buffer of confidence-gated target observations.
class TargetStore {
 public:
  TargetStore(int capacity, double threshold) : capacity_(capacity), threshold_(threshold) {}

  void offer(Image crop, double confidence, long frame_index) {
    if (confidence < threshold_) return;
    entries_.push_back({std::move(crop), confidence, frame_index});
    if (static_cast<int>(entries_.size()) > capacity_) {
      std::size_t worst = 0;
      for (std::size_t i = 1; i < entries_.size(); ++i)
        if (entries_[i].confidence < entries_[worst].confidence) worst = i;
      entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(worst));
    }
  }

  const StoreEntry* best() const {
    if (entries_.empty()) return nullptr;
    std::size_t b = 0;
    for (std::size_t i = 1; i < entries_.size(); ++i)
      if (entries_[i].confidence > entries_[b].confidence) b = i;
    return &entries_[b];
  }

  const std::vector<StoreEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

 private:
  int capacity_;
  double threshold_;
  std::vector<StoreEntry> entries_;
};

inline std::vector<double> hanning_window_2d(int size) {
  std::vector<double> axis(static_cast<std::size_t>(size), 1.0);
  if (size > 1) {
    constexpr double kTau = 6.28318530717958647692;
    for (int k = 0; k < size; ++k)
      axis[static_cast<std::size_t>(k)] = 0.5 * (1.0 - std::cos(kTau * k / (size - 1)));
  }
  std::vector<double> grid(static_cast<std::size_t>(size) * size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      grid[static_cast<std::size_t>(r) * size + c] =
          axis[static_cast<std::size_t>(r)] * axis[static_cast<std::size_t>(c)];
  return grid;
}

// Asymmetric online tracker: Stage-1 template encoding runs only at
// initialization and periodic refreshes.
class Tracker {
 public:
  Tracker(const StudentModel& model, TrackerConfig cfg)
      : model_(&model),
        cfg_(cfg),
        store_(cfg.store_capacity, cfg.confidence_threshold),
        hanning_(hanning_window_2d(model.config.search_grid())) {}

  void init(const Image& frame, const Rect& gt) {
    if (gt.w <= 0 || gt.h <= 0 || gt.x + gt.w <= 0 || gt.y + gt.h <= 0 ||
        gt.x >= frame.width || gt.y >= frame.height)
      throw std::invalid_argument("tracker init: box outside frame");
    Image crop = crop_resize(frame, gt.cx(), gt.cy(),
                             cfg_.template_factor * std::sqrt(gt.w * gt.h),
                             model_->config.template_size);
    original_template_ = encode_template(crop);
    active_template_ = original_template_;
    prev_box_ = clip_to_frame(gt, frame);
    frame_index_ = 0;
    store_.clear();
    initialized_ = true;
  }

  std::pair<Rect, double> track(const Image& frame) {
    if (!initialized_) throw std::logic_error("tracker: track called before init");
    ++frame_index_;
    double side = cfg_.search_factor * std::sqrt(prev_box_.w * prev_box_.h);
    double ccx = prev_box_.cx(), ccy = prev_box_.cy();
    Image crop = crop_resize(frame, ccx, ccy, side, model_->config.search_size);
    TokenSeq s = embed_patches(crop, model_->backbone, model_->config, TokenOrigin::kSearch);
    TokenSeq s1 = student_stage1(s, model_->backbone, model_->config);
    auto taps = student_stage2(active_template_, s1, model_->backbone, model_->config);
    last_features_ = taps;
    HeadOutput out = head_forward(taps.back(), model_->head, model_->config);
    Decoded d = decode_box(out.score_logits, out.offset, out.size, &hanning_);
    last_prob_ = softmax_t(reshape(out.score_logits,
                                   {out.score_logits.numel()}), 1.0).data();
    Rect box;
    box.w = d.box.w * side;
    box.h = d.box.h * side;
    box.x = (ccx - side / 2.0) + d.box.cx * side - box.w / 2.0;
    box.y = (ccy - side / 2.0) + d.box.cy * side - box.h / 2.0;
    box = clip_to_frame(box, frame);
    prev_box_ = box;
    if (cfg_.store_enabled) {
      // crop only what the store would accept; rejected offers cost nothing
      if (d.confidence >= cfg_.confidence_threshold) {
        Image tcrop = crop_resize(frame, box.cx(), box.cy(),
                                  cfg_.template_factor * std::sqrt(box.w * box.h),
                                  model_->config.template_size);
        store_.offer(std::move(tcrop), d.confidence, frame_index_);
      }
      if (frame_index_ % cfg_.refresh_interval == 0) refresh_template();
    }
    return {box, d.confidence};
  }

  // Fuses the highest-confidence stored crop with the ORIGINAL template
  // tokens; entries are retained.
  void refresh_template() {
    const StoreEntry* e = store_.best();
    if (!e) return;
    TokenSeq fresh = encode_template(e->crop);
    double a = cfg_.fusion_alpha;
    std::vector<double> fused(original_template_.tokens.data());
    for (std::size_t i = 0; i < fused.size(); ++i)
      fused[i] = (1.0 - a) * fused[i] + a * fresh.tokens.data()[i];
    TokenSeq t = original_template_;
    t.tokens = Tensor::from_data(original_template_.tokens.shape(), std::move(fused));
    active_template_ = t;
  }

  long frame_index() const { return frame_index_; }
  const TargetStore& store() const { return store_; }
  TargetStore& store_mut() { return store_; }
  long stage1_template_evals() const { return stage1_template_evals_; }
  const Rect& previous_box() const { return prev_box_; }
  const TokenSeq& active_template() const { return active_template_; }
  const TokenSeq& original_template() const { return original_template_; }
  const std::vector<TokenSeq>& last_features() const { return last_features_; }
  const std::vector<double>& last_probabilities() const { return last_prob_; }
  const std::vector<double>& hanning() const { return hanning_; }

 private:
  TokenSeq encode_template(const Image& crop) {
    ++stage1_template_evals_;
    TokenSeq z = embed_patches(crop, model_->backbone, model_->config, TokenOrigin::kTemplate);
    TokenSeq z1 = student_stage1(z, model_->backbone, model_->config);
    z1.tokens = z1.tokens.detach();
    return z1;
  }

  static Rect clip_to_frame(Rect b, const Image& frame) {
    double x1 = std::clamp(b.x + b.w, 1.0, static_cast<double>(frame.width));
    double y1 = std::clamp(b.y + b.h, 1.0, static_cast<double>(frame.height));
    b.x = std::clamp(b.x, 0.0, x1 - 1.0);
    b.y = std::clamp(b.y, 0.0, y1 - 1.0);
    b.w = x1 - b.x;
    b.h = y1 - b.y;
    return b;
  }

  const StudentModel* model_;
  TrackerConfig cfg_;
  TargetStore store_;
  std::vector<double> hanning_;
  TokenSeq original_template_;
  TokenSeq active_template_;
  Rect prev_box_;
  long frame_index_ = 0;
  long stage1_template_evals_ = 0;
  bool initialized_ = false;
  std::vector<TokenSeq> last_features_;
  std::vector<double> last_prob_;
};

// Runs one-pass tracking over a sequence; the first output line echoes the
// initialization box.
inline std::vector<Rect> track_sequence(const StudentModel& model, const TrackerConfig& cfg,
                                        const std::vector<Image>& frames, const Rect& init_box) {
  if (frames.empty()) throw std::invalid_argument("track_sequence: empty sequence");
  Tracker tracker(model, cfg);
  tracker.init(frames[0], init_box);
  std::vector<Rect> out;
  out.reserve(frames.size());
  out.push_back(init_box);
  for (std::size_t i = 1; i < frames.size(); ++i) out.push_back(tracker.track(frames[i]).first);
  return out;
}

}  // namespace asymtrack
