#include "spotkit/training.hpp"

#include "spotkit/evaluation.hpp"
#include "spotkit/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace spotkit::training {

using nlohmann::json;

void TrainConfig::validate() const {
  if (clip_len < 1 || batch_clips < 1 || steps_per_cycle < 1 || num_cycles < 1) {
    throw Error("clip_len, batch_clips, steps_per_cycle and num_cycles must be >= 1");
  }
  if (warmup_cycles < 0 || warmup_cycles >= num_cycles) throw Error("warmup_cycles must be in [0, num_cycles)");
  if (!(base_lr > 0)) throw Error("base_lr must be > 0");
  if (weight_decay < 0) throw Error("weight_decay must be >= 0");
  if (!(fg_weight > 0)) throw Error("fg_weight must be > 0");
  if (mixup_alpha < 0) throw Error("mixup_alpha must be >= 0");
  if (dilate_radius < 0) throw Error("dilate_radius must be >= 0");
  if (crop_width < 0) throw Error("crop_width must be >= 0");
  if (val_max_videos < 0) throw Error("val_max_videos must be >= 0");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"clip_len", c.clip_len},
           {"batch_clips", c.batch_clips},
           {"steps_per_cycle", c.steps_per_cycle},
           {"num_cycles", c.num_cycles},
           {"base_lr", c.base_lr},
           {"warmup_cycles", c.warmup_cycles},
           {"weight_decay", c.weight_decay},
           {"fg_weight", c.fg_weight},
           {"mixup_alpha", c.mixup_alpha},
           {"dilate_radius", c.dilate_radius},
           {"seed", c.seed},
           {"deterministic", c.deterministic},
           {"crop_width", c.crop_width},
           {"jitter_strength", c.jitter_strength},
           {"blur_probability", c.blur_probability},
           {"val_max_videos", c.val_max_videos},
           {"modality", data::to_string(c.modality)}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.clip_len = j.value("clip_len", d.clip_len);
  c.batch_clips = j.value("batch_clips", d.batch_clips);
  c.steps_per_cycle = j.value("steps_per_cycle", d.steps_per_cycle);
  c.num_cycles = j.value("num_cycles", d.num_cycles);
  c.base_lr = j.value("base_lr", d.base_lr);
  c.warmup_cycles = j.value("warmup_cycles", d.warmup_cycles);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.fg_weight = j.value("fg_weight", d.fg_weight);
  c.mixup_alpha = j.value("mixup_alpha", d.mixup_alpha);
  c.dilate_radius = j.value("dilate_radius", d.dilate_radius);
  c.seed = j.value("seed", d.seed);
  c.deterministic = j.value("deterministic", d.deterministic);
  c.crop_width = j.value("crop_width", d.crop_width);
  c.jitter_strength = j.value("jitter_strength", d.jitter_strength);
  c.blur_probability = j.value("blur_probability", d.blur_probability);
  c.val_max_videos = j.value("val_max_videos", d.val_max_videos);
  c.modality = data::parse_modality(j.value("modality", std::string("rgb")));
}

// ------------------------------------------------------------------ loss

namespace {
std::atomic<std::size_t> g_all_masked{0};
}

std::size_t all_masked_clip_count() { return g_all_masked.load(); }

template <typename T>
double per_frame_loss(const nn::Mat<T>& logits, const SoftLabelSeq& targets, const std::vector<double>& weights,
                      nn::Mat<T>* grad) {
  const Eigen::Index n = logits.rows(), k1 = logits.cols();
  if (targets.dist.rows() != n || targets.dist.cols() != k1 || static_cast<Eigen::Index>(targets.mask.size()) != n ||
      static_cast<Eigen::Index>(weights.size()) != k1) {
    throw Error("loss inputs have inconsistent shapes");
  }
  if (grad) *grad = nn::Mat<T>::Zero(n, k1);
  double total = 0;
  bool any = false;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (!targets.mask[static_cast<std::size_t>(t)]) continue;
    any = true;
    const double mx = logits.row(t).template cast<double>().maxCoeff();
    double z = 0;
    for (Eigen::Index c = 0; c < k1; ++c) z += std::exp(static_cast<double>(logits(t, c)) - mx);
    const double log_z = std::log(z) + mx;
    double w = 0, ce = 0, mass = 0;
    for (Eigen::Index c = 0; c < k1; ++c) {
      const double d = targets.dist(t, c);
      w += weights[static_cast<std::size_t>(c)] * d;
      mass += d;
      if (d != 0) ce -= d * (static_cast<double>(logits(t, c)) - log_z);
    }
    total += w * ce;
    if (grad) {
      for (Eigen::Index c = 0; c < k1; ++c) {
        const double p = std::exp(static_cast<double>(logits(t, c)) - log_z);
        (*grad)(t, c) = static_cast<T>(w * (mass * p - targets.dist(t, c)));
      }
    }
  }
  if (!any) ++g_all_masked;
  return total;
}

template double per_frame_loss<float>(const nn::Mat<float>&, const SoftLabelSeq&, const std::vector<double>&,
                                      nn::Mat<float>*);
template double per_frame_loss<double>(const nn::Mat<double>&, const SoftLabelSeq&, const std::vector<double>&,
                                       nn::Mat<double>*);

// -------------------------------------------------------------- schedule

double lr_at_step(int step, const TrainConfig& config) {
  const long total = static_cast<long>(config.num_cycles) * config.steps_per_cycle;
  if (step < 0 || step >= total) throw Error("step " + std::to_string(step) + " outside [0, " + std::to_string(total) + ")");
  const long warm = static_cast<long>(config.warmup_cycles) * config.steps_per_cycle;
  if (step < warm) return config.base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  return config.base_lr * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step - warm) / static_cast<double>(total - warm)));
}

// ----------------------------------------------------------------- AdamW

AdamW::AdamW(double weight_decay, double beta1, double beta2, double eps)
    : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

void AdamW::step(nn::ParamRefs<float>& params, double lr) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->trainable ? p->numel() : 0, 0.0f);
      v_.emplace_back(p->trainable ? p->numel() : 0, 0.0f);
    }
  }
  if (m_.size() != params.size()) throw Error("optimizer parameter list changed");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
  const float step = static_cast<float>(lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (!p->trainable) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    const float shrink = p->decay ? static_cast<float>(1.0 - lr * wd_) : 1.0f;
    for (std::size_t k = 0; k < p->numel(); ++k) {
      const float g = p->grad[k];
      m[k] = b1 * m[k] + (1 - b1) * g;
      v[k] = b2 * v[k] + (1 - b2) * g * g;
      p->value[k] = p->value[k] * shrink - step * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
}

json to_json(const CycleLog& row) {
  return json{{"cycle", row.cycle}, {"mean_loss", row.mean_loss}, {"lr", row.lr}, {"val_mAP@1", row.val_map}};
}

// ------------------------------------------------------------- training

double validation_map(const data::DatasetManifest& manifest, data::FrameStore& frames, const SpotModel<float>& model,
                      const std::vector<std::string>& videos, int clip_len, int delta) {
  const int eval_len = clip_len % 2 == 0 ? clip_len : clip_len + 1;
  std::vector<SpotPrediction> preds;
  for (const auto& id : videos) {
    const ScoreSeq s = inference::predict_video(model, frames.get(id), eval_len);
    auto p = inference::scores_to_predictions(s, id);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  return evaluation::map_at_deltas(preds, manifest, {delta}, videos).map_at(delta);
}

namespace {

struct Batch {
  nn::Tensor<float> frames;
  std::vector<SoftLabelSeq> targets;
};

nn::Rng item_rng(std::uint64_t seed, int step, int item) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(item)};
  return nn::Rng(seq);
}

}  // namespace

TrainResult train(const data::DatasetManifest& manifest, data::FrameStore& frames, SpotModel<float>& model,
                  const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (model.num_classes() != manifest.num_classes()) {
    throw Error("model predicts " + std::to_string(model.num_classes()) + " classes, manifest has " +
                std::to_string(manifest.num_classes()));
  }
  std::vector<std::string> train_ids, val_ids;
  for (const auto* v : manifest.split(data::Split::kTrain)) train_ids.push_back(v->meta.id);
  for (const auto* v : manifest.split(data::Split::kVal)) val_ids.push_back(v->meta.id);
  if (train_ids.empty()) throw Error("the train split is empty");
  // Without a val split, selection falls back to the training videos.
  if (val_ids.empty()) val_ids = train_ids;
  if (config.val_max_videos > 0 && static_cast<int>(val_ids.size()) > config.val_max_videos) {
    val_ids.resize(static_cast<std::size_t>(config.val_max_videos));
  }

  const int k = manifest.num_classes();
  std::vector<DenseLabelSeq> dense;
  for (const auto& id : train_ids) {
    DenseLabelSeq d = manifest.dense_labels(id);
    dense.push_back(config.dilate_radius > 0 ? dilate(d, config.dilate_radius) : d);
  }
  std::vector<std::string> all_ids = train_ids;
  all_ids.insert(all_ids.end(), val_ids.begin(), val_ids.end());
  frames.preload(all_ids);

  data::AugmentConfig aug;
  aug.crop_width = config.crop_width > 0 ? config.crop_width : frames.get(train_ids.front()).width;
  aug.jitter_strength = config.jitter_strength;
  aug.blur_probability = config.blur_probability;
  aug.mixup_alpha = config.mixup_alpha;
  aug.validate();

  const auto weights = class_weights(k, config.fg_weight);
  auto params = model.params();
  AdamW opt(config.weight_decay);
  TrainResult result;
  std::vector<nn::Buffer<float>> best_values;
  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log_file.open(options.out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log_file) throw Error("cannot write " + (options.out_dir / "train_log.jsonl").string());
  }
  const int workers = config.deterministic ? 1 : data::worker_count();
  const int b = config.batch_clips, len = config.clip_len;

  int step = 0;
  for (int cycle = 0; cycle < config.num_cycles; ++cycle) {
    double loss_sum = 0;
    double lr = 0;
    for (int s = 0; s < config.steps_per_cycle; ++s, ++step) {
      // Every clip draws from its own (seed, step, item) stream, so the batch
      // does not depend on how many workers build it.
      std::vector<data::Clip> clips(static_cast<std::size_t>(b));
      data::parallel_for(b, workers, [&](int i) {
        nn::Rng rng = item_rng(config.seed, step, i);
        auto draw = [&] {
          const auto v = std::uniform_int_distribution<std::size_t>(0, train_ids.size() - 1)(rng);
          const auto& video = frames.get(train_ids[v]);
          return data::augment(data::sample_clip(video, dense[v], k, len, rng, train_ids[v]), aug, rng);
        };
        data::Clip clip = draw();
        if (config.mixup_alpha > 0) {
          const double lambda = data::sample_beta(config.mixup_alpha, rng);
          clip = data::mixup(clip, draw(), lambda);
        }
        clips[static_cast<std::size_t>(i)] = std::move(clip);
      });
      const auto& f0 = clips.front().frames;
      Batch batch;
      batch.frames = nn::Tensor<float>(b * len, f0.h, f0.w, f0.c);
      for (int i = 0; i < b; ++i) {
        const auto& c = clips[static_cast<std::size_t>(i)];
        std::copy(c.frames.v.begin(), c.frames.v.end(), batch.frames.v.begin() + static_cast<std::ptrdiff_t>(i * c.frames.numel()));
        batch.targets.push_back(c.labels);
      }
      const nn::Mat<float> logits = model.logits(batch.frames, len, true);
      nn::Mat<float> grad(logits.rows(), logits.cols());
      double loss = 0;
      for (int i = 0; i < b; ++i) {
        nn::Mat<float> g;
        loss += per_frame_loss<float>(logits.middleRows(static_cast<Eigen::Index>(i) * len, len),
                                      batch.targets[static_cast<std::size_t>(i)], weights, &g);
        grad.middleRows(static_cast<Eigen::Index>(i) * len, len) = g / static_cast<float>(b);
      }
      loss /= b;
      if (!std::isfinite(loss)) throw TrainingDiverged(step);
      model.zero_grad();
      model.backward(grad);
      lr = lr_at_step(step, config);
      opt.step(params, lr);
      loss_sum += loss;
      result.step_losses.push_back(loss);
      if (options.on_step) options.on_step(step, loss);
    }
    CycleLog row;
    row.cycle = cycle;
    row.mean_loss = loss_sum / config.steps_per_cycle;
    row.lr = lr;
    row.val_map = validation_map(manifest, frames, model, val_ids, len);
    result.log.push_back(row);
    if (log_file.is_open()) log_file << to_json(row).dump() << "\n" << std::flush;
    if (row.val_map > result.best_val_map) {
      result.best_val_map = row.val_map;
      result.best_cycle = cycle;
      best_values.clear();
      for (const auto* p : params) best_values.push_back(p->value);
      if (!options.out_dir.empty()) {
        CheckpointMeta meta;
        meta.cycle = cycle;
        meta.best_val_map = row.val_map;
        meta.train_config = config;
        result.checkpoint = options.out_dir / "best.ckpt";
        save_checkpoint(model, meta, result.checkpoint);
      }
    }
    if (options.on_cycle) options.on_cycle(row);
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  return result;
}

// ------------------------------------------------------ gradient check

GradCheckResult finite_difference_check(SpotModel<double>& model, const nn::Tensor<double>& clip,
                                        const SoftLabelSeq& targets, const std::vector<double>& weights,
                                        double epsilon, int samples, std::uint64_t seed, const std::string& prefix) {
  if (!(epsilon > 0)) throw Error("finite-difference epsilon must be > 0");
  if (samples < 1) throw Error("need at least one sampled parameter");
  const int len = clip.n;
  auto loss_of = [&](nn::Mat<double>* grad) {
    const nn::Mat<double> logits = model.logits(clip, len, true);
    return per_frame_loss<double>(logits, targets, weights, grad);
  };
  model.zero_grad();
  nn::Mat<double> g;
  loss_of(&g);
  model.backward(g);

  std::vector<std::pair<nn::Param<double>*, std::size_t>> pool;
  for (auto* p : model.params()) {
    if (!p->trainable || p->name.rfind(prefix, 0) != 0) continue;
    for (std::size_t i = 0; i < p->numel(); ++i) pool.emplace_back(p, i);
  }
  if (pool.empty()) throw Error("no trainable parameter matches \"" + prefix + "\"");
  nn::Rng rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);

  // Central differences at epsilon and epsilon / 2. When the two disagree the
  // step straddles a ReLU kink, where no difference quotient is an oracle; such
  // scalars are replaced by the next ones in the shuffled pool. Otherwise the
  // pair is Richardson-extrapolated.
  std::vector<double> analytic, numeric;
  GradCheckResult out;
  for (auto& [p, i] : pool) {
    if (static_cast<int>(analytic.size()) == samples) break;
    const double saved = p->value[i];
    auto central = [&](double h) {
      p->value[i] = saved + h;
      const double up = loss_of(nullptr);
      p->value[i] = saved - h;
      const double down = loss_of(nullptr);
      p->value[i] = saved;
      return (up - down) / (2 * h);
    };
    const double d1 = central(epsilon), d2 = central(epsilon / 2);
    if (std::abs(d1 - d2) > 1e-5 * std::max(std::abs(d1), std::abs(d2)) + 1e-8) {
      ++out.skipped;
      continue;
    }
    analytic.push_back(p->grad[i]);
    numeric.push_back((4 * d2 - d1) / 3);
  }
  // Entries far below the gradient's own scale are judged against a floor of
  // 1e-3 times the largest sampled magnitude; the quotient cannot resolve them
  // relatively.
  double scale = 0;
  for (double a : analytic) scale = std::max(scale, std::abs(a));
  const double floor = std::max(1e-3 * scale, 1e-12);
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric[k]), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic[k] - numeric[k]) / denom);
  }
  out.checked = static_cast<int>(analytic.size());
  return out;
}

}  // namespace spotkit::training
