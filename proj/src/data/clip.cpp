#include "spotkit/data/clip.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace spotkit::data {

Clip extract_clip(const VideoData& video, const DenseLabelSeq& dense, int num_classes, int start, int clip_len,
                  const std::string& video_id) {
  if (clip_len < 1) throw Error("clip length must be >= 1");
  if (start < 0 || (start >= video.num_frames && video.num_frames > 0)) throw Error("clip start out of range");
  if (!dense.labels.empty() && dense.size() != video.num_frames) throw Error("label sequence length mismatch");
  Clip clip;
  clip.video_id = video_id;
  clip.start = start;
  clip.frames = nn::Tensor<float>(clip_len, video.height, video.width, video.channels);
  clip.labels.dist = RowMatrix::Zero(clip_len, num_classes + 1);
  clip.labels.mask.assign(static_cast<std::size_t>(clip_len), 0);
  const std::size_t fs = video.frame_size();
  for (int i = 0; i < clip_len; ++i) {
    const int t = start + i;
    if (t >= video.num_frames) {
      clip.labels.dist(i, kBackground) = 1.0;
      continue;
    }
    video.copy_frame(t, clip.frames.v.data() + static_cast<std::size_t>(i) * fs);
    const bool valid = dense.labels.empty() || dense.mask[static_cast<std::size_t>(t)];
    const int label = dense.labels.empty() ? kBackground : dense.labels[static_cast<std::size_t>(t)];
    clip.labels.dist(i, label) = 1.0;
    clip.labels.mask[static_cast<std::size_t>(i)] = valid ? 1 : 0;
  }
  return clip;
}

Clip sample_clip(const VideoData& video, const DenseLabelSeq& dense, int num_classes, int clip_len, nn::Rng& rng,
                 const std::string& video_id) {
  if (clip_len < 1) throw Error("clip length must be >= 1");
  std::uniform_int_distribution<int> pick(0, std::max(0, video.num_frames - clip_len));
  return extract_clip(video, dense, num_classes, pick(rng), clip_len, video_id);
}

void AugmentConfig::validate() const {
  if (crop_width < 1) throw Error("crop width must be >= 1");
  if (jitter_strength < 0 || jitter_strength > 1) throw Error("jitter strength must be in [0, 1]");
  if (blur_probability < 0 || blur_probability > 1) throw Error("blur probability must be in [0, 1]");
  if (mixup_alpha < 0) throw Error("mixup alpha must be >= 0");
}

namespace {

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = static_cast<float>(v);
    sum += v;
  }
  for (auto& v : k) v = static_cast<float>(v / sum);
  return k;
}

// Separable blur of one HWC frame with edge clamping.
void blur_frame(float* img, int h, int w, int c, const std::vector<float>& k, std::vector<float>& tmp) {
  const int r = static_cast<int>(k.size() / 2);
  tmp.assign(static_cast<std::size_t>(h) * w * c, 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int j = -r; j <= r; ++j) {
        const int xs = std::clamp(x + j, 0, w - 1);
        const float kv = k[static_cast<std::size_t>(j + r)];
        for (int ch = 0; ch < c; ++ch) tmp[(static_cast<std::size_t>(y) * w + x) * c + ch] += kv * img[(static_cast<std::size_t>(y) * w + xs) * c + ch];
      }
  std::fill(img, img + static_cast<std::size_t>(h) * w * c, 0.0f);
  for (int y = 0; y < h; ++y)
    for (int j = -r; j <= r; ++j) {
      const int ys = std::clamp(y + j, 0, h - 1);
      const float kv = k[static_cast<std::size_t>(j + r)];
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch) img[(static_cast<std::size_t>(y) * w + x) * c + ch] += kv * tmp[(static_cast<std::size_t>(ys) * w + x) * c + ch];
    }
}

}  // namespace

Clip augment(const Clip& clip, const AugmentConfig& config, nn::Rng& rng) {
  config.validate();
  const auto& in = clip.frames;
  if (config.crop_width > in.w) {
    throw Error("crop width " + std::to_string(config.crop_width) + " exceeds frame width " + std::to_string(in.w));
  }
  Clip out;
  out.labels = clip.labels;
  out.video_id = clip.video_id;
  out.start = clip.start;
  const int cw = config.crop_width;
  const int x0 = std::uniform_int_distribution<int>(0, in.w - cw)(rng);
  out.frames = nn::Tensor<float>(in.n, in.h, cw, in.c);
  for (int i = 0; i < in.n; ++i)
    for (int y = 0; y < in.h; ++y) std::copy(in.at(i, y, x0), in.at(i, y, x0 + cw - 1) + in.c, out.frames.at(i, y, 0));

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = config.jitter_strength;
  if (s > 0 && in.c == 3) {
    const float brightness = static_cast<float>(1.0 + s * (2 * unit(rng) - 1));
    const float contrast = static_cast<float>(1.0 + s * (2 * unit(rng) - 1));
    const float saturation = static_cast<float>(1.0 + s * (2 * unit(rng) - 1));
    const std::size_t fs = static_cast<std::size_t>(in.h) * cw * 3;
    for (int i = 0; i < in.n; ++i) {
      if (!out.labels.mask[static_cast<std::size_t>(i)]) continue;
      float* f = out.frames.at(i, 0, 0);
      double mean = 0;
      for (std::size_t p = 0; p < fs; ++p) mean += f[p];
      const float m = static_cast<float>(mean / static_cast<double>(fs)) * brightness;
      for (std::size_t p = 0; p < fs; p += 3) {
        float rgb[3];
        for (int ch = 0; ch < 3; ++ch) rgb[ch] = f[p + ch] * brightness;
        const float gray = 0.299f * rgb[0] + 0.587f * rgb[1] + 0.114f * rgb[2];
        for (int ch = 0; ch < 3; ++ch) {
          float v = gray + saturation * (rgb[ch] - gray);
          v = m + contrast * (v - m);
          f[p + ch] = std::clamp(v, 0.0f, 1.0f);
        }
      }
    }
  }
  if (config.blur_probability > 0 && unit(rng) < config.blur_probability) {
    const double sigma = 0.1 + 0.9 * unit(rng);
    const auto k = gaussian_kernel(sigma);
    std::vector<float> tmp;
    for (int i = 0; i < in.n; ++i) {
      if (!out.labels.mask[static_cast<std::size_t>(i)]) continue;
      blur_frame(out.frames.at(i, 0, 0), in.h, cw, in.c, k, tmp);
    }
  }
  return out;
}

Clip mixup(const Clip& a, const Clip& b, double lambda) {
  if (!a.frames.same_shape(b.frames) || a.labels.dist.rows() != b.labels.dist.rows() ||
      a.labels.dist.cols() != b.labels.dist.cols()) {
    throw Error("mixup requires clips of identical shape");
  }
  if (!(lambda >= 0 && lambda <= 1)) throw Error("mixup lambda must be in [0, 1]");
  if (lambda == 1.0) return a;
  if (lambda == 0.0) return b;
  Clip out = a;
  const float la = static_cast<float>(lambda), lb = static_cast<float>(1.0 - lambda);
  for (std::size_t i = 0; i < out.frames.v.size(); ++i) out.frames.v[i] = la * a.frames.v[i] + lb * b.frames.v[i];
  out.labels.dist = lambda * a.labels.dist + (1.0 - lambda) * b.labels.dist;
  for (std::size_t i = 0; i < out.labels.mask.size(); ++i) out.labels.mask[i] = a.labels.mask[i] && b.labels.mask[i];
  return out;
}

double sample_beta(double alpha, nn::Rng& rng) {
  if (!(alpha > 0)) throw Error("beta parameter must be > 0");
  std::gamma_distribution<double> g(alpha, 1.0);
  const double x = g(rng), y = g(rng);
  if (x + y == 0) return 0.5;
  return x / (x + y);
}

}  // namespace spotkit::data
