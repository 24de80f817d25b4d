#pragma once

#include "spotkit/model.hpp"

// Two residual blocks, D = 32: small enough for double-precision gradient
// checks and fast CLI round trips.
inline spotkit::BackboneConfig tiny_backbone(spotkit::ShiftMode mode = spotkit::ShiftMode::kGsm) {
  spotkit::BackboneConfig c;
  c.stem_channels = 8;
  c.stages = {{1, 16, 2}, {1, 32, 2}};
  c.shift_mode = mode;
  return c;
}

inline spotkit::HeadConfig tiny_head(spotkit::HeadKind kind = spotkit::HeadKind::kBiGru, int num_classes = 3) {
  spotkit::HeadConfig h;
  h.kind = kind;
  h.num_classes = num_classes;
  return h;
}
