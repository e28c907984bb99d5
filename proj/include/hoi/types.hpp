#pragma once

#include <cstdint>
#include <vector>

namespace hoi {

// Box in normalized (cx, cy, w, h) form.
struct Box {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
};

// One annotated HOI instance: one human, one object, a multi-hot action set.
struct GtInstance {
  Box human_box;
  Box object_box;
  int object_class = 0;
  std::vector<std::uint8_t> actions;  // length N_a, values 0/1
};

struct GroundTruthSet {
  std::vector<GtInstance> instances;
  int count() const { return static_cast<int>(instances.size()); }
};

}  // namespace hoi
