#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hoi/recompose.hpp"
#include "hoi/rng.hpp"
#include "hoi/tensor.hpp"
#include "hoi/types.hpp"

namespace hoi::data {

using ad::Tensor;

struct DatasetSpec {
  int num_objects = 6;
  int num_actions = 5;
  double feasibility_density = 0.5;  // exact fraction of feasible pairs
  double zipf_exponent = 1.5;
  int train_images = 600;
  int test_images = 150;  // lower bound; stratification may append scenes
  int test_min_per_category = 5;
  int max_instances_per_image = 3;
  int grid_h = 6;
  int grid_w = 6;
  int grid_c = 32;
  double rare_threshold = 10.0;  // train count below this => rare category
  std::uint64_t seed = 1;

  void validate() const;
};

// A synthetic scene: entity boxes plus ground-truth HOI instances referencing
// them. Verbs are angular sectors of the object center around the human
// center, so action semantics are independent of the object class.
struct Scene {
  struct GtRef {
    int human_index = 0;
    int object_index = 0;
    std::vector<std::uint8_t> actions;  // multi-hot
  };

  int image_id = 0;
  std::vector<Box> humans;
  std::vector<Box> objects;
  std::vector<int> object_classes;  // parallel to objects
  std::vector<GtRef> gt_refs;

  GroundTruthSet ground_truth() const;
};

struct CategoryCensus {
  std::vector<int> train_counts;     // per category id
  std::vector<std::uint8_t> is_rare; // train count < rare_threshold
  double rare_threshold = 10.0;

  int rare_count() const;
  int nonrare_count() const;
};

struct Dataset {
  DatasetSpec spec;
  compo::FeasibilityTable table;
  std::vector<Scene> train;
  std::vector<Scene> test;
  CategoryCensus census;
};

// The verb predicate: action k holds iff the object center lies in angular
// sector k around the human center.
int sector_of(const Box& human, const Box& object, int num_actions);

// Exactly round(density * N_o * N_a) feasible pairs (at least one per
// object), names "objNN"/"actNN".
compo::FeasibilityTable build_feasibility_table(const DatasetSpec& spec, Rng rng);

// Category ids in Zipf-rank order, interleaved round-robin across objects so
// that every object and action owns both common and rare categories.
std::vector<int> zipf_rank_order(const compo::FeasibilityTable& table);

// One scene; categories drawn from the Zipf distribution unless forced.
Scene generate_scene(const DatasetSpec& spec, const compo::FeasibilityTable& table,
                     int image_id, Rng rng, const std::vector<int>& forced_categories = {});

// Feature grid [H, W, C]: per-cell presence, center offsets, box sizes, a
// pairing channel shared by both roles, and the object class one-hot.
Tensor rasterize(const Scene& scene, int grid_h, int grid_w, int grid_c);

int min_grid_channels(int num_objects);

CategoryCensus build_census(const std::vector<Scene>& train, const compo::FeasibilityTable& table,
                            double rare_threshold);

Dataset build_dataset(const DatasetSpec& spec);

// One line per scene; reals as hex floats so load(serialize(d)) is bit-exact.
void save_scenes(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> load_scenes(const std::string& path);

void save_census_csv(const std::string& path, const CategoryCensus& census,
                     const compo::FeasibilityTable& table);

void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir, const DatasetSpec& spec);

}  // namespace hoi::data
