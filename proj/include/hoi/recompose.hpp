#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hoi/losses.hpp"
#include "hoi/model.hpp"
#include "hoi/tensor.hpp"
#include "hoi/types.hpp"

namespace hoi::compo {

using ad::Tensor;

// Dataset-defined set of valid (object, action) combinations. Category ids
// enumerate the feasible pairs in object-major order.
struct FeasibilityTable {
  int num_objects = 0;
  int num_actions = 0;
  std::vector<std::string> object_names;
  std::vector<std::string> action_names;
  std::vector<std::uint8_t> feasible;               // [num_objects * num_actions]
  std::vector<std::pair<int, int>> categories;      // id -> (object, action)
  std::vector<int> category_of_pair;                // [o*num_actions + a] -> id or -1

  bool is_feasible(int object, int action) const {
    return feasible[static_cast<std::size_t>(object) * num_actions + action] != 0;
  }
  int category(int object, int action) const {
    return category_of_pair[static_cast<std::size_t>(object) * num_actions + action];
  }
  int num_categories() const { return static_cast<int>(categories.size()); }

  // Builds the category index from the feasibility bits; validates bounds
  // and the one-feasible-pair-per-object requirement.
  static FeasibilityTable build(int num_objects, int num_actions,
                                std::vector<std::string> object_names,
                                std::vector<std::string> action_names,
                                std::vector<std::uint8_t> feasible_bits);
};

void save_table(const std::string& path, const FeasibilityTable& table);
FeasibilityTable load_table(const std::string& path);

// Everything the re-composition path needs from one image after matching:
// matched representations plus the matched predictions that keep supervising
// boxes and object classes on re-composed rows.
struct MatchedImage {
  int image_id = 0;
  Tensor ho_rows;             // R*_p, [N_gt, C]
  Tensor int_rows;            // R*_i, [N_gt, C]
  Tensor pred_human_boxes;    // [N_gt, 4], matched predictions
  Tensor pred_object_boxes;   // [N_gt, 4]
  Tensor pred_object_logits;  // [N_gt, N_o + 1]
  std::vector<GtInstance> gts;  // row k corresponds to ground truth k
};

struct InstanceRef {
  int image_id = 0;
  int gt_index = 0;
  bool operator==(const InstanceRef&) const = default;
};

struct RecomposedBatch {
  Tensor features;            // [N_cp, 2C]
  Tensor pred_human_boxes;    // [N_cp, 4], replicated from the R*_p source
  Tensor pred_object_boxes;   // [N_cp, 4]
  Tensor pred_object_logits;  // [N_cp, N_o + 1]
  std::vector<Box> gt_human_boxes;  // inherited HO labels, one per row
  std::vector<Box> gt_object_boxes;
  std::vector<int> gt_object_classes;
  std::vector<double> action_targets;  // [N_cp * N_a] multi-hot after masking
  std::vector<std::pair<InstanceRef, InstanceRef>> provenance;  // (p_source, i_source)

  int rows() const { return static_cast<int>(provenance.size()); }
};

// Row (m * N_b + k) = [rp_a row m | ri_b row k]. Empty inputs -> empty output.
Tensor cross_concat(const Tensor& rp_a, const Tensor& ri_b);

// Donor action rows masked by the feasibility row of each receiving object
// class. Row (m, k) order matches cross_concat. Rows that become all-zero
// are kept; the mask flags every row as kept.
struct RecomposedLabels {
  std::vector<double> action_targets;  // [n_ho * n_donor * N_a]
  std::vector<std::uint8_t> kept;      // all true
};
RecomposedLabels recompose_labels(const std::vector<GtInstance>& ho_sources,
                                  const std::vector<GtInstance>& action_donors,
                                  const FeasibilityTable& table);

// Cross-concatenates matched representations over every ordered image pair,
// including within-image pairs with the same-instance diagonal removed.
// detach_features cuts the gradient into both decoder stacks (ablation knob).
// include_self_pairs keeps the diagonal; used only by identity checks.
RecomposedBatch build_recomposed_batch(const std::vector<MatchedImage>& images,
                                       const FeasibilityTable& table,
                                       bool detach_features = false,
                                       bool include_self_pairs = false);

// Enumeration count law: sum over ordered image pairs of N_a * N_b, minus
// the same-instance diagonal of within-image pairs.
int expected_recomposed_rows(const std::vector<int>& gt_counts, bool include_self_pairs = false);

struct CompoLossParts {
  Tensor l_box, l_giou, l_object, l_action;
  Tensor total;
};

// Four-term loss on re-composed samples: actions come from the shared action
// head applied to the re-composed features; box and object terms reuse the
// R*_p source's matched predictions against the inherited labels.
CompoLossParts recomposed_forward_loss(const RecomposedBatch& batch, const model::HoiModel& m,
                                       const loss::LossWeights& weights);

}  // namespace hoi::compo
