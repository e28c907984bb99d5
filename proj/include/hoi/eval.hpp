#pragma once

#include <string>
#include <vector>

#include "hoi/data.hpp"
#include "hoi/matching.hpp"
#include "hoi/model.hpp"
#include "hoi/recompose.hpp"
#include "hoi/types.hpp"

namespace hoi::eval {

struct ScoredTriplet {
  int image_id = 0;
  Box human_box;
  Box object_box;
  int category = 0;     // feasibility-table category id
  double score = 0.0;   // s_object * s_action
  int query = 0;
  int emit_index = 0;   // per-image emission order, final tie-break
};

double iou(const Box& a, const Box& b);

// Per query: softmax object score (background excluded from emission),
// sigmoid action score, one candidate per feasible (object, action) pair.
// Returns the top_k triplets sorted by (score desc, query, category).
std::vector<ScoredTriplet> score_triplets(const std::vector<match::PredRow>& rows,
                                          const compo::FeasibilityTable& table, int top_k,
                                          int image_id);

// Greedy same-category suppression: drop a triplet when a kept triplet of the
// same category has min(IoU_human, IoU_object) above the threshold.
std::vector<ScoredTriplet> pairwise_nms(const std::vector<ScoredTriplet>& sorted_triplets,
                                        double iou_threshold);

// All-point interpolated AP for one category. Predictions must already be
// sorted globally by (score desc, image_id, emit_index). Each GT is
// creditable once; candidates need IoU > 0.5 on both boxes, the match takes
// the highest min-IoU, ties to the lowest GT index.
struct CategoryGt {
  int image_id = 0;
  Box human_box;
  Box object_box;
};
double average_precision(const std::vector<ScoredTriplet>& preds,
                         const std::vector<CategoryGt>& gts);

struct EvalOptions {
  int top_k = 100;
  bool use_nms = true;
  double nms_iou = 0.7;
  bool oracle_predictions = false;  // inject GT as predictions with score 1
};

struct EvalReport {
  std::vector<int> category_ids;  // evaluated categories (>= 1 test GT), ascending
  std::vector<double> per_category_ap;
  std::vector<int> gt_counts;
  std::vector<int> pred_counts;
  std::vector<std::uint8_t> category_rare;
  double map_full = 0.0;
  double map_rare = 0.0;
  double map_nonrare = 0.0;
  int skipped_categories = 0;  // zero-GT categories excluded from the means
};

EvalReport evaluate(const model::HoiModel& m, const std::vector<data::Scene>& test_split,
                    const data::CategoryCensus& census, const compo::FeasibilityTable& table,
                    const EvalOptions& options);

// Standalone evaluation of an externally produced prediction dump.
EvalReport evaluate_triplets(const std::vector<std::vector<ScoredTriplet>>& per_image,
                             const std::vector<data::Scene>& test_split,
                             const data::CategoryCensus& census,
                             const compo::FeasibilityTable& table, const EvalOptions& options);

void write_report_csv(const std::string& path, const EvalReport& report,
                      const compo::FeasibilityTable& table);
EvalReport read_report_csv(const std::string& path);

// Prediction dump: one triplet per line, hex floats, bit-exact round-trip.
void save_triplets(const std::string& path, const std::vector<ScoredTriplet>& triplets);
std::vector<ScoredTriplet> load_triplets(const std::string& path);

}  // namespace hoi::eval
