#pragma once

#include <utility>
#include <vector>

#include "hoi/losses.hpp"
#include "hoi/model.hpp"
#include "hoi/tensor.hpp"
#include "hoi/types.hpp"

namespace hoi::match {

using ad::Tensor;

// Plain-value view of one query's predictions; matching is not differentiated.
struct PredRow {
  Box human_box;
  Box object_box;
  std::vector<double> object_probs;   // softmaxed, length N_o + 1
  std::vector<double> action_logits;  // raw, length N_a
};

std::vector<PredRow> extract_rows(const model::PredictionSet& preds);

// lambda_b * (L1_h + L1_o) + lambda_u * ((1-GIoU_h) + (1-GIoU_o))
// + lambda_o * (1 - p_object[gt class])
// + lambda_a * mean over GT-positive actions of (1 - sigmoid(logit)).
double pair_cost(const PredRow& pred, const GtInstance& gt, const loss::LossWeights& w);

std::vector<std::vector<double>> build_cost_matrix(const std::vector<PredRow>& preds,
                                                   const GroundTruthSet& gts,
                                                   const loss::LossWeights& w);

struct Assignment {
  // (gt_index, query_index), sorted by gt_index; injective both ways
  std::vector<std::pair<int, int>> pairs;
};

// Exact rectangular Kuhn-Munkres (rows = ground truths, columns = queries).
// Ties between optimal assignments break toward the lexicographically
// smallest (gt_index, query_index) sequence. Throws CapacityError when
// rows exceed columns.
Assignment hungarian(const std::vector<std::vector<double>>& cost);

double assignment_cost(const std::vector<std::vector<double>>& cost, const Assignment& a);

struct MatchedReps {
  Tensor ho_rows;   // [N_gt, C_q], row k = query matched to gt k
  Tensor int_rows;  // [N_gt, C_q]
  std::vector<int> gt_order;
  std::vector<int> query_order;
};

MatchedReps select_matched(const Tensor& ho_reps, const Tensor& in_reps, const Assignment& a);

}  // namespace hoi::match
