#pragma once

#include <utility>
#include <vector>

#include "hoi/tensor.hpp"
#include "hoi/types.hpp"

namespace hoi::loss {

using ad::Tensor;

struct LossWeights {
  double lambda_box = 2.5;
  double lambda_giou = 1.0;
  double lambda_object = 1.0;
  double lambda_action = 1.0;
  double rho = 0.75;
};

// Per-step report. `total` is the four-term weighted sum for the original
// samples (== orig); batch = rho * orig + (1 - rho) * compo.
struct LossReport {
  double l_box = 0.0;
  double l_giou = 0.0;
  double l_object = 0.0;
  double l_action = 0.0;
  double total = 0.0;
  double orig = 0.0;
  double compo = 0.0;
  double batch = 0.0;
  double rho_effective = 1.0;  // 1 when the step had no re-composed samples
};

// GIoU on plain boxes; throws DomainError on non-positive extents.
double giou(const Box& a, const Box& b);

// Differentiable GIoU column vector for matched box pairs.
// pred/gt are [N, 4] in (cx, cy, w, h); returns [N, 1].
Tensor giou_graph(const Tensor& pred, const Tensor& gt);

// L1 and GIoU box terms, means over matched pairs. Empty match set -> (0, 0).
std::pair<Tensor, Tensor> box_losses(const Tensor& pred_h, const Tensor& pred_o,
                                     const Tensor& gt_h, const Tensor& gt_o);

// Softmax cross-entropy over all queries; matched queries target their GT
// object class, unmatched ones the trailing no-object class.
Tensor object_loss(const Tensor& object_logits,
                   const std::vector<std::pair<int, int>>& assignment_pairs,
                   const GroundTruthSet& gts);

// Sigmoid BCE, mean over every element of the given rows. All-zero target
// rows are valid (they still supervise negatives).
Tensor action_loss(const Tensor& action_logits, const std::vector<double>& targets);

// lambda_b*L_b + lambda_u*L_u + lambda_o*L_o + lambda_a*L_a, left to right.
// The loss log identity check re-derives this sum in the same order.
Tensor total_loss(const Tensor& l_box, const Tensor& l_giou, const Tensor& l_object,
                  const Tensor& l_action, const LossWeights& w);

// rho * orig + (1 - rho) * compo, same evaluation order as the logged check.
Tensor batch_loss(const Tensor& orig, const Tensor& compo, double rho);

// Constant tensor [N, 4] from box list (no gradient).
Tensor boxes_tensor(const std::vector<Box>& boxes);

}  // namespace hoi::loss
