#include "hoi/losses.hpp"

#include <algorithm>
#include <cmath>

namespace hoi::loss {

using namespace hoi::ad;

double giou(const Box& a, const Box& b) {
  if (a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0) {
    throw DomainError("giou: boxes must have positive width and height");
  }
  const double ix1 = std::max(a.x1(), b.x1());
  const double iy1 = std::max(a.y1(), b.y1());
  const double ix2 = std::min(a.x2(), b.x2());
  const double iy2 = std::min(a.y2(), b.y2());
  const double iw = std::max(0.0, ix2 - ix1);
  const double ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double ex1 = std::min(a.x1(), b.x1());
  const double ey1 = std::min(a.y1(), b.y1());
  const double ex2 = std::max(a.x2(), b.x2());
  const double ey2 = std::max(a.y2(), b.y2());
  const double enc = (ex2 - ex1) * (ey2 - ey1);
  return inter / uni - (enc - uni) / enc;
}

namespace {

struct Corners {
  Tensor x1, y1, x2, y2, area;
};

Corners corners_of(const Tensor& boxes) {
  const Tensor cx = slice_cols(boxes, 0, 1);
  const Tensor cy = slice_cols(boxes, 1, 1);
  const Tensor w = slice_cols(boxes, 2, 1);
  const Tensor h = slice_cols(boxes, 3, 1);
  const Tensor hw = scale(w, 0.5);
  const Tensor hh = scale(h, 0.5);
  Corners c;
  c.x1 = sub(cx, hw);
  c.y1 = sub(cy, hh);
  c.x2 = add(cx, hw);
  c.y2 = add(cy, hh);
  c.area = mul(w, h);
  return c;
}

}  // namespace

Tensor giou_graph(const Tensor& pred, const Tensor& gt) {
  if (pred.ndim() != 2 || pred.dim(1) != 4 || gt.shape() != pred.shape()) {
    throw DimensionError("giou_graph: expected matching [N,4] box tensors");
  }
  const Corners a = corners_of(pred);
  const Corners b = corners_of(gt);

  const Tensor iw = relu(sub(minimum(a.x2, b.x2), maximum(a.x1, b.x1)));
  const Tensor ih = relu(sub(minimum(a.y2, b.y2), maximum(a.y1, b.y1)));
  const Tensor inter = mul(iw, ih);
  const Tensor uni = sub(add(a.area, b.area), inter);
  const Tensor iou = divide(inter, uni);

  const Tensor ew = sub(maximum(a.x2, b.x2), minimum(a.x1, b.x1));
  const Tensor eh = sub(maximum(a.y2, b.y2), minimum(a.y1, b.y1));
  const Tensor enc = mul(ew, eh);
  return sub(iou, divide(sub(enc, uni), enc));
}

std::pair<Tensor, Tensor> box_losses(const Tensor& pred_h, const Tensor& pred_o,
                                     const Tensor& gt_h, const Tensor& gt_o) {
  if (!pred_h.defined() || pred_h.dim(0) == 0) {
    return {Tensor::scalar(0.0), Tensor::scalar(0.0)};
  }
  const int n = pred_h.dim(0);
  const double inv_n = 1.0 / n;

  const Tensor l1 = add(sum(absolute(sub(pred_h, gt_h))), sum(absolute(sub(pred_o, gt_o))));
  const Tensor l_box = scale(l1, inv_n);

  const Tensor ones = Tensor::full({n, 1}, 1.0);
  const Tensor g = add(sum(sub(ones, giou_graph(pred_h, gt_h))),
                       sum(sub(ones, giou_graph(pred_o, gt_o))));
  const Tensor l_giou = scale(g, inv_n);
  return {l_box, l_giou};
}

Tensor object_loss(const Tensor& object_logits,
                   const std::vector<std::pair<int, int>>& assignment_pairs,
                   const GroundTruthSet& gts) {
  const int nq = object_logits.dim(0);
  const int background = object_logits.dim(1) - 1;
  std::vector<int> targets(static_cast<std::size_t>(nq), background);
  for (const auto& [g, q] : assignment_pairs) {
    targets[static_cast<std::size_t>(q)] =
        gts.instances[static_cast<std::size_t>(g)].object_class;
  }
  return softmax_cross_entropy(object_logits, targets);
}

Tensor action_loss(const Tensor& action_logits, const std::vector<double>& targets) {
  if (action_logits.numel() == 0 || targets.empty()) return Tensor::scalar(0.0);
  return bce_with_logits(action_logits, targets);
}

Tensor total_loss(const Tensor& l_box, const Tensor& l_giou, const Tensor& l_object,
                  const Tensor& l_action, const LossWeights& w) {
  return add(add(add(scale(l_box, w.lambda_box), scale(l_giou, w.lambda_giou)),
                 scale(l_object, w.lambda_object)),
             scale(l_action, w.lambda_action));
}

Tensor batch_loss(const Tensor& orig, const Tensor& compo, double rho) {
  if (rho < 0.0 || rho > 1.0) throw DomainError("batch_loss: rho must lie in [0,1]");
  return add(scale(orig, rho), scale(compo, 1.0 - rho));
}

Tensor boxes_tensor(const std::vector<Box>& boxes) {
  Tensor t = Tensor::zeros({static_cast<int>(boxes.size()), 4});
  auto& v = t.values();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    v[4 * i] = boxes[i].cx;
    v[4 * i + 1] = boxes[i].cy;
    v[4 * i + 2] = boxes[i].w;
    v[4 * i + 3] = boxes[i].h;
  }
  return t;
}

}  // namespace hoi::loss
