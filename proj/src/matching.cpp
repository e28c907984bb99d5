#include "hoi/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hoi::match {

using namespace hoi::ad;

std::vector<PredRow> extract_rows(const model::PredictionSet& preds) {
  const int nq = preds.human_boxes.dim(0);
  const int nc = preds.object_logits.dim(1);
  const int na = preds.action_logits.dim(1);
  std::vector<PredRow> rows(static_cast<std::size_t>(nq));
  for (int q = 0; q < nq; ++q) {
    PredRow& r = rows[static_cast<std::size_t>(q)];
    r.human_box = {preds.human_boxes.at(q, 0), preds.human_boxes.at(q, 1),
                   preds.human_boxes.at(q, 2), preds.human_boxes.at(q, 3)};
    r.object_box = {preds.object_boxes.at(q, 0), preds.object_boxes.at(q, 1),
                    preds.object_boxes.at(q, 2), preds.object_boxes.at(q, 3)};
    r.object_probs.resize(static_cast<std::size_t>(nc));
    double mx = preds.object_logits.at(q, 0);
    for (int c = 1; c < nc; ++c) mx = std::max(mx, preds.object_logits.at(q, c));
    double z = 0.0;
    for (int c = 0; c < nc; ++c) {
      r.object_probs[static_cast<std::size_t>(c)] = std::exp(preds.object_logits.at(q, c) - mx);
      z += r.object_probs[static_cast<std::size_t>(c)];
    }
    for (double& p : r.object_probs) p /= z;
    r.action_logits.resize(static_cast<std::size_t>(na));
    for (int a = 0; a < na; ++a) r.action_logits[static_cast<std::size_t>(a)] = preds.action_logits.at(q, a);
  }
  return rows;
}

double pair_cost(const PredRow& pred, const GtInstance& gt, const loss::LossWeights& w) {
  const double l1 = std::fabs(pred.human_box.cx - gt.human_box.cx) +
                    std::fabs(pred.human_box.cy - gt.human_box.cy) +
                    std::fabs(pred.human_box.w - gt.human_box.w) +
                    std::fabs(pred.human_box.h - gt.human_box.h) +
                    std::fabs(pred.object_box.cx - gt.object_box.cx) +
                    std::fabs(pred.object_box.cy - gt.object_box.cy) +
                    std::fabs(pred.object_box.w - gt.object_box.w) +
                    std::fabs(pred.object_box.h - gt.object_box.h);

  const double g = (1.0 - loss::giou(pred.human_box, gt.human_box)) +
                   (1.0 - loss::giou(pred.object_box, gt.object_box));

  const double obj = 1.0 - pred.object_probs[static_cast<std::size_t>(gt.object_class)];

  double act = 0.0;
  int positives = 0;
  for (std::size_t a = 0; a < gt.actions.size(); ++a) {
    if (gt.actions[a]) {
      act += 1.0 - stable_sigmoid(pred.action_logits[a]);
      ++positives;
    }
  }
  if (positives > 0) act /= positives;

  return w.lambda_box * l1 + w.lambda_giou * g + w.lambda_object * obj + w.lambda_action * act;
}

std::vector<std::vector<double>> build_cost_matrix(const std::vector<PredRow>& preds,
                                                   const GroundTruthSet& gts,
                                                   const loss::LossWeights& w) {
  std::vector<std::vector<double>> cost(gts.instances.size(),
                                        std::vector<double>(preds.size(), 0.0));
  for (std::size_t g = 0; g < gts.instances.size(); ++g)
    for (std::size_t q = 0; q < preds.size(); ++q)
      cost[g][q] = pair_cost(preds[q], gts.instances[g], w);
  return cost;
}

namespace {

// Cost over the ordered group (double, __int128) compared lexicographically.
// The integer part carries the tie-break: column j of row g weighs
// j * (N_q+1)^(N_gt-1-g), so among equal-cost assignments the minimal total
// is exactly the lexicographically smallest (q_0, q_1, ...) sequence.
struct LexCost {
  double c;
  __int128 t;

  LexCost operator+(const LexCost& o) const { return {c + o.c, t + o.t}; }
  LexCost operator-(const LexCost& o) const { return {c - o.c, t - o.t}; }
  LexCost& operator+=(const LexCost& o) {
    c += o.c;
    t += o.t;
    return *this;
  }
  LexCost& operator-=(const LexCost& o) {
    c -= o.c;
    t -= o.t;
    return *this;
  }
  bool operator<(const LexCost& o) const { return c < o.c || (c == o.c && t < o.t); }
};

}  // namespace

Assignment hungarian(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  Assignment out;
  if (n == 0) return out;
  const int m = static_cast<int>(cost[0].size());
  if (n > m) {
    throw CapacityError("hungarian: " + std::to_string(n) + " ground truths exceed " +
                        std::to_string(m) + " queries");
  }
  for (const auto& row : cost) {
    if (static_cast<int>(row.size()) != m) throw DimensionError("hungarian: ragged cost matrix");
    for (double v : row) {
      if (!std::isfinite(v)) throw DomainError("hungarian: cost entries must be finite");
    }
  }

  // tie-break digit weights, base m+1
  std::vector<__int128> weight(static_cast<std::size_t>(n), 1);
  for (int g = n - 2; g >= 0; --g)
    weight[static_cast<std::size_t>(g)] =
        weight[static_cast<std::size_t>(g + 1)] * static_cast<__int128>(m + 1);

  auto entry = [&](int i, int j) -> LexCost {  // 1-based row/col
    return {cost[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)],
            static_cast<__int128>(j - 1) * weight[static_cast<std::size_t>(i - 1)]};
  };

  const LexCost kInf{std::numeric_limits<double>::infinity(), 0};
  std::vector<LexCost> u(static_cast<std::size_t>(n) + 1, {0.0, 0});
  std::vector<LexCost> v(static_cast<std::size_t>(m) + 1, {0.0, 0});
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<LexCost> minv(static_cast<std::size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      int j1 = 0;
      LexCost delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const LexCost cur = entry(i0, j) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }

  out.pairs.resize(static_cast<std::size_t>(n));
  for (int j = 1; j <= m; ++j) {
    if (p[static_cast<std::size_t>(j)]) {
      out.pairs[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = {
          p[static_cast<std::size_t>(j)] - 1, j - 1};
    }
  }
  return out;
}

double assignment_cost(const std::vector<std::vector<double>>& cost, const Assignment& a) {
  double total = 0.0;
  for (const auto& [g, q] : a.pairs)
    total += cost[static_cast<std::size_t>(g)][static_cast<std::size_t>(q)];
  return total;
}

MatchedReps select_matched(const Tensor& ho_reps, const Tensor& in_reps, const Assignment& a) {
  MatchedReps out;
  out.gt_order.reserve(a.pairs.size());
  out.query_order.reserve(a.pairs.size());
  for (const auto& [g, q] : a.pairs) {
    out.gt_order.push_back(g);
    out.query_order.push_back(q);
  }
  out.ho_rows = gather_rows(ho_reps, out.query_order);
  out.int_rows = gather_rows(in_reps, out.query_order);
  return out;
}

}  // namespace hoi::match
