#include "hoi/recompose.hpp"

#include <fstream>
#include <sstream>

namespace hoi::compo {

using namespace hoi::ad;

FeasibilityTable FeasibilityTable::build(int num_objects, int num_actions,
                                         std::vector<std::string> object_names,
                                         std::vector<std::string> action_names,
                                         std::vector<std::uint8_t> feasible_bits) {
  if (num_objects <= 0 || num_actions <= 0) {
    throw ConfigError("feasibility table: class counts must be positive");
  }
  if (static_cast<int>(object_names.size()) != num_objects ||
      static_cast<int>(action_names.size()) != num_actions ||
      static_cast<int>(feasible_bits.size()) != num_objects * num_actions) {
    throw ConfigError("feasibility table: field sizes disagree");
  }
  FeasibilityTable t;
  t.num_objects = num_objects;
  t.num_actions = num_actions;
  t.object_names = std::move(object_names);
  t.action_names = std::move(action_names);
  t.feasible = std::move(feasible_bits);
  t.category_of_pair.assign(t.feasible.size(), -1);
  for (int o = 0; o < num_objects; ++o) {
    bool any = false;
    for (int a = 0; a < num_actions; ++a) {
      if (t.feasible[static_cast<std::size_t>(o) * num_actions + a]) {
        t.category_of_pair[static_cast<std::size_t>(o) * num_actions + a] =
            static_cast<int>(t.categories.size());
        t.categories.emplace_back(o, a);
        any = true;
      }
    }
    if (!any) {
      throw ConfigError("feasibility table: object " + t.object_names[static_cast<std::size_t>(o)] +
                        " has no feasible action");
    }
  }
  return t;
}

void save_table(const std::string& path, const FeasibilityTable& table) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open feasibility table for writing: " + path);
  out << "hoic-feasibility v1\n";
  out << "objects " << table.num_objects;
  for (const auto& n : table.object_names) out << " " << n;
  out << "\n";
  out << "actions " << table.num_actions;
  for (const auto& n : table.action_names) out << " " << n;
  out << "\n";
  out << "pairs " << table.num_categories() << "\n";
  for (int id = 0; id < table.num_categories(); ++id) {
    const auto& [o, a] = table.categories[static_cast<std::size_t>(id)];
    out << "pair " << o << " " << a << " " << id << "\n";
  }
  if (!out) throw ConfigError("feasibility table write failed: " + path);
}

FeasibilityTable load_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open feasibility table: " + path);
  std::string line, tok;
  if (!std::getline(in, line) || line != "hoic-feasibility v1") {
    throw ParseError("bad feasibility header in " + path);
  }

  int num_objects = 0, num_actions = 0;
  std::vector<std::string> object_names, action_names;
  {
    if (!std::getline(in, line)) throw ParseError("truncated feasibility table: " + path);
    std::istringstream s(line);
    s >> tok >> num_objects;
    if (tok != "objects" || num_objects <= 0) throw ParseError("bad objects line in " + path);
    for (int i = 0; i < num_objects; ++i) {
      std::string n;
      if (!(s >> n)) throw ParseError("missing object name in " + path);
      object_names.push_back(n);
    }
  }
  {
    if (!std::getline(in, line)) throw ParseError("truncated feasibility table: " + path);
    std::istringstream s(line);
    s >> tok >> num_actions;
    if (tok != "actions" || num_actions <= 0) throw ParseError("bad actions line in " + path);
    for (int i = 0; i < num_actions; ++i) {
      std::string n;
      if (!(s >> n)) throw ParseError("missing action name in " + path);
      action_names.push_back(n);
    }
  }
  int pairs = 0;
  {
    if (!std::getline(in, line)) throw ParseError("truncated feasibility table: " + path);
    std::istringstream s(line);
    s >> tok >> pairs;
    if (tok != "pairs" || pairs < 0) throw ParseError("bad pairs line in " + path);
  }
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(num_objects * num_actions), 0);
  std::vector<int> ids;
  for (int k = 0; k < pairs; ++k) {
    if (!std::getline(in, line)) throw ParseError("truncated feasibility pairs: " + path);
    std::istringstream s(line);
    int o = -1, a = -1, id = -1;
    s >> tok >> o >> a >> id;
    if (tok != "pair" || o < 0 || o >= num_objects || a < 0 || a >= num_actions) {
      throw ParseError("bad pair line " + std::to_string(k) + " in " + path);
    }
    bits[static_cast<std::size_t>(o) * num_actions + a] = 1;
    ids.push_back(id);
  }
  FeasibilityTable t = FeasibilityTable::build(num_objects, num_actions, std::move(object_names),
                                               std::move(action_names), std::move(bits));
  // object-major enumeration must agree with the stored ids
  for (int k = 0; k < pairs; ++k) {
    if (ids[static_cast<std::size_t>(k)] != k) {
      throw ParseError("non-canonical category ids in " + path);
    }
  }
  return t;
}

Tensor cross_concat(const Tensor& rp_a, const Tensor& ri_b) {
  if (rp_a.dim(0) == 0 || ri_b.dim(0) == 0) {
    throw DimensionError("cross_concat: inputs must be non-empty");
  }
  if (rp_a.dim(1) != ri_b.dim(1)) {
    throw DimensionError("cross_concat: representation widths differ");
  }
  const int na = rp_a.dim(0);
  const int nb = ri_b.dim(0);
  return concat({repeat_interleave_rows(rp_a, nb), tile_rows(ri_b, na)}, 1);
}

RecomposedLabels recompose_labels(const std::vector<GtInstance>& ho_sources,
                                  const std::vector<GtInstance>& action_donors,
                                  const FeasibilityTable& table) {
  const int na = table.num_actions;
  RecomposedLabels out;
  out.action_targets.reserve(ho_sources.size() * action_donors.size() *
                             static_cast<std::size_t>(na));
  for (const auto& src : ho_sources) {
    if (src.object_class < 0 || src.object_class >= table.num_objects) {
      throw DomainError("recompose_labels: object class out of range");
    }
    for (const auto& donor : action_donors) {
      for (int a = 0; a < na; ++a) {
        const bool on = donor.actions[static_cast<std::size_t>(a)] != 0 &&
                        table.is_feasible(src.object_class, a);
        out.action_targets.push_back(on ? 1.0 : 0.0);
      }
      out.kept.push_back(1);  // all-zero rows still supervise detection
    }
  }
  return out;
}

int expected_recomposed_rows(const std::vector<int>& gt_counts, bool include_self_pairs) {
  int total = 0;
  for (std::size_t a = 0; a < gt_counts.size(); ++a) {
    for (std::size_t b = 0; b < gt_counts.size(); ++b) {
      total += gt_counts[a] * gt_counts[b];
      if (a == b && !include_self_pairs) total -= gt_counts[a];
    }
  }
  return total;
}

RecomposedBatch build_recomposed_batch(const std::vector<MatchedImage>& images,
                                       const FeasibilityTable& table, bool detach_features,
                                       bool include_self_pairs) {
  if (images.empty() || images.size() > 2) {
    throw DomainError("build_recomposed_batch: expected one or two images");
  }

  RecomposedBatch batch;
  std::vector<Tensor> feature_blocks, bh_blocks, bo_blocks, ol_blocks;

  for (const auto& src : images) {    // R*_p provider
    for (const auto& donor : images) {  // R*_i provider
      const int n_src = src.ho_rows.defined() ? src.ho_rows.dim(0) : 0;
      const int n_don = donor.int_rows.defined() ? donor.int_rows.dim(0) : 0;
      if (n_src == 0 || n_don == 0) continue;

      const bool same_image = &src == &donor;
      Tensor ho = detach_features ? src.ho_rows.detach() : src.ho_rows;
      Tensor in = detach_features ? donor.int_rows.detach() : donor.int_rows;
      Tensor block = cross_concat(ho, in);
      Tensor bh = repeat_interleave_rows(src.pred_human_boxes, n_don);
      Tensor bo = repeat_interleave_rows(src.pred_object_boxes, n_don);
      Tensor ol = repeat_interleave_rows(src.pred_object_logits, n_don);

      RecomposedLabels labels = recompose_labels(src.gts, donor.gts, table);

      std::vector<int> keep_rows;
      keep_rows.reserve(static_cast<std::size_t>(n_src * n_don));
      for (int m = 0; m < n_src; ++m) {
        for (int k = 0; k < n_don; ++k) {
          if (same_image && m == k && !include_self_pairs) continue;  // original sample already covers it
          keep_rows.push_back(m * n_don + k);
          batch.gt_human_boxes.push_back(src.gts[static_cast<std::size_t>(m)].human_box);
          batch.gt_object_boxes.push_back(src.gts[static_cast<std::size_t>(m)].object_box);
          batch.gt_object_classes.push_back(src.gts[static_cast<std::size_t>(m)].object_class);
          const std::size_t row = static_cast<std::size_t>(m * n_don + k) *
                                  static_cast<std::size_t>(table.num_actions);
          for (int a = 0; a < table.num_actions; ++a) {
            batch.action_targets.push_back(labels.action_targets[row + static_cast<std::size_t>(a)]);
          }
          batch.provenance.push_back(
              {{src.image_id, m}, {donor.image_id, k}});
        }
      }
      if (keep_rows.empty()) continue;
      if (static_cast<int>(keep_rows.size()) == n_src * n_don) {
        feature_blocks.push_back(block);
        bh_blocks.push_back(bh);
        bo_blocks.push_back(bo);
        ol_blocks.push_back(ol);
      } else {
        feature_blocks.push_back(gather_rows(block, keep_rows));
        bh_blocks.push_back(gather_rows(bh, keep_rows));
        bo_blocks.push_back(gather_rows(bo, keep_rows));
        ol_blocks.push_back(gather_rows(ol, keep_rows));
      }
    }
  }

  if (!feature_blocks.empty()) {
    batch.features = feature_blocks.size() == 1 ? feature_blocks[0] : concat(feature_blocks, 0);
    batch.pred_human_boxes = bh_blocks.size() == 1 ? bh_blocks[0] : concat(bh_blocks, 0);
    batch.pred_object_boxes = bo_blocks.size() == 1 ? bo_blocks[0] : concat(bo_blocks, 0);
    batch.pred_object_logits = ol_blocks.size() == 1 ? ol_blocks[0] : concat(ol_blocks, 0);
  }
  return batch;
}

CompoLossParts recomposed_forward_loss(const RecomposedBatch& batch, const model::HoiModel& m,
                                       const loss::LossWeights& weights) {
  CompoLossParts parts;
  if (batch.rows() == 0) {
    parts.l_box = Tensor::scalar(0.0);
    parts.l_giou = Tensor::scalar(0.0);
    parts.l_object = Tensor::scalar(0.0);
    parts.l_action = Tensor::scalar(0.0);
    parts.total = Tensor::scalar(0.0);
    return parts;
  }
  if (m.action_head_kind() != model::ActionHeadKind::concat) {
    throw ConfigError("re-composition requires the concatenating action head");
  }

  const Tensor logits = m.action_head().apply(batch.features);
  parts.l_action = loss::action_loss(logits, batch.action_targets);

  auto [l_box, l_giou] =
      loss::box_losses(batch.pred_human_boxes, batch.pred_object_boxes,
                       loss::boxes_tensor(batch.gt_human_boxes),
                       loss::boxes_tensor(batch.gt_object_boxes));
  parts.l_box = l_box;
  parts.l_giou = l_giou;

  parts.l_object = softmax_cross_entropy(batch.pred_object_logits, batch.gt_object_classes);
  parts.total = loss::total_loss(parts.l_box, parts.l_giou, parts.l_object, parts.l_action, weights);
  return parts;
}

}  // namespace hoi::compo
