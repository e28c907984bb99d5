#include "hoi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace hoi::eval {

double iou(const Box& a, const Box& b) {
  if (a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0) {
    throw DomainError("iou: boxes must have positive extents");
  }
  const double ix1 = std::max(a.x1(), b.x1());
  const double iy1 = std::max(a.y1(), b.y1());
  const double ix2 = std::min(a.x2(), b.x2());
  const double iy2 = std::min(a.y2(), b.y2());
  const double iw = std::max(0.0, ix2 - ix1);
  const double ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

namespace {

bool triplet_order(const ScoredTriplet& a, const ScoredTriplet& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.query != b.query) return a.query < b.query;
  return a.category < b.category;
}

bool global_order(const ScoredTriplet& a, const ScoredTriplet& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  return a.emit_index < b.emit_index;
}

}  // namespace

std::vector<ScoredTriplet> score_triplets(const std::vector<match::PredRow>& rows,
                                          const compo::FeasibilityTable& table, int top_k,
                                          int image_id) {
  std::vector<ScoredTriplet> all;
  all.reserve(rows.size() * static_cast<std::size_t>(table.num_categories()));
  for (std::size_t q = 0; q < rows.size(); ++q) {
    const auto& row = rows[q];
    for (int cat = 0; cat < table.num_categories(); ++cat) {
      const auto& [o, a] = table.categories[static_cast<std::size_t>(cat)];
      ScoredTriplet t;
      t.image_id = image_id;
      t.human_box = row.human_box;
      t.object_box = row.object_box;
      t.category = cat;
      t.score = row.object_probs[static_cast<std::size_t>(o)] *
                ad::stable_sigmoid(row.action_logits[static_cast<std::size_t>(a)]);
      t.query = static_cast<int>(q);
      all.push_back(t);
    }
  }
  std::stable_sort(all.begin(), all.end(), triplet_order);
  if (static_cast<int>(all.size()) > top_k) all.resize(static_cast<std::size_t>(top_k));
  for (std::size_t i = 0; i < all.size(); ++i) all[i].emit_index = static_cast<int>(i);
  return all;
}

std::vector<ScoredTriplet> pairwise_nms(const std::vector<ScoredTriplet>& sorted_triplets,
                                        double iou_threshold) {
  std::vector<ScoredTriplet> kept;
  for (const auto& t : sorted_triplets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.category != t.category) continue;
      const double pair_iou = std::min(iou(k.human_box, t.human_box), iou(k.object_box, t.object_box));
      if (pair_iou > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(t);
  }
  return kept;
}

double average_precision(const std::vector<ScoredTriplet>& preds,
                         const std::vector<CategoryGt>& gts) {
  if (gts.empty()) throw DomainError("average_precision: no ground truth in category");
  const int n_gt = static_cast<int>(gts.size());

  std::vector<char> gt_used(gts.size(), 0);
  std::vector<char> is_tp(preds.size(), 0);
  for (std::size_t p = 0; p < preds.size(); ++p) {
    int best_gt = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g] || gts[g].image_id != preds[p].image_id) continue;
      const double iou_h = iou(preds[p].human_box, gts[g].human_box);
      const double iou_o = iou(preds[p].object_box, gts[g].object_box);
      if (iou_h <= 0.5 || iou_o <= 0.5) continue;
      const double pair_iou = std::min(iou_h, iou_o);
      if (pair_iou > best_iou) {  // ties keep the lowest gt index
        best_iou = pair_iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      gt_used[static_cast<std::size_t>(best_gt)] = 1;
      is_tp[p] = 1;
    }
  }

  // precision envelope over the PR points, recall steps only at TPs
  std::vector<double> precision(preds.size());
  int tp = 0;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    if (is_tp[p]) ++tp;
    precision[p] = static_cast<double>(tp) / static_cast<double>(p + 1);
  }
  double envelope = 0.0;
  double ap = 0.0;
  for (std::size_t p = preds.size(); p-- > 0;) {
    envelope = std::max(envelope, precision[p]);
    if (is_tp[p]) ap += envelope / n_gt;
  }
  return ap;
}

EvalReport evaluate_triplets(const std::vector<std::vector<ScoredTriplet>>& per_image,
                             const std::vector<data::Scene>& test_split,
                             const data::CategoryCensus& census,
                             const compo::FeasibilityTable& table, const EvalOptions& options) {
  // global prediction pool per category
  std::vector<std::vector<ScoredTriplet>> by_category(
      static_cast<std::size_t>(table.num_categories()));
  for (const auto& image_triplets : per_image) {
    const std::vector<ScoredTriplet>& final_triplets =
        options.use_nms ? pairwise_nms(image_triplets, options.nms_iou) : image_triplets;
    for (const auto& t : final_triplets) {
      by_category[static_cast<std::size_t>(t.category)].push_back(t);
    }
  }
  for (auto& preds : by_category) std::stable_sort(preds.begin(), preds.end(), global_order);

  // ground truth pool per category
  std::vector<std::vector<CategoryGt>> gts_by_category(
      static_cast<std::size_t>(table.num_categories()));
  for (const auto& scene : test_split) {
    for (const auto& ref : scene.gt_refs) {
      const int object_class = scene.object_classes[static_cast<std::size_t>(ref.object_index)];
      for (int a = 0; a < table.num_actions; ++a) {
        if (!ref.actions[static_cast<std::size_t>(a)]) continue;
        const int cat = table.category(object_class, a);
        if (cat < 0) continue;
        CategoryGt g;
        g.image_id = scene.image_id;
        g.human_box = scene.humans[static_cast<std::size_t>(ref.human_index)];
        g.object_box = scene.objects[static_cast<std::size_t>(ref.object_index)];
        gts_by_category[static_cast<std::size_t>(cat)].push_back(g);
      }
    }
  }

  EvalReport report;
  double sum_full = 0.0, sum_rare = 0.0, sum_nonrare = 0.0;
  int n_rare = 0, n_nonrare = 0;
  for (int cat = 0; cat < table.num_categories(); ++cat) {
    const auto& gts = gts_by_category[static_cast<std::size_t>(cat)];
    if (gts.empty()) {
      ++report.skipped_categories;
      continue;
    }
    const double ap = average_precision(by_category[static_cast<std::size_t>(cat)], gts);
    report.category_ids.push_back(cat);
    report.per_category_ap.push_back(ap);
    report.gt_counts.push_back(static_cast<int>(gts.size()));
    report.pred_counts.push_back(static_cast<int>(by_category[static_cast<std::size_t>(cat)].size()));
    const bool rare = census.is_rare[static_cast<std::size_t>(cat)] != 0;
    report.category_rare.push_back(rare ? 1 : 0);
    sum_full += ap;
    if (rare) {
      sum_rare += ap;
      ++n_rare;
    } else {
      sum_nonrare += ap;
      ++n_nonrare;
    }
  }
  const int evaluated = static_cast<int>(report.category_ids.size());
  report.map_full = evaluated ? sum_full / evaluated : 0.0;
  report.map_rare = n_rare ? sum_rare / n_rare : 0.0;
  report.map_nonrare = n_nonrare ? sum_nonrare / n_nonrare : 0.0;
  return report;
}

EvalReport evaluate(const model::HoiModel& m, const std::vector<data::Scene>& test_split,
                    const data::CategoryCensus& census, const compo::FeasibilityTable& table,
                    const EvalOptions& options) {
  std::vector<std::vector<ScoredTriplet>> per_image;
  per_image.reserve(test_split.size());

  for (const auto& scene : test_split) {
    if (options.oracle_predictions) {
      std::vector<ScoredTriplet> oracle;
      int emit = 0;
      for (const auto& ref : scene.gt_refs) {
        const int object_class = scene.object_classes[static_cast<std::size_t>(ref.object_index)];
        for (int a = 0; a < table.num_actions; ++a) {
          if (!ref.actions[static_cast<std::size_t>(a)]) continue;
          const int cat = table.category(object_class, a);
          if (cat < 0) continue;
          ScoredTriplet t;
          t.image_id = scene.image_id;
          t.human_box = scene.humans[static_cast<std::size_t>(ref.human_index)];
          t.object_box = scene.objects[static_cast<std::size_t>(ref.object_index)];
          t.category = cat;
          t.score = 1.0;
          t.query = emit;
          t.emit_index = emit++;
          oracle.push_back(t);
        }
      }
      per_image.push_back(std::move(oracle));
      continue;
    }

    ad::NoGradGuard frozen;
    const model::ForwardResult fwd =
        m.forward(data::rasterize(scene, m.config().grid_h, m.config().grid_w, m.config().grid_c));
    per_image.push_back(
        score_triplets(match::extract_rows(fwd.preds), table, options.top_k, scene.image_id));
  }
  return evaluate_triplets(per_image, test_split, census, table, options);
}

void write_report_csv(const std::string& path, const EvalReport& report,
                      const compo::FeasibilityTable& table) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open report for writing: " + path);
  out << "category_id,object,action,rare,gt_count,pred_count,ap\n";
  for (std::size_t i = 0; i < report.category_ids.size(); ++i) {
    const int cat = report.category_ids[i];
    const auto& [o, a] = table.categories[static_cast<std::size_t>(cat)];
    out << cat << "," << table.object_names[static_cast<std::size_t>(o)] << ","
        << table.action_names[static_cast<std::size_t>(a)] << ","
        << (report.category_rare[i] ? 1 : 0) << "," << report.gt_counts[i] << ","
        << report.pred_counts[i] << "," << fmt_g17(report.per_category_ap[i]) << "\n";
  }
  out << "summary,map_full,,,,," << fmt_g17(report.map_full) << "\n";
  out << "summary,map_rare,,,,," << fmt_g17(report.map_rare) << "\n";
  out << "summary,map_nonrare,,,,," << fmt_g17(report.map_nonrare) << "\n";
  out << "summary,skipped_categories,,,,," << report.skipped_categories << "\n";
}

EvalReport read_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open report: " + path);
  EvalReport report;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty report: " + path);
  while (std::getline(in, line)) {
    std::stringstream s(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(s, field, ',')) fields.push_back(field);
    if (fields.size() != 7) throw ParseError("bad report row in " + path);
    if (fields[0] == "summary") {
      const double v = parse_double(fields[6]);
      if (fields[1] == "map_full") report.map_full = v;
      if (fields[1] == "map_rare") report.map_rare = v;
      if (fields[1] == "map_nonrare") report.map_nonrare = v;
      if (fields[1] == "skipped_categories") report.skipped_categories = static_cast<int>(v);
      continue;
    }
    report.category_ids.push_back(static_cast<int>(parse_int(fields[0])));
    report.category_rare.push_back(fields[3] == "1" ? 1 : 0);
    report.gt_counts.push_back(static_cast<int>(parse_int(fields[4])));
    report.pred_counts.push_back(static_cast<int>(parse_int(fields[5])));
    report.per_category_ap.push_back(parse_double(fields[6]));
  }
  return report;
}

void save_triplets(const std::string& path, const std::vector<ScoredTriplet>& triplets) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open triplet dump for writing: " + path);
  out << "hoic-triplets v1\n";
  for (const auto& t : triplets) {
    out << t.image_id << " " << t.category << " " << fmt_hex(t.score) << " " << t.query << " "
        << t.emit_index;
    for (const Box* b : {&t.human_box, &t.object_box}) {
      out << " " << fmt_hex(b->cx) << " " << fmt_hex(b->cy) << " " << fmt_hex(b->w) << " "
          << fmt_hex(b->h);
    }
    out << "\n";
  }
}

std::vector<ScoredTriplet> load_triplets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open triplet dump: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "hoic-triplets v1") {
    throw ParseError("bad triplet dump header in " + path);
  }
  std::vector<ScoredTriplet> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream s(line);
    ScoredTriplet t;
    std::string tok;
    auto next = [&]() -> std::string {
      if (!(s >> tok)) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": short triplet line");
      }
      return tok;
    };
    t.image_id = static_cast<int>(parse_int(next()));
    t.category = static_cast<int>(parse_int(next()));
    t.score = parse_double(next());
    t.query = static_cast<int>(parse_int(next()));
    t.emit_index = static_cast<int>(parse_int(next()));
    for (Box* b : {&t.human_box, &t.object_box}) {
      b->cx = parse_double(next());
      b->cy = parse_double(next());
      b->w = parse_double(next());
      b->h = parse_double(next());
    }
    out.push_back(t);
  }
  return out;
}

}  // namespace hoi::eval
