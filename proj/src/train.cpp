#include "hoi/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "hoi/matching.hpp"
#include "hoi/optim.hpp"

namespace hoi::exp {

using namespace hoi::ad;
using nlohmann::json;

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::baseline: return "baseline";
    case Mode::baseline_star: return "baseline_star";
    case Mode::compo: return "compo";
  }
  throw ConfigError("unknown mode");
}

Mode mode_from_name(const std::string& name) {
  if (name == "baseline") return Mode::baseline;
  if (name == "baseline_star") return Mode::baseline_star;
  if (name == "compo") return Mode::compo;
  throw ConfigError("unknown mode: '" + name + "' (expected baseline, baseline_star or compo)");
}

namespace {

json config_json(const ExperimentConfig& cfg, const data::DatasetSpec& spec, Mode mode,
                 double rho) {
  json j;
  j["mode"] = mode_name(mode);
  j["rho"] = rho;
  j["epochs_phase1"] = cfg.epochs_phase1;
  j["epochs_phase2"] = cfg.epochs_phase2;
  j["lr_drop_epoch"] = cfg.lr_drop_epoch;
  j["lr_phase1"] = cfg.lr_phase1;
  j["lr_phase2"] = cfg.lr_phase2;
  j["weight_decay"] = cfg.weight_decay;
  j["detach_recomposed"] = cfg.detach_recomposed;
  j["lambda_box"] = cfg.weights.lambda_box;
  j["lambda_giou"] = cfg.weights.lambda_giou;
  j["lambda_object"] = cfg.weights.lambda_object;
  j["lambda_action"] = cfg.weights.lambda_action;
  j["top_k"] = cfg.top_k;
  j["use_nms"] = cfg.use_nms;
  j["nms_iou"] = cfg.nms_iou;
  j["model"] = {{"num_queries", cfg.model.num_queries},
                {"query_dim", cfg.model.query_dim},
                {"encoder_layers", cfg.model.encoder_layers},
                {"decoder_layers", cfg.model.decoder_layers},
                {"attention_heads", cfg.model.attention_heads}};
  j["dataset"] = {{"num_objects", spec.num_objects},
                  {"num_actions", spec.num_actions},
                  {"feasibility_density", spec.feasibility_density},
                  {"zipf_exponent", spec.zipf_exponent},
                  {"train_images", spec.train_images},
                  {"test_images", spec.test_images},
                  {"test_min_per_category", spec.test_min_per_category},
                  {"max_instances_per_image", spec.max_instances_per_image},
                  {"grid", {spec.grid_h, spec.grid_w, spec.grid_c}},
                  {"rare_threshold", spec.rare_threshold},
                  {"seed", spec.seed}};
  return j;
}

}  // namespace

std::string ExperimentConfig::canonical_string(const data::DatasetSpec& dataset_spec) const {
  return config_json(*this, dataset_spec, mode, rho).dump();
}

std::string ExperimentConfig::config_hash(const data::DatasetSpec& dataset_spec) const {
  return hex64(fnv1a64(canonical_string(dataset_spec)));
}

std::string encoder_checksum(const model::HoiModel& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : m.params().all()) {
    if (p.name.rfind("encoder.", 0) != 0) continue;
    for (double v : p.tensor.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffULL;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return hex64(h);
}

namespace {

struct ImagePass {
  int image_id = 0;
  model::ForwardResult fwd;
  GroundTruthSet gts;
  match::Assignment assign;
  match::MatchedReps matched;
  Tensor matched_human_boxes;
  Tensor matched_object_boxes;
  Tensor matched_object_logits;
  Tensor matched_action_logits;
};

ImagePass forward_and_match(const model::HoiModel& m, const Tensor& raster,
                            const data::Scene& scene, const loss::LossWeights& weights) {
  ImagePass pass;
  pass.image_id = scene.image_id;
  pass.fwd = m.forward(raster);
  pass.gts = scene.ground_truth();
  if (pass.gts.count() > m.config().num_queries) {
    throw CapacityError("scene " + std::to_string(scene.image_id) +
                        " has more ground truths than queries");
  }
  const auto rows = match::extract_rows(pass.fwd.preds);
  pass.assign = match::hungarian(match::build_cost_matrix(rows, pass.gts, weights));
  pass.matched = match::select_matched(pass.fwd.ho_reps, pass.fwd.in_reps, pass.assign);
  if (!pass.matched.query_order.empty()) {
    pass.matched_human_boxes = gather_rows(pass.fwd.preds.human_boxes, pass.matched.query_order);
    pass.matched_object_boxes = gather_rows(pass.fwd.preds.object_boxes, pass.matched.query_order);
    pass.matched_object_logits =
        gather_rows(pass.fwd.preds.object_logits, pass.matched.query_order);
    pass.matched_action_logits =
        gather_rows(pass.fwd.preds.action_logits, pass.matched.query_order);
  }
  return pass;
}

struct StepLoss {
  Tensor batch;  // scalar to backprop
  loss::LossReport report;
};

StepLoss batch_losses(const model::HoiModel& m, const std::vector<ImagePass>& passes,
                      const compo::FeasibilityTable& table, const loss::LossWeights& weights,
                      Mode mode, double rho, bool detach_recomposed) {
  // pooled original-sample terms across the image pair
  std::vector<Tensor> mh, mo, ol, al;
  std::vector<Box> gt_h, gt_o;
  std::vector<double> action_targets;
  GroundTruthSet pooled_gts;
  std::vector<std::pair<int, int>> pooled_pairs;
  int gt_offset = 0, query_offset = 0;

  for (const auto& pass : passes) {
    if (!pass.matched.query_order.empty()) {
      mh.push_back(pass.matched_human_boxes);
      mo.push_back(pass.matched_object_boxes);
      al.push_back(pass.matched_action_logits);
      for (const auto& gt : pass.gts.instances) {
        gt_h.push_back(gt.human_box);
        gt_o.push_back(gt.object_box);
        for (auto a : gt.actions) action_targets.push_back(a ? 1.0 : 0.0);
      }
    }
    ol.push_back(pass.fwd.preds.object_logits);
    for (const auto& gt : pass.gts.instances) pooled_gts.instances.push_back(gt);
    for (const auto& [g, q] : pass.assign.pairs) {
      pooled_pairs.emplace_back(g + gt_offset, q + query_offset);
    }
    gt_offset += pass.gts.count();
    query_offset += m.config().num_queries;
  }

  StepLoss out;
  Tensor l_box, l_giou;
  if (mh.empty()) {
    l_box = Tensor::scalar(0.0);
    l_giou = Tensor::scalar(0.0);
  } else {
    Tensor pred_h = mh.size() == 1 ? mh[0] : concat(mh, 0);
    Tensor pred_o = mo.size() == 1 ? mo[0] : concat(mo, 0);
    std::tie(l_box, l_giou) =
        loss::box_losses(pred_h, pred_o, loss::boxes_tensor(gt_h), loss::boxes_tensor(gt_o));
  }
  const Tensor logits = ol.size() == 1 ? ol[0] : concat(ol, 0);
  const Tensor l_object = loss::object_loss(logits, pooled_pairs, pooled_gts);
  Tensor l_action;
  if (al.empty()) {
    l_action = Tensor::scalar(0.0);
  } else {
    l_action = loss::action_loss(al.size() == 1 ? al[0] : concat(al, 0), action_targets);
  }
  const Tensor l_orig = loss::total_loss(l_box, l_giou, l_object, l_action, weights);

  out.report.l_box = l_box.item();
  out.report.l_giou = l_giou.item();
  out.report.l_object = l_object.item();
  out.report.l_action = l_action.item();
  out.report.total = l_orig.item();
  out.report.orig = l_orig.item();

  if (mode != Mode::compo) {
    out.report.compo = 0.0;
    out.report.rho_effective = 1.0;
    out.report.batch = out.report.orig;
    out.batch = l_orig;
    return out;
  }

  std::vector<compo::MatchedImage> matched_images;
  for (const auto& pass : passes) {
    if (pass.matched.query_order.empty()) continue;
    compo::MatchedImage mi;
    mi.image_id = pass.image_id;
    mi.ho_rows = pass.matched.ho_rows;
    mi.int_rows = pass.matched.int_rows;
    mi.pred_human_boxes = pass.matched_human_boxes;
    mi.pred_object_boxes = pass.matched_object_boxes;
    mi.pred_object_logits = pass.matched_object_logits;
    mi.gts = pass.gts.instances;
    matched_images.push_back(std::move(mi));
  }

  compo::RecomposedBatch rb;
  if (!matched_images.empty()) {
    rb = compo::build_recomposed_batch(matched_images, table, detach_recomposed);
  }

  if (rb.rows() == 0) {
    // Eq.-7 mix is undefined without re-composed samples; fall back to the
    // original loss and flag it in the log
    out.report.compo = 0.0;
    out.report.rho_effective = 1.0;
    out.report.batch = out.report.orig;
    out.batch = l_orig;
    return out;
  }

  if (rho == 1.0) {
    // degenerate mix: value logged, no gradient path, trajectory must stay
    // bit-identical to baseline_star
    NoGradGuard frozen;
    const auto parts = compo::recomposed_forward_loss(rb, m, weights);
    out.report.compo = parts.total.item();
    out.report.rho_effective = 1.0;
    out.report.batch = out.report.orig;
    out.batch = l_orig;
    return out;
  }

  const auto parts = compo::recomposed_forward_loss(rb, m, weights);
  const Tensor mixed = loss::batch_loss(l_orig, parts.total, rho);
  out.report.compo = parts.total.item();
  out.report.rho_effective = rho;
  out.report.batch = mixed.item();
  out.batch = mixed;
  return out;
}

loss::LossReport mean_report(const std::vector<loss::LossReport>& rows, std::size_t from,
                             std::size_t to) {
  loss::LossReport m;
  const double n = static_cast<double>(to - from);
  for (std::size_t i = from; i < to; ++i) {
    m.l_box += rows[i].l_box;
    m.l_giou += rows[i].l_giou;
    m.l_object += rows[i].l_object;
    m.l_action += rows[i].l_action;
    m.total += rows[i].total;
    m.orig += rows[i].orig;
    m.compo += rows[i].compo;
    m.batch += rows[i].batch;
  }
  m.l_box /= n;
  m.l_giou /= n;
  m.l_object /= n;
  m.l_action /= n;
  m.total /= n;
  m.orig /= n;
  m.compo /= n;
  m.batch /= n;
  return m;
}

}  // namespace

RunResult train_and_eval(const ExperimentConfig& cfg, const data::Dataset& ds, Mode mode,
                         double rho, std::uint64_t seed, const std::string& run_dir,
                         std::ostream* log) {
  const auto t_start = std::chrono::steady_clock::now();

  model::ModelConfig mc = cfg.model;
  mc.num_object_classes = ds.spec.num_objects;
  mc.num_action_classes = ds.spec.num_actions;
  mc.grid_h = ds.spec.grid_h;
  mc.grid_w = ds.spec.grid_w;
  mc.grid_c = ds.spec.grid_c;
  const auto head = mode == Mode::baseline ? model::ActionHeadKind::interaction_only
                                           : model::ActionHeadKind::concat;
  model::HoiModel m(mc, head, seed);

  std::vector<Tensor> rasters;
  rasters.reserve(ds.train.size());
  for (const auto& scene : ds.train) {
    rasters.push_back(data::rasterize(scene, mc.grid_h, mc.grid_w, mc.grid_c));
  }

  RunResult result;
  result.seed = seed;
  {
    ExperimentConfig cell = cfg;
    cell.mode = mode;
    cell.rho = rho;
    result.config_hash = cell.config_hash(ds.spec);
  }

  Rng shuffle_rng = Rng(seed).split(777);
  std::vector<int> order(ds.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  const int total_epochs = cfg.epochs_phase1 + cfg.epochs_phase2;
  std::unique_ptr<AdamW> opt;
  std::size_t step_index = 0;

  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const bool phase2 = epoch >= cfg.epochs_phase1;
    if (epoch == 0) {
      AdamWConfig oc;
      oc.lr = cfg.lr_phase1;
      oc.weight_decay = cfg.weight_decay;
      opt = std::make_unique<AdamW>(m.params().all(), oc);
    } else if (epoch == cfg.epochs_phase1) {
      result.encoder_checksum_after_phase1 = encoder_checksum(m);
      AdamWConfig oc;
      oc.lr = cfg.lr_phase2;
      oc.weight_decay = cfg.weight_decay;
      opt = std::make_unique<AdamW>(m.decoder_and_head_params(), oc);
    }
    if (!phase2) {
      opt->set_lr(epoch < cfg.lr_drop_epoch ? cfg.lr_phase1 : cfg.lr_phase1 * 0.1);
    }

    shuffle_rng.shuffle(order);
    const std::size_t epoch_first_step = step_index;
    for (std::size_t i = 0; i < order.size(); i += 2) {
      std::vector<ImagePass> passes;
      passes.push_back(forward_and_match(m, rasters[static_cast<std::size_t>(order[i])],
                                         ds.train[static_cast<std::size_t>(order[i])],
                                         cfg.weights));
      if (i + 1 < order.size()) {
        passes.push_back(forward_and_match(m, rasters[static_cast<std::size_t>(order[i + 1])],
                                           ds.train[static_cast<std::size_t>(order[i + 1])],
                                           cfg.weights));
      }
      StepLoss step = batch_losses(m, passes, ds.table, cfg.weights, mode, rho,
                                   cfg.detach_recomposed);
      if (!std::isfinite(step.report.batch)) {
        std::ostringstream dump;
        dump << "non-finite loss at step " << step_index << " (epoch " << epoch
             << "): L_b=" << step.report.l_box << " L_u=" << step.report.l_giou
             << " L_o=" << step.report.l_object << " L_a=" << step.report.l_action
             << " L_orig=" << step.report.orig << " L_compo=" << step.report.compo;
        throw DomainError(dump.str());
      }
      step.batch.backward();
      opt->step();
      m.params().zero_grad();
      result.steps.push_back(step.report);
      ++step_index;
    }
    result.epoch_means.push_back(mean_report(result.steps, epoch_first_step, step_index));
    if (log) {
      (*log) << mode_name(mode) << " rho=" << rho << " seed=" << seed << " epoch " << epoch
             << (phase2 ? " [phase2]" : "") << " mean L_batch "
             << result.epoch_means.back().batch << "\n";
    }
  }
  result.encoder_checksum_final = encoder_checksum(m);
  if (cfg.epochs_phase2 == 0) result.encoder_checksum_after_phase1 = result.encoder_checksum_final;

  eval::EvalOptions eo;
  eo.top_k = cfg.top_k;
  eo.use_nms = cfg.use_nms;
  eo.nms_iou = cfg.nms_iou;
  result.report = eval::evaluate(m, ds.test, ds.census, ds.table, eo);

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    write_loss_csv(run_dir + "/loss.csv", result.steps);
    eval::write_report_csv(run_dir + "/eval.csv", result.report, ds.table);
    save_checkpoint(run_dir + "/checkpoint.txt", m.params());

    json rec;
    rec["config_hash"] = result.config_hash;
    rec["seed"] = seed;
    rec["mode"] = mode_name(mode);
    rec["rho"] = rho;
    rec["steps"] = result.steps.size();
    json epochs = json::array();
    for (const auto& e : result.epoch_means) {
      epochs.push_back({{"l_box", e.l_box},
                        {"l_giou", e.l_giou},
                        {"l_object", e.l_object},
                        {"l_action", e.l_action},
                        {"l_orig", e.orig},
                        {"l_compo", e.compo},
                        {"l_batch", e.batch}});
    }
    rec["epoch_means"] = epochs;
    rec["final"] = {{"map_full", result.report.map_full},
                    {"map_rare", result.report.map_rare},
                    {"map_nonrare", result.report.map_nonrare},
                    {"evaluated_categories", result.report.category_ids.size()},
                    {"skipped_categories", result.report.skipped_categories}};
    rec["encoder_checksum_after_phase1"] = result.encoder_checksum_after_phase1;
    rec["encoder_checksum_final"] = result.encoder_checksum_final;
    std::ofstream(run_dir + "/runrecord.json") << rec.dump(1) << "\n";
    // wall time lives outside the deterministic record
    std::ofstream(run_dir + "/meta.txt") << "wall_seconds " << result.wall_seconds << "\n";
  }
  return result;
}

void write_loss_csv(const std::string& path, const std::vector<loss::LossReport>& steps) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open loss log for writing: " + path);
  out << "step,L_b,L_u,L_o,L_a,L_orig,L_compo,L_batch\n";
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& r = steps[i];
    out << i << "," << fmt_g17(r.l_box) << "," << fmt_g17(r.l_giou) << "," << fmt_g17(r.l_object)
        << "," << fmt_g17(r.l_action) << "," << fmt_g17(r.orig) << "," << fmt_g17(r.compo) << ","
        << fmt_g17(r.batch) << "\n";
  }
}

std::vector<loss::LossReport> read_loss_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open loss log: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty loss log: " + path);
  std::vector<loss::LossReport> rows;
  while (std::getline(in, line)) {
    std::stringstream s(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(s, field, ',')) fields.push_back(field);
    if (fields.size() != 8) throw ParseError("bad loss row in " + path);
    loss::LossReport r;
    r.l_box = parse_double(fields[1]);
    r.l_giou = parse_double(fields[2]);
    r.l_object = parse_double(fields[3]);
    r.l_action = parse_double(fields[4]);
    r.orig = parse_double(fields[5]);
    r.total = r.orig;
    r.compo = parse_double(fields[6]);
    r.batch = parse_double(fields[7]);
    rows.push_back(r);
  }
  return rows;
}

std::vector<AblationSummaryRow> summarize_cells(const std::vector<AblationCell>& cells) {
  std::vector<std::string> methods;
  for (const auto& c : cells) {
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) {
      methods.push_back(c.method);
    }
  }
  std::vector<AblationSummaryRow> rows;
  for (const auto& method : methods) {
    AblationSummaryRow row;
    row.method = method;
    std::vector<double> full, rare, nonrare;
    for (const auto& c : cells) {
      if (c.method != method) continue;
      full.push_back(c.map_full);
      rare.push_back(c.map_rare);
      nonrare.push_back(c.map_nonrare);
    }
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    auto stdev = [&mean](const std::vector<double>& v) {
      if (v.size() < 2) return 0.0;
      const double mu = mean(v);
      double s = 0.0;
      for (double x : v) s += (x - mu) * (x - mu);
      return std::sqrt(s / static_cast<double>(v.size() - 1));
    };
    row.n_seeds = static_cast<int>(full.size());
    row.mean_full = mean(full);
    row.std_full = stdev(full);
    row.mean_rare = mean(rare);
    row.std_rare = stdev(rare);
    row.mean_nonrare = mean(nonrare);
    row.std_nonrare = stdev(nonrare);
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationCell>& cells) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open ablation csv for writing: " + path);
  out << "method,mode,rho,seed,map_full,map_rare,map_nonrare\n";
  for (const auto& c : cells) {
    out << c.method << "," << mode_name(c.mode) << "," << fmt_g17(c.rho) << "," << c.seed << ","
        << fmt_g17(c.map_full) << "," << fmt_g17(c.map_rare) << "," << fmt_g17(c.map_nonrare)
        << "\n";
  }
}

std::vector<AblationCell> read_ablation_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open ablation csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty ablation csv: " + path);
  std::vector<AblationCell> cells;
  while (std::getline(in, line)) {
    std::stringstream s(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(s, field, ',')) fields.push_back(field);
    if (fields.size() != 7) throw ParseError("bad ablation row in " + path);
    AblationCell c;
    c.method = fields[0];
    c.mode = mode_from_name(fields[1]);
    c.rho = parse_double(fields[2]);
    c.seed = static_cast<std::uint64_t>(parse_int(fields[3]));
    c.map_full = parse_double(fields[4]);
    c.map_rare = parse_double(fields[5]);
    c.map_nonrare = parse_double(fields[6]);
    cells.push_back(c);
  }
  return cells;
}

std::string format_ablation_table(const std::vector<AblationSummaryRow>& rows) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-18s %-17s %-17s %-17s %s\n", "method", "mAP_full",
                "mAP_rare", "mAP_nonrare", "seeds");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-18s %7.4f +- %6.4f %7.4f +- %6.4f %7.4f +- %6.4f %5d\n",
                  r.method.c_str(), r.mean_full, r.std_full, r.mean_rare, r.std_rare,
                  r.mean_nonrare, r.std_nonrare, r.n_seeds);
    out << buf;
  }
  out << "note: classification uses plain cross-entropy / BCE; no dynamic loss re-weighting is applied.\n";
  return out.str();
}

AblationResult run_ablation(const ExperimentConfig& cfg, const data::Dataset& ds,
                            const std::string& out_dir, std::ostream* log) {
  struct Cell {
    std::string method;
    std::string dir;
    Mode mode;
    double rho;
    std::uint64_t seed;
  };
  std::vector<Cell> todo;
  auto add_method = [&](const std::string& method, Mode mode, double rho) {
    for (auto seed : cfg.seeds) {
      todo.push_back({method, out_dir + "/" + method + "/seed_" + std::to_string(seed), mode, rho,
                      seed});
    }
  };
  add_method("baseline", Mode::baseline, 1.0);
  add_method("baseline_star", Mode::baseline_star, 1.0);
  for (double rho : cfg.rho_grid) {
    std::ostringstream name;
    name << "compo_rho" << rho;
    std::string method = name.str();
    for (char& c : method) {
      if (c == '.') c = 'p';
    }
    add_method(method, Mode::compo, rho);
  }

  AblationResult result;
  result.cells.resize(todo.size());
  std::vector<std::string> errors(todo.size());

  std::mutex log_mutex;
  std::size_t next = 0;
  std::mutex next_mutex;
  auto worker = [&]() {
    for (;;) {
      std::size_t k;
      {
        std::lock_guard<std::mutex> lock(next_mutex);
        if (next >= todo.size()) return;
        k = next++;
      }
      const Cell& cell = todo[k];
      try {
        RunResult run = train_and_eval(cfg, ds, cell.mode, cell.rho, cell.seed, cell.dir, nullptr);
        AblationCell out;
        out.method = cell.method;
        out.mode = cell.mode;
        out.rho = cell.rho;
        out.seed = cell.seed;
        out.map_full = run.report.map_full;
        out.map_rare = run.report.map_rare;
        out.map_nonrare = run.report.map_nonrare;
        result.cells[k] = out;
        if (log) {
          std::lock_guard<std::mutex> lock(log_mutex);
          (*log) << cell.method << " seed " << cell.seed << ": full " << run.report.map_full
                 << " rare " << run.report.map_rare << " nonrare " << run.report.map_nonrare
                 << " (" << run.wall_seconds << "s)\n";
        }
      } catch (const std::exception& e) {
        errors[k] = e.what();
        result.cells[k].method = cell.method;  // partial results keep their slot
        result.cells[k].mode = cell.mode;
        result.cells[k].rho = cell.rho;
        result.cells[k].seed = cell.seed;
        if (log) {
          std::lock_guard<std::mutex> lock(log_mutex);
          (*log) << cell.method << " seed " << cell.seed << " FAILED: " << e.what() << "\n";
        }
      }
    }
  };

  int jobs = cfg.jobs > 0 ? cfg.jobs : static_cast<int>(std::thread::hardware_concurrency());
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(todo.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::string first_error;
  for (const auto& e : errors) {
    if (!e.empty()) {
      first_error = e;
      break;
    }
  }

  result.rows = summarize_cells(result.cells);
  std::filesystem::create_directories(out_dir);
  write_ablation_csv(out_dir + "/ablation.csv", result.cells);
  std::ofstream(out_dir + "/ablation_table.txt") << format_ablation_table(result.rows);
  if (!first_error.empty()) {
    throw GenerationError("ablation cell failed (partial results kept): " + first_error);
  }
  return result;
}

}  // namespace hoi::exp
