#include "hoi/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace hoi {

using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError(path + ": top-level value must be an object");
  return j;
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& path) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError(path + ": unknown key '" + it.key() + "'");
    }
  }
}

template <class T>
void pick(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

data::DatasetSpec load_dataset_spec(const std::string& path) {
  const json j = read_json(path);
  reject_unknown(j,
                 {"num_objects", "num_actions", "feasibility_density", "zipf_exponent",
                  "train_images", "test_images", "test_min_per_category",
                  "max_instances_per_image", "grid", "rare_threshold", "seed"},
                 path);
  data::DatasetSpec spec;
  pick(j, "num_objects", spec.num_objects);
  pick(j, "num_actions", spec.num_actions);
  pick(j, "feasibility_density", spec.feasibility_density);
  pick(j, "zipf_exponent", spec.zipf_exponent);
  pick(j, "train_images", spec.train_images);
  pick(j, "test_images", spec.test_images);
  pick(j, "test_min_per_category", spec.test_min_per_category);
  pick(j, "max_instances_per_image", spec.max_instances_per_image);
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    if (!g.is_array() || g.size() != 3) throw ConfigError(path + ": grid must be [h, w, c]");
    spec.grid_h = g[0].get<int>();
    spec.grid_w = g[1].get<int>();
    spec.grid_c = g[2].get<int>();
  }
  pick(j, "rare_threshold", spec.rare_threshold);
  pick(j, "seed", spec.seed);
  spec.validate();
  return spec;
}

exp::ExperimentConfig load_experiment_config(const std::string& path) {
  const json j = read_json(path);
  reject_unknown(j,
                 {"mode", "rho", "rho_grid", "seeds", "epochs_phase1", "epochs_phase2",
                  "lr_drop_epoch", "lr_phase1", "lr_phase2", "weight_decay",
                  "detach_recomposed", "lambda_box", "lambda_giou", "lambda_object",
                  "lambda_action", "top_k", "use_nms", "nms_iou", "jobs", "model"},
                 path);
  exp::ExperimentConfig cfg;
  if (j.contains("mode")) cfg.mode = exp::mode_from_name(j.at("mode").get<std::string>());
  pick(j, "rho", cfg.rho);
  pick(j, "rho_grid", cfg.rho_grid);
  pick(j, "seeds", cfg.seeds);
  pick(j, "epochs_phase1", cfg.epochs_phase1);
  pick(j, "epochs_phase2", cfg.epochs_phase2);
  pick(j, "lr_drop_epoch", cfg.lr_drop_epoch);
  pick(j, "lr_phase1", cfg.lr_phase1);
  pick(j, "lr_phase2", cfg.lr_phase2);
  pick(j, "weight_decay", cfg.weight_decay);
  pick(j, "detach_recomposed", cfg.detach_recomposed);
  pick(j, "lambda_box", cfg.weights.lambda_box);
  pick(j, "lambda_giou", cfg.weights.lambda_giou);
  pick(j, "lambda_object", cfg.weights.lambda_object);
  pick(j, "lambda_action", cfg.weights.lambda_action);
  pick(j, "top_k", cfg.top_k);
  pick(j, "use_nms", cfg.use_nms);
  pick(j, "nms_iou", cfg.nms_iou);
  pick(j, "jobs", cfg.jobs);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m,
                   {"num_queries", "query_dim", "encoder_layers", "decoder_layers",
                    "attention_heads"},
                   path + "#model");
    pick(m, "num_queries", cfg.model.num_queries);
    pick(m, "query_dim", cfg.model.query_dim);
    pick(m, "encoder_layers", cfg.model.encoder_layers);
    pick(m, "decoder_layers", cfg.model.decoder_layers);
    pick(m, "attention_heads", cfg.model.attention_heads);
  }
  cfg.weights.rho = cfg.rho;
  if (cfg.rho < 0.0 || cfg.rho > 1.0) throw ConfigError(path + ": rho must lie in [0,1]");
  return cfg;
}

void write_dataset_spec(const std::string& path, const data::DatasetSpec& spec) {
  json j;
  j["num_objects"] = spec.num_objects;
  j["num_actions"] = spec.num_actions;
  j["feasibility_density"] = spec.feasibility_density;
  j["zipf_exponent"] = spec.zipf_exponent;
  j["train_images"] = spec.train_images;
  j["test_images"] = spec.test_images;
  j["test_min_per_category"] = spec.test_min_per_category;
  j["max_instances_per_image"] = spec.max_instances_per_image;
  j["grid"] = {spec.grid_h, spec.grid_w, spec.grid_c};
  j["rare_threshold"] = spec.rare_threshold;
  j["seed"] = spec.seed;
  std::ofstream(path) << j.dump(1) << "\n";
}

void write_default_dataset_spec(const std::string& path) {
  write_dataset_spec(path, data::DatasetSpec{});
}

void write_default_experiment_config(const std::string& path) {
  const exp::ExperimentConfig cfg;
  json j;
  j["mode"] = exp::mode_name(cfg.mode);
  j["rho"] = cfg.rho;
  j["rho_grid"] = cfg.rho_grid;
  j["seeds"] = cfg.seeds;
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
  j["jobs"] = cfg.jobs;
  j["model"] = {{"num_queries", cfg.model.num_queries},
                {"query_dim", cfg.model.query_dim},
                {"encoder_layers", cfg.model.encoder_layers},
                {"decoder_layers", cfg.model.decoder_layers},
                {"attention_heads", cfg.model.attention_heads}};
  std::ofstream(path) << j.dump(1) << "\n";
}

}  // namespace hoi
