#include "hoi/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace hoi::data {

using namespace hoi::ad;

void DatasetSpec::validate() const {
  if (num_objects <= 0 || num_actions <= 0) {
    throw ConfigError("dataset: class counts must be positive");
  }
  if (feasibility_density <= 0.0 || feasibility_density > 1.0) {
    throw ConfigError("dataset: feasibility_density must lie in (0,1]");
  }
  if (zipf_exponent < 0.0) throw ConfigError("dataset: zipf_exponent must be non-negative");
  if (train_images <= 0 || test_images < 0 || test_min_per_category < 0) {
    throw ConfigError("dataset: split sizes must be non-negative (train positive)");
  }
  if (max_instances_per_image <= 0) {
    throw ConfigError("dataset: max_instances_per_image must be positive");
  }
  if (grid_h <= 0 || grid_w <= 0) throw ConfigError("dataset: grid extents must be positive");
  if (grid_c < min_grid_channels(num_objects)) {
    throw ConfigError("dataset: grid needs at least " +
                      std::to_string(min_grid_channels(num_objects)) + " channels");
  }
  if (rare_threshold < 0.0) throw ConfigError("dataset: rare_threshold must be non-negative");
}

GroundTruthSet Scene::ground_truth() const {
  GroundTruthSet gts;
  gts.instances.reserve(gt_refs.size());
  for (const auto& ref : gt_refs) {
    GtInstance inst;
    inst.human_box = humans[static_cast<std::size_t>(ref.human_index)];
    inst.object_box = objects[static_cast<std::size_t>(ref.object_index)];
    inst.object_class = object_classes[static_cast<std::size_t>(ref.object_index)];
    inst.actions = ref.actions;
    gts.instances.push_back(std::move(inst));
  }
  return gts;
}

int CategoryCensus::rare_count() const {
  int n = 0;
  for (auto r : is_rare) n += r ? 1 : 0;
  return n;
}

int CategoryCensus::nonrare_count() const {
  return static_cast<int>(is_rare.size()) - rare_count();
}

int sector_of(const Box& human, const Box& object, int num_actions) {
  const double dx = object.cx - human.cx;
  const double dy = object.cy - human.cy;
  double angle = std::atan2(dy, dx);
  if (angle < 0.0) angle += 2.0 * M_PI;
  int k = static_cast<int>(angle / (2.0 * M_PI) * num_actions);
  return std::min(k, num_actions - 1);
}

compo::FeasibilityTable build_feasibility_table(const DatasetSpec& spec, Rng rng) {
  const int no = spec.num_objects, na = spec.num_actions;
  const int want = std::max(
      no, static_cast<int>(std::lround(spec.feasibility_density * no * na)));

  std::vector<std::uint8_t> bits(static_cast<std::size_t>(no * na), 0);
  // one guaranteed action per object
  for (int o = 0; o < no; ++o) {
    const int a = rng.uniform_int(0, na - 1);
    bits[static_cast<std::size_t>(o) * na + a] = 1;
  }
  // fill the remainder from the unused pairs
  std::vector<int> rest;
  for (int i = 0; i < no * na; ++i) {
    if (!bits[static_cast<std::size_t>(i)]) rest.push_back(i);
  }
  rng.shuffle(rest);
  for (int k = 0; k < want - no && k < static_cast<int>(rest.size()); ++k) {
    bits[static_cast<std::size_t>(rest[static_cast<std::size_t>(k)])] = 1;
  }

  std::vector<std::string> object_names, action_names;
  for (int o = 0; o < no; ++o) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "obj%02d", o);
    object_names.emplace_back(buf);
  }
  for (int a = 0; a < na; ++a) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "act%02d", a);
    action_names.emplace_back(buf);
  }
  return compo::FeasibilityTable::build(no, na, std::move(object_names), std::move(action_names),
                                        std::move(bits));
}

std::vector<int> zipf_rank_order(const compo::FeasibilityTable& table) {
  // per-object category lists, action-ascending
  std::vector<std::vector<int>> per_object(static_cast<std::size_t>(table.num_objects));
  for (int id = 0; id < table.num_categories(); ++id) {
    per_object[static_cast<std::size_t>(table.categories[static_cast<std::size_t>(id)].first)]
        .push_back(id);
  }
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(table.num_categories()));
  std::size_t round = 0;
  while (order.size() < static_cast<std::size_t>(table.num_categories())) {
    for (int o = 0; o < table.num_objects; ++o) {
      const auto& list =
          per_object[static_cast<std::size_t>((o + static_cast<int>(round)) % table.num_objects)];
      if (round < list.size()) order.push_back(list[round]);
    }
    ++round;
  }
  return order;
}

namespace {

constexpr double kMinBoxSize = 0.2;
constexpr double kMaxBoxSize = 0.4;
constexpr double kMinCenter = 0.22;
constexpr double kMaxCenter = 0.78;
constexpr double kMinPairDist = 0.15;
constexpr double kMaxPairDist = 0.45;
constexpr double kMaxEntityIou = 0.7;
constexpr int kPlacementBudget = 4000;

double plain_iou(const Box& a, const Box& b) {
  const double ix1 = std::max(a.x1(), b.x1());
  const double iy1 = std::max(a.y1(), b.y1());
  const double ix2 = std::min(a.x2(), b.x2());
  const double iy2 = std::min(a.y2(), b.y2());
  const double iw = std::max(0.0, ix2 - ix1);
  const double ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

int cell_of(const Box& b, int grid_h, int grid_w) {
  const int col = std::min(static_cast<int>(b.cx * grid_w), grid_w - 1);
  const int row = std::min(static_cast<int>(b.cy * grid_h), grid_h - 1);
  return row * grid_w + col;
}

// Zipf weights over ranks 1..n (uniform at exponent 0).
std::vector<double> zipf_weights(int n, double exponent) {
  std::vector<double> w(static_cast<std::size_t>(n));
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    w[static_cast<std::size_t>(r)] = std::pow(static_cast<double>(r + 1), -exponent);
    total += w[static_cast<std::size_t>(r)];
  }
  for (double& v : w) v /= total;
  return w;
}

int draw_index(const std::vector<double>& weights, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace

Scene generate_scene(const DatasetSpec& spec, const compo::FeasibilityTable& table, int image_id,
                     Rng rng, const std::vector<int>& forced_categories) {
  Scene scene;
  scene.image_id = image_id;

  std::vector<int> categories = forced_categories;
  if (categories.empty()) {
    // instance count skewed toward small scenes: P(k) proportional to 2^-(k-1)
    std::vector<double> count_weights(static_cast<std::size_t>(spec.max_instances_per_image));
    for (std::size_t i = 0; i < count_weights.size(); ++i) count_weights[i] = std::pow(0.5, static_cast<double>(i));
    double total = 0.0;
    for (double w : count_weights) total += w;
    for (double& w : count_weights) w /= total;
    const int n_instances = draw_index(count_weights, rng) + 1;

    const std::vector<int> rank_order = zipf_rank_order(table);
    const std::vector<double> weights = zipf_weights(table.num_categories(), spec.zipf_exponent);
    for (int k = 0; k < n_instances; ++k) {
      categories.push_back(rank_order[static_cast<std::size_t>(draw_index(weights, rng))]);
    }
  }

  const double sector_span = 2.0 * M_PI / spec.num_actions;
  std::vector<int> used_cells;

  for (int cat : categories) {
    const auto& [object_class, action] = table.categories[static_cast<std::size_t>(cat)];
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementBudget && !placed; ++attempt) {
      Box human{rng.uniform(kMinCenter, kMaxCenter), rng.uniform(kMinCenter, kMaxCenter),
                rng.uniform(kMinBoxSize, kMaxBoxSize), rng.uniform(kMinBoxSize, kMaxBoxSize)};
      // angle drawn from the middle 80% of the verb's sector
      const double theta =
          (action + rng.uniform(0.1, 0.9)) * sector_span;
      const double dist = rng.uniform(kMinPairDist, kMaxPairDist);
      Box object{human.cx + dist * std::cos(theta), human.cy + dist * std::sin(theta),
                 rng.uniform(kMinBoxSize, kMaxBoxSize), rng.uniform(kMinBoxSize, kMaxBoxSize)};
      if (object.cx < kMinCenter || object.cx > kMaxCenter || object.cy < kMinCenter ||
          object.cy > kMaxCenter) {
        continue;
      }

      // distinct raster cells keep the feature map injective
      const int hc = cell_of(human, spec.grid_h, spec.grid_w);
      const int oc = cell_of(object, spec.grid_h, spec.grid_w);
      if (hc == oc) continue;
      bool clash = false;
      for (int c : used_cells) clash = clash || c == hc || c == oc;
      if (clash) continue;
      for (const Box& b : scene.humans) clash = clash || plain_iou(b, human) > kMaxEntityIou;
      for (const Box& b : scene.objects) clash = clash || plain_iou(b, object) > kMaxEntityIou;
      if (clash) continue;

      // the layout must induce exactly the drawn verb
      if (sector_of(human, object, spec.num_actions) != action) continue;

      used_cells.push_back(hc);
      used_cells.push_back(oc);
      scene.humans.push_back(human);
      scene.objects.push_back(object);
      scene.object_classes.push_back(object_class);
      Scene::GtRef ref;
      ref.human_index = static_cast<int>(scene.humans.size()) - 1;
      ref.object_index = static_cast<int>(scene.objects.size()) - 1;
      ref.actions.assign(static_cast<std::size_t>(spec.num_actions), 0);
      ref.actions[static_cast<std::size_t>(action)] = 1;
      scene.gt_refs.push_back(std::move(ref));
      placed = true;
    }
    if (!placed) {
      throw GenerationError("scene " + std::to_string(image_id) + ": placement budget of " +
                            std::to_string(kPlacementBudget) + " tries exceeded for category " +
                            std::to_string(cat) + " with " +
                            std::to_string(scene.gt_refs.size()) + " instances placed");
    }
  }
  return scene;
}

int min_grid_channels(int num_objects) { return 11 + num_objects; }

Tensor rasterize(const Scene& scene, int grid_h, int grid_w, int grid_c) {
  // channel layout:
  //  0 human presence | 1,2 human center offsets | 3,4 human box size
  //  5 pairing id (shared by both roles)
  //  6 object presence | 7,8 object center offsets | 9,10 object box size
  //  11.. object class one-hot
  Tensor grid = Tensor::zeros({grid_h, grid_w, grid_c});
  auto& v = grid.values();
  auto at = [&](int row, int col, int ch) -> double& {
    return v[(static_cast<std::size_t>(row) * grid_w + col) * grid_c + ch];
  };
  auto cell = [&](const Box& b, int& row, int& col, double& dx, double& dy) {
    col = std::min(static_cast<int>(b.cx * grid_w), grid_w - 1);
    row = std::min(static_cast<int>(b.cy * grid_h), grid_h - 1);
    dx = b.cx * grid_w - col;
    dy = b.cy * grid_h - row;
  };

  const int max_inst = std::max<std::size_t>(scene.gt_refs.size(), 1);
  for (std::size_t g = 0; g < scene.gt_refs.size(); ++g) {
    const auto& ref = scene.gt_refs[g];
    const double pair_id = static_cast<double>(g + 1) / max_inst;

    const Box& hb = scene.humans[static_cast<std::size_t>(ref.human_index)];
    int row, col;
    double dx, dy;
    cell(hb, row, col, dx, dy);
    at(row, col, 0) = 1.0;
    at(row, col, 1) = dx;
    at(row, col, 2) = dy;
    at(row, col, 3) = hb.w;
    at(row, col, 4) = hb.h;
    at(row, col, 5) = pair_id;

    const Box& ob = scene.objects[static_cast<std::size_t>(ref.object_index)];
    cell(ob, row, col, dx, dy);
    at(row, col, 6) = 1.0;
    at(row, col, 7) = dx;
    at(row, col, 8) = dy;
    at(row, col, 9) = ob.w;
    at(row, col, 10) = ob.h;
    at(row, col, 5) = pair_id;
    at(row, col, 11 + scene.object_classes[static_cast<std::size_t>(ref.object_index)]) = 1.0;
  }
  return grid;
}

CategoryCensus build_census(const std::vector<Scene>& train, const compo::FeasibilityTable& table,
                            double rare_threshold) {
  CategoryCensus census;
  census.rare_threshold = rare_threshold;
  census.train_counts.assign(static_cast<std::size_t>(table.num_categories()), 0);
  for (const auto& scene : train) {
    for (const auto& ref : scene.gt_refs) {
      const int object_class = scene.object_classes[static_cast<std::size_t>(ref.object_index)];
      for (int a = 0; a < table.num_actions; ++a) {
        if (!ref.actions[static_cast<std::size_t>(a)]) continue;
        const int cat = table.category(object_class, a);
        if (cat >= 0) ++census.train_counts[static_cast<std::size_t>(cat)];
      }
    }
  }
  census.is_rare.resize(census.train_counts.size());
  for (std::size_t i = 0; i < census.train_counts.size(); ++i) {
    census.is_rare[i] = census.train_counts[i] < rare_threshold ? 1 : 0;
  }
  return census;
}

Dataset build_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  Rng root(spec.seed);
  ds.table = build_feasibility_table(spec, root.split(0));

  for (int id = 0; id < spec.train_images; ++id) {
    ds.train.push_back(generate_scene(spec, ds.table, id, root.split(1000 + static_cast<std::uint64_t>(id))));
  }

  // test split: guaranteed per-category coverage first, then free draws
  std::vector<int> pending;
  for (int id = 0; id < ds.table.num_categories(); ++id) {
    for (int k = 0; k < spec.test_min_per_category; ++k) pending.push_back(id);
  }
  Rng strat = root.split(2);
  strat.shuffle(pending);

  int test_id = spec.train_images;  // image ids stay globally unique
  std::size_t cursor = 0;
  while (cursor < pending.size() || static_cast<int>(ds.test.size()) < spec.test_images) {
    Rng scene_rng = root.split(500000 + static_cast<std::uint64_t>(test_id));
    if (cursor < pending.size()) {
      const int take = std::min<std::size_t>(
          static_cast<std::size_t>(scene_rng.uniform_int(1, spec.max_instances_per_image)),
          pending.size() - cursor);
      std::vector<int> cats(pending.begin() + static_cast<std::ptrdiff_t>(cursor),
                            pending.begin() + static_cast<std::ptrdiff_t>(cursor + take));
      ds.test.push_back(generate_scene(spec, ds.table, test_id, scene_rng, cats));
      cursor += take;
    } else {
      ds.test.push_back(generate_scene(spec, ds.table, test_id, scene_rng));
    }
    ++test_id;
  }

  ds.census = build_census(ds.train, ds.table, spec.rare_threshold);
  return ds;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

void save_scenes(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open scene file for writing: " + path);
  out << "hoic-scenes v1\n";
  out << "count " << scenes.size() << "\n";
  for (const auto& s : scenes) {
    out << "scene " << s.image_id << " H " << s.humans.size();
    for (const auto& b : s.humans) {
      out << " " << fmt_hex(b.cx) << " " << fmt_hex(b.cy) << " " << fmt_hex(b.w) << " "
          << fmt_hex(b.h);
    }
    out << " O " << s.objects.size();
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const auto& b = s.objects[i];
      out << " " << s.object_classes[i] << " " << fmt_hex(b.cx) << " " << fmt_hex(b.cy) << " "
          << fmt_hex(b.w) << " " << fmt_hex(b.h);
    }
    out << " G " << s.gt_refs.size();
    for (const auto& ref : s.gt_refs) {
      out << " " << ref.human_index << " " << ref.object_index << " ";
      for (auto a : ref.actions) out << (a ? '1' : '0');
    }
    out << "\n";
  }
  if (!out) throw ConfigError("scene file write failed: " + path);
}

namespace {

std::string next_token(std::istringstream& s, const std::string& path, int line_no) {
  std::string tok;
  if (!(s >> tok)) {
    throw ParseError(path + ":" + std::to_string(line_no) + ": unexpected end of line");
  }
  return tok;
}

}  // namespace

std::vector<Scene> load_scenes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scene file: " + path);
  std::string line;
  int line_no = 1;
  if (!std::getline(in, line) || line != "hoic-scenes v1") {
    throw ParseError(path + ":1: bad scene file header");
  }
  ++line_no;
  if (!std::getline(in, line)) throw ParseError(path + ":2: missing count line");
  std::size_t count = 0;
  {
    std::istringstream s(line);
    std::string tok;
    s >> tok >> count;
    if (tok != "count") throw ParseError(path + ":2: bad count line");
  }

  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    ++line_no;
    if (!std::getline(in, line)) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": truncated file, expected " +
                       std::to_string(count) + " scenes, got " + std::to_string(k));
    }
    std::istringstream s(line);
    Scene scene;
    if (next_token(s, path, line_no) != "scene") {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected scene record");
    }
    scene.image_id = static_cast<int>(parse_int(next_token(s, path, line_no)));
    if (next_token(s, path, line_no) != "H") {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected human section");
    }
    const auto n_humans = parse_int(next_token(s, path, line_no));
    for (std::int64_t i = 0; i < n_humans; ++i) {
      Box b;
      b.cx = parse_double(next_token(s, path, line_no));
      b.cy = parse_double(next_token(s, path, line_no));
      b.w = parse_double(next_token(s, path, line_no));
      b.h = parse_double(next_token(s, path, line_no));
      scene.humans.push_back(b);
    }
    if (next_token(s, path, line_no) != "O") {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected object section");
    }
    const auto n_objects = parse_int(next_token(s, path, line_no));
    for (std::int64_t i = 0; i < n_objects; ++i) {
      scene.object_classes.push_back(static_cast<int>(parse_int(next_token(s, path, line_no))));
      Box b;
      b.cx = parse_double(next_token(s, path, line_no));
      b.cy = parse_double(next_token(s, path, line_no));
      b.w = parse_double(next_token(s, path, line_no));
      b.h = parse_double(next_token(s, path, line_no));
      scene.objects.push_back(b);
    }
    if (next_token(s, path, line_no) != "G") {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected ground-truth section");
    }
    const auto n_gts = parse_int(next_token(s, path, line_no));
    for (std::int64_t i = 0; i < n_gts; ++i) {
      Scene::GtRef ref;
      ref.human_index = static_cast<int>(parse_int(next_token(s, path, line_no)));
      ref.object_index = static_cast<int>(parse_int(next_token(s, path, line_no)));
      const std::string bits = next_token(s, path, line_no);
      for (char c : bits) {
        if (c != '0' && c != '1') {
          throw ParseError(path + ":" + std::to_string(line_no) + ": bad action bitstring");
        }
        ref.actions.push_back(c == '1' ? 1 : 0);
      }
      if (ref.human_index < 0 || ref.human_index >= static_cast<int>(scene.humans.size()) ||
          ref.object_index < 0 || ref.object_index >= static_cast<int>(scene.objects.size())) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": ground truth references a missing entity");
      }
      scene.gt_refs.push_back(std::move(ref));
    }
    std::string extra;
    if (s >> extra) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": trailing tokens");
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

void save_census_csv(const std::string& path, const CategoryCensus& census,
                     const compo::FeasibilityTable& table) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open census file for writing: " + path);
  out << "category_id,object,action,train_count,rare\n";
  for (int id = 0; id < table.num_categories(); ++id) {
    const auto& [o, a] = table.categories[static_cast<std::size_t>(id)];
    out << id << "," << table.object_names[static_cast<std::size_t>(o)] << ","
        << table.action_names[static_cast<std::size_t>(a)] << ","
        << census.train_counts[static_cast<std::size_t>(id)] << ","
        << (census.is_rare[static_cast<std::size_t>(id)] ? 1 : 0) << "\n";
  }
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  save_scenes(dir + "/train.scenes", ds.train);
  save_scenes(dir + "/test.scenes", ds.test);
  compo::save_table(dir + "/feasibility.table", ds.table);
  save_census_csv(dir + "/census.csv", ds.census, ds.table);
}

Dataset load_dataset(const std::string& dir, const DatasetSpec& spec) {
  Dataset ds;
  ds.spec = spec;
  ds.table = compo::load_table(dir + "/feasibility.table");
  ds.train = load_scenes(dir + "/train.scenes");
  ds.test = load_scenes(dir + "/test.scenes");
  ds.census = build_census(ds.train, ds.table, spec.rare_threshold);
  return ds;
}

}  // namespace hoi::data
