#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hoi/data.hpp"
#include "testutil.hpp"

using namespace hoi;
using namespace hoi::data;

namespace {

DatasetSpec small_spec() {
  DatasetSpec spec;
  spec.train_images = 30;
  spec.test_images = 8;
  spec.test_min_per_category = 1;
  spec.seed = 7;
  return spec;
}

std::string scenes_string(const std::vector<Scene>& scenes) {
  const std::string path = "scenes_tmp_determinism.txt";
  save_scenes(path, scenes);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::remove(path.c_str());
  return ss.str();
}

}  // namespace

TEST_CASE("sector predicate hand cases") {
  Box human{0.5, 0.5, 0.2, 0.2};
  CHECK(sector_of(human, Box{0.7, 0.5, 0.1, 0.1}, 5) == 0);   // angle 0
  CHECK(sector_of(human, Box{0.5, 0.7, 0.1, 0.1}, 5) == 1);   // angle pi/2 -> 0.25 of the circle
  CHECK(sector_of(human, Box{0.3, 0.5, 0.1, 0.1}, 5) == 2);   // angle pi
  CHECK(sector_of(human, Box{0.5, 0.3, 0.1, 0.1}, 5) == 3);   // angle 3pi/2 -> 0.75
  CHECK(sector_of(human, Box{0.7, 0.49999, 0.1, 0.1}, 5) == 4);
}

TEST_CASE("feasibility table has the exact density and per-object coverage") {
  DatasetSpec spec;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto table = build_feasibility_table(spec, Rng(seed));
    CHECK(table.num_categories() == 15);  // round(0.5 * 30)
    for (int o = 0; o < spec.num_objects; ++o) {
      bool any = false;
      for (int a = 0; a < spec.num_actions; ++a) any = any || table.is_feasible(o, a);
      CHECK(any);
    }
  }
}

TEST_CASE("zipf rank order interleaves objects") {
  auto table = build_feasibility_table(DatasetSpec{}, Rng(3));
  auto order = zipf_rank_order(table);
  CHECK(static_cast<int>(order.size()) == table.num_categories());
  // a permutation of the ids
  std::vector<int> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < static_cast<int>(sorted.size()); ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  // the first round visits distinct objects
  std::vector<char> seen(6, 0);
  for (int i = 0; i < 6 && i < static_cast<int>(order.size()); ++i) {
    const int o = table.categories[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].first;
    CHECK_FALSE(seen[static_cast<std::size_t>(o)]);
    seen[static_cast<std::size_t>(o)] = 1;
  }
}

TEST_CASE("scene generation is deterministic from the seed") {
  DatasetSpec spec = small_spec();
  auto table = build_feasibility_table(spec, Rng(1));
  Scene a = generate_scene(spec, table, 5, Rng(99));
  Scene b = generate_scene(spec, table, 5, Rng(99));
  CHECK(scenes_string({a}) == scenes_string({b}));
}

TEST_CASE("every generated (object, verb) pair is feasible and geometric") {
  DatasetSpec spec = small_spec();
  auto table = build_feasibility_table(spec, Rng(2));
  for (int id = 0; id < 50; ++id) {
    Scene scene = generate_scene(spec, table, id, Rng(1000 + static_cast<std::uint64_t>(id)));
    CHECK(scene.gt_refs.size() >= 1);
    for (const auto& ref : scene.gt_refs) {
      const int object_class = scene.object_classes[static_cast<std::size_t>(ref.object_index)];
      int positives = 0;
      for (int a = 0; a < spec.num_actions; ++a) {
        if (!ref.actions[static_cast<std::size_t>(a)]) continue;
        ++positives;
        CHECK(table.is_feasible(object_class, a));
        // the verb is exactly the sector geometry of the layout
        CHECK(sector_of(scene.humans[static_cast<std::size_t>(ref.human_index)],
                        scene.objects[static_cast<std::size_t>(ref.object_index)],
                        spec.num_actions) == a);
      }
      CHECK(positives >= 1);
    }
  }
}

TEST_CASE("zipf exponent zero gives uniform category frequencies (chi-square)") {
  DatasetSpec spec;
  spec.zipf_exponent = 0.0;
  auto table = build_feasibility_table(spec, Rng(4));
  const int k = table.num_categories();

  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  int total = 0;
  int image_id = 0;
  while (total < 10000) {
    Scene scene = generate_scene(spec, table, image_id, Rng(50 + static_cast<std::uint64_t>(image_id)));
    ++image_id;
    for (const auto& ref : scene.gt_refs) {
      const int object_class = scene.object_classes[static_cast<std::size_t>(ref.object_index)];
      for (int a = 0; a < spec.num_actions; ++a) {
        if (ref.actions[static_cast<std::size_t>(a)]) {
          ++counts[static_cast<std::size_t>(table.category(object_class, a))];
          ++total;
        }
      }
    }
  }
  const double expected = static_cast<double>(total) / k;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // mean k-1, variance 2(k-1): stay within 3 sigma
  const double bound = (k - 1) + 3.0 * std::sqrt(2.0 * (k - 1));
  CHECK(chi2 < bound);
}

TEST_CASE("zipf targeting: empirical rank curve tracks the target (Spearman > 0.9)") {
  DatasetSpec spec;  // defaults: exponent 1.5
  spec.train_images = 600;
  Dataset ds = build_dataset(spec);
  const auto order = zipf_rank_order(ds.table);
  const int k = ds.table.num_categories();

  // empirical rank of each category by descending train count (ties by id)
  std::vector<int> ids(static_cast<std::size_t>(k));
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    return ds.census.train_counts[static_cast<std::size_t>(a)] >
           ds.census.train_counts[static_cast<std::size_t>(b)];
  });
  std::vector<double> empirical_rank(static_cast<std::size_t>(k));
  for (int r = 0; r < k; ++r) empirical_rank[static_cast<std::size_t>(ids[static_cast<std::size_t>(r)])] = r;
  std::vector<double> target_rank(static_cast<std::size_t>(k));
  for (int r = 0; r < k; ++r) target_rank[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;

  double num = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = empirical_rank[static_cast<std::size_t>(i)] - target_rank[static_cast<std::size_t>(i)];
    num += d * d;
  }
  const double spearman = 1.0 - 6.0 * num / (static_cast<double>(k) * (k * k - 1.0));
  CHECK(spearman > 0.9);
}

TEST_CASE("default spec yields a long tail: at least 20% rare categories") {
  Dataset ds = build_dataset(DatasetSpec{});
  const int k = ds.table.num_categories();
  CHECK(ds.census.rare_count() * 5 >= k);  // >= 20%
  CHECK(ds.census.rare_count() < k);       // and not everything
}

TEST_CASE("rasterization: empty and single-entity scenes") {
  Scene empty;
  empty.image_id = 0;
  Tensor grid = rasterize(empty, 6, 6, 32);
  for (double v : grid.values()) CHECK(v == 0.0);

  Scene one;
  one.image_id = 1;
  one.humans.push_back({0.51, 0.51, 0.2, 0.2});
  one.objects.push_back({0.2, 0.2, 0.2, 0.2});
  one.object_classes.push_back(3);
  Scene::GtRef ref;
  ref.human_index = 0;
  ref.object_index = 0;
  ref.actions = {0, 1, 0, 0, 0};
  one.gt_refs.push_back(ref);

  Tensor g = rasterize(one, 6, 6, 32);
  // human center (0.51, 0.51) lands in cell row 3, col 3
  const auto at = [&](int row, int col, int ch) {
    return g.values()[(static_cast<std::size_t>(row) * 6 + col) * 32 + ch];
  };
  CHECK(at(3, 3, 0) == 1.0);
  CHECK(at(1, 1, 6) == 1.0);       // object presence
  CHECK(at(1, 1, 11 + 3) == 1.0);  // class one-hot
}

TEST_CASE("recoverability probe: centers within one cell, actions decodable at 100%") {
  DatasetSpec spec = small_spec();
  auto table = build_feasibility_table(spec, Rng(5));
  int checked = 0;
  for (int id = 0; id < 1000; ++id) {
    Scene scene = generate_scene(spec, table, id, Rng(9000 + static_cast<std::uint64_t>(id)));
    Tensor grid = rasterize(scene, spec.grid_h, spec.grid_w, spec.grid_c);
    const auto at = [&](int row, int col, int ch) {
      return grid.values()[(static_cast<std::size_t>(row) * spec.grid_w + col) * spec.grid_c + ch];
    };

    // decode entities from the raster alone
    struct Found {
      double cx, cy, w, h, pair_id;
      int object_class;
    };
    std::vector<Found> humans, objects;
    for (int r = 0; r < spec.grid_h; ++r) {
      for (int c = 0; c < spec.grid_w; ++c) {
        if (at(r, c, 0) == 1.0) {
          humans.push_back({(c + at(r, c, 1)) / spec.grid_w, (r + at(r, c, 2)) / spec.grid_h,
                            at(r, c, 3), at(r, c, 4), at(r, c, 5), -1});
        }
        if (at(r, c, 6) == 1.0) {
          int cls = -1;
          for (int o = 0; o < spec.num_objects; ++o) {
            if (at(r, c, 11 + o) == 1.0) cls = o;
          }
          objects.push_back({(c + at(r, c, 7)) / spec.grid_w, (r + at(r, c, 8)) / spec.grid_h,
                             at(r, c, 9), at(r, c, 10), at(r, c, 5), cls});
        }
      }
    }
    REQUIRE(humans.size() == scene.gt_refs.size());
    REQUIRE(objects.size() == scene.gt_refs.size());

    for (const auto& ref : scene.gt_refs) {
      const Box& hb = scene.humans[static_cast<std::size_t>(ref.human_index)];
      const Box& ob = scene.objects[static_cast<std::size_t>(ref.object_index)];
      // nearest decoded human within one cell
      const Found* best = nullptr;
      for (const auto& f : humans) {
        if (std::fabs(f.cx - hb.cx) < 1.0 / spec.grid_w && std::fabs(f.cy - hb.cy) < 1.0 / spec.grid_h) {
          best = &f;
        }
      }
      REQUIRE(best != nullptr);
      // pair the object via the shared pairing channel, then decode the verb
      const Found* paired = nullptr;
      for (const auto& f : objects) {
        if (f.pair_id == best->pair_id) paired = &f;
      }
      REQUIRE(paired != nullptr);
      CHECK(paired->object_class == scene.object_classes[static_cast<std::size_t>(ref.object_index)]);
      CHECK(std::fabs(paired->cx - ob.cx) < 1e-9);
      const int decoded_action =
          sector_of(Box{best->cx, best->cy, best->w, best->h},
                    Box{paired->cx, paired->cy, paired->w, paired->h}, spec.num_actions);
      CHECK(ref.actions[static_cast<std::size_t>(decoded_action)] == 1);
      ++checked;
    }
  }
  CHECK(checked >= 1000);
}

TEST_CASE("dataset build: determinism, split hygiene, stratification") {
  DatasetSpec spec = small_spec();
  Dataset a = build_dataset(spec);
  Dataset b = build_dataset(spec);
  CHECK(scenes_string(a.train) == scenes_string(b.train));
  CHECK(scenes_string(a.test) == scenes_string(b.test));

  // disjoint image ids
  std::set<int> train_ids, test_ids;
  for (const auto& s : a.train) train_ids.insert(s.image_id);
  for (const auto& s : a.test) test_ids.insert(s.image_id);
  CHECK(train_ids.size() == a.train.size());
  CHECK(test_ids.size() == a.test.size());
  for (int id : test_ids) CHECK_FALSE(train_ids.count(id));

  // every category reaches the stratification floor in the test split
  std::vector<int> test_counts(static_cast<std::size_t>(a.table.num_categories()), 0);
  for (const auto& s : a.test) {
    for (const auto& ref : s.gt_refs) {
      const int cls = s.object_classes[static_cast<std::size_t>(ref.object_index)];
      for (int act = 0; act < a.table.num_actions; ++act) {
        if (ref.actions[static_cast<std::size_t>(act)]) {
          ++test_counts[static_cast<std::size_t>(a.table.category(cls, act))];
        }
      }
    }
  }
  for (int c : test_counts) CHECK(c >= spec.test_min_per_category);
}

TEST_CASE("census recount oracle and degenerate threshold") {
  DatasetSpec spec = small_spec();
  Dataset ds = build_dataset(spec);

  std::vector<int> recount(static_cast<std::size_t>(ds.table.num_categories()), 0);
  for (const auto& s : ds.train) {
    for (const auto& ref : s.gt_refs) {
      const int cls = s.object_classes[static_cast<std::size_t>(ref.object_index)];
      for (int a = 0; a < ds.table.num_actions; ++a) {
        if (ref.actions[static_cast<std::size_t>(a)]) {
          ++recount[static_cast<std::size_t>(ds.table.category(cls, a))];
        }
      }
    }
  }
  CHECK(recount == ds.census.train_counts);

  CategoryCensus all_rare = build_census(ds.train, ds.table,
                                         std::numeric_limits<double>::infinity());
  CHECK(all_rare.rare_count() == ds.table.num_categories());
}

TEST_CASE("scene file round-trip is bit-exact; truncation is atomic") {
  DatasetSpec spec = small_spec();
  auto table = build_feasibility_table(spec, Rng(6));
  std::vector<Scene> scenes;
  for (int id = 0; id < 100; ++id) {
    scenes.push_back(generate_scene(spec, table, id, Rng(70000 + static_cast<std::uint64_t>(id))));
  }
  const std::string path = "scenes_roundtrip_test.txt";
  save_scenes(path, scenes);
  std::vector<Scene> loaded = load_scenes(path);
  REQUIRE(loaded.size() == scenes.size());
  CHECK(scenes_string(loaded) == scenes_string(scenes));

  // empty dataset round-trips
  save_scenes(path, {});
  CHECK(load_scenes(path).empty());

  // drop the last line: parse must fail, nothing partial returned
  save_scenes(path, scenes);
  std::ifstream in(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  in.close();
  std::ofstream out(path);
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) out << lines[i] << "\n";
  out.close();
  CHECK_THROWS_AS(load_scenes(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("grid channel validation") {
  DatasetSpec spec;
  spec.grid_c = 12;  // needs 11 + num_objects
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}
