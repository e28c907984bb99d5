#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "hoi/model.hpp"
#include "hoi/recompose.hpp"
#include "testutil.hpp"

using namespace hoi;
using namespace hoi::ad;
using namespace hoi::compo;
using testutil::random_tensor;

namespace {

FeasibilityTable demo_table() {
  // 3 objects x 4 actions; object 2 only allows action 0
  std::vector<std::uint8_t> bits{
      1, 1, 0, 1,  // cup
      1, 0, 1, 1,  // couch
      1, 0, 0, 0,  // kite
  };
  return FeasibilityTable::build(3, 4, {"cup", "couch", "kite"},
                                 {"hold", "wear", "fly", "near"}, bits);
}

GtInstance make_gt(int object_class, std::vector<std::uint8_t> actions, double cx = 0.4) {
  GtInstance gt;
  gt.human_box = {cx, 0.4, 0.2, 0.2};
  gt.object_box = {cx + 0.2, 0.5, 0.2, 0.2};
  gt.object_class = object_class;
  gt.actions = std::move(actions);
  return gt;
}

MatchedImage random_image(int image_id, int n_gt, int c, int n_objects, int n_actions, Rng& rng,
                          bool leaf_reps = false) {
  MatchedImage mi;
  mi.image_id = image_id;
  mi.ho_rows = random_tensor({n_gt, c}, rng, -1, 1, leaf_reps);
  mi.int_rows = random_tensor({n_gt, c}, rng, -1, 1, leaf_reps);
  mi.pred_human_boxes = Tensor::zeros({n_gt, 4});
  mi.pred_object_boxes = Tensor::zeros({n_gt, 4});
  for (int i = 0; i < n_gt; ++i) {
    for (int j = 0; j < 4; ++j) {
      mi.pred_human_boxes.values()[static_cast<std::size_t>(4 * i + j)] =
          j < 2 ? rng.uniform(0.3, 0.7) : rng.uniform(0.1, 0.3);
      mi.pred_object_boxes.values()[static_cast<std::size_t>(4 * i + j)] =
          j < 2 ? rng.uniform(0.3, 0.7) : rng.uniform(0.1, 0.3);
    }
  }
  mi.pred_object_logits = random_tensor({n_gt, n_objects + 1}, rng, -1, 1, false);
  for (int i = 0; i < n_gt; ++i) {
    std::vector<std::uint8_t> actions(static_cast<std::size_t>(n_actions), 0);
    actions[static_cast<std::size_t>(rng.uniform_int(0, n_actions - 1))] = 1;
    mi.gts.push_back(make_gt(rng.uniform_int(0, n_objects - 1), actions));
  }
  return mi;
}

}  // namespace

TEST_CASE("table build, category ids and round trip") {
  FeasibilityTable t = demo_table();
  CHECK(t.num_categories() == 8);
  CHECK(t.is_feasible(0, 0));
  CHECK_FALSE(t.is_feasible(1, 1));
  CHECK(t.category(0, 0) == 0);
  CHECK(t.category(0, 1) == 1);
  CHECK(t.category(1, 0) == 3);
  CHECK(t.category(2, 0) == 7);
  CHECK(t.category(2, 3) == -1);

  // bijective onto [0, N_hoi)
  std::vector<char> seen(static_cast<std::size_t>(t.num_categories()), 0);
  for (int o = 0; o < 3; ++o)
    for (int a = 0; a < 4; ++a) {
      const int id = t.category(o, a);
      if (id >= 0) {
        CHECK_FALSE(seen[static_cast<std::size_t>(id)]);
        seen[static_cast<std::size_t>(id)] = 1;
      }
    }
  for (char s : seen) CHECK(s);

  save_table("feas_roundtrip_test.txt", t);
  FeasibilityTable loaded = load_table("feas_roundtrip_test.txt");
  CHECK(loaded.num_objects == t.num_objects);
  CHECK(loaded.feasible == t.feasible);
  CHECK(loaded.categories == t.categories);
  CHECK(loaded.object_names == t.object_names);
  std::remove("feas_roundtrip_test.txt");

  CHECK_THROWS_AS(FeasibilityTable::build(2, 2, {"a", "b"}, {"x", "y"}, {1, 1, 0, 0}),
                  ConfigError);
}

TEST_CASE("cross_concat shape law and row layout") {
  Rng rng(3);
  Tensor rp = random_tensor({2, 32}, rng, -1, 1, false);
  Tensor ri = random_tensor({3, 32}, rng, -1, 1, false);
  Tensor x = cross_concat(rp, ri);
  CHECK(x.shape() == std::vector<int>{6, 64});
  for (int m = 0; m < 2; ++m)
    for (int k = 0; k < 3; ++k)
      for (int c = 0; c < 32; ++c) {
        CHECK(x.at(m * 3 + k, c) == rp.at(m, c));
        CHECK(x.at(m * 3 + k, 32 + c) == ri.at(k, c));
      }
}

TEST_CASE("1x1 self-composition equals the original concatenated row") {
  Rng rng(5);
  Tensor rp = random_tensor({1, 8}, rng, -1, 1, false);
  Tensor ri = random_tensor({1, 8}, rng, -1, 1, false);
  Tensor crossed = cross_concat(rp, ri);
  Tensor plain = concat({rp, ri}, 1);
  CHECK(crossed.values() == plain.values());
}

TEST_CASE("cross_concat gradient reaches exactly the two source rows") {
  Rng rng(7);
  Tensor rp = random_tensor({3, 4}, rng, -1, 1, true);
  Tensor ri = random_tensor({2, 4}, rng, -1, 1, true);
  Tensor x = cross_concat(rp, ri);  // rows (m, k): m*2 + k
  // loss touches only row (m=1, k=0) -> row index 2
  sum(gather_rows(x, {2})).backward();
  for (int m = 0; m < 3; ++m) {
    double g = 0.0;
    for (int c = 0; c < 4; ++c) g += std::fabs(rp.grad()[static_cast<std::size_t>(m * 4 + c)]);
    CHECK((g > 0.0) == (m == 1));
  }
  for (int k = 0; k < 2; ++k) {
    double g = 0.0;
    for (int c = 0; c < 4; ++c) g += std::fabs(ri.grad()[static_cast<std::size_t>(k * 4 + c)]);
    CHECK((g > 0.0) == (k == 0));
  }
}

TEST_CASE("label re-composition masks infeasible actions and keeps all-zero rows") {
  FeasibilityTable t = demo_table();

  // всё feasible for the receiving object -> row unchanged
  std::vector<GtInstance> src{make_gt(0, {1, 0, 0, 1})};
  std::vector<GtInstance> donor{make_gt(1, {1, 1, 0, 1})};
  RecomposedLabels full = recompose_labels(src, donor, t);
  CHECK(full.action_targets == std::vector<double>{1, 1, 0, 1});
  CHECK(full.kept == std::vector<std::uint8_t>{1});

  // "couch" x "wear": infeasible bit zeroed
  std::vector<GtInstance> couch{make_gt(1, {1, 0, 0, 0})};
  std::vector<GtInstance> wear_donor{make_gt(0, {0, 1, 0, 0})};
  RecomposedLabels masked = recompose_labels(couch, wear_donor, t);
  CHECK(masked.action_targets == std::vector<double>{0, 0, 0, 0});
  CHECK(masked.kept == std::vector<std::uint8_t>{1});  // all-zero row is kept

  // object with a single feasible verb against a donor with none of it
  std::vector<GtInstance> kite{make_gt(2, {1, 0, 0, 0})};
  std::vector<GtInstance> d2{make_gt(0, {0, 1, 0, 1})};
  RecomposedLabels zero = recompose_labels(kite, d2, t);
  CHECK(zero.action_targets == std::vector<double>{0, 0, 0, 0});
  CHECK(zero.kept.size() == 1);
}

TEST_CASE("batch row count follows the enumeration law") {
  CHECK(expected_recomposed_rows({2, 3}) == 20);
  CHECK(expected_recomposed_rows({1}) == 0);
  CHECK(expected_recomposed_rows({1, 1}) == 2);
  CHECK(expected_recomposed_rows({3}) == 6);

  FeasibilityTable t = demo_table();
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int n_images = rng.uniform_int(1, 2);
    std::vector<MatchedImage> images;
    std::vector<int> counts;
    for (int i = 0; i < n_images; ++i) {
      const int n_gt = rng.uniform_int(1, 4);
      counts.push_back(n_gt);
      images.push_back(random_image(i, n_gt, 4, 3, 4, rng));
    }
    RecomposedBatch batch = build_recomposed_batch(images, t);
    CHECK(batch.rows() == expected_recomposed_rows(counts));
    if (batch.rows() > 0) {
      CHECK(batch.features.shape() == std::vector<int>{batch.rows(), 8});
      CHECK(static_cast<int>(batch.action_targets.size()) == batch.rows() * 4);
    }

    // enumeration oracle for provenance: ordered pairs minus same-instance
    int direct = 0;
    for (int a = 0; a < n_images; ++a)
      for (int b = 0; b < n_images; ++b)
        for (int m = 0; m < counts[static_cast<std::size_t>(a)]; ++m)
          for (int k = 0; k < counts[static_cast<std::size_t>(b)]; ++k)
            if (!(a == b && m == k)) ++direct;
    CHECK(batch.rows() == direct);
  }
}

TEST_CASE("single image with a single instance composes nothing") {
  FeasibilityTable t = demo_table();
  Rng rng(13);
  std::vector<MatchedImage> images{random_image(0, 1, 4, 3, 4, rng)};
  RecomposedBatch batch = build_recomposed_batch(images, t);
  CHECK(batch.rows() == 0);
  CHECK_FALSE(batch.features.defined());
}

TEST_CASE("every positive re-composed label is feasible") {
  FeasibilityTable t = demo_table();
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<MatchedImage> images{random_image(0, rng.uniform_int(1, 4), 4, 3, 4, rng),
                                     random_image(1, rng.uniform_int(1, 4), 4, 3, 4, rng)};
    RecomposedBatch batch = build_recomposed_batch(images, t);
    for (int r = 0; r < batch.rows(); ++r) {
      for (int a = 0; a < t.num_actions; ++a) {
        if (batch.action_targets[static_cast<std::size_t>(r * t.num_actions + a)] == 1.0) {
          CHECK(t.is_feasible(batch.gt_object_classes[static_cast<std::size_t>(r)], a));
        }
      }
    }
  }
}

TEST_CASE("provenance never pairs an instance with itself") {
  FeasibilityTable t = demo_table();
  Rng rng(19);
  std::vector<MatchedImage> images{random_image(0, 3, 4, 3, 4, rng),
                                   random_image(1, 2, 4, 3, 4, rng)};
  RecomposedBatch batch = build_recomposed_batch(images, t);
  for (const auto& [p, i] : batch.provenance) {
    CHECK_FALSE(p == i);
  }
}

TEST_CASE("instance order permutation leaves the row multiset unchanged") {
  FeasibilityTable t = demo_table();
  Rng rng(23);
  std::vector<MatchedImage> images{random_image(0, 3, 4, 3, 4, rng),
                                   random_image(1, 2, 4, 3, 4, rng)};
  RecomposedBatch base = build_recomposed_batch(images, t);

  // permute the instances of image 0
  std::vector<int> perm{2, 0, 1};
  MatchedImage permuted = images[0];
  permuted.ho_rows = gather_rows(images[0].ho_rows, perm);
  permuted.int_rows = gather_rows(images[0].int_rows, perm);
  permuted.pred_human_boxes = gather_rows(images[0].pred_human_boxes, perm);
  permuted.pred_object_boxes = gather_rows(images[0].pred_object_boxes, perm);
  permuted.pred_object_logits = gather_rows(images[0].pred_object_logits, perm);
  permuted.gts.clear();
  for (int p : perm) permuted.gts.push_back(images[0].gts[static_cast<std::size_t>(p)]);

  RecomposedBatch moved = build_recomposed_batch({permuted, images[1]}, t);
  REQUIRE(moved.rows() == base.rows());

  auto row_key = [&](const RecomposedBatch& b, int r) {
    std::string key;
    for (int c = 0; c < b.features.dim(1); ++c) key += fmt_hex(b.features.at(r, c)) + "|";
    for (int a = 0; a < t.num_actions; ++a) {
      key += b.action_targets[static_cast<std::size_t>(r * t.num_actions + a)] == 1.0 ? '1' : '0';
    }
    return key;
  };
  std::multiset<std::string> base_rows, moved_rows;
  for (int r = 0; r < base.rows(); ++r) {
    base_rows.insert(row_key(base, r));
    moved_rows.insert(row_key(moved, r));
  }
  CHECK(base_rows == moved_rows);
}

TEST_CASE("detached features stop gradients into the representations") {
  FeasibilityTable t = demo_table();
  Rng rng(29);
  std::vector<MatchedImage> images{random_image(0, 2, 4, 3, 4, rng, true),
                                   random_image(1, 2, 4, 3, 4, rng, true)};
  RecomposedBatch batch = build_recomposed_batch(images, t, /*detach_features=*/true);
  CHECK_FALSE(batch.features.requires_grad());

  RecomposedBatch flowing = build_recomposed_batch(images, t, /*detach_features=*/false);
  CHECK(flowing.features.requires_grad());
}

TEST_CASE("self-composition identity: features and labels reproduce the original bit-for-bit") {
  FeasibilityTable t = demo_table();
  Rng rng(31);
  MatchedImage image = random_image(0, 1, 8, 3, 4, rng);
  // the instance's action must be feasible for its own object, as generated data guarantees
  image.gts[0].object_class = 0;
  image.gts[0].actions = {1, 0, 0, 1};

  RecomposedBatch batch = build_recomposed_batch({image}, t, false, /*include_self_pairs=*/true);
  REQUIRE(batch.rows() == 1);

  Tensor original_input = concat({image.ho_rows, image.int_rows}, 1);
  CHECK(batch.features.values() == original_input.values());
  CHECK(batch.action_targets == std::vector<double>{1, 0, 0, 1});
  CHECK(batch.gt_object_classes[0] == 0);
}

TEST_CASE("re-composed loss: empty batch, self-row equality, gradient reach") {
  FeasibilityTable t = demo_table();
  loss::LossWeights w;

  model::ModelConfig mc;
  mc.num_queries = 4;
  mc.query_dim = 8;
  mc.encoder_layers = 1;
  mc.decoder_layers = 1;
  mc.attention_heads = 2;
  mc.num_object_classes = 3;
  mc.num_action_classes = 4;
  mc.grid_h = 2;
  mc.grid_w = 2;
  mc.grid_c = 8;
  model::HoiModel m(mc, model::ActionHeadKind::concat, 5);

  RecomposedBatch empty;
  CompoLossParts zero = recomposed_forward_loss(empty, m, w);
  CHECK(zero.total.item() == 0.0);

  Rng rng(37);
  MatchedImage image = random_image(0, 1, 8, 3, 4, rng, true);
  image.gts[0].object_class = 0;
  image.gts[0].actions = {1, 0, 0, 0};

  RecomposedBatch self_batch = build_recomposed_batch({image}, t, false, true);
  CompoLossParts parts = recomposed_forward_loss(self_batch, m, w);

  // original pathway: the action head on the original concatenated row
  Tensor original_logits = m.predict_actions(image.ho_rows, image.int_rows);
  Tensor original_action = loss::action_loss(original_logits, {1, 0, 0, 0});
  CHECK(parts.l_action.item() == original_action.item());

  // gradients reach the action head and both representation sets
  parts.total.backward();
  double head_grad = 0.0;
  for (double g : m.params().get("head.action.w").grad()) head_grad += std::fabs(g);
  CHECK(head_grad > 0.0);
  double rp_grad = 0.0, ri_grad = 0.0;
  for (double g : image.ho_rows.grad()) rp_grad += std::fabs(g);
  for (double g : image.int_rows.grad()) ri_grad += std::fabs(g);
  CHECK(rp_grad > 0.0);
  CHECK(ri_grad > 0.0);

  // the interaction-only head cannot consume re-composed features
  model::HoiModel baseline(mc, model::ActionHeadKind::interaction_only, 5);
  CHECK_THROWS_AS(recomposed_forward_loss(self_batch, baseline, w), ConfigError);
}
