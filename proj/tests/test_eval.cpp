#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hyprec/eval.hpp"
#include "test_util.hpp"

using Catch::Matchers::WithinAbs;
using hyprec::InteractionDataset;
using hyprec::ModelParameters;
using hyprec::ModelShape;
using hyprec::Space;

namespace {

// 2-d ball, user 0 at the origin, items strung out along the x axis so the
// distance ranking from user 0 is just the norm ordering.
struct EvalFixture {
  Space space{hyprec::SpaceKind::kHyperbolic, 1.0};
  ModelParameters params;

  EvalFixture() {
    ModelShape shape;
    shape.n_users = 2;
    shape.n_items = 4;
    shape.n_entities = 4;
    shape.n_relations = 1;
    shape.dim = 2;
    params = ModelParameters::init(shape, space, 3);
    params.user.row(0) << 0.0, 0.0;
    params.user.row(1) << 0.5, 0.0;
    params.entity.row(0) << 0.05, 0.0;
    params.entity.row(1) << 0.1, 0.0;
    params.entity.row(2) << 0.2, 0.0;
    params.entity.row(3) << 0.3, 0.0;
  }
};

}  // namespace

TEST_CASE("recall counts hits against the full relevant set", "[eval]") {
  CHECK(hyprec::recall_at_k({3, 7, 9}, {7}) == 1.0);
  CHECK(hyprec::recall_at_k({1, 2}, {0, 1, 2, 3}) == 0.5);
  CHECK(hyprec::recall_at_k({4, 5}, {0, 1}) == 0.0);
  CHECK(hyprec::recall_at_k({}, {1}) == 0.0);
  CHECK(hyprec::recall_at_k({1}, {}) == 0.0);
}

TEST_CASE("hit fraction truncates the denominator at k", "[eval]") {
  std::vector<int> topk, relevant;
  for (int v = 0; v < 10; ++v) topk.push_back(v);
  for (int v = 0; v < 20; ++v) relevant.push_back(v);
  // all ten slots are hits: recall would cap at 0.5, the hit fraction is 1
  CHECK(hyprec::recall_at_k(topk, relevant) == 0.5);
  CHECK(hyprec::hit_fraction_at_k(topk, relevant, 10) == 1.0);
  CHECK_THAT(hyprec::hit_fraction_at_k({5, 21, 6, 22, 23}, {5, 6, 7}, 5),
             WithinAbs(2.0 / 3.0, 1e-15));
  CHECK(hyprec::hit_fraction_at_k(topk, relevant, 0) == 0.0);
  CHECK(hyprec::hit_fraction_at_k(topk, {}, 10) == 0.0);
}

TEST_CASE("ndcg matches hand-computed discounts", "[eval]") {
  // single relevant item found at rank 2: log2(2)/log2(3)
  CHECK_THAT(hyprec::ndcg_at_k({9, 4, 8}, {4}, 3), WithinAbs(0.6309297535714575, 1e-15));
  CHECK(hyprec::ndcg_at_k({4, 9, 8}, {4}, 3) == 1.0);
  CHECK(hyprec::ndcg_at_k({9, 8, 4}, {4}, 2) == 0.0);  // hit beyond k
  // hits at ranks 1 and 3 with two relevant items
  const double dcg = 1.0 + 1.0 / std::log2(4.0);
  const double idcg = 1.0 + 1.0 / std::log2(3.0);
  CHECK_THAT(hyprec::ndcg_at_k({4, 9, 5}, {4, 5}, 3), WithinAbs(dcg / idcg, 1e-15));
  // ideal DCG truncates at min(k, |relevant|)
  CHECK(hyprec::ndcg_at_k({4}, {4, 5, 6}, 1) == 1.0);
  CHECK(hyprec::ndcg_at_k({}, {4}, 3) == 0.0);
  CHECK(hyprec::ndcg_at_k({4}, {}, 3) == 0.0);
  CHECK(hyprec::ndcg_at_k({4}, {4}, 0) == 0.0);
}

TEST_CASE("rank_items orders by distance with id tie-breaks", "[eval]") {
  EvalFixture f;
  CHECK(hyprec::rank_items(f.params, f.space, 0, {}, 4) == std::vector<int>{0, 1, 2, 3});
  CHECK(hyprec::rank_items(f.params, f.space, 0, {}, 2) == std::vector<int>{0, 1});
  CHECK(hyprec::rank_items(f.params, f.space, 0, {0, 1}, 4) == std::vector<int>{2, 3});
  CHECK(hyprec::rank_items(f.params, f.space, 0, {}, 99) == std::vector<int>{0, 1, 2, 3});
  CHECK(hyprec::rank_items(f.params, f.space, 0, {0, 1, 2, 3}, 4).empty());

  // user 1 sits at 0.5 on the axis, so the ordering reverses
  CHECK(hyprec::rank_items(f.params, f.space, 1, {}, 4) == std::vector<int>{3, 2, 1, 0});

  // exact distance ties resolve toward the smaller id
  EvalFixture tied;
  for (int v = 0; v < 4; ++v) tied.params.entity.row(v) << 0.1, 0.0;
  CHECK(hyprec::rank_items(tied.params, tied.space, 0, {}, 4) == std::vector<int>{0, 1, 2, 3});
  CHECK(hyprec::rank_items(tied.params, tied.space, 0, {1}, 4) == std::vector<int>{0, 2, 3});
}

TEST_CASE("evaluate macro-averages over users with targets", "[eval]") {
  EvalFixture f;
  InteractionDataset data;
  data.n_users = 2;
  data.n_items = 4;
  data.train = {{1}, {}};
  data.validation = {{0}, {}};
  data.test = {{2}, {}};

  SECTION("validation items leave the candidate pool by default") {
    const auto rep = hyprec::evaluate(f.params, f.space, data, {1, 2});
    REQUIRE(rep.ks == std::vector<int>{1, 2});
    // user 0 ranks {2, 3}; user 1 has no test items and is skipped
    CHECK(rep.recall == std::vector<double>{1.0, 1.0});
    CHECK(rep.ndcg == std::vector<double>{1.0, 1.0});
  }

  SECTION("keeping validation candidates demotes the test hit") {
    const auto rep = hyprec::evaluate(f.params, f.space, data, {1, 2}, true, false);
    // candidates {0, 2, 3}: item 0 wins rank 1, the test item lands at rank 2
    CHECK(rep.recall == std::vector<double>{0.0, 1.0});
    CHECK_THAT(rep.ndcg[1], WithinAbs(0.6309297535714575, 1e-15));
  }

  SECTION("validation scoring uses validation targets") {
    const auto rep = hyprec::evaluate(f.params, f.space, data, {1}, false, true);
    CHECK(rep.recall == std::vector<double>{1.0});
    CHECK(rep.ndcg == std::vector<double>{1.0});
  }

  SECTION("macro average spans every counted user") {
    data.test = {{2}, {0}};  // user 1 at 0.5 ranks item 3 first, missing item 0
    const auto rep = hyprec::evaluate(f.params, f.space, data, {1});
    CHECK(rep.recall == std::vector<double>{0.5});
    CHECK(rep.ndcg == std::vector<double>{0.5});
  }

  SECTION("no counted users yields zeros") {
    data.test = {{}, {}};
    const auto rep = hyprec::evaluate(f.params, f.space, data, {5});
    CHECK(rep.recall == std::vector<double>{0.0});
    CHECK(rep.ndcg == std::vector<double>{0.0});
  }
}

TEST_CASE("metric reports serialize as k/recall/ndcg rows", "[eval]") {
  hyprec::MetricsReport rep;
  rep.ks = {10, 20};
  rep.recall = {0.5, 1.0};
  rep.ndcg = {0.25, 2.0};
  CHECK(rep.to_tsv() == "10\t0.5\t0.25\n20\t1\t2\n");
  CHECK(hyprec::MetricsReport{}.to_tsv().empty());
}
