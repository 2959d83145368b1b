#include <cmath>
#include <random>

#include "ctxattr/errors.hpp"
#include "ctxattr/metrics.hpp"
#include "doctest.h"

using namespace ctxattr;
using namespace ctxattr::metrics;

namespace {

AttributionMap random_map(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  AttributionMap m(h, w);
  for (auto& v : m.data()) v = d(rng);
  return m;
}

BinaryMask random_mask(std::mt19937_64& rng, int h, int w, double p) {
  std::bernoulli_distribution bit(p);
  BinaryMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(y, x, bit(rng));
  return m;
}

// Direct summation in extended precision, iterating by (y, x).
std::pair<long double, long double> oracle(const AttributionMap& a, const BinaryMask& m) {
  long double on = 0.0L, total = 0.0L;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      total += a.at(y, x);
      if (m.at(y, x) == 1) on += a.at(y, x);
    }
  return {on / total, (total - on) / total};
}

PredictionRecord pred(std::string id, std::string variant, int predicted, int label, std::string model = "m") {
  PredictionRecord p;
  p.sample_id = std::move(id);
  p.variant = std::move(variant);
  p.model_id = std::move(model);
  p.predicted_class = predicted;
  p.label_class = label;
  return p;
}

AttributionRecord rec(std::string variant, double v_object, bool correct, SizeStratum stratum = SizeStratum::kOther) {
  AttributionRecord r;
  r.prediction = pred("s", std::move(variant), correct ? 1 : 0, 1);
  r.method = "gradcam";
  r.volume = {v_object, 1.0 - v_object};
  r.stratum = stratum;
  return r;
}

}  // namespace

TEST_CASE("volume_attribution examples") {
  const AttributionMap ones(3, 3, 1.0);
  const auto all = volume_attribution(ones, BinaryMask(3, 3, 1));
  CHECK(all.v_object == 1.0);
  CHECK(all.v_context == 0.0);

  BinaryMask half(2, 4);
  for (int x = 0; x < 4; ++x) half.set(0, x, true);
  const auto h = volume_attribution(AttributionMap(2, 4, 0.3), half);
  CHECK(h.v_object == 0.5);
  CHECK(h.v_context == 0.5);

  const AttributionMap m(2, 2, std::vector<double>{1, 2, 3, 4});
  const BinaryMask diag(2, 2, std::vector<std::uint8_t>{1, 0, 0, 1});
  const auto v = volume_attribution(m, diag);
  CHECK(v.v_object == 0.5);
  CHECK(v.v_context == 0.5);
}

TEST_CASE("volume_attribution errors") {
  CHECK_THROWS_AS(volume_attribution(AttributionMap(2, 2, 0.0), BinaryMask(2, 2, 1)), ZeroAttributionError);
  AttributionMap neg(2, 2, 1.0);
  neg.at(0, 1) = -1e-3;
  CHECK_THROWS_AS(volume_attribution(neg, BinaryMask(2, 2, 1)), DomainError);
  AttributionMap inf(2, 2, 1.0);
  inf.at(1, 1) = INFINITY;
  CHECK_THROWS_AS(volume_attribution(inf, BinaryMask(2, 2, 1)), DomainError);
  CHECK_THROWS_AS(volume_attribution(AttributionMap(2, 3, 1.0), BinaryMask(3, 2, 1)), ShapeError);
}

TEST_CASE("volume_attribution matches the direct-summation oracle") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 64);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_map(rng, dim(rng), dim(rng));
    const auto m = random_mask(rng, a.height(), a.width(), 0.5);
    const auto [vo, vc] = oracle(a, m);
    const auto v = volume_attribution(a, m);
    CHECK(std::abs(v.v_object - static_cast<double>(vo)) <= 1e-12);
    CHECK(std::abs(v.v_context - static_cast<double>(vc)) <= 1e-12);
  }
}

TEST_CASE("property: complementarity, scale invariance, support concentration, monotonicity") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> dim(1, 32);
  for (int trial = 0; trial < 300; ++trial) {
    auto a = random_map(rng, dim(rng), dim(rng));
    const auto m = random_mask(rng, a.height(), a.width(), 0.4);
    const auto v = volume_attribution(a, m);
    CHECK(std::abs(v.v_object + v.v_context - 1.0) <= 1e-9);
    CHECK(v.v_object >= 0.0);
    CHECK(v.v_context >= 0.0);

    for (double c : {1e-6, 3.5, 1e6}) {
      AttributionMap s = a;
      for (auto& x : s.data()) x *= c;
      const auto vs = volume_attribution(s, m);
      CHECK(std::abs(vs.v_object - v.v_object) <= 1e-9);
    }

    if (m.object_count() > 0 && m.object_count() < m.size()) {
      AttributionMap on = a, off = a;
      for (std::size_t i = 0; i < a.size(); ++i) (m.object(i) ? off : on).data()[i] = 0.0;
      if (on.max_value() > 0.0) CHECK(volume_attribution(on, m).v_object == 1.0);
      if (off.max_value() > 0.0) CHECK(volume_attribution(off, m).v_context == 1.0);

      // Adding mass inside the mask never lowers v_object.
      AttributionMap more = a;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (m.object(i)) {
          more.data()[i] += 0.5;
          break;
        }
      CHECK(volume_attribution(more, m).v_object >= v.v_object);
    }
  }
}

TEST_CASE("aggregate") {
  SUBCASE("single record") {
    const std::vector<AttributionRecord> r{rec("only_fg", 0.35, true)};
    const GroupKey keys[] = {GroupKey::kVariant};
    const auto g = aggregate(r, keys);
    REQUIRE(g.size() == 1);
    CHECK(g[0].count == 1);
    CHECK(g[0].mean_object == 0.35);
  }
  SUBCASE("two records") {
    const std::vector<AttributionRecord> r{rec("a", 0.2, true), rec("a", 0.4, true)};
    const GroupKey keys[] = {GroupKey::kVariant};
    const auto g = aggregate(r, keys);
    REQUIRE(g.size() == 1);
    CHECK(g[0].mean_object == doctest::Approx(0.3));
    CHECK(g[0].mean_context == doctest::Approx(0.7));
  }
  SUBCASE("grouping, ordering and per-group complementarity") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<AttributionRecord> r;
    const char* variants[] = {"snow", "fog", "original"};
    for (int i = 0; i < 90; ++i) r.push_back(rec(variants[i % 3], u(rng), i % 4 != 0));
    const GroupKey keys[] = {GroupKey::kVariant, GroupKey::kCorrectness};
    const auto g = aggregate(r, keys);
    REQUIRE(g.size() == 6);
    CHECK(g[0].key == std::vector<std::string>{"fog", "correct"});
    CHECK(g[5].key == std::vector<std::string>{"snow", "wrong"});
    std::size_t total = 0;
    for (const auto& s : g) {
      CHECK(std::abs(s.mean_object + s.mean_context - 1.0) <= 1e-9);
      total += s.count;
    }
    CHECK(total == 90);
  }
  CHECK_THROWS_AS(aggregate({}, std::span<const GroupKey>{}), EmptyGroupError);
}

TEST_CASE("MeanAccumulator merge equals sequential add") {
  MeanAccumulator all, left, right;
  for (int i = 0; i < 10; ++i) {
    const VolumeAttribution v{i / 10.0, 1.0 - i / 10.0};
    all.add(v);
    (i < 4 ? left : right).add(v);
  }
  left.merge(right);
  CHECK(left.count == all.count);
  CHECK(left.sum_object == doctest::Approx(all.sum_object));
}

TEST_CASE("split_by_correctness") {
  const std::vector<PredictionRecord> all_correct{pred("a", "original", 1, 1), pred("b", "original", 2, 2)};
  CHECK(split_by_correctness(std::span<const PredictionRecord>(all_correct)).second.empty());

  const std::vector<PredictionRecord> mixed{pred("a", "o", 1, 1), pred("b", "o", 0, 1), pred("c", "o", 2, 2),
                                            pred("d", "o", 3, 1), pred("e", "o", 0, 0)};
  const auto [ok, wrong] = split_by_correctness(std::span<const PredictionRecord>(mixed));
  CHECK(ok.size() == 3);
  CHECK(wrong.size() == 2);
  for (const auto& p : ok) CHECK(p.correct());
  for (const auto& p : wrong) CHECK_FALSE(p.correct());

  const std::vector<AttributionRecord> recs{rec("x", 0.1, true), rec("x", 0.2, false), rec("x", 0.3, false)};
  const auto split = split_by_correctness(std::span<const AttributionRecord>(recs));
  CHECK(split.first.size() == 1);
  CHECK(split.second.size() == 2);
}

TEST_CASE("size strata") {
  CHECK(size_stratum(0.40) == SizeStratum::kLarge);
  CHECK(size_stratum(0.15) == SizeStratum::kSmall);
  CHECK(size_stratum(0.25) == SizeStratum::kOther);
  CHECK(size_stratum(0.30) == SizeStratum::kLarge);
  CHECK(size_stratum(0.50) == SizeStratum::kLarge);
  CHECK(size_stratum(0.20) == SizeStratum::kOther);
  CHECK(size_stratum(0.51) == SizeStratum::kOther);
  BinaryMask m(10, 10);
  for (int x = 0; x < 10; ++x) m.set(0, x, true);
  CHECK(size_strata(m) == SizeStratum::kSmall);
  for (int y = 1; y < 4; ++y)
    for (int x = 0; x < 10; ++x) m.set(y, x, true);
  CHECK(size_strata(m) == SizeStratum::kLarge);
}

TEST_CASE("property: strata are exclusive and exhaustive over [0, 1]") {
  for (int i = 0; i <= 10000; ++i) {
    const double phi = i / 10000.0;
    const auto s = size_stratum(phi);
    const bool large = phi >= 0.30 && phi <= 0.50;
    const bool small = phi < 0.20;
    CHECK(s == (large ? SizeStratum::kLarge : small ? SizeStratum::kSmall : SizeStratum::kOther));
  }
}

TEST_CASE("accuracy_table") {
  SUBCASE("published ResNet50 row") {
    const std::map<std::string, double> acc{{"original", 95.9},   {"only_fg", 88.1},   {"mixed_next", 82.1},
                                            {"mixed_rand", 83.8}, {"mixed_same", 89.6}, {"fog", 93.4},
                                            {"snow", 92.5},       {"motion_blur", 93.6}, {"gaussian_noise", 93.3},
                                            {"pixelate", 94.1}};
    const auto t = accuracy_table(acc, kContextChangeVariants, kContextPerturbationVariants);
    CHECK(*t.mean_cc == doctest::Approx(85.9));
    CHECK(*t.mean_cp == doctest::Approx(93.38));
    CHECK(std::abs(*t.decline_cc - 10.0) <= 0.05);
    CHECK(std::abs(*t.decline_cp - 2.5) <= 0.05);
  }
  SUBCASE("all variants at 100%") {
    std::map<std::string, double> acc{{"original", 100.0}};
    for (const auto& v : kContextChangeVariants) acc[v] = 100.0;
    for (const auto& v : kContextPerturbationVariants) acc[v] = 100.0;
    const auto t = accuracy_table(acc, kContextChangeVariants, kContextPerturbationVariants);
    CHECK(*t.decline_cc == 0.0);
    CHECK(*t.decline_cp == 0.0);
  }
  SUBCASE("from predictions") {
    std::vector<PredictionRecord> p;
    for (int i = 0; i < 4; ++i) p.push_back(pred("s" + std::to_string(i), "original", 1, 1));
    for (int i = 0; i < 4; ++i) p.push_back(pred("s" + std::to_string(i), "only_fg", i < 3 ? 1 : 0, 1));
    const auto t = accuracy_table(p, {"only_fg"}, {});
    CHECK(t.orig == 100.0);
    CHECK(t.variants.at("only_fg").percent == 75.0);
    CHECK(t.variants.at("only_fg").total == 4);
    CHECK(*t.decline_cc == 25.0);
    CHECK_FALSE(t.mean_cp.has_value());
  }
  SUBCASE("missing variants") {
    CHECK_THROWS_AS(accuracy_table(std::map<std::string, double>{{"only_fg", 50.0}}, {"only_fg"}, {}),
                    MissingVariantError);
    CHECK_THROWS_AS(accuracy_table(std::map<std::string, double>{{"original", 50.0}}, {"only_fg"}, {}),
                    MissingVariantError);
  }
}

TEST_CASE("context_fraction_filter") {
  auto mask_with_context = [](int context_pixels) {
    BinaryMask m(10, 10, 1);
    for (int i = 0; i < context_pixels; ++i) m.set(i / 10, i % 10, false);
    return m;
  };
  std::vector<SampleRecord> samples(4);
  const int context[] = {31, 29, 30, 100};
  for (int i = 0; i < 4; ++i) {
    samples[i].sample_id = "s" + std::to_string(i);
    samples[i].class_id = context[i];
  }
  const MaskLoader load = [&](const SampleRecord& s) { return mask_with_context(s.class_id); };
  const auto r = context_fraction_filter(samples, load);
  REQUIRE(r.kept.size() == 2);
  CHECK(r.kept[0].sample_id == "s0");
  CHECK(r.kept[1].sample_id == "s3");
  CHECK(r.dropped.size() == 2);
  CHECK(r.kept_fraction == 0.5);

  const MaskLoader all_object = [](const SampleRecord&) { return BinaryMask(4, 4, 1); };
  CHECK(context_fraction_filter(samples, all_object).kept.empty());

  const MaskLoader failing = [](const SampleRecord&) -> BinaryMask { throw IoError("mask missing"); };
  CHECK_THROWS_AS(context_fraction_filter(samples, failing), IoError);
}
