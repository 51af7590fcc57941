#include <doctest.h>

#include <cmath>
#include <random>

#include "mammogan/errors.hpp"
#include "mammogan/stats.hpp"
#include "oracles.hpp"

using namespace mammogan;

namespace {

std::vector<double> likert(std::mt19937_64& g, int n, double shift) {
  std::normal_distribution<double> N(0, 1);
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(std::clamp(std::round(N(g) + 3 + shift), 1.0, 5.0));
  return v;
}

ScoringRow row(const std::string& reader, const std::string& item, const std::string& cls, const std::string& prov,
               int malignancy, int manipulation) {
  ScoringRow r;
  r.readout_id = "r";
  r.reader_id = reader;
  r.session_id = "s-" + reader;
  r.item_id = item;
  r.image_id = "img-" + item;
  r.truth_class = cls;
  r.provenance = prov;
  r.split = "eval";
  r.stage = "main";
  r.malignancy = malignancy;
  r.manipulation = manipulation;
  return r;
}

// 60 items: 30 original, 30 modified, classes balanced; ratings carry class
// signal (weaker on modified images) and a slight provenance signal.
std::vector<ScoringRow> synthetic_export(std::mt19937_64& g, int readers) {
  std::normal_distribution<double> N(0, 1);
  std::vector<ScoringRow> rows;
  for (int r = 0; r < readers; ++r)
    for (int i = 0; i < 60; ++i) {
      const bool modified = i >= 30;
      const bool cancer = i % 2;
      const double signal = cancer ? (modified ? 0.4 : 1.2) : 0.0;
      const int mal = static_cast<int>(std::clamp(std::round(N(g) + 2.5 + signal), 1.0, 5.0));
      const int man = N(g) + (modified ? 0.3 : 0.0) > 0.5 ? 1 : 0;
      rows.push_back(row("reader" + std::to_string(r), "item" + std::to_string(i), cancer ? "cancer" : "healthy",
                         modified ? "modified" : "original", mal, man));
    }
  return rows;
}

}  // namespace

TEST_CASE("roc and auc examples") {
  CHECK(roc_and_auc({2}, {1}).auc.auc == 1.0);
  const auto r = roc_and_auc({3, 4, 5}, {1, 2, 3});
  CHECK(r.auc.auc == 8.5 / 9);
  CHECK(r.auc.auc == oracle::brute_auc({3, 4, 5}, {1, 2, 3}));
  CHECK(std::abs(trapezoid_area(r.curve) - 8.5 / 9) < 1e-12);
  CHECK(r.curve.points.size() == 6);
  CHECK(r.curve.thresholds == std::vector<double>{5, 4, 3, 2, 1});
  CHECK_THROWS_AS(roc_and_auc({}, {1}), DataError);
  CHECK_THROWS_AS(roc_and_auc({1}, {}), DataError);
}

TEST_CASE("auc properties over random Likert instances") {
  std::mt19937_64 g(42);
  std::uniform_int_distribution<int> n(1, 40);
  std::uniform_real_distribution<double> shift(-1.5, 1.5);
  for (int inst = 0; inst < 500; ++inst) {
    const auto pos = likert(g, n(g), shift(g));
    const auto neg = likert(g, n(g), 0.0);
    const auto r = roc_and_auc(pos, neg);
    CHECK(r.auc.auc == oracle::brute_auc(pos, neg));
    CHECK(std::abs(trapezoid_area(r.curve) - r.auc.auc) < 1e-12);
    CHECK(auc_rank(pos, neg) == oracle::brute_auc(pos, neg));
    CHECK(auc_rank(pos, neg) + auc_rank(neg, pos) == 1.0);

    const auto& pts = r.curve.points;
    CHECK(pts.front().fpr == 0.0);
    CHECK(pts.front().tpr == 0.0);
    CHECK(pts.back().fpr == 1.0);
    CHECK(pts.back().tpr == 1.0);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      CHECK(pts[i].fpr >= pts[i - 1].fpr);
      CHECK(pts[i].tpr >= pts[i - 1].tpr);
    }

    auto transform = [](std::vector<double> v) {
      for (auto& x : v) x = std::exp(x) + x * x * x;
      return v;
    };
    CHECK(auc_rank(transform(pos), transform(neg)) == r.auc.auc);
    CHECK(r.auc.variance >= 0.0);
  }
}

TEST_CASE("auc of identically distributed samples is near chance") {
  std::mt19937_64 g(3);
  std::normal_distribution<double> N(0, 1);
  std::vector<double> pos(4000), neg(4000);
  for (auto& x : pos) x = N(g);
  for (auto& x : neg) x = N(g);
  const auto r = roc_and_auc(pos, neg);
  const double sd = std::sqrt((pos.size() + neg.size() + 1.0) / (12.0 * pos.size() * neg.size()));
  CHECK(std::abs(r.auc.auc - 0.5) < 3 * sd);
  CHECK(std::sqrt(r.auc.variance) == doctest::Approx(sd).epsilon(0.1));
}

TEST_CASE("delong basics") {
  const std::vector<double> s{1, 2, 3, 4, 2, 5, 3, 1};
  const std::vector<bool> t{false, false, true, true, false, true, true, false};
  const auto self = delong_test(s, t, s, t, true);
  CHECK(self.delta == 0.0);
  CHECK(self.p_two_sided == 1.0);
  CHECK(self.paired);

  std::mt19937_64 g(8);
  for (int inst = 0; inst < 50; ++inst) {
    for (bool paired : {false, true}) {
      const auto in = oracle::likert_instance(g, 10, 12, 1.0, 0.3, paired);
      const auto a = delong_test(in.s1, in.t1, in.s2, in.t2, paired);
      const auto b = delong_test(in.s2, in.t2, in.s1, in.t1, paired);
      CHECK(a.delta == -b.delta);
      CHECK(a.z == doctest::Approx(-b.z));
      CHECK(a.p_two_sided == doctest::Approx(b.p_two_sided));
      CHECK(a.p_two_sided > 0.0);
      CHECK(a.p_two_sided <= 1.0);
      CHECK(a.delta == a.auc_1 - a.auc_2);
    }
  }

  // Zero variance: perfect vs perfectly inverted separation.
  CHECK_THROWS_AS(delong_test({2, 1}, {true, false}, {1, 2}, {true, false}, false), NumericError);
  CHECK(delong_test({2, 1}, {true, false}, {2, 1}, {true, false}, false).p_two_sided == 1.0);
  CHECK_THROWS_AS(delong_test(s, t, s, std::vector<bool>(8, true), true), DataError);
  CHECK_THROWS_AS(delong_test({1, 2}, {true}, s, t, false), DataError);
}

TEST_CASE("delong p agrees with a permutation oracle at moderate sample sizes") {
  // At n <= 8 per class the normal approximation is visibly off; at 25-30
  // per class it should track the studentized permutation distribution.
  std::mt19937_64 g(11);
  std::uniform_int_distribution<int> n(25, 30);
  std::uniform_real_distribution<double> sep(0.0, 1.5);
  for (bool paired : {false, true}) {
    double worst = 0;
    for (int inst = 0; inst < 12; ++inst) {
      const auto in = oracle::likert_instance(g, n(g), n(g), sep(g), sep(g), paired);
      const double p = delong_test(in.s1, in.t1, in.s2, in.t2, paired).p_two_sided;
      const double q = oracle::permutation_p(in, paired, 20000, 100 + inst);
      worst = std::max(worst, std::abs(p - q));
    }
    MESSAGE("paired " << paired << " worst |p - p_perm| " << worst);
    CHECK(worst < 0.02);
  }
}

TEST_CASE("delong on 18/18 ratings with AUCs near 0.84 vs 0.60") {
  std::mt19937_64 g(1);
  std::normal_distribution<double> N(0, 1);
  auto draw = [&](double sep, double target) {
    for (;;) {
      std::vector<double> s;
      std::vector<bool> t;
      for (int i = 0; i < 36; ++i) {
        t.push_back(i < 18);
        s.push_back(std::clamp(std::round(1.1 * N(g) + 3 + (i < 18 ? sep : 0)), 1.0, 5.0));
      }
      std::vector<double> pos(s.begin(), s.begin() + 18), neg(s.begin() + 18, s.end());
      if (std::abs(auc_rank(pos, neg) - target) < 0.005) return std::pair{s, t};
    }
  };
  const auto [s1, t1] = draw(1.5, 0.84);
  const auto [s2, t2] = draw(0.4, 0.60);
  const auto d = delong_test(s1, t1, s2, t2, false);
  MESSAGE("p = " << d.p_two_sided);
  CHECK(d.p_two_sided > 0.002);
  CHECK(d.p_two_sided < 0.2);
}

TEST_CASE("auc against chance") {
  const auto c = auc_vs_chance({3, 4, 5, 4, 2}, {1, 2, 3, 2, 1});
  CHECK(c.auc > 0.5);
  CHECK(c.p_two_sided < 0.05);
  CHECK(auc_vs_chance({1, 2}, {2, 1}).p_two_sided == 1.0);
  CHECK_THROWS_AS(auc_vs_chance({2, 2}, {1, 1}), NumericError);
}

TEST_CASE("stouffer") {
  CHECK(stouffer_combine({0.5, 0.5, 0.5}).p_one_sided == doctest::Approx(0.5));
  CHECK(stouffer_combine({0.3}).p_one_sided == doctest::Approx(0.3).epsilon(1e-12));

  const auto s = stouffer_combine({0.12, 0.10, 0.02});
  CHECK(s.p_two_sided >= 0.004);
  CHECK(s.p_two_sided <= 0.012);
  CHECK(s.p_two_sided == doctest::Approx(0.0092).epsilon(0.02));
  CHECK(s.p_one_sided == doctest::Approx(s.p_two_sided / 2));
  CHECK(s.k == 3);
  // Reference z by hand: Phi^-1(0.88) + Phi^-1(0.90) + Phi^-1(0.98) over sqrt 3.
  CHECK(s.z == doctest::Approx((1.1749868 + 1.2815516 + 2.0537489) / std::sqrt(3.0)).epsilon(1e-6));

  // Large p-values combine to a large one-sided p.
  CHECK(stouffer_combine({0.74, 0.80, 0.52}).p_one_sided == doctest::Approx(0.81).epsilon(0.01));

  const auto two = stouffer_combine({0.12, 0.10, 0.02}, false);
  CHECK(two.z == doctest::Approx((normal_quantile(0.94) + normal_quantile(0.95) + normal_quantile(0.99)) /
                                 std::sqrt(3.0)));
  const auto against = stouffer_combine({0.1, 0.1}, false, {1, -1});
  CHECK(against.z == doctest::Approx(0.0).scale(1));

  CHECK(stouffer_combine({0.2, 0.05, 0.7}).p_one_sided == stouffer_combine({0.7, 0.2, 0.05}).p_one_sided);
  CHECK_THROWS_AS(stouffer_combine({}), DataError);
  CHECK_THROWS_AS(stouffer_combine({0.0, 0.5}), DataError);
  CHECK_THROWS_AS(stouffer_combine({1.0}), DataError);
  CHECK_THROWS_AS(stouffer_combine({0.5, 0.5}, true, {1}), DataError);
}

TEST_CASE("summaries and quantiles") {
  const auto s = summarize({1, 2, 3, 4, 5});
  CHECK(s.median == 3);
  CHECK(s.q1 == 2);
  CHECK(s.q3 == 4);
  const auto one = summarize({7.5});
  CHECK(one.median == 7.5);
  CHECK(one.q1 == 7.5);
  CHECK(one.q3 == 7.5);
  CHECK_THROWS_AS(summarize({}), DataError);
  // Type 7 values: quantile(c(1, 2, 3, 4, 10), c(0.25, 0.9)) in R gives 2 and 7.6.
  CHECK(quantile({1, 2, 3, 4, 10}, 0.25) == doctest::Approx(2.0));
  CHECK(quantile({10, 4, 3, 2, 1}, 0.9) == doctest::Approx(7.6));

  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> v(1000);
  for (auto& x : v) x = u(g);
  const auto su = summarize(v);
  CHECK(std::abs(su.median - 0.5) < 0.05);
  CHECK(std::abs(su.q1 - 0.25) < 0.05);
  CHECK(std::abs(su.q3 - 0.75) < 0.05);
}

TEST_CASE("kolmogorov-smirnov against uniform") {
  std::vector<double> grid;
  for (int i = 0; i < 100; ++i) grid.push_back((i + 0.5) / 100);
  CHECK(ks_uniform(grid).p > 0.99);
  std::vector<double> low(100, 0.1);
  CHECK(ks_uniform(low).p < 1e-10);
  // Tabulated 5% critical value for n = 10 is D = 0.409.
  std::vector<double> v{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.291, 0.6, 0.7, 0.8};
  const auto r = ks_uniform(v);
  CHECK(r.d == doctest::Approx(0.409));
  CHECK(r.p == doctest::Approx(0.05).epsilon(0.05));
  CHECK_THROWS_AS(ks_uniform({1.5}), DataError);
}

TEST_CASE("scoring table round trips through JSON lines and CSV") {
  std::mt19937_64 g(2);
  auto rows = synthetic_export(g, 2);
  rows[3].pair_id = "pair-01";
  std::string jsonl, csv = scoring_csv_header() + "\n";
  for (const auto& r : rows) {
    jsonl += to_json(r).dump() + "\n";
    csv += to_csv(r) + "\n";
  }
  const auto a = read_scoring_table(jsonl);
  const auto b = read_scoring_table(csv);
  REQUIRE(a.size() == rows.size());
  REQUIRE(b.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(to_json(a[i]) == to_json(rows[i]));
    CHECK(to_json(b[i]) == to_json(rows[i]));
  }
  CHECK(read_scoring_table("  \n").empty());
  CHECK_THROWS_AS(read_scoring_table("{\"reader_id\": \"x\"}\n"), DataError);
  CHECK_THROWS_AS(read_scoring_table(scoring_csv_header() + "\nr,a,b\n"), DataError);
}

TEST_CASE("score_readout structure and constructed cases") {
  std::mt19937_64 g(4);
  auto rows = synthetic_export(g, 3);
  // reader0 rates modified images at chance: a constant rating.
  for (auto& r : rows)
    if (r.reader_id == "reader0" && r.provenance == "modified") r.malignancy = 3;
  // reader1 flags exactly the modified images.
  for (auto& r : rows)
    if (r.reader_id == "reader1") r.manipulation = r.provenance == "modified" ? 5 : 1;

  const auto rep = score_readout(rows);
  CHECK(rep["readers"].size() == 3);
  const auto& ovm = rep["analyses"]["original_vs_modified"];
  REQUIRE(ovm["readers"].size() == 3);
  CHECK(ovm["readers"][0]["set_2"]["auc"] == 0.5);
  CHECK(ovm["readers"][0]["set_2"]["n_pos"] == 15);
  CHECK(ovm["test"] == "delong_unpaired");
  CHECK(ovm["combined"]["k"] == 3);
  const auto& man = rep["analyses"]["manipulation"];
  CHECK(man["readers"][1]["set"]["auc"] == 1.0);
  // Perfect separation has zero DeLong variance; the reader is reported without a p-value.
  CHECK(man["readers"][1]["p"].is_null());
  CHECK(man["combined"]["k"] == 2);

  // No eval/test or late/early strata in this export.
  CHECK_FALSE(rep["analyses"].contains("evaluation_vs_test"));
  CHECK_FALSE(rep["analyses"].contains("late_vs_early"));
  CHECK(rep["warnings"].size() >= 2);
  CHECK(rep["summaries"]["malignancy"].contains("cancer_original"));

  CHECK(score_readout(rows).dump() == rep.dump());
  CHECK_THROWS_AS(score_readout({}), DataError);

  const auto csv = roc_curves_csv(rows);
  CHECK(csv.rfind("analysis,reader,set,threshold,fpr,tpr\n", 0) == 0);
  CHECK(csv.find("original_vs_modified,reader2,modified,inf,0,0") != std::string::npos);
}

TEST_CASE("score_readout strata for a staged design") {
  std::mt19937_64 g(6);
  auto rows = synthetic_export(g, 2);
  for (auto& r : rows) {
    const int i = std::stoi(r.item_id.substr(4));
    r.stage = i % 4 < 1 ? "early" : "late";
    r.split = i % 3 == 0 ? "test" : "eval";
  }
  auto rep = score_readout(rows);
  CHECK(rep["analyses"].contains("evaluation_vs_test"));
  CHECK(rep["analyses"].contains("late_vs_early"));
  CHECK(rep["analyses"]["late_vs_early"]["set_1"] == "late");

  // Paired variant uses only complete pairs.
  for (auto& r : rows) {
    const int i = std::stoi(r.item_id.substr(4));
    if (i % 30 < 20) r.pair_id = "p" + std::to_string(i % 30);
  }
  ScoreOptions o;
  o.paired = true;
  rep = score_readout(rows, o);
  const auto& ovm = rep["analyses"]["original_vs_modified"];
  CHECK(ovm["test"] == "delong_paired");
  CHECK(ovm["readers"][0]["set_1"]["n_pos"].get<int>() + ovm["readers"][0]["set_1"]["n_neg"].get<int>() == 20);
}

TEST_CASE("combined p-values are uniform under shuffled truth") {
  std::mt19937_64 g(77);
  const auto base = synthetic_export(g, 3);
  std::vector<double> ps;
  for (int s = 0; s < 200; ++s) {
    auto rows = base;
    // Each reader's truth labels are permuted independently.
    for (int r = 0; r < 3; ++r) {
      std::vector<std::string> cls;
      for (const auto& x : rows)
        if (x.reader_id == "reader" + std::to_string(r)) cls.push_back(x.truth_class);
      std::shuffle(cls.begin(), cls.end(), g);
      std::size_t k = 0;
      for (auto& x : rows)
        if (x.reader_id == "reader" + std::to_string(r)) x.truth_class = cls[k++];
    }
    const auto rep = score_readout(rows);
    ps.push_back(rep["analyses"]["original_vs_modified"]["combined"]["p_two_sided"].get<double>());
  }
  const auto ks = ks_uniform(ps);
  MESSAGE("KS D " << ks.d << " p " << ks.p);
  CHECK(ks.p > 0.01);
}
