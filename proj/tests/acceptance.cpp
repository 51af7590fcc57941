// Acceptance run: one PASS/FAIL line per criterion, exit 0 only when all pass.
//
//   acceptance [--workdir DIR] [--only name,name] [--keep]
//
// The translation criteria train the default 64x64 experiment through the
// CLI (twice, for the determinism check), so a full run takes ~20 minutes on
// one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sys/wait.h>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "grad_suite.hpp"
#include "mammogan/artifact.hpp"
#include "mammogan/pipeline.hpp"
#include "mammogan/stats.hpp"
#include "oracles.hpp"
#include "readout_checks.hpp"

using namespace mammogan;
namespace fs = std::filesystem;
using SteadyClock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(SteadyClock::time_point t0) { return std::chrono::duration<double>(SteadyClock::now() - t0).count(); }

std::string f(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome gradient_correctness() {
  const auto t0 = SteadyClock::now();
  double worst = 0;
  std::string worst_case;
  std::size_t cases = 0, failing = 0;
  for (unsigned seed = 0; seed < 20; ++seed) {
    auto visit = [&](const std::string& name, const gradcheck::Report& r) {
      ++cases;
      if (!(r.max_rel_error < 1e-4)) ++failing;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_case = name + " seed " + std::to_string(seed) + " " + r.worst;
      }
    };
    grad_suite::primitives(seed, visit);
    grad_suite::layers(seed, visit);
    grad_suite::networks(seed, visit);
  }
  const double t = seconds_since(t0);
  return {failing == 0 && t < 120,
          std::to_string(cases) + " checks over 20 seeds, " + std::to_string(failing) + " above 1e-4; worst " +
              f("%.2e", worst) + " (" + worst_case + "); " + f("%.1f", t) + " s (limit 120 s)"};
}

Outcome statistics_oracles() {
  const auto t0 = SteadyClock::now();
  // Rank formula against pair counting on Likert data.
  std::mt19937_64 g(42);
  std::uniform_int_distribution<int> n(1, 40);
  std::uniform_real_distribution<double> shift(-1.5, 1.5);
  std::normal_distribution<double> noise(0, 1);
  auto likert = [&](int k, double s) {
    std::vector<double> v(k);
    for (auto& x : v) x = std::clamp(std::round(3 + s + noise(g)), 1.0, 5.0);
    return v;
  };
  int exact = 0;
  for (int inst = 0; inst < 500; ++inst) {
    const auto pos = likert(n(g), shift(g));
    const auto neg = likert(n(g), 0.0);
    exact += auc_rank(pos, neg) == oracle::brute_auc(pos, neg);
  }

  // DeLong against a studentized permutation test, 4-8 cases per class.
  std::mt19937_64 gi(11);
  std::uniform_int_distribution<int> nd(4, 8);
  std::uniform_real_distribution<double> sep(0, 1.5);
  int within = 0, used = 0, degenerate = 0;
  double max_gap = 0, sum_gap = 0;
  while (used < 50) {
    const bool paired = used % 2 == 1;
    const int np = nd(gi), nn = nd(gi);
    const auto in = oracle::likert_instance(gi, np, nn, sep(gi), sep(gi), paired);
    double p = 0;
    try {
      p = delong_test(in.s1, in.t1, in.s2, in.t2, paired).p_two_sided;
    } catch (const NumericError&) {
      ++degenerate;
      continue;
    }
    const double gap = std::abs(p - oracle::permutation_p(in, paired, 20000, 1000 + used));
    within += gap <= 0.02;
    max_gap = std::max(max_gap, gap);
    sum_gap += gap;
    ++used;
  }
  const double t = seconds_since(t0);
  return {exact == 500 && within == 50 && t < 300,
          "AUC exact " + std::to_string(exact) + "/500; DeLong within 0.02 of 20000-resample permutation p on " +
              std::to_string(within) + "/50 instances (mean gap " + f("%.4f", sum_gap / 50) + ", max " +
              f("%.4f", max_gap) + ", " + std::to_string(degenerate) + " zero-variance draws skipped); " +
              f("%.1f", t) + " s (limit 300 s)"};
}

Outcome reference_values() {
  const auto s = stouffer_combine({0.12, 0.10, 0.02});
  const double auc = auc_rank({3, 4, 5}, {1, 2, 3});
  const double brute = oracle::brute_auc({3, 4, 5}, {1, 2, 3});
  const bool in_bracket = s.p_one_sided >= 0.004 && s.p_one_sided <= 0.012;
  const bool auc_ok = auc == brute && std::round(auc * 1e4) / 1e4 == 0.9444;
  return {in_bracket && auc_ok, "Stouffer {0.12, 0.10, 0.02}: p " + f("%.4f", s.p_one_sided) + " one-sided (" +
                                    f("%.4f", s.p_two_sided) + " two-sided), bracket [0.004, 0.012]; AUC " +
                                    f("%.6f", auc) + " vs pair count " + f("%.6f", brute)};
}

Outcome artifact_metric() {
  Image board(64, 64), flat(64, 64, 0.3f);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) board.at(y, x) = (x + y) % 2 ? 1.0f : -1.0f;
  const double gb = grid_score(board), gf = grid_score(flat);
  PhantomSpec spec;
  std::vector<Image> inputs;
  for (std::uint64_t i = 0; i < 8; ++i)
    inputs.push_back(generate_phantom(spec, i % 2 ? ImageClass::cancer : ImageClass::healthy, 700000 + i).image);
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 20; ++s) seeds.push_back(s);
  const auto c = compare_upsamplers(nn::GeneratorSpec{}, inputs, seeds);
  return {gb > 0.9 && gf == 0.0 && c.median_transposed > c.median_resize,
          "checkerboard " + f("%.4f", gb) + ", constant " + f("%.4f", gf) + "; median over 20 seeds: transposed " +
              f("%.4f", c.median_transposed) + " vs resize " + f("%.4f", c.median_resize)};
}

Outcome readout_composition() {
  std::map<std::string, double> scores;
  const auto m = checks::synthetic_manifest(60, {"main", "early", "late"}, scores, 5);
  std::size_t violations = 0, builds = 0;
  std::string first;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (const auto& d : {readout1_design(), readout2_design()}) {
      const auto r = build_readout(d, m, scores, seed);
      ++builds;
      auto v = checks::composition_violations(r, m, scores);
      std::size_t modified = 0, paired = 0, cancer = 0;
      for (const auto& it : r.items) {
        modified += it.provenance == Provenance::modified;
        paired += it.pair_id.has_value();
        cancer += it.truth_class == ImageClass::cancer;
      }
      const std::size_t total = d.name == "readout-1" ? 60 : 72;
      if (r.items.size() != total || 2 * modified != total || 2 * cancer != total) v.push_back("totals");
      if (d.name == "readout-1" && (paired != 40 || r.items.size() - paired != 20)) v.push_back("readout-1 pairs");
      if (!v.empty() && first.empty()) first = d.name + " seed " + std::to_string(seed) + ": " + v.front();
      violations += v.size();
    }
  }
  return {violations == 0, std::to_string(builds) + " readouts (readout-1 and readout-2, seeds 0-99), " +
                               std::to_string(violations) + " violations" + (first.empty() ? "" : "; first: " + first)};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MAMMOGAN_CLI + "\" " + args;
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome determinism(const fs::path& a, const fs::path& b, double seconds_a, int rc_a) {
  const auto t0 = SteadyClock::now();
  const int rc_b = run_cli("-q -w \"" + b.string() + "\" reproduce-exp1");
  const double seconds_b = seconds_since(t0);
  if (rc_a != 0 || rc_b != 0)
    return {false, "reproduce-exp1 exit codes " + std::to_string(rc_a) + " and " + std::to_string(rc_b)};
  std::set<fs::path> files;
  for (const auto* root : {&a, &b})
    for (const auto& e : fs::recursive_directory_iterator(*root))
      if (e.is_regular_file()) files.insert(fs::relative(e.path(), *root));
  std::size_t differ = 0, ckpts = 0, manifests = 0;
  std::string first;
  for (const auto& rel : files) {
    const auto name = rel.filename().string();
    ckpts += name.rfind("ckpt-", 0) == 0;
    manifests += name == "artifact.json" || name.find("manifest") != std::string::npos;
    if (!fs::exists(a / rel) || !fs::exists(b / rel) || slurp(a / rel) != slurp(b / rel)) {
      if (first.empty()) first = rel.string();
      ++differ;
    }
  }
  const bool report = fs::exists(a / "report" / "report.json");
  return {differ == 0 && report,
          std::to_string(files.size()) + " files compared (" + std::to_string(manifests) + " manifests, " +
              std::to_string(ckpts) + " checkpoints, report " + (report ? "present" : "MISSING") + "), " +
              std::to_string(differ) + " differ" + (first.empty() ? "" : " (first: " + first + ")") + "; runs took " +
              f("%.0f", seconds_a) + " s and " + f("%.0f", seconds_b) + " s"};
}

Outcome translation_efficacy(const fs::path& run, double seconds) {
  const auto c = experiment_config_from_json(json{{"workdir", run.string()}});
  std::vector<double> cycle;
  std::istringstream in(slurp(c.train_dir() / "losses.jsonl"));
  std::string line;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    cycle.push_back(j["cycle_H"].get<double>() + j["cycle_C"].get<double>());
  }
  if (cycle.size() != c.train.total_steps) return {false, "losses.jsonl has " + std::to_string(cycle.size()) + " steps"};
  double early = 0, late = 0;
  for (std::size_t i = 100; i < 200; ++i) early += cycle[i] / 100;
  for (std::size_t i = cycle.size() - 100; i < cycle.size(); ++i) late += cycle[i] / 100;
  const double ratio = late / early;

  const auto model = CycleGan::load(c.train_dir() / checkpoint_name(c.train.total_steps), c.train);
  const PhantomSpec& spec = c.dataset.phantom;
  int up = 0, down = 0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto h = generate_phantom(spec, ImageClass::healthy, 900000 + i).image;
    const auto k = generate_phantom(spec, ImageClass::cancer, 900000 + i).image;
    up += lesion_oracle_score(model.translate(h, Direction::h_to_c), spec) > lesion_oracle_score(h, spec);
    down += lesion_oracle_score(model.translate(k, Direction::c_to_h), spec) < lesion_oracle_score(k, spec);
  }
  return {ratio < 0.5 && up >= 35 && down >= 35 && seconds < 7200,
          "(a) cycle loss final-100 / steps 100-200 = " + f("%.3f", ratio) + " (< 0.5); (b) H->C raises oracle on " +
              std::to_string(up) + "/50 (>= 35); (c) C->H lowers it on " + std::to_string(down) +
              "/50 (>= 35); 5000-step run incl. pipeline " + f("%.0f", seconds) + " s (limit 7200 s)"};
}

Outcome generalization(const fs::path& run) {
  const auto c = experiment_config_from_json(json{{"workdir", run.string()}});
  const auto model = CycleGan::load(c.train_dir() / checkpoint_name(c.train.total_steps), c.train);
  const ImageStore store(c.data_dir());
  const PhantomSpec& spec = c.dataset.phantom;
  // shift[direction][split], oracle ratings and truth per split
  std::map<std::pair<int, int>, std::vector<double>> shift;
  std::map<int, std::vector<double>> rating;
  std::map<int, std::vector<bool>> truth;
  for (const auto& r : store.manifest().records) {
    if (r.provenance != Provenance::original || r.split == Split::train) continue;
    const int split = r.split == Split::eval ? 0 : 1;
    const bool cancer = r.cls == ImageClass::cancer;
    const auto img = store.load(r, Purpose::evaluation);
    const auto out = model.translate(img, cancer ? Direction::c_to_h : Direction::h_to_c);
    const double before = lesion_oracle_score(img, spec), after = lesion_oracle_score(out, spec);
    shift[{cancer, split}].push_back(after - before);
    for (double s : {before, after}) {
      rating[split].push_back(s);
      truth[split].push_back(cancer);
    }
  }
  const double dh = std::abs(median(shift[{0, 0}]) - median(shift[{0, 1}]));
  const double dc = std::abs(median(shift[{1, 0}]) - median(shift[{1, 1}]));
  const auto d = delong_test(rating[0], truth[0], rating[1], truth[1], false);
  return {dh < 0.1 && dc < 0.1 && d.p_two_sided > 0.05,
          "median shift eval vs test: H->C differs by " + f("%.4f", dh) + ", C->H by " + f("%.4f", dc) +
              " (< 0.1); oracle AUC eval " + f("%.3f", d.auc_1) + " vs test " + f("%.3f", d.auc_2) + ", DeLong p " +
              f("%.3f", d.p_two_sided) + " (> 0.05)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria, one PASS/FAIL line each"};
  std::string workdir = (fs::temp_directory_path() / "mammogan-acceptance").string();
  std::vector<std::string> only;
  bool keep = false;
  app.add_option("--workdir", workdir, "Scratch directory for the reproduce runs");
  app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',');
  app.add_flag("--keep", keep, "Keep the reproduce runs");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](const std::string& name) {
    return only.empty() || std::find(only.begin(), only.end(), name) != only.end();
  };
  int failed = 0, ran = 0;
  auto report = [&](const std::string& name, const Outcome& o) {
    ++ran;
    failed += !o.pass;
    std::printf("%s  %-22s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  };
  auto guarded = [&](const std::string& name, const std::function<Outcome()>& fn) {
    if (!wanted(name)) return;
    try {
      report(name, fn());
    } catch (const std::exception& e) {
      report(name, {false, std::string("error: ") + e.what()});
    }
  };

  guarded("gradient-correctness", gradient_correctness);
  guarded("statistics-oracles", statistics_oracles);
  guarded("reference-values", reference_values);

  const fs::path a = fs::path(workdir) / "run-a", b = fs::path(workdir) / "run-b";
  double seconds_a = 0;
  int rc_a = -1;
  if (wanted("translation-efficacy") || wanted("generalization") || wanted("determinism")) {
    fs::remove_all(workdir);
    const auto t0 = SteadyClock::now();
    rc_a = run_cli("-q -w \"" + a.string() + "\" reproduce-exp1");
    seconds_a = seconds_since(t0);
  }
  guarded("translation-efficacy", [&] {
    if (rc_a != 0) return Outcome{false, "reproduce-exp1 exited " + std::to_string(rc_a)};
    return translation_efficacy(a, seconds_a);
  });
  guarded("generalization", [&] {
    if (rc_a != 0) return Outcome{false, "reproduce-exp1 exited " + std::to_string(rc_a)};
    return generalization(a);
  });
  guarded("artifact-metric", artifact_metric);
  guarded("readout-composition", readout_composition);
  guarded("determinism", [&] { return determinism(a, b, seconds_a, rc_a); });
  if (!keep) fs::remove_all(workdir);

  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
