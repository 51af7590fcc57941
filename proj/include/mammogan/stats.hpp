#pragma once

// ROC/AUC, DeLong comparisons, Stouffer combination and the readout scoring
// report. Higher scores mean "more likely positive" throughout.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mammogan/serialize.hpp"

namespace mammogan {

struct RocPoint {
  double fpr = 0, tpr = 0;
};

// Points run from (0, 0) to (1, 1); thresholds[i] is the cut for points[i + 1]
// (score >= threshold counts as positive).
struct RocCurve {
  std::vector<RocPoint> points;
  std::vector<double> thresholds;
  std::size_t n_pos = 0, n_neg = 0;
};

struct AucResult {
  double auc = 0;
  double variance = 0;  // DeLong structural-component estimate
  std::size_t n_pos = 0, n_neg = 0;
};

struct RocAnalysis {
  RocCurve curve;
  AucResult auc;
};

// Throws DataError when either class is empty.
RocAnalysis roc_and_auc(const std::vector<double>& pos, const std::vector<double>& neg);
// Rank form (concordant + ties / 2) / (n_pos n_neg), O(n log n).
double auc_rank(const std::vector<double>& pos, const std::vector<double>& neg);
double trapezoid_area(const RocCurve& curve);

struct DelongComponents {
  double auc = 0;
  std::vector<double> v10;  // one per positive
  std::vector<double> v01;  // one per negative
};

DelongComponents delong_components(const std::vector<double>& pos, const std::vector<double>& neg);
// var = S10 / n_pos + S01 / n_neg (sample variances, n - 1 denominators).
double delong_variance(const DelongComponents& c);

struct DelongResult {
  double auc_1 = 0, auc_2 = 0;
  double delta = 0;  // auc_1 - auc_2
  double z = 0;
  double p_two_sided = 1;
  bool paired = false;
};

// Paired mode needs identical case sets (truth_1 == truth_2); unpaired mode
// adds the two independent DeLong variances. Throws DataError on an empty
// class or mismatched inputs, NumericError for zero variance with delta != 0.
DelongResult delong_test(const std::vector<double>& scores_1, const std::vector<bool>& truth_1,
                         const std::vector<double>& scores_2, const std::vector<bool>& truth_2, bool paired);

struct ChanceResult {
  double auc = 0, z = 0, p_two_sided = 1;
};
// AUC against 0.5 with the DeLong variance; same error policy as delong_test.
ChanceResult auc_vs_chance(const std::vector<double>& pos, const std::vector<double>& neg);

struct StoufferResult {
  double z = 0;
  double p_one_sided = 0.5;  // P(Z >= z)
  double p_two_sided = 1;    // 2 P(Z >= |z|)
  std::size_t k = 0;
};

// z_i = Phi^-1(1 - p_i') with p_i' = p_i for one-sided inputs and p_i / 2 for
// two-sided ones; `signs` (+1/-1, default all +1) orient two-sided inputs.
// Throws DataError for an empty list or any p outside (0, 1).
StoufferResult stouffer_combine(const std::vector<double>& p, bool one_sided_input = true,
                                const std::vector<int>& signs = {});

double normal_cdf(double z);
double normal_quantile(double p);

// Linear-interpolation quantile (Hyndman-Fan type 7, R's default).
double quantile(std::vector<double> v, double q);

struct Summary {
  double median = 0, q1 = 0, q3 = 0;
  std::size_t n = 0;
};
// Throws DataError on an empty input.
Summary summarize(const std::vector<double>& values);

// One-sample Kolmogorov-Smirnov test against U(0, 1); asymptotic p-value with
// Stephens' small-sample correction.
struct KsResult {
  double d = 0, p = 1;
};
KsResult ks_uniform(std::vector<double> values);

// --- readout scoring ------------------------------------------------------

// One row per (reader, item) of a readout export, joined with the hidden truth.
struct ScoringRow {
  std::string readout_id;
  std::string reader_id;
  std::string session_id;
  std::string item_id;
  std::string image_id;
  std::string truth_class;  // original class, also for modified images
  std::string provenance;   // original | modified
  std::string split;        // eval | test | train
  std::string stage;        // design group, e.g. early | late
  std::optional<std::string> pair_id;
  int malignancy = 0;    // 1-5
  int manipulation = 0;  // 0/1 or 1-5
};

json to_json(const ScoringRow& r);
ScoringRow scoring_row_from_json(const json& j);
std::string scoring_csv_header();
std::string to_csv(const ScoringRow& r);

// Reads JSON lines or CSV (detected by the first non-blank character).
std::vector<ScoringRow> read_scoring_table(const std::string& text);

struct ScoreOptions {
  bool paired = false;  // DeLong variant for original vs modified
  bool one_sided_input = true;
};

// One row per reader per analysis: AUCs, DeLong p per reader and the
// Stouffer-combined p for each analysis. Analyses whose strata are missing
// are skipped and listed under "warnings". Throws DataError on an empty table.
json score_readout(const std::vector<ScoringRow>& rows, const ScoreOptions& options = {});

// analysis,reader,set,threshold,fpr,tpr per ROC point.
std::string roc_curves_csv(const std::vector<ScoringRow>& rows);

}  // namespace mammogan
