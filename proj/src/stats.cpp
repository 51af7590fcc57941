#include "mammogan/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "mammogan/errors.hpp"

namespace mammogan {

namespace {

void require_classes(const std::vector<double>& pos, const std::vector<double>& neg, const char* what) {
  if (pos.empty() || neg.empty()) {
    throw DataError(std::string(what) + ": need at least one positive and one negative score (got " +
                    std::to_string(pos.size()) + " and " + std::to_string(neg.size()) + ")");
  }
}

// Count of `sorted` below x, ties counted half.
double count_below(const std::vector<double>& sorted, double x) {
  const auto lo = std::lower_bound(sorted.begin(), sorted.end(), x);
  const auto hi = std::upper_bound(lo, sorted.end(), x);
  return static_cast<double>(lo - sorted.begin()) + 0.5 * static_cast<double>(hi - lo);
}

double placement(const std::vector<double>& sorted, double x) {
  return count_below(sorted, x) / static_cast<double>(sorted.size());
}

double covariance(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / (n - 1);
}

void split_by_truth(const std::vector<double>& scores, const std::vector<bool>& truth, std::vector<double>& pos,
                    std::vector<double>& neg) {
  if (scores.size() != truth.size()) {
    throw DataError("scores and truth differ in length (" + std::to_string(scores.size()) + " vs " +
                    std::to_string(truth.size()) + ")");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) (truth[i] ? pos : neg).push_back(scores[i]);
}

double two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

// Shared zero-variance policy.
void finish_z(double delta, double var, double& z, double& p) {
  if (delta == 0.0) {
    z = 0.0;
    p = 1.0;
    return;
  }
  if (!(var > 1e-12)) throw NumericError("zero variance with nonzero AUC difference " + std::to_string(delta));
  z = delta / std::sqrt(var);
  p = two_sided_p(z);
}

}  // namespace

double auc_rank(const std::vector<double>& pos, const std::vector<double>& neg) {
  require_classes(pos, neg, "auc");
  std::vector<double> sorted_neg = neg;
  std::sort(sorted_neg.begin(), sorted_neg.end());
  double s = 0;
  for (double x : pos) s += count_below(sorted_neg, x);
  return s / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

double trapezoid_area(const RocCurve& curve) {
  double a = 0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& p = curve.points[i - 1];
    const auto& q = curve.points[i];
    a += (q.fpr - p.fpr) * (q.tpr + p.tpr) / 2;
  }
  return a;
}

RocAnalysis roc_and_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  require_classes(pos, neg, "roc");
  RocAnalysis r;
  r.curve.n_pos = pos.size();
  r.curve.n_neg = neg.size();
  std::vector<double> cuts(pos);
  cuts.insert(cuts.end(), neg.begin(), neg.end());
  std::sort(cuts.begin(), cuts.end(), std::greater<>());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  r.curve.points.push_back({0.0, 0.0});
  for (double t : cuts) {
    const auto tp = std::count_if(pos.begin(), pos.end(), [t](double s) { return s >= t; });
    const auto fp = std::count_if(neg.begin(), neg.end(), [t](double s) { return s >= t; });
    r.curve.points.push_back({static_cast<double>(fp) / neg.size(), static_cast<double>(tp) / pos.size()});
    r.curve.thresholds.push_back(t);
  }
  const auto c = delong_components(pos, neg);
  r.auc = {c.auc, delong_variance(c), pos.size(), neg.size()};
  return r;
}

DelongComponents delong_components(const std::vector<double>& pos, const std::vector<double>& neg) {
  require_classes(pos, neg, "delong");
  DelongComponents c;
  std::vector<double> sp(pos), sn(neg);
  std::sort(sp.begin(), sp.end());
  std::sort(sn.begin(), sn.end());
  c.v10.reserve(pos.size());
  c.v01.reserve(neg.size());
  for (double x : pos) c.v10.push_back(placement(sn, x));
  for (double y : neg) c.v01.push_back(1.0 - placement(sp, y));
  c.auc = auc_rank(pos, neg);
  return c;
}

double delong_variance(const DelongComponents& c) {
  return covariance(c.v10, c.v10) / c.v10.size() + covariance(c.v01, c.v01) / c.v01.size();
}

DelongResult delong_test(const std::vector<double>& scores_1, const std::vector<bool>& truth_1,
                         const std::vector<double>& scores_2, const std::vector<bool>& truth_2, bool paired) {
  std::vector<double> p1, n1, p2, n2;
  split_by_truth(scores_1, truth_1, p1, n1);
  split_by_truth(scores_2, truth_2, p2, n2);
  const auto c1 = delong_components(p1, n1);
  const auto c2 = delong_components(p2, n2);
  DelongResult r;
  r.paired = paired;
  r.auc_1 = c1.auc;
  r.auc_2 = c2.auc;
  r.delta = c1.auc - c2.auc;
  double var;
  if (paired) {
    if (truth_1 != truth_2) throw DataError("paired DeLong test needs identical case sets");
    var = (covariance(c1.v10, c1.v10) + covariance(c2.v10, c2.v10) - 2 * covariance(c1.v10, c2.v10)) / p1.size() +
          (covariance(c1.v01, c1.v01) + covariance(c2.v01, c2.v01) - 2 * covariance(c1.v01, c2.v01)) / n1.size();
  } else {
    var = delong_variance(c1) + delong_variance(c2);
  }
  finish_z(r.delta, var, r.z, r.p_two_sided);
  return r;
}

ChanceResult auc_vs_chance(const std::vector<double>& pos, const std::vector<double>& neg) {
  const auto c = delong_components(pos, neg);
  ChanceResult r;
  r.auc = c.auc;
  finish_z(c.auc - 0.5, delong_variance(c), r.z, r.p_two_sided);
  return r;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DataError("normal quantile needs p in (0, 1), got " + std::to_string(p));
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

StoufferResult stouffer_combine(const std::vector<double>& p, bool one_sided_input, const std::vector<int>& signs) {
  if (p.empty()) throw DataError("stouffer: no p-values");
  if (!signs.empty() && signs.size() != p.size()) throw DataError("stouffer: signs and p-values differ in length");
  double sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0 && p[i] < 1.0)) throw DataError("stouffer: p-value outside (0, 1): " + std::to_string(p[i]));
    const double tail = one_sided_input ? p[i] : p[i] / 2;
    // Upper-tail quantile without forming 1 - tail.
    double z = boost::math::quantile(boost::math::complement(boost::math::normal_distribution<double>(), tail));
    if (!signs.empty()) z *= signs[i] < 0 ? -1.0 : 1.0;
    sum += z;
  }
  StoufferResult r;
  r.k = p.size();
  r.z = sum / std::sqrt(static_cast<double>(p.size()));
  r.p_one_sided = 0.5 * std::erfc(r.z / std::sqrt(2.0));
  r.p_two_sided = two_sided_p(r.z);
  return r;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw DataError("quantile of an empty set");
  std::sort(v.begin(), v.end());
  const double h = (v.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - lo) * (v[hi] - v[lo]);
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw DataError("summarize: no values");
  return {quantile(values, 0.5), quantile(values, 0.25), quantile(values, 0.75), values.size()};
}

KsResult ks_uniform(std::vector<double> values) {
  if (values.empty()) throw DataError("ks: no values");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  KsResult r;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double u = values[i];
    if (!(u >= 0.0 && u <= 1.0)) throw DataError("ks: value outside [0, 1]: " + std::to_string(u));
    r.d = std::max({r.d, (i + 1) / n - u, u - i / n});
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * r.d;
  if (lambda < 0.2) return r;  // series is 1 to double precision here
  double q = 0;
  for (int k = 1; k <= 100; ++k) q += (k % 2 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * lambda * lambda);
  r.p = std::clamp(q, 0.0, 1.0);
  return r;
}

// --- scoring table ---------------------------------------------------------

json to_json(const ScoringRow& r) {
  json j{{"readout_id", r.readout_id}, {"reader_id", r.reader_id},     {"session_id", r.session_id},
         {"item_id", r.item_id},       {"image_id", r.image_id},       {"truth_class", r.truth_class},
         {"provenance", r.provenance}, {"split", r.split},             {"stage", r.stage},
         {"pair_id", nullptr},         {"malignancy", r.malignancy},   {"manipulation", r.manipulation}};
  if (r.pair_id) j["pair_id"] = *r.pair_id;
  return j;
}

ScoringRow scoring_row_from_json(const json& j) {
  ScoringRow r;
  StrictReader rd(j, "scoring row");
  rd.opt("readout_id", r.readout_id);
  rd.opt("reader_id", r.reader_id);
  rd.opt("session_id", r.session_id);
  rd.opt("item_id", r.item_id);
  rd.opt("image_id", r.image_id);
  rd.opt("truth_class", r.truth_class);
  rd.opt("provenance", r.provenance);
  rd.opt("split", r.split);
  rd.opt("stage", r.stage);
  rd.opt("pair_id", r.pair_id);
  rd.opt("malignancy", r.malignancy);
  rd.opt("manipulation", r.manipulation);
  rd.finish();
  if (r.reader_id.empty() || r.item_id.empty()) throw DataError("scoring row without reader_id or item_id");
  if (r.truth_class != "healthy" && r.truth_class != "cancer")
    throw DataError("scoring row " + r.item_id + ": truth_class must be healthy or cancer");
  if (r.provenance != "original" && r.provenance != "modified")
    throw DataError("scoring row " + r.item_id + ": provenance must be original or modified");
  return r;
}

std::string scoring_csv_header() {
  return "readout_id,reader_id,session_id,item_id,image_id,truth_class,provenance,split,stage,pair_id,malignancy,"
         "manipulation";
}

std::string to_csv(const ScoringRow& r) {
  std::ostringstream o;
  o << r.readout_id << ',' << r.reader_id << ',' << r.session_id << ',' << r.item_id << ',' << r.image_id << ','
    << r.truth_class << ',' << r.provenance << ',' << r.split << ',' << r.stage << ',' << r.pair_id.value_or("")
    << ',' << r.malignancy << ',' << r.manipulation;
  return o.str();
}

std::vector<ScoringRow> read_scoring_table(const std::string& text) {
  std::vector<ScoringRow> rows;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (text[first] == '{') {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        rows.push_back(scoring_row_from_json(json::parse(line)));
      } catch (const json::exception& e) {
        throw DataError("scoring table line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    return rows;
  }
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (header.empty()) {
      header = cells;
      continue;
    }
    if (cells.size() != header.size()) {
      throw DataError("scoring table line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    }
    json j = json::object();
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& key = header[i];
      if (key == "malignancy" || key == "manipulation") {
        try {
          j[key] = std::stoi(cells[i]);
        } catch (const std::exception&) {
          throw DataError("scoring table line " + std::to_string(line_no) + ": " + key + " is not an integer");
        }
      } else if (key == "pair_id" && cells[i].empty()) {
        j[key] = nullptr;
      } else {
        j[key] = cells[i];
      }
    }
    rows.push_back(scoring_row_from_json(j));
  }
  return rows;
}

namespace {

struct Scored {
  std::vector<double> scores;
  std::vector<bool> truth;
  std::vector<double> pos() const {
    std::vector<double> v;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (truth[i]) v.push_back(scores[i]);
    return v;
  }
  std::vector<double> neg() const {
    std::vector<double> v;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (!truth[i]) v.push_back(scores[i]);
    return v;
  }
  bool both_classes() const {
    return std::find(truth.begin(), truth.end(), true) != truth.end() &&
           std::find(truth.begin(), truth.end(), false) != truth.end();
  }
};

enum class Measure { detection, manipulation };

Scored collect(const std::vector<const ScoringRow*>& rows, Measure m) {
  Scored s;
  for (const auto* r : rows) {
    s.scores.push_back(m == Measure::detection ? r->malignancy : r->manipulation);
    s.truth.push_back(m == Measure::detection ? r->truth_class == "cancer" : r->provenance == "modified");
  }
  return s;
}

struct Comparison {
  std::string name, description, label_1, label_2;
  Measure measure;
  std::function<bool(const ScoringRow&)> in_scope, in_1, in_2;
};

json combine(const std::vector<double>& ps, const ScoreOptions& o, std::vector<std::string>& warnings,
             const std::string& name) {
  std::vector<double> usable;
  for (double p : ps) {
    if (p > 0.0 && p < 1.0)
      usable.push_back(p);
    else
      warnings.push_back(name + ": p = " + std::to_string(p) + " left out of the combined p-value");
  }
  if (usable.empty()) return nullptr;
  const auto s = stouffer_combine(usable, o.one_sided_input);
  return json{{"z", s.z}, {"p_one_sided", s.p_one_sided}, {"p_two_sided", s.p_two_sided}, {"k", s.k}};
}

std::map<std::string, std::vector<const ScoringRow*>> by_reader(const std::vector<ScoringRow>& rows) {
  std::map<std::string, std::vector<const ScoringRow*>> m;
  for (const auto& r : rows) m[r.reader_id].push_back(&r);
  return m;
}

std::vector<Comparison> comparisons(const std::vector<ScoringRow>& rows) {
  const bool has_late = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.stage == "late"; });
  std::vector<Comparison> c;
  c.push_back({"original_vs_modified", "detection AUC (truth: original class) on original vs modified images",
               "original", "modified", Measure::detection, [](const ScoringRow&) { return true; },
               [](const ScoringRow& r) { return r.provenance == "original"; },
               [](const ScoringRow& r) { return r.provenance == "modified"; }});
  c.push_back({"evaluation_vs_test",
               "detection AUC (truth: original class) on evaluation vs test images" +
                   std::string(has_late ? ", late stage only" : ""),
               "evaluation", "test", Measure::detection,
               [has_late](const ScoringRow& r) { return !has_late || r.stage == "late"; },
               [](const ScoringRow& r) { return r.split == "eval"; },
               [](const ScoringRow& r) { return r.split == "test"; }});
  c.push_back({"late_vs_early", "manipulation AUC (truth: provenance) on late vs early training-stage images", "late",
               "early", Measure::manipulation, [](const ScoringRow&) { return true; },
               [](const ScoringRow& r) { return r.stage == "late"; },
               [](const ScoringRow& r) { return r.stage == "early"; }});
  return c;
}

// Restricts both sets to pairs present in each, ordered by pair id.
bool pair_up(const std::vector<const ScoringRow*>& a, const std::vector<const ScoringRow*>& b,
             std::vector<const ScoringRow*>& pa, std::vector<const ScoringRow*>& pb) {
  std::map<std::string, const ScoringRow*> ma, mb;
  for (const auto* r : a)
    if (r->pair_id) ma[*r->pair_id] = r;
  for (const auto* r : b)
    if (r->pair_id) mb[*r->pair_id] = r;
  for (const auto& [id, r] : ma) {
    auto it = mb.find(id);
    if (it == mb.end()) continue;
    pa.push_back(r);
    pb.push_back(it->second);
  }
  return !pa.empty();
}

json auc_json(const Scored& s) {
  const auto pos = s.pos(), neg = s.neg();
  return json{{"auc", auc_rank(pos, neg)}, {"n_pos", pos.size()}, {"n_neg", neg.size()}};
}

}  // namespace

json score_readout(const std::vector<ScoringRow>& rows, const ScoreOptions& options) {
  if (rows.empty()) throw DataError("score_readout: empty export");
  const auto readers = by_reader(rows);
  std::vector<std::string> warnings;
  json report;
  std::set<std::string> readout_ids;
  for (const auto& r : rows) readout_ids.insert(r.readout_id);
  report["readout_ids"] = readout_ids;
  report["readers"] = json::array();
  for (const auto& [id, _] : readers) report["readers"].push_back(id);
  report["options"] = {{"paired", options.paired}, {"one_sided_input", options.one_sided_input}};
  report["analyses"] = json::object();

  for (const auto& cmp : comparisons(rows)) {
    json a{{"description", cmp.description}, {"set_1", cmp.label_1}, {"set_2", cmp.label_2}};
    const bool paired = options.paired && cmp.name == "original_vs_modified";
    a["test"] = paired ? "delong_paired" : "delong_unpaired";
    a["readers"] = json::array();
    std::vector<double> ps;
    bool any = false;
    for (const auto& [reader, rr] : readers) {
      std::vector<const ScoringRow*> s1, s2;
      for (const auto* r : rr) {
        if (!cmp.in_scope(*r)) continue;
        if (cmp.in_1(*r)) s1.push_back(r);
        if (cmp.in_2(*r)) s2.push_back(r);
      }
      if (paired) {
        std::vector<const ScoringRow*> p1, p2;
        pair_up(s1, s2, p1, p2);
        s1 = p1;
        s2 = p2;
      }
      const auto a1 = collect(s1, cmp.measure), a2 = collect(s2, cmp.measure);
      if (!a1.both_classes() || !a2.both_classes()) {
        warnings.push_back(cmp.name + ": reader " + reader + " lacks a stratum, skipped");
        continue;
      }
      any = true;
      json row{{"reader", reader}, {"set_1", auc_json(a1)}, {"set_2", auc_json(a2)}};
      try {
        const auto d = delong_test(a1.scores, a1.truth, a2.scores, a2.truth, paired);
        row["delta"] = d.delta;
        row["z"] = d.z;
        row["p"] = d.p_two_sided;
        ps.push_back(d.p_two_sided);
      } catch (const NumericError& e) {
        row["p"] = nullptr;
        warnings.push_back(cmp.name + ": reader " + reader + ": " + e.what());
      }
      a["readers"].push_back(row);
    }
    if (!any) {
      warnings.push_back(cmp.name + ": no reader has both strata, analysis skipped");
      continue;
    }
    a["combined"] = combine(ps, options, warnings, cmp.name);
    report["analyses"][cmp.name] = a;
  }

  json m{{"description", "manipulation AUC (truth: provenance) against chance, all images"}, {"readers", json::array()}};
  std::vector<double> ps;
  for (const auto& [reader, rr] : readers) {
    const auto s = collect(rr, Measure::manipulation);
    if (!s.both_classes()) {
      warnings.push_back("manipulation: reader " + reader + " saw only one provenance, skipped");
      continue;
    }
    json row{{"reader", reader}, {"set", auc_json(s)}};
    try {
      const auto c = auc_vs_chance(s.pos(), s.neg());
      row["z"] = c.z;
      row["p"] = c.p_two_sided;
      ps.push_back(c.p_two_sided);
    } catch (const NumericError& e) {
      row["p"] = nullptr;
      warnings.push_back("manipulation: reader " + reader + ": " + e.what());
    }
    m["readers"].push_back(row);
  }
  if (!m["readers"].empty()) {
    m["combined"] = combine(ps, options, warnings, "manipulation");
    report["analyses"]["manipulation"] = m;
  }

  json summaries = json::object();
  for (const char* cls : {"healthy", "cancer"})
    for (const char* prov : {"original", "modified"}) {
      std::vector<double> v;
      for (const auto& r : rows)
        if (r.truth_class == cls && r.provenance == prov) v.push_back(r.malignancy);
      if (v.empty()) continue;
      const auto s = summarize(v);
      summaries["malignancy"][std::string(cls) + "_" + prov] = {
          {"median", s.median}, {"q1", s.q1}, {"q3", s.q3}, {"n", s.n}};
    }
  for (const char* prov : {"original", "modified"}) {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.provenance == prov) v.push_back(r.manipulation);
    if (v.empty()) continue;
    const auto s = summarize(v);
    summaries["manipulation"][prov] = {{"median", s.median}, {"q1", s.q1}, {"q3", s.q3}, {"n", s.n}};
  }
  report["summaries"] = summaries;
  report["warnings"] = warnings;
  return report;
}

std::string roc_curves_csv(const std::vector<ScoringRow>& rows) {
  std::ostringstream out;
  out.precision(12);
  out << "analysis,reader,set,threshold,fpr,tpr\n";
  auto emit = [&](const std::string& analysis, const std::string& reader, const std::string& set, const Scored& s) {
    if (!s.both_classes()) return;
    const auto r = roc_and_auc(s.pos(), s.neg());
    for (std::size_t i = 0; i < r.curve.points.size(); ++i) {
      out << analysis << ',' << reader << ',' << set << ',';
      if (i == 0)
        out << "inf";
      else
        out << r.curve.thresholds[i - 1];
      out << ',' << r.curve.points[i].fpr << ',' << r.curve.points[i].tpr << '\n';
    }
  };
  for (const auto& [reader, rr] : by_reader(rows)) {
    for (const auto& cmp : comparisons(rows)) {
      std::vector<const ScoringRow*> s1, s2;
      for (const auto* r : rr) {
        if (!cmp.in_scope(*r)) continue;
        if (cmp.in_1(*r)) s1.push_back(r);
        if (cmp.in_2(*r)) s2.push_back(r);
      }
      emit(cmp.name, reader, cmp.label_1, collect(s1, cmp.measure));
      emit(cmp.name, reader, cmp.label_2, collect(s2, cmp.measure));
    }
    emit("manipulation", reader, "all", collect(rr, Measure::manipulation));
  }
  return out.str();
}

}  // namespace mammogan
