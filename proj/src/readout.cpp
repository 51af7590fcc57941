#include "mammogan/readout.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "mammogan/artifact.hpp"
#include "mammogan/errors.hpp"
#include "mammogan/phantom.hpp"
#include "mammogan/seeds.hpp"

namespace mammogan {

std::string to_string(ManipulationScale s) { return s == ManipulationScale::binary ? "binary" : "likert5"; }

ManipulationScale manipulation_scale_from_string(const std::string& s) {
  if (s == "binary") return ManipulationScale::binary;
  if (s == "likert5") return ManipulationScale::likert5;
  throw DataError("unknown manipulation scale '" + s + "' (binary|likert5)");
}

std::string to_string(SessionStatus s) { return s == SessionStatus::active ? "active" : "complete"; }

// --- designs -------------------------------------------------------------------

void ReadoutDesign::validate() const {
  if (name.empty()) throw DataError("readout design without a name");
  if (groups.empty()) throw DataError("readout design " + name + " has no groups");
  std::size_t sum = 0;
  for (const auto& g : groups) {
    if (g.stage.empty()) throw DataError("readout design " + name + ": group without a stage name");
    if (g.split == Split::train) throw DataError("readout design " + name + ": groups draw from eval or test only");
    if ((g.pairs.total() || g.single_modified.total()) && g.source_iteration.empty())
      throw DataError("readout design " + name + ": group " + g.stage + " has modified items but no source_iteration");
    sum += g.items();
  }
  if (sum != total_items) {
    throw DataError("readout design " + name + ": groups add up to " + std::to_string(sum) + " items, total_items is " +
                    std::to_string(total_items));
  }
}

std::size_t ReadoutDesign::count_modified() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.pairs.total() + g.single_modified.total();
  return n;
}

std::size_t ReadoutDesign::count_original() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.pairs.total() + g.single_original.total();
  return n;
}

ReadoutDesign readout1_design() {
  ReadoutDesign d;
  d.name = "readout-1";
  d.total_items = 60;
  d.manipulation_scale = ManipulationScale::binary;
  d.groups.push_back({"main", Split::eval, "main", {10, 10}, {5, 5}, {5, 5}});
  return d;
}

// 18 early-stage items and 27 late-stage items from each of eval and test.
ReadoutDesign readout2_design() {
  ReadoutDesign d;
  d.name = "readout-2";
  d.total_items = 72;
  d.manipulation_scale = ManipulationScale::likert5;
  d.groups.push_back({"early", Split::eval, "early", {3, 3}, {2, 1}, {1, 2}});
  d.groups.push_back({"late", Split::eval, "late", {4, 3}, {2, 4}, {3, 4}});
  d.groups.push_back({"late", Split::test, "late", {3, 4}, {4, 3}, {4, 2}});
  return d;
}

ReadoutDesign design_by_name(const std::string& name) {
  if (name == "readout-1") return readout1_design();
  if (name == "readout-2") return readout2_design();
  throw DataError("unknown readout design '" + name + "' (readout-1|readout-2)");
}

namespace {

json counts_json(const ClassCounts& c) { return json{{"cancer", c.cancer}, {"healthy", c.healthy}}; }

ClassCounts counts_from_json(const json* j, const std::string& context) {
  ClassCounts c;
  if (!j) return c;
  StrictReader r(*j, context);
  r.opt("cancer", c.cancer).opt("healthy", c.healthy).finish();
  return c;
}

}  // namespace

json to_json(const ReadoutDesign& d) {
  json groups = json::array();
  for (const auto& g : d.groups) {
    groups.push_back({{"stage", g.stage},
                      {"split", to_string(g.split)},
                      {"source_iteration", g.source_iteration},
                      {"pairs", counts_json(g.pairs)},
                      {"single_original", counts_json(g.single_original)},
                      {"single_modified", counts_json(g.single_modified)}});
  }
  return json{{"name", d.name},
              {"total_items", d.total_items},
              {"manipulation_scale", to_string(d.manipulation_scale)},
              {"min_pair_separation", d.min_pair_separation},
              {"visible_mass_filter", d.visible_mass_filter},
              {"groups", groups}};
}

ReadoutDesign readout_design_from_json(const json& j) {
  ReadoutDesign d;
  StrictReader r(j, "design");
  std::string scale = "binary";
  r.opt("name", d.name).opt("total_items", d.total_items).opt("manipulation_scale", scale);
  r.opt("min_pair_separation", d.min_pair_separation).opt("visible_mass_filter", d.visible_mass_filter);
  d.manipulation_scale = manipulation_scale_from_string(scale);
  if (const json* gs = r.sub("groups")) {
    if (!gs->is_array()) throw DataError("design.groups: expected an array");
    for (const auto& gj : *gs) {
      DesignGroup g;
      StrictReader gr(gj, "design.groups[]");
      std::string split = "eval";
      gr.opt("stage", g.stage).opt("split", split).opt("source_iteration", g.source_iteration);
      g.split = split_from_string(split);
      g.pairs = counts_from_json(gr.sub("pairs"), "pairs");
      g.single_original = counts_from_json(gr.sub("single_original"), "single_original");
      g.single_modified = counts_from_json(gr.sub("single_modified"), "single_modified");
      gr.finish();
      d.groups.push_back(g);
    }
  }
  r.finish();
  d.validate();
  return d;
}

// --- readouts -------------------------------------------------------------------

const ReadoutItem& Readout::item(const std::string& item_id) const {
  for (const auto& it : items)
    if (it.item_id == item_id) return it;
  throw DataError("readout " + readout_id + " has no item " + item_id);
}

json to_json(const Readout& r) {
  json items = json::array();
  for (const auto& it : r.items) {
    json j{{"item_id", it.item_id},
           {"image_id", it.image_id},
           {"original_id", it.original_id},
           {"truth_class", to_string(it.truth_class)},
           {"provenance", to_string(it.provenance)},
           {"split", to_string(it.split)},
           {"stage", it.stage},
           {"source_iteration", nullptr},
           {"pair_id", nullptr}};
    if (it.source_iteration) j["source_iteration"] = *it.source_iteration;
    if (it.pair_id) j["pair_id"] = *it.pair_id;
    items.push_back(j);
  }
  return json{{"readout_id", r.readout_id}, {"seed", r.seed}, {"design", to_json(r.design)}, {"items", items}};
}

Readout readout_from_json(const json& j) {
  Readout r;
  StrictReader rd(j, "readout");
  rd.opt("readout_id", r.readout_id).opt("seed", r.seed);
  if (const json* d = rd.sub("design")) r.design = readout_design_from_json(*d);
  if (const json* items = rd.sub("items")) {
    for (const auto& ij : *items) {
      ReadoutItem it;
      StrictReader ir(ij, "readout.items[]");
      std::string cls, prov, split;
      ir.opt("item_id", it.item_id).opt("image_id", it.image_id).opt("original_id", it.original_id);
      ir.opt("truth_class", cls).opt("provenance", prov).opt("split", split).opt("stage", it.stage);
      ir.opt("source_iteration", it.source_iteration).opt("pair_id", it.pair_id);
      ir.finish();
      it.truth_class = image_class_from_string(cls);
      it.provenance = provenance_from_string(prov);
      it.split = split_from_string(split);
      r.items.push_back(it);
    }
  }
  rd.finish();
  if (r.items.size() != r.design.total_items) {
    throw DataError("readout " + r.readout_id + " lists " + std::to_string(r.items.size()) + " items, design has " +
                    std::to_string(r.design.total_items));
  }
  return r;
}

std::size_t min_pair_distance(const Readout& r) {
  std::map<std::string, std::vector<std::size_t>> pos;
  for (std::size_t i = 0; i < r.items.size(); ++i)
    if (r.items[i].pair_id) pos[*r.items[i].pair_id].push_back(i);
  std::size_t best = std::numeric_limits<std::size_t>::max();
  for (const auto& [_, p] : pos)
    if (p.size() == 2) best = std::min(best, p[1] - p[0]);
  return best;
}

namespace {

enum class Kind { pair, single_modified, single_original };

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::pair: return "pair";
    case Kind::single_modified: return "single-modified";
    case Kind::single_original: return "single-original";
  }
  return "";
}

std::size_t pick(const ClassCounts& c, ImageClass cls) { return cls == ImageClass::cancer ? c.cancer : c.healthy; }

}  // namespace

Readout build_readout(const ReadoutDesign& design, const DatasetManifest& manifest,
                      const std::map<std::string, double>& mass_scores, std::uint64_t seed, std::string readout_id) {
  design.validate();
  Readout out;
  out.design = design;
  out.seed = seed;
  out.readout_id = readout_id.empty() ? design.name + "-" + std::to_string(seed) : std::move(readout_id);

  double threshold = -std::numeric_limits<double>::infinity();
  if (design.visible_mass_filter) {
    std::vector<double> scores;
    for (const auto& r : manifest.records) {
      if (r.cls != ImageClass::cancer || r.provenance != Provenance::original) continue;
      if (auto it = mass_scores.find(r.id); it != mass_scores.end()) scores.push_back(it->second);
    }
    if (scores.empty()) throw DataError(design.name + ": visible-mass filter needs lesion-oracle scores of cancer originals");
    threshold = median(scores);
  }
  auto visible = [&](const ImageRecord& r) {
    if (r.cls != ImageClass::cancer || !design.visible_mass_filter) return true;
    auto it = mass_scores.find(r.id);
    return it != mass_scores.end() && it->second >= threshold;
  };

  std::map<std::pair<std::string, std::string>, const ImageRecord*> modified;
  for (const auto& r : manifest.records)
    if (r.provenance == Provenance::modified && r.original_id && r.source_iteration)
      modified[{*r.original_id, *r.source_iteration}] = &r;

  std::mt19937_64 rng(derive_seed({seed, tag("readout"), tag(design.name)}));
  std::set<std::string> used;
  std::vector<ReadoutItem> items;
  int pair_counter = 0;

  for (std::size_t gi = 0; gi < design.groups.size(); ++gi) {
    const auto& g = design.groups[gi];
    for (Kind kind : {Kind::pair, Kind::single_modified, Kind::single_original}) {
      const ClassCounts& counts =
          kind == Kind::pair ? g.pairs : (kind == Kind::single_modified ? g.single_modified : g.single_original);
      for (ImageClass cls : {ImageClass::cancer, ImageClass::healthy}) {
        const std::size_t need = pick(counts, cls);
        if (need == 0) continue;
        const bool needs_modified = kind != Kind::single_original;
        std::vector<const ImageRecord*> candidates;
        for (const auto* r : manifest.select(cls, g.split)) {
          if (used.count(r->id) || !visible(*r)) continue;
          if (needs_modified && !modified.count({r->id, g.source_iteration})) continue;
          candidates.push_back(r);
        }
        if (candidates.size() < need) {
          throw DataError(design.name + ": group " + std::to_string(gi + 1) + " (" + g.stage + "/" +
                          to_string(g.split) + ") needs " + std::to_string(need) + " " + kind_name(kind) + " " +
                          to_string(cls) + " images" +
                          (needs_modified ? " with a modified version at iteration '" + g.source_iteration + "'" : "") +
                          (cls == ImageClass::cancer && design.visible_mass_filter ? " and a visible mass" : "") +
                          ", found " + std::to_string(candidates.size()));
        }
        std::shuffle(candidates.begin(), candidates.end(), rng);
        for (std::size_t k = 0; k < need; ++k) {
          const ImageRecord& orig = *candidates[k];
          used.insert(orig.id);
          ReadoutItem base;
          base.original_id = orig.id;
          base.truth_class = cls;
          base.split = g.split;
          base.stage = g.stage;
          if (kind == Kind::pair) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "p%02d", ++pair_counter);
            base.pair_id = buf;
          }
          if (kind != Kind::single_modified) {
            ReadoutItem it = base;
            it.image_id = orig.id;
            it.provenance = Provenance::original;
            items.push_back(it);
          }
          if (needs_modified) {
            ReadoutItem it = base;
            const ImageRecord& mod = *modified.at({orig.id, g.source_iteration});
            it.image_id = mod.id;
            it.provenance = Provenance::modified;
            it.source_iteration = g.source_iteration;
            items.push_back(it);
          }
        }
      }
    }
  }

  // Rejection sampling of presentation orders until pairs are far enough apart.
  const int max_attempts = 200000;
  int attempt = 0;
  for (;; ++attempt) {
    if (attempt == max_attempts) {
      throw DataError(design.name + ": no presentation order keeps pairs " +
                      std::to_string(design.min_pair_separation) + " positions apart");
    }
    std::shuffle(items.begin(), items.end(), rng);
    out.items = items;
    if (design.min_pair_separation == 0 || min_pair_distance(out) >= design.min_pair_separation) break;
  }
  for (std::size_t i = 0; i < out.items.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "i%03zu", i + 1);
    out.items[i].item_id = buf;
  }
  return out;
}

// --- sessions --------------------------------------------------------------------

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ReadoutService::ReadoutService(Readout readout, std::filesystem::path log_path, Clock clock)
    : readout_(std::move(readout)), log_path_(std::move(log_path)), clock_(std::move(clock)) {
  for (std::size_t i = 0; i < readout_.items.size(); ++i) item_index_[readout_.items[i].item_id] = i;
  const bool fresh = !std::filesystem::exists(log_path_) || std::filesystem::file_size(log_path_) == 0;
  if (!fresh) replay();
  log_ = std::fopen(log_path_.c_str(), "ab");
  if (!log_) throw DataError("cannot open event log " + log_path_.string());
  if (fresh) append({{"type", "readout"}, {"readout_id", readout_.readout_id}});
}

ReadoutService::~ReadoutService() {
  if (log_) std::fclose(log_);
}

void ReadoutService::append(const json& event) {
  const std::string line = event.dump() + "\n";
  if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0 ||
      ::fsync(::fileno(log_)) != 0) {
    throw DataError("cannot append to event log " + log_path_.string());
  }
}

void ReadoutService::replay() {
  std::ifstream in(log_path_, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t offset = 0, line_no = 0;
  bool header = false;
  while (offset < text.size()) {
    const auto nl = text.find('\n', offset);
    const bool torn = nl == std::string::npos;
    const std::string line = text.substr(offset, torn ? std::string::npos : nl - offset);
    ++line_no;
    json ev;
    try {
      ev = json::parse(line);
    } catch (const json::exception&) {
      if (torn) {
        // A write interrupted mid-line never acknowledged its event.
        std::filesystem::resize_file(log_path_, offset);
        break;
      }
      throw DataError("event log " + log_path_.string() + " line " + std::to_string(line_no) + " is not JSON");
    }
    const std::string type = ev.value("type", "");
    if (!header) {
      if (type != "readout" || ev.value("readout_id", "") != readout_.readout_id) {
        throw DataError("event log " + log_path_.string() + " does not belong to readout " + readout_.readout_id);
      }
      header = true;
    } else if (type == "session_created") {
      Session s;
      s.state.session_id = ev.at("session_id").get<std::string>();
      s.state.reader_id = ev.at("reader_id").get<std::string>();
      s.ratings.resize(readout_.items.size());
      if (!sessions_.emplace(s.state.session_id, s).second)
        throw DataError("event log line " + std::to_string(line_no) + ": duplicate session " + s.state.session_id);
    } else if (type == "rating") {
      auto it = sessions_.find(ev.at("session_id").get<std::string>());
      if (it == sessions_.end()) throw DataError("event log line " + std::to_string(line_no) + ": unknown session");
      RatingSubmission r{ev.at("item_id").get<std::string>(), ev.at("malignancy").get<int>(),
                         ev.at("manipulation").get<int>()};
      try {
        validate_rating(r);
        apply_rating(it->second, r);
      } catch (const ServiceError& e) {
        throw DataError("event log line " + std::to_string(line_no) + ": " + e.what());
      }
    } else {
      throw DataError("event log line " + std::to_string(line_no) + ": unknown event type '" + type + "'");
    }
    if (torn) break;
    offset = nl + 1;
  }
}

std::string ReadoutService::create_session(const std::string& reader_id) {
  static const std::regex valid("[A-Za-z0-9_.-]{1,64}");
  if (!std::regex_match(reader_id, valid)) throw ServiceError(400, "reader_id must match [A-Za-z0-9_.-]{1,64}");
  std::lock_guard lock(mutex_);
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%04zu", sessions_.size() + 1);
  Session s;
  s.state.session_id = buf;
  s.state.reader_id = reader_id;
  s.ratings.resize(readout_.items.size());
  append({{"type", "session_created"}, {"session_id", buf}, {"reader_id", reader_id}, {"timestamp", clock_()}});
  sessions_.emplace(buf, std::move(s));
  return buf;
}

const ReadoutService::Session& ReadoutService::get(const std::string& session_id) const {
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session " + session_id);
  return it->second;
}

SessionState ReadoutService::session(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  return get(session_id).state;
}

std::vector<SessionState> ReadoutService::sessions() const {
  std::lock_guard lock(mutex_);
  std::vector<SessionState> out;
  for (const auto& [_, s] : sessions_) out.push_back(s.state);
  return out;
}

json ReadoutService::scales_payload() const {
  json man = readout_.design.manipulation_scale == ManipulationScale::binary
                 ? json{{"type", "binary"}, {"min", 0}, {"max", 1}}
                 : json{{"type", "likert5"}, {"min", 1}, {"max", 5}};
  return json{{"malignancy", {{"type", "likert5"}, {"min", 1}, {"max", 5}}}, {"manipulation", man}};
}

json ReadoutService::session_payload(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  const auto& s = get(session_id);
  return json{{"session_id", s.state.session_id},
              {"reader_id", s.state.reader_id},
              {"readout_id", readout_.readout_id},
              {"rated", s.state.cursor},
              {"total", readout_.items.size()},
              {"status", to_string(s.state.status)}};
}

json ReadoutService::next_item(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  const auto& s = get(session_id);
  if (s.state.status == SessionStatus::complete)
    return json{{"session_id", session_id}, {"status", "complete"}, {"total", readout_.items.size()}};
  const auto& item = readout_.items[s.state.cursor];
  return json{{"session_id", session_id},
              {"status", "active"},
              {"item_id", item.item_id},
              {"image_url", "/images/" + item.item_id + ".png"},
              {"position", s.state.cursor + 1},
              {"total", readout_.items.size()},
              {"scales", scales_payload()}};
}

void ReadoutService::validate_rating(const RatingSubmission& r) const {
  if (r.malignancy < 1 || r.malignancy > 5) throw ServiceError(422, "malignancy rating must be 1-5");
  const bool binary = readout_.design.manipulation_scale == ManipulationScale::binary;
  if (binary ? (r.manipulation < 0 || r.manipulation > 1) : (r.manipulation < 1 || r.manipulation > 5))
    throw ServiceError(422, binary ? "manipulation rating must be 0 or 1" : "manipulation rating must be 1-5");
}

void ReadoutService::apply_rating(Session& s, const RatingSubmission& r) {
  auto idx = item_index_.find(r.item_id);
  if (idx == item_index_.end()) throw ServiceError(404, "unknown item " + r.item_id);
  if (s.ratings[idx->second]) throw ServiceError(409, "item " + r.item_id + " already rated in this session");
  if (s.state.status == SessionStatus::complete) throw ServiceError(409, "session is complete");
  if (idx->second != s.state.cursor) throw ServiceError(409, "item " + r.item_id + " is not the current item");
  s.ratings[idx->second] = std::pair{r.malignancy, r.manipulation};
  if (++s.state.cursor == readout_.items.size()) s.state.status = SessionStatus::complete;
}

json ReadoutService::submit_rating(const std::string& session_id, const RatingSubmission& r) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session " + session_id);
  validate_rating(r);
  // Dry run on a copy so that a rejected rating never reaches the log.
  Session trial = it->second;
  apply_rating(trial, r);
  append({{"type", "rating"},
          {"session_id", session_id},
          {"item_id", r.item_id},
          {"malignancy", r.malignancy},
          {"manipulation", r.manipulation},
          {"timestamp", clock_()}});
  it->second = std::move(trial);
  const auto& s = it->second.state;
  return json{{"session_id", session_id},
              {"accepted", true},
              {"rated", s.cursor},
              {"total", readout_.items.size()},
              {"status", to_string(s.status)}};
}

std::vector<ScoringRow> ReadoutService::export_ratings(std::vector<std::string>* warnings) const {
  std::lock_guard lock(mutex_);
  std::vector<ScoringRow> rows;
  for (const auto& [id, s] : sessions_) {
    if (s.state.status != SessionStatus::complete) {
      if (warnings)
        warnings->push_back("session " + id + " (reader " + s.state.reader_id + ") incomplete: " +
                            std::to_string(s.state.cursor) + " of " + std::to_string(readout_.items.size()) +
                            " rated, excluded");
      continue;
    }
    for (std::size_t i = 0; i < readout_.items.size(); ++i) {
      const auto& item = readout_.items[i];
      ScoringRow r;
      r.readout_id = readout_.readout_id;
      r.reader_id = s.state.reader_id;
      r.session_id = id;
      r.item_id = item.item_id;
      r.image_id = item.image_id;
      r.truth_class = to_string(item.truth_class);
      r.provenance = to_string(item.provenance);
      r.split = to_string(item.split);
      r.stage = item.stage;
      r.pair_id = item.pair_id;
      r.malignancy = s.ratings[i]->first;
      r.manipulation = s.ratings[i]->second;
      rows.push_back(std::move(r));
    }
  }
  if (rows.empty()) throw DataError("readout " + readout_.readout_id + " has no complete session");
  return rows;
}

std::vector<ScoringRow> export_from_log(const Readout& readout, const std::filesystem::path& log_path,
                                        std::vector<std::string>* warnings) {
  if (!std::filesystem::exists(log_path)) throw DataError("no event log at " + log_path.string());
  ReadoutService replayed(readout, log_path);
  return replayed.export_ratings(warnings);
}

bool contains_truth(const json& payload) {
  static const std::set<std::string> keys{"truth_class", "class",  "cls",   "label",     "provenance",
                                          "split",       "stage",  "truth", "image_id",  "original_id",
                                          "pair_id",     "source_iteration"};
  static const std::vector<std::string> words{"healthy", "cancer", "modified", "original"};
  if (payload.is_object()) {
    for (const auto& [k, v] : payload.items())
      if (keys.count(k) || contains_truth(v)) return true;
  } else if (payload.is_array()) {
    for (const auto& v : payload)
      if (contains_truth(v)) return true;
  } else if (payload.is_string()) {
    std::string s = payload.get<std::string>();
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    for (const auto& w : words)
      if (s.find(w) != std::string::npos) return true;
  }
  return false;
}

// --- packages ---------------------------------------------------------------------

void write_readout_package(const std::filesystem::path& dir, const Readout& r, const ImageResolver& images) {
  std::filesystem::create_directories(dir / "images");
  for (const auto& item : r.items) write_png8(dir / "images" / (item.item_id + ".png"), images(item), 0.0f, 2.0f);
  std::ofstream(dir / "readout.json") << canonical_dump(to_json(r));
}

Readout read_readout_package(const std::filesystem::path& dir) {
  std::ifstream in(dir / "readout.json");
  if (!in) throw DataError("no readout.json in " + dir.string());
  try {
    return readout_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError("readout.json in " + dir.string() + ": " + e.what());
  }
}

// --- simulated readers -------------------------------------------------------------

void simulate_readers(ReadoutService& service, const std::filesystem::path& package_dir, const PhantomSpec& spec,
                      const std::vector<SimulatedReader>& readers, const ReaderCalibration& cal) {
  const bool binary = service.readout().design.manipulation_scale == ManipulationScale::binary;
  std::map<std::string, std::pair<double, double>> features;
  for (const auto& item : service.readout().items) {
    const auto img = read_png(package_dir / "images" / (item.item_id + ".png"));
    features[item.item_id] = {lesion_oracle_score(img, spec), grid_score(img)};
  }
  for (const auto& reader : readers) {
    const auto sid = service.create_session(reader.reader_id);
    std::mt19937_64 rng(derive_seed({reader.seed, tag(reader.reader_id)}));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (;;) {
      const auto next = service.next_item(sid);
      if (next["status"] == "complete") break;
      const std::string item_id = next["item_id"];
      const auto [mass, grid] = features.at(item_id);
      const double m = 3.0 + cal.mass_slope * (mass - cal.mass_threshold) + reader.malignancy_noise * noise(rng);
      const double g = cal.grid_slope * (grid - cal.grid_threshold) + reader.manipulation_noise * noise(rng);
      RatingSubmission r;
      r.item_id = item_id;
      r.malignancy = static_cast<int>(std::clamp(std::round(m), 1.0, 5.0));
      r.manipulation = binary ? (g > 0 ? 1 : 0) : static_cast<int>(std::clamp(std::round(3.0 + g), 1.0, 5.0));
      service.submit_rating(sid, r);
    }
  }
}

}  // namespace mammogan
