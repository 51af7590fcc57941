#include "mammogan/pipeline.hpp"

#include <fftw3.h>
#include <openssl/opensslv.h>
#include <png.h>

#include <Eigen/Core>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "mammogan/artifact.hpp"
#include "mammogan/errors.hpp"
#include "mammogan/hash.hpp"
#include "mammogan/phantom.hpp"
#include "mammogan/seeds.hpp"
#include "mammogan/version.hpp"

namespace mammogan {

namespace fs = std::filesystem;

namespace {

void say(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Hash over every regular file below `dir`, by sorted relative path.
std::string dir_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  if (fs::exists(dir))
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  std::string lines;
  for (const auto& f : files) lines += f.generic_string() + " " + sha256_file(dir / f) + "\n";
  return sha256_hex(lines);
}

json seeds_of(const ExperimentConfig& c) {
  return {{"dataset", c.dataset.seed},
          {"train", c.train.seed},
          {"readout", c.readout_seed},
          {"readers", c.readers.seed}};
}

// Config as hashed into artifact manifests: paths and serving excluded.
std::string experiment_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("workdir");
  j.erase("serve");
  return sha256_hex(canonical_dump(j));
}

void write_artifact_manifest(const fs::path& dir, const std::string& stage, const ExperimentConfig& c, json extra,
                             const std::vector<std::string>& files, const std::vector<std::string>& subdirs = {}) {
  json m{{"stage", stage},
         {"experiment", c.name},
         {"experiment_hash", experiment_hash(c)},
         {"data_hash", data_hash(c)},
         {"versions", software_versions()},
         {"seeds", seeds_of(c)}};
  json hashes = json::object();
  for (const auto& f : files) hashes[f] = sha256_file(dir / f);
  for (const auto& d : subdirs) hashes[d + "/"] = dir_digest(dir / d);
  m["files"] = hashes;
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text(dir / "artifact.json", canonical_dump(m));
}

json read_artifact_manifest(const fs::path& dir, const std::string& producer) {
  const auto path = dir / "artifact.json";
  if (!fs::exists(path)) throw DataError("'" + dir.string() + "' has no artifact.json; run " + producer + " first");
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void require_hash(const json& manifest, const std::string& key, const std::string& expected, const fs::path& dir,
                  const std::string& producer) {
  const std::string got = manifest.value(key, std::string());
  if (got != expected) {
    throw DataError("'" + dir.string() + "' was built with " + key + " " + got.substr(0, 12) +
                    " but the current config gives " + expected.substr(0, 12) + "; rerun " + producer +
                    " with this config or use the config it was built from");
  }
}

void require_data(const ExperimentConfig& c) {
  require_hash(read_artifact_manifest(c.data_dir(), "gen-data"), "data_hash", data_hash(c), c.data_dir(), "gen-data");
}

CycleGan load_checkpoint(const ExperimentConfig& c, const fs::path& path) {
  if (!fs::exists(path)) throw DataError("checkpoint '" + path.string() + "' not found; run train first");
  const auto header = read_checkpoint_header(path);
  const auto expected = train_hash(c);
  if (header.config_hash != expected) {
    throw DataError("checkpoint '" + path.string() + "' has architecture hash " + header.config_hash.substr(0, 12) +
                    " but the current config gives " + expected.substr(0, 12) +
                    "; resolution or generator/discriminator settings changed since training");
  }
  return CycleGan::load(path, c.train);
}

std::vector<ImageRecord> read_records(const fs::path& path) {
  std::vector<ImageRecord> out;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(image_record_from_json(json::parse(line)));
  return out;
}

std::set<std::string> design_source_tags(const ReadoutDesign& d) {
  std::set<std::string> tags;
  for (const auto& g : d.groups)
    if (!g.source_iteration.empty()) tags.insert(g.source_iteration);
  return tags;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

// --- configuration -------------------------------------------------------------

const StageSpec& ExperimentConfig::stage(const std::string& tag) const {
  for (const auto& s : stages)
    if (s.tag == tag) return s;
  std::string known;
  for (const auto& s : stages) known += " " + s.tag;
  throw DataError("no stage '" + tag + "' in the config (stages:" + known + ")");
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw DataError("config: empty name");
  dataset.phantom.validate();
  train.validate();
  if (train.height != dataset.phantom.height || train.width != dataset.phantom.width) {
    throw DataError("config: train resolution " + std::to_string(train.height) + "x" + std::to_string(train.width) +
                    " differs from the phantom resolution " + std::to_string(dataset.phantom.height) + "x" +
                    std::to_string(dataset.phantom.width));
  }
  if (stages.empty()) throw DataError("config: no stages");
  std::set<std::string> tags;
  for (const auto& s : stages) {
    if (s.tag.empty() || s.tag.find_first_of("/\\@ ") != std::string::npos)
      throw DataError("config: stage tag '" + s.tag + "' must be non-empty without '/', '@' or spaces");
    if (!tags.insert(s.tag).second) throw DataError("config: duplicate stage tag '" + s.tag + "'");
    if (s.step == 0 || s.step > train.total_steps) {
      throw DataError("config: stage '" + s.tag + "' at step " + std::to_string(s.step) + " is outside 1.." +
                      std::to_string(train.total_steps));
    }
  }
  design.validate();
  for (const auto& g : design.groups)
    if (!g.source_iteration.empty() && !tags.count(g.source_iteration))
      throw DataError("config: readout group " + g.stage + " uses stage '" + g.source_iteration + "' which is not in stages");
  if (artifact_images == 0) throw DataError("config: artifact_images must be positive");
}

ExperimentConfig exp1_defaults() { return {}; }

ExperimentConfig exp2_defaults() {
  ExperimentConfig c;
  c.name = "exp2";
  c.workdir = "work/exp2";
  c.dataset.phantom.height = 128;
  c.dataset.phantom.width = 104;
  c.train.height = 128;
  c.train.width = 104;
  c.stages = {{"early", 2500}, {"late", 5000}};
  c.design = readout2_design();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json train = to_json(c.train);
  train.erase("height");
  train.erase("width");
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back({{"tag", s.tag}, {"step", s.step}});
  const auto& cal = c.readers.calibration;
  json j{{"name", c.name},
         {"workdir", c.workdir.string()},
         {"dataset",
          {{"phantom", to_json(c.dataset.phantom)},
           {"cancer", c.dataset.cancer},
           {"healthy", c.dataset.healthy},
           {"fractions",
            {{"train", c.dataset.fractions.train}, {"eval", c.dataset.fractions.eval}, {"test", c.dataset.fractions.test}}},
           {"seed", c.dataset.seed},
           {"import_csv", c.import_csv ? json(c.import_csv->string()) : json(nullptr)}}},
         {"train", train},
         {"stages", stages},
         {"readout",
          {{"design", to_json(c.design)},
           {"seed", c.readout_seed},
           {"id", c.readout_id ? json(*c.readout_id) : json(nullptr)}}},
         {"artifact_images", c.artifact_images},
         {"readers",
          {{"count", c.readers.count},
           {"seed", c.readers.seed},
           {"malignancy_noise", c.readers.malignancy_noise},
           {"manipulation_noise", c.readers.manipulation_noise},
           {"calibration",
            {{"mass_threshold", cal.mass_threshold},
             {"mass_slope", cal.mass_slope},
             {"grid_threshold", cal.grid_threshold},
             {"grid_slope", cal.grid_slope}}}}},
         {"serve", {{"host", c.serve.host}, {"port", c.serve.port}, {"admin_token", c.serve.admin_token}}},
         {"score", {{"paired", c.score.paired}, {"one_sided_input", c.score.one_sided_input}}}};
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j, const ExperimentConfig& base) {
  if (!j.is_object()) throw DataError("config: expected a JSON object");
  // A named design replaces the whole design object.
  json patch = j;
  if (patch.contains("readout") && patch["readout"].is_object() && patch["readout"].contains("design") &&
      patch["readout"]["design"].is_string())
    patch["readout"]["design"] = to_json(design_by_name(patch["readout"]["design"].get<std::string>()));
  json m = to_json(base);
  // Resolution lives in the phantom; the networks follow it.
  if (patch.contains("train") && patch["train"].is_object()) {
    for (const char* k : {"height", "width"})
      if (patch["train"].contains(k))
        throw DataError("config: train." + std::string(k) + " is taken from dataset.phantom; set it there");
  }
  if (patch.contains("readout") && patch["readout"].is_object() && patch["readout"].contains("design"))
    m["readout"]["design"] = json::object();
  if (patch.contains("stages")) m["stages"] = json::array();
  m.merge_patch(patch);

  ExperimentConfig c;
  StrictReader r(m, "config");
  std::string workdir;
  r.opt("name", c.name).opt("workdir", workdir).opt("artifact_images", c.artifact_images);
  c.workdir = workdir;
  if (const auto* d = r.sub("dataset")) {
    StrictReader rd(*d, "config.dataset");
    std::optional<std::string> import_csv;
    rd.opt("cancer", c.dataset.cancer).opt("healthy", c.dataset.healthy).opt("seed", c.dataset.seed).opt("import_csv", import_csv);
    if (import_csv) c.import_csv = *import_csv;
    if (const auto* p = rd.sub("phantom")) c.dataset.phantom = phantom_spec_from_json(*p);
    if (const auto* f = rd.sub("fractions")) {
      StrictReader rf(*f, "config.dataset.fractions");
      rf.opt("train", c.dataset.fractions.train).opt("eval", c.dataset.fractions.eval).opt("test", c.dataset.fractions.test);
      rf.finish();
    }
    rd.finish();
  }
  if (const auto* t = r.sub("train")) {
    json tj = *t;
    tj.erase("height");
    tj.erase("width");
    tj["height"] = c.dataset.phantom.height;
    tj["width"] = c.dataset.phantom.width;
    c.train = train_config_from_json(tj);
  }
  if (const auto* s = r.sub("stages")) {
    if (!s->is_array()) throw DataError("config.stages: expected an array");
    c.stages.clear();
    for (const auto& e : *s) {
      StageSpec st;
      StrictReader rs(e, "config.stages[]");
      rs.opt("tag", st.tag).opt("step", st.step);
      rs.finish();
      c.stages.push_back(st);
    }
  }
  if (const auto* ro = r.sub("readout")) {
    StrictReader rr(*ro, "config.readout");
    rr.opt("seed", c.readout_seed).opt("id", c.readout_id);
    if (const auto* d = rr.sub("design")) c.design = readout_design_from_json(*d);
    rr.finish();
  }
  if (const auto* rd = r.sub("readers")) {
    StrictReader rr(*rd, "config.readers");
    rr.opt("count", c.readers.count)
        .opt("seed", c.readers.seed)
        .opt("malignancy_noise", c.readers.malignancy_noise)
        .opt("manipulation_noise", c.readers.manipulation_noise);
    if (const auto* cal = rr.sub("calibration")) {
      StrictReader rc(*cal, "config.readers.calibration");
      rc.opt("mass_threshold", c.readers.calibration.mass_threshold)
          .opt("mass_slope", c.readers.calibration.mass_slope)
          .opt("grid_threshold", c.readers.calibration.grid_threshold)
          .opt("grid_slope", c.readers.calibration.grid_slope);
      rc.finish();
    }
    rr.finish();
  }
  if (const auto* sv = r.sub("serve")) {
    StrictReader rs(*sv, "config.serve");
    rs.opt("host", c.serve.host).opt("port", c.serve.port).opt("admin_token", c.serve.admin_token);
    rs.finish();
  }
  if (const auto* sc = r.sub("score")) {
    StrictReader rs(*sc, "config.score");
    rs.opt("paired", c.score.paired).opt("one_sided_input", c.score.one_sided_input);
    rs.finish();
  }
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path, const ExperimentConfig& base) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, base);
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw DataError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &config;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw DataError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

std::string data_hash(const ExperimentConfig& c) {
  const auto& f = c.dataset.fractions;
  json j{{"phantom", to_json(c.dataset.phantom)},
         {"fractions", {{"train", f.train}, {"eval", f.eval}, {"test", f.test}}},
         {"seed", c.dataset.seed}};
  if (c.import_csv) {
    j["import_sha256"] = fs::exists(*c.import_csv) ? sha256_file(*c.import_csv) : std::string("missing");
  } else {
    j["cancer"] = c.dataset.cancer;
    j["healthy"] = c.dataset.healthy;
  }
  return sha256_hex(canonical_dump(j));
}

std::string train_hash(const ExperimentConfig& c) { return config_hash(c.train); }

std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt-%07zu.bin", step);
  return buf;
}

json software_versions() {
  return {{"mammogan", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"fftw", std::string(fftw_version)},
          {"libpng", PNG_LIBPNG_VER_STRING},
          {"openssl", OPENSSL_VERSION_TEXT},
          {"compiler", __VERSION__}};
}

// --- stages ---------------------------------------------------------------------

DatasetManifest run_gen_data(const ExperimentConfig& c, const Log& log) {
  c.validate();
  const auto dir = c.data_dir();
  fs::remove_all(dir / "images");
  DatasetManifest m;
  if (c.import_csv) {
    say(log, "importing " + c.import_csv->string() + " into " + dir.string());
    m = import_dataset(dir, *c.import_csv, c.dataset);
  } else {
    say(log, "generating " + std::to_string(c.dataset.cancer) + " cancer and " + std::to_string(c.dataset.healthy) +
                 " healthy phantoms in " + dir.string());
    m = generate_dataset(dir, c.dataset);
  }
  write_artifact_manifest(dir, "gen-data", c, {}, {"manifest.jsonl", "manifest.meta.json"}, {"images"});
  return m;
}

void run_train(const ExperimentConfig& c, const Log& log) {
  c.validate();
  require_data(c);
  const auto dir = c.train_dir();
  fs::create_directories(dir);
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().rfind("ckpt-", 0) == 0) fs::remove(e.path());

  const ImageStore store(c.data_dir());
  const auto data = TrainingSet::from_store(store, c.train.augment, c.train.seed);
  store.write_access_log(dir / "data_access.jsonl");

  std::set<std::size_t> saves;
  if (c.train.checkpoint_every > 0)
    for (std::size_t s = c.train.checkpoint_every; s <= c.train.total_steps; s += c.train.checkpoint_every) saves.insert(s);
  for (const auto& s : c.stages) saves.insert(s.step);
  saves.insert(c.train.total_steps);

  CycleGan model(c.train);
  std::ofstream losses(dir / "losses.jsonl", std::ios::binary | std::ios::trunc);
  std::vector<std::string> files{"losses.jsonl", "data_access.jsonl"};
  for (const auto until : saves) {
    train(model, data, until, [&](const LossRecord& r) {
      losses << to_json(r).dump() << '\n';
      if (r.step % 100 == 0) {
        say(log, "step " + std::to_string(r.step) + "/" + std::to_string(c.train.total_steps) +
                     " cycle_H " + fmt("%.4f", r.cycle_H) + " cycle_C " + fmt("%.4f", r.cycle_C));
      }
    });
    model.save(dir / checkpoint_name(until));
    files.push_back(checkpoint_name(until));
    say(log, "saved " + checkpoint_name(until));
  }
  losses.close();
  json stages = json::object();
  for (const auto& s : c.stages) stages[s.tag] = checkpoint_name(s.step);
  write_artifact_manifest(dir, "train", c, {{"train_hash", train_hash(c)}, {"stages", stages}}, files);
}

DatasetManifest run_translate(const ExperimentConfig& c, const std::string& tag, const Log& log) {
  c.validate();
  require_data(c);
  const auto& st = c.stage(tag);
  const auto trained = read_artifact_manifest(c.train_dir(), "train");
  require_hash(trained, "data_hash", data_hash(c), c.train_dir(), "train");
  const auto ckpt = c.train_dir() / checkpoint_name(st.step);
  const auto model = load_checkpoint(c, ckpt);

  const auto dir = c.translated_dir(tag);
  fs::remove_all(dir);
  fs::create_directories(dir / "images");
  const ImageStore store(c.data_dir());
  DatasetManifest out;
  std::string lines;
  for (const auto& r : store.manifest().records) {
    if (r.provenance != Provenance::original || r.split == Split::train) continue;
    const auto dirn = r.cls == ImageClass::healthy ? Direction::h_to_c : Direction::c_to_h;
    const auto img = model.translate(store.load(r, Purpose::evaluation), dirn);
    ImageRecord m;
    m.id = r.id + "@" + tag;
    m.cls = r.cls;
    m.split = r.split;
    m.provenance = Provenance::modified;
    m.source_iteration = tag;
    m.original_id = r.id;
    m.path = "images/" + m.id + ".png";
    write_png16(dir / m.path, img);
    lines += to_json(m).dump() + "\n";
    out.records.push_back(std::move(m));
  }
  write_text(dir / "manifest.jsonl", lines);
  say(log, "translated " + std::to_string(out.records.size()) + " eval/test images with " + ckpt.filename().string());
  write_artifact_manifest(dir, "translate", c,
                          {{"train_hash", train_hash(c)},
                           {"tag", tag},
                           {"step", st.step},
                           {"checkpoint_sha256", sha256_file(ckpt)}},
                          {"manifest.jsonl"}, {"images"});
  return out;
}

std::vector<CurveRow> run_artifact_report(const ExperimentConfig& c, const Log& log) {
  c.validate();
  require_data(c);
  require_hash(read_artifact_manifest(c.train_dir(), "train"), "data_hash", data_hash(c), c.train_dir(), "train");
  std::vector<fs::path> ckpts;
  for (const auto& e : fs::directory_iterator(c.train_dir()))
    if (e.path().filename().string().rfind("ckpt-", 0) == 0) ckpts.push_back(e.path());
  std::sort(ckpts.begin(), ckpts.end());
  if (ckpts.size() < 2) throw DataError("artifact-report needs at least 2 checkpoints in '" + c.train_dir().string() + "'");
  std::vector<CycleGan> models;
  for (const auto& p : ckpts) models.push_back(load_checkpoint(c, p));
  std::vector<const CycleGan*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);

  const ImageStore store(c.data_dir());
  std::vector<EvalImage> images;
  for (auto cls : {ImageClass::healthy, ImageClass::cancer}) {
    const auto recs = store.manifest().select(cls, Split::eval);
    for (std::size_t i = 0; i < recs.size() && i < c.artifact_images; ++i)
      images.push_back({recs[i]->id, store.load(*recs[i], Purpose::evaluation), cls});
  }
  const auto rows = artifact_curve(ptrs, images);
  const auto dir = c.artifacts_dir();
  write_text(dir / "curve.csv", curve_csv(rows));
  write_text(dir / "curve.json", canonical_dump(to_json(rows)));
  say(log, "artifact curve over " + std::to_string(rows.size()) + " checkpoints and " + std::to_string(images.size()) +
               " eval images");
  write_artifact_manifest(dir, "artifact-report", c, {{"train_hash", train_hash(c)}}, {"curve.csv", "curve.json"});
  return rows;
}

Readout run_build_readout(const ExperimentConfig& c, const Log& log) {
  c.validate();
  require_data(c);
  const ImageStore store(c.data_dir());
  DatasetManifest merged = store.manifest();
  std::map<std::string, fs::path> modified_paths;
  for (const auto& tag : design_source_tags(c.design)) {
    const auto dir = c.translated_dir(tag);
    const auto am = read_artifact_manifest(dir, "translate --tag " + tag);
    require_hash(am, "data_hash", data_hash(c), dir, "translate --tag " + tag);
    require_hash(am, "train_hash", train_hash(c), dir, "translate --tag " + tag);
    for (auto& r : read_records(dir / "manifest.jsonl")) {
      modified_paths[r.id] = dir / r.path;
      merged.records.push_back(std::move(r));
    }
  }
  merged.validate();

  std::map<std::string, double> mass;
  if (c.design.visible_mass_filter)
    for (const auto& r : store.manifest().records)
      if (r.cls == ImageClass::cancer && r.provenance == Provenance::original)
        mass[r.id] = lesion_oracle_score(store.load(r, Purpose::evaluation), c.dataset.phantom);

  const auto readout = build_readout(c.design, merged, mass, c.readout_seed, c.readout_id.value_or(""));
  const auto dir = c.readout_dir();
  const auto log_path = dir / "events.jsonl";
  if (fs::exists(log_path)) {
    const bool same = fs::exists(dir / "readout.json") &&
                      canonical_dump(to_json(read_readout_package(dir))) == canonical_dump(to_json(readout));
    if (!same) {
      throw DataError("'" + log_path.string() +
                      "' holds ratings of a different readout; move it away before building a new one");
    }
  }
  fs::remove_all(dir / "images");
  write_readout_package(dir, readout, [&](const ReadoutItem& it) {
    if (it.provenance == Provenance::modified) return read_png(modified_paths.at(it.image_id));
    return store.load(it.image_id, Purpose::readout);
  });
  say(log, "readout " + readout.readout_id + ": " + std::to_string(readout.items.size()) + " items in " + dir.string());
  write_artifact_manifest(dir, "build-readout", c, {{"train_hash", train_hash(c)}, {"readout_id", readout.readout_id}},
                          {"readout.json"}, {"images"});
  return readout;
}

void run_simulated_readers(const ExperimentConfig& c, const Log& log) {
  const auto dir = c.readout_dir();
  const auto readout = read_readout_package(dir);
  auto n = std::make_shared<std::size_t>(0);
  ReadoutService svc(readout, dir / "events.jsonl", [n] {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sim-%06zu", ++*n);
    return std::string(buf);
  });
  std::set<std::string> existing;
  for (const auto& s : svc.sessions()) existing.insert(s.reader_id);
  std::vector<SimulatedReader> readers;
  for (std::size_t i = 0; i < c.readers.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "sim-%02zu", i + 1);
    if (existing.count(id)) continue;
    readers.push_back({id, c.readers.malignancy_noise, c.readers.manipulation_noise, derive_seed({c.readers.seed, i})});
  }
  simulate_readers(svc, dir, c.dataset.phantom, readers, c.readers.calibration);
  say(log, "simulated " + std::to_string(readers.size()) + " readers (" + std::to_string(existing.size()) +
               " already in the log)");
}

std::vector<ScoringRow> run_export(const ExperimentConfig& c, const Log& log) {
  const auto dir = c.readout_dir();
  const auto readout = read_readout_package(dir);
  std::vector<std::string> warnings;
  const auto rows = export_from_log(readout, dir / "events.jsonl", &warnings);
  for (const auto& w : warnings) say(log, "warning: " + w);
  std::string jsonl, csv = scoring_csv_header() + "\n";
  for (const auto& r : rows) {
    jsonl += to_json(r).dump() + "\n";
    csv += to_csv(r) + "\n";
  }
  write_text(c.report_dir() / "ratings.jsonl", jsonl);
  write_text(c.report_dir() / "ratings.csv", csv);
  say(log, "exported " + std::to_string(rows.size()) + " ratings");
  return rows;
}

json run_score(const ExperimentConfig& c, const std::vector<ScoringRow>& rows, const fs::path& out_dir, const Log& log) {
  const auto report = score_readout(rows, c.score);
  write_text(out_dir / "report.json", canonical_dump(report));
  write_text(out_dir / "table.txt", report_table(report));
  write_text(out_dir / "roc.csv", roc_curves_csv(rows));
  std::vector<std::string> files{"report.json", "table.txt", "roc.csv"};
  for (const char* f : {"ratings.jsonl", "ratings.csv"})
    if (fs::exists(out_dir / f)) files.push_back(f);
  write_artifact_manifest(out_dir, "score", c, {}, files);
  say(log, "report written to " + (out_dir / "report.json").string());
  return report;
}

void run_reproduce(const ExperimentConfig& c, const Log& log) {
  c.validate();
  run_gen_data(c, log);
  run_train(c, log);
  for (const auto& s : c.stages) run_translate(c, s.tag, log);
  if (c.train.checkpoint_every > 0 && c.train.total_steps / c.train.checkpoint_every >= 2)
    run_artifact_report(c, log);
  run_build_readout(c, log);
  if (c.readers.count == 0) {
    say(log, "readout package ready; collect ratings (serve or terminal-readout), then run export and score");
    return;
  }
  run_simulated_readers(c, log);
  const auto rows = run_export(c, log);
  const auto report = run_score(c, rows, c.report_dir(), log);
  say(log, "\n" + report_table(report));
}

std::string report_table(const json& report) {
  std::ostringstream out;
  char line[256];
  const auto num = [](const json& v, const char* f) { return v.is_number() ? fmt(f, v.get<double>()) : std::string("-"); };
  for (const auto& [name, a] : report.at("analyses").items()) {
    out << name << ": " << a.value("description", "") << "\n";
    const bool chance = !a.contains("set_1");
    if (chance)
      std::snprintf(line, sizeof line, "  %-16s %9s %9s %9s\n", "reader", "AUC", "", "p");
    else
      std::snprintf(line, sizeof line, "  %-16s %9s %9s %9s\n", "reader", "AUC 1", "AUC 2", "p");
    out << line;
    for (const auto& r : a.at("readers")) {
      const std::string reader = r.at("reader");
      const std::string auc1 = chance ? num(r["set"]["auc"], "%.3f") : num(r["set_1"]["auc"], "%.3f");
      const std::string auc2 = chance ? "" : num(r["set_2"]["auc"], "%.3f");
      std::snprintf(line, sizeof line, "  %-16s %9s %9s %9s\n", reader.c_str(), auc1.c_str(), auc2.c_str(),
                    num(r["p"], "%.4f").c_str());
      out << line;
    }
    if (a.contains("combined") && a["combined"].is_object()) {
      const auto& cb = a["combined"];
      out << "  combined (Stouffer, k=" << cb.value("k", 0) << "): p one-sided " << num(cb["p_one_sided"], "%.4f")
          << ", two-sided " << num(cb["p_two_sided"], "%.4f") << "\n";
    }
    out << "\n";
  }
  if (report.contains("warnings"))
    for (const auto& w : report["warnings"]) out << "warning: " << w.get<std::string>() << "\n";
  return out.str();
}

}  // namespace mammogan
