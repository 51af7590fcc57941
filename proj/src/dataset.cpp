#include "mammogan/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mammogan/hash.hpp"
#include "mammogan/seeds.hpp"
#include "mammogan/version.hpp"

namespace mammogan {

namespace fs = std::filesystem;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::eval: return "eval";
    case Split::test: return "test";
  }
  return "?";
}

std::string to_string(Provenance p) { return p == Provenance::modified ? "modified" : "original"; }

std::string to_string(Purpose p) {
  switch (p) {
    case Purpose::training: return "training";
    case Purpose::evaluation: return "evaluation";
    case Purpose::readout: return "readout";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "eval") return Split::eval;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "' (expected train|eval|test)");
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "original") return Provenance::original;
  if (s == "modified") return Provenance::modified;
  throw DataError("unknown provenance '" + s + "' (expected original|modified)");
}

json to_json(const ImageRecord& r) {
  json j{{"id", r.id},
         {"class", to_string(r.cls)},
         {"split", to_string(r.split)},
         {"provenance", to_string(r.provenance)},
         {"source_iteration", nullptr},
         {"original_id", nullptr},
         {"path", r.path}};
  if (r.source_iteration) j["source_iteration"] = *r.source_iteration;
  if (r.original_id) j["original_id"] = *r.original_id;
  if (r.seed) j["seed"] = *r.seed;
  return j;
}

ImageRecord image_record_from_json(const json& j) {
  ImageRecord r;
  std::string cls, split, prov = "original";
  StrictReader rd(j, "record");
  rd.opt("id", r.id)
      .opt("class", cls)
      .opt("split", split)
      .opt("provenance", prov)
      .opt("source_iteration", r.source_iteration)
      .opt("original_id", r.original_id)
      .opt("path", r.path)
      .opt("seed", r.seed)
      .finish();
  if (r.id.empty() || r.path.empty()) throw DataError("record: id and path are required");
  r.cls = image_class_from_string(cls);
  r.split = split_from_string(split);
  r.provenance = provenance_from_string(prov);
  return r;
}

std::size_t DatasetManifest::count(ImageClass c) const {
  return std::count_if(records.begin(), records.end(), [&](const auto& r) { return r.cls == c; });
}

std::size_t DatasetManifest::count(ImageClass c, Split s) const {
  return std::count_if(records.begin(), records.end(), [&](const auto& r) { return r.cls == c && r.split == s; });
}

std::size_t DatasetManifest::count(ImageClass c, Split s, Provenance p) const {
  return std::count_if(records.begin(), records.end(),
                       [&](const auto& r) { return r.cls == c && r.split == s && r.provenance == p; });
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records)
    if (!ids.insert(r.id).second) throw DataError("manifest: duplicate id '" + r.id + "'");
  for (const auto& r : records) {
    if (r.provenance != Provenance::modified) continue;
    if (!r.original_id) throw DataError("manifest: modified record '" + r.id + "' lacks original_id");
    const auto* o = try_find(*r.original_id);
    if (!o || o->provenance != Provenance::original) {
      throw DataError("manifest: '" + r.id + "' references unknown original '" + *r.original_id + "'");
    }
  }
}

const ImageRecord* DatasetManifest::try_find(const std::string& id) const {
  auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.id == id; });
  return it == records.end() ? nullptr : &*it;
}

const ImageRecord& DatasetManifest::find(const std::string& id) const {
  if (const auto* r = try_find(id)) return *r;
  throw DataError("manifest: no record '" + id + "'");
}

std::vector<const ImageRecord*> DatasetManifest::select(ImageClass c, Split s, Provenance p) const {
  std::vector<const ImageRecord*> out;
  for (const auto& r : records)
    if (r.cls == c && r.split == s && r.provenance == p) out.push_back(&r);
  return out;
}

namespace {

// Per-class split sizes: every entry is floor or ceil of n_c * f_s, row sums
// are n_c, and column sums are floor or ceil of N * f_s. Tries the
// largest-remainder column totals first.
std::vector<std::array<std::size_t, 3>> controlled_rounding(const std::vector<std::size_t>& rows,
                                                             const std::array<double, 3>& f) {
  const std::size_t total = std::accumulate(rows.begin(), rows.end(), std::size_t{0});
  std::array<std::size_t, 3> preferred{};
  {
    std::array<double, 3> exact{};
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      exact[s] = total * f[s];
      preferred[s] = static_cast<std::size_t>(std::floor(exact[s] + 1e-9));
      assigned += preferred[s];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return exact[a] - preferred[a] > exact[b] - preferred[b]; });
    for (int i = 0; assigned < total; ++i, ++assigned) ++preferred[order[i % 3]];
  }

  std::vector<std::array<std::size_t, 3>> cells(rows.size());
  std::array<std::size_t, 3> col{};
  auto col_ok = [&](bool strict) {
    for (int s = 0; s < 3; ++s) {
      const double e = total * f[s];
      if (strict ? col[s] != preferred[s]
                 : (col[s] + 1e-9 < std::floor(e) || col[s] > std::ceil(e) + 1e-9))
        return false;
    }
    return true;
  };
  std::function<bool(std::size_t, bool)> dfs = [&](std::size_t c, bool strict) -> bool {
    if (c == rows.size()) return col_ok(strict);
    for (int mask = 0; mask < 8; ++mask) {
      std::array<std::size_t, 3> a{};
      std::size_t sum = 0;
      bool valid = true;
      for (int s = 0; s < 3; ++s) {
        const double e = rows[c] * f[s];
        const auto fl = static_cast<std::size_t>(std::floor(e + 1e-9));
        a[s] = (mask >> s & 1) ? static_cast<std::size_t>(std::ceil(e - 1e-9)) : fl;
        if ((mask >> s & 1) && a[s] == fl) valid = false;  // avoid duplicate choices
        sum += a[s];
      }
      if (!valid || sum != rows[c]) continue;
      for (int s = 0; s < 3; ++s) col[s] += a[s];
      cells[c] = a;
      if (dfs(c + 1, strict)) return true;
      for (int s = 0; s < 3; ++s) col[s] -= a[s];
    }
    return false;
  };
  if (dfs(0, true) || dfs(0, false)) return cells;
  throw DataError("split: no consistent rounding of the split fractions");
}

}  // namespace

DatasetManifest split_dataset(DatasetManifest m, const SplitFractions& f, std::uint64_t seed) {
  const std::array<double, 3> fr{f.train, f.eval, f.test};
  for (double v : fr)
    if (!(v >= 0.0)) throw DataError("split: fractions must be non-negative");
  if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9) throw DataError("split: fractions must sum to 1");

  const std::array<ImageClass, 2> classes{ImageClass::healthy, ImageClass::cancer};
  std::vector<std::vector<std::size_t>> members(2);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (r.provenance == Provenance::original) members[r.cls == ImageClass::cancer].push_back(i);
  }
  const auto sizes = controlled_rounding({members[0].size(), members[1].size()}, fr);
  const std::array<Split, 3> splits{Split::train, Split::eval, Split::test};
  for (std::size_t c = 0; c < 2; ++c) {
    for (int s = 0; s < 3; ++s) {
      if (fr[s] > 0 && sizes[c][s] == 0) {
        throw DataError("split: class '" + to_string(classes[c]) + "' has no images in split '" +
                        to_string(splits[s]) + "'");
      }
    }
    std::mt19937_64 rng(derive_seed({seed, tag("split"), c}));
    std::shuffle(members[c].begin(), members[c].end(), rng);
    std::size_t k = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t n = 0; n < sizes[c][s]; ++n) m.records[members[c][k++]].split = splits[s];
  }
  std::map<std::string, Split> by_id;
  for (const auto& r : m.records)
    if (r.provenance == Provenance::original) by_id[r.id] = r.split;
  for (auto& r : m.records)
    if (r.provenance == Provenance::modified && r.original_id && by_id.count(*r.original_id)) {
      r.split = by_id[*r.original_id];
    }
  m.seed = seed;
  return m;
}

json dataset_meta(const DatasetOptions& o, const DatasetManifest& m) {
  json counts;
  for (auto c : {ImageClass::healthy, ImageClass::cancer}) {
    json per{{"total", m.count(c)}};
    for (auto s : {Split::train, Split::eval, Split::test}) per[to_string(s)] = m.count(c, s);
    counts[to_string(c)] = per;
  }
  const json phantom = to_json(o.phantom);
  return json{{"format", "mammogan-dataset"},
              {"version", 1},
              {"software", std::string("mammogan ") + kVersion},
              {"seed", o.seed},
              {"fractions", {{"train", o.fractions.train}, {"eval", o.fractions.eval}, {"test", o.fractions.test}}},
              {"counts", counts},
              {"phantom", phantom},
              {"config_hash", sha256_hex(canonical_dump(phantom))}};
}

void write_manifest(const fs::path& dir, const DatasetManifest& m, const json& meta) {
  m.validate();
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write manifest in '" + dir.string() + "'");
    for (const auto& r : m.records) out << to_json(r).dump() << '\n';
  }
  std::ofstream out(dir / "manifest.meta.json", std::ios::binary | std::ios::trunc);
  out << canonical_dump(meta);
}

DatasetManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.jsonl", std::ios::binary);
  if (!in) throw DataError("no manifest.jsonl in '" + dir.string() + "'");
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      m.records.push_back(image_record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("manifest.jsonl:" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("manifest.jsonl:" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (fs::exists(dir / "manifest.meta.json")) {
    const auto meta = read_manifest_meta(dir);
    if (meta.contains("seed")) m.seed = meta["seed"].get<std::uint64_t>();
  }
  m.validate();
  return m;
}

json read_manifest_meta(const fs::path& dir) {
  std::ifstream in(dir / "manifest.meta.json", std::ios::binary);
  if (!in) throw DataError("no manifest.meta.json in '" + dir.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("manifest.meta.json: " + std::string(e.what()));
  }
}

DatasetManifest generate_dataset(const fs::path& dir, const DatasetOptions& o) {
  o.phantom.validate();
  if (o.cancer == 0 || o.healthy == 0) throw DataError("gen-data: both classes need at least one image");
  fs::create_directories(dir / "images");
  DatasetManifest m;
  for (auto cls : {ImageClass::healthy, ImageClass::cancer}) {
    const std::size_t n = cls == ImageClass::cancer ? o.cancer : o.healthy;
    for (std::size_t i = 0; i < n; ++i) {
      char id[64];
      std::snprintf(id, sizeof id, "%s-%04zu", to_string(cls).c_str(), i);
      ImageRecord r;
      r.id = id;
      r.cls = cls;
      r.path = "images/" + r.id + ".png";
      r.seed = derive_seed({o.seed, tag(to_string(cls)), i});
      write_png16(dir / r.path, generate_phantom(o.phantom, cls, *r.seed).image);
      m.records.push_back(std::move(r));
    }
  }
  m = split_dataset(std::move(m), o.fractions, o.seed);
  write_manifest(dir, m, dataset_meta(o, m));
  return m;
}

DatasetManifest import_dataset(const fs::path& dir, const fs::path& csv, const DatasetOptions& o) {
  std::ifstream in(csv);
  if (!in) throw DataError("cannot open import list '" + csv.string() + "'");
  fs::create_directories(dir / "images");
  DatasetManifest m;
  std::map<ImageClass, std::size_t> next;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r\"");
    const auto e = s.find_last_not_of(" \t\r\"");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw DataError(csv.string() + ":" + std::to_string(lineno) + ": expected 'path,label'");
    }
    const std::string path = trim(line.substr(0, comma)), label = trim(line.substr(comma + 1));
    if (lineno == 1 && label != "healthy" && label != "cancer") continue;  // header
    ImageClass cls;
    try {
      cls = image_class_from_string(label);
    } catch (const DataError& e) {
      throw DataError(csv.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    fs::path src = path;
    if (src.is_relative()) src = csv.parent_path() / src;
    Image img = read_grayscale(src);
    if (img.height != o.phantom.height || img.width != o.phantom.width) {
      img = resize_bilinear(img, o.phantom.height, o.phantom.width);
    }
    const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
    img = *hi > *lo ? normalize(img, *lo, *hi) : Image(img.height, img.width, -1.0f);
    char id[64];
    std::snprintf(id, sizeof id, "%s-%04zu", to_string(cls).c_str(), next[cls]++);
    ImageRecord r;
    r.id = id;
    r.cls = cls;
    r.path = "images/" + r.id + ".png";
    write_png16(dir / r.path, img);
    m.records.push_back(std::move(r));
  }
  if (next[ImageClass::healthy] == 0 || next[ImageClass::cancer] == 0) {
    throw DataError("import: both classes need at least one image");
  }
  m = split_dataset(std::move(m), o.fractions, o.seed);
  auto meta = dataset_meta(o, m);
  meta["source"] = "import";
  meta["import_list_sha256"] = sha256_file(csv);
  write_manifest(dir, m, meta);
  return m;
}

ImageStore::ImageStore(fs::path dir, DatasetManifest manifest) : dir_(std::move(dir)), manifest_(std::move(manifest)) {
  manifest_.validate();
}

ImageStore::ImageStore(const fs::path& dir) : ImageStore(dir, read_manifest(dir)) {}

Image ImageStore::load(const std::string& id, Purpose purpose) const { return load(manifest_.find(id), purpose); }

Image ImageStore::load(const ImageRecord& r, Purpose purpose) const {
  if (purpose == Purpose::training && r.split == Split::test) {
    throw DataError("refusing to read test-split image '" + r.id + "' for training");
  }
  {
    std::lock_guard lock(mutex_);
    log_.push_back({r.id, r.split, purpose});
  }
  return read_png(dir_ / r.path);
}

std::vector<AccessEntry> ImageStore::access_log() const {
  std::lock_guard lock(mutex_);
  return log_;
}

void ImageStore::write_access_log(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write access log '" + path.string() + "'");
  for (const auto& e : access_log()) {
    out << json{{"id", e.id}, {"split", to_string(e.split)}, {"purpose", to_string(e.purpose)}}.dump() << '\n';
  }
}

TrainingSet::TrainingSet(std::vector<Image> healthy, std::vector<Image> cancer, bool augment, std::uint64_t seed)
    : healthy_(std::move(healthy)), cancer_(std::move(cancer)), augment_(augment), seed_(seed) {
  if (healthy_.empty() || cancer_.empty()) throw DataError("training set: both domains need images");
  for (const auto* set : {&healthy_, &cancer_})
    for (const auto& img : *set)
      if (!img.same_shape(healthy_.front())) throw DataError("training set: images differ in size");
}

TrainingSet TrainingSet::from_store(const ImageStore& store, bool augment, std::uint64_t seed) {
  std::vector<Image> h, c;
  for (const auto& r : store.manifest().records) {
    if (r.split != Split::train || r.provenance != Provenance::original) continue;
    (r.cls == ImageClass::cancer ? c : h).push_back(store.load(r, Purpose::training));
  }
  return TrainingSet(std::move(h), std::move(c), augment, seed);
}

std::size_t TrainingSet::size(ImageClass c) const { return images(c).size() * (augment_ ? kAugmentFactor : 1); }

Image TrainingSet::sample(ImageClass c, std::size_t k) const {
  const auto& set = images(c);
  if (k >= size(c)) throw ShapeError("training set: sample index out of range");
  if (!augment_) return set[k];
  const std::size_t base = k / kAugmentFactor;
  const auto p = draw_augmentation(derive_seed({seed_, static_cast<std::uint64_t>(c), base}), k % kAugmentFactor);
  return apply_augmentation(set[base], p);
}

}  // namespace mammogan
