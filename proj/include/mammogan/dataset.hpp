#pragma once

// Image records, manifests, splits and guarded image access.
//
// On disk a dataset directory holds `manifest.jsonl` (one ImageRecord per
// line), `manifest.meta.json` (seed, counts, generator settings, hash) and the
// 16-bit PNG images under `images/`. Record paths are relative to the
// directory.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mammogan/image.hpp"
#include "mammogan/phantom.hpp"
#include "mammogan/serialize.hpp"

namespace mammogan {

enum class Split { train, eval, test };
enum class Provenance { original, modified };

std::string to_string(Split s);
std::string to_string(Provenance p);
Split split_from_string(const std::string& s);
Provenance provenance_from_string(const std::string& s);

struct ImageRecord {
  std::string id;
  ImageClass cls = ImageClass::healthy;
  Split split = Split::train;
  Provenance provenance = Provenance::original;
  std::optional<std::string> source_iteration;  // training step tag of a modified image
  std::optional<std::string> original_id;       // set for modified images
  std::string path;
  std::optional<std::uint64_t> seed;  // phantom seed, when generated

  bool operator==(const ImageRecord&) const = default;
};

json to_json(const ImageRecord& r);
ImageRecord image_record_from_json(const json& j);

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::uint64_t seed = 0;

  std::size_t count(ImageClass c) const;
  std::size_t count(ImageClass c, Split s) const;
  std::size_t count(ImageClass c, Split s, Provenance p) const;
  // Unique ids; modified records reference an existing original.
  void validate() const;
  const ImageRecord& find(const std::string& id) const;
  const ImageRecord* try_find(const std::string& id) const;
  std::vector<const ImageRecord*> select(ImageClass c, Split s, Provenance p = Provenance::original) const;
};

struct SplitFractions {
  double train = 0.70;
  double eval = 0.15;
  double test = 0.15;
};

// Stratified by class and deterministic in seed. Per-class split sizes are
// the floor or ceiling of their proportional share, chosen so that the split
// totals are as well (controlled rounding); within each class the assignment
// follows a seeded shuffle. Only original records are reassigned; modified
// records inherit the split of their original.
DatasetManifest split_dataset(DatasetManifest m, const SplitFractions& f, std::uint64_t seed);

struct DatasetOptions {
  PhantomSpec phantom;
  std::size_t cancer = 318;
  std::size_t healthy = 362;
  SplitFractions fractions;
  std::uint64_t seed = 2019;
};

json dataset_meta(const DatasetOptions& o, const DatasetManifest& m);

// Generates phantoms, writes images, manifest and meta into `dir`.
DatasetManifest generate_dataset(const std::filesystem::path& dir, const DatasetOptions& o);

// Imports external grayscale PNG/PGM files listed in a CSV of `path,label`
// (label healthy|cancer; a header line is allowed; relative paths resolve
// against the CSV's directory). Images are resized to the phantom resolution
// and min-max normalized to [-1, 1].
DatasetManifest import_dataset(const std::filesystem::path& dir, const std::filesystem::path& csv,
                               const DatasetOptions& o);

void write_manifest(const std::filesystem::path& dir, const DatasetManifest& m, const json& meta);
DatasetManifest read_manifest(const std::filesystem::path& dir);
json read_manifest_meta(const std::filesystem::path& dir);

enum class Purpose { training, evaluation, readout };
std::string to_string(Purpose p);

struct AccessEntry {
  std::string id;
  Split split;
  Purpose purpose;
};

// Loads images of one dataset directory and records every access. Test-split
// images are refused for training.
class ImageStore {
 public:
  ImageStore(std::filesystem::path dir, DatasetManifest manifest);
  explicit ImageStore(const std::filesystem::path& dir);

  Image load(const std::string& id, Purpose purpose) const;
  Image load(const ImageRecord& r, Purpose purpose) const;
  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::vector<AccessEntry> access_log() const;
  void write_access_log(const std::filesystem::path& path) const;

 private:
  std::filesystem::path dir_;
  DatasetManifest manifest_;
  mutable std::mutex mutex_;
  mutable std::vector<AccessEntry> log_;
};

// In-memory training images of both domains, expanded tenfold by augmentation
// when enabled: sample k of a domain maps to image k / 10 and variant k % 10.
class TrainingSet {
 public:
  TrainingSet(std::vector<Image> healthy, std::vector<Image> cancer, bool augment, std::uint64_t seed);
  static TrainingSet from_store(const ImageStore& store, bool augment, std::uint64_t seed);

  std::size_t size(ImageClass c) const;
  Image sample(ImageClass c, std::size_t k) const;
  std::size_t base_size(ImageClass c) const { return images(c).size(); }

 private:
  const std::vector<Image>& images(ImageClass c) const { return c == ImageClass::cancer ? cancer_ : healthy_; }
  std::vector<Image> healthy_, cancer_;
  bool augment_;
  std::uint64_t seed_;
};

}  // namespace mammogan
