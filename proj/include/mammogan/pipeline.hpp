#pragma once

// Experiment configuration and the stages the CLI chains together.
//
// Work directory layout:
//   data/                 dataset (manifest.jsonl, manifest.meta.json, images/)
//   train/                ckpt-<step>.bin, losses.jsonl
//   translated/<tag>/     modified images of the eval and test originals
//   artifacts/            curve.csv, curve.json
//   readout/              readout.json, images/, events.jsonl
//   report/               ratings.jsonl, report.json, table.txt, roc.csv
// Every directory also holds artifact.json: stage, software and library
// versions, seeds, the dataset and architecture hashes it was built from, and
// SHA-256 of the files it produced.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mammogan/artifact.hpp"
#include "mammogan/cyclegan.hpp"
#include "mammogan/dataset.hpp"
#include "mammogan/readout.hpp"
#include "mammogan/stats.hpp"

namespace mammogan {

// A named training checkpoint used as a translation source.
struct StageSpec {
  std::string tag;
  std::size_t step = 0;
};

struct ReaderSimConfig {
  std::size_t count = 3;  // 0 disables simulation in reproduce runs
  std::uint64_t seed = 5;
  double malignancy_noise = 0.6;
  double manipulation_noise = 0.6;
  ReaderCalibration calibration;
};

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string admin_token;  // empty disables the export endpoint
};

struct ExperimentConfig {
  std::string name = "exp1";
  std::filesystem::path workdir = "work/exp1";
  DatasetOptions dataset;
  std::optional<std::filesystem::path> import_csv;
  TrainConfig train;
  std::vector<StageSpec> stages{{"main", 5000}};
  ReadoutDesign design = readout1_design();
  std::uint64_t readout_seed = 11;
  std::optional<std::string> readout_id;
  std::size_t artifact_images = 16;  // eval originals per class in the artifact curve
  ReaderSimConfig readers;
  ServeConfig serve;
  ScoreOptions score;

  // Throws DataError on inconsistent settings.
  void validate() const;

  std::filesystem::path data_dir() const { return workdir / "data"; }
  std::filesystem::path train_dir() const { return workdir / "train"; }
  std::filesystem::path translated_dir(const std::string& tag) const { return workdir / "translated" / tag; }
  std::filesystem::path artifacts_dir() const { return workdir / "artifacts"; }
  std::filesystem::path readout_dir() const { return workdir / "readout"; }
  std::filesystem::path report_dir() const { return workdir / "report"; }
  const StageSpec& stage(const std::string& tag) const;
};

// First experiment: 64x64, one stage, readout-1.
ExperimentConfig exp1_defaults();
// Second experiment: 128x104, stages early/late, readout-2.
ExperimentConfig exp2_defaults();

json to_json(const ExperimentConfig& c);
// Keys absent from `j` keep the values of `base`.
ExperimentConfig experiment_config_from_json(const json& j, const ExperimentConfig& base = exp1_defaults());
ExperimentConfig load_experiment_config(const std::filesystem::path& path, const ExperimentConfig& base);

// "a.b.c=value" on the JSON form; value is parsed as JSON, else taken as a string.
void apply_override(json& config, const std::string& assignment);

// What the dataset depends on (generation or import settings, seed).
std::string data_hash(const ExperimentConfig& c);
// Network shapes; equals the checkpoint header hash.
std::string train_hash(const ExperimentConfig& c);

std::string checkpoint_name(std::size_t step);
// Library versions linked into this build.
json software_versions();

using Log = std::function<void(const std::string&)>;

DatasetManifest run_gen_data(const ExperimentConfig& c, const Log& log = {});
// From scratch to the last stage step; checkpoints every checkpoint_every
// steps and at each stage step. Refuses a dataset built from another config.
void run_train(const ExperimentConfig& c, const Log& log = {});
// Translates every eval and test original with the stage checkpoint, healthy
// H->C and cancer C->H. Refuses a checkpoint of another architecture.
DatasetManifest run_translate(const ExperimentConfig& c, const std::string& tag, const Log& log = {});
std::vector<CurveRow> run_artifact_report(const ExperimentConfig& c, const Log& log = {});
Readout run_build_readout(const ExperimentConfig& c, const Log& log = {});
// Simulated readers against the readout log (deterministic timestamps).
void run_simulated_readers(const ExperimentConfig& c, const Log& log = {});
// Export of complete sessions into report/ratings.jsonl.
std::vector<ScoringRow> run_export(const ExperimentConfig& c, const Log& log = {});
json run_score(const ExperimentConfig& c, const std::vector<ScoringRow>& rows, const std::filesystem::path& out_dir,
               const Log& log = {});

// gen-data, train, translate every stage, artifact report, build readout and,
// with simulated readers, export and score.
void run_reproduce(const ExperimentConfig& c, const Log& log = {});

// Fixed-width text table of a score report.
std::string report_table(const json& report);

}  // namespace mammogan
