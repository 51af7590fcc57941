#pragma once

// Blinded reader studies: designs, item selection, sessions backed by an
// append-only JSON-lines event log, and the export joined with hidden truth.
//
// Log format, one JSON object per line:
//   {"type":"readout","readout_id":...}                      first line
//   {"type":"session_created","session_id","reader_id","timestamp"}
//   {"type":"rating","session_id","item_id","malignancy","manipulation","timestamp"}

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mammogan/dataset.hpp"
#include "mammogan/serialize.hpp"
#include "mammogan/stats.hpp"

namespace mammogan {

enum class ManipulationScale { binary, likert5 };
std::string to_string(ManipulationScale s);
ManipulationScale manipulation_scale_from_string(const std::string& s);

struct ClassCounts {
  std::size_t cancer = 0, healthy = 0;
  std::size_t total() const { return cancer + healthy; }
};

// Items drawn from one (stage, split) stratum. Modified images come from
// records whose source_iteration equals `source_iteration`.
struct DesignGroup {
  std::string stage;
  Split split = Split::eval;
  std::string source_iteration;
  ClassCounts pairs;            // original + its modified version
  ClassCounts single_original;  // original shown without its modified version
  ClassCounts single_modified;  // modified shown without its original
  std::size_t items() const { return 2 * pairs.total() + single_original.total() + single_modified.total(); }
};

struct ReadoutDesign {
  std::string name;
  std::size_t total_items = 0;
  std::vector<DesignGroup> groups;
  ManipulationScale manipulation_scale = ManipulationScale::binary;
  std::size_t min_pair_separation = 5;
  // Cancer originals must reach the class-median lesion-oracle score.
  bool visible_mass_filter = true;

  // Throws DataError when the counts do not add up.
  void validate() const;
  std::size_t count_modified() const;
  std::size_t count_original() const;
};

ReadoutDesign readout1_design();
ReadoutDesign readout2_design();
// "readout-1" | "readout-2"; throws DataError otherwise.
ReadoutDesign design_by_name(const std::string& name);

json to_json(const ReadoutDesign& d);
ReadoutDesign readout_design_from_json(const json& j);

// Admin-side item with its hidden truth.
struct ReadoutItem {
  std::string item_id;   // opaque, by presentation position
  std::string image_id;  // manifest record id
  std::string original_id;
  ImageClass truth_class = ImageClass::healthy;  // original class
  Provenance provenance = Provenance::original;
  Split split = Split::eval;
  std::string stage;
  std::optional<std::string> source_iteration;
  std::optional<std::string> pair_id;
};

struct Readout {
  std::string readout_id;
  ReadoutDesign design;
  std::uint64_t seed = 0;
  std::vector<ReadoutItem> items;  // presentation order

  const ReadoutItem& item(const std::string& item_id) const;
};

json to_json(const Readout& r);
Readout readout_from_json(const json& j);

// `mass_scores` maps original cancer record ids to lesion-oracle scores; it
// is needed only with visible_mass_filter. Each original image is used by at
// most one item or pair. Throws DataError naming the first unmet rule.
Readout build_readout(const ReadoutDesign& design, const DatasetManifest& manifest,
                      const std::map<std::string, double>& mass_scores, std::uint64_t seed,
                      std::string readout_id = "");

// Smallest distance between the two members of any pair in the order.
std::size_t min_pair_distance(const Readout& r);

// --- sessions ----------------------------------------------------------------

enum class SessionStatus { active, complete };
std::string to_string(SessionStatus s);

struct SessionState {
  std::string session_id;
  std::string reader_id;
  std::size_t cursor = 0;  // index of the current item
  SessionStatus status = SessionStatus::active;
};

struct RatingSubmission {
  std::string item_id;
  int malignancy = 0;
  int manipulation = 0;
};

// HTTP-flavoured failure: 400 bad request, 404 unknown, 409 conflict,
// 422 rating outside its scale.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

using Clock = std::function<std::string()>;
std::string utc_now();

class ReadoutService {
 public:
  // Replays `log_path` when it exists (a torn final line is dropped) and
  // appends to it afterwards.
  ReadoutService(Readout readout, std::filesystem::path log_path, Clock clock = utc_now);
  ~ReadoutService();
  ReadoutService(const ReadoutService&) = delete;
  ReadoutService& operator=(const ReadoutService&) = delete;

  const Readout& readout() const { return readout_; }

  std::string create_session(const std::string& reader_id);
  SessionState session(const std::string& session_id) const;
  std::vector<SessionState> sessions() const;

  // Client payloads; never contain truth fields.
  json session_payload(const std::string& session_id) const;
  json next_item(const std::string& session_id) const;
  json submit_rating(const std::string& session_id, const RatingSubmission& r);
  json scales_payload() const;

  // One row per (reader, item) over complete sessions, in session order.
  // Incomplete sessions are skipped with a warning; throws DataError when no
  // session is complete.
  std::vector<ScoringRow> export_ratings(std::vector<std::string>* warnings = nullptr) const;

 private:
  struct Session {
    SessionState state;
    std::vector<std::optional<std::pair<int, int>>> ratings;
  };

  void replay();
  void append(const json& event);
  void apply_rating(Session& s, const RatingSubmission& r);
  const Session& get(const std::string& session_id) const;
  void validate_rating(const RatingSubmission& r) const;

  Readout readout_;
  std::filesystem::path log_path_;
  Clock clock_;
  std::FILE* log_ = nullptr;
  mutable std::mutex mutex_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, std::size_t> item_index_;
};

// Export = fold over a log; used to check the service against its own log.
std::vector<ScoringRow> export_from_log(const Readout& readout, const std::filesystem::path& log_path,
                                        std::vector<std::string>* warnings = nullptr);

// Keys and values that must never reach a client.
bool contains_truth(const json& payload);

// --- packages -----------------------------------------------------------------

// A readout directory holds readout.json (admin only), images/<item_id>.png
// (8-bit, fixed window) and events.jsonl.
using ImageResolver = std::function<Image(const ReadoutItem&)>;
void write_readout_package(const std::filesystem::path& dir, const Readout& r, const ImageResolver& images);
Readout read_readout_package(const std::filesystem::path& dir);

// --- simulated readers -----------------------------------------------------

// Deterministic stand-in for human readers: malignancy follows the lesion
// oracle, manipulation follows the grid score, both with reader noise.
struct SimulatedReader {
  std::string reader_id;
  double malignancy_noise = 0.6;
  double manipulation_noise = 0.6;
  std::uint64_t seed = 0;
};

struct ReaderCalibration {
  double mass_threshold = 0.75;  // oracle score mapped to the scale middle
  double mass_slope = 8.0;       // scale points per unit oracle score
  double grid_threshold = 0.05;
  double grid_slope = 40.0;
};

// Runs one full session per reader through `service`, reading item images
// from `package_dir`.
void simulate_readers(ReadoutService& service, const std::filesystem::path& package_dir, const PhantomSpec& spec,
                      const std::vector<SimulatedReader>& readers, const ReaderCalibration& cal = {});

}  // namespace mammogan
