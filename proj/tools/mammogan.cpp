// mammogan: command-line entry point for the experiment pipeline.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <thread>

#include <CLI11.hpp>

#include "mammogan/errors.hpp"
#include "mammogan/image.hpp"
#include "mammogan/pipeline.hpp"
#include "mammogan/server.hpp"
#include "mammogan/version.hpp"

namespace fs = std::filesystem;
using namespace mammogan;

namespace {

struct Common {
  std::string config_path;
  std::string preset;
  std::string workdir;
  std::vector<std::string> overrides;
  bool quiet = false;
};

Log make_log(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& msg) { std::cerr << msg << std::endl; };
}

// Config file over preset defaults, then --set, then the given flag edits.
ExperimentConfig resolve(const Common& c, const std::string& fallback_preset,
                         const std::function<void(json&)>& flags = {}) {
  const std::string preset = c.preset.empty() ? fallback_preset : c.preset;
  ExperimentConfig base;
  if (preset == "exp1")
    base = exp1_defaults();
  else if (preset == "exp2")
    base = exp2_defaults();
  else
    throw DataError("unknown preset '" + preset + "' (exp1|exp2)");

  json j = json::object();
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path, std::ios::binary);
    if (!in) throw DataError("cannot read config '" + c.config_path + "'");
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError(c.config_path + ": " + e.what());
    }
  }
  for (const auto& o : c.overrides) apply_override(j, o);
  if (!c.workdir.empty()) j["workdir"] = c.workdir;
  if (flags) flags(j);
  return experiment_config_from_json(j, base);
}

// --steps rescales stage steps and the checkpoint interval with the total.
void rescale_steps(json& j, const ExperimentConfig& base, std::size_t steps) {
  if (steps == 0) throw DataError("--steps must be positive");
  const double f = static_cast<double>(steps) / static_cast<double>(base.train.total_steps);
  auto scaled = [&](std::size_t s) { return std::max<std::size_t>(1, static_cast<std::size_t>(s * f + 0.5)); };
  j["train"]["total_steps"] = steps;
  j["train"]["checkpoint_every"] = scaled(base.train.checkpoint_every);
  json stages = json::array();
  for (const auto& s : base.stages) stages.push_back({{"tag", s.tag}, {"step", std::min(steps, scaled(s.step))}});
  j["stages"] = stages;
}

std::string ascii_render(const Image& img, std::size_t cols) {
  static const std::string ramp = " .:-=+*#%@";
  cols = std::min(cols, img.width);
  const std::size_t rows = std::max<std::size_t>(1, img.height * cols / img.width / 2);
  std::string out;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const float v = img.at(r * img.height / rows, c * img.width / cols);
      const double t = std::clamp((v + 1.0) / 2.0, 0.0, 1.0);
      out += ramp[static_cast<std::size_t>(t * (ramp.size() - 1) + 0.5)];
    }
    out += '\n';
  }
  return out;
}

int read_rating(const std::string& prompt, int lo, int hi) {
  for (;;) {
    std::cout << prompt << " [" << lo << "-" << hi << ", q to stop]: " << std::flush;
    std::string line;
    if (!std::getline(std::cin, line) || line == "q") return -1;
    try {
      std::size_t used = 0;
      const int v = std::stoi(line, &used);
      if (used == line.size() && v >= lo && v <= hi) return v;
    } catch (const std::exception&) {
    }
    std::cout << "please enter a whole number from " << lo << " to " << hi << "\n";
  }
}

int terminal_readout(const ExperimentConfig& c, const std::string& reader, std::size_t cols) {
  const auto dir = c.readout_dir();
  ReadoutService svc(read_readout_package(dir), dir / "events.jsonl");
  std::string sid;
  for (const auto& s : svc.sessions())
    if (s.reader_id == reader && s.status == SessionStatus::active) sid = s.session_id;
  if (sid.empty()) {
    sid = svc.create_session(reader);
    std::cout << "new session " << sid << "\n";
  } else {
    std::cout << "resuming session " << sid << "\n";
  }
  const auto scales = svc.scales_payload();
  const int man_lo = scales["manipulation"]["min"], man_hi = scales["manipulation"]["max"];
  for (;;) {
    const auto next = svc.next_item(sid);
    if (next["status"] == "complete") {
      std::cout << "done\n";
      return 0;
    }
    const std::string item = next["item_id"];
    const auto path = dir / "images" / (item + ".png");
    std::cout << "\nimage " << next["position"].get<int>() << " of " << next["total"].get<int>() << "  ("
              << path.string() << ")\n"
              << ascii_render(read_png(path), cols);
    const int m = read_rating("likelihood of malignancy", 1, 5);
    if (m < 0) break;
    const int g = read_rating(man_hi == 1 ? "modified (1) or original (0)" : "likelihood of manipulation", man_lo, man_hi);
    if (g < 0) break;
    svc.submit_rating(sid, {item, m, g});
  }
  std::cout << "stopped; run again with the same reader id to resume\n";
  return 0;
}

int serve(const ExperimentConfig& c, const Log& log) {
  const auto dir = c.readout_dir();
  ReadoutService svc(read_readout_package(dir), dir / "events.jsonl");
  ReadoutServer server(svc, dir, c.serve.admin_token);

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  const int port = server.bind(c.serve.host, c.serve.port);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  waiter.detach();
  if (log) {
    log("serving readout " + svc.readout().readout_id + " on http://" + c.serve.host + ":" + std::to_string(port) +
        (c.serve.admin_token.empty() ? " (export disabled: no admin token)" : ""));
  }
  server.run();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale cycle-consistent translation of synthetic mammograms, readouts and reader statistics"};
  app.set_version_flag("--version", std::string("mammogan ") + kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("-c,--config", common.config_path, "Experiment config (JSON); see README for the schema")
      ->check(CLI::ExistingFile);
  app.add_option("--preset", common.preset, "Defaults the config file starts from: exp1 (64x64, readout-1) or exp2 "
                                             "(128x104, readout-2). reproduce-exp* pick their own");
  app.add_option("-w,--workdir", common.workdir, "Work directory (config key workdir)");
  app.add_option("--set", common.overrides, "Override any config key, e.g. --set train.lr=0.0001 (repeatable)");
  app.add_flag("-q,--quiet", common.quiet, "No progress messages");

  std::function<int()> action;

  auto* print = app.add_subcommand("show-config", "Print the effective config as JSON");
  print->callback([&] {
    action = [&] {
      std::cout << canonical_dump(to_json(resolve(common, "exp1"))) << "\n";
      return 0;
    };
  });

  auto* gen = app.add_subcommand("gen-data", "Generate (or import) the phantom dataset into <workdir>/data");
  std::string import_csv;
  std::optional<std::size_t> n_cancer, n_healthy;
  std::optional<std::uint64_t> data_seed;
  gen->add_option("--import", import_csv, "CSV of path,label (healthy|cancer) to import instead of generating")
      ->check(CLI::ExistingFile);
  gen->add_option("--cancer", n_cancer, "Cancer phantoms (dataset.cancer)");
  gen->add_option("--healthy", n_healthy, "Healthy phantoms (dataset.healthy)");
  gen->add_option("--seed", data_seed, "Dataset seed (dataset.seed)");
  gen->callback([&] {
    action = [&] {
      const auto c = resolve(common, "exp1", [&](json& j) {
        if (!import_csv.empty()) j["dataset"]["import_csv"] = fs::absolute(import_csv).string();
        if (n_cancer) j["dataset"]["cancer"] = *n_cancer;
        if (n_healthy) j["dataset"]["healthy"] = *n_healthy;
        if (data_seed) j["dataset"]["seed"] = *data_seed;
      });
      const auto m = run_gen_data(c, make_log(common));
      std::cout << "dataset: " << m.count(ImageClass::cancer) << " cancer, " << m.count(ImageClass::healthy)
                << " healthy in " << c.data_dir().string() << "\n";
      return 0;
    };
  });

  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> train_seed;
  auto steps_flag = [&](json& j, const std::string& preset) {
    if (!steps) return;
    const auto base = resolve(common, preset);
    rescale_steps(j, base, *steps);
  };

  auto* tr = app.add_subcommand("train", "Train from scratch to train.total_steps; checkpoints in <workdir>/train");
  tr->add_option("--steps", steps, "Total steps; stage steps and checkpoint interval scale along");
  tr->add_option("--seed", train_seed, "Training seed (train.seed)");
  tr->callback([&] {
    action = [&] {
      const auto c = resolve(common, "exp1", [&](json& j) {
        steps_flag(j, "exp1");
        if (train_seed) j["train"]["seed"] = *train_seed;
      });
      run_train(c, make_log(common));
      return 0;
    };
  });

  auto* tl = app.add_subcommand("translate", "Translate eval and test originals with a stage checkpoint");
  std::vector<std::string> tags;
  tl->add_option("--tag", tags, "Stage tag(s) from the config stages; default all");
  tl->callback([&] {
    action = [&] {
      const auto c = resolve(common, "exp1");
      std::vector<std::string> todo = tags;
      if (todo.empty())
        for (const auto& s : c.stages) todo.push_back(s.tag);
      for (const auto& t : todo) run_translate(c, t, make_log(common));
      return 0;
    };
  });

  auto* ar = app.add_subcommand("artifact-report", "Grid-artifact score of every checkpoint on eval images");
  ar->callback([&] {
    action = [&] {
      const auto c = resolve(common, "exp1");
      std::cout << curve_csv(run_artifact_report(c, make_log(common)));
      return 0;
    };
  });

  auto* br = app.add_subcommand("build-readout", "Select, order and render the blinded readout package");
  std::string design_name, readout_id;
  std::optional<std::uint64_t> readout_seed;
  br->add_option("--design", design_name, "readout-1 | readout-2 (readout.design)");
  br->add_option("--seed", readout_seed, "Readout seed (readout.seed)");
  br->add_option("--readout-id", readout_id, "Readout id (readout.id); default <design>-<seed>");
  br->callback([&] {
    action = [&] {
      const auto c = resolve(common, "exp1", [&](json& j) {
        if (!design_name.empty()) j["readout"]["design"] = design_name;
        if (readout_seed) j["readout"]["seed"] = *readout_seed;
        if (!readout_id.empty()) j["readout"]["id"] = readout_id;
      });
      const auto r = run_build_readout(c, make_log(common));
      std::cout << r.readout_id << "\n";
      return 0;
    };
  });

  auto* sv = app.add_subcommand("serve", "Run the readout HTTP service until interrupted");
  std::string host, token;
  std::optional<int> port;
  sv->add_option("--host", host, "Bind address (serve.host)");
  sv->add_option("--port", port, "Port, 0 for any free port (serve.port)");
  sv->add_option("--admin-token", token, "Bearer token for the export endpoint (serve.admin_token)")
      ->envname("MAMMOGAN_ADMIN_TOKEN");
  sv->callback([&] {
    action = [&] {
      const auto c = resolve(common, "exp1", [&](json& j) {
        if (!host.empty()) j["serve"]["host"] = host;
        if (port) j["serve"]["port"] = *port;
        if (!token.empty()) j["serve"]["admin_token"] = token;
      });
      return serve(c, make_log(common));
    };
  });

  auto* term = app.add_subcommand("terminal-readout", "Rate the readout in the terminal (same event log as serve)");
  std::string reader;
  std::size_t cols = 64;
  term->add_option("--reader", reader, "Reader id")->required();
  term->add_option("--columns", cols, "Width of the text rendering")->check(CLI::Range(8, 400));
  term->callback([&] { action = [&] { return terminal_readout(resolve(common, "exp1"), reader, cols); }; });

  auto* sim = app.add_subcommand("simulate-readers", "Rate the readout with deterministic simulated readers");
  std::optional<std::size_t> n_readers;
  sim->add_option("--count", n_readers, "Readers (readers.count)");
  sim->callback([&] {
    action = [&] {
      const auto c = resolve(common, "exp1", [&](json& j) {
        if (n_readers) j["readers"]["count"] = *n_readers;
      });
      run_simulated_readers(c, make_log(common));
      return 0;
    };
  });

  auto* ex = app.add_subcommand("export", "Join complete sessions with hidden truth into <workdir>/report/ratings.*");
  ex->callback([&] {
    action = [&] {
      run_export(resolve(common, "exp1"), make_log(common));
      return 0;
    };
  });

  auto* sc = app.add_subcommand("score", "AUC, DeLong and Stouffer report from an exported ratings table");
  std::string ratings, out_dir;
  bool paired = false, two_sided_input = false;
  sc->add_option("--ratings", ratings, "Ratings table (JSON lines or CSV); default <workdir>/report/ratings.jsonl");
  sc->add_option("--out", out_dir, "Output directory; default <workdir>/report");
  sc->add_flag("--paired", paired, "Paired DeLong for original vs modified (score.paired)");
  sc->add_flag("--two-sided-input", two_sided_input,
               "Halve per-reader p before Stouffer (score.one_sided_input=false)");
  sc->callback([&] {
    action = [&] {
      const auto c = resolve(common, "exp1", [&](json& j) {
        if (paired) j["score"]["paired"] = true;
        if (two_sided_input) j["score"]["one_sided_input"] = false;
      });
      const fs::path in = ratings.empty() ? c.report_dir() / "ratings.jsonl" : fs::path(ratings);
      std::ifstream f(in, std::ios::binary);
      if (!f) throw DataError("cannot read ratings '" + in.string() + "'");
      const std::string text{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
      const auto report = run_score(c, read_scoring_table(text), out_dir.empty() ? c.report_dir() : fs::path(out_dir),
                                    make_log(common));
      std::cout << report_table(report);
      return 0;
    };
  });

  for (const std::string preset : {"exp1", "exp2"}) {
    auto* rp = app.add_subcommand(
        "reproduce-" + preset,
        preset == "exp1" ? "First experiment end to end: data, training, translation, readout-1, simulated readers, report"
                         : "Second experiment end to end: early and late stages, readout-2, simulated readers, report");
    rp->add_option("--steps", steps, "Total steps; stage steps and checkpoint interval scale along");
    rp->add_option("--readers", n_readers, "Simulated readers (readers.count); 0 stops after the readout package");
    rp->callback([&, preset] {
      action = [&, preset] {
        const auto c = resolve(common, preset, [&](json& j) {
          steps_flag(j, preset);
          if (n_readers) j["readers"]["count"] = *n_readers;
        });
        run_reproduce(c, make_log(common));
        return 0;
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    return action();
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 2;
  } catch (const ServiceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
}
