#include <doctest.h>

#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "mammogan/errors.hpp"
#include "mammogan/readout.hpp"
#include "mammogan/server.hpp"
#include "readout_checks.hpp"

using namespace mammogan;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mammogan_test_readout_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Readout readout1(std::uint64_t seed = 1) {
  std::map<std::string, double> scores;
  const auto m = checks::synthetic_manifest(60, {"main"}, scores, 3);
  return build_readout(readout1_design(), m, scores, seed);
}

// A counter clock keeps logs byte-comparable.
Clock counter_clock() {
  auto n = std::make_shared<int>(0);
  return [n] { return "t" + std::to_string((*n)++); };
}

void rate_all(ReadoutService& svc, const std::string& sid, int malignancy = 3) {
  for (;;) {
    const auto next = svc.next_item(sid);
    if (next["status"] == "complete") return;
    svc.submit_rating(sid, {next["item_id"], malignancy, 1});
  }
}

std::size_t line_count(const fs::path& p) {
  const auto s = slurp(p);
  return std::count(s.begin(), s.end(), '\n');
}

}  // namespace

TEST_CASE("built-in designs") {
  const auto d1 = readout1_design();
  d1.validate();
  CHECK(d1.total_items == 60);
  CHECK(d1.count_modified() == 30);
  CHECK(d1.count_original() == 30);
  CHECK(d1.manipulation_scale == ManipulationScale::binary);

  const auto d2 = readout2_design();
  d2.validate();
  CHECK(d2.total_items == 72);
  CHECK(d2.count_modified() == 36);
  CHECK(d2.count_original() == 36);
  std::size_t cancer = 0, early = 0;
  for (const auto& g : d2.groups) {
    cancer += 2 * g.pairs.cancer + g.single_original.cancer + g.single_modified.cancer;
    if (g.stage == "early") early += g.items();
  }
  CHECK(cancer == 36);
  CHECK(early == 18);
  CHECK(d2.manipulation_scale == ManipulationScale::likert5);

  CHECK(to_json(readout_design_from_json(to_json(d2))) == to_json(d2));
  auto j = to_json(d1);
  j["total_items"] = 61;
  CHECK_THROWS_AS(readout_design_from_json(j), DataError);
  j = to_json(d1);
  j["groups"][0]["split"] = "train";
  CHECK_THROWS_AS(readout_design_from_json(j), DataError);
  j = to_json(d1);
  j["colour"] = "red";
  CHECK_THROWS_AS(readout_design_from_json(j), DataError);
  CHECK_THROWS_AS(design_by_name("readout-3"), DataError);
}

TEST_CASE("readout-1 composition") {
  std::map<std::string, double> scores;
  const auto m = checks::synthetic_manifest(60, {"main"}, scores, 3);
  const auto r = build_readout(readout1_design(), m, scores, 7);
  CHECK(r.items.size() == 60);
  std::size_t mod = 0, paired = 0, cancer = 0;
  for (const auto& it : r.items) {
    mod += it.provenance == Provenance::modified;
    paired += it.pair_id.has_value();
    cancer += it.truth_class == ImageClass::cancer;
  }
  CHECK(mod == 30);
  CHECK(paired == 40);
  CHECK(cancer == 30);
  CHECK(min_pair_distance(r) >= 5);
  CHECK(checks::composition_violations(r, m, scores).empty());
  CHECK(r.items.front().item_id == "i001");
  CHECK(r.readout_id == "readout-1-7");

  const auto again = build_readout(readout1_design(), m, scores, 7);
  CHECK(to_json(again) == to_json(r));
  CHECK(to_json(build_readout(readout1_design(), m, scores, 8)) != to_json(r));
  CHECK(to_json(readout_from_json(to_json(r))) == to_json(r));
}

TEST_CASE("composition holds over 100 seeds for both designs") {
  std::map<std::string, double> scores;
  const auto m = checks::synthetic_manifest(60, {"main", "early", "late"}, scores, 5);
  std::size_t violations = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (const auto& d : {readout1_design(), readout2_design()}) {
      const auto r = build_readout(d, m, scores, seed);
      const auto v = checks::composition_violations(r, m, scores);
      if (!v.empty()) MESSAGE(d.name << " seed " << seed << ": " << v.front());
      violations += v.size();
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("insufficient candidates name the rule") {
  std::map<std::string, double> scores;
  const auto m = checks::synthetic_manifest(12, {"main"}, scores, 3);
  try {
    build_readout(readout1_design(), m, scores, 1);
    FAIL("expected an error");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("cancer") != std::string::npos);
    CHECK(msg.find("visible mass") != std::string::npos);
    CHECK(msg.find("found") != std::string::npos);
  }
  // Missing translations at the design's iteration.
  std::map<std::string, double> s2;
  const auto m2 = checks::synthetic_manifest(60, {"early"}, s2, 3);
  CHECK_THROWS_WITH_AS(build_readout(readout1_design(), m2, s2, 1), doctest::Contains("iteration 'main'"), DataError);
  // The filter needs scores.
  CHECK_THROWS_AS(build_readout(readout1_design(), m2, {}, 1), DataError);
  auto d = readout1_design();
  d.visible_mass_filter = false;
  CHECK_THROWS_AS(build_readout(d, m2, {}, 1), DataError);
}

TEST_CASE("session lifecycle, idempotency and durability") {
  const auto dir = temp_dir("session");
  const auto r = readout1(2);
  const auto log = dir / "events.jsonl";
  {
    ReadoutService svc(r, log, counter_clock());
    const auto sid = svc.create_session("reader-a");
    CHECK(sid == "s0001");
    CHECK_THROWS_AS(svc.create_session("bad id!"), ServiceError);

    auto next = svc.next_item(sid);
    CHECK(next["item_id"] == "i001");
    CHECK(next["position"] == 1);
    CHECK(next["total"] == 60);
    CHECK_FALSE(contains_truth(next));

    // Out of scale, wrong item, unknown session.
    const auto before = slurp(log);
    try {
      svc.submit_rating(sid, {"i001", 6, 0});
      FAIL("expected 422");
    } catch (const ServiceError& e) {
      CHECK(e.status() == 422);
    }
    try {
      svc.submit_rating(sid, {"i001", 3, 2});
      FAIL("expected 422");
    } catch (const ServiceError& e) {
      CHECK(e.status() == 422);
    }
    try {
      svc.submit_rating(sid, {"i002", 3, 0});
      FAIL("expected 409");
    } catch (const ServiceError& e) {
      CHECK(e.status() == 409);
    }
    try {
      svc.submit_rating("s9999", {"i001", 3, 0});
      FAIL("expected 404");
    } catch (const ServiceError& e) {
      CHECK(e.status() == 404);
    }
    CHECK(slurp(log) == before);

    CHECK(svc.submit_rating(sid, {"i001", 4, 1})["rated"] == 1);
    const auto after_first = slurp(log);
    try {
      svc.submit_rating(sid, {"i001", 4, 1});
      FAIL("expected 409");
    } catch (const ServiceError& e) {
      CHECK(e.status() == 409);
    }
    CHECK(slurp(log) == after_first);

    for (int k = 2; k <= 10; ++k) svc.submit_rating(sid, {svc.next_item(sid)["item_id"], 2, 0});
  }
  {
    // Restart after 10 ratings: resumes at item 11.
    ReadoutService svc(r, log, counter_clock());
    CHECK(svc.session("s0001").cursor == 10);
    CHECK(svc.next_item("s0001")["item_id"] == "i011");
    rate_all(svc, "s0001");
    CHECK(svc.session("s0001").status == SessionStatus::complete);
    CHECK(svc.next_item("s0001")["status"] == "complete");
    try {
      svc.submit_rating("s0001", {"i060", 3, 0});
      FAIL("expected 409");
    } catch (const ServiceError& e) {
      CHECK(e.status() == 409);
    }
  }
  CHECK(line_count(log) == 1 + 1 + 60);

  // A torn final line is dropped on replay.
  {
    std::ofstream(log, std::ios::app) << R"({"type":"rating","session_id":"s00)";
    ReadoutService svc(r, log, counter_clock());
    CHECK(svc.session("s0001").status == SessionStatus::complete);
    CHECK(slurp(log).back() == '\n');
  }
  // A log of another readout is refused.
  CHECK_THROWS_AS(ReadoutService(readout1(3), log), DataError);
}

TEST_CASE("export joins hidden truth and equals a replay of the log") {
  const auto dir = temp_dir("export");
  const auto r = readout1(4);
  ReadoutService svc(r, dir / "events.jsonl", counter_clock());
  CHECK_THROWS_AS(svc.export_ratings(), DataError);
  for (const char* reader : {"r1", "r2", "r3"}) rate_all(svc, svc.create_session(reader), 2);
  const auto partial = svc.create_session("r4");
  svc.submit_rating(partial, {"i001", 5, 1});

  std::vector<std::string> warnings;
  const auto rows = svc.export_ratings(&warnings);
  CHECK(rows.size() == 180);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("s0004") != std::string::npos);
  for (const auto& row : rows) {
    const auto& item = r.item(row.item_id);
    CHECK(row.truth_class == to_string(item.truth_class));
    CHECK(row.provenance == to_string(item.provenance));
    if (row.provenance == "modified") CHECK(row.image_id.find(item.original_id) == 0);
  }

  const auto replayed = export_from_log(r, dir / "events.jsonl");
  REQUIRE(replayed.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(to_json(replayed[i]) == to_json(rows[i]));
  CHECK(to_json(svc.export_ratings()[17]) == to_json(rows[17]));
}

TEST_CASE("concurrent sessions share one log") {
  const auto dir = temp_dir("concurrent");
  const auto r = readout1(5);
  ReadoutService svc(r, dir / "events.jsonl");
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&svc, t] { rate_all(svc, svc.create_session("reader" + std::to_string(t)), 1 + t); });
  for (auto& th : threads) th.join();
  for (const auto& s : svc.sessions()) CHECK(s.status == SessionStatus::complete);
  CHECK(line_count(dir / "events.jsonl") == 1 + 4 + 240);
  CHECK(export_from_log(r, dir / "events.jsonl").size() == 240);
}

TEST_CASE("truth detector") {
  CHECK(contains_truth(json{{"provenance", "x"}}));
  CHECK(contains_truth(json{{"a", {{"b", "healthy-0001"}}}}));
  CHECK(contains_truth(json::array({"Modified"})));
  CHECK_FALSE(contains_truth(json{{"item_id", "i001"}, {"position", 3}}));
}

TEST_CASE("http api") {
  const auto dir = temp_dir("http");
  const auto r = readout1(6);
  write_readout_package(dir, r, [](const ReadoutItem& it) {
    Image img(16, 16, -1.0f);
    img.at(0, 0) = it.provenance == Provenance::modified ? 1.0f : 0.0f;
    return img;
  });
  CHECK(to_json(read_readout_package(dir)) == to_json(r));

  ReadoutService svc(r, dir / "events.jsonl");
  ReadoutServer server(svc, dir, "secret");
  const int port = server.bind("127.0.0.1", 0);
  std::thread th([&server] { server.run(); });
  httplib::Client cli("127.0.0.1", port);

  std::vector<json> payloads;
  auto body = [&](const httplib::Result& res) {
    REQUIRE(res);
    auto j = json::parse(res->body);
    payloads.push_back(j);
    return j;
  };

  auto res = cli.Post("/sessions", R"({"reader_id":"alice"})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  const std::string sid = body(res)["session_id"];
  CHECK(cli.Post("/sessions", "not json", "application/json")->status == 400);
  CHECK(cli.Post("/sessions", R"({"reader_id":"bob","readout_id":"other"})", "application/json")->status == 404);

  res = cli.Get("/sessions/" + sid + "/next");
  CHECK(res->status == 200);
  auto next = body(res);
  CHECK(next["image_url"] == "/images/i001.png");
  auto img = cli.Get(next["image_url"].get<std::string>());
  REQUIRE(img);
  CHECK(img->status == 200);
  CHECK(img->body.substr(1, 3) == "PNG");
  CHECK(cli.Get("/images/readout.json")->status == 404);
  CHECK(cli.Get("/images/i999.png")->status == 404);
  CHECK(cli.Get("/sessions/nope/next")->status == 404);

  res = cli.Post("/sessions/" + sid + "/ratings", R"({"item_id":"i001","malignancy":9,"manipulation":0})",
                 "application/json");
  CHECK(res->status == 422);
  body(res);
  res = cli.Post("/sessions/" + sid + "/ratings", R"({"item_id":"i001","malignancy":"3","manipulation":0})",
                 "application/json");
  CHECK(res->status == 422);
  res = cli.Post("/sessions/" + sid + "/ratings", R"({"item_id":"i002","malignancy":3,"manipulation":0})",
                 "application/json");
  CHECK(res->status == 409);
  body(res);

  for (int k = 0; k < 60; ++k) {
    next = body(cli.Get("/sessions/" + sid + "/next"));
    json rating{{"item_id", next["item_id"]}, {"malignancy", 1 + k % 5}, {"manipulation", k % 2}};
    res = cli.Post("/sessions/" + sid + "/ratings", rating.dump(), "application/json");
    CHECK(res->status == 200);
    body(res);
  }
  res = cli.Post("/sessions/" + sid + "/ratings", R"({"item_id":"i060","malignancy":3,"manipulation":0})",
                 "application/json");
  CHECK(res->status == 409);
  CHECK(body(cli.Get("/sessions/" + sid + "/next"))["status"] == "complete");

  const std::string export_path = "/readouts/" + r.readout_id + "/export";
  CHECK(cli.Get(export_path)->status == 401);
  CHECK(cli.Get(export_path, {{"Authorization", "Bearer wrong"}})->status == 401);
  CHECK(cli.Get("/readouts/other/export", {{"Authorization", "Bearer secret"}})->status == 404);
  auto ex = cli.Get(export_path, {{"Authorization", "Bearer secret"}});
  REQUIRE(ex);
  CHECK(ex->status == 200);
  const auto rows = read_scoring_table(ex->body);
  CHECK(rows.size() == 60);
  auto csv = cli.Get(export_path + "?format=csv", {{"Authorization", "Bearer secret"}});
  CHECK(read_scoring_table(csv->body).size() == 60);

  for (const auto& p : payloads) CHECK_FALSE(contains_truth(p));

  server.stop();
  th.join();
}

TEST_CASE("export endpoint is disabled without a token") {
  const auto dir = temp_dir("notoken");
  const auto r = readout1(6);
  ReadoutService svc(r, dir / "events.jsonl");
  ReadoutServer server(svc, dir, "");
  const int port = server.bind("127.0.0.1", 0);
  std::thread th([&server] { server.run(); });
  httplib::Client cli("127.0.0.1", port);
  auto res = cli.Get("/readouts/" + r.readout_id + "/export", {{"Authorization", "Bearer "}});
  REQUIRE(res);
  CHECK(res->status == 403);
  server.stop();
  th.join();
}

TEST_CASE("simulated readers follow the lesion oracle") {
  const auto dir = temp_dir("sim");
  PhantomSpec spec;
  // Originals are phantoms; "modified" images get a faint checkerboard.
  DatasetManifest m;
  std::map<std::string, double> scores;
  std::map<std::string, Image> images;
  for (ImageClass c : {ImageClass::healthy, ImageClass::cancer})
    for (int i = 0; i < 40; ++i) {
      ImageRecord rec;
      rec.id = to_string(c) + "-" + std::to_string(i);
      rec.cls = c;
      rec.split = Split::eval;
      const auto p = generate_phantom(spec, c, 500 + i + (c == ImageClass::cancer ? 1000 : 0));
      images[rec.id] = p.image;
      if (c == ImageClass::cancer) scores[rec.id] = lesion_oracle_score(p.image, spec);
      m.records.push_back(rec);
      ImageRecord mod = rec;
      mod.id += "@main";
      mod.provenance = Provenance::modified;
      mod.original_id = rec.id;
      mod.source_iteration = "main";
      Image g = p.image;
      for (std::size_t y = 0; y < g.height; ++y)
        for (std::size_t x = 0; x < g.width; ++x) g.at(y, x) += (x + y) % 2 ? 0.15f : -0.15f;
      images[mod.id] = g;
      m.records.push_back(mod);
    }
  const auto r = build_readout(readout1_design(), m, scores, 9);
  write_readout_package(dir, r, [&](const ReadoutItem& it) { return images.at(it.image_id); });
  ReadoutService svc(r, dir / "events.jsonl", counter_clock());
  simulate_readers(svc, dir, spec, {{"sim1", 0.6, 0.6, 1}, {"sim2", 0.6, 0.6, 2}});
  const auto rows = svc.export_ratings();
  CHECK(rows.size() == 120);
  const auto rep = score_readout(rows);
  const auto& ovm = rep["analyses"]["original_vs_modified"];
  CHECK(ovm["readers"][0]["set_1"]["auc"].get<double>() > 0.8);
  CHECK(rep["analyses"]["manipulation"]["readers"][0]["set"]["auc"].get<double>() > 0.8);
}
