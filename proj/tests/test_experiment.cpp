#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <thread>

#include "advcot/experiment.h"
#include "fixtures.h"
#include "httplib.h"

using namespace advcot;
using fixtures::error_of;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

RunConfig suite_config(const fixtures::SuitePaths& p) { return RunConfig::load(p.config); }

}  // namespace

TEST_CASE("config defaults and validation") {
  RunConfig c;
  from_json(json{{"target", {{"mock_script", "s.json"}}}, {"attacker", {{"mock", true}}}}, c);
  CHECK(c.retriever.k == 5);
  CHECK(c.target.temperature == 0.3);
  CHECK(c.attack.max_rounds == 3);
  CHECK(c.attack.sample_size == 100);
  CHECK(c.attack.strategy == Strategy::AdvCoT_iter);
  c.validate();

  auto broken = [&](auto mutate) {
    RunConfig copy = c;
    mutate(copy);
    return error_of([&] { copy.validate(); });
  };
  CHECK(broken([](RunConfig& x) { x.retriever.k = 0; }) == ErrorCode::InvalidConfig);
  CHECK(broken([](RunConfig& x) { x.attack.max_rounds = -1; }) == ErrorCode::InvalidConfig);
  CHECK(broken([](RunConfig& x) { x.target.endpoint = "http://x"; }) == ErrorCode::InvalidConfig);
  CHECK(broken([](RunConfig& x) { x.attacker.mock = false; }) == ErrorCode::InvalidConfig);
  CHECK(broken([](RunConfig& x) { x.budgets.max_total_tokens = 0; }) == ErrorCode::InvalidConfig);

  RunConfig round_trip;
  from_json(json(c), round_trip);
  CHECK(json(round_trip) == json(c));
}

TEST_CASE("sampling is a seeded Fisher-Yates prefix") {
  std::vector<QueryCase> cases;
  for (int i = 0; i < 30; ++i) cases.push_back({"q" + std::to_string(i), "?", "a", "b"});
  auto a = sample_queries(cases, 10, 5);
  auto b = sample_queries(cases, 10, 5);
  CHECK(a == b);
  CHECK(a.size() == 10);
  CHECK(sample_queries(cases, 10, 6) != a);

  // reference shuffle
  std::vector<int> idx(30);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(5);
  for (int i = 29; i > 0; --i) std::swap(idx[i], idx[rng() % (i + 1)]);
  for (int i = 0; i < 10; ++i) CHECK(a[i].qid == "q" + std::to_string(idx[i]));
  CHECK(sample_queries(cases, 100, 1).size() == 30);
}

TEST_CASE("probe recovers the target's connectives") {
  fixtures::TempDir dir;
  auto p = fixtures::write_suite(dir.path());
  auto config = suite_config(p);
  auto skeleton = cmd_probe(config, p.queries, p.corpus, dir / "skeleton.json");
  CHECK(skeleton.trace_count == 5);
  CHECK(skeleton.phase(PhaseId::P1).frequency.at("let me") == 5);
  CHECK(skeleton.phase(PhaseId::P2).frequency.at("first") == 5);
  CHECK(skeleton.phase(PhaseId::P2).frequency.at("second") == 5);
  CHECK(skeleton.phase(PhaseId::P3).frequency.at("so, putting it all together") == 5);
  CHECK(fs::exists(dir / "skeleton.json"));

  config.attack.probe_queries = 0;
  CHECK(error_of([&] { cmd_probe(config, p.queries, std::nullopt, dir / "none.json"); }) ==
        ErrorCode::NoTraces);
}

TEST_CASE("probe over recorded transcripts replays identically") {
  fixtures::TempDir dir;
  auto p = fixtures::write_suite(dir.path());
  httplib::Server server;
  int served = 0;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++served;
    const std::string prompt = json::parse(req.body)["messages"][0]["content"];
    const std::string content = "<think>Okay, so the prompt has " + std::to_string(prompt.size()) +
                                " bytes.\nFirst, read.\nTherefore, done.</think>Done.";
    res.set_content(json{{"choices", {{{"message", {{"content", content}}}}}}}.dump(),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RunConfig config = suite_config(p);
  config.target.mock_script.reset();
  config.target.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  config.transcript_mode = RunConfig::TranscriptMode::record;
  config.transcript_dir = dir / "transcripts";
  auto live = cmd_probe(config, p.queries, p.corpus, dir / "live.json");
  server.stop();
  thread.join();
  CHECK(served == 5);
  CHECK(live.phase(PhaseId::P1).frequency.at("okay, so") == 5);

  config.transcript_mode = RunConfig::TranscriptMode::replay;
  auto replayed = cmd_probe(config, p.queries, p.corpus, dir / "replay.json");
  CHECK(json(replayed) == json(live));
  CHECK(served == 5);
}

TEST_CASE("twenty-query mock suite") {
  fixtures::TempDir dir;
  auto p = fixtures::write_suite(dir.path());
  auto run = cmd_attack(suite_config(p), p.corpus, p.queries, dir / "run");
  REQUIRE(run.records.size() == 20);
  CHECK(run.incomplete_qids().empty());
  auto m = run.metrics();
  REQUIRE(m.has_value());
  CHECK(m->n == 20);
  CHECK(m->r == 18);
  CHECK(m->s == 16);
  CHECK(m->asr() == m->asr_r() * m->asr_g());
  REQUIRE(m->cumulative.size() == 4);
  CHECK(m->cumulative[0] == Rational::of(8, 20));
  CHECK(m->cumulative[1] == Rational::of(13, 20));
  CHECK(m->cumulative[2] == Rational::of(16, 20));
  CHECK(m->cumulative[3] == Rational::of(16, 20));

  for (const char* name : {"config.snapshot", "report.main", "report.tsv", "skeleton.export"}) {
    CHECK(fs::exists(dir / "run" / name));
  }
  CHECK(fs::exists(record_path(dir / "run", "s01")));
  auto loaded = RunReport::load(dir / "run");
  CHECK(loaded.canonical_digest == run.canonical_digest);
  CHECK(canonical_digest(loaded) == run.canonical_digest);
  // every document version and raw response is kept
  auto s14 = json::parse(fixtures::read_text(record_path(dir / "run", "s14")));
  CHECK(s14["rounds"].size() == 3);
  CHECK(s14["rounds"][2]["document"]["text"].get<std::string>().rfind("PERSUADE-r2", 0) == 0);
  CHECK_FALSE(s14["rounds"][0]["response"]["raw_text"].get<std::string>().empty());
}

TEST_CASE("digest is stable across reruns, thread counts and output locations") {
  fixtures::TempDir a, b;
  auto pa = fixtures::write_suite(a.path(), 1);
  auto pb = fixtures::write_suite(b.path(), 8);
  auto ca = suite_config(pa);
  auto cb = suite_config(pb);
  cb.budgets.max_concurrent_requests = ca.budgets.max_concurrent_requests;
  auto first = cmd_attack(ca, pa.corpus, pa.queries, a / "run");
  auto second = cmd_attack(cb, pb.corpus, pb.queries, b / "elsewhere");
  CHECK(first.canonical_digest == second.canonical_digest);

  RunConfig reseeded = ca;
  reseeded.seed = 8;
  reseeded.attack.sample_size = 10;
  auto third = cmd_attack(reseeded, pa.corpus, pa.queries, a / "other");
  CHECK(third.canonical_digest != first.canonical_digest);
}

TEST_CASE("resume reuses finished cases") {
  fixtures::TempDir dir;
  auto p = fixtures::write_suite(dir.path());
  auto config = suite_config(p);
  auto full = cmd_attack(config, p.corpus, p.queries, dir / "run");
  fs::remove(record_path(dir / "run", "s03"));
  fs::remove(record_path(dir / "run", "s17"));
  fs::remove(dir / "run" / "report.main");
  auto resumed = cmd_attack(config, p.corpus, p.queries, dir / "run");
  CHECK(resumed.resumed == 18);
  CHECK(resumed.canonical_digest == full.canonical_digest);
}

TEST_CASE("naive attack against a refusing target") {
  fixtures::TempDir dir;
  auto p = fixtures::write_suite(dir.path());
  fixtures::write_text(p.script,
                       json{{"rules", json::array()},
                            {"default_respond",
                             {{"think_template", "Let me see."},
                              {"answer_template", "I cannot answer that."}}}}
                           .dump());
  auto config = suite_config(p);
  config.attack.strategy = Strategy::NA;
  auto run = cmd_attack(config, p.corpus, p.queries, dir / "run");
  auto m = run.metrics();
  REQUIRE(m.has_value());
  CHECK(m->s == 0);
  CHECK(m->asr() == Rational{});
  CHECK(m->r > 0);
  CHECK_FALSE(run.skeleton.has_value());
  for (const auto& r : run.records) CHECK(r.rounds.size() == 1);
}

TEST_CASE("budget exhaustion stops the run and keeps recorded usage within the cap") {
  fixtures::TempDir dir;
  auto p = fixtures::write_suite(dir.path(), 1);
  auto config = suite_config(p);
  config.budgets.max_total_tokens = 4000;
  CHECK(error_of([&] { cmd_attack(config, p.corpus, p.queries, dir / "run"); }) ==
        ErrorCode::BudgetExceeded);
  std::int64_t recorded = 0;
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "run" / "records")) {
    auto rec = json::parse(fixtures::read_text(e.path())).get<AttackRecord>();
    recorded += rec.total_cost.total();
    ++files;
  }
  CHECK(files > 0);
  CHECK(files < 20);
  CHECK(recorded <= 4000);
}

TEST_CASE("report merges runs and builds the transfer matrix") {
  fixtures::TempDir dir;
  auto p = fixtures::write_suite(dir.path());
  auto base = suite_config(p);
  auto run_as = [&](const std::string& model, const std::string& id,
                    std::optional<fs::path> from = std::nullopt, int k = 5) {
    RunConfig c = base;
    c.target.model = model;
    c.run_id = id;
    c.transfer_from = from;
    c.retriever.k = k;
    cmd_attack(c, p.corpus, p.queries, dir / id);
    return dir / id;
  };
  const auto a = run_as("A", "a");
  const auto b = run_as("B", "b");

  auto single = cmd_report({a});
  REQUIRE(single.rows.size() == 1);
  CHECK(single.rows[0].key.model == "A");
  CHECK(single.rows[0].s == 16);
  CHECK_FALSE(single.matrix.has_value());
  CHECK(error_of([&] { cmd_matrix({a, b}); }) == ErrorCode::MissingCell);

  const auto ab = run_as("B", "ab", a);
  CHECK(error_of([&] { cmd_matrix({a, b, ab}); }) == ErrorCode::MissingCell);
  const auto ba = run_as("A", "ba", b);
  auto merged = cmd_report({a, b, ab, ba});
  CHECK(merged.rows.size() == 4);
  REQUIRE(merged.matrix.has_value());
  CHECK(merged.matrix->models == std::vector<std::string>{"A", "B"});
  CHECK(merged.matrix->delta_percent(0, 0) == 0.0);
  CHECK(merged.matrix->delta_percent(1, 1) == 0.0);
  auto transfer = RunReport::load(ab);
  CHECK(transfer.source_model == std::optional<std::string>("A"));
  for (const auto& r : transfer.records) CHECK(r.rounds.size() == 1);

  const auto k3 = run_as("A", "k3", std::nullopt, 3);
  auto warned = cmd_report({a, k3});
  CHECK(warned.warnings.size() == 1);
  CHECK(warned.warnings[0].find("IncompatibleConfigs") != std::string::npos);

  fixtures::write_text(dir / "overrides.jsonl",
                       "{\"run_id\":\"a\",\"qid\":\"s17\",\"success\":true,\"note\":\"paraphrase\"}\n");
  auto judged = cmd_report({a}, dir / "overrides.jsonl");
  CHECK(judged.rows[0].s == 17);
}
