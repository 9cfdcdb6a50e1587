#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "advcot/evaluation.h"
#include "fixtures.h"
#include "oracles.h"

using namespace advcot;
using fixtures::error_of;

namespace {

std::vector<AttackRecord> counted(int n, int r, int s, int max_rounds = 0) {
  std::vector<AttackRecord> out;
  for (int i = 0; i < n; ++i) {
    AttackRecord rec;
    rec.qid = "q" + std::to_string(i);
    rec.max_rounds = max_rounds;
    AttackRound round;
    round.outcome.kind = i < s   ? OutcomeKind::Success
                         : i < r ? OutcomeKind::RetrievedNotMisled
                                 : OutcomeKind::NotRetrieved;
    rec.rounds.push_back(round);
    rec.final_outcome = round.outcome;
    out.push_back(rec);
  }
  return out;
}

AttackRecord succeeds_at(int round, int max_rounds) {
  AttackRecord rec;
  rec.max_rounds = max_rounds;
  for (int t = 0; t <= round; ++t) {
    AttackRound r;
    r.round_index = t;
    r.outcome.kind = t == round ? OutcomeKind::Success : OutcomeKind::RetrievedNotMisled;
    rec.rounds.push_back(r);
  }
  rec.final_outcome = rec.rounds.back().outcome;
  return rec;
}

AttackRecord never(int max_rounds) {
  AttackRecord rec;
  rec.max_rounds = max_rounds;
  for (int t = 0; t <= max_rounds; ++t) {
    AttackRound r;
    r.round_index = t;
    rec.rounds.push_back(r);
  }
  return rec;
}

}  // namespace

TEST_CASE("answer matching") {
  QueryCase q{"q", "?", "Lyon", "Paris"};
  MatchPolicy none;
  CHECK(match_answer("Paris.", q, none, "run"));
  CHECK(match_answer("The capital is Paris", q, none, "run"));
  CHECK_FALSE(match_answer("Parisian food", q, none, "run"));
  CHECK_FALSE(match_answer("Lyon", q, none, "run"));
  MatchPolicy policy;
  policy.overrides[{"run", "q"}] = false;
  CHECK_FALSE(match_answer("The capital is Paris", q, policy, "run"));
  CHECK(match_answer("The capital is Paris", q, policy, "other-run"));
  policy.overrides[{"run", "q"}] = true;
  CHECK(match_answer("City of light", q, policy, "run"));
}

TEST_CASE("overrides file") {
  fixtures::TempDir dir;
  fixtures::write_text(dir / "o.jsonl",
                       "{\"run_id\":\"r\",\"qid\":\"1\",\"success\":true,\"note\":\"synonym\"}\n");
  auto policy = MatchPolicy::load_overrides(dir / "o.jsonl");
  CHECK(policy.overrides.at({"r", "1"}));
  fixtures::write_text(dir / "bad.jsonl", "{\"run_id\":\"r\"}\n");
  CHECK(error_of([&] { MatchPolicy::load_overrides(dir / "bad.jsonl"); }) ==
        ErrorCode::MalformedLine);
}

TEST_CASE("rational arithmetic and display rounding") {
  CHECK(Rational::of(2, 4) == Rational{1, 2});
  CHECK(Rational::of(67, 90).percent_1dp() == 74.4);
  CHECK(Rational::of(1, 8).percent_1dp() == 12.5);
  CHECK(Rational::of(1, 16).percent_1dp() == 6.3);  // 6.25 rounds half up
  CHECK(Rational::of(9, 10) * Rational::of(67, 90) == Rational::of(67, 100));
  CHECK((Rational::of(1, 4) - Rational::of(1, 2)) == Rational{-1, 4});
}

TEST_CASE("metrics from counts") {
  struct Row {
    int n, r, s;
    double asr_r, asr_g, asr;
  };
  for (const Row& row : {Row{100, 90, 67, 90.0, 74.4, 67.0}, Row{100, 95, 65, 95.0, 68.4, 65.0},
                         Row{100, 99, 58, 99.0, 58.6, 58.0}, Row{10, 0, 0, 0.0, 0.0, 0.0}}) {
    auto m = compute_metrics(counted(row.n, row.r, row.s), {"m", "d", "s", "v"});
    CHECK(m.n == row.n);
    CHECK(m.r == row.r);
    CHECK(m.s == row.s);
    CHECK(m.asr_r().percent_1dp() == row.asr_r);
    CHECK(m.asr_g().percent_1dp() == row.asr_g);
    CHECK(m.asr().percent_1dp() == row.asr);
  }
  CHECK(error_of([] { compute_metrics({}, {}); }) == ErrorCode::EmptyRecordSet);
}

TEST_CASE("property: ASR equals ASR_r times ASR_g exactly") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 300; ++i) {
    auto records = oracles::random_records(rng, 1 + rng() % 60, 3);
    auto m = compute_metrics(records, {});
    CHECK(m.asr() == m.asr_r() * m.asr_g());
    CHECK(m.s <= m.r);
    CHECK(m.r <= m.n);
  }
}

TEST_CASE("round scaling") {
  std::vector<AttackRecord> records = {succeeds_at(0, 3), succeeds_at(1, 3), succeeds_at(1, 3),
                                       succeeds_at(2, 3), never(3)};
  auto series = round_scaling(records);
  REQUIRE(series.size() == 4);
  CHECK(series[0] == Rational::of(1, 5));
  CHECK(series[1] == Rational::of(3, 5));
  CHECK(series[2] == Rational::of(4, 5));
  CHECK(series[3] == Rational::of(4, 5));

  std::vector<AttackRecord> all_first(4, succeeds_at(0, 2));
  for (const auto& point : round_scaling(all_first)) CHECK(point == Rational::of(1, 1));

  records.push_back(succeeds_at(0, 1));
  CHECK(error_of([&] { round_scaling(records); }) == ErrorCode::MixedRoundBudgets);
}

TEST_CASE("property: scaling is monotone and ends at overall ASR") {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 100; ++i) {
    auto records = oracles::random_records(rng, 1 + rng() % 40, 3);
    auto series = round_scaling(records);
    for (std::size_t t = 1; t < series.size(); ++t) CHECK(series[t - 1].value() <= series[t].value());
    CHECK(series.back() == compute_metrics(records, {}).asr());
  }
}

TEST_CASE("cross-model matrix") {
  std::map<std::string, std::vector<AttackRecord>> native = {{"A", counted(10, 8, 6)},
                                                             {"B", counted(10, 9, 4)}};
  std::map<TransferKey, std::vector<AttackRecord>> transfer = {{{"A", "B"}, counted(10, 7, 2)},
                                                               {{"B", "A"}, counted(10, 9, 5)}};
  auto m = cross_model_matrix(native, transfer);
  REQUIRE(m.models == std::vector<std::string>{"A", "B"});
  CHECK(m.delta_percent(0, 0) == 0.0);
  CHECK(m.delta_percent(1, 1) == 0.0);
  CHECK(m.delta_percent(0, 1) == doctest::Approx(-20.0));  // 2/10 - 4/10
  CHECK(m.delta_percent(1, 0) == doctest::Approx(-10.0));  // 5/10 - 6/10

  std::map<TransferKey, std::vector<AttackRecord>> same = {{{"A", "B"}, native["B"]},
                                                           {{"B", "A"}, native["A"]}};
  auto zero = cross_model_matrix(native, same);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t t = 0; t < 2; ++t) CHECK(zero.delta_percent(s, t) == 0.0);

  transfer.erase({"A", "B"});
  CHECK(error_of([&] { cross_model_matrix(native, transfer); }) == ErrorCode::MissingCell);
}

TEST_CASE("overrides re-judge retrieved records only") {
  auto records = counted(3, 2, 0);
  records[0].rounds.back().response.answer_text = "It is Paris.";
  std::map<std::string, QueryCase> cases = {{"q0", {"q0", "?", "Lyon", "Paris"}}};
  MatchPolicy policy;
  policy.overrides[{"run", "q1"}] = true;
  policy.overrides[{"run", "q2"}] = true;
  apply_overrides(records, cases, policy, "run");
  CHECK(records[0].succeeded());
  CHECK(records[1].succeeded());
  CHECK_FALSE(records[2].succeeded());  // never retrieved
}

TEST_CASE("tsv tables") {
  auto m = compute_metrics(counted(100, 90, 67), {"m", "d", "AdvCoT_iter", "default"});
  const std::string tsv = metrics_table_tsv(std::vector<MetricsReport>{m});
  CHECK(tsv.find("m\td\tAdvCoT_iter\tdefault\t100\t90\t67\t90.0\t74.4\t67.0\n") !=
        std::string::npos);
}
