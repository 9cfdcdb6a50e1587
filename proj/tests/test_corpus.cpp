#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <random>
#include <sstream>

#include "advcot/corpus.h"
#include "fixtures.h"

using namespace advcot;
using fixtures::error_of;

namespace {

Corpus small_corpus() {
  std::istringstream in(
      "{\"doc_id\":\"a\",\"text\":\"alpha text\",\"title\":\"A\"}\n"
      "\n"
      "{\"doc_id\":\"b\",\"text\":\"beta text\"}\n");
  return Corpus::ingest(in, "c", "memory");
}

}  // namespace

TEST_CASE("ingest reads documents and skips blank lines") {
  Corpus c = small_corpus();
  CHECK(c.size() == 2);
  CHECK(c.original_count() == 2);
  CHECK(c.get("a").title == std::optional<std::string>("A"));
  CHECK(c.get("b").text == "beta text");
  CHECK(c.get("b").provenance == Provenance::original);
}

TEST_CASE("ingest errors") {
  auto ingest = [](const std::string& text) {
    std::istringstream in(text);
    return Corpus::ingest(in, "c", "memory");
  };
  CHECK(error_of([&] { ingest("{\"doc_id\":\"a\",\"text\":\"x\"}\nnot json\n"); }) ==
        ErrorCode::MalformedLine);
  CHECK(error_of([&] { ingest("{\"doc_id\":\"a\"}\n"); }) == ErrorCode::MalformedLine);
  CHECK(error_of([&] { ingest("{\"doc_id\":\"a\",\"text\":\"x\"}\n{\"doc_id\":\"a\",\"text\":\"y\"}\n"); }) ==
        ErrorCode::DuplicateDocId);
  CHECK(error_of([&] { ingest("\n\n"); }) == ErrorCode::EmptyStream);
}

TEST_CASE("serialize round-trips originals only") {
  Corpus c = small_corpus();
  c.inject(make_adversarial("q1", 0, "poison", "NA"));
  std::ostringstream out;
  c.serialize(out);
  std::istringstream in(out.str());
  Corpus back = Corpus::ingest(in, "c2", "memory");
  CHECK(back.size() == 2);
  CHECK(back.get("a") == c.get("a"));
  CHECK_FALSE(back.contains(adversarial_doc_id("q1", 0)));
}

TEST_CASE("inject retires the previous version of the same query") {
  Corpus c = small_corpus();
  c.inject(make_adversarial("q1", 0, "v0", "AdvCoT_iter"));
  c.inject(make_adversarial("q2", 0, "other", "AdvCoT_iter"));
  c.inject(make_adversarial("q1", 1, "v1", "AdvCoT_iter"));
  CHECK(adversarial_doc_id("q1", 1) == "q1.adv.v1");
  CHECK_FALSE(c.is_active("q1.adv.v0"));
  CHECK(c.is_active("q1.adv.v1"));
  CHECK(c.is_active("q2.adv.v0"));
  CHECK(c.active_adversarial("q1")->text == "v1");
  CHECK(c.adversarial_history("q1").size() == 2);
  CHECK(c.get("q1.adv.v0").text == "v0");
  CHECK(c.size() == 5);
  CHECK(c.active_size() == 4);
  CHECK(c.active_adversarial_count() == 2);
}

TEST_CASE("inject rejects invalid documents") {
  Corpus c = small_corpus();
  Document original{"x", std::nullopt, "t"};
  CHECK(error_of([&] { c.inject(original); }) == ErrorCode::InvalidDocument);
  CHECK(error_of([&] { c.inject(make_adversarial("q", 0, "", "NA")); }) ==
        ErrorCode::InvalidDocument);
  Document bad_id = make_adversarial("q", 0, "t", "NA");
  bad_id.doc_id = "a";
  CHECK(error_of([&] { c.inject(bad_id); }) == ErrorCode::InvalidDocument);
  c.inject(make_adversarial("q", 2, "t", "NA"));
  CHECK(error_of([&] { c.inject(make_adversarial("q", 2, "again", "NA")); }) ==
        ErrorCode::DuplicateDocId);
  CHECK(error_of([&] { c.inject(make_adversarial("q", 1, "older", "NA")); }) ==
        ErrorCode::InvalidDocument);
}

TEST_CASE("originals cannot be retired, unknown ids are reported") {
  Corpus c = small_corpus();
  CHECK(error_of([&] { c.retire("a"); }) == ErrorCode::AttemptedMutation);
  CHECK(error_of([&] { c.get("missing"); }) == ErrorCode::UnknownDocId);
  CHECK(error_of([&] { c.retire("missing"); }) == ErrorCode::UnknownDocId);
}

TEST_CASE("queries: duplicate and degenerate cases") {
  std::istringstream ok(
      "{\"qid\":\"1\",\"question\":\"q?\",\"correct_answer\":\"A\",\"target_answer\":\"B\"}\n");
  CHECK(load_queries(ok).size() == 1);
  std::istringstream dup(
      "{\"qid\":\"1\",\"question\":\"q?\",\"correct_answer\":\"A\",\"target_answer\":\"B\"}\n"
      "{\"qid\":\"1\",\"question\":\"r?\",\"correct_answer\":\"A\",\"target_answer\":\"B\"}\n");
  CHECK(error_of([&] { load_queries(dup); }) == ErrorCode::DuplicateQid);
  std::istringstream degenerate(
      "{\"qid\":\"1\",\"question\":\"q?\",\"correct_answer\":\"Paris.\",\"target_answer\":\"paris\"}\n");
  CHECK(error_of([&] { load_queries(degenerate); }) == ErrorCode::DegenerateCase);
}

TEST_CASE("property: random injections never alter existing bindings") {
  std::mt19937_64 rng(1234);
  Corpus c = small_corpus();
  std::map<std::string, std::string> seen{{"a", "alpha text"}, {"b", "beta text"}};
  std::map<std::string, int> next_version;
  for (int i = 0; i < 2000; ++i) {
    const std::string qid = "q" + std::to_string(rng() % 50);
    int& v = next_version[qid];
    if (rng() % 5 == 0 && v > 0) {
      // stale version: must be rejected without touching the store
      const int stale = static_cast<int>(rng() % static_cast<unsigned>(v));
      CHECK(error_of([&] { c.inject(make_adversarial(qid, stale, "stale", "NA")); }).has_value());
    } else {
      v += 1 + static_cast<int>(rng() % 3);
      const std::string text = "doc " + std::to_string(rng());
      c.inject(make_adversarial(qid, v, text, "NA"));
      seen[adversarial_doc_id(qid, v)] = text;
    }
    if (i % 100 == 0) {
      for (const auto& [id, text] : seen) REQUIRE(c.get(id).text == text);
    }
  }
  for (const auto& [id, text] : seen) CHECK(c.get(id).text == text);
  CHECK(c.active_adversarial_count() == next_version.size() -
                                            std::count_if(next_version.begin(), next_version.end(),
                                                          [](auto& kv) { return kv.second == 0; }));
}
