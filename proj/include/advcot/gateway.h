#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advcot/corpus.h"
#include "advcot/retrieval.h"
#include "advcot/transport.h"
#include "json.hpp"

namespace advcot {

struct GenerationParams {
  std::string model_name;
  double temperature = 0.3;
  int max_output_tokens = 2048;
  std::chrono::milliseconds request_timeout{120000};
  int max_retries = 3;
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  std::int64_t total() const { return prompt_tokens + completion_tokens; }
  Usage& operator+=(const Usage& other) {
    prompt_tokens += other.prompt_tokens;
    completion_tokens += other.completion_tokens;
    return *this;
  }
  bool operator==(const Usage&) const = default;
};

/// What the attacker is allowed to see of one target-model call.
struct ModelResponse {
  std::string raw_text;
  std::string reasoning_trace;
  std::string answer_text;
  std::vector<std::string> presented_doc_ids;
  Usage usage;
  std::chrono::milliseconds latency{0};
};

/// Shared cap on tokens across a run. charge() either records the whole usage
/// or throws BudgetExceeded and records nothing, so used() <= max() always.
class TokenBudget {
 public:
  explicit TokenBudget(std::int64_t max_total_tokens);

  void require(std::int64_t tokens) const;
  void charge(const Usage& usage);
  std::int64_t used() const { return used_.load(); }
  std::int64_t max() const { return max_; }

 private:
  std::int64_t max_;
  std::atomic<std::int64_t> used_{0};
};

struct BackoffPolicy {
  std::chrono::milliseconds base{1000};
  double factor = 2.0;
  bool jitter = false;
  std::uint64_t jitter_seed = 0;

  std::chrono::milliseconds delay(int retry, std::mt19937_64* rng) const;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct GatewayOptions {
  BackoffPolicy backoff;
  Sleeper sleeper;  // defaults to std::this_thread::sleep_for
  std::shared_ptr<TokenBudget> budget;
  int max_in_flight = 4;
};

inline constexpr std::string_view kContextTemplateVersion = "context-v1";

/// Frozen RAG prompt: instruction line, one "[context i] <text>" line per
/// document in rank order, then "Question: <query>".
std::string build_context_prompt(std::string_view query, std::span<const Document> docs);

/// Splits raw output into trace and answer and records which documents were shown.
ModelResponse parse_model_output(std::string raw_text, std::span<const Document> docs);

/// The only channel to remote models. Speaks the chat-completions and
/// embeddings wire protocol over a Transport, retrying transient failures.
class ModelGateway {
 public:
  ModelGateway(std::shared_ptr<Transport> transport, GatewayOptions options = {});

  ModelResponse generate(const GenerationParams& params, std::string_view query,
                         std::span<const Document> docs);
  std::string complete(const GenerationParams& params, std::string_view prompt,
                       Usage* usage = nullptr);
  std::vector<std::vector<double>> embed(std::string_view model,
                                         const std::vector<std::string>& inputs,
                                         const GenerationParams& params = {});

  const std::shared_ptr<TokenBudget>& budget() const { return options_.budget; }

 private:
  nlohmann::json post_json(std::string_view path, const nlohmann::json& body,
                           const GenerationParams& params);
  std::string chat(const GenerationParams& params, std::string_view prompt, Usage& usage);

  std::shared_ptr<Transport> transport_;
  GatewayOptions options_;
  std::unique_ptr<std::counting_semaphore<1024>> in_flight_;
  std::mutex rng_mutex_;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Scripted mock target

struct MockRespond {
  std::string think_template;
  std::string answer_template;
};

struct MockMatch {
  std::optional<std::string> qid;
  // Exact doc id, or a prefix followed by '*'.
  std::optional<std::string> required_doc_id_retrieved;
  std::vector<std::string> required_tokens_in_retrieved_docs;
};

struct MockRule {
  MockMatch match;
  MockRespond respond;
};

/// Ordered rule table; the first matching rule answers, default_respond
/// otherwise. Templates may use {question}, {qid} and {matched_slot} (1-based
/// slot of the document matched by required_doc_id_retrieved).
struct MockScript {
  std::vector<MockRule> rules;
  MockRespond default_respond;

  static MockScript load(const std::filesystem::path& path);
};

void to_json(nlohmann::json& j, const MockScript& s);
void from_json(const nlohmann::json& j, MockScript& s);

/// Pure function of (script, qid, query, doc ids, doc texts).
ModelResponse scripted_generate(const MockScript& script, std::string_view query,
                                std::span<const Document> docs, std::string_view qid = {});

// ---------------------------------------------------------------------------
// Target model seen by the attack loop

struct QueryContext {
  std::string qid;
  std::string question;
};

class TargetModel {
 public:
  virtual ~TargetModel() = default;
  virtual ModelResponse answer(const QueryContext& query, std::span<const Document> docs) = 0;
  virtual std::string name() const = 0;
};

class RemoteTarget final : public TargetModel {
 public:
  RemoteTarget(std::shared_ptr<ModelGateway> gateway, GenerationParams params);
  ModelResponse answer(const QueryContext& query, std::span<const Document> docs) override;
  std::string name() const override { return params_.model_name; }

 private:
  std::shared_ptr<ModelGateway> gateway_;
  GenerationParams params_;
};

/// Scripted target; charges estimated usage to the budget when one is given.
class ScriptedTarget final : public TargetModel {
 public:
  explicit ScriptedTarget(MockScript script, std::shared_ptr<TokenBudget> budget = nullptr,
                          std::string name = "mock-target");
  ModelResponse answer(const QueryContext& query, std::span<const Document> docs) override;
  std::string name() const override { return name_; }

 private:
  MockScript script_;
  std::shared_ptr<TokenBudget> budget_;
  std::string name_;
};

/// Embeddings over the gateway, cached on disk by content hash.
class RemoteEmbeddingProvider final : public EmbeddingProvider {
 public:
  RemoteEmbeddingProvider(std::shared_ptr<ModelGateway> gateway, std::string model,
                          std::optional<std::filesystem::path> cache_dir);
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

 private:
  std::shared_ptr<ModelGateway> gateway_;
  std::string model_;
  std::optional<std::filesystem::path> cache_dir_;
};

void to_json(nlohmann::json& j, const Usage& u);
void from_json(const nlohmann::json& j, Usage& u);
void to_json(nlohmann::json& j, const ModelResponse& r);
void from_json(const nlohmann::json& j, ModelResponse& r);

}  // namespace advcot
