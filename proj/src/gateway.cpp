#include "advcot/gateway.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "advcot/errors.h"
#include "advcot/text.h"
#include "advcot/trace.h"

namespace advcot {

using nlohmann::json;

namespace {

bool is_transient(int status) {
  return status == 408 || status == 429 || status >= 500;
}

class SemaphoreGuard {
 public:
  explicit SemaphoreGuard(std::counting_semaphore<1024>& sem) : sem_(sem) { sem_.acquire(); }
  ~SemaphoreGuard() { sem_.release(); }
  SemaphoreGuard(const SemaphoreGuard&) = delete;
  SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

 private:
  std::counting_semaphore<1024>& sem_;
};

std::string fill(std::string_view tmpl, std::string_view question, std::string_view qid,
                 int matched_slot) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        auto name = tmpl.substr(i + 1, close - i - 1);
        if (name == "question") {
          out += question;
          i = close + 1;
          continue;
        }
        if (name == "qid") {
          out += qid;
          i = close + 1;
          continue;
        }
        if (name == "matched_slot") {
          out += std::to_string(matched_slot);
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

bool id_matches(std::string_view pattern, std::string_view doc_id) {
  if (!pattern.empty() && pattern.back() == '*') {
    auto prefix = pattern.substr(0, pattern.size() - 1);
    return doc_id.substr(0, prefix.size()) == prefix;
  }
  return pattern == doc_id;
}

}  // namespace

// ---------------------------------------------------------------------------

TokenBudget::TokenBudget(std::int64_t max_total_tokens) : max_(max_total_tokens) {
  if (max_ <= 0) throw Error(ErrorCode::InvalidConfig, "token budget must be positive");
}

void TokenBudget::require(std::int64_t tokens) const {
  if (used_.load() + tokens > max_) {
    throw Error(ErrorCode::BudgetExceeded, std::to_string(used_.load()) + " + " +
                                               std::to_string(tokens) + " > " +
                                               std::to_string(max_) + " tokens");
  }
}

void TokenBudget::charge(const Usage& usage) {
  const std::int64_t add = usage.total();
  std::int64_t current = used_.load();
  do {
    if (current + add > max_) {
      throw Error(ErrorCode::BudgetExceeded, std::to_string(current) + " + " +
                                                 std::to_string(add) + " > " +
                                                 std::to_string(max_) + " tokens");
    }
  } while (!used_.compare_exchange_weak(current, current + add));
}

std::chrono::milliseconds BackoffPolicy::delay(int retry, std::mt19937_64* rng) const {
  double ms = static_cast<double>(base.count()) * std::pow(factor, retry);
  if (jitter && rng != nullptr) {
    ms *= 0.5 + std::uniform_real_distribution<double>(0.0, 1.0)(*rng);
  }
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

// ---------------------------------------------------------------------------

std::string build_context_prompt(std::string_view query, std::span<const Document> docs) {
  std::string prompt = "Answer the question using the following context.\n";
  for (std::size_t i = 0; i < docs.size(); ++i) {
    prompt += "[context " + std::to_string(i + 1) + "] ";
    prompt += docs[i].text;
    prompt += '\n';
  }
  prompt += "Question: ";
  prompt += query;
  return prompt;
}

ModelResponse parse_model_output(std::string raw_text, std::span<const Document> docs) {
  ModelResponse response;
  auto split = extract_think_block(raw_text);
  response.reasoning_trace = std::move(split.reasoning_trace);
  response.answer_text = std::move(split.answer_text);
  response.raw_text = std::move(raw_text);
  for (const auto& doc : docs) response.presented_doc_ids.push_back(doc.doc_id);
  return response;
}

ModelGateway::ModelGateway(std::shared_ptr<Transport> transport, GatewayOptions options)
    : transport_(std::move(transport)),
      options_(std::move(options)),
      in_flight_(std::make_unique<std::counting_semaphore<1024>>(
          std::clamp(options_.max_in_flight, 1, 1024))),
      rng_(options_.backoff.jitter_seed) {
  if (!transport_) throw Error(ErrorCode::InvalidConfig, "gateway needs a transport");
  if (!options_.sleeper) {
    options_.sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
}

json ModelGateway::post_json(std::string_view path, const json& body,
                             const GenerationParams& params) {
  if (params.max_retries < 0) throw Error(ErrorCode::PreconditionViolation, "max_retries < 0");
  const std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= params.max_retries; ++attempt) {
    if (attempt > 0) {
      std::chrono::milliseconds wait;
      {
        std::lock_guard lock(rng_mutex_);
        wait = options_.backoff.delay(attempt - 1, &rng_);
      }
      options_.sleeper(wait);
    }
    HttpResponse response;
    try {
      SemaphoreGuard guard(*in_flight_);
      response = transport_->post(path, payload, params.request_timeout);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::TransportError) throw;
      last_error = e.what();
      continue;
    }
    if (response.status >= 200 && response.status < 300) {
      try {
        return json::parse(response.body);
      } catch (const json::parse_error&) {
        throw Error(ErrorCode::MalformedModelOutput, "response body is not JSON");
      }
    }
    last_error = "HTTP " + std::to_string(response.status);
    if (!is_transient(response.status)) break;
  }
  throw Error(ErrorCode::TransportError, std::string(path) + " failed after " +
                                             std::to_string(params.max_retries) +
                                             " retries: " + last_error);
}

std::string ModelGateway::chat(const GenerationParams& params, std::string_view prompt,
                               Usage& usage) {
  if (options_.budget) options_.budget->require(estimate_tokens(prompt));
  json body{{"model", params.model_name},
            {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
            {"temperature", params.temperature},
            {"max_tokens", params.max_output_tokens}};
  json reply = post_json("/chat/completions", body, params);

  std::string content;
  try {
    content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::MalformedModelOutput, "missing choices[0].message.content");
  }
  usage = Usage{estimate_tokens(prompt), estimate_tokens(content)};
  if (auto it = reply.find("usage"); it != reply.end() && it->is_object()) {
    usage.prompt_tokens = it->value("prompt_tokens", usage.prompt_tokens);
    usage.completion_tokens = it->value("completion_tokens", usage.completion_tokens);
  }
  if (options_.budget) options_.budget->charge(usage);
  return content;
}

ModelResponse ModelGateway::generate(const GenerationParams& params, std::string_view query,
                                     std::span<const Document> docs) {
  const auto started = std::chrono::steady_clock::now();
  Usage usage;
  std::string raw = chat(params, build_context_prompt(query, docs), usage);
  ModelResponse response = parse_model_output(std::move(raw), docs);
  response.usage = usage;
  response.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);
  return response;
}

std::string ModelGateway::complete(const GenerationParams& params, std::string_view prompt,
                                   Usage* usage) {
  if (trim(prompt).empty()) throw Error(ErrorCode::PreconditionViolation, "empty prompt");
  Usage local;
  std::string text = chat(params, prompt, local);
  if (usage != nullptr) *usage = local;
  return text;
}

std::vector<std::vector<double>> ModelGateway::embed(std::string_view model,
                                                     const std::vector<std::string>& inputs,
                                                     const GenerationParams& params) {
  if (inputs.empty()) return {};
  json reply = post_json("/embeddings", json{{"model", model}, {"input", inputs}}, params);
  std::vector<std::vector<double>> out(inputs.size());
  try {
    const auto& data = reply.at("data");
    if (data.size() != inputs.size()) {
      throw Error(ErrorCode::MalformedModelOutput, "embedding count mismatch");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t slot = data[i].value("index", i);
      if (slot >= out.size()) throw Error(ErrorCode::MalformedModelOutput, "bad index");
      out[slot] = data[i].at("embedding").get<std::vector<double>>();
    }
  } catch (const json::exception&) {
    throw Error(ErrorCode::MalformedModelOutput, "missing data[].embedding");
  }
  return out;
}

// ---------------------------------------------------------------------------

MockScript MockScript::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(in).get<MockScript>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidScript, path.string() + ": " + e.what());
  }
}

namespace {

json respond_json(const MockRespond& r) {
  return json{{"think_template", r.think_template}, {"answer_template", r.answer_template}};
}

MockRespond respond_from(const json& j) {
  return {j.value("think_template", std::string{}), j.value("answer_template", std::string{})};
}

}  // namespace

void to_json(json& j, const MockScript& s) {
  j = json::object();
  j["rules"] = json::array();
  for (const auto& rule : s.rules) {
    json match = json::object();
    if (rule.match.qid) match["qid"] = *rule.match.qid;
    if (rule.match.required_doc_id_retrieved) {
      match["required_doc_id_retrieved"] = *rule.match.required_doc_id_retrieved;
    }
    if (!rule.match.required_tokens_in_retrieved_docs.empty()) {
      match["required_tokens_in_retrieved_docs"] = rule.match.required_tokens_in_retrieved_docs;
    }
    j["rules"].push_back(json{{"match", match}, {"respond", respond_json(rule.respond)}});
  }
  j["default_respond"] = respond_json(s.default_respond);
}

void from_json(const json& j, MockScript& s) {
  if (!j.is_object() || !j.contains("default_respond")) {
    throw Error(ErrorCode::InvalidScript, "script needs default_respond");
  }
  s.rules.clear();
  for (const auto& rj : j.value("rules", json::array())) {
    MockRule rule;
    const json match = rj.value("match", json::object());
    if (match.contains("qid")) rule.match.qid = match["qid"].get<std::string>();
    if (match.contains("required_doc_id_retrieved")) {
      rule.match.required_doc_id_retrieved =
          match["required_doc_id_retrieved"].get<std::string>();
    }
    rule.match.required_tokens_in_retrieved_docs =
        match.value("required_tokens_in_retrieved_docs", std::vector<std::string>{});
    rule.respond = respond_from(rj.at("respond"));
    s.rules.push_back(std::move(rule));
  }
  s.default_respond = respond_from(j.at("default_respond"));
}

ModelResponse scripted_generate(const MockScript& script, std::string_view query,
                                std::span<const Document> docs, std::string_view qid) {
  std::string concatenated;
  for (const auto& doc : docs) {
    concatenated += doc.text;
    concatenated += '\n';
  }
  const MockRespond* chosen = &script.default_respond;
  int matched_slot = 0;
  for (const auto& rule : script.rules) {
    if (rule.match.qid && *rule.match.qid != qid) continue;
    int slot = 0;
    if (rule.match.required_doc_id_retrieved) {
      for (std::size_t i = 0; i < docs.size(); ++i) {
        if (id_matches(*rule.match.required_doc_id_retrieved, docs[i].doc_id)) {
          slot = static_cast<int>(i + 1);
          break;
        }
      }
      if (slot == 0) continue;
    }
    bool tokens_present = true;
    for (const auto& token : rule.match.required_tokens_in_retrieved_docs) {
      if (concatenated.find(token) == std::string::npos) {
        tokens_present = false;
        break;
      }
    }
    if (!tokens_present) continue;
    chosen = &rule.respond;
    matched_slot = slot;
    break;
  }

  const std::string think = fill(chosen->think_template, query, qid, matched_slot);
  const std::string answer = fill(chosen->answer_template, query, qid, matched_slot);
  std::string raw = think.empty() ? answer
                                  : std::string(kThinkOpen) + think + std::string(kThinkClose) +
                                        answer;
  ModelResponse response = parse_model_output(std::move(raw), docs);
  response.usage = {estimate_tokens(build_context_prompt(query, docs)),
                    estimate_tokens(response.raw_text)};
  return response;
}

// ---------------------------------------------------------------------------

RemoteTarget::RemoteTarget(std::shared_ptr<ModelGateway> gateway, GenerationParams params)
    : gateway_(std::move(gateway)), params_(std::move(params)) {}

ModelResponse RemoteTarget::answer(const QueryContext& query, std::span<const Document> docs) {
  return gateway_->generate(params_, query.question, docs);
}

ScriptedTarget::ScriptedTarget(MockScript script, std::shared_ptr<TokenBudget> budget,
                               std::string name)
    : script_(std::move(script)), budget_(std::move(budget)), name_(std::move(name)) {}

ModelResponse ScriptedTarget::answer(const QueryContext& query, std::span<const Document> docs) {
  ModelResponse response = scripted_generate(script_, query.question, docs, query.qid);
  if (budget_) budget_->charge(response.usage);
  return response;
}

// ---------------------------------------------------------------------------

RemoteEmbeddingProvider::RemoteEmbeddingProvider(std::shared_ptr<ModelGateway> gateway,
                                                 std::string model,
                                                 std::optional<std::filesystem::path> cache_dir)
    : gateway_(std::move(gateway)), model_(std::move(model)), cache_dir_(std::move(cache_dir)) {
  if (cache_dir_) std::filesystem::create_directories(*cache_dir_);
}

std::vector<std::vector<double>> RemoteEmbeddingProvider::embed(
    const std::vector<std::string>& texts) {
  std::vector<std::vector<double>> out(texts.size());
  std::vector<std::size_t> missing;
  std::vector<std::filesystem::path> paths(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (cache_dir_) {
      paths[i] = *cache_dir_ / (sha256_hex(model_ + '\n' + texts[i]) + ".json");
      std::ifstream in(paths[i]);
      if (in) {
        try {
          out[i] = json::parse(in).get<std::vector<double>>();
          continue;
        } catch (const json::exception&) {
          // unreadable cache entry, refetch
        }
      }
    }
    missing.push_back(i);
  }
  if (missing.empty()) return out;

  std::vector<std::string> batch;
  batch.reserve(missing.size());
  for (std::size_t i : missing) batch.push_back(texts[i]);
  auto fetched = gateway_->embed(model_, batch);
  for (std::size_t m = 0; m < missing.size(); ++m) {
    const std::size_t i = missing[m];
    out[i] = std::move(fetched[m]);
    if (cache_dir_) {
      auto tmp = paths[i];
      tmp += ".tmp";
      {
        std::ofstream file(tmp);
        file << json(out[i]).dump();
      }
      std::filesystem::rename(tmp, paths[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void to_json(json& j, const Usage& u) {
  j = json{{"prompt_tokens", u.prompt_tokens}, {"completion_tokens", u.completion_tokens}};
}

void from_json(const json& j, Usage& u) {
  u.prompt_tokens = j.value("prompt_tokens", std::int64_t{0});
  u.completion_tokens = j.value("completion_tokens", std::int64_t{0});
}

void to_json(json& j, const ModelResponse& r) {
  j = json{{"raw_text", r.raw_text},
           {"reasoning_trace", r.reasoning_trace},
           {"answer_text", r.answer_text},
           {"presented_doc_ids", r.presented_doc_ids},
           {"usage", r.usage},
           {"latency_ms", r.latency.count()}};
}

void from_json(const json& j, ModelResponse& r) {
  r.raw_text = j.at("raw_text").get<std::string>();
  r.reasoning_trace = j.value("reasoning_trace", std::string{});
  r.answer_text = j.value("answer_text", std::string{});
  r.presented_doc_ids = j.value("presented_doc_ids", std::vector<std::string>{});
  r.usage = j.value("usage", Usage{});
  r.latency = std::chrono::milliseconds(j.value("latency_ms", std::int64_t{0}));
}

}  // namespace advcot
