#include "advcot/experiment.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "advcot/text.h"
#include "advcot/transport.h"

namespace advcot {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void read_opt(const json& j, const char* key, std::optional<T>& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

template <typename T>
void read_or(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

json opt_path(const std::optional<fs::path>& p) {
  return p ? json(p->string()) : json(nullptr);
}

json opt_string(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string file_hash(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string_view to_string(RunConfig::TranscriptMode m) {
  switch (m) {
    case RunConfig::TranscriptMode::record: return "record";
    case RunConfig::TranscriptMode::replay: return "replay";
    default: return "off";
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void from_json(const json& j, RunConfig& c) {
  read_or(j, "run_id", c.run_id);
  read_or(j, "dataset", c.dataset);
  read_or(j, "variant", c.variant);
  read_or(j, "seed", c.seed);
  read_or(j, "api_key_env", c.api_key_env);

  if (auto r = j.find("retriever"); r != j.end()) {
    if (auto b = r->find("backend"); b != r->end()) {
      c.retriever.backend = parse_backend(b->get<std::string>());
    }
    read_or(*r, "k", c.retriever.k);
    if (auto bm = r->find("bm25"); bm != r->end()) {
      read_or(*bm, "k1", c.retriever.bm25.k1);
      read_or(*bm, "b", c.retriever.bm25.b);
    }
    if (auto e = r->find("embedding"); e != r->end()) {
      read_or(*e, "dim", c.retriever.dim);
      read_opt(*e, "endpoint", c.retriever.endpoint);
      read_or(*e, "model", c.retriever.model);
      std::optional<std::string> cache;
      read_opt(*e, "cache_dir", cache);
      if (cache) c.retriever.cache_dir = *cache;
    }
  }
  if (auto t = j.find("target"); t != j.end()) {
    read_opt(*t, "endpoint", c.target.endpoint);
    read_or(*t, "model", c.target.model);
    read_or(*t, "temperature", c.target.temperature);
    read_or(*t, "max_output_tokens", c.target.max_output_tokens);
    std::optional<std::string> script;
    read_opt(*t, "mock_script", script);
    if (script) c.target.mock_script = *script;
  }
  if (auto a = j.find("attacker"); a != j.end()) {
    read_opt(*a, "endpoint", c.attacker.endpoint);
    read_or(*a, "model", c.attacker.model);
    read_or(*a, "mock", c.attacker.mock);
    read_or(*a, "mention_question", c.attacker.mention_question);
    std::optional<std::string> dir;
    read_opt(*a, "templates_dir", dir);
    if (dir) c.attacker.templates_dir = *dir;
  }
  if (auto a = j.find("attack"); a != j.end()) {
    if (auto s = a->find("strategy"); s != a->end()) {
      c.attack.strategy = parse_strategy(s->get<std::string>());
    }
    read_or(*a, "max_rounds", c.attack.max_rounds);
    read_or(*a, "sample_size", c.attack.sample_size);
    read_or(*a, "probe_queries", c.attack.probe_queries);
    std::optional<std::string> skeleton, lexicon;
    read_opt(*a, "skeleton_path", skeleton);
    read_opt(*a, "lexicon_path", lexicon);
    if (skeleton) c.attack.skeleton_path = *skeleton;
    if (lexicon) c.attack.lexicon_path = *lexicon;
  }
  if (auto e = j.find("eval"); e != j.end()) {
    std::optional<std::string> overrides;
    read_opt(*e, "overrides_path", overrides);
    if (overrides) c.overrides_path = *overrides;
  }
  if (auto b = j.find("budgets"); b != j.end()) {
    read_or(*b, "max_total_tokens", c.budgets.max_total_tokens);
    read_or(*b, "max_concurrent_requests", c.budgets.max_concurrent_requests);
  }
  std::optional<std::string> transfer;
  read_opt(j, "transfer_from", transfer);
  if (transfer) c.transfer_from = *transfer;
  if (auto t = j.find("transcripts"); t != j.end() && !t->is_null()) {
    const auto mode = t->value("mode", std::string("off"));
    if (mode == "record") {
      c.transcript_mode = RunConfig::TranscriptMode::record;
    } else if (mode == "replay") {
      c.transcript_mode = RunConfig::TranscriptMode::replay;
    } else if (mode != "off") {
      throw Error(ErrorCode::InvalidConfig, "transcripts.mode: " + mode);
    }
    std::optional<std::string> dir;
    read_opt(*t, "dir", dir);
    if (dir) c.transcript_dir = *dir;
  }
}

void to_json(json& j, const RunConfig& c) {
  j = json{
      {"run_id", c.run_id},
      {"dataset", c.dataset},
      {"variant", c.variant},
      {"seed", c.seed},
      {"api_key_env", c.api_key_env},
      {"retriever",
       {{"backend", to_string(c.retriever.backend)},
        {"k", c.retriever.k},
        {"bm25", {{"k1", c.retriever.bm25.k1}, {"b", c.retriever.bm25.b}}},
        {"embedding",
         {{"dim", c.retriever.dim},
          {"endpoint", opt_string(c.retriever.endpoint)},
          {"model", c.retriever.model},
          {"cache_dir", opt_path(c.retriever.cache_dir)}}}}},
      {"target",
       {{"endpoint", opt_string(c.target.endpoint)},
        {"model", c.target.model},
        {"temperature", c.target.temperature},
        {"max_output_tokens", c.target.max_output_tokens},
        {"mock_script", opt_path(c.target.mock_script)}}},
      {"attacker",
       {{"endpoint", opt_string(c.attacker.endpoint)},
        {"model", c.attacker.model},
        {"mock", c.attacker.mock},
        {"mention_question", c.attacker.mention_question},
        {"templates_dir", opt_path(c.attacker.templates_dir)}}},
      {"attack",
       {{"strategy", to_string(c.attack.strategy)},
        {"max_rounds", c.attack.max_rounds},
        {"sample_size", c.attack.sample_size},
        {"probe_queries", c.attack.probe_queries},
        {"skeleton_path", opt_path(c.attack.skeleton_path)},
        {"lexicon_path", opt_path(c.attack.lexicon_path)}}},
      {"eval", {{"overrides_path", opt_path(c.overrides_path)}}},
      {"budgets",
       {{"max_total_tokens", c.budgets.max_total_tokens},
        {"max_concurrent_requests", c.budgets.max_concurrent_requests}}},
      {"transfer_from", opt_path(c.transfer_from)},
      {"transcripts",
       {{"mode", to_string(c.transcript_mode)}, {"dir", opt_path(c.transcript_dir)}}},
  };
}

RunConfig RunConfig::load(const fs::path& path) {
  RunConfig config;
  try {
    from_json(json::parse(read_file(path)), config);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  config.resolve_paths(path.parent_path());
  config.validate();
  return config;
}

void RunConfig::resolve_paths(const fs::path& base) {
  for (auto* p : {&retriever.cache_dir, &target.mock_script, &attacker.templates_dir,
                  &attack.skeleton_path, &attack.lexicon_path, &overrides_path, &transfer_from,
                  &transcript_dir}) {
    if (*p && (*p)->is_relative()) *p = base / **p;
  }
}

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (retriever.k < 1) fail("retriever.k must be >= 1");
  if (attack.max_rounds < 0) fail("attack.max_rounds must be >= 0");
  if (attack.sample_size < 1) fail("attack.sample_size must be >= 1");
  if (attack.probe_queries < 0) fail("attack.probe_queries must be >= 0");
  if (budgets.max_total_tokens <= 0) fail("budgets.max_total_tokens must be positive");
  if (budgets.max_concurrent_requests < 1) fail("budgets.max_concurrent_requests must be >= 1");
  if (target.endpoint.has_value() == target.mock_script.has_value()) {
    fail("target needs exactly one of endpoint and mock_script");
  }
  if (attacker.endpoint.has_value() == attacker.mock) {
    fail("attacker needs exactly one of endpoint and mock");
  }
  if (retriever.backend == Backend::remote_embedding && !retriever.endpoint) {
    fail("remote_embedding needs retriever.embedding.endpoint");
  }
  if (retriever.backend == Backend::hashed_embedding && retriever.dim == 0) {
    fail("retriever.embedding.dim must be positive");
  }
  if (transcript_mode != TranscriptMode::off && !transcript_dir) {
    fail("transcripts.dir is required when recording or replaying");
  }
}

// ---------------------------------------------------------------------------
// Backends

namespace {

std::shared_ptr<Transport> make_transport(const RunConfig& config, const std::string& endpoint,
                                          const std::string& channel) {
  if (config.transcript_mode == RunConfig::TranscriptMode::replay) {
    return std::make_shared<ReplayTransport>(*config.transcript_dir / (channel + ".jsonl"));
  }
  std::optional<std::string> key;
  if (const char* value = std::getenv(config.api_key_env.c_str()); value && *value) key = value;
  auto http = std::make_shared<HttpTransport>(endpoint, key);
  if (config.transcript_mode == RunConfig::TranscriptMode::record) {
    fs::create_directories(*config.transcript_dir);
    return std::make_shared<RecordingTransport>(http,
                                                *config.transcript_dir / (channel + ".jsonl"));
  }
  return http;
}

std::shared_ptr<ModelGateway> make_gateway(const RunConfig& config, const std::string& endpoint,
                                           const std::string& channel,
                                           std::shared_ptr<TokenBudget> budget) {
  GatewayOptions options;
  options.budget = std::move(budget);
  options.max_in_flight = config.budgets.max_concurrent_requests;
  options.backoff.jitter_seed = config.seed;
  return std::make_shared<ModelGateway>(make_transport(config, endpoint, channel), options);
}

}  // namespace

RunBackends make_backends(const RunConfig& config) {
  config.validate();
  RunBackends backends;
  backends.budget = std::make_shared<TokenBudget>(config.budgets.max_total_tokens);

  if (config.target.mock_script) {
    backends.target = std::make_shared<ScriptedTarget>(MockScript::load(*config.target.mock_script),
                                                       backends.budget, config.target.model);
  } else {
    GenerationParams params;
    params.model_name = config.target.model;
    params.temperature = config.target.temperature;
    params.max_output_tokens = config.target.max_output_tokens;
    backends.target = std::make_shared<RemoteTarget>(
        make_gateway(config, *config.target.endpoint, "target", backends.budget), params);
  }

  AgentTemplates templates = config.attacker.templates_dir
                                 ? AgentTemplates::load_dir(*config.attacker.templates_dir)
                                 : AgentTemplates::defaults();
  if (config.attacker.mock) {
    MockAgentOptions options;
    options.mention_question = config.attacker.mention_question;
    backends.agent = std::make_shared<MockAgent>(options, backends.budget, std::move(templates));
  } else {
    GenerationParams params;
    params.model_name = config.attacker.model;
    params.temperature = config.target.temperature;
    backends.agent = std::make_shared<RemoteAgent>(
        make_gateway(config, *config.attacker.endpoint, "attacker", backends.budget), params,
        std::move(templates));
  }

  IndexParams index_params;
  index_params.bm25 = config.retriever.bm25;
  index_params.hashed_dim = config.retriever.dim;
  if (config.retriever.backend == Backend::remote_embedding) {
    index_params.embedder = std::make_shared<RemoteEmbeddingProvider>(
        make_gateway(config, *config.retriever.endpoint, "embedding", backends.budget),
        config.retriever.model, config.retriever.cache_dir);
  }
  const Backend backend = config.retriever.backend;
  backends.index_builder = [backend, index_params](const Corpus& corpus) {
    return RetrievalIndex::build(corpus, backend, index_params);
  };
  return backends;
}

std::vector<QueryCase> sample_queries(std::vector<QueryCase> cases, std::size_t count,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = cases.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(cases[i - 1], cases[j]);
  }
  if (cases.size() > count) cases.resize(count);
  return cases;
}

ReasoningSkeleton probe_skeleton(const std::vector<QueryCase>& probes, const Corpus* corpus,
                                 const RunBackends& backends, const RunConfig& config) {
  const CueLexicon lexicon = config.attack.lexicon_path
                                 ? CueLexicon::load(*config.attack.lexicon_path)
                                 : CueLexicon::seed();
  std::optional<RetrievalIndex> index;
  if (corpus != nullptr && corpus->active_size() > 0) index = backends.index_builder(*corpus);

  std::vector<std::string> traces;
  for (const auto& query : probes) {
    std::vector<Document> docs;
    if (index) {
      for (const auto& hit : index->retrieve_top_k(query.question, config.retriever.k).hits) {
        docs.push_back(corpus->get(hit.doc_id));
      }
    }
    ModelResponse response = backends.target->answer({query.qid, query.question}, docs);
    if (!trim(response.reasoning_trace).empty()) traces.push_back(response.reasoning_trace);
  }
  return extract_skeleton(traces, lexicon);
}

// ---------------------------------------------------------------------------
// Reports

std::optional<MetricsReport> RunReport::metrics() const {
  std::vector<AttackRecord> complete;
  for (const auto& r : records) {
    if (r.status == RecordStatus::complete) complete.push_back(r);
  }
  if (complete.empty()) return std::nullopt;
  return compute_metrics(complete, group);
}

std::vector<std::string> RunReport::incomplete_qids() const {
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (r.status == RecordStatus::incomplete) out.push_back(r.qid);
  }
  return out;
}

json RunReport::to_json() const {
  json j{{"run_id", run_id},
         {"config", config},
         {"inputs", inputs},
         {"target_model", target_model},
         {"source_model", opt_string(source_model)},
         {"group",
          {{"model", group.model},
           {"dataset", group.dataset},
           {"strategy", group.strategy},
           {"variant", group.variant}}},
         {"k", k},
         {"records", records},
         {"incomplete", incomplete_qids()},
         {"skeleton", skeleton ? json(*skeleton) : json(nullptr)},
         {"cost", {{"tokens", tokens}, {"wall_clock_ms", wall_clock_ms}}},
         {"canonical_digest", canonical_digest}};
  if (auto m = metrics()) {
    j["metrics"] = *m;
    j["scaling"] = json::array();
    for (const auto& point : m->cumulative) j["scaling"].push_back(to_json_value(point));
  } else {
    j["metrics"] = nullptr;
    j["scaling"] = json::array();
  }
  return j;
}

RunReport RunReport::from_json(const json& j) {
  RunReport r;
  r.run_id = j.at("run_id").get<std::string>();
  r.config = j.value("config", json::object());
  r.inputs = j.value("inputs", json::object());
  r.target_model = j.at("target_model").get<std::string>();
  read_opt(j, "source_model", r.source_model);
  const auto& g = j.at("group");
  r.group = {g.at("model").get<std::string>(), g.at("dataset").get<std::string>(),
             g.at("strategy").get<std::string>(), g.at("variant").get<std::string>()};
  r.k = j.at("k").get<int>();
  r.records = j.at("records").get<std::vector<AttackRecord>>();
  if (auto s = j.find("skeleton"); s != j.end() && !s->is_null()) {
    r.skeleton = s->get<ReasoningSkeleton>();
  }
  if (auto c = j.find("cost"); c != j.end()) {
    r.tokens = c->at("tokens").get<Usage>();
    r.wall_clock_ms = c->value("wall_clock_ms", std::int64_t{0});
  }
  r.canonical_digest = j.value("canonical_digest", std::string());
  return r;
}

RunReport RunReport::load(const fs::path& run_dir) {
  try {
    return from_json(json::parse(read_file(run_dir / "report.main")));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, (run_dir / "report.main").string() + ": " + e.what());
  }
}

namespace {

const std::set<std::string>& volatile_keys() {
  static const std::set<std::string> keys{"latency_ms", "wall_clock_ms", "timestamp",
                                          "canonical_digest"};
  return keys;
}

void strip_volatile(json& j) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end();) {
      if (volatile_keys().count(it.key())) {
        it = j.erase(it);
      } else {
        strip_volatile(it.value());
        ++it;
      }
    }
  } else if (j.is_array()) {
    for (auto& item : j) strip_volatile(item);
  }
}

// Path-valued config fields; their content is covered by `inputs`.
void strip_paths(json& config) {
  const std::vector<json::json_pointer> pointers{
      json::json_pointer("/retriever/embedding/cache_dir"),
      json::json_pointer("/target/mock_script"),
      json::json_pointer("/attacker/templates_dir"),
      json::json_pointer("/attack/skeleton_path"),
      json::json_pointer("/attack/lexicon_path"),
      json::json_pointer("/eval/overrides_path"),
      json::json_pointer("/transfer_from"),
      json::json_pointer("/transcripts/dir")};
  for (const auto& p : pointers) {
    if (config.contains(p)) config[p] = nullptr;
  }
}

}  // namespace

std::string canonical_digest(const RunReport& report) {
  json payload = report.to_json();
  strip_paths(payload["config"]);
  strip_volatile(payload);
  return sha256_hex(payload.dump());
}

fs::path record_path(const fs::path& run_dir, std::string_view qid) {
  std::string name;
  for (char c : qid) {
    const bool safe = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ||
                      c == '_';
    name += safe ? c : '_';
  }
  return run_dir / "records" / (name + ".record");
}

void write_atomically(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "short write " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Commands

ReasoningSkeleton cmd_probe(const RunConfig& config, const fs::path& queries,
                            const std::optional<fs::path>& corpus, const fs::path& out_file) {
  const RunBackends backends = make_backends(config);
  auto cases = sample_queries(load_queries_file(queries),
                              static_cast<std::size_t>(config.attack.probe_queries), config.seed);
  std::optional<Corpus> store;
  if (corpus) store = Corpus::ingest_file(*corpus, "corpus");
  ReasoningSkeleton skeleton = probe_skeleton(cases, store ? &*store : nullptr, backends, config);
  write_atomically(out_file, json(skeleton).dump(2) + "\n");
  return skeleton;
}

namespace {

std::optional<AttackRecord> load_complete_record(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    auto record = json::parse(read_file(path)).get<AttackRecord>();
    if (record.status == RecordStatus::complete) return record;
  } catch (const std::exception&) {
    // unreadable record, rerun the case
  }
  return std::nullopt;
}

std::map<std::string, Document> final_documents(const fs::path& source_dir) {
  std::map<std::string, Document> docs;
  const fs::path records = source_dir / "records";
  if (!fs::is_directory(records)) {
    throw Error(ErrorCode::InvalidConfig, "transfer_from has no records: " + source_dir.string());
  }
  for (const auto& entry : fs::directory_iterator(records)) {
    if (entry.path().extension() != ".record") continue;
    auto record = json::parse(read_file(entry.path())).get<AttackRecord>();
    if (record.status == RecordStatus::complete && !record.rounds.empty()) {
      docs.emplace(record.qid, record.rounds.back().doc_version);
    }
  }
  return docs;
}

json input_hashes(const RunConfig& config, const fs::path& corpus, const fs::path& queries) {
  json inputs{{"corpus", file_hash(corpus)}, {"queries", file_hash(queries)}};
  auto add = [&](const char* key, const std::optional<fs::path>& p) {
    if (p) inputs[key] = file_hash(*p);
  };
  add("mock_script", config.target.mock_script);
  add("skeleton", config.attack.skeleton_path);
  add("lexicon", config.attack.lexicon_path);
  add("overrides", config.overrides_path);
  if (config.attacker.templates_dir) {
    for (const char* name : {"initialization.txt", "relevance.txt", "persuasion.txt"}) {
      inputs[std::string("templates/") + name] = file_hash(*config.attacker.templates_dir / name);
    }
  }
  return inputs;
}

}  // namespace

RunReport cmd_attack(const RunConfig& config, const fs::path& corpus_path,
                     const fs::path& queries_path, const fs::path& out_dir) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  const RunBackends backends = make_backends(config);
  const Corpus corpus = Corpus::ingest_file(corpus_path, "corpus");
  const auto cases = sample_queries(load_queries_file(queries_path),
                                    static_cast<std::size_t>(config.attack.sample_size),
                                    config.seed);

  fs::create_directories(out_dir / "records");
  write_atomically(out_dir / "config.snapshot", json(config).dump(2) + "\n");

  RunReport report;
  report.run_id = config.run_id;
  report.config = config;
  report.inputs = input_hashes(config, corpus_path, queries_path);
  report.target_model = backends.target->name();
  report.k = config.retriever.k;
  report.group = {report.target_model, config.dataset, std::string(to_string(config.attack.strategy)),
                  config.variant};

  std::map<std::string, Document> transfer_docs;
  if (config.transfer_from) {
    transfer_docs = final_documents(*config.transfer_from);
    report.source_model = RunReport::load(*config.transfer_from).target_model;
    report.group.variant = "transfer:" + *report.source_model;
  }

  if (is_adversarial_cot(config.attack.strategy) && !config.transfer_from) {
    if (config.attack.skeleton_path) {
      report.skeleton =
          json::parse(read_file(*config.attack.skeleton_path)).get<ReasoningSkeleton>();
      report.skeleton->validate();
    } else {
      std::vector<QueryCase> probes(
          cases.begin(),
          cases.begin() + std::min<std::ptrdiff_t>(config.attack.probe_queries,
                                                   static_cast<std::ptrdiff_t>(cases.size())));
      report.skeleton = probe_skeleton(probes, &corpus, backends, config);
    }
    write_atomically(out_dir / "skeleton.export", json(*report.skeleton).dump(2) + "\n");
  }

  MatchPolicy policy;
  if (config.overrides_path) policy = MatchPolicy::load_overrides(*config.overrides_path);
  const Matcher matcher = make_matcher(std::move(policy), config.run_id);
  const LoopConfig loop{config.attack.strategy, config.attack.max_rounds, config.retriever.k};

  std::vector<std::optional<AttackRecord>> results(cases.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::atomic<std::size_t> resumed{0};

  auto run_case = [&](const QueryCase& query) -> AttackRecord {
    Corpus view = corpus;
    try {
      if (config.transfer_from) {
        auto it = transfer_docs.find(query.qid);
        if (it == transfer_docs.end()) {
          throw Error(ErrorCode::MissingCell, "no source document for " + query.qid);
        }
        AttackRecord record = evaluate_fixed_document(query, it->second, view,
                                                      backends.index_builder, *backends.target,
                                                      config.retriever.k, matcher);
        record.transferred_from = *report.source_model;
        return record;
      }
      return run_attack_loop(query, view, backends.index_builder, *backends.target,
                             *backends.agent, report.skeleton ? &*report.skeleton : nullptr,
                             loop, matcher);
    } catch (const Error& e) {
      AttackRecord record;
      record.qid = query.qid;
      record.strategy = config.attack.strategy;
      record.max_rounds = effective_rounds(loop);
      record.status = RecordStatus::incomplete;
      record.error_code = e.code();
      record.error = e.what();
      return record;
    }
  };

  auto worker = [&] {
    while (!abort.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cases.size()) return;
      const fs::path path = record_path(out_dir, cases[i].qid);
      if (auto existing = load_complete_record(path)) {
        results[i] = std::move(existing);
        resumed.fetch_add(1);
        continue;
      }
      AttackRecord record = run_case(cases[i]);
      write_atomically(path, json(record).dump(2) + "\n");
      if (record.error_code == ErrorCode::BudgetExceeded) abort.store(true);
      results[i] = std::move(record);
    }
  };

  const int workers = std::max(1, std::min<int>(config.budgets.max_concurrent_requests,
                                                static_cast<int>(cases.size())));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  if (abort.load()) {
    throw Error(ErrorCode::BudgetExceeded,
                "token budget of " + std::to_string(config.budgets.max_total_tokens) +
                    " exhausted; finished cases are saved under " + (out_dir / "records").string());
  }

  for (auto& r : results) {
    if (r) report.records.push_back(std::move(*r));
  }
  std::sort(report.records.begin(), report.records.end(),
            [](const AttackRecord& a, const AttackRecord& b) { return a.qid < b.qid; });
  for (const auto& r : report.records) report.tokens += r.total_cost;
  report.resumed = resumed.load();
  report.wall_clock_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - started)
                             .count();
  report.canonical_digest = canonical_digest(report);

  write_atomically(out_dir / "report.main", report.to_json().dump(2) + "\n");
  std::vector<MetricsReport> rows;
  if (auto m = report.metrics()) rows.push_back(*m);
  write_atomically(out_dir / "report.tsv", metrics_table_tsv(rows));
  return report;
}

MergedReport cmd_report(const std::vector<fs::path>& run_dirs,
                        const std::optional<fs::path>& overrides) {
  if (run_dirs.empty()) throw Error(ErrorCode::EmptyRecordSet, "no run directories");
  MatchPolicy policy;
  if (overrides) policy = MatchPolicy::load_overrides(*overrides);

  MergedReport merged;
  std::map<GroupKey, std::vector<AttackRecord>> groups;
  std::map<std::string, std::vector<AttackRecord>> native;
  std::map<TransferKey, std::vector<AttackRecord>> transfer;
  std::optional<int> k;

  for (const auto& dir : run_dirs) {
    RunReport run = RunReport::load(dir);
    if (k && *k != run.k) {
      merged.warnings.push_back("IncompatibleConfigs: " + dir.string() + " uses k=" +
                                std::to_string(run.k) + ", earlier runs use k=" +
                                std::to_string(*k));
    }
    if (!k) k = run.k;
    std::vector<AttackRecord> complete;
    for (auto& r : run.records) {
      if (r.status == RecordStatus::complete) complete.push_back(std::move(r));
    }
    if (overrides) apply_overrides(complete, {}, policy, run.run_id);
    if (complete.empty()) {
      merged.warnings.push_back(dir.string() + ": no complete records");
      continue;
    }
    try {
      merged.scaling.push_back({run.run_id, run.group, round_scaling(complete)});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MixedRoundBudgets) throw;
    }
    auto& bucket = run.source_model ? transfer[{*run.source_model, run.target_model}]
                                    : native[run.target_model];
    bucket.insert(bucket.end(), complete.begin(), complete.end());
    auto& group = groups[run.group];
    group.insert(group.end(), complete.begin(), complete.end());
  }

  for (const auto& [key, records] : groups) merged.rows.push_back(compute_metrics(records, key));
  if (!transfer.empty()) merged.matrix = cross_model_matrix(native, transfer);
  return merged;
}

GeneralizationMatrix cmd_matrix(const std::vector<fs::path>& run_dirs) {
  MergedReport merged = cmd_report(run_dirs);
  if (!merged.matrix) throw Error(ErrorCode::MissingCell, "no transfer runs among the inputs");
  return *merged.matrix;
}

}  // namespace advcot
