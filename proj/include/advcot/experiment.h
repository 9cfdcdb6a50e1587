#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "advcot/attack.h"
#include "advcot/evaluation.h"
#include "json.hpp"

namespace advcot {

struct RunConfig {
  std::string run_id = "run";
  std::string dataset = "default";
  std::string variant = "default";
  std::uint64_t seed = 0;

  struct Retriever {
    Backend backend = Backend::lexical_bm25;
    int k = 5;
    Bm25Params bm25;
    std::size_t dim = 256;
    std::optional<std::string> endpoint;  // remote_embedding only
    std::string model = "embedding";
    std::optional<std::filesystem::path> cache_dir;
  } retriever;

  struct Target {
    std::optional<std::string> endpoint;
    std::string model = "target";
    double temperature = 0.3;
    int max_output_tokens = 2048;
    std::optional<std::filesystem::path> mock_script;
  } target;

  struct Attacker {
    std::optional<std::string> endpoint;
    std::string model = "attacker";
    bool mock = false;
    bool mention_question = true;  // mock only
    std::optional<std::filesystem::path> templates_dir;
  } attacker;

  struct Attack {
    Strategy strategy = Strategy::AdvCoT_iter;
    int max_rounds = 3;
    int sample_size = 100;
    int probe_queries = 5;
    std::optional<std::filesystem::path> skeleton_path;
    std::optional<std::filesystem::path> lexicon_path;
  } attack;

  std::optional<std::filesystem::path> overrides_path;

  struct Budgets {
    std::int64_t max_total_tokens = 50'000'000;
    int max_concurrent_requests = 4;
  } budgets;

  // Directory of a finished run whose final documents are replayed against
  // this run's target.
  std::optional<std::filesystem::path> transfer_from;

  enum class TranscriptMode { off, record, replay };
  TranscriptMode transcript_mode = TranscriptMode::off;
  std::optional<std::filesystem::path> transcript_dir;

  std::string api_key_env = "ADVCOT_API_KEY";

  /// Relative paths inside the file are taken relative to its directory.
  static RunConfig load(const std::filesystem::path& path);
  void resolve_paths(const std::filesystem::path& base);
  /// Throws InvalidConfig when an invariant does not hold.
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Collaborators built from a config. Every member is safe to share between
/// worker threads.
struct RunBackends {
  std::shared_ptr<TokenBudget> budget;
  std::shared_ptr<TargetModel> target;
  std::shared_ptr<AttackerAgent> agent;  // null when the strategy needs none
  IndexBuilder index_builder;
};

RunBackends make_backends(const RunConfig& config);

/// Seeded Fisher-Yates shuffle, then the first `count` cases.
std::vector<QueryCase> sample_queries(std::vector<QueryCase> cases, std::size_t count,
                                      std::uint64_t seed);

/// Asks the target the given questions without injection and extracts the
/// skeleton from the traces it returns.
ReasoningSkeleton probe_skeleton(const std::vector<QueryCase>& probes, const Corpus* corpus,
                                 const RunBackends& backends, const RunConfig& config);

struct RunReport {
  std::string run_id;
  nlohmann::json config;
  nlohmann::json inputs;  // content hashes of input files
  std::string target_model;
  std::optional<std::string> source_model;
  GroupKey group;
  int k = 5;
  std::vector<AttackRecord> records;  // sorted by qid
  std::optional<ReasoningSkeleton> skeleton;
  Usage tokens;
  std::int64_t wall_clock_ms = 0;
  std::string canonical_digest;
  std::size_t resumed = 0;  // not persisted

  /// Metrics over complete records; nullopt when there are none.
  std::optional<MetricsReport> metrics() const;
  std::vector<std::string> incomplete_qids() const;

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
  static RunReport load(const std::filesystem::path& run_dir);
};

/// SHA-256 over the report with timing fields removed and file paths replaced
/// by the hashes recorded in `inputs`.
std::string canonical_digest(const RunReport& report);

std::filesystem::path record_path(const std::filesystem::path& run_dir, std::string_view qid);

/// Writes `content` next to `path` and renames it into place.
void write_atomically(const std::filesystem::path& path, const std::string& content);

ReasoningSkeleton cmd_probe(const RunConfig& config, const std::filesystem::path& queries,
                            const std::optional<std::filesystem::path>& corpus,
                            const std::filesystem::path& out_file);

/// Runs every sampled case, one record file per case. Existing complete
/// records are reused. Only BudgetExceeded stops the run early.
RunReport cmd_attack(const RunConfig& config, const std::filesystem::path& corpus,
                     const std::filesystem::path& queries, const std::filesystem::path& out_dir);

struct MergedReport {
  std::vector<MetricsReport> rows;
  std::optional<GeneralizationMatrix> matrix;
  struct Scaling {
    std::string run_id;
    GroupKey group;
    std::vector<Rational> series;
  };
  std::vector<Scaling> scaling;  // per run
  std::vector<std::string> warnings;
};

MergedReport cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                        const std::optional<std::filesystem::path>& overrides = std::nullopt);

GeneralizationMatrix cmd_matrix(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace advcot
