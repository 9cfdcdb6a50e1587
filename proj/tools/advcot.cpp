#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "advcot/experiment.h"

namespace fs = std::filesystem;
using namespace advcot;

namespace {

struct CommonFlags {
  std::string config;
  std::string corpus;
  std::string queries;
  std::string strategy;
  std::optional<int> k;
  std::optional<int> max_rounds;
  std::optional<int> sample_size;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool mock = false;
  std::string record;
  std::string replay;
  std::string overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--queries", f.queries, "Query cases (JSONL)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--strategy", f.strategy, "NA, NPA, PHA, PRAG, AdvCoT_noniter or AdvCoT_iter");
  cmd->add_option("--k", f.k, "Retrieved documents per query");
  cmd->add_option("--max-rounds", f.max_rounds, "Refinement rounds");
  cmd->add_option("--sample-size", f.sample_size, "Queries sampled from the file");
  cmd->add_option("--seed", f.seed, "Sampling seed");
  cmd->add_flag("--mock", f.mock, "Use the scripted target and the mock attacker");
  auto* rec = cmd->add_option("--record", f.record, "Record remote exchanges under DIR");
  cmd->add_option("--replay", f.replay, "Replay remote exchanges from DIR")->excludes(rec);
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig config;
  {
    // Load without validation so flags can complete the config first.
    std::ifstream in(f.config);
    from_json(nlohmann::json::parse(in), config);
    config.resolve_paths(fs::path(f.config).parent_path());
  }
  if (!f.strategy.empty()) config.attack.strategy = parse_strategy(f.strategy);
  if (f.k) config.retriever.k = *f.k;
  if (f.max_rounds) config.attack.max_rounds = *f.max_rounds;
  if (f.sample_size) config.attack.sample_size = *f.sample_size;
  if (f.seed) config.seed = *f.seed;
  if (f.mock) {
    if (!config.target.mock_script) {
      throw Error(ErrorCode::InvalidConfig, "--mock needs target.mock_script in the config");
    }
    config.target.endpoint.reset();
    config.attacker.endpoint.reset();
    config.attacker.mock = true;
    config.retriever.endpoint.reset();
    if (config.retriever.backend == Backend::remote_embedding) {
      config.retriever.backend = Backend::hashed_embedding;
    }
  }
  if (!f.record.empty()) {
    config.transcript_mode = RunConfig::TranscriptMode::record;
    config.transcript_dir = f.record;
  }
  if (!f.replay.empty()) {
    config.transcript_mode = RunConfig::TranscriptMode::replay;
    config.transcript_dir = f.replay;
  }
  if (!f.overrides.empty()) config.overrides_path = f.overrides;
  config.validate();
  return config;
}

void print_metrics(const MetricsReport& m) {
  std::cout << "n=" << m.n << " r=" << m.r << " s=" << m.s << "  ASR_r=" << m.asr_r().percent_1dp()
            << " ASR_g=" << m.asr_g().percent_1dp() << " ASR=" << m.asr().percent_1dp() << "\n";
}

void emit(const std::string& text, const std::string& out_dir, const std::string& name) {
  if (out_dir.empty()) {
    std::cout << text;
    return;
  }
  write_atomically(fs::path(out_dir) / name, text);
  std::cout << "wrote " << (fs::path(out_dir) / name).string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-document RAG poisoning harness"};
  app.require_subcommand(1);

  CommonFlags probe_flags;
  auto* probe = app.add_subcommand("probe", "Extract the target's reasoning skeleton");
  add_common(probe, probe_flags);
  probe->add_option("--corpus", probe_flags.corpus, "Optional context corpus (JSONL)")
      ->check(CLI::ExistingFile);
  probe->add_option("--out", probe_flags.out, "Skeleton output file")->required();

  CommonFlags attack_flags;
  auto* attack = app.add_subcommand("attack", "Run the attack over sampled queries");
  add_common(attack, attack_flags);
  attack->add_option("--corpus", attack_flags.corpus, "Knowledge base (JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  attack->add_option("--out", attack_flags.out, "Run directory")->required();
  attack->add_option("--overrides", attack_flags.overrides, "Manual judgments (JSONL)")
      ->check(CLI::ExistingFile);

  std::vector<std::string> report_dirs;
  std::string report_out;
  std::string report_overrides;
  auto* report = app.add_subcommand("report", "Merge run directories into tables");
  report->add_option("runs", report_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", report_out, "Directory for the tables (default stdout)");
  report->add_option("--overrides", report_overrides, "Manual judgments (JSONL)")
      ->check(CLI::ExistingFile);

  std::vector<std::string> matrix_dirs;
  std::string matrix_out;
  auto* matrix = app.add_subcommand("matrix", "Cross-model delta-ASR matrix");
  matrix->add_option("runs", matrix_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);
  matrix->add_option("--out", matrix_out, "Directory for the matrix (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*probe) {
      const RunConfig config = resolve(probe_flags);
      std::optional<fs::path> corpus;
      if (!probe_flags.corpus.empty()) corpus = probe_flags.corpus;
      const auto skeleton = cmd_probe(config, probe_flags.queries, corpus, probe_flags.out);
      std::cout << skeleton.describe() << "\nwrote " << probe_flags.out << "\n";
    } else if (*attack) {
      const RunConfig config = resolve(attack_flags);
      const RunReport run = cmd_attack(config, attack_flags.corpus, attack_flags.queries,
                                       attack_flags.out);
      std::cout << run.run_id << ": " << run.records.size() << " cases";
      if (run.resumed > 0) std::cout << " (" << run.resumed << " resumed)";
      std::cout << ", " << run.incomplete_qids().size() << " incomplete\n";
      if (auto m = run.metrics()) print_metrics(*m);
      std::cout << "digest " << run.canonical_digest << "\n";
    } else if (*report) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      std::optional<fs::path> overrides;
      if (!report_overrides.empty()) overrides = report_overrides;
      const MergedReport merged = cmd_report(dirs, overrides);
      for (const auto& w : merged.warnings) std::cerr << "warning: " << w << "\n";
      emit(metrics_table_tsv(merged.rows), report_out, "metrics.tsv");
      std::ostringstream scaling;
      scaling << "run_id\tmodel\tstrategy\tvariant\tround\tasr\n";
      scaling.setf(std::ios::fixed);
      scaling.precision(1);
      for (const auto& [run_id, group, series] : merged.scaling) {
        for (std::size_t t = 0; t < series.size(); ++t) {
          scaling << run_id << '\t' << group.model << '\t' << group.strategy << '\t' << group.variant
                  << '\t' << t << '\t' << series[t].percent_1dp() << '\n';
        }
      }
      emit(scaling.str(), report_out, "scaling.tsv");
      if (merged.matrix) emit(matrix_tsv(*merged.matrix), report_out, "matrix.tsv");
    } else if (*matrix) {
      std::vector<fs::path> dirs(matrix_dirs.begin(), matrix_dirs.end());
      emit(matrix_tsv(cmd_matrix(dirs)), matrix_out, "matrix.tsv");
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::BudgetExceeded ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
