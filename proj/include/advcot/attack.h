#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "advcot/agent.h"
#include "advcot/corpus.h"
#include "advcot/errors.h"
#include "advcot/gateway.h"
#include "advcot/retrieval.h"
#include "advcot/trace.h"
#include "json.hpp"

namespace advcot {

enum class Strategy { NA, NPA, PHA, PRAG, AdvCoT_noniter, AdvCoT_iter };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);
bool is_adversarial_cot(Strategy s);

enum class OutcomeKind { Success, NotRetrieved, RetrievedNotMisled };

std::string_view to_string(OutcomeKind k);

struct AttackOutcome {
  OutcomeKind kind = OutcomeKind::NotRetrieved;
  std::optional<int> rank;  // present iff kind != NotRetrieved
  std::vector<EvidenceVerdict> verdicts;

  bool operator==(const AttackOutcome&) const = default;
};

enum class Branch { none, relevance, persuasion };

std::string_view to_string(Branch b);

struct RoundUsage {
  Usage target;
  Usage agent;

  Usage total() const {
    Usage u = target;
    u += agent;
    return u;
  }
};

struct AttackRound {
  int round_index = 0;
  Document doc_version;
  RetrievalResult retrieval;
  ModelResponse response;
  AttackOutcome outcome;
  Branch branch_taken = Branch::none;
  RoundUsage usage;
  std::string agent_prompt;  // prompt that produced doc_version; empty for templates
};

enum class RecordStatus { complete, incomplete };

/// Full trajectory of one query's adversarial document.
struct AttackRecord {
  std::string qid;
  Strategy strategy = Strategy::AdvCoT_iter;
  int max_rounds = 0;  // refinement budget actually applied
  std::vector<AttackRound> rounds;
  AttackOutcome final_outcome;
  Usage total_cost;
  RecordStatus status = RecordStatus::complete;
  std::optional<ErrorCode> error_code;
  std::string error;
  std::optional<std::string> transferred_from;

  bool retrieved() const { return final_outcome.kind != OutcomeKind::NotRetrieved; }
  bool succeeded() const { return final_outcome.kind == OutcomeKind::Success; }
  /// Round index of the Success round, if any.
  std::optional<int> success_round() const;
};

using Matcher = std::function<bool(std::string_view answer_text, const QueryCase& query)>;

// Baseline documents. Each carries version 0 and the strategy as its tag.
Document build_naive(const QueryCase& query);
Document build_naive_prompt(const QueryCase& query);
Document build_prompt_hijack(const QueryCase& query);

/// The PoisonedRAG crafting instruction with substitutions.
std::string poisonedrag_instruction(const QueryCase& query);
Document build_poisonedrag(const QueryCase& query, AttackerAgent& agent,
                           AgentReply* reply = nullptr);

/// Returns the first unmet requirement, or nullopt when the text opens with a
/// P1 cue, follows with at least two P2-cued sentences and closes with a
/// P3-cued conclusion that states the target answer.
std::optional<std::string> check_structure(std::string_view text,
                                           const ReasoningSkeleton& skeleton,
                                           std::string_view target_answer);

inline constexpr int kStructureReasks = 2;

/// Asks the agent for an initial adversarial CoT document, re-asking up to
/// kStructureReasks times before MalformedAgentOutput.
Document build_adversarial_cot(const QueryCase& query, const ReasoningSkeleton& skeleton,
                               AttackerAgent& agent, AgentReply* reply = nullptr);

AttackOutcome classify_outcome(const RetrievalResult& retrieval, const ModelResponse& response,
                               const Corpus& corpus, std::string_view adv_doc_id,
                               const QueryCase& query, const Matcher& matcher);

using IndexBuilder = std::function<RetrievalIndex(const Corpus&)>;

struct LoopConfig {
  Strategy strategy = Strategy::AdvCoT_iter;
  int max_rounds = 3;
  int k = 5;
};

/// Refinement rounds a strategy gets: only the iterative AdvCoT variant is
/// refined; every other strategy is single-shot.
int effective_rounds(const LoopConfig& config);

/// Runs one query's attack against its own corpus view. Transport, budget and
/// agent-output failures end the record with status incomplete.
AttackRecord run_attack_loop(const QueryCase& query, Corpus& corpus, const IndexBuilder& build_index,
                             TargetModel& target, AttackerAgent& agent,
                             const ReasoningSkeleton* skeleton, const LoopConfig& config,
                             const Matcher& matcher);

/// Single-round evaluation of an existing adversarial document (cross-model
/// transfer).
AttackRecord evaluate_fixed_document(const QueryCase& query, Document doc, Corpus& corpus,
                                     const IndexBuilder& build_index, TargetModel& target,
                                     int k, const Matcher& matcher);

std::string relevance_feedback(const RetrievalResult& retrieval, const Corpus& corpus);
std::string persuasion_feedback(const AttackOutcome& outcome, const ModelResponse& response);

void to_json(nlohmann::json& j, const AttackOutcome& o);
void from_json(const nlohmann::json& j, AttackOutcome& o);
void to_json(nlohmann::json& j, const AttackRound& r);
void from_json(const nlohmann::json& j, AttackRound& r);
void to_json(nlohmann::json& j, const AttackRecord& r);
void from_json(const nlohmann::json& j, AttackRecord& r);

}  // namespace advcot
