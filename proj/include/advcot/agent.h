#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>

#include "advcot/corpus.h"
#include "advcot/gateway.h"
#include "advcot/trace.h"

namespace advcot {

/// Prompt texts for the attacker agent. Placeholders use "{name}".
/// initialization needs {question}, {target_answer}, {skeleton}; both
/// refinement prompts additionally need {previous_doc} and {feedback}.
struct AgentTemplates {
  std::string initialization;
  std::string relevance;
  std::string persuasion;

  static AgentTemplates defaults();
  /// Reads initialization.txt, relevance.txt and persuasion.txt; missing files
  /// keep the default text.
  static AgentTemplates load_dir(const std::filesystem::path& dir);
  void validate() const;
};

inline constexpr std::string_view kAgentTemplateVersion = "agent-v1";

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string, std::less<>>& values);

struct AgentReply {
  std::string text;
  std::string prompt;
  Usage usage;
};

struct RefinementRequest {
  const QueryCase& query;
  const ReasoningSkeleton& skeleton;
  std::string previous_doc;
  std::string feedback;
  int next_round = 1;
};

class AttackerAgent {
 public:
  virtual ~AttackerAgent() = default;

  /// `correction` is empty on the first ask and names the failed structure
  /// requirement on re-asks.
  virtual AgentReply initialize(const QueryCase& query, const ReasoningSkeleton& skeleton,
                                std::string_view correction) = 0;
  virtual AgentReply refine_relevance(const RefinementRequest& request) = 0;
  virtual AgentReply refine_persuasion(const RefinementRequest& request) = 0;
  /// Raw completion channel, used for the PoisonedRAG crafting instruction.
  virtual AgentReply complete(std::string_view prompt) = 0;
  virtual std::string name() const = 0;
};

class RemoteAgent final : public AttackerAgent {
 public:
  RemoteAgent(std::shared_ptr<ModelGateway> gateway, GenerationParams params,
              AgentTemplates templates = AgentTemplates::defaults());

  AgentReply initialize(const QueryCase& query, const ReasoningSkeleton& skeleton,
                        std::string_view correction) override;
  AgentReply refine_relevance(const RefinementRequest& request) override;
  AgentReply refine_persuasion(const RefinementRequest& request) override;
  AgentReply complete(std::string_view prompt) override;
  std::string name() const override { return params_.model_name; }

 private:
  std::shared_ptr<ModelGateway> gateway_;
  GenerationParams params_;
  AgentTemplates templates_;
};

struct MockAgentOptions {
  // When false the initial draft never repeats the question, which makes the
  // relevance branch observable on small fixtures.
  bool mention_question = true;
};

/// Deterministic stand-in for the attacker LLM.
///   initialize: fills a P1/P2/P3 narrative from the skeleton's top cues.
///   relevance:  appends the question's content words missing from the doc.
///   persuasion: prepends "PERSUADE-r<round>" and moves the strongest evidence
///               sentence to the front of the evidence block.
class MockAgent final : public AttackerAgent {
 public:
  explicit MockAgent(MockAgentOptions options = {}, std::shared_ptr<TokenBudget> budget = nullptr,
                     AgentTemplates templates = AgentTemplates::defaults());

  AgentReply initialize(const QueryCase& query, const ReasoningSkeleton& skeleton,
                        std::string_view correction) override;
  AgentReply refine_relevance(const RefinementRequest& request) override;
  AgentReply refine_persuasion(const RefinementRequest& request) override;
  AgentReply complete(std::string_view prompt) override;
  std::string name() const override { return "mock-agent"; }

 private:
  AgentReply finish(std::string prompt, std::string text);

  MockAgentOptions options_;
  std::shared_ptr<TokenBudget> budget_;
  AgentTemplates templates_;
};

/// Content words of a question: tokens minus a short English stopword list,
/// deduplicated in order of first occurrence.
std::vector<std::string> content_words(std::string_view question);

}  // namespace advcot
