#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "advcot/corpus.h"
#include "json.hpp"

namespace advcot {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";

/// Result of splitting a raw model output on its first well-formed think
/// block. splice_think_block() inverts extract_think_block() exactly.
struct ThinkSplit {
  std::string preamble;  // text before "<think>"; empty for well-behaved models
  std::string reasoning_trace;
  std::string answer_text;
  bool well_formed = false;
};

ThinkSplit extract_think_block(std::string_view raw_text);
std::string splice_think_block(const ThinkSplit& split);

enum class PhaseId { P1 = 0, P2 = 1, P3 = 2 };
enum class PhaseTag { untagged, P1, P2, P3 };

std::string_view to_string(PhaseId id);
std::string_view to_string(PhaseTag tag);
PhaseTag tag_of(PhaseId id);

/// Connective strings per phase, lowercase. Used only to seed skeleton
/// extraction; the file form is {"P1": [...], "P2": [...], "P3": [...]}.
struct CueLexicon {
  std::array<std::vector<std::string>, 3> cues;

  static CueLexicon seed();
  static CueLexicon load(const std::filesystem::path& path);
  static CueLexicon from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// Lowercases, rejects empty cues and cues shared between phases.
  void validate();
};

struct SkeletonPhase {
  PhaseId id = PhaseId::P1;
  std::string role_label;
  std::vector<std::string> cues;  // lexicon order
  std::map<std::string, std::int64_t> frequency;

  /// Cues ordered by observed frequency, ties in lexicon order.
  std::vector<std::string> top_cues() const;
};

struct ReasoningSkeleton {
  std::vector<SkeletonPhase> phases;
  std::size_t trace_count = 0;

  static ReasoningSkeleton from_lexicon(const CueLexicon& lexicon);
  /// Exactly three phases P1..P3, non-overlapping lexicons, frequencies >= 0.
  void validate() const;
  const SkeletonPhase& phase(PhaseId id) const;
  /// Human-readable rendering used in agent prompts.
  std::string describe() const;
};

void to_json(nlohmann::json& j, const ReasoningSkeleton& s);
void from_json(const nlohmann::json& j, ReasoningSkeleton& s);

struct Sentence {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Splits after runs of '.', '?', '!' and newline. Each sentence keeps its terminators, so
/// the sentences partition the text.
std::vector<Sentence> split_sentences(std::string_view text);

struct LeadingCue {
  PhaseId phase = PhaseId::P1;
  std::string cue;
};

/// Longest cue that opens the sentence (after leading punctuation/space) and
/// ends on a word boundary.
std::optional<LeadingCue> leading_cue(std::string_view sentence,
                                      const ReasoningSkeleton& skeleton);

struct PhaseSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  PhaseTag tag = PhaseTag::untagged;
  std::optional<std::string> cue;
};

struct PhaseSegmentation {
  std::vector<PhaseSpan> spans;

  std::vector<PhaseSpan> spans_for(PhaseTag tag) const;
};

/// Tags each sentence with the phase of its leading cue. Sentences without a
/// cue inherit the previous sentence's phase; leading ones stay untagged.
PhaseSegmentation segment_phases(std::string_view trace, const ReasoningSkeleton& skeleton);

/// Leading-cue occurrences in one trace, keyed by cue.
std::map<std::string, std::int64_t> count_cues(std::string_view trace,
                                               const ReasoningSkeleton& skeleton);

ReasoningSkeleton extract_skeleton(const std::vector<std::string>& probe_traces,
                                   const CueLexicon& seed = CueLexicon::seed());

enum class Stance { accepted, rejected, unclear };

std::string_view to_string(Stance stance);

struct EvidenceVerdict {
  std::string doc_id;
  bool referenced = false;
  std::optional<Stance> stance;  // set iff referenced
  std::vector<std::pair<std::size_t, std::size_t>> matched_spans;

  bool operator==(const EvidenceVerdict&) const = default;
};

struct AuditOptions {
  std::size_t ngram = 8;
  std::vector<std::string> negation_cues = {"however", "but", "not", "incorrect", "unreliable"};
};

/// Decides whether a trace refers to a presented document, by explicit
/// "context N" style citation of its slot or by a shared word n-gram, and
/// whether any referring sentence pushes back on it.
EvidenceVerdict evidence_audit(std::string_view trace, const Document& doc,
                               std::optional<int> slot = std::nullopt,
                               const AuditOptions& options = {});

void to_json(nlohmann::json& j, const EvidenceVerdict& v);
void from_json(const nlohmann::json& j, EvidenceVerdict& v);

}  // namespace advcot
