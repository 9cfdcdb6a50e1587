#include "advcot/trace.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_set>

#include "advcot/errors.h"
#include "advcot/text.h"

namespace advcot {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 3> kRoleLabels = {
    "initiation", "evidence examination and transition", "summary and conclusion"};

bool is_ascii_alnum(char ch) {
  return std::isalnum(static_cast<unsigned char>(ch)) != 0;
}

bool is_sentence_end(char ch) {
  return ch == '.' || ch == '?' || ch == '!' || ch == '\n';
}

PhaseId phase_from_label(std::string_view label) {
  if (label == "P1") return PhaseId::P1;
  if (label == "P2") return PhaseId::P2;
  if (label == "P3") return PhaseId::P3;
  throw Error(ErrorCode::InvalidSkeleton, "unknown phase " + std::string(label));
}

bool contains_sequence(const std::vector<std::string>& haystack,
                       const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

}  // namespace

ThinkSplit extract_think_block(std::string_view raw_text) {
  ThinkSplit split;
  const auto open = raw_text.find(kThinkOpen);
  if (open != std::string_view::npos) {
    const auto body = open + kThinkOpen.size();
    const auto close = raw_text.find(kThinkClose, body);
    if (close != std::string_view::npos) {
      split.preamble = std::string(raw_text.substr(0, open));
      split.reasoning_trace = std::string(raw_text.substr(body, close - body));
      split.answer_text = std::string(raw_text.substr(close + kThinkClose.size()));
      split.well_formed = true;
      return split;
    }
  }
  split.answer_text = std::string(raw_text);
  return split;
}

std::string splice_think_block(const ThinkSplit& split) {
  if (!split.well_formed) return split.preamble + split.reasoning_trace + split.answer_text;
  std::string out = split.preamble;
  out += kThinkOpen;
  out += split.reasoning_trace;
  out += kThinkClose;
  out += split.answer_text;
  return out;
}

std::string_view to_string(PhaseId id) {
  switch (id) {
    case PhaseId::P1: return "P1";
    case PhaseId::P2: return "P2";
    case PhaseId::P3: return "P3";
  }
  return "?";
}

std::string_view to_string(PhaseTag tag) {
  switch (tag) {
    case PhaseTag::untagged: return "untagged";
    case PhaseTag::P1: return "P1";
    case PhaseTag::P2: return "P2";
    case PhaseTag::P3: return "P3";
  }
  return "?";
}

PhaseTag tag_of(PhaseId id) {
  switch (id) {
    case PhaseId::P1: return PhaseTag::P1;
    case PhaseId::P2: return PhaseTag::P2;
    case PhaseId::P3: return PhaseTag::P3;
  }
  return PhaseTag::untagged;
}

std::string_view to_string(Stance stance) {
  switch (stance) {
    case Stance::accepted: return "accepted";
    case Stance::rejected: return "rejected";
    case Stance::unclear: return "unclear";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Lexicon and skeleton

CueLexicon CueLexicon::seed() {
  CueLexicon lex;
  lex.cues[0] = {"let me", "okay, so", "i need to"};
  lex.cues[1] = {"first", "second", "further", "again", "additionally", "however", "next"};
  lex.cues[2] = {"so, putting it all together", "therefore", "in conclusion", "so the answer"};
  return lex;
}

CueLexicon CueLexicon::from_json(const json& j) {
  CueLexicon lex;
  for (const char* key : {"P1", "P2", "P3"}) {
    if (!j.contains(key) || !j[key].is_array()) {
      throw Error(ErrorCode::InvalidSkeleton, std::string("lexicon missing list ") + key);
    }
    lex.cues[static_cast<std::size_t>(phase_from_label(key))] =
        j[key].get<std::vector<std::string>>();
  }
  lex.validate();
  return lex;
}

CueLexicon CueLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSkeleton, path.string() + ": " + e.what());
  }
}

json CueLexicon::to_json() const {
  return json{{"P1", cues[0]}, {"P2", cues[1]}, {"P3", cues[2]}};
}

void CueLexicon::validate() {
  std::set<std::string> seen;
  for (auto& list : cues) {
    for (auto& cue : list) {
      cue = ascii_lower(trim(cue));
      if (cue.empty()) throw Error(ErrorCode::InvalidSkeleton, "empty cue");
      if (!seen.insert(cue).second) {
        throw Error(ErrorCode::InvalidSkeleton, "cue '" + cue + "' appears twice");
      }
    }
  }
}

std::vector<std::string> SkeletonPhase::top_cues() const {
  std::vector<std::string> ordered = cues;
  std::stable_sort(ordered.begin(), ordered.end(), [&](const auto& a, const auto& b) {
    auto fa = frequency.count(a) ? frequency.at(a) : 0;
    auto fb = frequency.count(b) ? frequency.at(b) : 0;
    return fa > fb;
  });
  return ordered;
}

ReasoningSkeleton ReasoningSkeleton::from_lexicon(const CueLexicon& lexicon) {
  CueLexicon lex = lexicon;
  lex.validate();
  ReasoningSkeleton skeleton;
  for (std::size_t i = 0; i < 3; ++i) {
    SkeletonPhase phase;
    phase.id = static_cast<PhaseId>(i);
    phase.role_label = std::string(kRoleLabels[i]);
    phase.cues = lex.cues[i];
    for (const auto& cue : phase.cues) phase.frequency[cue] = 0;
    skeleton.phases.push_back(std::move(phase));
  }
  return skeleton;
}

void ReasoningSkeleton::validate() const {
  if (phases.size() != 3) {
    throw Error(ErrorCode::InvalidSkeleton,
                "expected 3 phases, got " + std::to_string(phases.size()));
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < 3; ++i) {
    if (phases[i].id != static_cast<PhaseId>(i)) {
      throw Error(ErrorCode::InvalidSkeleton, "phases out of order");
    }
    for (const auto& cue : phases[i].cues) {
      if (!seen.insert(cue).second) {
        throw Error(ErrorCode::InvalidSkeleton, "cue '" + cue + "' in two phases");
      }
    }
    for (const auto& [cue, count] : phases[i].frequency) {
      if (count < 0) throw Error(ErrorCode::InvalidSkeleton, "negative frequency for " + cue);
    }
  }
}

const SkeletonPhase& ReasoningSkeleton::phase(PhaseId id) const {
  for (const auto& p : phases) {
    if (p.id == id) return p;
  }
  throw Error(ErrorCode::InvalidSkeleton, "missing phase " + std::string(to_string(id)));
}

std::string ReasoningSkeleton::describe() const {
  std::ostringstream out;
  for (const auto& p : phases) {
    out << to_string(p.id) << " (" << p.role_label << "): ";
    bool first = true;
    for (const auto& cue : p.top_cues()) {
      auto f = p.frequency.count(cue) ? p.frequency.at(cue) : 0;
      if (!first) out << ", ";
      out << '"' << cue << "\" x" << f;
      first = false;
    }
    out << '\n';
  }
  return out.str();
}

void to_json(json& j, const ReasoningSkeleton& s) {
  j = json::object();
  j["trace_count"] = s.trace_count;
  j["phases"] = json::array();
  for (const auto& p : s.phases) {
    j["phases"].push_back(json{{"id", to_string(p.id)},
                               {"role_label", p.role_label},
                               {"cues", p.cues},
                               {"frequency", p.frequency},
                               {"top_cues", p.top_cues()}});
  }
}

void from_json(const json& j, ReasoningSkeleton& s) {
  s.phases.clear();
  s.trace_count = j.value("trace_count", std::size_t{0});
  for (const auto& pj : j.at("phases")) {
    SkeletonPhase p;
    p.id = phase_from_label(pj.at("id").get<std::string>());
    p.role_label = pj.value("role_label", std::string(kRoleLabels[static_cast<int>(p.id)]));
    p.cues = pj.at("cues").get<std::vector<std::string>>();
    p.frequency = pj.value("frequency", std::map<std::string, std::int64_t>{});
    for (const auto& cue : p.cues) p.frequency.emplace(cue, 0);
    s.phases.push_back(std::move(p));
  }
  s.validate();
}

// ---------------------------------------------------------------------------
// Segmentation

std::vector<Sentence> split_sentences(std::string_view text) {
  std::vector<Sentence> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (is_sentence_end(text[i])) {
      while (i + 1 < text.size() && is_sentence_end(text[i + 1])) ++i;
      out.push_back({begin, i + 1});
      begin = i + 1;
    }
  }
  if (begin < text.size()) out.push_back({begin, text.size()});
  return out;
}

std::optional<LeadingCue> leading_cue(std::string_view sentence,
                                      const ReasoningSkeleton& skeleton) {
  std::size_t start = 0;
  while (start < sentence.size()) {
    const auto ch = static_cast<unsigned char>(sentence[start]);
    if (ch >= 0x80 || is_ascii_alnum(static_cast<char>(ch))) break;
    ++start;
  }
  const std::string_view body = sentence.substr(start);
  std::optional<LeadingCue> best;
  for (const auto& phase : skeleton.phases) {
    for (const auto& cue : phase.cues) {
      if (!starts_with_icase(body, cue)) continue;
      if (body.size() > cue.size() && is_ascii_alnum(body[cue.size()]) &&
          is_ascii_alnum(cue.back())) {
        continue;
      }
      if (!best || cue.size() > best->cue.size()) best = LeadingCue{phase.id, cue};
    }
  }
  return best;
}

std::vector<PhaseSpan> PhaseSegmentation::spans_for(PhaseTag tag) const {
  std::vector<PhaseSpan> out;
  for (const auto& s : spans) {
    if (s.tag == tag) out.push_back(s);
  }
  return out;
}

PhaseSegmentation segment_phases(std::string_view trace, const ReasoningSkeleton& skeleton) {
  skeleton.validate();
  PhaseSegmentation seg;
  PhaseTag current = PhaseTag::untagged;
  for (const auto& sentence : split_sentences(trace)) {
    PhaseSpan span{sentence.begin, sentence.end, current, std::nullopt};
    if (auto cue = leading_cue(trace.substr(sentence.begin, sentence.end - sentence.begin),
                               skeleton)) {
      span.tag = tag_of(cue->phase);
      span.cue = cue->cue;
      current = span.tag;
    }
    seg.spans.push_back(std::move(span));
  }
  return seg;
}

std::map<std::string, std::int64_t> count_cues(std::string_view trace,
                                               const ReasoningSkeleton& skeleton) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& sentence : split_sentences(trace)) {
    if (auto cue = leading_cue(trace.substr(sentence.begin, sentence.end - sentence.begin),
                               skeleton)) {
      ++counts[cue->cue];
    }
  }
  return counts;
}

ReasoningSkeleton extract_skeleton(const std::vector<std::string>& probe_traces,
                                   const CueLexicon& seed) {
  if (probe_traces.empty()) throw Error(ErrorCode::NoTraces, "no probe traces");
  ReasoningSkeleton skeleton = ReasoningSkeleton::from_lexicon(seed);
  for (const auto& trace : probe_traces) {
    for (const auto& [cue, count] : count_cues(trace, skeleton)) {
      for (auto& phase : skeleton.phases) {
        if (auto it = phase.frequency.find(cue); it != phase.frequency.end()) {
          it->second += count;
        }
      }
    }
  }
  skeleton.trace_count = probe_traces.size();
  return skeleton;
}

// ---------------------------------------------------------------------------
// Evidence audit

EvidenceVerdict evidence_audit(std::string_view trace, const Document& doc,
                               std::optional<int> slot, const AuditOptions& options) {
  EvidenceVerdict verdict;
  verdict.doc_id = doc.doc_id;
  std::vector<std::pair<std::size_t, std::size_t>> spans;

  if (slot) {
    static const std::regex kCitation(
        R"((?:context|document|doc|passage|source)\s*\[?\s*#?\s*(\d+)\s*\]?)",
        std::regex::icase);
    const std::string haystack(trace);
    for (auto it = std::sregex_iterator(haystack.begin(), haystack.end(), kCitation);
         it != std::sregex_iterator(); ++it) {
      const auto& m = *it;
      if (std::stoll(m[1].str()) == *slot) {
        auto begin = static_cast<std::size_t>(m.position(0));
        spans.emplace_back(begin, begin + static_cast<std::size_t>(m.length(0)));
      }
    }
  }

  const std::size_t n = options.ngram;
  if (n > 0) {
    const auto doc_tokens = tokenize(doc.text);
    if (doc_tokens.size() >= n) {
      auto key = [](auto first, auto last, auto proj) {
        std::string k;
        for (auto it = first; it != last; ++it) {
          k += proj(*it);
          k.push_back('\x1f');
        }
        return k;
      };
      auto self = [](const std::string& s) -> const std::string& { return s; };
      std::unordered_set<std::string> grams;
      for (std::size_t i = 0; i + n <= doc_tokens.size(); ++i) {
        grams.insert(key(doc_tokens.begin() + static_cast<std::ptrdiff_t>(i),
                         doc_tokens.begin() + static_cast<std::ptrdiff_t>(i + n), self));
      }
      const auto trace_tokens = tokenize_with_offsets(trace);
      auto token_of = [](const TokenSpan& t) -> const std::string& { return t.token; };
      for (std::size_t i = 0; i + n <= trace_tokens.size(); ++i) {
        auto first = trace_tokens.begin() + static_cast<std::ptrdiff_t>(i);
        if (grams.count(key(first, first + static_cast<std::ptrdiff_t>(n), token_of))) {
          spans.emplace_back(trace_tokens[i].begin, trace_tokens[i + n - 1].end);
        }
      }
    }
  }

  std::sort(spans.begin(), spans.end());
  for (const auto& s : spans) {
    if (!verdict.matched_spans.empty() && s.first <= verdict.matched_spans.back().second) {
      verdict.matched_spans.back().second = std::max(verdict.matched_spans.back().second, s.second);
    } else {
      verdict.matched_spans.push_back(s);
    }
  }
  verdict.referenced = !verdict.matched_spans.empty();
  if (!verdict.referenced) return verdict;

  std::vector<std::vector<std::string>> negations;
  for (const auto& cue : options.negation_cues) negations.push_back(tokenize(cue));

  const auto sentences = split_sentences(trace);
  std::set<std::size_t> referring;
  for (const auto& span : verdict.matched_spans) {
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (span.first < sentences[i].end && span.second > sentences[i].begin) referring.insert(i);
    }
  }
  std::size_t negated = 0;
  for (std::size_t i : referring) {
    const auto tokens =
        tokenize(trace.substr(sentences[i].begin, sentences[i].end - sentences[i].begin));
    for (const auto& neg : negations) {
      if (contains_sequence(tokens, neg)) {
        ++negated;
        break;
      }
    }
  }
  if (referring.empty()) {
    verdict.stance = Stance::unclear;
  } else {
    verdict.stance = negated > 0 ? Stance::rejected : Stance::accepted;
  }
  return verdict;
}

void to_json(json& j, const EvidenceVerdict& v) {
  j = json{{"doc_id", v.doc_id}, {"referenced", v.referenced}};
  j["stance"] = v.stance ? json(to_string(*v.stance)) : json(nullptr);
  j["matched_spans"] = json::array();
  for (const auto& [b, e] : v.matched_spans) j["matched_spans"].push_back({b, e});
}

void from_json(const json& j, EvidenceVerdict& v) {
  v.doc_id = j.at("doc_id").get<std::string>();
  v.referenced = j.at("referenced").get<bool>();
  v.stance.reset();
  if (j.contains("stance") && !j["stance"].is_null()) {
    const auto s = j["stance"].get<std::string>();
    v.stance = s == "accepted" ? Stance::accepted
               : s == "rejected" ? Stance::rejected
                                 : Stance::unclear;
  }
  v.matched_spans.clear();
  for (const auto& pair : j.value("matched_spans", json::array())) {
    v.matched_spans.emplace_back(pair.at(0).get<std::size_t>(), pair.at(1).get<std::size_t>());
  }
}

}  // namespace advcot
