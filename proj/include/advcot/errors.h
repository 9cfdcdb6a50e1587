#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace advcot {

enum class ErrorCode {
  // corpus_store
  MalformedLine,
  DuplicateDocId,
  DuplicateQid,
  EmptyStream,
  AttemptedMutation,
  UnknownDocId,
  InvalidDocument,
  DegenerateCase,
  // retrieval_engine
  EmptyCorpus,
  UnsupportedBackend,
  // model_gateway
  TransportError,
  MalformedModelOutput,
  BudgetExceeded,
  PreconditionViolation,
  InvalidScript,
  // trace_analysis
  NoTraces,
  InvalidSkeleton,
  // attack_engine
  MalformedAgentOutput,
  InvalidTemplate,
  // evaluation
  EmptyRecordSet,
  MixedRoundBudgets,
  MissingCell,
  // experiment_cli
  InvalidConfig,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers can branch on kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace advcot
