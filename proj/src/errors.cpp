#include "advcot/errors.h"

namespace advcot {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::DuplicateDocId: return "DuplicateDocId";
    case ErrorCode::DuplicateQid: return "DuplicateQid";
    case ErrorCode::EmptyStream: return "EmptyStream";
    case ErrorCode::AttemptedMutation: return "AttemptedMutation";
    case ErrorCode::UnknownDocId: return "UnknownDocId";
    case ErrorCode::InvalidDocument: return "InvalidDocument";
    case ErrorCode::DegenerateCase: return "DegenerateCase";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::UnsupportedBackend: return "UnsupportedBackend";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::MalformedModelOutput: return "MalformedModelOutput";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::InvalidScript: return "InvalidScript";
    case ErrorCode::NoTraces: return "NoTraces";
    case ErrorCode::InvalidSkeleton: return "InvalidSkeleton";
    case ErrorCode::MalformedAgentOutput: return "MalformedAgentOutput";
    case ErrorCode::InvalidTemplate: return "InvalidTemplate";
    case ErrorCode::EmptyRecordSet: return "EmptyRecordSet";
    case ErrorCode::MixedRoundBudgets: return "MixedRoundBudgets";
    case ErrorCode::MissingCell: return "MissingCell";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace advcot
