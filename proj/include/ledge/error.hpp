#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ledge {

enum class ErrorCode {
  invalid_argument,
  routing_failure,
  membership_conflict,
  not_a_member,
  already_registered,
  unknown_mobile,
  handover_failure,
  not_associated,
  migration_refused,
  unknown_ap,
  capacity_exceeded,
  unmatched_release,
  oracle_too_large,
  no_ap_available,
  causality_violation,
  handler_error,
  invalid_target,
  parse_error,
  validation_error,
  usage_error,
  emit_error,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::routing_failure: return "routing-failure";
    case ErrorCode::membership_conflict: return "membership-conflict";
    case ErrorCode::not_a_member: return "not-a-member";
    case ErrorCode::already_registered: return "already-registered";
    case ErrorCode::unknown_mobile: return "unknown-mobile";
    case ErrorCode::handover_failure: return "handover-failure";
    case ErrorCode::not_associated: return "not-associated";
    case ErrorCode::migration_refused: return "migration-refused";
    case ErrorCode::unknown_ap: return "unknown-ap";
    case ErrorCode::capacity_exceeded: return "capacity-exceeded";
    case ErrorCode::unmatched_release: return "unmatched-release";
    case ErrorCode::oracle_too_large: return "oracle-too-large";
    case ErrorCode::no_ap_available: return "no-ap-available";
    case ErrorCode::causality_violation: return "causality-violation";
    case ErrorCode::handler_error: return "handler-error";
    case ErrorCode::invalid_target: return "invalid-target";
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::validation_error: return "validation-error";
    case ErrorCode::usage_error: return "usage-error";
    case ErrorCode::emit_error: return "emit-error";
  }
  return "unknown";
}

// Every contract violation in the library surfaces as this exception; the
// code lets callers and tests branch on the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ledge
