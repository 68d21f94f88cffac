#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mipl {

enum class Errc {
  empty_input,
  sequence_too_short,
  size_mismatch,
  generation_failed,
  degenerate_input,
  degenerate_labels,
  degenerate_output,
  bad_param,
  training_diverged,
  corrupt_file,
  version_mismatch,
  config_mismatch,
  unsupported,
  attack_failed,
  budget_infeasible,
  no_feasible_params,
  insufficient_data,
  protocol_violation,
  io_error,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::empty_input: return "EmptyInput";
    case Errc::sequence_too_short: return "SequenceTooShort";
    case Errc::size_mismatch: return "SizeMismatch";
    case Errc::generation_failed: return "GenerationFailed";
    case Errc::degenerate_input: return "DegenerateInput";
    case Errc::degenerate_labels: return "DegenerateLabels";
    case Errc::degenerate_output: return "DegenerateOutput";
    case Errc::bad_param: return "BadParam";
    case Errc::training_diverged: return "TrainingDiverged";
    case Errc::corrupt_file: return "CorruptFile";
    case Errc::version_mismatch: return "VersionMismatch";
    case Errc::config_mismatch: return "ConfigMismatch";
    case Errc::unsupported: return "Unsupported";
    case Errc::attack_failed: return "AttackFailed";
    case Errc::budget_infeasible: return "BudgetInfeasible";
    case Errc::no_feasible_params: return "NoFeasibleParams";
    case Errc::insufficient_data: return "InsufficientData";
    case Errc::protocol_violation: return "ProtocolViolation";
    case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

}  // namespace mipl
