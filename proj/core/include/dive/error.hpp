#ifndef DIVE_ERROR_HPP
#define DIVE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace dive {

enum class ErrorCode {
  config,            // bad configuration or CLI usage
  parameter_domain,  // parameter outside its valid domain (e.g. sigma <= 0)
  fit_divergence,    // non-finite objective during fitting
  inference_divergence,  // non-finite posterior log weight
  degenerate_staging,    // all subjects at identical stage
  degenerate_cluster,    // cluster with zero posterior mass
  undefined_correlation, // zero variance in a correlation input
  io_format,         // malformed input file
  io_version,        // unsupported checkpoint version
  io_corrupt,        // truncated or inconsistent payload
  fingerprint_mismatch,  // checkpoint does not match the dataset
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

}  // namespace dive

#endif
