#ifndef SPLITPLOT_ERRORS_HPP
#define SPLITPLOT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace splitplot {

enum class ErrorKind {
    invalid_dimension,
    index_out_of_range,
    invalid_input,
    invalid_parameter,
    not_positive_definite,
    insufficient_sample,
    work_cap_exceeded,
    degenerate_variance,
    dimension_mismatch,
    materialization_cap,
    unsupported,
    parse_error,
    validation_error
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::invalid_dimension: return "invalid-dimension";
    case ErrorKind::index_out_of_range: return "index-out-of-range";
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::invalid_parameter: return "invalid-parameter";
    case ErrorKind::not_positive_definite: return "not-positive-definite";
    case ErrorKind::insufficient_sample: return "insufficient-sample";
    case ErrorKind::work_cap_exceeded: return "must-use-subsampling";
    case ErrorKind::degenerate_variance: return "degenerate-variance";
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::materialization_cap: return "materialization-cap";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::parse_error: return "parse-error";
    case ErrorKind::validation_error: return "validation-error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace splitplot

#endif
