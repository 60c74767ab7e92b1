#pragma once

#include <stdexcept>
#include <string>

namespace jlcm {

// Raised while reading or writing model files. The kind distinguishes
// failure modes so callers can react without parsing messages.
class IoError : public std::runtime_error {
public:
    enum class Kind {
        bad_magic,
        bad_version,
        bad_header,
        blob_mismatch,
        non_finite,
        dim_incompat,
        truncated,
        corrupt_payload,
        io_failure,
    };

    IoError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Raised when an optimization run becomes numerically unusable
// (divergence, non-finite loss).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace jlcm
