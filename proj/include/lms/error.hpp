#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lms {

/// Category of a user-facing failure. Everything raised as lms::Error is an
/// input/validation problem; anything else escaping the library is internal.
enum class ErrorKind {
    format,
    unsupported_datatype,
    io,
    incompatible_grid,
    invalid_argument,
    unknown_label,
    empty_support,
    degenerate_label,
    unmapped_label,
    digest_mismatch,
    missing_map,
    packing,
};

inline std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::format: return "format";
    case ErrorKind::unsupported_datatype: return "unsupported_datatype";
    case ErrorKind::io: return "io";
    case ErrorKind::incompatible_grid: return "incompatible_grid";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::unknown_label: return "unknown_label";
    case ErrorKind::empty_support: return "empty_support";
    case ErrorKind::degenerate_label: return "degenerate_label";
    case ErrorKind::unmapped_label: return "unmapped_label";
    case ErrorKind::digest_mismatch: return "digest_mismatch";
    case ErrorKind::missing_map: return "missing_map";
    case ErrorKind::packing: return "packing";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace lms
