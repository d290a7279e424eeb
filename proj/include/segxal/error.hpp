#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace segxal {

enum class Errc {
    precondition,
    shape_mismatch,
    corrupt_input,
    missing_pair,
    spec_too_small,
    divergence,
    unknown_layer,
    missing_gt,
    duplicate_ticket,
    sample_not_candidate,
    empty_eval_set,
    io,
    schema_mismatch,
    budget_exhausted,
    not_found,
    conflict,
    lease_expired,
    invalid_geometry,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

/// Raised by deserializers; carries the byte offset where parsing failed.
class CorruptInputError : public Error {
public:
    CorruptInputError(std::size_t offset, const std::string& what)
        : Error(Errc::corrupt_input, what + " (at byte " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

inline void require(bool cond, Errc code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

}  // namespace segxal
