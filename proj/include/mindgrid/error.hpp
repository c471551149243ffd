#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mindgrid {

// Error taxonomy shared across modules. CLI maps kinds to exit codes:
// usage/input problems -> 2, artifact integrity -> 3, numeric failures -> 4.
enum class ErrorKind : uint8_t {
    invalid_argument,   // bad sizes, mismatched dimensions, k >= N, ...
    invalid_spec,       // grid spec outside the supported ranges
    vocabulary,         // surface form not in the closed lexicon
    decode,             // token id out of range / wrong block length
    ambiguous_codebook, // two tile kinds share identical pixels
    no_matching_option, // replay terminated on a state no option describes
    infeasible,         // layout mutation had no free cell
    exhaustion,         // dedup exhausted the seed budget before the target count
    format,             // bad magic/version/truncated artifact
    integrity,          // digest mismatch between artifacts
    numeric,            // non-finite loss/gradient
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Exhaustion carries how far generation got before giving up.
class ExhaustionError : public Error {
public:
    ExhaustionError(const std::string& what, std::size_t produced, std::size_t requested)
        : Error(ErrorKind::exhaustion, what), produced_(produced), requested_(requested) {}

    std::size_t produced() const noexcept { return produced_; }
    std::size_t requested() const noexcept { return requested_; }

private:
    std::size_t produced_;
    std::size_t requested_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) {
        fail(kind, what);
    }
}

} // namespace mindgrid
