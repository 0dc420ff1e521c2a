#pragma once

#include <stdexcept>
#include <string>

namespace rrpo {

// Error taxonomy. CLI maps these onto process exit codes:
// usage -> 2, data validation -> 3, missing artifact -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed shapes, invalid configuration values, out-of-range spans.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite values entering or leaving a numeric primitive.
struct NumericError : Error {
    using Error::Error;
};

// API misuse (e.g. backward on a non-scalar) and bad CLI invocations.
struct UsageError : Error {
    using Error::Error;
};

// Dataset or pair content that violates documented invariants.
struct ValidationError : Error {
    using Error::Error;
};

// Unreadable or version-mismatched files.
struct FormatError : Error {
    using Error::Error;
};

// A required artifact (checkpoint, dataset) does not exist.
struct ArtifactError : Error {
    using Error::Error;
};

// Sequence does not fit the model context window.
struct LengthError : Error {
    using Error::Error;
};

// An index or range points outside its target sequence.
struct IndexError : Error {
    using Error::Error;
};

// Token id outside the model vocabulary.
struct VocabError : Error {
    using Error::Error;
};

// Evaluation preconditions broken (train/test overlap, empty task list).
struct EvalError : Error {
    using Error::Error;
};

// Arguments outside a function's mathematical domain.
struct DomainError : Error {
    using Error::Error;
};

}  // namespace rrpo
