#pragma once

#include <stdexcept>
#include <string>

namespace dproto {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes for an op; message names the op and the shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration (bad field value, violated structural invariant).
struct ConfigError : Error {
    using Error::Error;
};

// Missing/corrupt files, malformed manifests or images.
struct DataError : Error {
    using Error::Error;
};

// Training or mask optimization produced a non-finite or exploding loss.
struct DivergenceError : Error {
    using Error::Error;
};

}  // namespace dproto
