#pragma once

#include <stdexcept>
#include <string>

namespace unifyedit {

// Base class for every error thrown by this library. CLI entry points map
// subclasses onto process exit codes, so new error types should derive from
// one of the categories below rather than from std::exception directly.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad inputs: shape mismatches, malformed files, out-of-range parameters.
// Maps to exit code 2.
class validation_error : public error {
public:
    explicit validation_error(const std::string& msg) : error(msg) {}
};

class shape_error : public validation_error {
public:
    explicit shape_error(const std::string& msg) : validation_error(msg) {}
};

class parse_error : public validation_error {
public:
    explicit parse_error(const std::string& msg) : validation_error(msg) {}
};

// A latent update produced NaN or Inf. Carries the timestep and iteration
// where the blow-up was detected. Maps to exit code 3.
class divergence_error : public error {
public:
    divergence_error(int timestep, int iteration, const std::string& msg)
        : error(msg), timestep(timestep), iteration(iteration) {}

    int timestep;
    int iteration;
};

class io_error : public error {
public:
    explicit io_error(const std::string& msg) : error(msg) {}
};

namespace detail {

inline void require(bool condition, const std::string& msg) {
    if (!condition) throw validation_error(msg);
}

inline void require_shape(bool condition, const std::string& msg) {
    if (!condition) throw shape_error(msg);
}

}  // namespace detail

}  // namespace unifyedit
