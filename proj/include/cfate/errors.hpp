#pragma once

#include <stdexcept>
#include <string>

namespace cfate {

// Error taxonomy used across the pipeline. The CLI maps each class to a
// distinct exit code (see tools/).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct input_error : std::runtime_error {
    explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct format_error : std::runtime_error {
    explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct sampling_error : std::runtime_error {
    explicit sampling_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cfate
