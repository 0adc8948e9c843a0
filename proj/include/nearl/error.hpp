#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nearl {

// Failure categories. The CLI maps each one to a distinct exit status and a
// one-line "error: <category>: <message>" report.
enum class ErrorKind {
    shape,
    config,
    vocabulary,
    missing_file,
    format,
    truncated,
    dim_mismatch,
    non_finite,
    invariant,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace nearl
