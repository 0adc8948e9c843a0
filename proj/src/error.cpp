#include "nearl/error.hpp"

namespace nearl {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::shape: return "shape";
        case ErrorKind::config: return "config";
        case ErrorKind::vocabulary: return "vocabulary";
        case ErrorKind::missing_file: return "missing_file";
        case ErrorKind::format: return "format";
        case ErrorKind::truncated: return "truncated";
        case ErrorKind::dim_mismatch: return "dim_mismatch";
        case ErrorKind::non_finite: return "non_finite";
        case ErrorKind::invariant: return "invariant";
    }
    return "unknown";
}

}  // namespace nearl
