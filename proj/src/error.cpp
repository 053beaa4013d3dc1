#include "splitllm/error.hpp"

namespace splitllm {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::Config: return "config";
    case ErrorKind::Input: return "input";
    case ErrorKind::Data: return "data";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::Aggregation: return "aggregation";
    case ErrorKind::Io: return "io";
    }
    return "unknown";
}

} // namespace splitllm
