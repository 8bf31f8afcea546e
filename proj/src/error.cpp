#include "rrf/error.hpp"

namespace rrf {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Layout: return "layout";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::AsymmetricLayout: return "asymmetric_layout";
    case ErrorKind::DegenerateEmbedding: return "degenerate_embedding";
    case ErrorKind::Incompatible: return "incompatible";
    case ErrorKind::DegenerateTraining: return "degenerate_training";
    case ErrorKind::Data: return "data";
    case ErrorKind::State: return "state";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::LayoutIncompatible: return "layout_incompatible";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::MissingIds: return "missing_ids";
  }
  return "unknown";
}

}  // namespace rrf
