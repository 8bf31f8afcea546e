#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "rrf/geometry.hpp"
#include "rrf/metric.hpp"

namespace rrf {

/// Embedding sets of many images, all extracted with one layout.
struct EmbeddingStore {
  PatchLayout layout;
  std::uint64_t fingerprint = 0;
  std::string flip_policy = "none";
  std::map<std::string, EmbeddingSet> sets;

  const EmbeddingSet* find(const std::string& image_id) const {
    auto it = sets.find(image_id);
    return it == sets.end() ? nullptr : &it->second;
  }

  /// Throws Error(MissingIds) naming the absent ids.
  const EmbeddingSet& at(const std::string& image_id) const;
};

}  // namespace rrf
