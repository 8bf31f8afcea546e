#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rrf {

/// Top-left pixel coordinate of a patch.
struct Position {
  int x = 0;
  int y = 0;

  friend bool operator==(const Position&, const Position&) = default;
};

/// Side length of the square regions at each image corner that
/// corner-excluded layouts keep clear of.
inline constexpr int kCornerSize = 28;

/**
 * A set of restricted receptive fields laid out over a W x H image.
 *
 * Positions are unique, sorted row-major (y, then x) and every patch lies
 * fully inside the image. The position order is part of the embedding file
 * contract: row i of an embedding matrix always belongs to positions[i].
 */
struct PatchLayout {
  int image_width = 0;
  int image_height = 0;
  int patch_width = 0;
  int patch_height = 0;
  int stride = 0;
  bool corner_exclusion = false;
  std::vector<Position> positions;

  std::size_t size() const noexcept { return positions.size(); }

  /// Index of `p` in `positions`, or -1 when absent.
  long index_of(Position p) const noexcept;

  friend bool operator==(const PatchLayout&, const PatchLayout&) = default;
};

/// Builds the row-major grid at `stride`, optionally dropping every patch that
/// intersects one of the four kCornerSize x kCornerSize corner squares.
PatchLayout layout_patches(int image_width, int image_height, int patch_width,
                           int patch_height, int stride, bool corner_exclusion);

/// Checks the structural invariants; throws Error on violation.
void validate(const PatchLayout& layout);

/// True when the patch at `p` overlaps any corner square of the image.
bool touches_corner(const PatchLayout& layout, Position p) noexcept;

/// Canonical JSON text of a layout: sorted keys, no whitespace, fields
/// H, W, corner_exclusion, h, positions ([[x, y], ...]), stride, w.
std::string canonical_json(const PatchLayout& layout);

/// 64-bit FNV-1a over the bytes of `data`.
std::uint64_t fnv1a64(std::string_view data) noexcept;

/// fnv1a64(canonical_json(layout)); ties embedding files to their layout.
std::uint64_t layout_fingerprint(const PatchLayout& layout);

/// Parses a layout from JSON text (the canonical form or any equivalent
/// formatting) and validates it.
PatchLayout layout_from_json(std::string_view text);

/// Horizontal reflection x -> W - w - x applied to layout positions.
struct MirrorMap {
  std::vector<std::size_t> pairs;  // pairs[i] = index of the mirrored position
  std::size_t class_count = 0;     // number of mirror-equivalence classes
};

MirrorMap mirror_map(const PatchLayout& layout);

enum class Architecture { RRFNet, ResNet };

std::string_view to_string(Architecture a);
Architecture parse_architecture(std::string_view name);

struct TensorShape {
  long count = 0;
  long width = 0;
  long height = 0;
  long channels = 0;

  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

/// Per-block tensor shapes of the patch network (RRFNet) or the plain
/// whole-image ResNet baseline.
struct ShapePlan {
  Architecture variant = Architecture::RRFNet;
  long batch = 0;
  long channels = 0;
  TensorShape input;
  std::vector<TensorShape> blocks;  // block1 .. block4
  long feature_count = 0;           // rows of the feature matrix
  long feature_dim = 0;
  long mean_count = 0;              // rows after patch averaging (rrfnet only)
};

/// For RRFNet the first block keeps stride 1 so patch resolution is
/// preserved; later blocks halve with ceiling rounding (28 -> 14 -> 7 -> 4).
ShapePlan shape_plan(Architecture variant, long batch, long image_width,
                     long image_height, long channels, long patch_width,
                     long patch_height, long patch_count);

}  // namespace rrf
