#include "rrf/geometry.hpp"

#include <algorithm>
#include <string>

#include "rrf/error.hpp"
#include "json.hpp"

namespace rrf {

namespace {

long ceil_half(long v) { return (v + 1) / 2; }

constexpr long kBlockChannels[] = {64, 128, 256, 512};

}  // namespace

long PatchLayout::index_of(Position p) const noexcept {
  // positions are sorted row-major
  auto it = std::lower_bound(
      positions.begin(), positions.end(), p, [](Position a, Position b) {
        return a.y != b.y ? a.y < b.y : a.x < b.x;
      });
  if (it == positions.end() || !(*it == p)) return -1;
  return static_cast<long>(it - positions.begin());
}

bool touches_corner(const PatchLayout& layout, Position p) noexcept {
  const int c = kCornerSize;
  const bool left = p.x < c;
  const bool right = p.x + layout.patch_width > layout.image_width - c;
  const bool top = p.y < c;
  const bool bottom = p.y + layout.patch_height > layout.image_height - c;
  return (left || right) && (top || bottom);
}

PatchLayout layout_patches(int image_width, int image_height, int patch_width,
                           int patch_height, int stride,
                           bool corner_exclusion) {
  if (image_width <= 0 || image_height <= 0)
    throw Error(ErrorKind::Domain, "image dimensions must be positive");
  if (patch_width <= 0 || patch_height <= 0 || patch_width > image_width ||
      patch_height > image_height)
    throw Error(ErrorKind::Domain,
                "patch " + std::to_string(patch_width) + "x" +
                    std::to_string(patch_height) + " does not fit image " +
                    std::to_string(image_width) + "x" +
                    std::to_string(image_height));
  if (stride <= 0) throw Error(ErrorKind::Domain, "stride must be positive");
  if ((image_width - patch_width) % stride != 0 ||
      (image_height - patch_height) % stride != 0)
    throw Error(ErrorKind::Layout,
                "stride " + std::to_string(stride) +
                    " does not evenly divide the free extent of the image");

  PatchLayout layout;
  layout.image_width = image_width;
  layout.image_height = image_height;
  layout.patch_width = patch_width;
  layout.patch_height = patch_height;
  layout.stride = stride;
  layout.corner_exclusion = corner_exclusion;
  for (int y = 0; y <= image_height - patch_height; y += stride) {
    for (int x = 0; x <= image_width - patch_width; x += stride) {
      Position p{x, y};
      if (corner_exclusion && touches_corner(layout, p)) continue;
      layout.positions.push_back(p);
    }
  }
  return layout;
}

void validate(const PatchLayout& layout) {
  if (layout.image_width <= 0 || layout.image_height <= 0 ||
      layout.patch_width <= 0 || layout.patch_height <= 0 ||
      layout.patch_width > layout.image_width ||
      layout.patch_height > layout.image_height || layout.stride <= 0)
    throw Error(ErrorKind::Domain, "layout dimensions out of range");
  if (layout.positions.empty())
    throw Error(ErrorKind::Layout, "layout has no positions");
  for (std::size_t i = 0; i < layout.positions.size(); ++i) {
    const Position p = layout.positions[i];
    if (p.x < 0 || p.y < 0 || p.x > layout.image_width - layout.patch_width ||
        p.y > layout.image_height - layout.patch_height)
      throw Error(ErrorKind::Layout, "position " + std::to_string(i) +
                                         " lies outside the image");
    if (layout.corner_exclusion && touches_corner(layout, p))
      throw Error(ErrorKind::Layout, "position " + std::to_string(i) +
                                         " intersects an excluded corner");
    if (i > 0) {
      const Position q = layout.positions[i - 1];
      if (!(q.y < p.y || (q.y == p.y && q.x < p.x)))
        throw Error(ErrorKind::Layout,
                    "positions must be unique and sorted row-major");
    }
  }
}

MirrorMap mirror_map(const PatchLayout& layout) {
  MirrorMap m;
  m.pairs.resize(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Position p = layout.positions[i];
    const Position q{layout.image_width - layout.patch_width - p.x, p.y};
    const long j = layout.index_of(q);
    if (j < 0)
      throw Error(ErrorKind::AsymmetricLayout,
                  "mirror of (" + std::to_string(p.x) + "," +
                      std::to_string(p.y) + ") is not in the layout");
    m.pairs[i] = static_cast<std::size_t>(j);
  }
  for (std::size_t i = 0; i < m.pairs.size(); ++i)
    if (m.pairs[i] >= i) ++m.class_count;
  return m;
}

std::string_view to_string(Architecture a) {
  return a == Architecture::RRFNet ? "rrfnet" : "resnet";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "rrfnet") return Architecture::RRFNet;
  if (name == "resnet") return Architecture::ResNet;
  throw Error(ErrorKind::Domain,
              "unknown architecture '" + std::string(name) + "'");
}

ShapePlan shape_plan(Architecture variant, long batch, long image_width,
                     long image_height, long channels, long patch_width,
                     long patch_height, long patch_count) {
  if (batch <= 0 || image_width <= 0 || image_height <= 0 || channels <= 0)
    throw Error(ErrorKind::Domain, "shape plan dimensions must be positive");

  ShapePlan plan;
  plan.variant = variant;
  plan.batch = batch;
  plan.channels = channels;

  long count = batch;
  long width = image_width;
  long height = image_height;
  if (variant == Architecture::RRFNet) {
    if (patch_width <= 0 || patch_height <= 0 || patch_count <= 0)
      throw Error(ErrorKind::Domain, "shape plan dimensions must be positive");
    count = patch_count * batch;
    width = patch_width;
    height = patch_height;
  }
  plan.input = {count, width, height, channels};

  for (int b = 0; b < 4; ++b) {
    // RRFNet's first block runs at stride 1
    if (b > 0 || variant == Architecture::ResNet) {
      width = ceil_half(width);
      height = ceil_half(height);
    }
    plan.blocks.push_back({count, width, height, kBlockChannels[b]});
  }
  plan.feature_count = count;
  plan.feature_dim = kBlockChannels[3];
  plan.mean_count = batch;
  return plan;
}

std::string canonical_json(const PatchLayout& layout) {
  nlohmann::json positions = nlohmann::json::array();
  for (const auto& p : layout.positions) positions.push_back({p.x, p.y});
  // nlohmann::json objects keep keys sorted, dump() emits no whitespace
  nlohmann::json j = {{"W", layout.image_width},
                      {"H", layout.image_height},
                      {"w", layout.patch_width},
                      {"h", layout.patch_height},
                      {"stride", layout.stride},
                      {"corner_exclusion", layout.corner_exclusion},
                      {"positions", std::move(positions)}};
  return j.dump();
}

std::uint64_t fnv1a64(std::string_view data) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t layout_fingerprint(const PatchLayout& layout) {
  return fnv1a64(canonical_json(layout));
}

PatchLayout layout_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("layout JSON: ") + e.what());
  }
  PatchLayout layout;
  try {
    layout.image_width = j.at("W").get<int>();
    layout.image_height = j.at("H").get<int>();
    layout.patch_width = j.at("w").get<int>();
    layout.patch_height = j.at("h").get<int>();
    layout.stride = j.at("stride").get<int>();
    layout.corner_exclusion = j.at("corner_exclusion").get<bool>();
    for (const auto& p : j.at("positions")) {
      if (!p.is_array() || p.size() != 2)
        throw Error(ErrorKind::Parse, "layout JSON: positions must be [x, y] pairs");
      layout.positions.push_back({p[0].get<int>(), p[1].get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("layout JSON: ") + e.what());
  }
  validate(layout);
  return layout;
}

}  // namespace rrf
