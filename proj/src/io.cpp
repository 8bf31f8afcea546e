#include "rrf/io.hpp"

#include <algorithm>
#include <bit>
#include <cfloat>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rrf/error.hpp"

namespace rrf::io {

namespace {

using json = nlohmann::json;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[at + i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[at + i]) << (8 * i);
  return v;
}

float get_f32(std::span<const std::uint8_t> b, std::size_t at) {
  return std::bit_cast<float>(get_u32(b, at));
}

float to_f32(double v) {
  if (!std::isfinite(v) || std::abs(v) > FLT_MAX)
    throw Error(ErrorKind::Data, "value does not fit a 32-bit float");
  return static_cast<float>(v);
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T json_field(const json& j, const char* key, const char* what) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string(what) + ": field '" + key + "': " + e.what());
  }
}

}  // namespace

std::vector<std::uint8_t> encode_embeddings(const EmbeddingSet& set) {
  std::vector<std::uint8_t> out;
  out.reserve(kEmbeddingHeaderSize + set.values().size() * 4);
  out.insert(out.end(), kEmbeddingMagic.begin(), kEmbeddingMagic.end());
  put_u32(out, kEmbeddingVersion);
  put_u32(out, static_cast<std::uint32_t>(set.patch_count()));
  put_u32(out, static_cast<std::uint32_t>(set.dim()));
  put_u64(out, set.layout_fingerprint());
  for (double v : set.values()) put_f32(out, to_f32(v));
  return out;
}

EmbeddingSet decode_embeddings(std::span<const std::uint8_t> bytes,
                               std::optional<std::uint64_t> expected_fingerprint,
                               const std::string& image_id) {
  if (bytes.size() < kEmbeddingHeaderSize)
    throw Error(ErrorKind::Format, "embedding file '" + image_id + "' is truncated");
  if (!std::equal(kEmbeddingMagic.begin(), kEmbeddingMagic.end(), bytes.begin()))
    throw Error(ErrorKind::Format, "embedding file '" + image_id + "' has a bad magic");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kEmbeddingVersion)
    throw Error(ErrorKind::Format, "embedding file '" + image_id +
                                       "' has unsupported version " + std::to_string(version));
  const std::size_t k = get_u32(bytes, 8);
  const std::size_t d = get_u32(bytes, 12);
  const std::uint64_t fp = get_u64(bytes, 16);
  if (k == 0 || d == 0)
    throw Error(ErrorKind::Format, "embedding file '" + image_id + "' declares K or D = 0");
  if (bytes.size() != kEmbeddingHeaderSize + k * d * 4)
    throw Error(ErrorKind::Format,
                "embedding file '" + image_id + "' is " + std::to_string(bytes.size()) +
                    " bytes, header implies " + std::to_string(kEmbeddingHeaderSize + k * d * 4));
  if (expected_fingerprint && *expected_fingerprint != fp)
    throw Error(ErrorKind::LayoutIncompatible,
                "embedding file '" + image_id + "' has layout fingerprint " + hex64(fp) +
                    ", expected " + hex64(*expected_fingerprint));
  std::vector<double> values(k * d);
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = get_f32(bytes, kEmbeddingHeaderSize + 4 * i);
  return EmbeddingSet(image_id, k, d, std::move(values), fp);
}

void write_embeddings(const EmbeddingSet& set, const fs::path& path) {
  write_bytes(path, encode_embeddings(set));
}

EmbeddingSet read_embeddings(const fs::path& path,
                             std::optional<std::uint64_t> expected_fingerprint,
                             const std::string& image_id) {
  const auto bytes = read_bytes(path);
  return decode_embeddings(bytes, expected_fingerprint,
                           image_id.empty() ? path.stem().string() : image_id);
}

EmbeddingSet read_embeddings(const fs::path& path, const PatchLayout& expected,
                             const std::string& image_id) {
  auto set = read_embeddings(path, layout_fingerprint(expected), image_id);
  if (set.patch_count() != expected.size())
    throw Error(ErrorKind::LayoutIncompatible,
                "embedding file " + path.string() + " has " +
                    std::to_string(set.patch_count()) + " rows, layout has " +
                    std::to_string(expected.size()) + " positions");
  return set;
}

EmbeddingFileHeader read_embedding_header(const fs::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < kEmbeddingHeaderSize ||
      !std::equal(kEmbeddingMagic.begin(), kEmbeddingMagic.end(), bytes.begin()))
    throw Error(ErrorKind::Format, "not an embedding file: " + path.string());
  return {get_u32(bytes, 4), get_u32(bytes, 8), get_u32(bytes, 12), get_u64(bytes, 16)};
}

void write_image(const Image& image, const fs::path& path) {
  std::vector<std::uint8_t> out{'R', 'R', 'F', 'I'};
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(image.width));
  put_u32(out, static_cast<std::uint32_t>(image.height));
  put_u32(out, static_cast<std::uint32_t>(image.channels));
  for (float v : image.pixels) put_f32(out, v);
  write_bytes(path, out);
}

Image read_image(const fs::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 20 || !std::equal(bytes.begin(), bytes.begin() + 4, "RRFI"))
    throw Error(ErrorKind::Format, "not an image file: " + path.string());
  if (get_u32(bytes, 4) != 1)
    throw Error(ErrorKind::Format, "unsupported image version: " + path.string());
  const int w = static_cast<int>(get_u32(bytes, 8));
  const int h = static_cast<int>(get_u32(bytes, 12));
  const int c = static_cast<int>(get_u32(bytes, 16));
  Image img(w, h, c);
  if (bytes.size() != 20 + img.pixels.size() * 4)
    throw Error(ErrorKind::Format, "image file has wrong size: " + path.string());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = get_f32(bytes, 20 + 4 * i);
  return img;
}

json layout_json(const PatchLayout& layout) { return json::parse(canonical_json(layout)); }

json to_json(const Manifest& m) {
  return {{"layout", layout_json(m.layout)},
          {"fingerprint", hex64(layout_fingerprint(m.layout))},
          {"images", m.images},
          {"flip_policy", m.flip_policy},
          {"embedder", m.embedder}};
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  if (!j.contains("layout")) throw Error(ErrorKind::Parse, "manifest: missing layout");
  m.layout = layout_from_json(j.at("layout").dump());
  m.images = json_field<std::map<std::string, std::string>>(j, "images", "manifest");
  m.flip_policy = json_field<std::string>(j, "flip_policy", "manifest");
  if (m.flip_policy != "none" && m.flip_policy != "merged")
    throw Error(ErrorKind::Parse, "manifest: flip_policy must be none or merged");
  if (j.contains("embedder")) m.embedder = j.at("embedder");
  if (j.contains("fingerprint") &&
      j.at("fingerprint") != hex64(layout_fingerprint(m.layout)))
    throw Error(ErrorKind::LayoutIncompatible,
                "manifest fingerprint does not match its layout");
  return m;
}

void write_manifest(const Manifest& m, const fs::path& path) { write_json(path, to_json(m)); }

Manifest read_manifest(const fs::path& path) { return manifest_from_json(read_json(path)); }

EmbeddingStore load_store(const fs::path& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  EmbeddingStore store;
  store.layout = m.layout;
  store.fingerprint = layout_fingerprint(m.layout);
  store.flip_policy = m.flip_policy;
  const fs::path base = manifest_path.parent_path();
  for (const auto& [id, rel] : m.images) {
    const fs::path p = base / rel;
    if (!fs::exists(p)) throw Error(ErrorKind::Io, "manifest references missing file " + p.string());
    store.sets.emplace(id, read_embeddings(p, m.layout, id));
  }
  return store;
}

PairList parse_pairs(std::string_view text) {
  PairList out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line_no == 1 && line == "id_a,id_b,label,fold") continue;

    std::vector<std::string_view> cols;
    std::size_t s = 0;
    for (;;) {
      const std::size_t c = line.find(',', s);
      cols.push_back(line.substr(s, c == std::string_view::npos ? c : c - s));
      if (c == std::string_view::npos) break;
      s = c + 1;
    }
    const std::string where = "pairs line " + std::to_string(line_no);
    if (cols.size() != 4)
      throw Error(ErrorKind::Parse, where + ": expected 4 columns, got " + std::to_string(cols.size()));
    if (cols[0].empty() || cols[1].empty())
      throw Error(ErrorKind::Parse, where + ": empty image id");
    const auto parse_int = [&](std::string_view v, const char* what) {
      int out_v = 0;
      const auto r = std::from_chars(v.data(), v.data() + v.size(), out_v);
      if (r.ec != std::errc{} || r.ptr != v.data() + v.size())
        throw Error(ErrorKind::Parse, where + ": invalid " + what + " '" + std::string(v) + "'");
      return out_v;
    };
    const int label = parse_int(cols[2], "label");
    if (label != 0 && label != 1)
      throw Error(ErrorKind::Parse, where + ": label must be 0 or 1, got " + std::to_string(label));
    const int fold = parse_int(cols[3], "fold");
    if (fold < 0) throw Error(ErrorKind::Parse, where + ": negative fold");
    out.entries.push_back({std::string(cols[0]), std::string(cols[1]), label, fold});
  }
  return out;
}

PairList load_pairs(const fs::path& path) { return parse_pairs(read_text(path)); }

std::string format_pairs(const PairList& pairs) {
  std::string out = "id_a,id_b,label,fold\n";
  for (const auto& e : pairs.entries)
    out += e.id_a + "," + e.id_b + "," + std::to_string(e.label) + "," + std::to_string(e.fold) + "\n";
  return out;
}

void write_pairs(const PairList& pairs, const fs::path& path) { write_text(path, format_pairs(pairs)); }

std::string heatmap_csv(std::span<const double> values, const PatchLayout& layout) {
  if (values.size() != layout.size())
    throw Error(ErrorKind::Incompatible, "heatmap has " + std::to_string(values.size()) +
                                             " values for " + std::to_string(layout.size()) +
                                             " positions");
  std::string out = "x,y,value\n";
  for (std::size_t i = 0; i < values.size(); ++i)
    out += std::to_string(layout.positions[i].x) + "," + std::to_string(layout.positions[i].y) +
           "," + num(values[i]) + "\n";
  return out;
}

std::vector<std::uint8_t> heatmap_pgm(std::span<const double> values, const PatchLayout& layout) {
  if (values.size() != layout.size())
    throw Error(ErrorKind::Incompatible, "heatmap size does not match layout");
  const int cols = (layout.image_width - layout.patch_width) / layout.stride + 1;
  const int rows = (layout.image_height - layout.patch_height) / layout.stride + 1;
  const int width = cols * layout.patch_width;
  const int height = rows * layout.patch_height;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;

  std::vector<std::uint8_t> pixels(std::size_t(width) * height, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double norm = range > 0.0 ? (values[i] - *lo) / range : 128.0 / 255.0;
    const auto level = static_cast<std::uint8_t>(std::lround(norm * 255.0));
    const int cx = layout.positions[i].x / layout.stride;
    const int cy = layout.positions[i].y / layout.stride;
    for (int y = cy * layout.patch_height; y < (cy + 1) * layout.patch_height; ++y)
      for (int x = cx * layout.patch_width; x < (cx + 1) * layout.patch_width; ++x)
        pixels[std::size_t(y) * width + x] = level;
  }
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

void export_heatmap(std::span<const double> values, const PatchLayout& layout,
                    const fs::path& path, HeatmapFormat format) {
  if (format == HeatmapFormat::Csv)
    write_text(path, heatmap_csv(values, layout));
  else
    write_bytes(path, heatmap_pgm(values, layout));
}

std::string contributions_csv(const SimilarityBreakdown& breakdown, double display_scale) {
  if (breakdown.mode != SimilarityMode::RRFNet)
    throw Error(ErrorKind::Domain, "contribution matrices exist only for rrfnet breakdowns");
  std::string out;
  const std::size_t k = breakdown.patch_count;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (j) out += ",";
      out += num(breakdown.contribution(i, j) * display_scale);
    }
    out += "\n";
  }
  return out;
}

json to_json(const FusionModel& model) {
  return {{"K", model.weights.size()},
          {"weights", model.weights},
          {"bias", model.bias},
          {"reg", model.reg},
          {"iterations", model.iterations},
          {"loss", model.loss},
          {"gradient_norm", model.gradient_norm},
          {"converged", model.converged},
          {"seed", model.seed}};
}

FusionModel model_from_json(const json& j) {
  FusionModel m;
  m.weights = json_field<std::vector<double>>(j, "weights", "fusion model");
  const auto k = json_field<std::size_t>(j, "K", "fusion model");
  if (k != m.weights.size())
    throw Error(ErrorKind::Parse, "fusion model: K does not match the weight count");
  for (double w : m.weights)
    if (!std::isfinite(w)) throw Error(ErrorKind::Data, "fusion model: non-finite weight");
  m.bias = json_field<double>(j, "bias", "fusion model");
  m.reg = json_field<double>(j, "reg", "fusion model");
  m.iterations = json_field<int>(j, "iterations", "fusion model");
  m.loss = json_field<double>(j, "loss", "fusion model");
  m.seed = json_field<std::uint64_t>(j, "seed", "fusion model");
  if (j.contains("gradient_norm")) m.gradient_norm = j.at("gradient_norm").get<double>();
  if (j.contains("converged")) m.converged = j.at("converged").get<bool>();
  return m;
}

json to_json(const ScoreCombiner& c) {
  json stats = json::array();
  for (const auto& s : c.stats) stats.push_back({{"mean", s.mean}, {"std", s.stddev}});
  json j = {{"method", std::string(to_string(c.method))}, {"sources", stats}};
  if (c.method == CombineMethod::LearnedLogistic) j["model"] = to_json(c.model);
  return j;
}

ScoreCombiner combiner_from_json(const json& j) {
  ScoreCombiner c;
  c.method = parse_combine_method(json_field<std::string>(j, "method", "combiner"));
  for (const auto& s : json_field<json>(j, "sources", "combiner")) {
    SourceStats st{json_field<double>(s, "mean", "combiner source"),
                   json_field<double>(s, "std", "combiner source")};
    if (!std::isfinite(st.mean) || !(st.stddev > 0.0) || !std::isfinite(st.stddev))
      throw Error(ErrorKind::Data, "combiner: invalid source statistics");
    c.stats.push_back(st);
  }
  if (c.method == CombineMethod::LearnedLogistic) c.model = model_from_json(j.at("model"));
  return c;
}

json to_json(const VerificationReport& r) {
  json folds = json::array();
  for (const auto& f : r.folds) {
    json e = {{"fold", f.fold}, {"pairs", f.pair_count}, {"skipped", f.skipped}};
    if (!f.skipped) {
      // +-inf thresholds are legal (constant scorers) but not valid JSON numbers
      if (std::isfinite(f.threshold))
        e["threshold"] = f.threshold;
      else
        e["threshold"] = f.threshold > 0 ? "inf" : "-inf";
      e["accuracy"] = f.accuracy;
    }
    folds.push_back(e);
  }
  return {{"name", r.name},
          {"folds", folds},
          {"mean_accuracy", r.mean_accuracy},
          {"std_accuracy", r.stddev},
          {"warnings", r.warnings},
          {"metadata", r.metadata}};
}

json to_json(const SimilarityBreakdown& b, const PatchLayout& layout, double display_scale) {
  json j = {{"mode", std::string(to_string(b.mode))},
            {"K", b.patch_count},
            {"global_score", b.global_score},
            {"display_scale", display_scale}};
  json positions = json::array();
  for (const auto& p : layout.positions) positions.push_back({p.x, p.y});
  j["positions"] = positions;
  auto scaled = [display_scale](std::vector<double> v) {
    for (double& e : v) e *= display_scale;
    return v;
  };
  if (b.mode == SimilarityMode::RegionBased) {
    j["logit"] = b.logit;
    j["local"] = b.local;
    j["terms"] = scaled(b.terms);
  } else {
    j["heatmap_a"] = scaled(heatmap(b, Side::A));
    j["heatmap_b"] = scaled(heatmap(b, Side::B));
    j["pair_count"] = b.contributions.size();
  }
  return j;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_benchmark(const Benchmark& bench, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + (dir / "images").string());
  json truth_images = json::object();
  for (const auto& [id, img] : bench.images) {
    write_image(img, dir / "images" / (id + ".rrfi"));
    truth_images[id] = {{"identity", bench.truth.identity.at(id)},
                        {"split", bench.truth.split.at(id)}};
  }
  write_pairs(bench.pairs, dir / "pairs.csv");
  write_pairs(bench.train_pairs, dir / "train_pairs.csv");
  const auto& o = bench.options;
  write_json(dir / "ground_truth.json",
             {{"images", truth_images},
              {"noise_cell", o.noise_cell},
              {"noise_cols", bench.truth.noise_cols},
              {"noise_rows", bench.truth.noise_rows},
              {"noise_multipliers", bench.truth.noise_multipliers}});
  write_json(dir / "benchmark.json",
             {{"identities", o.identities},
              {"train_identities", o.train_identities},
              {"images_per_identity", o.images_per_identity},
              {"width", o.width},
              {"height", o.height},
              {"channels", o.channels},
              {"within_sigma", o.within_sigma},
              {"heterogeneity", o.heterogeneity},
              {"noise_cell", o.noise_cell},
              {"folds", o.folds},
              {"augment", o.augment},
              {"max_shift", o.augmentation.max_shift},
              {"mask_ratio", o.augmentation.mask_ratio},
              {"seed", o.seed}});
}

std::vector<std::string> benchmark_image_ids(const fs::path& dir) {
  const json truth = read_json(dir / "ground_truth.json");
  std::vector<std::string> ids;
  for (const auto& [id, _] : truth.at("images").items()) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace rrf::io
