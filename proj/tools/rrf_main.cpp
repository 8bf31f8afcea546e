// rrf: patch-decomposed face similarity pipeline.
//
//   rrf layout    patch layout, mirror classes and network shape plan
//   rrf generate  synthetic benchmark (+ embeddings for one layout)
//   rrf embed     toy-embed a benchmark's images under a layout
//   rrf sim       similarity breakdown and heatmaps for one pair
//   rrf fit       logistic-regression patch weights
//   rrf verify    10-fold verification report for one configuration
//   rrf combine   reports for several configurations plus their combination
//
// Exit codes: 0 success, 1 user error, 2 internal error. Errors are printed
// as a single line `error: <kind>: <message>` on stderr.

#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rrf/error.hpp"
#include "rrf/fusion.hpp"
#include "rrf/geometry.hpp"
#include "rrf/io.hpp"
#include "rrf/metric.hpp"
#include "rrf/protocol.hpp"
#include "rrf/toyembed.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Common {
  std::string root = ".";
  std::uint64_t seed = 0;
  int jobs = 1;
  json argv = json::array();

  fs::path path(const std::string& p) const {
    const fs::path q(p);
    return q.is_absolute() ? q : fs::path(root) / q;
  }

  json echo(const std::string& subcommand) const {
    return {{"subcommand", subcommand}, {"argv", argv}, {"seed", seed}, {"root", root}};
  }
};

struct LayoutArgs {
  int image_width = 112;
  int image_height = 112;
  int patch_width = 28;
  int patch_height = 0;  // 0: same as width
  int stride = 0;        // 0: half the patch width
  bool exclude_corners = false;

  void add(CLI::App* cmd, bool exclude_default) {
    exclude_corners = exclude_default;
    cmd->add_option("--W", image_width, "Image width in pixels")->capture_default_str();
    cmd->add_option("--H", image_height, "Image height in pixels")->capture_default_str();
    cmd->add_option("--w", patch_width, "Patch width in pixels")->capture_default_str();
    cmd->add_option("--h", patch_height, "Patch height (default: patch width)");
    cmd->add_option("--stride", stride, "Grid stride (default: patch width / 2)");
    cmd->add_flag("--exclude-corners,!--keep-corners", exclude_corners,
                  "Drop patches touching the 28x28 image corners")
        ->capture_default_str();
  }

  rrf::PatchLayout build() const {
    const int h = patch_height > 0 ? patch_height : patch_width;
    const int s = stride > 0 ? stride : std::max(1, patch_width / 2);
    return rrf::layout_patches(image_width, image_height, patch_width, h, s, exclude_corners);
  }
};

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw rrf::Error(rrf::ErrorKind::Io, "cannot create directory " + dir.string());
}

json shape_json(const rrf::TensorShape& s) { return {s.count, s.width, s.height, s.channels}; }

// ---------------------------------------------------------------- layout

struct LayoutCmd {
  LayoutArgs layout;
  std::string variant = "rrfnet";
  long batch = 1;
  long channels = 3;
  std::string out;
};

int run_layout(const Common& c, const LayoutCmd& a) {
  const auto layout = a.layout.build();
  json mirror = json::object();
  try {
    const auto m = rrf::mirror_map(layout);
    mirror = {{"pairs", m.pairs}, {"class_count", m.class_count}};
  } catch (const rrf::Error& e) {
    if (e.kind() != rrf::ErrorKind::AsymmetricLayout) throw;
    mirror = {{"error", e.what()}};
  }
  const auto v = rrf::parse_architecture(a.variant);
  const auto plan = rrf::shape_plan(v, a.batch, layout.image_width, layout.image_height,
                                    a.channels, layout.patch_width, layout.patch_height,
                                    static_cast<long>(layout.size()));
  json blocks = json::array();
  for (const auto& b : plan.blocks) blocks.push_back(shape_json(b));
  json shape = {{"variant", a.variant},
                {"input", shape_json(plan.input)},
                {"blocks", blocks},
                {"feature", {plan.feature_count, plan.feature_dim}}};
  if (v == rrf::Architecture::RRFNet) shape["mean"] = {plan.mean_count, plan.feature_dim};

  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx",
                static_cast<unsigned long long>(rrf::layout_fingerprint(layout)));
  json j = {{"config", c.echo("layout")},
            {"layout", rrf::io::layout_json(layout)},
            {"K", layout.size()},
            {"fingerprint", fp},
            {"mirror", mirror},
            {"shape_plan", shape}};
  if (a.out.empty()) {
    print_json(j);
  } else {
    rrf::io::write_json(c.path(a.out), j);
    std::cout << c.path(a.out).string() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- embed

struct EmbedArgs {
  LayoutArgs layout;
  std::size_t dim = 512;
  bool flip = false;
};

void add_embed_options(CLI::App* cmd, EmbedArgs& a) {
  a.layout.add(cmd, true);
  cmd->add_option("--dim", a.dim, "Embedding dimension")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_flag("--flip", a.flip, "Merge embeddings of the mirrored image");
}

// Embeds every benchmark image and writes <out>/<id>.rrfe plus manifest.json
// (manifest last).
fs::path embed_benchmark(const Common& c, const fs::path& bench_dir, const fs::path& out_dir,
                         const EmbedArgs& a) {
  const auto layout = a.layout.build();
  const auto ids = rrf::io::benchmark_image_ids(bench_dir);
  if (ids.empty()) throw rrf::Error(rrf::ErrorKind::Domain, "benchmark has no images");
  const auto first = rrf::io::read_image(bench_dir / "images" / (ids.front() + ".rrfi"));
  const rrf::ToyEmbedder embedder(c.seed, layout.patch_width, layout.patch_height,
                                  first.channels, a.dim);
  ensure_dir(out_dir);

  std::vector<std::exception_ptr> errors(ids.size());
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(c.jobs, 1)), 1, ids.size());
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      for (std::size_t i = w; i < ids.size(); i += workers) {
        try {
          const auto img = rrf::io::read_image(bench_dir / "images" / (ids[i] + ".rrfi"));
          const auto set = rrf::embed(embedder, img, layout, a.flip, ids[i]);
          rrf::io::write_embeddings(set, out_dir / (ids[i] + ".rrfe"));
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  rrf::io::Manifest m;
  m.layout = layout;
  for (const auto& id : ids) m.images[id] = id + ".rrfe";
  m.flip_policy = a.flip ? "merged" : "none";
  m.embedder = {{"kind", "toy_projection"}, {"seed", c.seed}, {"dim", a.dim},
                {"channels", first.channels}, {"config", c.echo("embed")}};
  const fs::path manifest = out_dir / "manifest.json";
  rrf::io::write_manifest(m, manifest);
  return manifest;
}

struct EmbedCmd {
  EmbedArgs embed;
  std::string bench;
  std::string out;
};

int run_embed(const Common& c, const EmbedCmd& a) {
  const auto manifest = embed_benchmark(c, c.path(a.bench), c.path(a.out), a.embed);
  std::cout << manifest.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- generate

struct GenerateCmd {
  rrf::BenchmarkOptions bench;
  EmbedArgs embed;
  std::string out;
  std::string emb_dir;
  bool no_embed = false;
};

int run_generate(const Common& c, GenerateCmd a) {
  a.bench.seed = c.seed;
  const auto layout = a.embed.layout.build();
  const auto bench = rrf::generate_benchmark(a.bench, layout);
  const fs::path dir = c.path(a.out);
  ensure_dir(dir);
  rrf::io::write_benchmark(bench, dir);
  std::cout << dir.string() << "\n";
  if (!a.no_embed) {
    const std::string sub =
        a.emb_dir.empty() ? "emb_" + std::to_string(layout.patch_width) : a.emb_dir;
    std::cout << embed_benchmark(c, dir, dir / sub, a.embed).string() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- sim

struct SimCmd {
  std::string manifest;
  std::string a, b;
  std::string mode = "rrfnet";
  std::string model;
  std::string out;
  std::string heatmap = "both";
  double display_scale = 1.0;
};

int run_sim(const Common& c, const SimCmd& a) {
  const auto mpath = c.path(a.manifest);
  const auto manifest = rrf::io::read_manifest(mpath);
  const auto base = mpath.parent_path();
  auto load = [&](const std::string& id) {
    const auto it = manifest.images.find(id);
    if (it == manifest.images.end())
      throw rrf::Error(rrf::ErrorKind::MissingIds, "missing embeddings for: " + id);
    return rrf::io::read_embeddings(base / it->second, manifest.layout, id);
  };
  const auto ea = load(a.a);
  const auto eb = load(a.b);

  const auto mode = rrf::parse_similarity_mode(a.mode);
  rrf::SimilarityBreakdown br;
  if (mode == rrf::SimilarityMode::RRFNet) {
    br = rrf::rrfnet_similarity_decomposed(ea, eb);
  } else {
    if (a.model.empty())
      throw rrf::Error(rrf::ErrorKind::Domain, "region_based mode needs --model");
    br = rrf::region_similarity(ea, eb, rrf::io::model_from_json(rrf::io::read_json(c.path(a.model))));
  }

  const fs::path out = c.path(a.out);
  ensure_dir(out);
  json j = rrf::io::to_json(br, manifest.layout, a.display_scale);
  j["config"] = c.echo("sim");
  j["image_a"] = a.a;
  j["image_b"] = a.b;
  std::vector<fs::path> written{out / "breakdown.json"};
  rrf::io::write_json(written.back(), j);
  if (mode == rrf::SimilarityMode::RRFNet) {
    written.push_back(out / "contributions.csv");
    rrf::io::write_text(written.back(), rrf::io::contributions_csv(br, a.display_scale));
  }
  const bool csv = a.heatmap == "csv" || a.heatmap == "both";
  const bool pgm = a.heatmap == "pgm" || a.heatmap == "both";
  for (const auto side : {rrf::Side::A, rrf::Side::B}) {
    auto values = rrf::heatmap(br, side);
    for (double& v : values) v *= a.display_scale;
    const std::string stem = side == rrf::Side::A ? "heatmap_a" : "heatmap_b";
    if (csv) {
      written.push_back(out / (stem + ".csv"));
      rrf::io::export_heatmap(values, manifest.layout, written.back(), rrf::io::HeatmapFormat::Csv);
    }
    if (pgm) {
      written.push_back(out / (stem + ".pgm"));
      rrf::io::export_heatmap(values, manifest.layout, written.back(), rrf::io::HeatmapFormat::Pgm);
    }
  }
  for (const auto& p : written) std::cout << p.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- fit

struct FitCmd {
  std::string manifest;
  std::string pairs;
  double reg = 1e-4;
  int max_iterations = 10000;
  std::string out;
};

int run_fit(const Common& c, const FitCmd& a) {
  const auto store = rrf::io::load_store(c.path(a.manifest));
  const auto pairs = rrf::io::load_pairs(c.path(a.pairs));
  const std::size_t k = store.layout.size();

  const auto features = rrf::local_feature_matrix(store, pairs, c.jobs);
  const auto labels = pairs.labels();
  const auto model = rrf::fit_fusion({features, pairs.size(), k}, labels,
                                     {a.reg, c.seed, a.max_iterations, 1e-6});
  json j = rrf::io::to_json(model);
  j["config"] = c.echo("fit");
  rrf::io::write_json(c.path(a.out), j);
  std::cout << c.path(a.out).string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- verify / combine

struct VerifyCmd {
  std::string manifest;
  std::string pairs;
  std::string mode = "rrfnet";
  std::string model;
  std::string out;
};

int run_verify(const Common& c, const VerifyCmd& a) {
  const auto store = rrf::io::load_store(c.path(a.manifest));
  const auto pairs = rrf::io::load_pairs(c.path(a.pairs));
  rrf::Configuration config;
  config.name = fs::path(a.manifest).parent_path().filename().string() + ":" + a.mode;
  config.store = &store;
  config.mode = rrf::parse_similarity_mode(a.mode);
  if (config.mode == rrf::SimilarityMode::RegionBased) {
    if (a.model.empty())
      throw rrf::Error(rrf::ErrorKind::Domain, "region_based mode needs --model");
    config.model = rrf::io::model_from_json(rrf::io::read_json(c.path(a.model)));
  }
  const auto report = rrf::evaluate_configuration(pairs, config, c.jobs);
  json j = rrf::io::to_json(report);
  j["config"] = c.echo("verify");
  rrf::io::write_json(c.path(a.out), j);
  std::cout << c.path(a.out).string() << "\n";
  return 0;
}

struct CombineCmd {
  std::vector<std::string> sources;  // MANIFEST[,MODE[,MODEL]]
  std::string pairs;
  std::string calib_pairs;
  std::string method = "mean_zscore";
  std::string out;
};

int run_combine(const Common& c, const CombineCmd& a) {
  std::vector<rrf::EmbeddingStore> stores;
  stores.reserve(a.sources.size());
  std::vector<rrf::Configuration> configs;
  for (const auto& spec : a.sources) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
    if (parts.empty() || parts.size() > 3)
      throw rrf::Error(rrf::ErrorKind::Parse, "--source must be MANIFEST[,MODE[,MODEL]]: " + spec);
    stores.push_back(rrf::io::load_store(c.path(parts[0])));
    rrf::Configuration cfg;
    const std::string mode = parts.size() > 1 ? parts[1] : "rrfnet";
    cfg.name = fs::path(parts[0]).parent_path().filename().string() + ":" + mode;
    cfg.store = &stores.back();
    cfg.mode = rrf::parse_similarity_mode(mode);
    if (cfg.mode == rrf::SimilarityMode::RegionBased) {
      if (parts.size() < 3)
        throw rrf::Error(rrf::ErrorKind::Domain, "region_based source needs a model: " + spec);
      cfg.model = rrf::io::model_from_json(rrf::io::read_json(c.path(parts[2])));
    }
    configs.push_back(std::move(cfg));
  }
  const auto pairs = rrf::io::load_pairs(c.path(a.pairs));
  std::optional<rrf::PairList> calib;
  if (!a.calib_pairs.empty()) calib = rrf::io::load_pairs(c.path(a.calib_pairs));
  rrf::CombineOptions opts;
  opts.method = rrf::parse_combine_method(a.method);
  opts.calibration = calib ? &*calib : nullptr;
  opts.fit.seed = c.seed;
  const auto result = rrf::evaluate_configurations(pairs, configs, opts, c.jobs);

  json reports = json::array();
  for (const auto& r : result.reports) reports.push_back(rrf::io::to_json(r));
  json j = {{"config", c.echo("combine")},
            {"reports", reports},
            {"combiner", rrf::io::to_json(result.combiner)}};
  rrf::io::write_json(c.path(a.out), j);
  std::cout << c.path(a.out).string() << "\n";
  return 0;
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("RRF_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw rrf::Error(rrf::ErrorKind::Parse, std::string("RRF_SEED is not an integer: ") + env);
    }
  }
  return 0;
}

int fail(std::string_view kind, std::string_view message, int code) {
  std::string line(message);
  for (char& ch : line)
    if (ch == '\n') ch = ' ';
  std::cerr << "error: " << kind << ": " << line << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  Common common;
  for (int i = 1; i < argc; ++i) common.argv.push_back(argv[i]);

  CLI::App app{"Patch-decomposed face similarity: layouts, metrics, fusion and verification"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--root", common.root, "Base directory for relative paths")->capture_default_str();
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Random seed (default: $RRF_SEED or 0)");
  app.add_option("--jobs", common.jobs, "Worker threads for pair scoring / embedding")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  LayoutCmd layout_cmd;
  auto* layout = app.add_subcommand("layout", "Print a patch layout with mirror map and shape plan");
  layout_cmd.layout.add(layout, false);
  layout->add_option("--variant", layout_cmd.variant, "rrfnet or resnet")
      ->capture_default_str()
      ->check(CLI::IsMember({"rrfnet", "resnet"}));
  layout->add_option("--batch", layout_cmd.batch, "Batch size")->capture_default_str();
  layout->add_option("--channels", layout_cmd.channels, "Image channels")->capture_default_str();
  layout->add_option("--out", layout_cmd.out, "Write JSON here instead of stdout");

  GenerateCmd gen_cmd;
  auto* gen = app.add_subcommand("generate", "Write a synthetic benchmark directory");
  gen->add_option("--out", gen_cmd.out, "Benchmark directory")->required();
  gen->add_option("--ids", gen_cmd.bench.identities, "Evaluation identities")->capture_default_str();
  gen->add_option("--train-ids", gen_cmd.bench.train_identities, "Training identities")->capture_default_str();
  gen->add_option("--imgs", gen_cmd.bench.images_per_identity, "Images per identity")->capture_default_str();
  gen->add_option("--sigma", gen_cmd.bench.within_sigma, "Within-identity noise scale")->capture_default_str();
  gen->add_option("--heterogeneity", gen_cmd.bench.heterogeneity, "Spread of per-region noise multipliers")->capture_default_str();
  gen->add_option("--noise-cell", gen_cmd.bench.noise_cell, "Side of a noise region in pixels")->capture_default_str();
  gen->add_option("--channels", gen_cmd.bench.channels, "Image channels")->capture_default_str();
  gen->add_option("--folds", gen_cmd.bench.folds, "Cross-validation folds")->capture_default_str();
  gen->add_flag("--augment", gen_cmd.bench.augment, "Apply random shifts / patch masking");
  gen->add_option("--max-shift", gen_cmd.bench.augmentation.max_shift, "Largest shift in pixels")->capture_default_str();
  gen->add_option("--mask-ratio", gen_cmd.bench.augmentation.mask_ratio, "Fraction of patches masked")->capture_default_str();
  gen->add_option("--emb-dir", gen_cmd.emb_dir, "Embedding subdirectory (default emb_<w>)");
  gen->add_flag("--no-embed", gen_cmd.no_embed, "Skip embedding");
  add_embed_options(gen, gen_cmd.embed);

  EmbedCmd embed_cmd;
  auto* emb = app.add_subcommand("embed", "Toy-embed the images of a benchmark");
  emb->add_option("--bench", embed_cmd.bench, "Benchmark directory")->required();
  emb->add_option("--out", embed_cmd.out, "Output directory for embeddings + manifest")->required();
  add_embed_options(emb, embed_cmd.embed);

  SimCmd sim_cmd;
  auto* sim = app.add_subcommand("sim", "Similarity breakdown and heatmaps for one pair");
  sim->add_option("--manifest", sim_cmd.manifest, "Embedding manifest")->required();
  sim->add_option("--a", sim_cmd.a, "Image id A")->required();
  sim->add_option("--b", sim_cmd.b, "Image id B")->required();
  sim->add_option("--mode", sim_cmd.mode, "rrfnet or region_based")->capture_default_str();
  sim->add_option("--model", sim_cmd.model, "Fusion model JSON (region_based)");
  sim->add_option("--out", sim_cmd.out, "Output directory")->required();
  sim->add_option("--heatmap", sim_cmd.heatmap, "Heatmap files: csv, pgm, both or none")
      ->capture_default_str()
      ->check(CLI::IsMember({"csv", "pgm", "both", "none"}));
  sim->add_option("--display-scale", sim_cmd.display_scale, "Multiplier for per-patch values")->capture_default_str();

  FitCmd fit_cmd;
  auto* fit = app.add_subcommand("fit", "Train per-patch fusion weights");
  fit->add_option("--manifest", fit_cmd.manifest, "Embedding manifest")->required();
  fit->add_option("--pairs", fit_cmd.pairs, "Training pairs CSV")->required();
  fit->add_option("--reg", fit_cmd.reg, "L2 regularization strength")->capture_default_str();
  fit->add_option("--max-iter", fit_cmd.max_iterations, "Iteration cap")->capture_default_str();
  fit->add_option("--out", fit_cmd.out, "Model JSON path")->required();

  VerifyCmd verify_cmd;
  auto* verify = app.add_subcommand("verify", "10-fold verification of one configuration");
  verify->add_option("--manifest", verify_cmd.manifest, "Embedding manifest")->required();
  verify->add_option("--pairs", verify_cmd.pairs, "Evaluation pairs CSV")->required();
  verify->add_option("--mode", verify_cmd.mode, "rrfnet or region_based")->capture_default_str();
  verify->add_option("--model", verify_cmd.model, "Fusion model JSON (region_based)");
  verify->add_option("--out", verify_cmd.out, "Report JSON path")->required();

  CombineCmd combine_cmd;
  auto* combine = app.add_subcommand("combine", "Verify several configurations and their score combination");
  combine->add_option("--source", combine_cmd.sources, "MANIFEST[,MODE[,MODEL]] (repeatable)")->required();
  combine->add_option("--pairs", combine_cmd.pairs, "Evaluation pairs CSV")->required();
  combine->add_option("--calib-pairs", combine_cmd.calib_pairs, "Pairs used to fit the combiner");
  combine->add_option("--method", combine_cmd.method, "mean_zscore or learned_logistic")
      ->capture_default_str()
      ->check(CLI::IsMember({"mean_zscore", "learned_logistic"}));
  combine->add_option("--out", combine_cmd.out, "Report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 1);
  }

  try {
    common.seed = seed ? *seed : default_seed();
    if (layout->parsed()) return run_layout(common, layout_cmd);
    if (gen->parsed()) return run_generate(common, gen_cmd);
    if (emb->parsed()) return run_embed(common, embed_cmd);
    if (sim->parsed()) return run_sim(common, sim_cmd);
    if (fit->parsed()) return run_fit(common, fit_cmd);
    if (verify->parsed()) return run_verify(common, verify_cmd);
    if (combine->parsed()) return run_combine(common, combine_cmd);
  } catch (const rrf::Error& e) {
    return fail(rrf::to_string(e.kind()), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 2);
  }
  return fail("internal", "no subcommand handled", 2);
}
