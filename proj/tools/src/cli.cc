#include "lsme_cli/cli.h"

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11/CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lsme/embed.h"
#include "lsme/error.h"
#include "lsme/json_io.h"
#include "lsme/maskproxy.h"
#include "lsme/mecore.h"
#include "lsme/metrics.h"
#include "lsme/parallel.h"
#include "lsme/scenegen.h"
#include "lsme/variant.h"

namespace lsme::cli {
namespace fs = std::filesystem;
namespace {

struct GenFlags {
  std::string split;
  std::string variant = "lsme";
  std::string role = "support";
  int scenes = 0;
  int views = 20;
  std::uint64_t seed = 0;
  int resolution = 128;
  std::string out;
};

struct EvalFlags {
  std::string split;
  std::string data;
  int support_scenes = 1000;
  int query_scenes = 1000;
  int base_scenes = 500;
  int views = 20;
  int resolution = 128;
  std::string variants = "lsme";
  int n_way = 5;
  int k_shot = 1;
  int episodes = 500;
  int queries = kDefaultQueriesPerEpisode;
  std::string views_mode = "mean";
  std::string masks = "gt";
  std::string embeddings = "synth";
  double noise = 1.0;
  std::optional<double> alpha_inst;
  std::optional<double> alpha_view;
  std::optional<double> beta;
  int dim = 64;
  std::uint64_t seed = 0;
  std::string out;
  std::vector<double> ratios = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
};

// Shortest round-trip decimal form, used in file names and echoes.
std::string FormatNumber(double x) { return nlohmann::json(x).dump(); }

void AddSharedEvalOptions(CLI::App* cmd, EvalFlags& f, bool with_masks) {
  cmd->add_option("--split", f.split, "Category split JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--data", f.data,
                  "Directory with support/, query/ and base/ written by gen; "
                  "scenes are generated in memory when omitted")
      ->check(CLI::ExistingDirectory);
  cmd->add_option("--support-scenes", f.support_scenes, "In-memory support pool size")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--query-scenes", f.query_scenes, "In-memory query pool size")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--base-scenes", f.base_scenes, "In-memory base pool size")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--views", f.views, "Views per in-memory scene")->check(CLI::PositiveNumber);
  cmd->add_option("--resolution", f.resolution, "In-memory render size in pixels")
      ->check(CLI::Range(64, 4096));
  cmd->add_option("--variant", f.variants,
                  "Variant name, comma-separated list, or 'all'");
  cmd->add_option("--n-way", f.n_way)->check(CLI::PositiveNumber);
  cmd->add_option("--k-shot", f.k_shot)->check(CLI::PositiveNumber);
  cmd->add_option("--episodes", f.episodes)->check(CLI::PositiveNumber);
  cmd->add_option("--queries", f.queries, "Query scenes per episode")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--views-mode", f.views_mode)->check(CLI::IsMember({"single", "mean"}));
  if (with_masks) {
    cmd->add_option("--masks", f.masks, "gt, ratio:<r> or a predicted-mask directory")
        ->check([](const std::string& text) -> std::string {
          try {
            const MaskSource source = MaskSource::Parse(text);
            if (source.kind == MaskSourceKind::kPredictedFiles &&
                !fs::is_directory(source.predicted_dir)) {
              return "no such mask directory: " + text;
            }
          } catch (const Error& e) {
            return e.what();
          }
          return {};
        });
  }
  cmd->add_option("--embeddings", f.embeddings, "synth, random or an embedding manifest");
  cmd->add_option("--noise", f.noise, "Scales the synthetic noise profile")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--alpha-inst", f.alpha_inst)->check(CLI::NonNegativeNumber);
  cmd->add_option("--alpha-view", f.alpha_view)->check(CLI::NonNegativeNumber);
  cmd->add_option("--beta", f.beta)->check(CLI::NonNegativeNumber);
  cmd->add_option("--dim", f.dim, "Synthetic embedding dimension")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", f.seed, "Root seed");
  cmd->add_option("--out", f.out, "Run directory")->required();
}

std::vector<VariantConfig> ParseVariantList(const std::string& text) {
  std::vector<VariantConfig> out;
  if (text == "all") {
    for (const Variant v : kAllVariants) out.push_back(ConfigFor(v));
    return out;
  }
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) out.push_back(ConfigFor(ParseVariant(item)));
  if (out.empty()) throw ConfigurationError("no variant given");
  return out;
}

SynthWorldParams WorldParams(const EvalFlags& f) {
  SynthWorldParams p;
  p.dim = f.dim;
  p.alpha_inst = f.alpha_inst.value_or(f.noise * kNoiseAlphaInst);
  p.alpha_view = f.alpha_view.value_or(f.noise * kNoiseAlphaView);
  p.beta = f.beta.value_or(f.noise * kNoiseBeta);
  p.seed = f.seed;
  p.Validate();
  return p;
}

// Owns whichever embedding source the run uses.
struct SourceHolder {
  // Heap-held so StoreSource's reference survives moves of the holder.
  std::unique_ptr<EmbeddingStore> store;
  std::unique_ptr<EmbeddingSource> source;
  nlohmann::json echo;
};

SourceHolder MakeSource(const EvalFlags& f) {
  SourceHolder h;
  if (f.embeddings == "synth") {
    const SynthWorldParams p = WorldParams(f);
    h.source = std::make_unique<SyntheticSource>(p);
    h.echo = {{"kind", "synth"}, {"dim", p.dim}, {"alpha_inst", p.alpha_inst},
              {"alpha_view", p.alpha_view}, {"beta", p.beta}, {"seed", p.seed}};
  } else if (f.embeddings == "random") {
    h.source = std::make_unique<RandomSource>(f.dim, f.seed);
    h.echo = {{"kind", "random"}, {"dim", f.dim}, {"seed", f.seed}};
  } else {
    if (!fs::is_regular_file(f.embeddings)) {
      throw DataIntegrityError("embedding manifest not found: " + f.embeddings);
    }
    h.store = std::make_unique<EmbeddingStore>(LoadEmbeddingFile(f.embeddings));
    h.source = std::make_unique<StoreSource>(*h.store);
    h.echo = {{"kind", "file"}, {"manifest", f.embeddings}, {"dim", h.store->dim()},
              {"count", h.store->size()}};
  }
  return h;
}

std::vector<PooledScene> LoadRole(const fs::path& root, SceneRole role,
                                  const CategorySplit& split) {
  const fs::path dir = root / RoleName(role);
  const fs::path scene_dir = dir / "scenes";
  if (!fs::is_directory(scene_dir)) {
    throw DataIntegrityError("missing scene directory " + scene_dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(scene_dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<PooledScene> scenes(files.size());
  ParallelFor(files.size(), [&](std::size_t i) {
    SceneSpec spec = ReadSceneFile(files[i]);
    if (spec.role != role) {
      throw DataIntegrityError(files[i].string() + " is not a " +
                               std::string(RoleName(role)) + " scene");
    }
    std::vector<MaskSet> masks;
    for (int v = 0; v < static_cast<int>(spec.cameras.size()); ++v) {
      const fs::path path = MaskFilePath(dir / "masks", spec.scene_id, v);
      if (!fs::exists(path)) {
        throw DataIntegrityError("missing ground-truth masks " + path.string());
      }
      masks.push_back(ReadMaskFile(path, true));
    }
    RenderOptions render;
    if (!masks.empty()) {
      render.width = masks.front().width;
      render.height = masks.front().height;
    }
    scenes[i] = MakePooledScene(std::move(spec), split, render, std::move(masks));
  });
  return scenes;
}

ScenePool LoadPool(const fs::path& root, const CategorySplit& split, bool need_base) {
  ScenePool pool;
  pool.split = split;
  pool.support = LoadRole(root, SceneRole::kSupport, split);
  pool.query = LoadRole(root, SceneRole::kQuery, split);
  if (need_base) pool.base = LoadRole(root, SceneRole::kBase, split);
  if (!pool.support.empty()) {
    pool.render.width = pool.support.front().gt_masks.front().width;
    pool.render.height = pool.support.front().gt_masks.front().height;
  }
  return pool;
}

nlohmann::json ConfigEcho(const std::string& command, const EvalFlags& f,
                          const VariantConfig& variant, const MaskSource& masks,
                          const nlohmann::json& embeddings) {
  nlohmann::json scenes;
  if (!f.data.empty()) {
    scenes = {{"data", f.data}};
  } else {
    scenes = {{"support", f.support_scenes}, {"query", f.query_scenes},
              {"base", f.base_scenes}, {"views", f.views},
              {"resolution", f.resolution}};
  }
  return {{"command", command},
          {"split", f.split},
          {"scenes", scenes},
          {"variant", VariantName(variant.variant)},
          {"n_way", f.n_way},
          {"k_shot", f.k_shot},
          {"episodes", f.episodes},
          {"queries", f.queries},
          {"views_mode", f.views_mode},
          {"masks", masks.ToString()},
          {"embeddings", embeddings},
          {"seed", f.seed}};
}

// Everything a run writes, held until the whole computation has succeeded.
struct RunOutput {
  fs::path dir;
  nlohmann::json config;
  nlohmann::json episodes;
  nlohmann::json raw;
  AggregateReport report;
};

RunOutput EvaluateVariant(const std::string& command, const EvalFlags& f,
                          const ScenePool& pool, const VariantConfig& variant,
                          const EmbeddingSource& source, const nlohmann::json& echo,
                          const FeatureLibrary& library, const MaskSource& masks,
                          const fs::path& dir) {
  const auto episodes =
      SampleEpisodes(pool, variant, f.n_way, f.k_shot, f.queries, f.episodes, f.seed);
  RunOptions options;
  options.views_mode = ParseViewsMode(f.views_mode);
  options.masks = masks;
  options.root_seed = f.seed;
  const auto results = RunVariant(pool, variant, episodes, source, library, options);

  RunOutput out;
  out.dir = dir;
  out.config = ConfigEcho(command, f, variant, masks, echo);
  out.episodes = nlohmann::json::array();
  for (const auto& e : episodes) out.episodes.push_back(EpisodeToJson(e, pool));
  out.raw = nlohmann::json::array();
  std::vector<EpisodeMetrics> metrics;
  metrics.reserve(results.size());
  for (const auto& r : results) {
    out.raw.push_back(EpisodeResultToJson(r));
    metrics.push_back(ComputeEpisodeMetrics(r));
  }
  out.report = Aggregate(metrics, std::string(VariantName(variant.variant)), out.config);
  return out;
}

void WriteRun(const RunOutput& run) {
  WriteJsonFile(run.dir / "config.json", run.config);
  WriteJsonFile(run.dir / "episodes.json", run.episodes, -1);
  WriteJsonFile(run.dir / "raw_results.json", run.raw, -1);
  WriteJsonFile(run.dir / "report.json", ReportToJson(run.report));
  const AggregateReport* one = &run.report;
  WriteTextFile(run.dir / "report.txt", FormatReportTable({one, 1}));
}

// Shared state for eval and mask-sweep.
struct Session {
  CategorySplit split;
  SourceHolder source;
  std::map<std::pair<bool, bool>, ScenePool> pools;
  std::optional<ScenePool> loaded;
  std::map<std::pair<bool, bool>, FeatureLibrary> libraries;

  const ScenePool& PoolFor(const EvalFlags& f, const VariantConfig& v, bool need_base) {
    if (!f.data.empty()) {
      if (!loaded) loaded = LoadPool(f.data, split, need_base);
      return *loaded;
    }
    const auto key = std::pair{v.multi_object, v.pose_var};
    auto it = pools.find(key);
    if (it == pools.end()) {
      SceneParams params;
      params.views = f.views;
      RenderOptions render;
      render.width = render.height = f.resolution;
      PoolSizes sizes{f.support_scenes, f.query_scenes, need_base ? f.base_scenes : 0};
      it = pools.emplace(key, BuildScenePool(split, FlagsFor(v), sizes, f.seed, params,
                                             render)).first;
    }
    return it->second;
  }

  // Built whenever any variant of the run needs one, so variants sharing a
  // pool also share the library.
  const FeatureLibrary& LibraryFor(const EvalFlags& f, const VariantConfig& v,
                                   const ScenePool& pool, bool need_library) {
    const auto key = std::pair{v.multi_object, v.pose_var};
    auto it = libraries.find(key);
    if (it == libraries.end()) {
      FeatureLibrary library;
      if (need_library) {
        library = BuildPoolLibrary(pool, *source.source, ParseViewsMode(f.views_mode));
      }
      it = libraries.emplace(key, std::move(library)).first;
    }
    return it->second;
  }
};

int CmdGen(const GenFlags& f, std::ostream& out) {
  const CategorySplit split = LoadSplit(f.split);
  const VariantConfig variant = ConfigFor(ParseVariant(f.variant));
  const SceneRole role = ParseRole(f.role);
  SceneParams params;
  params.views = f.views;
  RenderOptions render;
  render.width = render.height = f.resolution;

  const auto bank = SamplePoseBank(split.AllInstances(), PoseBankSeed(f.seed));
  auto specs = GenerateScenes(split, bank, FlagsFor(variant), role, f.scenes, f.seed, params);
  std::vector<PooledScene> scenes(specs.size());
  ParallelFor(specs.size(), [&](std::size_t i) {
    scenes[i] = MakePooledScene(std::move(specs[i]), split, render);
  });

  const fs::path root(f.out);
  std::size_t mask_files = 0;
  for (const auto& s : scenes) {
    WriteSceneFile(s.spec, root / "scenes" / (s.spec.scene_id + ".json"));
    for (const auto& m : s.gt_masks) {
      WriteMaskFile(m, MaskFilePath(root / "masks", s.spec.scene_id, m.view_id));
      ++mask_files;
    }
  }
  out << "wrote " << scenes.size() << " scenes and " << mask_files << " mask files to "
      << root.string() << "\n";
  return kExitOk;
}

int CmdEval(const EvalFlags& f, std::ostream& out) {
  const auto variants = ParseVariantList(f.variants);
  Session session;
  session.split = LoadSplit(f.split);
  session.source = MakeSource(f);
  const MaskSource masks = MaskSource::Parse(f.masks);
  const bool need_base = std::any_of(variants.begin(), variants.end(), [](const auto& v) {
    return v.needs_support_assignment;
  });

  const fs::path root(f.out);
  std::vector<RunOutput> runs;
  for (const auto& v : variants) {
    const ScenePool& pool = session.PoolFor(f, v, need_base);
    const FeatureLibrary& library = session.LibraryFor(f, v, pool, need_base);
    const fs::path dir =
        variants.size() == 1 ? root : root / std::string(VariantName(v.variant));
    runs.push_back(EvaluateVariant("eval", f, pool, v, *session.source.source,
                                   session.source.echo, library, masks, dir));
  }

  std::vector<AggregateReport> reports;
  for (const auto& run : runs) {
    WriteRun(run);
    reports.push_back(run.report);
  }
  const std::string table = FormatReportTable(reports);
  if (variants.size() > 1) {
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : reports) all.push_back(ReportToJson(r));
    WriteJsonFile(root / "report.json", all);
    WriteTextFile(root / "report.txt", table);
  }
  out << table;
  return kExitOk;
}

int CmdMaskSweep(const EvalFlags& f, std::ostream& out) {
  const auto variants = ParseVariantList(f.variants);
  if (variants.size() != 1) throw ConfigurationError("mask-sweep takes a single variant");
  const VariantConfig& v = variants.front();
  Session session;
  session.split = LoadSplit(f.split);
  session.source = MakeSource(f);
  const ScenePool& pool = session.PoolFor(f, v, v.needs_support_assignment);
  const FeatureLibrary& library = session.LibraryFor(f, v, pool, v.needs_support_assignment);

  const fs::path root(f.out);
  std::vector<RunOutput> runs;
  for (const double rho : f.ratios) {
    MaskSource masks;
    masks.kind = MaskSourceKind::kRatio;
    masks.ratio = rho;
    runs.push_back(EvaluateVariant("mask-sweep", f, pool, v, *session.source.source,
                                   session.source.echo, library, masks,
                                   root / ("rho_" + FormatNumber(rho))));
  }

  std::ostringstream csv;
  csv << "rho,lsa_mean,lsa_ci,sa_mean,sa_ci,miou_query_mean,miou_query_ci\n";
  auto cells = [](const AggregateReport& r, const char* name) -> std::string {
    const auto it = r.metrics.find(name);
    if (it == r.metrics.end()) return ",";
    return FormatNumber(it->second.mean) + "," +
           (it->second.half_width ? FormatNumber(*it->second.half_width) : "");
  };
  std::vector<AggregateReport> reports;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    WriteRun(runs[i]);
    csv << FormatNumber(f.ratios[i]) << "," << cells(runs[i].report, "lsa") << ","
        << cells(runs[i].report, "sa") << "," << cells(runs[i].report, "miou_query")
        << "\n";
    reports.push_back(runs[i].report);
    reports.back().variant += " rho=" + FormatNumber(f.ratios[i]);
  }
  WriteTextFile(root / "sweep.csv", csv.str());
  out << FormatReportTable(reports);
  return kExitOk;
}

}  // namespace

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Low-shot mutual-exclusivity evaluation engine", "lsme"};
  app.require_subcommand(1);

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate scenes and ground-truth masks");
  gen_cmd->add_option("--split", gen.split)->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--variant", gen.variant);
  gen_cmd->add_option("--role", gen.role)->check(CLI::IsMember({"support", "query", "base"}));
  gen_cmd->add_option("--scenes", gen.scenes)->required()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--views", gen.views)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--resolution", gen.resolution)->check(CLI::Range(64, 4096));
  gen_cmd->add_option("--out", gen.out)->required();

  EvalFlags eval;
  auto* eval_cmd = app.add_subcommand("eval", "Run episodes and report SA, LSA and mIoU");
  AddSharedEvalOptions(eval_cmd, eval, true);

  EvalFlags sweep;
  auto* sweep_cmd =
      app.add_subcommand("mask-sweep", "Evaluate one variant across mask ratios");
  AddSharedEvalOptions(sweep_cmd, sweep, false);
  sweep_cmd->add_option("--ratios", sweep.ratios, "Comma-separated mask ratios")
      ->delimiter(',')
      ->check(CLI::Range(0.0, 1.0));

  std::vector<std::string> argv_storage = {"lsme"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return CmdGen(gen, out);
    if (eval_cmd->parsed()) return CmdEval(eval, out);
    if (sweep_cmd->parsed()) return CmdMaskSweep(sweep, out);
  } catch (const DataIntegrityError& e) {
    err << "data integrity error: " << e.what() << "\n";
    return kExitDataIntegrity;
  } catch (const ObjectNotVisibleError& e) {
    err << "data integrity error: " << e.what() << "\n";
    return kExitDataIntegrity;
  } catch (const InfeasiblePlacementError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const ConfigurationError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfiguration;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace lsme::cli
