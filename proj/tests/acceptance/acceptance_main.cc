// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lsme/embed.h"
#include "lsme/json_io.h"
#include "lsme/maskproxy.h"
#include "lsme/mecore.h"
#include "lsme/metrics.h"
#include "lsme_cli/cli.h"
#include "oracles.h"

namespace {

using namespace lsme;
using Clock = std::chrono::steady_clock;

// Pinned tolerances and budgets.
constexpr double kExactTol = 1e-9;
constexpr double kHungarianBudgetS = 5.0;
constexpr double kZeroNoiseBudgetS = 10.0;
constexpr double kChanceBudgetS = 60.0;
constexpr double kSweepBudgetS = 120.0;
constexpr double kChanceSaTol = 0.03;
constexpr double kChanceLsaTol = 0.02;
constexpr int kHungarianCases = 1000;
constexpr int kZeroNoiseEpisodes = 100;
constexpr int kEpisodes = 500;
constexpr int kSweepEpisodes = 500;
constexpr std::uint64_t kSeed = 20240611;

// Pool: 300 support, 300 query and 500 base scenes of 20 views.
const PoolSizes kPool{300, 300, 500};

double Seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string Fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void Report(const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  failures += !o.pass;
}

SynthWorldParams Noise(double scale) {
  return {64, scale * cli::kNoiseAlphaInst, scale * cli::kNoiseAlphaView,
          scale * cli::kNoiseBeta, kSeed};
}

AggregateReport Evaluate(const ScenePool& pool, Variant variant, int episodes,
                         const EmbeddingSource& source, const FeatureLibrary& library,
                         const std::string& masks = "gt") {
  const VariantConfig config = ConfigFor(variant);
  const auto eps = SampleEpisodes(pool, config, 5, 1, kDefaultQueriesPerEpisode, episodes, kSeed);
  RunOptions options;
  options.masks = MaskSource::Parse(masks);
  options.root_seed = kSeed;
  std::vector<EpisodeMetrics> metrics;
  for (const auto& r : RunVariant(pool, config, eps, source, library, options)) {
    metrics.push_back(ComputeEpisodeMetrics(r));
  }
  return Aggregate(metrics, std::string(VariantName(variant)));
}

const Summary& Metric(const AggregateReport& r, const char* name) { return r.metrics.at(name); }

std::string Show(const Summary& s) {
  return Fmt("%.4f±%.4f", s.mean, s.half_width.value_or(0.0));
}

// a >= b up to the combined half-widths.
bool AtLeastWithinCi(const Summary& a, const Summary& b) {
  return a.mean - b.mean >= -(*a.half_width + *b.half_width);
}

// a > b with the intervals apart.
bool AboveWithCi(const Summary& a, const Summary& b) {
  return a.mean - *a.half_width > b.mean + *b.half_width;
}

Outcome Exactness() {
  std::vector<std::string> misses;
  auto near = [&](const char* what, double got, double want) {
    if (!(std::abs(got - want) <= kExactTol)) misses.push_back(Fmt("%s=%.12g", what, got));
  };
  auto assign = [](int chosen) {
    AssignmentResult a;
    a.ground_truth = 0;
    a.chosen = chosen;
    return a;
  };
  const std::vector<AssignmentResult> sa = {assign(0), assign(0), assign(1), assign(0), assign(2)};
  near("SA", SupportAccuracy(sa), 0.6);
  std::vector<QueryPrediction> lsa;
  for (int i = 0; i < 15; ++i) lsa.push_back({"q", 0, i < 9 ? 1 : 0, 1, 0.0});
  near("LSA", LowshotAccuracy(lsa), 0.6);
  const double matched[] = {0.8};
  near("mIoU", MeanIou(matched, 2), 0.4);
  const double zeros[] = {0.0, 0.0};
  near("InfoNCE(0;0,0)", InfoNceLossFromSimilarities(0.0, zeros, 1.0), std::log(3.0));
  const double one_neg[] = {0.1};
  near("InfoNCE(.5;.1)", InfoNceLossFromSimilarities(0.5, one_neg, 1.0), 0.5130152524);
  const double far[] = {-1.0};
  const double tiny = InfoNceLossFromSimilarities(1.0, far, 0.07);
  if (!(tiny > 0.0 && tiny < kExactTol)) misses.push_back(Fmt("InfoNCE(1;-1)=%.3g", tiny));
  for (int n = 1; n <= 64; ++n) {
    std::vector<double> same(n, 0.2);
    near("InfoNCE(N)", InfoNceLossFromSimilarities(0.2, same, 0.07), std::log(n + 1.0));
  }
  const std::vector<std::uint8_t> a = {1, 1, 0, 1, 1, 0, 0, 0, 0};
  const std::vector<std::uint8_t> b = {0, 0, 0, 0, 1, 1, 0, 1, 1};
  near("IoU", MaskIou(InstanceMask::FromBitmap(0, 3, 3, a), InstanceMask::FromBitmap(1, 3, 3, b)),
       1.0 / 7.0);

  std::mt19937_64 gen(kSeed);
  int mismatches = 0;
  double hungarian_s = 0.0;
  for (int t = 0; t < kHungarianCases; ++t) {
    const int n = 1 + static_cast<int>(gen() % 6);
    const int m = 1 + static_cast<int>(gen() % 6);
    Eigen::MatrixXd cost(n, m);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        cost(i, j) = t % 2 ? static_cast<double>(gen() % 3)
                           : std::uniform_real_distribution<double>(0, 1)(gen);
      }
    }
    const auto start = Clock::now();
    const Assignment got = HungarianMatch(cost);
    hungarian_s += Seconds(start);
    const auto want = testing::BruteForceMatch(cost);
    if (got.pairs != want.pairs || std::abs(got.total_cost - want.total) > kExactTol) ++mismatches;
  }
  std::string detail = Fmt("%zu formula mismatches, %d/%d Hungarian mismatches, Hungarian %.3fs",
                           misses.size(), mismatches, kHungarianCases, hungarian_s);
  for (const auto& m : misses) detail += " " + m;
  return {misses.empty() && mismatches == 0 && hungarian_s < kHungarianBudgetS, detail};
}

}  // namespace

int main() {
  const CategorySplit split = LoadSplit(std::filesystem::path(LSME_DATA_DIR) / "splits" /
                                        "shapenet.json");
  std::optional<ScenePool> multi;

  Report("exactness", Exactness);

  Report("zero-noise", [&] {
    const auto start = Clock::now();
    multi.emplace(BuildScenePool(split, {true, true}, kPool, kSeed));
    const SyntheticSource source(Noise(0.0));
    const auto lib = BuildPoolLibrary(*multi, source, ViewsMode::kMean);
    const auto r = Evaluate(*multi, Variant::kLsme, kZeroNoiseEpisodes, source, lib);
    const double s = Seconds(start);
    const auto& sa = Metric(r, "sa");
    const auto& lsa = Metric(r, "lsa");
    return Outcome{sa.mean == 1.0 && lsa.mean == 1.0 && *sa.half_width == 0.0 &&
                       *lsa.half_width == 0.0 && s < kZeroNoiseBudgetS,
                   Fmt("LSME gt masks, %d episodes: SA=%.6f LSA=%.6f, %.1fs including pool build",
                       kZeroNoiseEpisodes, sa.mean, lsa.mean, s)};
  });
  if (!multi) multi.emplace(BuildScenePool(split, {true, true}, kPool, kSeed));

  Report("chance", [&] {
    const auto start = Clock::now();
    const RandomSource source(64, kSeed);
    const auto lib = BuildPoolLibrary(*multi, source, ViewsMode::kMean);
    const auto r = Evaluate(*multi, Variant::kCategMObjSuppAssign, kEpisodes, source, lib);
    const double s = Seconds(start);
    const double sa = Metric(r, "sa").mean;
    const double lsa = Metric(r, "lsa").mean;
    return Outcome{std::abs(sa - 1.0 / 3.0) <= kChanceSaTol &&
                       std::abs(lsa - 0.2) <= kChanceLsaTol && s < kChanceBudgetS,
                   Fmt("random embeddings, %d episodes: SA=%.4f (1/3±%.2f) LSA=%.4f (0.20±%.2f), %.1fs",
                       kEpisodes, sa, kChanceSaTol, lsa, kChanceLsaTol, s)};
  });

  const SyntheticSource noisy(Noise(1.0));
  const FeatureLibrary library = BuildPoolLibrary(*multi, noisy, ViewsMode::kMean);

  Report("variant-ordering", [&] {
    const auto mobj = Evaluate(*multi, Variant::kCategMObj, kEpisodes, noisy, library);
    const auto supp = Evaluate(*multi, Variant::kCategMObjSuppAssign, kEpisodes, noisy, library);
    const auto lsme = Evaluate(*multi, Variant::kLsme, kEpisodes, noisy, library, "ratio:0.2");
    const auto& a = Metric(mobj, "lsa");
    const auto& b = Metric(supp, "lsa");
    const auto& c = Metric(lsme, "lsa");
    return Outcome{AtLeastWithinCi(a, b) && AtLeastWithinCi(b, c),
                   "LSA Categ-MObj " + Show(a) + " >= SuppAssign " + Show(b) +
                       " >= LSME(rho=0.2) " + Show(c)};
  });

  Report("occlusion", [&] {
    const ScenePool single = BuildScenePool(split, {false, true}, {kPool.support, kPool.query, 0},
                                            kSeed);
    const auto posevar =
        Evaluate(single, Variant::kCategSObjPoseVar, kEpisodes, noisy, FeatureLibrary{});
    const auto mobj = Evaluate(*multi, Variant::kCategMObj, kEpisodes, noisy, library);
    const auto& a = Metric(posevar, "lsa");
    const auto& b = Metric(mobj, "lsa");
    return Outcome{AboveWithCi(a, b), "LSA Categ-SObj-PoseVar " + Show(a) + " > Categ-MObj " +
                                          Show(b) + Fmt(" (beta=%.1f)", noisy.params().beta)};
  });

  std::map<double, AggregateReport> sweep;
  Report("mask-ratio-sweep", [&] {
    const auto start = Clock::now();
    std::string detail;
    bool ok = true;
    const Summary* previous = nullptr;
    for (const double rho : {0.0, 0.1, 0.2, 0.3, 0.4, 0.5}) {
      std::ostringstream masks;
      masks << "ratio:" << rho;
      sweep[rho] = Evaluate(*multi, Variant::kLsme, kSweepEpisodes, noisy, library, masks.str());
      const Summary& cur = Metric(sweep[rho], "lsa");
      if (previous) ok &= AtLeastWithinCi(*previous, cur);
      detail += Fmt("rho=%.1f:", rho) + Show(cur) + " ";
      previous = &cur;
    }
    const double s = Seconds(start);
    return Outcome{ok && s < kSweepBudgetS,
                   Fmt("LSME LSA, %d episodes: ", kSweepEpisodes) + detail + Fmt("%.1fs", s)};
  });

  Report("segmentation-sensitivity", [&] {
    if (!sweep.contains(0.0) || !sweep.contains(0.3)) {
      sweep[0.0] = Evaluate(*multi, Variant::kLsme, kSweepEpisodes, noisy, library, "ratio:0");
      sweep[0.3] = Evaluate(*multi, Variant::kLsme, kSweepEpisodes, noisy, library, "ratio:0.3");
    }
    const auto& sa0 = Metric(sweep[0.0], "sa");
    const auto& sa3 = Metric(sweep[0.3], "sa");
    const auto& lsa0 = Metric(sweep[0.0], "lsa");
    const auto& lsa3 = Metric(sweep[0.3], "lsa");
    return Outcome{AboveWithCi(sa0, sa3) && AboveWithCi(lsa0, lsa3),
                   "LSME rho 0 -> 0.3: SA " + Show(sa0) + " -> " + Show(sa3) + ", LSA " +
                       Show(lsa0) + " -> " + Show(lsa3)};
  });

  Report("determinism", [&] {
    const auto root = testing::FreshDir("acceptance_det");
    WriteJsonFile(root / "split.json", SplitToJson(testing::MakeSplit(8, 8, 4)));
    const std::string splitf = (root / "split.json").string();
    auto commands = [&](const std::string& tag) {
      const std::string out = (root / tag).string();
      const std::vector<std::string> pool = {"--split", splitf, "--support-scenes", "60",
                                             "--query-scenes", "60", "--base-scenes", "40",
                                             "--resolution", "64", "--episodes", "20",
                                             "--seed", "3"};
      std::vector<std::vector<std::string>> cmds = {
          {"gen", "--split", splitf, "--role", "query", "--scenes", "8", "--seed", "3",
           "--out", out + "/gen"}};
      auto eval = std::vector<std::string>{"eval", "--variant", "all", "--masks", "ratio:0.2",
                                           "--out", out + "/eval"};
      eval.insert(eval.begin() + 1, pool.begin(), pool.end());
      auto sweep_cmd = std::vector<std::string>{"mask-sweep", "--ratios", "0,0.3",
                                                "--out", out + "/sweep"};
      sweep_cmd.insert(sweep_cmd.begin() + 1, pool.begin(), pool.end());
      cmds.push_back(eval);
      cmds.push_back(sweep_cmd);
      for (const auto& c : cmds) {
        std::ostringstream o, e;
        if (cli::Run(c, o, e) != cli::kExitOk) throw std::runtime_error(c[0] + ": " + e.str());
      }
      return testing::TreeHashes(root / tag);
    };
    const auto a = commands("a");
    const auto b = commands("b");
    return Outcome{a == b && !a.empty(),
                   Fmt("gen, eval and mask-sweep run twice: %zu files, %s", a.size(),
                       a == b ? "all byte-identical" : "outputs differ")};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
