// Copyright 2026 The sparsemarg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// sparsemarg: property checks, micro-benchmarks and toy training runs.
//
// Exit codes: 0 success, 1 property failure or runtime error, 2 usage error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <locale>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sparsemarg.hpp"
#include "sparsemarg/testing/properties.hpp"

namespace {

using namespace sparsemarg;
using json = nlohmann::ordered_json;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Writes to a temporary sibling, then renames over the target.
void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

struct Manifest {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::string started_at;
  std::vector<std::string> outputs;

  void write_for(const std::string& out_path) const {
    json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["version"] = kVersion;
    j["started_at"] = started_at;
    j["finished_at"] = utc_now();
    j["outputs"] = outputs;
    write_atomic(out_path + ".manifest.json", j.dump(2) + "\n");
  }
};

/// Sends `content` to stdout when path is "-", else to the file plus its
/// manifest.
void emit(const std::string& path, const std::string& content, Manifest manifest) {
  if (path == "-") {
    std::cout << content;
    return;
  }
  write_atomic(path, content);
  manifest.outputs = {path};
  manifest.write_for(path);
}

std::string joined_argv(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i) out += ' ';
    out += argv[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// check

struct CheckArgs {
  std::string suite;
  std::size_t trials = 1000;
  std::uint64_t seed = 0;
  std::string out = "-";
};

int cmd_check(const CheckArgs& a, Manifest manifest) {
  const auto& names = testing::suite_names();
  if (std::find(names.begin(), names.end(), a.suite) == names.end()) {
    std::cerr << "unknown suite '" << a.suite << "'\n";
    return kUsage;
  }
  if (a.trials == 0) {
    std::cerr << "--trials must be positive\n";
    return kUsage;
  }
  const auto results = testing::run_suite(a.suite, a.trials, a.seed);
  std::ostringstream report;
  report.imbue(std::locale::classic());
  report << "suite " << a.suite << " trials " << a.trials << " seed " << a.seed << '\n';
  bool all_ok = true;
  for (const auto& r : results) {
    all_ok = all_ok && r.ok();
    report << std::left << std::setw(42) << r.name << ' ' << r.passed << '/' << r.checked << " (drawn "
           << r.trials << ") worst " << std::setprecision(3) << std::scientific << r.worst << " tol " << r.tolerance
           << std::defaultfloat << "  " << (r.ok() ? "PASS" : "FAIL") << '\n';
  }
  manifest.config = {{"suite", a.suite}, {"trials", a.trials}};
  emit(a.out, report.str(), manifest);
  if (a.out != "-") std::cout << report.str();
  return all_ok ? kOk : kFailure;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string op;
  std::vector<std::size_t> sizes;
  std::size_t trials = 50;
  std::uint64_t seed = 0;
  std::string out = "-";
};

const std::vector<std::string> kBenchOps{"sparsemax", "topk_sparsemax", "sparsemap", "sparsemap_budget", "kbest",
                                         "budget_oracle"};

int cmd_bench(const BenchArgs& a, Manifest manifest) {
  if (std::find(kBenchOps.begin(), kBenchOps.end(), a.op) == kBenchOps.end()) {
    std::cerr << "unknown op '" << a.op << "'\n";
    return kUsage;
  }
  if (a.sizes.empty() || a.trials == 0) {
    std::cerr << "--sizes must list at least one size and --trials must be positive\n";
    return kUsage;
  }
  const bool iterative = a.op == "sparsemap" || a.op == "sparsemap_budget";
  for (std::size_t n : a.sizes) {
    if (n == 0 || (a.op == "sparsemax" || a.op == "topk_sparsemax" ? n > (std::size_t{1} << 26) : n > 4096)) {
      std::cerr << "invalid size " << n << " for " << a.op << '\n';
      return kUsage;
    }
  }

  std::ostringstream csv;
  csv.imbue(std::locale::classic());
  csv << "op,size,median_ns,p90_ns" << (iterative ? ",mean_iterations" : "") << '\n';
  for (std::size_t n : a.sizes) {
    CounterRng rng(a.seed, n);
    std::vector<double> times;
    double iterations = 0.0;
    double sink = 0.0;
    const std::size_t warmup = std::max<std::size_t>(1, a.trials / 10);
    for (std::size_t rep = 0; rep < warmup + a.trials; ++rep) {
      const auto s = testing::random_vector(rng, n);
      const auto t0 = std::chrono::steady_clock::now();
      if (a.op == "sparsemax") {
        sink += sparsemax(s).threshold;
      } else if (a.op == "topk_sparsemax") {
        sink += topk_sparsemax(s, std::max<std::size_t>(1, n / 10)).distribution.threshold;
      } else if (a.op == "sparsemap") {
        const auto r = sparsemap(BitVectorPolytope(n), s);
        if (rep >= warmup) iterations += static_cast<double>(r.iterations);
      } else if (a.op == "sparsemap_budget") {
        const auto r = sparsemap(BudgetPolytope(n, std::max<std::size_t>(1, n / 2)), s);
        if (rep >= warmup) iterations += static_cast<double>(r.iterations);
      } else if (a.op == "kbest") {
        sink += kbest(s, 32).back().score;
      } else {
        sink += budget_map_oracle(s, std::max<std::size_t>(1, n / 2)).score;
      }
      const auto t1 = std::chrono::steady_clock::now();
      if (rep >= warmup) times.push_back(static_cast<double>(std::chrono::nanoseconds(t1 - t0).count()));
    }
    csv << a.op << ',' << n << ',' << static_cast<long long>(quantile(times, 0.5)) << ','
        << static_cast<long long>(quantile(times, 0.9));
    if (iterative) csv << ',' << std::setprecision(6) << iterations / static_cast<double>(a.trials);
    csv << '\n';
    if (!std::isfinite(sink)) std::cerr << "non-finite result in " << a.op << '\n';
  }
  manifest.config = {{"op", a.op}, {"sizes", a.sizes}, {"trials", a.trials}};
  emit(a.out, csv.str(), manifest);
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string task;
  std::string method = "sparse";
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  std::string out;
  std::size_t k = 0;
  std::size_t budget = 0;
  std::size_t d = 8;
  std::size_t examples = 0;
  double lr = 0.0;
  std::size_t batch_size = 16;
  double entropy_coef = 0.05;
  double baseline_decay = 0.9;
};

int cmd_train(TrainArgs a, Manifest manifest) {
  toy::TrainConfig cfg;
  try {
    cfg.method = toy::parse_method(a.method);
  } catch (const InvalidInput& e) {
    std::cerr << e.what() << '\n';
    return kUsage;
  }
  const bool categorical = a.task == "categorical";
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.batch_size = a.batch_size;
  cfg.entropy_coef = a.entropy_coef;
  cfg.baseline_decay = a.baseline_decay;
  cfg.learning_rate = a.lr > 0.0 ? a.lr : (categorical ? 1.0 : 0.1);
  cfg.k = a.k ? a.k : (cfg.method == toy::Method::topk ? 32 : 1);
  cfg.budget = a.budget ? a.budget : std::max<std::size_t>(1, a.d / 2);
  const std::size_t n = a.examples ? a.examples : (categorical ? 4096 : 512);
  if (a.out.empty()) a.out = a.task + "_" + a.method + "_seed" + std::to_string(a.seed) + ".csv";

  constexpr std::size_t kClasses = 16, kFeatures = 64, kPixels = 36;
  const std::size_t latent = categorical ? kClasses : a.d;
  try {
    toy::validate_config(a.task, cfg, latent);
  } catch (const InvalidInput& e) {
    std::cerr << e.what() << '\n';
    return kUsage;
  }

  toy::TrainingLog log;
  try {
    if (categorical) {
      const auto data = toy::make_categorical_data(n, a.seed, kClasses, kFeatures);
      auto model = toy::ToyCategoricalModel::init(kClasses, kFeatures, kClasses, a.seed);
      log = toy::train_categorical(model, data, cfg);
    } else {
      const auto data = toy::make_bitvec_data(n, a.d, a.seed, kPixels);
      auto model = toy::ToyBitVectorVAE::init(a.d, kPixels, a.seed);
      log = toy::train_bitvec_vae(model, data, cfg);
    }
  } catch (const toy::TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << " after " << e.log().epochs.size() << " epochs\n";
    return kFailure;
  }

  std::ostringstream csv;
  toy::write_csv(log, csv);
  manifest.config = {{"task", a.task},
                     {"method", toy::to_string(cfg.method)},
                     {"epochs", cfg.epochs},
                     {"learning_rate", cfg.learning_rate},
                     {"batch_size", cfg.batch_size},
                     {"examples", n},
                     {"latent_dim", latent},
                     {"k", cfg.k},
                     {"budget", cfg.budget},
                     {"entropy_coef", categorical ? cfg.entropy_coef : 1.0},
                     {"baseline_decay", cfg.baseline_decay},
                     {"initial_loss", log.initial_loss}};
  emit(a.out, csv.str(), manifest);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse marginalization of discrete latent variables: checks, benchmarks, toy training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  CheckArgs check;
  auto* c = app.add_subcommand("check", "run a randomized property suite");
  c->add_option("suite", check.suite, "simplex | topk | bitvec | sparsemap | marginal | estimators")->required();
  c->add_option("--trials", check.trials, "random instances per property");
  c->add_option("--seed", check.seed, "seed");
  c->add_option("--out", check.out, "report path, - for stdout");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "wall-clock micro-benchmark, CSV output");
  b->add_option("op", bench.op, "sparsemax | topk_sparsemax | sparsemap | sparsemap_budget | kbest | budget_oracle")
      ->required();
  b->add_option("--sizes", bench.sizes, "comma-separated problem sizes")->delimiter(',')->required();
  b->add_option("--trials", bench.trials, "timed repetitions per size");
  b->add_option("--seed", bench.seed, "seed");
  b->add_option("--out", bench.out, "CSV path, - for stdout");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a toy model, one CSV row per epoch");
  t->add_option("task", train.task, "categorical | bitvec")
      ->required()
      ->check(CLI::IsMember({"categorical", "bitvec"}));
  t->add_option("--method", train.method, "dense | sparse | topk | sparsemap | sparsemap_budget | sfe | sum_and_sample");
  t->add_option("--epochs", train.epochs, "epochs");
  t->add_option("--seed", train.seed, "seed for data, initialization and sampling");
  t->add_option("--out", train.out, "CSV path (default <task>_<method>_seed<seed>.csv), - for stdout");
  t->add_option("--k", train.k, "k for topk (default 32) and sum_and_sample (default 1)");
  t->add_option("--budget", train.budget, "active-bit budget for sparsemap_budget (default d/2)");
  t->add_option("--d", train.d, "latent bits for the bitvec task");
  t->add_option("--examples", train.examples, "training set size (default 4096 categorical, 512 bitvec)");
  t->add_option("--lr", train.lr, "learning rate (default 1.0 categorical, 0.1 bitvec)");
  t->add_option("--batch-size", train.batch_size, "batch size");
  t->add_option("--entropy-coef", train.entropy_coef, "entropy bonus for the categorical task");
  t->add_option("--baseline-decay", train.baseline_decay, "moving-average baseline decay for sfe");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  Manifest manifest;
  manifest.command = joined_argv(argc, argv);
  manifest.started_at = utc_now();
  try {
    if (*c) {
      manifest.seed = check.seed;
      return cmd_check(check, manifest);
    }
    if (*b) {
      manifest.seed = bench.seed;
      return cmd_bench(bench, manifest);
    }
    manifest.seed = train.seed;
    return cmd_train(train, manifest);
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
