// mv3d: generate data, train, evaluate and run the verification suites.
#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mv3d/binary_io.hpp"
#include "mv3d/checkpoint.hpp"
#include "mv3d/config.hpp"
#include "mv3d/corpus_io.hpp"
#include "mv3d/error.hpp"
#include "mv3d/eval.hpp"
#include "mv3d/gradcheck.hpp"
#include "mv3d/mi_oracle.hpp"

namespace fs = std::filesystem;
using namespace mv3d;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

// Usage and input problems map to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t env_threads() {
  const char* v = std::getenv("MV3D_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError(std::string("MV3D_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw UsageError("output directory " + dir.string() + " is not empty (pass --force to overwrite)");
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_input(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw UsageError(what + " " + path.string() + " does not exist");
  return read_file(path);
}

Dataset load_split(const fs::path& data_dir, const std::string& split) {
  return decode_dataset(read_input(data_dir / (split + ".mv3c"), split + " split"));
}

struct Loaded {
  RunConfig config;
  std::unique_ptr<Trainer> trainer;
};

Loaded load_checkpoint_file(const fs::path& path) {
  const auto bytes = read_input(path, "checkpoint");
  Loaded out;
  out.config = parse_run_config(peek_checkpoint(bytes).config_json);
  out.trainer = std::make_unique<Trainer>(out.config.model_config(), out.config.train_config());
  decode_checkpoint(bytes, out.trainer->state());
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const fs::path& config_path, const fs::path& out, bool force) {
  const auto cfg = load_run_config(config_path);
  prepare_out_dir(out, force);
  const auto splits = build_splits(cfg.world, cfg.data.n_train, cfg.data.n_test, env_threads());
  save_dataset(out / "train.mv3c", cfg.world, "train", splits.train);
  save_dataset(out / "test.mv3c", cfg.world, "test", splits.test);
  write_text(out / "config.json", to_json(cfg));
  std::printf("wrote %zu train and %zu test samples to %s\n", splits.train.size(), splits.test.size(),
              out.string().c_str());
  return kOk;
}

struct TrainArgs {
  fs::path config;
  fs::path data;
  fs::path out;
  std::string mode;
  fs::path resume;
  std::size_t stop_at = 0;
  std::size_t checkpoint_every = 0;
  bool force = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg;
  std::unique_ptr<Trainer> trainer;
  if (!a.resume.empty()) {
    auto loaded = load_checkpoint_file(a.resume);
    cfg = loaded.config;
    trainer = std::move(loaded.trainer);
    if (!a.mode.empty() && parse_loss_mode(a.mode) != cfg.train.mode)
      throw UsageError("--mode differs from the mode stored in the checkpoint");
  } else {
    if (a.config.empty()) throw UsageError("train needs --config or --resume");
    cfg = load_run_config(a.config);
    if (!a.mode.empty()) cfg.train.mode = parse_loss_mode(a.mode);
    trainer = std::make_unique<Trainer>(cfg.model_config(), cfg.train_config());
  }

  const auto train = load_split(a.data, "train");
  if (!(train.world == cfg.world)) throw ConfigError("data was generated with a different world config");
  trainer->check_compatible(train.samples);

  const auto start = trainer->state().step;
  if (a.resume.empty()) {
    prepare_out_dir(a.out, a.force);
  } else {
    fs::create_directories(a.out);
  }
  const auto echo = to_json(cfg);
  write_text(a.out / "config.json", echo);

  // Keep loss rows of steps before the resume point, drop anything later.
  std::vector<std::string> rows;
  const auto csv_path = a.out / "loss.csv";
  if (start > 0 && fs::exists(csv_path)) {
    std::ifstream in(csv_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line) && rows.size() < start) rows.push_back(line);
  }
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "step,global,local,multiscale,global_semantic,local_semantic,total,lr,tau\n";
  for (const auto& r : rows) csv << r << '\n';
  csv.precision(9);

  const std::size_t end = a.stop_at ? std::min(a.stop_at, cfg.train.steps) : cfg.train.steps;
  for (std::size_t step = start; step < end; ++step) {
    const double lr = lr_at(step, trainer->config());
    const auto b = trainer->step(train.samples);
    const double tau = trainer->state().model.temperature.value();
    csv << step << ',' << b.global << ',' << b.local << ',' << b.multiscale << ',' << b.global_semantic << ','
        << b.local_semantic << ',' << b.total << ',' << lr << ',' << tau << '\n';
    if (!std::isfinite(b.total)) throw NumericError("loss became non-finite at step " + std::to_string(step));
    if (step % 100 == 0 || step + 1 == end)
      std::printf("step %5zu  total %.4f  lr %.3g  tau %.4f\n", step, b.total, lr, tau);
    if (a.checkpoint_every && (step + 1) % a.checkpoint_every == 0 && step + 1 != end)
      save_checkpoint(a.out / ("checkpoint_" + std::to_string(step + 1) + ".mv3d"), trainer->state(), echo);
  }
  csv.close();
  save_checkpoint(a.out / "checkpoint.mv3d", trainer->state(), echo);
  std::printf("checkpoint at step %zu written to %s (bank filled %zu)\n", trainer->state().step,
              (a.out / "checkpoint.mv3d").string().c_str(), trainer->state().bank.filled());
  return kOk;
}

const std::vector<std::string> kTasks{"zero_shot_global", "zero_shot_local", "report_retrieval", "region_grounding"};

std::vector<std::string> parse_tasks(const std::string& spec) {
  if (spec == "all") return kTasks;
  std::vector<std::string> out;
  std::stringstream ss(spec);
  for (std::string t; std::getline(ss, t, ',');) {
    if (std::find(kTasks.begin(), kTasks.end(), t) == kTasks.end())
      throw UsageError("unknown task '" + t + "' (expected all or a comma list of zero_shot_global, "
                       "zero_shot_local, report_retrieval, region_grounding)");
    out.push_back(t);
  }
  return out;
}

std::vector<MetricReport> run_tasks(const Model<float>& model, const RunConfig& cfg, const Dataset& test,
                                    const std::vector<std::string>& tasks, LocalPathway pathway) {
  const ReportLanguage language(test.world);
  const auto emb = embed_test_set(model, test.samples, pathway, env_threads());
  std::vector<MetricReport> reports;
  for (const auto& t : tasks) {
    if (t == "zero_shot_global") reports.push_back(zero_shot_global(model, emb, test.samples, language));
    if (t == "zero_shot_local") reports.push_back(zero_shot_local(model, emb, test.samples, language));
    if (t == "report_retrieval") reports.push_back(report_retrieval(emb, cfg.eval.retrieval_ks));
    if (t == "region_grounding") reports.push_back(region_grounding(emb, test.samples, cfg.eval.grounding_ks));
  }
  for (const auto& r : reports)
    for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s: %s\n", r.task.c_str(), w.c_str());
  return reports;
}

std::string headline(const MetricReport& r) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed;
  if (!r.per_disease.empty()) {
    os << "auc " << (r.macro_auc ? *r.macro_auc : NAN) << "  acc " << r.balanced_accuracy << "  prec " << r.precision
       << "  f1 " << r.weighted_f1;
  }
  for (const auto& [k, v] : r.recall_at_k) os << "  @" << k << " " << v;
  return os.str();
}

int cmd_eval(const std::vector<fs::path>& checkpoints, const fs::path& data, const std::string& task_spec,
             const std::string& pathway_name, const fs::path& out) {
  const auto tasks = parse_tasks(task_spec);
  LocalPathway pathway = LocalPathway::region_tokens;
  if (pathway_name == "crop_pad") pathway = LocalPathway::crop_pad;
  else if (pathway_name != "region_tokens") throw UsageError("--pathway must be region_tokens or crop_pad");
  const auto test = load_split(data, "test");

  std::ostringstream table;
  table << "checkpoint,mode,task,metric,value\n";
  for (const auto& path : checkpoints) {
    const auto loaded = load_checkpoint_file(path);
    const auto& model = loaded.trainer->state().model;
    if (model.config.vision.volume_shape != test.world.volume_shape)
      throw ConfigError("checkpoint and test data disagree on the volume shape");
    const auto reports = run_tasks(model, loaded.config, test, tasks, pathway);
    const auto dir = out.empty() ? path.parent_path() : out;
    if (!dir.empty()) fs::create_directories(dir);
    const auto stem = checkpoints.size() > 1 && !out.empty() ? path.parent_path().filename().string() + "_" : "";
    write_text(dir / (stem + "metrics.csv"), metrics_csv(reports));
    write_text(dir / (stem + "metrics.json"), metrics_json(reports));
    const auto mode = to_string(loaded.config.train.mode);
    std::printf("%s (%s)\n", path.string().c_str(), mode.c_str());
    for (const auto& r : reports) {
      std::printf("  %-18s %s\n", r.task.c_str(), headline(r).c_str());
      if (r.macro_auc) table << path.string() << ',' << mode << ',' << r.task << ",macro_auc," << *r.macro_auc << '\n';
      for (const auto& [k, v] : r.recall_at_k)
        table << path.string() << ',' << mode << ',' << r.task << ",recall@" << k << ',' << v << '\n';
    }
  }
  if (checkpoints.size() > 1) {
    const auto dir = out.empty() ? fs::path(".") : out;
    write_text(dir / "comparison.csv", table.str());
    std::printf("comparison table written to %s\n", (dir / "comparison.csv").string().c_str());
  }
  return kOk;
}

int cmd_mi_check(std::size_t seeds, std::size_t train_batches, std::uint64_t seed) {
  bool ok = true;
  std::printf("%-28s %10s %10s %10s  %s\n", "case", "true_mi", "bound", "slack", "result");
  auto row = [&](const char* name, double mi, double bound, bool pass) {
    std::printf("%-28s %10.4f %10.4f %10.4f  %s\n", name, mi, bound, mi - bound, pass ? "pass" : "FAIL");
    ok = ok && pass;
  };

  const double log8 = std::log(8.0);
  double dep_min = INFINITY, dep_max = -INFINITY, ind_max = -INFINITY;
  bool ceiling_ok = true;
  for (std::size_t s = 0; s < seeds; ++s) {
    InfoNceSetup setup;
    setup.train_batches = train_batches;
    setup.seed = derive_seed(seed, 3, s);
    const auto dep = infonce_bound_check(DiscreteJoint::diagonal(8), setup);
    const std::vector<double> uniform(8, 1.0 / 8);
    const auto ind = infonce_bound_check(DiscreteJoint::product(uniform, uniform), setup);
    dep_min = std::min(dep_min, dep.bound);
    dep_max = std::max(dep_max, dep.bound);
    ind_max = std::max(ind_max, ind.bound);
    ceiling_ok = ceiling_ok && dep.bound <= dep.true_mi + 0.05 && dep.bound <= dep.log_n + 1e-6 &&
                 ind.bound <= ind.true_mi + 0.05 && ind.bound <= ind.log_n + 1e-6;
  }
  row("dependent K=8, N=8 (min)", log8, dep_min, dep_min >= log8 - 0.3 && dep_max <= log8 && ceiling_ok);
  row("independent K=8, N=8 (max)", 0.0, ind_max, ind_max < 0.1 && ceiling_ok);

  Rng rng(derive_seed(seed, 4));
  double worst = INFINITY;
  for (int i = 0; i < 200; ++i) {
    std::vector<std::size_t> alphabets(4);
    for (auto& a : alphabets) a = 2 + rng.below(5);
    worst = std::min(worst, chain_rule_check(DiscreteJoint::random(alphabets, rng)).margin);
  }
  std::printf("%-28s %10s %10s %10.2e  %s\n", "chain rule, 200 joints", "-", "-", worst, worst >= -1e-9 ? "pass" : "FAIL");
  ok = ok && worst >= -1e-9;
  std::printf("i.i.d. batch ceiling for the dependent case: %.4f nats\n", diagonal_bound_ceiling(8, 8));
  return ok ? kOk : kFailed;
}

int cmd_grad_check(std::uint64_t seed, std::size_t repeats, double tol) {
  const auto results = gradcheck_suite(seed, repeats);
  std::map<std::string, std::pair<double, std::size_t>> worst;
  for (const auto& r : results) {
    auto& w = worst[r.name];
    w.first = std::max(w.first, r.rel_error);
    ++w.second;
  }
  bool ok = true;
  for (const auto& [name, w] : worst) {
    const bool pass = w.first < tol;
    ok = ok && pass;
    std::printf("%-22s %3zu instances  max rel err %.3e  %s\n", name.c_str(), w.second, w.first, pass ? "pass" : "FAIL");
  }
  std::printf("%zu instances, %s\n", results.size(), ok ? "all passed" : "FAILURES");
  return ok ? kOk : kFailed;
}

int cmd_attn_export(const fs::path& checkpoint, const fs::path& data, std::size_t index, int region,
                    const fs::path& out) {
  const auto loaded = load_checkpoint_file(checkpoint);
  const auto test = load_split(data, "test");
  if (index >= test.samples.size()) throw UsageError("--index is past the end of the test split");
  const auto& sample = test.samples[index];
  const RegionMask* mask = nullptr;
  if (region >= 0) {
    if (static_cast<std::size_t>(region) >= sample.masks.size()) throw UsageError("--region out of range");
    mask = &sample.masks[static_cast<std::size_t>(region)];
  }
  const auto grid = attention_export(loaded.trainer->state().model, sample.volume, mask);
  write_file(out, encode_attention(grid));
  const auto check = decode_attention(read_file(out));
  if (!(check == grid)) {
    std::fprintf(stderr, "attention file did not round-trip\n");
    return kFailed;
  }
  double total = 0;
  for (float v : grid.values) total += v;
  std::printf("wrote %zux%zux%zu grid to %s (mass %.4f)\n", grid.grid[0], grid.grid[1], grid.grid[2],
              out.string().c_str(), total);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale volume/report alignment: data, training, evaluation and checks"};
  app.require_subcommand(1);

  fs::path config, out, data;
  bool force = false;
  auto* gen = app.add_subcommand("gen-data", "Generate train/test splits of the synthetic corpus");
  gen->add_option("--config", config, "Run config (JSON)")->required();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_flag("--force", force, "Write into a non-empty output directory");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", ta.config, "Run config (JSON)");
  train->add_option("--data", ta.data, "Directory written by gen-data")->required();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--mode", ta.mode, "global_only | local_only | multiscale | multiscale_semantic");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint");
  train->add_option("--stop-at", ta.stop_at, "Stop after this many total steps");
  train->add_option("--checkpoint-every", ta.checkpoint_every, "Also save a checkpoint every K steps");
  train->add_flag("--force", ta.force, "Write into a non-empty output directory");

  std::vector<fs::path> checkpoints;
  std::string tasks = "all", pathway = "region_tokens";
  fs::path eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate one or more checkpoints on the test split");
  eval->add_option("--checkpoint", checkpoints, "Checkpoint file (repeat to compare)")->required();
  eval->add_option("--data", data, "Directory written by gen-data")->required();
  eval->add_option("--tasks", tasks, "all or a comma list of tasks");
  eval->add_option("--pathway", pathway, "Local pathway: region_tokens | crop_pad");
  eval->add_option("--out", eval_out, "Directory for metrics (default: next to each checkpoint)");

  std::size_t mi_seeds = 5, mi_batches = 10000;
  std::uint64_t seed = 0;
  auto* mi = app.add_subcommand("mi-check", "InfoNCE bound and chain-rule checks on discrete joints");
  mi->add_option("--seeds", mi_seeds, "Training seeds per toy");
  mi->add_option("--train-batches", mi_batches, "Training batches per run");
  mi->add_option("--seed", seed, "Base seed");

  std::size_t repeats = 4;
  double tol = 1e-5;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of every differentiable op");
  grad->add_option("--seed", seed, "Base seed");
  grad->add_option("--repeats", repeats, "Randomized instances per op");
  grad->add_option("--tol", tol, "Maximum relative error");

  fs::path attn_ckpt, attn_out;
  std::size_t index = 0;
  int region = -1;
  auto* attn = app.add_subcommand("attn-export", "Write the [CLS] attention grid of a test volume");
  attn->add_option("--checkpoint", attn_ckpt, "Checkpoint file")->required();
  attn->add_option("--data", data, "Directory written by gen-data")->required();
  attn->add_option("--index", index, "Test sample index");
  attn->add_option("--region", region, "Restrict to this region's tokens");
  attn->add_option("--out", attn_out, "Output .mv3a file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(config, out, force);
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(checkpoints, data, tasks, pathway, eval_out);
    if (*mi) return cmd_mi_check(mi_seeds, mi_batches, seed);
    if (*grad) return cmd_grad_check(seed, repeats, tol);
    if (*attn) return cmd_attn_export(attn_ckpt, data, index, region, attn_out);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailed;
  }
  return kUsage;
}
