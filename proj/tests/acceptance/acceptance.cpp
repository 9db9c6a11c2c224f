// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and a
// summary line; exits 1 if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <future>
#include <map>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "fixtures.hpp"
#include "mv3d/bank.hpp"
#include "mv3d/checkpoint.hpp"
#include "mv3d/config.hpp"
#include "mv3d/eval.hpp"
#include "mv3d/gradcheck.hpp"
#include "mv3d/losses.hpp"
#include "mv3d/metrics.hpp"
#include "mv3d/mi_oracle.hpp"
#include "mv3d/trainer.hpp"
#include "oracles.hpp"

using namespace mv3d;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict gradients() {
  const auto t0 = Clock::now();
  const auto results = gradcheck_suite(20240601, 4);
  double worst = 0;
  std::string worst_name;
  for (const auto& r : results)
    if (r.rel_error > worst) worst = r.rel_error, worst_name = r.name;
  const double secs = seconds_since(t0);
  const bool pass = results.size() >= 100 && worst < 1e-5 && secs < 120;
  return {pass, fmt("%zu instances, max rel err %.2e (%s), %.1f s", results.size(), worst, worst_name.c_str(), secs)};
}

// ---------------------------------------------------------------------------

Var<double> as_var(Tape<double>& tape, const oracle::Mat& m) {
  std::vector<double> flat;
  for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
  return tape.constant({m.size(), m[0].size()}, std::move(flat));
}

Verdict loss_oracles() {
  std::mt19937_64 gen(99);
  double worst = 0;
  const int trials = 500;
  for (int t = 0; t < trials; ++t) {
    const std::size_t n = 1 + gen() % 8, regions = 1 + gen() % 4, d = 2 + gen() % 7;
    const double tau = 0.01 + 0.99 * std::uniform_real_distribution<double>()(gen);
    auto img = fixture::random_unit_rows(n, d, gen), txt = fixture::random_unit_rows(n, d, gen),
         ret = fixture::random_unit_rows(n, d, gen);
    auto rimg = fixture::random_unit_rows(n * regions, d, gen), rtxt = fixture::random_unit_rows(n * regions, d, gen),
         rret = fixture::random_unit_rows(n * regions, d, gen);
    std::vector<std::uint8_t> valid(n * regions);
    for (auto& v : valid) v = gen() % 4 != 0;
    valid[gen() % valid.size()] = 1;

    Tape<double> tape;
    auto tv = tape.constant({}, {tau});
    auto g = global_loss(as_var(tape, img), as_var(tape, txt), tv);
    auto l = local_loss(as_var(tape, rimg), as_var(tape, rtxt), valid, regions, tv);
    auto gs = global_semantic_loss(as_var(tape, img), as_var(tape, ret), tv);
    auto ls = local_semantic_loss(as_var(tape, rimg), as_var(tape, rret), valid, regions, tv);
    LossBundle bundle;
    auto total = combined_loss(ObjectiveTerms<double>{g, l, gs, ls}, bundle);

    const double og = oracle::global_loss(img, txt, tau), ol = oracle::local_loss(rimg, rtxt, valid, regions, tau),
                 ogs = oracle::global_semantic_loss(img, ret, tau),
                 ols = oracle::local_semantic_loss(rimg, rret, valid, regions, tau);
    for (auto [got, want] : {std::pair{g.item(), og}, {l.item(), ol}, {multiscale_loss(g, l).item(), 0.5 * (og + ol)},
                             {gs.item(), ogs}, {ls.item(), ols}, {total.item(), oracle::combined(og, ol, ogs, ols)}})
      worst = std::max(worst, std::abs(got - want));
  }

  // Exact identities.
  double identity_err = 0;
  for (std::size_t n = 1; n <= 8; ++n) {
    oracle::Mat same(n, std::vector<double>{0.0, 0.6, 0.8});
    Tape<double> tape;
    auto x = as_var(tape, same);
    auto tv = tape.constant({}, {0.07});
    const double logn = std::log(static_cast<double>(n));
    identity_err = std::max(identity_err, std::abs(global_loss(x, x, tv).item() - logn));
    identity_err = std::max(identity_err, std::abs(global_semantic_loss(x, x, tv).item() - 2 * logn));
  }
  std::mt19937_64 g1(5);
  auto a = fixture::random_unit_rows(1, 4, g1), b = fixture::random_unit_rows(1, 4, g1);
  Tape<double> tape;
  auto tv = tape.constant({}, {0.07});
  identity_err = std::max(identity_err, std::abs(global_loss(as_var(tape, a), as_var(tape, b), tv).item()));
  identity_err = std::max(identity_err, std::abs(global_semantic_loss(as_var(tape, a), as_var(tape, b), tv).item()));

  return {worst < 1e-6 && identity_err < 1e-6,
          fmt("%d random batches, max |lib - oracle| %.2e; identities max err %.2e", trials, worst, identity_err)};
}

// ---------------------------------------------------------------------------

Verdict mi_bounds() {
  const auto t0 = Clock::now();
  const double log8 = std::log(8.0);
  bool in_range = true, below_mi = true;
  std::string bounds;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    InfoNceSetup setup;
    setup.seed = seed;
    auto r = infonce_bound_check(DiscreteJoint::diagonal(8), setup);
    in_range &= r.bound >= log8 - 0.3 && r.bound <= log8;
    below_mi &= r.bound <= r.true_mi + 0.05;
    bounds += fmt("%s%.3f", bounds.empty() ? "" : " ", r.bound);
  }
  double worst_independent = -1e9;
  Rng rng(77);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    InfoNceSetup setup;
    setup.seed = seed;
    std::vector<double> pa(8), pb(8);
    double sa = 0, sb = 0;
    for (auto& x : pa) x = 0.2 + rng.uniform(), sa += x;
    for (auto& x : pb) x = 0.2 + rng.uniform(), sb += x;
    for (auto& x : pa) x /= sa;
    for (auto& x : pb) x /= sb;
    worst_independent = std::max(worst_independent, infonce_bound_check(DiscreteJoint::product(pa, pb), setup).bound);
  }
  const double secs = seconds_since(t0);
  const bool pass = in_range && below_mi && worst_independent < 0.1 && secs < 300;
  return {pass, fmt("dependent K=8 N=8 bounds [%s] vs target [%.3f, %.3f] (%s), <= I + 0.05 (%s); "
                    "iid-batch ceiling %.3f; independent max %.3f; %.0f s",
                    bounds.c_str(), log8 - 0.3, log8, in_range ? "ok" : "miss", below_mi ? "ok" : "miss",
                    diagonal_bound_ceiling(8, 8), worst_independent, secs)};
}

// ---------------------------------------------------------------------------

Verdict chain_rule() {
  const auto t0 = Clock::now();
  Rng rng(2718);
  double worst = 1e9;
  int held = 0;
  for (int t = 0; t < 200; ++t) {
    std::vector<std::size_t> alph(4);
    for (auto& a : alph) a = 1 + rng.below(6);
    auto r = chain_rule_check(DiscreteJoint::random(alph, rng, 0.3 + rng.uniform()));
    worst = std::min(worst, r.margin);
    held += r.margin >= -1e-9;
  }
  const double secs = seconds_since(t0);
  return {held == 200 && secs < 60, fmt("%d/200 joints, min margin %.3e nats, %.2f s", held, worst, secs)};
}

// ---------------------------------------------------------------------------

struct RunResult {
  LossMode mode{};
  double global_auc = 0, local_auc = 0, recall5 = 0, grounding10 = 0;
  double seconds = 0;
  AttentionStat attention;
};

RunConfig ablation_config() {
  // Defaults: 1000/200 split, 2000 steps, batch 16, peak lr 5e-5, warmup 200.
  RunConfig cfg;
  cfg.data = {1000, 200};
  cfg.train.steps = 2000;
  cfg.train.batch_size = 16;
  return cfg;
}

RunResult train_and_evaluate(const RunConfig& base, LossMode mode, const Splits& splits) {
  auto cfg = base;
  cfg.train.mode = mode;
  const auto t0 = Clock::now();
  Trainer trainer(cfg.model_config(), cfg.train_config());
  for (std::size_t s = 0; s < cfg.train.steps; ++s) trainer.step(splits.train);
  const auto& model = trainer.state().model;
  ReportLanguage lang(cfg.world);
  auto emb = embed_test_set(model, splits.test);
  std::vector<std::size_t> k5{5}, k10{10};
  RunResult r;
  r.mode = mode;
  r.global_auc = zero_shot_global(model, emb, splits.test, lang).macro_auc.value_or(0);
  r.local_auc = zero_shot_local(model, emb, splits.test, lang).macro_auc.value_or(0);
  r.recall5 = report_retrieval(emb, k5).recall_at_k.at(5);
  r.grounding10 = region_grounding(emb, splits.test, k10).recall_at_k.at(10);
  if (mode == LossMode::multiscale_semantic) r.attention = anomaly_attention(model, splits.test);
  r.seconds = seconds_since(t0);
  std::printf("  run %-20s %6.0f s  global AUC %.3f  local AUC %.3f  R@5 %.3f  grounding@10 %.3f\n",
              to_string(mode).c_str(), r.seconds, r.global_auc, r.local_auc, r.recall5, r.grounding10);
  std::fflush(stdout);
  return r;
}

std::map<LossMode, RunResult> ablation_runs(std::size_t threads) {
  const auto cfg = ablation_config();
  const auto splits = build_splits(cfg.world, cfg.data.n_train, cfg.data.n_test, threads);
  const std::vector<LossMode> modes{LossMode::multiscale_semantic, LossMode::global_only, LossMode::local_only,
                                    LossMode::multiscale};
  std::map<LossMode, RunResult> out;
  if (threads >= 4) {
    std::vector<std::future<RunResult>> jobs;
    for (auto m : modes) jobs.push_back(std::async(std::launch::async, train_and_evaluate, cfg, m, std::cref(splits)));
    for (auto& j : jobs) {
      auto r = j.get();
      out[r.mode] = r;
    }
  } else {
    for (auto m : modes) out[m] = train_and_evaluate(cfg, m, splits);
  }
  return out;
}

Verdict ablation(const std::map<LossMode, RunResult>& runs, double wall) {
  const auto& ms = runs.at(LossMode::multiscale_semantic);
  const auto& g = runs.at(LossMode::global_only);
  const auto& l = runs.at(LossMode::local_only);
  const auto& m = runs.at(LossMode::multiscale);
  const bool a = ms.local_auc >= g.local_auc + 0.05 && ms.local_auc >= l.local_auc - 0.02;
  const bool b = ms.recall5 >= l.recall5 + 0.05 && ms.recall5 >= g.recall5 - 0.02;
  const bool c = ms.global_auc >= m.global_auc + 0.02;
  const bool d = ms.grounding10 > g.grounding10;
  const bool fast = wall < 1200;
  auto mark = [](bool ok) { return ok ? "ok" : "miss"; };
  return {a && b && c && d && fast,
          fmt("(a) local AUC %.3f vs global_only %.3f / local_only %.3f %s; (b) R@5 %.3f vs local_only %.3f / "
              "global_only %.3f %s; (c) global AUC %.3f vs multiscale %.3f %s; (d) grounding@10 %.3f vs "
              "global_only %.3f %s; %.0f s",
              ms.local_auc, g.local_auc, l.local_auc, mark(a), ms.recall5, l.recall5, g.recall5, mark(b),
              ms.global_auc, m.global_auc, mark(c), ms.grounding10, g.grounding10, mark(d), wall)};
}

// ---------------------------------------------------------------------------

std::vector<std::vector<float>> unit_rows_f(std::size_t n, std::size_t d, std::mt19937_64& gen) {
  std::vector<std::vector<float>> out;
  for (const auto& r : fixture::random_unit_rows(n, d, gen)) out.emplace_back(r.begin(), r.end());
  return out;
}

std::vector<float> flatten(const std::vector<std::vector<float>>& rows) {
  std::vector<float> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

Verdict bank_exactness() {
  std::mt19937_64 gen(31337);
  int configs = 0, mismatches = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t S = 1 + gen() % 64, d = 1 + gen() % 8;
    SemanticBank bank(S, d);
    oracle::Queue queue(S, d);
    const int updates = 1 + static_cast<int>(gen() % 40);
    for (int u = 0; u < updates; ++u) {
      auto rows = unit_rows_f(1 + gen() % (S + 8), d, gen);
      bank.enqueue(flatten(rows));
      queue.update(rows);
      const auto expected = flatten(queue.rows);
      if (bank.ptr() != queue.ptr || bank.filled() != queue.filled ||
          std::memcmp(bank.storage().data(), expected.data(), expected.size() * sizeof(float)) != 0)
        ++mismatches;
    }
    ++configs;
  }

  // S = 8, ptr = 6, B = 4.
  SemanticBank bank(8, 2);
  bank.enqueue(flatten(unit_rows_f(6, 2, gen)));
  auto tail = unit_rows_f(4, 2, gen);
  const auto written = bank.enqueue(flatten(tail));
  const bool tail_case = written == 2 && bank.ptr() == 0 && bank.row(6)[0] == tail[0][0] &&
                         bank.row(7)[1] == tail[1][1];

  SemanticBank big(256, 16);
  auto stored = unit_rows_f(200, 16, gen);
  big.enqueue(flatten(stored));
  int wrong = 0;
  for (int q = 0; q < 1000; ++q) {
    auto query = unit_rows_f(1, 16, gen)[0];
    std::vector<std::pair<double, std::size_t>> scan;
    for (std::size_t s = 0; s < stored.size(); ++s) {
      double dot = 0;
      for (std::size_t c = 0; c < 16; ++c) dot += double(query[c]) * stored[s][c];
      scan.emplace_back(-dot, s);
    }
    std::sort(scan.begin(), scan.end());
    const auto top = big.query_top1(query);
    const auto topk = big.query_topk(query, 8);
    bool ok = top.index == scan[0].second && topk.size() == 8;
    for (std::size_t i = 0; ok && i < 8; ++i) ok = topk[i].index == scan[i].second;
    wrong += !ok;
  }
  return {mismatches == 0 && tail_case && wrong == 0,
          fmt("%d random configs, %d state mismatches; tail case %s; retrieval %d/1000 queries differ from scan",
              configs, mismatches, tail_case ? "ok" : "wrong", wrong)};
}

// ---------------------------------------------------------------------------

Verdict pathway_sharing() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ModelConfig cfg;
    cfg.seed = derive_seed(seed, 7);
    Model<float> model(cfg);
    Rng rng(seed);
    Volume v(cfg.vision.volume_shape);
    for (auto& x : v.voxels) x = static_cast<float>(rng.normal());
    RegionMask all(0, cfg.vision.volume_shape);
    std::fill(all.voxels.begin(), all.voxels.end(), 1);
    auto g = model.vision.encode_global(v);
    auto r = model.vision.encode_region(v, all);
    for (std::size_t i = 0; i < g.numel(); ++i) worst = std::max(worst, double(std::abs(g[i] - r[i])));
  }
  return {worst <= 1e-5, fmt("50 initializations, max L-inf %.2e", worst)};
}

// ---------------------------------------------------------------------------

Verdict metric_oracles(std::size_t threads) {
  std::mt19937_64 gen(4242);
  double worst = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + gen() % 200;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = (gen() % 3 == 0) ? double(gen() % 5) : double(gen() % 10000) / 7.0;
    for (auto& v : y) v = gen() % 2;
    y[0] = 1, y[1] = 0;
    worst = std::max(worst, std::abs(*auc(s, y) - oracle::pairwise_auc(s, y)));
  }
  bool monotone = true;
  for (int t = 0; t < 100; ++t) {
    std::vector<std::size_t> ranks(50);
    for (auto& r : ranks) r = gen() % 60;
    for (std::size_t k = 1; k <= 60; ++k) monotone &= recall_at_k(ranks, k) >= recall_at_k(ranks, k - 1 + (k == 1));
  }

  RunConfig cfg;
  cfg.seed = 3;
  const auto test = generate_split(cfg.world, kTestStream, 500, threads);
  Model<float> model(cfg.model_config());
  ReportLanguage lang(cfg.world);
  auto emb = embed_test_set(model, test, LocalPathway::region_tokens, threads);
  const double g = zero_shot_global(model, emb, test, lang).macro_auc.value_or(-1);
  const double l = zero_shot_local(model, emb, test, lang).macro_auc.value_or(-1);
  const bool chance = g >= 0.45 && g <= 0.55 && l >= 0.45 && l <= 0.55;
  return {worst < 1e-9 && monotone && chance,
          fmt("AUC vs pairwise max err %.2e; recall@K monotone %s; untrained macro AUC global %.3f local %.3f "
              "on 500 samples",
              worst, monotone ? "yes" : "no", g, l)};
}

// ---------------------------------------------------------------------------

Verdict determinism() {
  RunConfig cfg;
  cfg.seed = 11;
  cfg.train.steps = 20;
  cfg.train.warmup_steps = 5;
  cfg.train.lr = 5e-4;
  const auto train = generate_split(cfg.world, kTrainStream, 64);
  auto run = [&](Trainer& t, std::size_t from, std::size_t to, std::vector<LossBundle>& out) {
    for (std::size_t s = from; s < to; ++s) out.push_back(t.step(train));
  };
  std::vector<LossBundle> a, b;
  Trainer ta(cfg.model_config(), cfg.train_config()), tb(cfg.model_config(), cfg.train_config());
  run(ta, 0, 20, a);
  run(tb, 0, 20, b);
  const auto final_bytes = encode_checkpoint(ta.state(), "");
  const bool repeat = a == b && encode_checkpoint(tb.state(), "") == final_bytes;

  bool resume = true;
  std::string ks;
  for (std::size_t k : {1u, 7u, 13u, 19u}) {
    Trainer first(cfg.model_config(), cfg.train_config());
    std::vector<LossBundle> head, tail;
    run(first, 0, k, head);
    const auto bytes = encode_checkpoint(first.state(), to_json(cfg));
    Trainer second(cfg.model_config(), cfg.train_config());
    decode_checkpoint(bytes, second.state());
    run(second, k, 20, tail);
    head.insert(head.end(), tail.begin(), tail.end());
    const bool ok = head == a && encode_checkpoint(second.state(), "") == final_bytes;
    resume &= ok;
    ks += fmt("%s%zu:%s", ks.empty() ? "" : " ", k, ok ? "ok" : "diverged");
  }
  return {repeat && resume, fmt("repeat run bitwise %s; resume at k = [%s]", repeat ? "identical" : "different",
                                ks.c_str())};
}

// ---------------------------------------------------------------------------

Verdict attention_sanity(const RunResult& ms) {
  const double f = ms.attention.fraction();
  return {f >= 0.7 && ms.attention.positives > 0,
          fmt("anomaly cells out-attend the rest on %zu/%zu positive test samples (%.3f)", ms.attention.hits,
              ms.attention.positives, f)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::set<int> only;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--threads", threads, "worker threads for data and independent runs")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int c) { return only.empty() || only.count(c); };

  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  std::printf("acceptance: %zu thread(s)\n", threads);
  int evaluated = 0, passed = 0;
  auto report = [&](int id, const char* name, const Verdict& v) {
    ++evaluated;
    passed += v.pass;
    std::printf("%s %2d %s: %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
  };
  auto guarded = [&](int id, const char* name, const std::function<Verdict()>& fn) {
    if (!wanted(id)) return;
    try {
      report(id, name, fn());
    } catch (const std::exception& e) {
      report(id, name, {false, std::string("threw: ") + e.what()});
    }
  };

  guarded(1, "gradient correctness", gradients);
  guarded(2, "loss oracles", loss_oracles);
  guarded(3, "mutual information bounds", mi_bounds);
  guarded(4, "chain-rule inequality", chain_rule);

  std::map<LossMode, RunResult> runs;
  double ablation_wall = 0;
  if (wanted(5) || wanted(10)) {
    try {
      const auto t0 = Clock::now();
      runs = ablation_runs(threads);
      ablation_wall = seconds_since(t0);
    } catch (const std::exception& e) {
      std::printf("  ablation runs threw: %s\n", e.what());
    }
  }
  guarded(5, "directional ablation", [&] {
    if (runs.size() != 4) return Verdict{false, "training runs did not complete"};
    return ablation(runs, ablation_wall);
  });
  guarded(6, "semantic bank exactness", bank_exactness);
  guarded(7, "pathway sharing", pathway_sharing);
  guarded(8, "metric oracles", [&] { return metric_oracles(threads); });
  guarded(9, "determinism and resume", determinism);
  guarded(10, "attention sanity", [&] {
    if (!runs.count(LossMode::multiscale_semantic)) return Verdict{false, "training run did not complete"};
    return attention_sanity(runs.at(LossMode::multiscale_semantic));
  });

  const int expected = only.empty() ? 10 : static_cast<int>(only.size());
  std::printf("acceptance: %d/%d criteria evaluated, %d passed\n", evaluated, expected, passed);
  return passed == evaluated ? 0 : 1;
}
