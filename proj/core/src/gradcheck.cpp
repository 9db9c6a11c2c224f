#include "mv3d/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mv3d/losses.hpp"
#include "mv3d/model.hpp"

namespace mv3d {

GradCheckResult gradcheck(const std::string& name, const ScalarFn& f, const std::vector<Tensor<double>*>& inputs,
                          double h, std::size_t max_coords, std::uint64_t seed) {
  for (auto* t : inputs) {
    t->set_requires_grad(true);
    t->zero_grad();
  }
  {
    Tape<double> tape(true);
    tape.backward(f(tape));
  }
  auto eval = [&]() {
    Tape<double> tape(false);
    return f(tape).item();
  };
  Rng rng(seed);
  double diff2 = 0, ana2 = 0, num2 = 0;
  std::size_t coords = 0;
  for (auto* t : inputs) {
    std::vector<std::size_t> idx(t->numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_coords && idx.size() > max_coords) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(max_coords);
    }
    const auto grad = t->grad();
    for (auto i : idx) {
      const double orig = (*t)[i];
      (*t)[i] = orig + h;
      const double up = eval();
      (*t)[i] = orig - h;
      const double down = eval();
      (*t)[i] = orig;
      const double numeric = (up - down) / (2 * h);
      diff2 += (grad[i] - numeric) * (grad[i] - numeric);
      ana2 += grad[i] * grad[i];
      num2 += numeric * numeric;
      ++coords;
    }
  }
  const double denom = std::max({std::sqrt(ana2), std::sqrt(num2), 1e-12});
  return {name, std::sqrt(diff2) / denom, coords};
}

namespace {

Tensor<double> randn(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& x : t.values()) x = stddev * rng.normal();
  return t;
}

// Reduces any output to a scalar with fixed random weights so every output
// coordinate contributes a distinct gradient.
Var<double> weighted_sum(Tape<double>& tape, Var<double> out, const Tensor<double>& w) {
  return sum(mul(reshape(out, w.shape()), tape.constant(w)));
}

struct Suite {
  Rng rng;
  std::vector<GradCheckResult> results;

  void unary(const std::string& name, Shape in, const std::function<Var<double>(Var<double>)>& op, Shape out) {
    auto x = randn(in, rng);
    auto w = randn(out, rng);
    results.push_back(gradcheck(
        name, [&](Tape<double>& t) { return weighted_sum(t, op(t.param(x)), w); }, {&x}));
  }

  void binary(const std::string& name, Shape a_shape, Shape b_shape,
              const std::function<Var<double>(Var<double>, Var<double>)>& op, Shape out) {
    auto a = randn(a_shape, rng);
    auto b = randn(b_shape, rng);
    auto w = randn(out, rng);
    results.push_back(gradcheck(
        name, [&](Tape<double>& t) { return weighted_sum(t, op(t.param(a), t.param(b)), w); }, {&a, &b}));
  }

  std::size_t dim(std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }
};

}  // namespace

std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed, std::size_t repeats) {
  Suite s{Rng(seed), {}};
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    const std::size_t m = s.dim(1, 5), n = s.dim(1, 6), k = s.dim(1, 4);
    s.binary("matmul", {m, k}, {k, n}, [](auto a, auto b) { return matmul(a, b); }, {m, n});
    s.unary("transpose", {m, n}, [](auto x) { return transpose(x); }, {n, m});
    s.binary("add", {m, n}, {m, n}, [](auto a, auto b) { return add(a, b); }, {m, n});
    s.binary("sub", {m, n}, {m, n}, [](auto a, auto b) { return sub(a, b); }, {m, n});
    s.binary("mul", {m, n}, {m, n}, [](auto a, auto b) { return mul(a, b); }, {m, n});
    s.binary("add_bias", {m, n}, {n}, [](auto a, auto b) { return add_bias(a, b); }, {m, n});
    s.unary("scale", {m, n}, [](auto x) { return scale(x, -1.7); }, {m, n});
    s.binary("mul_scalar", {m, n}, {}, [](auto a, auto b) { return mul_scalar(a, b); }, {m, n});
    s.binary(
        "div_scalar", {m, n}, {}, [](auto a, auto b) { return div_scalar(a, exp(b)); }, {m, n});
    s.unary("exp", {m, n}, [](auto x) { return exp(x); }, {m, n});
    s.unary("softmax", {m, n}, [](auto x) { return softmax(x); }, {m, n});
    s.unary("log_softmax", {m, n}, [](auto x) { return log_softmax(x); }, {m, n});
    s.unary("l2_normalize", {m, n + 1}, [](auto x) { return l2_normalize(x); }, {m, n + 1});
    s.unary("layer_norm", {m, n + 1}, [](auto x) { return layer_norm(x); }, {m, n + 1});
    {
      auto x = randn({m, n + 1}, s.rng), g = randn({n + 1}, s.rng), b = randn({n + 1}, s.rng);
      auto w = randn({m, n + 1}, s.rng);
      s.results.push_back(gradcheck(
          "layer_norm_affine",
          [&](Tape<double>& t) { return weighted_sum(t, layer_norm(t.param(x), t.param(g), t.param(b)), w); },
          {&x, &g, &b}));
    }
    s.unary("gelu", {m, n}, [](auto x) { return gelu(x); }, {m, n});
    s.unary("mean_pool", {m, n}, [](auto x) { return mean_pool(x); }, {n});
    {
      std::vector<std::size_t> idx(s.dim(1, 7));
      for (auto& i : idx) i = s.rng.below(m);
      s.unary("gather_rows", {m, n}, [&](auto x) { return gather_rows(x, idx); }, {idx.size(), n});
    }
    {
      const std::size_t m2 = s.dim(1, 4);
      s.binary(
          "concat_rows", {m, n}, {m2, n},
          [](auto a, auto b) {
            std::array<Var<double>, 2> parts{a, b};
            return concat_rows<double>(parts);
          },
          {m + m2, n});
    }
    {
      std::vector<std::size_t> cols(m);
      for (auto& c : cols) c = s.rng.below(n);
      s.unary("select_per_row", {m, n}, [&](auto x) { return select_per_row(x, cols); }, {m});
    }
    s.unary("sum", {m, n}, [](auto x) { return sum(x); }, {});
    s.unary("mean", {m, n}, [](auto x) { return mean(x); }, {});
    s.unary("reshape", {m, n}, [&](auto x) { return reshape(x, {m * n}); }, {m * n});
    {
      // Two segments with different query/key counts, as in region pooling.
      const std::size_t heads = s.dim(1, 3), hd = s.dim(1, 3), width = heads * hd;
      const std::size_t q1 = s.dim(1, 3), q2 = s.dim(1, 3), k1 = s.dim(1, 4), k2 = s.dim(1, 4);
      AttentionLayout layout{{0, q1, q1 + q2}, {0, k1, k1 + k2}};
      auto q = randn({q1 + q2, width}, s.rng), kk = randn({k1 + k2, width}, s.rng), v = randn({k1 + k2, width}, s.rng);
      auto w = randn({q1 + q2, width}, s.rng);
      s.results.push_back(gradcheck(
          "attention",
          [&](Tape<double>& t) {
            return weighted_sum(t, attention(t.param(q), t.param(kk), t.param(v), heads, layout), w);
          },
          {&q, &kk, &v}));
    }

    // Losses on unit rows produced inside the graph.
    const std::size_t N = s.dim(1, 6), R = s.dim(1, 3), D = s.dim(2, 6);
    auto img = randn({N, D}, s.rng), txt = randn({N, D}, s.rng), ret = randn({N, D}, s.rng);
    auto rimg = randn({R * N, D}, s.rng), rtxt = randn({R * N, D}, s.rng), rret = randn({R * N, D}, s.rng);
    auto log_tau = Tensor<double>::scalar(std::log(0.05 + 0.5 * s.rng.uniform()));
    std::vector<std::uint8_t> valid(R * N);
    for (auto& v : valid) v = s.rng.bernoulli(0.8) ? 1 : 0;
    valid[s.rng.below(valid.size())] = 1;
    auto unit = [](Tape<double>& t, Tensor<double>& x) { return l2_normalize(t.param(x)); };
    auto tau = [&](Tape<double>& t) { return exp(t.param(log_tau)); };
    s.results.push_back(gradcheck(
        "info_nce", [&](Tape<double>& t) { return info_nce(unit(t, img), unit(t, txt), tau(t)); },
        {&img, &txt, &log_tau}));
    s.results.push_back(gradcheck(
        "global_loss", [&](Tape<double>& t) { return global_loss(unit(t, img), unit(t, txt), tau(t)); },
        {&img, &txt, &log_tau}));
    s.results.push_back(gradcheck(
        "local_loss",
        [&](Tape<double>& t) { return local_loss(unit(t, rimg), unit(t, rtxt), valid, R, tau(t)); },
        {&rimg, &rtxt, &log_tau}));
    s.results.push_back(gradcheck(
        "global_semantic_loss",
        [&](Tape<double>& t) { return global_semantic_loss(unit(t, img), unit(t, ret), tau(t)); },
        {&img, &ret, &log_tau}));
    s.results.push_back(gradcheck(
        "local_semantic_loss",
        [&](Tape<double>& t) { return local_semantic_loss(unit(t, rimg), unit(t, rret), valid, R, tau(t)); },
        {&rimg, &rret, &log_tau}));
    s.results.push_back(gradcheck(
        "combined_loss",
        [&](Tape<double>& t) {
          auto tv = tau(t);
          auto vi = unit(t, img), vr = unit(t, rimg);
          ObjectiveTerms<double> terms{global_loss(vi, unit(t, txt), tv),
                                       local_loss(vr, unit(t, rtxt), valid, R, tv),
                                       global_semantic_loss(vi, unit(t, ret), tv),
                                       local_semantic_loss(vr, unit(t, rret), valid, R, tv)};
          LossBundle bundle;
          return combined_loss(terms, bundle);
        },
        {&img, &txt, &ret, &rimg, &rtxt, &rret, &log_tau}));
  }

  // Both encoders end to end through a contrastive loss, probing a sample of
  // coordinates in every parameter tensor.
  ModelConfig cfg;
  cfg.vision.volume_shape = {4, 4, 4};
  cfg.vision.patch_size = {2, 2, 2};
  cfg.vision.embed_dim = 8;
  cfg.vision.depth = 2;
  cfg.vision.heads = 2;
  cfg.vision.proj_dim = 4;
  cfg.vision.mlp_hidden = 8;
  cfg.text.vocab_size = 12;
  cfg.text.max_len = 6;
  cfg.text.embed_dim = 8;
  cfg.text.depth = 1;
  cfg.text.heads = 2;
  cfg.text.proj_dim = 4;
  cfg.text.mlp_hidden = 8;
  cfg.seed = seed;
  Model<double> model(cfg);
  std::vector<Volume> volumes(3, Volume(cfg.vision.volume_shape));
  for (auto& v : volumes)
    for (auto& x : v.voxels) x = static_cast<float>(s.rng.normal());
  const std::vector<TokenSeq> texts{{1, 2, 3}, {4, 5}, {6, 7, 8, 9, 10}};
  std::vector<Tensor<double>*> params;
  for (auto& [_, p] : model.parameters()) params.push_back(p);
  s.results.push_back(gradcheck(
      "encoders",
      [&](Tape<double>& t) {
        std::vector<const Volume*> vp{&volumes[0], &volumes[1], &volumes[2]};
        auto latent = model.vision.latent(t, vp);
        std::vector<TokenSelection> sel{{0, {0, 1, 2, 3, 4, 5, 6, 7}}, {1, {0, 3, 5}}, {2, {1, 2, 6, 7}}};
        auto image = model.vision.pool(t, latent, sel);
        return global_loss(image, model.text.encode(t, texts), model.temperature.var(t));
      },
      params, 1e-6, 6, seed));
  return s.results;
}

}  // namespace mv3d
