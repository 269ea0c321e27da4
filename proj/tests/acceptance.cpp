// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. `--only <name>` runs a single criterion, `--list` names
// them. The end-to-end criterion reads configs/acceptance_matrix.json.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "gradcheck.hpp"
#include "lp_oracle.hpp"
#include "method_fixtures.hpp"
#include "unida/backbones.hpp"
#include "unida/bayes_opt.hpp"
#include "unida/error.hpp"
#include "unida/fft.hpp"
#include "unida/methods.hpp"
#include "unida/nn.hpp"
#include "unida/ops.hpp"
#include "unida/ot.hpp"
#include "unida/protocol.hpp"
#include "unida/runner.hpp"

namespace fs = std::filesystem;
using namespace unida;
using namespace unida::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  std::function<Outcome()> check;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("unida_acceptance_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// ------------------------------------------------------------- gradients

Tensor leaf_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor::randn(std::move(shape), rng, 1.0, true);
}

BackboneConfig small_backbone(BackboneKind kind, std::size_t d, std::size_t t) {
  BackboneConfig c;
  c.kind = kind;
  c.in_channels = d;
  c.seq_len = t;
  c.feature_dim = 6;
  c.cnn_widths = {4, 5};
  c.cnn_kernels = {4, 3, 3};
  c.n_fourier_modes = std::min<std::size_t>(4, t / 2);
  c.fourier_width = 3;
  c.fourier_features = 5;
  c.n_segments = 4;
  c.patch_size = 4;
  c.embed_dim = 6;
  c.tslanet_layers = 1;
  c.icb_hidden = 5;
  return c;
}

Outcome gradient_suite() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  const auto record = [&](const std::string& name, const GradCheckResult& r) {
    ++checks;
    if (r.max_rel_error > worst) worst = r.max_rel_error, worst_name = name;
  };

  const Shape shapes[] = {{3, 4}, {2, 3, 5}, {4, 6}};
  std::uint64_t seed = 1000;
  for (const auto& s : shapes) {
    Tensor a = leaf_tensor(s, seed++), b = leaf_tensor(s, seed++), pos = leaf_tensor(s, seed++);
    for (auto& v : pos.mutable_values()) v = std::abs(v) + 0.5;
    const int last = static_cast<int>(s.size()) - 1;
    std::vector<std::size_t> order(s.size());
    std::iota(order.rbegin(), order.rend(), std::size_t{0});
    const std::vector<std::pair<std::string, std::function<Tensor()>>> cases = {
        {"add", [&] { return probe(a + b); }},
        {"sub", [&] { return probe(a - b); }},
        {"mul", [&] { return probe(a * b); }},
        {"div", [&] { return probe(a / pos); }},
        {"neg", [&] { return probe(neg(a)); }},
        {"scale", [&] { return probe(scale(a, -2.5)); }},
        {"add_scalar", [&] { return probe(add_scalar(a, 0.7)); }},
        {"square", [&] { return probe(square(a)); }},
        {"exp", [&] { return probe(exp(a)); }},
        {"log", [&] { return probe(log(pos)); }},
        {"sqrt", [&] { return probe(sqrt(pos)); }},
        {"relu", [&] { return probe(relu(a)); }},
        {"gelu", [&] { return probe(gelu(a)); }},
        {"sigmoid", [&] { return probe(sigmoid(a)); }},
        {"softmax", [&] { return probe(softmax(a, 0)); }},
        {"log_softmax", [&] { return probe(log_softmax(a, last)); }},
        {"layer_norm", [&] { return probe(layer_norm(a)); }},
        {"sum", [&] { return probe(sum(a, 0)); }},
        {"mean", [&] { return probe(mean(a, last, true)); }},
        {"reshape", [&] { return probe(reshape(a, {a.numel()})); }},
        {"permute", [&] { return probe(permute(a, order)); }},
        {"transpose", [&] { return probe(transpose(a, 0, last)); }},
        {"slice", [&] { return probe(slice(a, 0, 1, s[0] - 1)); }},
        {"pad_to", [&] { return probe(pad_to(a, last, s.back() + 3)); }},
        {"concat", [&] {
           const Tensor parts[] = {a, b};
           return probe(concat(parts, last));
         }},
        {"index_select", [&] {
           const std::size_t idx[] = {0, s[0] - 1, 0};
           return probe(index_select(a, 0, idx));
         }},
        {"magnitude", [&] { return probe(magnitude(a, b)); }},
        {"phase", [&] { return probe(phase(a, b)); }},
        {"l2_normalize", [&] { return probe(l2_normalize(a, last)); }},
    };
    for (const auto& [name, fn] : cases) record(name, check_gradients(fn, {a, b, pos}));
  }

  const std::pair<Shape, std::size_t> mats[] = {{{3, 4}, 5}, {{2, 3, 4}, 2}, {{5, 6}, 3}};
  for (const auto& [sx, out] : mats) {
    Tensor x = leaf_tensor(sx, seed++), w = leaf_tensor({sx.back(), out}, seed++);
    Tensor lw = leaf_tensor({out, sx.back()}, seed++), lb = leaf_tensor({out}, seed++);
    Tensor g = leaf_tensor({sx.back()}, seed++), be = leaf_tensor({sx.back()}, seed++);
    Tensor other = leaf_tensor({4, sx.back()}, seed++);
    record("matmul", check_gradients([&] { return probe(matmul(x, w)); }, {x, w}));
    record("linear", check_gradients([&] { return probe(linear(x, lw, lb)); }, {x, lw, lb}));
    record("layer_norm_affine", check_gradients([&] { return probe(layer_norm(x, g, be)); }, {x, g, be}));
    const Tensor x2 = reshape(x, {x.numel() / sx.back(), sx.back()});
    record("pairwise_sq_dist", check_gradients([&] { return probe(pairwise_sq_dist(reshape(x, {x.numel() / sx.back(), sx.back()}), other)); }, {x, other}));
    std::vector<int> labels(x2.dim(0));
    std::vector<double> targets(x2.numel());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % sx.back());
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = (i % 3) ? 1.0 : 0.2;
    record("losses", check_gradients(
                         [&] {
                           const Tensor l = reshape(x, {x.numel() / sx.back(), sx.back()});
                           return cross_entropy(l, labels) + binary_cross_entropy_with_logits(l, targets) +
                                  probe(pick(l, labels));
                         },
                         {x}));
  }

  struct ConvCase {
    Shape in;
    std::size_t cout, k, stride, pad;
  };
  const ConvCase convs[] = {{{2, 3, 9}, 4, 3, 1, 1}, {{1, 1, 16}, 2, 5, 2, 2}, {{3, 2, 6}, 3, 6, 1, 0}};
  for (const auto& c : convs) {
    Tensor x = leaf_tensor(c.in, seed++), w = leaf_tensor({c.cout, c.in[1], c.k}, seed++),
           b = leaf_tensor({c.cout}, seed++);
    record("conv1d", check_gradients([&] { return probe(conv1d(x, w, b, c.stride, c.pad)); }, {x, w, b}));
  }
  for (Shape s : {Shape{2, 8}, Shape{3, 7}, Shape{1, 2, 16}}) {
    Tensor x = leaf_tensor(s, seed++);
    record("rfft", check_gradients(
                       [&] {
                         const auto c = fft_rfft(x);
                         return probe(c.real, 1) + probe(c.imag, 2);
                       },
                       {x}));
    Shape fs = s;
    fs.back() = rfft_bins(s.back());
    Tensor re = leaf_tensor(fs, seed++), im = leaf_tensor(fs, seed++);
    record("irfft", check_gradients([&] { return probe(fft_irfft({re, im}, s.back())); }, {re, im}));
  }

  // Backbones: straight-through parameters (S3 priorities, TSLANet
  // thresholds) are excluded because their surrogate gradient is not the
  // derivative of the forward pass.
  const std::tuple<std::size_t, std::size_t, std::size_t> inputs[] = {{2, 2, 16}, {1, 3, 20}, {3, 1, 24}};
  for (BackboneKind kind : {BackboneKind::Cnn, BackboneKind::Fno, BackboneKind::S3, BackboneKind::TslaNet}) {
    for (const auto& [b, d, t] : inputs) {
      Rng rng(seed++);
      auto model = make_backbone(small_backbone(kind, d, t), rng);
      Tensor x = leaf_tensor({b, d, t}, seed++);
      std::vector<Tensor> leaves{x};
      for (const auto& p : model->parameters())
        if (p.name.find("priority") == std::string::npos && p.name.find("threshold") == std::string::npos)
          leaves.push_back(p.tensor);
      record(std::string(to_string(kind)), check_gradients([&] { return probe(model->forward(x, false)); }, leaves));
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-4 && secs < 120.0,
          std::to_string(checks) + " checks, max rel err " + sci(worst) + " (" + worst_name + "), " +
              format_fixed(secs, 1) + " s"};
}

// ------------------------------------------------------------------- FFT

Outcome fft_suite() {
  Rng rng(20);
  double round = 0.0, exact = 0.0;
  for (std::size_t n = 1; n <= 64; ++n) {
    Tensor x = Tensor::randn({2, n}, rng);
    const Tensor back = fft_irfft(fft_rfft(x), n);
    for (std::size_t i = 0; i < x.numel(); ++i) round = std::max(round, std::abs(back.values()[i] - x.values()[i]));

    std::vector<double> impulse(n, 0.0);
    impulse[0] = 1.0;
    const auto si = fft_rfft(Tensor({n}, impulse));
    for (std::size_t f = 0; f < si.real.numel(); ++f) {
      exact = std::max(exact, std::abs(si.real.values()[f] - 1.0));
      exact = std::max(exact, std::abs(si.imag.values()[f]));
    }
    const auto sc = fft_rfft(Tensor({n}, std::vector<double>(n, 2.5)));
    for (std::size_t f = 0; f < sc.real.numel(); ++f) {
      const double expect = f == 0 ? 2.5 * static_cast<double>(n) : 0.0;
      exact = std::max(exact, std::abs(sc.real.values()[f] - expect));
      exact = std::max(exact, std::abs(sc.imag.values()[f]));
    }
  }
  return {round < 1e-9 && exact < 1e-12, "roundtrip max err " + sci(round) + ", impulse/DC max err " + sci(exact)};
}

// -------------------------------------------------------------------- OT

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) s += x = 0.2 + rng.uniform();
  for (auto& x : v) x /= s;
  return v;
}

ot::Matrix random_cost(std::size_t n, std::size_t m, Rng& rng) {
  ot::Matrix c(n, m);
  for (auto& v : c.data) v = rng.uniform();
  return c;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

Outcome ot_suite() {
  Rng rng(77);
  double marginal = 0.0, gap = 0.0, mass = 0.0, invariance = 0.0;
  bool converged = true;
  for (int i = 0; i < 50; ++i) {
    const auto c = random_cost(5, 5, rng);
    const auto mu = random_simplex(5, rng), nu = random_simplex(5, rng);
    const auto plan = ot::sinkhorn(c, mu, nu, {.epsilon = 0.05, .max_iter = 5000, .tol = 1e-9});
    converged &= plan.converged;
    marginal = std::max({marginal, max_abs_diff(plan.row_sums(), mu), max_abs_diff(plan.col_sums(), nu)});
  }
  for (int i = 0; i < 50; ++i) {
    const auto c = random_cost(3, 3, rng);
    const auto mu = random_simplex(3, rng), nu = random_simplex(3, rng);
    const double lp = lp_vertex_minimum(balanced_ot_lp(c.data, 3, 3, mu, nu));
    const auto plan = ot::sinkhorn(c, mu, nu, {.epsilon = 0.01, .max_iter = 50000, .tol = 1e-10});
    converged &= plan.converged;
    gap = std::max(gap, std::abs(ot::transport_cost(plan, c) - lp));
    const auto partial = ot::partial_sinkhorn(c, mu, nu, 0.6, {.epsilon = 0.01, .max_iter = 50000, .tol = 1e-10});
    converged &= partial.converged;
    mass = std::max(mass, std::abs(partial.total() - 0.6));
    const auto rs = partial.row_sums(), cs = partial.col_sums();
    for (std::size_t k = 0; k < 3; ++k) mass = std::max({mass, rs[k] - mu[k], cs[k] - nu[k]});
  }
  for (int i = 0; i < 20; ++i) {
    const auto c = random_cost(4, 5, rng);
    const auto mu = random_simplex(4, rng), nu = random_simplex(5, rng);
    const ot::SinkhornOptions opt{.epsilon = 0.1, .max_iter = 5000, .tol = 1e-12};
    const auto base = ot::sinkhorn(c, mu, nu, opt);
    auto shifted = c;
    for (auto& v : shifted.data) v += 3.7;
    auto scaled = c;
    for (auto& v : scaled.data) v *= 6.5;
    invariance = std::max(invariance, max_abs_diff(base.matrix.data, ot::sinkhorn(shifted, mu, nu, opt).matrix.data));
    invariance = std::max(invariance, max_abs_diff(base.matrix.data,
                                                   ot::sinkhorn(scaled, mu, nu, {.epsilon = 0.65, .max_iter = 5000, .tol = 1e-12})
                                                       .matrix.data));
  }
  return {converged && marginal < 1e-6 && gap < 1e-2 && mass < 1e-6 && invariance < 1e-8,
          "marginal " + sci(marginal) + ", LP gap " + sci(gap) + ", partial mass " + sci(mass) + ", invariance " +
              sci(invariance)};
}

// -------------------------------------------------------------- H-score

Outcome hscore_suite() {
  Rng rng(31);
  std::size_t violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(), b = rng.uniform();
    const double h = harmonic_h(a, b);
    if (h < std::min(a, b) - 1e-12 || h > std::max(a, b) + 1e-12 || h > std::sqrt(a * b) + 1e-12) ++violations;
  }
  for (int i = 0; i < 1000; ++i) {
    DatasetMeta meta;
    meta.n_classes = 2 + rng.below(12);
    meta.domains = {"a", "b"};
    const int rs = static_cast<int>(rng.below(meta.n_classes));
    int rt = static_cast<int>(rng.below(meta.n_classes - 1));
    if (rt >= rs) ++rt;
    const auto s = build_scenario(meta, "a", "b", rs, rt);
    std::set<int> all;
    for (const auto* set : {&s.common_set, &s.source_private_set, &s.target_private_set})
      for (int c : *set)
        if (!all.insert(c).second) ++violations;
    if (s.source_private_set != std::vector<int>{rt} || s.target_private_set != std::vector<int>{rs}) ++violations;
    if (all.size() != meta.n_classes) ++violations;
  }
  for (int i = 0; i < 1000; ++i) {
    std::vector<int> labels(10 + rng.below(60));
    for (auto& l : labels) l = static_cast<int>(rng.below(4));
    for (int c = 0; c < 4; ++c) labels.push_back(c), labels.push_back(c);
    const std::uint64_t seed = rng();
    const auto s1 = split_target(labels, 0.8, seed), s2 = split_target(labels, 0.8, seed);
    std::vector<std::size_t> all = s1.train;
    all.insert(all.end(), s1.test.begin(), s1.test.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(labels.size());
    std::iota(expect.begin(), expect.end(), std::size_t{0});
    if (s1.train != s2.train || s1.test != s2.test || all != expect) ++violations;
  }
  const double hand = harmonic_h(0.8, 0.6);
  return {violations == 0 && std::abs(hand - 0.6857) < 1e-4,
          "3000 random cases, " + std::to_string(violations) + " violations, H(0.8, 0.6) = " + format_fixed(hand, 6)};
}

// ------------------------------------------------------------- detectors

std::size_t unknown_count(const PredictionBatch& p) {
  return static_cast<std::size_t>(std::count(p.labels.begin(), p.labels.end(), kUnknown));
}

Outcome detector_suite() {
  ToyData toy = make_toy({0, 1, 2}, {0, 1, 3}, 12, 5, 0.2, 0.8);
  shuffle_rows(toy.source_x, toy.source_y, 6);
  shuffle_rows(toy.target_x, toy.target_y, 7);
  std::vector<std::string> problems;

  // Threshold monotonicity on a fixed batch.
  const std::vector<double> grid{0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.69, 0.8, 0.9, 1.0, 1.2, 1.5};
  for (MethodKind k : all_method_kinds()) {
    MethodConfig c;
    c.kind = k;
    c.n_classes = 3;
    auto m = make_method(c, tiny_cnn(), 91);
    run_epochs(*m, toy, 2, 12);
    std::vector<std::size_t> counts;
    for (double thr : grid) {
      MethodConfig& mc = m->mutable_config();
      switch (k) {
        case MethodKind::Uan: mc.uan_threshold = thr; break;
        case MethodKind::Ovanet: mc.ovanet_threshold = thr; break;
        case MethodKind::Dance: mc.dance_margin = thr; break;
        case MethodKind::Ppot: mc.ppot_threshold = thr; break;
        case MethodKind::Uniot: mc.uniot_threshold = thr; break;
        case MethodKind::Unijdot: mc.unijdot_threshold = thr; break;
      }
      counts.push_back(unknown_count(m->detect(toy.target_x)));
    }
    const bool rejects_above = k == MethodKind::Uan || k == MethodKind::Ovanet || k == MethodKind::Dance;
    for (std::size_t i = 1; i < counts.size(); ++i) {
      const bool ok = rejects_above ? counts[i] <= counts[i - 1] : counts[i] >= counts[i - 1];
      if (!ok) problems.push_back(std::string(to_string(k)) + " not monotone at " + format_fixed(grid[i], 2));
    }
  }

  // Zero alignment and auxiliary weights: every method's backbone gradient
  // equals plain source cross-entropy through the same initial weights.
  const Batch s = take(toy.source_x, toy.source_y, 0, 10), t = take(toy.target_x, {}, 3, 10);
  const auto grads_of = [](UniDAMethod& m, const std::function<Tensor()>& loss) {
    for (auto& p : m.parameters()) p.tensor.zero_grad();
    loss().backward();
    std::vector<std::vector<double>> out;
    for (const auto& p : m.backbone_parameters()) out.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
    return out;
  };
  MethodConfig ref_cfg;
  ref_cfg.kind = MethodKind::Ppot;
  ref_cfg.n_classes = 3;
  auto ref = make_method(ref_cfg, tiny_cnn(), 81);
  const auto ce = grads_of(*ref, [&] { return cross_entropy(ref->classifier()(ref->backbone().forward(s.x, true)), s.labels); });
  for (MethodKind k : all_method_kinds()) {
    MethodConfig c;
    c.kind = k;
    c.n_classes = 3;
    c.lambda_align = 0.0;
    c.lambda_aux = 0.0;
    auto m = make_method(c, tiny_cnn(), 81);
    m->begin_training(toy.source_x, toy.source_y, toy.target_x);
    if (grads_of(*m, [&] { return m->compute_loss(s, t).first; }) != ce)
      problems.push_back(std::string(to_string(k)) + " zero-weight gradient differs from source cross-entropy");
  }
  std::string detail = problems.empty() ? "6 methods: monotone thresholds, zero-weight isolation exact" : problems.front();
  if (problems.size() > 1) detail += " (+" + std::to_string(problems.size() - 1) + " more)";
  return {problems.empty(), detail};
}

// ------------------------------------------------------------ optimizer

Outcome bayes_suite() {
  SearchSpace space;
  space.params.push_back(ParamDomain::continuous("x", 0.0, 1.0));
  double oracle = 0.0, oracle_value = -1e300;
  for (int i = 0; i <= 10000; ++i) {
    const double x = i / 10000.0, v = -std::pow(x - 0.7, 2);
    if (v > oracle_value) oracle_value = v, oracle = x;
  }
  const auto start = std::chrono::steady_clock::now();
  int hits = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    std::vector<Observation> history;
    Observation best{{}, -1e300};
    for (int trial = 0; trial < 30; ++trial) {
      Hyperparams hp = bayes_suggest(history, space, rng);
      const double y = -std::pow(hp.at("x") - 0.7, 2);
      history.push_back({hp, y});
      if (y > best.score) best = history.back();
    }
    const double err = std::abs(best.params.at("x") - oracle);
    worst = std::max(worst, err);
    if (err <= 0.05) ++hits;
  }
  const double secs = seconds_since(start);
  return {hits >= 9 && secs < 30.0, std::to_string(hits) + "/10 seeds within 0.05 (worst " + format_fixed(worst) +
                                         "), " + format_fixed(secs, 2) + " s"};
}

// ------------------------------------------------------------ end to end

Outcome end_to_end() {
  const fs::path config = fs::path(UNIDA_SOURCE_DIR) / "configs" / "acceptance_matrix.json";
  const fs::path out = scratch_dir("matrix");
  CommandOptions opts;
  opts.config = config;
  opts.out_dir = out;
  opts.quiet = true;
  const auto start = std::chrono::steady_clock::now();
  const int code = cmd_matrix(opts);
  const double secs = seconds_since(start);
  if (code != kExitOk) return {false, "matrix command exited with " + std::to_string(code)};

  // Random-guess oracle on the scenarios that were actually evaluated.
  const RunConfig cfg = load_run_config(config);
  std::map<std::string, std::vector<double>> per_method;
  std::map<std::string, DomainScenario> scenarios;
  std::size_t failures = 0;
  std::istringstream log(slurp(out / "trials.jsonl"));
  std::size_t n = 0;
  for (std::string line; std::getline(log, line);) {
    const LoggedTrial t = parse_json_line(line, ++n);
    if (t.phase != "eval") continue;
    per_method[t.method].push_back(t.record.report.h_score);
    failures += t.record.failed;
    scenarios[t.scenario_name] = t.record.scenario;
  }
  const Dataset data = load_config_dataset(cfg);
  double baseline = 0.0;
  Rng rng(2024);
  for (const auto& [name, partial] : scenarios) {
    const DomainScenario s = build_scenario(data.meta, partial.source_id, partial.target_id,
                                            partial.removed_source_class, partial.removed_target_class);
    baseline += random_baseline(s, 200000, rng).h_score / static_cast<double>(scenarios.size());
  }

  bool pass = secs < 1200.0 && per_method.size() == 6;
  std::ostringstream detail;
  detail << "baseline " << format_fixed(baseline) << ";";
  for (const auto& [method, h] : per_method) {
    const double m = std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(h.size());
    const bool ok = m >= baseline + 0.10 && (method != "unijdot" || m > 0.5);
    pass &= ok;
    detail << ' ' << method << ' ' << format_fixed(m) << (ok ? "" : "(below)");
  }
  detail << "; " << failures << " failed trials; " << format_fixed(secs / 60.0, 1) << " min";
  std::cout << slurp(out / "results.txt");
  fs::remove_all(out);
  return {pass, detail.str()};
}

Outcome reproducibility() {
  const fs::path config = fs::path(UNIDA_SOURCE_DIR) / "configs" / "acceptance_run.json";
  const fs::path root = scratch_dir("repro");
  std::vector<std::string> csvs;
  for (const auto& [dir, jobs] : std::vector<std::pair<std::string, std::size_t>>{{"a", 1}, {"b", 1}, {"c", 4}, {"d", 4}}) {
    CommandOptions opts;
    opts.config = config;
    opts.out_dir = root / dir;
    opts.jobs = jobs;
    opts.quiet = true;
    const int code = cmd_run(opts);
    if (code != kExitOk) return {false, "run command exited with " + std::to_string(code)};
    csvs.push_back(slurp(root / dir / "results.csv"));
  }
  fs::remove_all(root);
  const bool same = std::all_of(csvs.begin(), csvs.end(), [&](const std::string& c) { return c == csvs[0]; });
  std::size_t rows = static_cast<std::size_t>(std::count(csvs[0].begin(), csvs[0].end(), '\n'));
  return {same && rows > 1, std::string(same ? "byte-identical" : "DIFFERENT") + " results.csv over 2 runs x {--jobs 1, --jobs 4}, " +
                                std::to_string(rows) + " lines"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"gradients", gradient_suite},
      {"fft", fft_suite},
      {"optimal-transport", ot_suite},
      {"h-score-and-scenarios", hscore_suite},
      {"detector-contracts", detector_suite},
      {"bayesian-optimizer", bayes_suite},
      {"end-to-end", end_to_end},
      {"reproducibility", reproducibility},
  };
  std::string only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--list") {
      for (const auto& c : criteria) std::cout << c.name << '\n';
      return 0;
    }
    if (arg == "--only" && i + 1 < argc) only = argv[++i];
  }
  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && c.name != only) continue;
    ++ran;
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << std::endl;
  }
  if (ran == 0) {
    std::cerr << "unknown criterion '" << only << "'\n";
    return 2;
  }
  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
