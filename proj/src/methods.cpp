#include "unida/methods.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "unida/error.hpp"
#include "unida/ops.hpp"

namespace unida {

namespace {

constexpr std::size_t kEvalChunk = 256;
constexpr double kMaskedLogit = -1e9;

std::vector<double> uniform_weights(std::size_t n) { return ot::uniform_marginal(n, 1.0); }

/// Cost divided by its largest entry (1 when the cost is all zeros).
ot::Matrix normalized_cost(const Tensor& cost) {
  ot::Matrix m = to_matrix(cost);
  double top = 0.0;
  for (double v : m.data) top = std::max(top, v);
  if (top > 0.0)
    for (double& v : m.data) v /= top;
  return m;
}

std::vector<double> softmax_row(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - top));
  for (double& v : p) v /= z;
  return p;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<std::size_t> to_indices(std::span<const int> labels) {
  return {labels.begin(), labels.end()};
}

}  // namespace

std::string_view to_string(MethodKind kind) {
  switch (kind) {
    case MethodKind::Uan: return "uan";
    case MethodKind::Ovanet: return "ovanet";
    case MethodKind::Dance: return "dance";
    case MethodKind::Ppot: return "ppot";
    case MethodKind::Uniot: return "uniot";
    case MethodKind::Unijdot: return "unijdot";
  }
  return "unknown";
}

MethodKind parse_method_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (MethodKind k : all_method_kinds())
    if (to_string(k) == lower) return k;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

std::string_view to_string(UanScore score) {
  return score == UanScore::DomainEntropy ? "domain_entropy" : "transferability";
}

UanScore parse_uan_score(std::string_view name) {
  for (UanScore s : {UanScore::DomainEntropy, UanScore::Transferability})
    if (to_string(s) == name) return s;
  throw ConfigError("unknown UAN score '" + std::string(name) + "'");
}

const std::vector<MethodKind>& all_method_kinds() {
  static const std::vector<MethodKind> kinds{MethodKind::Uan,  MethodKind::Ovanet, MethodKind::Dance,
                                             MethodKind::Ppot, MethodKind::Uniot,  MethodKind::Unijdot};
  return kinds;
}

void MethodConfig::validate() const {
  if (n_classes == 0) throw ConfigError("method needs at least one source class");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (lambda_align < 0.0 || lambda_aux < 0.0) throw ConfigError("loss weights must be >= 0");
  if (head_hidden == 0) throw ConfigError("head_hidden must be positive");
  if (!(dance_temperature > 0.0)) throw ConfigError("dance_temperature must be positive");
  if (!(ot_epsilon > 0.0)) throw ConfigError("ot_epsilon must be positive");
  if (!(ot_mass > 0.0 && ot_mass <= 1.0)) throw ConfigError("ot_mass must lie in (0, 1]");
  if (ot_max_iter == 0) throw ConfigError("ot_max_iter must be positive");
  if (prototype_momentum < 0.0 || prototype_momentum >= 1.0)
    throw ConfigError("prototype_momentum must lie in [0, 1)");
  if (unijdot_alpha < 0.0 || unijdot_beta < 0.0) throw ConfigError("joint cost weights must be >= 0");
  if (unijdot_gamma < 0.0) throw ConfigError("unijdot_gamma must be >= 0");
}

double MethodConfig::effective_dance_margin() const {
  return dance_margin.value_or(std::log(static_cast<double>(n_classes)) / 2.0);
}

double entropy(std::span<const double> p) {
  if (p.empty()) throw ContractError("entropy of an empty distribution");
  double total = 0.0, h = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("entropy: probabilities must be finite and >= 0");
    total += v;
    if (v > 0.0) h -= v * std::log(v);
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("entropy: probabilities sum to " + std::to_string(total));
  return h;
}

std::optional<double> otsu_threshold(std::span<const double> scores, std::size_t bins) {
  if (scores.empty() || bins < 2) return std::nullopt;
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return std::nullopt;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<double> count(bins, 0.0), moment(bins, 0.0);
  for (double s : scores) {
    const auto b = std::min(bins - 1, static_cast<std::size_t>((s - lo) / width));
    count[b] += 1.0;
    moment[b] += s;
  }
  if (std::count_if(count.begin(), count.end(), [](double c) { return c > 0.0; }) < 2) return std::nullopt;

  const double n = static_cast<double>(scores.size());
  const double total_moment = std::accumulate(moment.begin(), moment.end(), 0.0);
  std::vector<double> between(bins, -1.0);  // cut k: bins [0, k) below
  double w0 = 0.0, m0 = 0.0, best = -1.0;
  for (std::size_t k = 1; k < bins; ++k) {
    w0 += count[k - 1];
    m0 += moment[k - 1];
    const double w1 = n - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double diff = m0 / w0 - (total_moment - m0) / w1;
    between[k] = w0 * w1 * diff * diff;
    best = std::max(best, between[k]);
  }
  double cut_sum = 0.0, cuts = 0.0;
  for (std::size_t k = 1; k < bins; ++k) {
    if (between[k] >= best * (1.0 - 1e-12)) {
      cut_sum += static_cast<double>(k);
      cuts += 1.0;
    }
  }
  return lo + width * (cut_sum / cuts);
}

std::vector<double> transported_mass_scores(const ot::Matrix& plan) {
  std::vector<double> s(plan.cols, 0.0);
  for (std::size_t i = 0; i < plan.rows; ++i)
    for (std::size_t j = 0; j < plan.cols; ++j) s[j] += plan(i, j);
  for (double& v : s) v *= static_cast<double>(plan.cols);
  return s;
}

ot::Matrix to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("expected a matrix, got " + to_string(t.shape()));
  return ot::Matrix(t.dim(0), t.dim(1), std::vector<double>(t.values().begin(), t.values().end()));
}

Tensor plan_tensor(const ot::TransportPlan& plan) {
  return Tensor({plan.matrix.rows, plan.matrix.cols}, plan.matrix.data);
}

// ---------------------------------------------------------------- base

UniDAMethod::UniDAMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed)
    : config_(config), root_(seed), heads_rng_(root_.derive("heads")) {
  config_.validate();
  Rng backbone_rng = root_.derive("backbone");
  backbone_ = make_backbone(backbone, backbone_rng);
  Rng classifier_rng = root_.derive("classifier");
  classifier_ = nn::Linear(backbone.feature_dim, config_.n_classes, classifier_rng);
}

void UniDAMethod::init_optimizer() {
  AdamOptions opt;
  opt.lr = config_.lr;
  opt.weight_decay = config_.weight_decay;
  optimizer_ = std::make_unique<Adam>(parameters(), opt);
}

std::vector<Parameter> UniDAMethod::parameters() const {
  std::vector<Parameter> out = backbone_parameters();
  classifier_.collect("classifier", out);
  collect_heads(out);
  return out;
}

std::vector<Parameter> UniDAMethod::backbone_parameters() const { return backbone_->parameters("backbone"); }

void UniDAMethod::begin_training(const Tensor&, std::span<const int> source_y, const Tensor&) {
  for (int y : source_y)
    if (y < 0 || static_cast<std::size_t>(y) >= config_.n_classes)
      throw ContractError("source label " + std::to_string(y) + " outside [0, " +
                          std::to_string(config_.n_classes) + ")");
  init_optimizer();
}

LossBreakdown UniDAMethod::train_step(const Batch& source, const Batch& target) {
  if (!optimizer_) init_optimizer();
  optimizer_->options().lr = config_.lr;
  optimizer_->zero_grad();
  auto [loss, parts] = compute_loss(source, target);
  loss.backward();
  optimizer_->step();
  after_step();
  return parts;
}

std::pair<Tensor, Tensor> UniDAMethod::embed(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("embed expects [N, D, T]");
  const std::size_t n = x.dim(0);
  const Tensor input = x.detach();
  std::vector<Tensor> feats, logits;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t len = std::min(kEvalChunk, n - start);
    const Tensor f = backbone_->forward(n <= kEvalChunk ? input : slice(input, 0, start, len), false);
    feats.push_back(f.detach());
    logits.push_back(classifier_(f).detach());
  }
  if (feats.size() == 1) return {feats[0], logits[0]};
  return {concat(feats, 0).detach(), concat(logits, 0).detach()};
}

Tensor UniDAMethod::source_logits_and_loss(const Batch& source, Tensor& features, Tensor& cls_loss) {
  if (source.labels.size() != source.x.dim(0)) throw DimensionError("source batch label count mismatch");
  features = backbone_->forward(source.x, true);
  Tensor logits = classifier_(features);
  cls_loss = cross_entropy(logits, source.labels);
  return logits;
}

LossBreakdown UniDAMethod::breakdown(const Tensor& cls, const Tensor& align, const Tensor& aux, double align_weight,
                                     double aux_weight) {
  LossBreakdown b;
  b.cls_loss = cls.item();
  b.align_loss = align.defined() ? align.item() : 0.0;
  b.aux_loss = aux.defined() ? aux.item() : 0.0;
  b.align_weight = align_weight;
  b.aux_weight = aux_weight;
  return b;
}

Tensor UniDAMethod::combine(const Tensor& cls, const Tensor& align, const Tensor& aux, double align_weight,
                            double aux_weight) const {
  Tensor total = cls;
  if (align.defined()) total = total + align * align_weight;
  if (aux.defined()) total = total + aux * aux_weight;
  return total;
}

PredictionBatch UniDAMethod::argmax_predictions(const Tensor& logits) const {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  PredictionBatch out;
  out.labels.resize(n);
  out.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.values().subspan(i * c, c);
    const auto p = softmax_row(row);
    out.labels[i] = static_cast<int>(argmax(p));
    out.scores[i] = p[static_cast<std::size_t>(out.labels[i])];
  }
  return out;
}

// ---------------------------------------------------------------- prototypes

void PrototypeMethod::begin_training(const Tensor& source_x, std::span<const int> source_y, const Tensor& target_x) {
  UniDAMethod::begin_training(source_x, source_y, target_x);
  const auto [features, logits] = embed(source_x);
  const std::size_t k = features.dim(1), c = config_.n_classes;
  std::vector<double> sums(c * k, 0.0), counts(c, 0.0);
  for (std::size_t i = 0; i < source_y.size(); ++i) {
    const auto y = static_cast<std::size_t>(source_y[i]);
    counts[y] += 1.0;
    for (std::size_t j = 0; j < k; ++j) sums[y * k + j] += features.values()[i * k + j];
  }
  for (std::size_t y = 0; y < c; ++y)
    if (counts[y] > 0.0)
      for (std::size_t j = 0; j < k; ++j) sums[y * k + j] /= counts[y];
  prototypes_ = Tensor({c, k}, std::move(sums));
}

void PrototypeMethod::update_prototypes(const Tensor& features, std::span<const int> labels) {
  if (!prototypes_.defined()) throw ContractError("begin_training must precede training steps");
  const std::size_t k = features.dim(1), c = config_.n_classes;
  std::vector<double> sums(c * k, 0.0), counts(c, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    counts[y] += 1.0;
    for (std::size_t j = 0; j < k; ++j) sums[y * k + j] += features.values()[i * k + j];
  }
  const double m = config_.prototype_momentum;
  auto proto = prototypes_.mutable_values();
  for (std::size_t y = 0; y < c; ++y) {
    if (counts[y] == 0.0) continue;
    for (std::size_t j = 0; j < k; ++j) {
      const double mean = sums[y * k + j] / counts[y];
      proto[y * k + j] = m == 0.0 ? mean : m * proto[y * k + j] + (1.0 - m) * mean;
    }
  }
}

// ---------------------------------------------------------------- UAN

UanMethod::UanMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed)
    : UniDAMethod(config, backbone, seed),
      discriminator_(backbone.feature_dim, config.head_hidden, 1, heads_rng_),
      domain_head_(backbone.feature_dim, config.head_hidden, 1, heads_rng_) {}

void UanMethod::collect_heads(std::vector<Parameter>& out) const {
  discriminator_.collect("uan.discriminator", out);
  domain_head_.collect("uan.domain_head", out);
}

std::pair<Tensor, LossBreakdown> UanMethod::compute_loss(const Batch& source, const Batch& target) {
  Tensor fs, cls;
  source_logits_and_loss(source, fs, cls);
  const Tensor ft = backbone_->forward(target.x, true);
  const std::array<Tensor, 2> parts{fs, ft};
  const Tensor features = concat(parts, 0);
  std::vector<double> domain(features.dim(0), 0.0);
  std::fill(domain.begin(), domain.begin() + static_cast<long>(fs.dim(0)), 1.0);

  const Tensor align =
      binary_cross_entropy_with_logits(discriminator_(gradient_reversal(features, config_.lambda_align)), domain);
  const Tensor aux = binary_cross_entropy_with_logits(domain_head_(features.detach()), domain);
  const Tensor total = combine(cls, align, aux, 1.0, config_.lambda_aux);
  LossBreakdown b = breakdown(cls, align, aux, 1.0, config_.lambda_aux);
  b.total = total.item();
  return {total, b};
}

std::vector<double> UanMethod::domain_probability(const Tensor& features) const {
  const Tensor p = sigmoid(domain_head_(features.detach()));
  return {p.values().begin(), p.values().end()};
}

PredictionBatch UanMethod::detect(const Tensor& x) {
  const auto [features, logits] = embed(x);
  PredictionBatch out = argmax_predictions(logits);
  const auto prob = domain_probability(features);
  const std::size_t c = config_.n_classes;
  const double log_classes = std::log(static_cast<double>(c));
  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (config_.uan_score == UanScore::DomainEntropy) {
      const std::array<double, 2> p{prob[i], 1.0 - prob[i]};
      out.scores[i] = entropy(p);
      if (out.scores[i] > config_.uan_threshold) out.labels[i] = kUnknown;
    } else {
      const double h = c > 1 ? entropy(softmax_row(logits.values().subspan(i * c, c))) / log_classes : 0.0;
      out.scores[i] = prob[i] - h;
      if (out.scores[i] < config_.uan_threshold) out.labels[i] = kUnknown;
    }
  }
  return out;
}

// ---------------------------------------------------------------- OVANet

OvanetMethod::OvanetMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed)
    : UniDAMethod(config, backbone, seed), ova_(backbone.feature_dim, 2 * config.n_classes, heads_rng_) {}

void OvanetMethod::collect_heads(std::vector<Parameter>& out) const { ova_.collect("ovanet.ova", out); }

Tensor OvanetMethod::ova_logits(const Tensor& features) const {
  return reshape(ova_(features), {features.dim(0), 2, config_.n_classes});
}

Tensor OvanetMethod::negative_probabilities(const Tensor& features) const {
  const Tensor p = softmax(ova_logits(features), 1);
  return reshape(slice(p, 1, 0, 1), {features.dim(0), config_.n_classes}).detach();
}

int OvanetMethod::decide(int argmax_class, double negative_probability, double threshold) {
  return negative_probability > threshold ? kUnknown : argmax_class;
}

std::pair<Tensor, LossBreakdown> OvanetMethod::compute_loss(const Batch& source, const Batch& target) {
  Tensor fs, cls;
  source_logits_and_loss(source, fs, cls);
  const std::size_t bs = fs.dim(0), c = config_.n_classes;

  // Channel 0 holds the negative side, channel 1 the positive side.
  const Tensor log_p = reshape(log_softmax(ova_logits(fs), 1), {bs, 2 * c});
  std::vector<int> positive(bs);
  for (std::size_t i = 0; i < bs; ++i) positive[i] = static_cast<int>(c) + source.labels[i];
  Tensor aux = neg(mean(pick(log_p, positive)));
  if (c > 1) {
    std::vector<int> hard_negative(bs);
    for (std::size_t i = 0; i < bs; ++i) {
      int best = -1;
      double lowest = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < c; ++j) {
        if (static_cast<int>(j) == source.labels[i]) continue;
        const double v = log_p.values()[i * 2 * c + j];
        if (v < lowest) {
          lowest = v;
          best = static_cast<int>(j);
        }
      }
      hard_negative[i] = best;
    }
    aux = aux - mean(pick(log_p, hard_negative));
  }

  const Tensor ft = backbone_->forward(target.x, true);
  const Tensor logits_t = ova_logits(ft);
  const Tensor ent = neg(sum(softmax(logits_t, 1) * log_softmax(logits_t, 1), 1));
  const Tensor align = mean(ent);

  const Tensor total = combine(cls, align, aux, config_.lambda_align, config_.lambda_aux);
  LossBreakdown b = breakdown(cls, align, aux, config_.lambda_align, config_.lambda_aux);
  b.total = total.item();
  return {total, b};
}

PredictionBatch OvanetMethod::detect(const Tensor& x) {
  const auto [features, logits] = embed(x);
  PredictionBatch out = argmax_predictions(logits);
  const Tensor neg_p = negative_probabilities(features);
  const std::size_t c = config_.n_classes;
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    const int k = out.labels[i];
    out.scores[i] = neg_p.values()[i * c + static_cast<std::size_t>(k)];
    out.labels[i] = decide(k, out.scores[i], config_.ovanet_threshold);
  }
  return out;
}

// ---------------------------------------------------------------- DANCE

DanceMethod::DanceMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed)
    : UniDAMethod(config, backbone, seed) {}

void DanceMethod::begin_training(const Tensor& source_x, std::span<const int> source_y, const Tensor& target_x) {
  UniDAMethod::begin_training(source_x, source_y, target_x);
  const Tensor f = l2_normalize(embed(target_x).first, 1);
  const std::size_t n = f.dim(0), k = f.dim(1);
  bank_.assign(n, std::vector<double>(k));
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(f.values().begin() + static_cast<long>(i * k), k, bank_[i].begin());
}

std::pair<Tensor, LossBreakdown> DanceMethod::compute_loss(const Batch& source, const Batch& target) {
  if (bank_.empty()) throw ContractError("begin_training must precede training steps");
  if (target.indices.size() != target.x.dim(0)) throw DimensionError("target batch needs one index per sample");
  Tensor fs, cls;
  source_logits_and_loss(source, fs, cls);
  const Tensor ft = backbone_->forward(target.x, true);
  const Tensor f = l2_normalize(ft, 1);
  const std::size_t bt = f.dim(0), n = bank_.size(), k = f.dim(1), c = config_.n_classes;

  std::vector<double> bank_t(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t d = 0; d < k; ++d) bank_t[d * n + j] = bank_[j][d];
  std::vector<double> mask(bt * (n + c), 0.0);
  for (std::size_t i = 0; i < bt; ++i) {
    const std::size_t self = target.indices[i];
    if (self >= n) throw ContractError("target index outside the memory bank");
    mask[i * (n + c) + self] = kMaskedLogit;
  }
  const Tensor prototypes = l2_normalize(classifier_.weight, 1);
  const std::array<Tensor, 2> sims{matmul(f, Tensor({k, n}, std::move(bank_t))),
                                   matmul(f, transpose(prototypes, 0, 1))};
  const Tensor sim_logits = concat(sims, 1) * (1.0 / config_.dance_temperature) + Tensor({bt, n + c}, std::move(mask));
  const Tensor align = mean(neg(sum(softmax(sim_logits, 1) * log_softmax(sim_logits, 1), 1)));

  const Tensor logits_t = classifier_(ft);
  const Tensor h = neg(sum(softmax(logits_t, 1) * log_softmax(logits_t, 1), 1));
  const double rho = config_.effective_dance_margin();
  std::vector<double> w(bt);
  for (std::size_t i = 0; i < bt; ++i) {
    const double d = h.values()[i] - rho;
    w[i] = std::abs(d) > config_.dance_separation_margin ? (d > 0 ? -1.0 : 1.0) : 0.0;
  }
  const Tensor aux = mean((h - rho) * Tensor({bt}, std::move(w)));

  last_features_ = f.detach();
  last_indices_ = target.indices;
  const Tensor total = combine(cls, align, aux, config_.lambda_align, config_.lambda_aux);
  LossBreakdown b = breakdown(cls, align, aux, config_.lambda_align, config_.lambda_aux);
  b.total = total.item();
  return {total, b};
}

void DanceMethod::after_step() {
  const std::size_t k = last_features_.defined() ? last_features_.dim(1) : 0;
  for (std::size_t i = 0; i < last_indices_.size(); ++i)
    std::copy_n(last_features_.values().begin() + static_cast<long>(i * k), k, bank_[last_indices_[i]].begin());
}

PredictionBatch DanceMethod::detect(const Tensor& x) {
  const auto [features, logits] = embed(x);
  PredictionBatch out = argmax_predictions(logits);
  const std::size_t c = config_.n_classes;
  const double rho = config_.effective_dance_margin();
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    out.scores[i] = entropy(softmax_row(logits.values().subspan(i * c, c)));
    if (out.scores[i] > rho) out.labels[i] = kUnknown;
  }
  return out;
}

// ---------------------------------------------------------------- PPOT

PpotMethod::PpotMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed)
    : PrototypeMethod(config, backbone, seed) {}

std::pair<Tensor, LossBreakdown> PpotMethod::compute_loss(const Batch& source, const Batch& target) {
  Tensor fs, cls;
  source_logits_and_loss(source, fs, cls);
  update_prototypes(fs, source.labels);
  const Tensor ft = backbone_->forward(target.x, true);
  const Tensor cost = pairwise_sq_dist(prototypes_, ft);
  ot::SinkhornOptions opt;
  opt.epsilon = config_.ot_epsilon;
  opt.max_iter = config_.ot_max_iter;
  const auto mu = uniform_weights(cost.dim(0)), nu = uniform_weights(cost.dim(1));
  last_plan_ = ot::partial_sinkhorn(normalized_cost(cost), mu, nu, config_.ot_mass, opt);
  const Tensor align = sum(plan_tensor(last_plan_) * cost);
  const Tensor total = combine(cls, align, Tensor{}, config_.lambda_align, 0.0);
  LossBreakdown b = breakdown(cls, align, Tensor{}, config_.lambda_align, 0.0);
  b.total = total.item();
  return {total, b};
}

PredictionBatch PpotMethod::detect(const Tensor& x) {
  PredictionBatch out = argmax_predictions(embed(x).second);
  for (std::size_t i = 0; i < out.labels.size(); ++i)
    if (out.scores[i] < config_.ppot_threshold) out.labels[i] = kUnknown;
  return out;
}

// ---------------------------------------------------------------- UniOT

UniotMethod::UniotMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed)
    : PrototypeMethod(config, backbone, seed) {}

std::pair<Tensor, LossBreakdown> UniotMethod::compute_loss(const Batch& source, const Batch& target) {
  Tensor fs, cls;
  source_logits_and_loss(source, fs, cls);
  update_prototypes(fs, source.labels);
  const Tensor ft = backbone_->forward(target.x, true);
  const Tensor cost = pairwise_sq_dist(prototypes_, ft);
  ot::SinkhornOptions opt;
  opt.epsilon = config_.ot_epsilon;
  opt.max_iter = config_.ot_max_iter;
  const auto mu = uniform_weights(cost.dim(0)), nu = uniform_weights(cost.dim(1));
  last_plan_ = ot::sinkhorn(normalized_cost(cost), mu, nu, opt);
  const Tensor align = sum(plan_tensor(last_plan_) * cost);
  const Tensor total = combine(cls, align, Tensor{}, config_.lambda_align, 0.0);
  LossBreakdown b = breakdown(cls, align, Tensor{}, config_.lambda_align, 0.0);
  b.total = total.item();
  return {total, b};
}

PredictionBatch UniotMethod::detect(const Tensor& x) {
  const auto [features, logits] = embed(x);
  PredictionBatch out = argmax_predictions(logits);
  const Tensor cost = pairwise_sq_dist(prototypes_, features);
  ot::SinkhornOptions opt;
  opt.epsilon = config_.ot_epsilon;
  opt.max_iter = std::max<std::size_t>(config_.ot_max_iter, 2000);
  const auto mu = uniform_weights(cost.dim(0)), nu = uniform_weights(cost.dim(1));
  const auto plan = ot::partial_sinkhorn(normalized_cost(cost), mu, nu, config_.ot_mass, opt);
  out.scores = transported_mass_scores(plan.matrix);
  for (std::size_t i = 0; i < out.labels.size(); ++i)
    if (out.scores[i] < config_.uniot_threshold) out.labels[i] = kUnknown;
  return out;
}

// ---------------------------------------------------------------- UniJDOT

UnijdotMethod::UnijdotMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed)
    : PrototypeMethod(config, backbone, seed) {}

Tensor UnijdotMethod::joint_cost(const Tensor& source_features, std::span<const int> source_labels,
                                 const Tensor& target_features, const Tensor& target_logits) const {
  const auto idx = to_indices(source_labels);
  const Tensor label_cost = transpose(neg(index_select(log_softmax(target_logits, 1), 1, idx)), 0, 1);
  return pairwise_sq_dist(source_features, target_features) * config_.unijdot_alpha +
         label_cost * config_.unijdot_beta;
}

std::pair<Tensor, LossBreakdown> UnijdotMethod::compute_loss(const Batch& source, const Batch& target) {
  Tensor fs, cls;
  source_logits_and_loss(source, fs, cls);
  update_prototypes(fs, source.labels);
  const Tensor ft = backbone_->forward(target.x, true);
  const Tensor cost = joint_cost(fs, source.labels, ft, classifier_(ft));
  ot::SinkhornOptions opt;
  opt.epsilon = config_.ot_epsilon;
  opt.max_iter = config_.ot_max_iter;
  const auto mu = uniform_weights(cost.dim(0)), nu = uniform_weights(cost.dim(1));
  last_plan_ = ot::sinkhorn(normalized_cost(cost), mu, nu, opt);
  const Tensor align = sum(plan_tensor(last_plan_) * cost);
  const Tensor total = combine(cls, align, Tensor{}, config_.lambda_align, 0.0);
  LossBreakdown b = breakdown(cls, align, Tensor{}, config_.lambda_align, 0.0);
  b.total = total.item();
  return {total, b};
}

PredictionBatch UnijdotMethod::detect(const Tensor& x) {
  const auto [features, logits] = embed(x);
  PredictionBatch out = argmax_predictions(logits);
  const Tensor dist = pairwise_sq_dist(features, prototypes_);
  const std::size_t n = out.labels.size(), c = prototypes_.dim(0);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = dist.values().subspan(i * c, c);
    d[i] = std::sqrt(std::max(0.0, *std::min_element(row.begin(), row.end())));
  }
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < n; ++i) {
    const double normalized = span > 0.0 ? (d[i] - *lo) / span : 0.0;
    out.scores[i] -= config_.unijdot_gamma * normalized;
  }
  const std::optional<double> threshold =
      config_.unijdot_threshold ? config_.unijdot_threshold : otsu_threshold(out.scores);
  if (threshold)
    for (std::size_t i = 0; i < n; ++i)
      if (out.scores[i] < *threshold) out.labels[i] = kUnknown;
  return out;
}

std::unique_ptr<UniDAMethod> make_method(const MethodConfig& config, const BackboneConfig& backbone,
                                         std::uint64_t seed) {
  switch (config.kind) {
    case MethodKind::Uan: return std::make_unique<UanMethod>(config, backbone, seed);
    case MethodKind::Ovanet: return std::make_unique<OvanetMethod>(config, backbone, seed);
    case MethodKind::Dance: return std::make_unique<DanceMethod>(config, backbone, seed);
    case MethodKind::Ppot: return std::make_unique<PpotMethod>(config, backbone, seed);
    case MethodKind::Uniot: return std::make_unique<UniotMethod>(config, backbone, seed);
    case MethodKind::Unijdot: return std::make_unique<UnijdotMethod>(config, backbone, seed);
  }
  throw ConfigError("unknown method kind");
}

}  // namespace unida
