#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unida/backbones.hpp"
#include "unida/nn.hpp"
#include "unida/optim.hpp"
#include "unida/ot.hpp"
#include "unida/rng.hpp"
#include "unida/tensor.hpp"

namespace unida {

/// Label emitted for samples rejected as belonging to no source class.
inline constexpr int kUnknown = -1;

enum class MethodKind { Uan, Ovanet, Dance, Ppot, Uniot, Unijdot };

std::string_view to_string(MethodKind kind);
/// Accepts "uan", "ovanet", "dance", "ppot", "uniot", "unijdot" (case-insensitive).
MethodKind parse_method_kind(std::string_view name);
const std::vector<MethodKind>& all_method_kinds();

/// UAN detection statistic. DomainEntropy: binary entropy of the
/// non-adversarial domain head, unknown above w0. Transferability:
/// P(source) - H(prediction) / ln|Y^s|, unknown below w0.
enum class UanScore { DomainEntropy, Transferability };
std::string_view to_string(UanScore score);
/// Accepts "domain_entropy" or "transferability".
UanScore parse_uan_score(std::string_view name);

struct MethodConfig {
  MethodKind kind = MethodKind::Unijdot;
  std::size_t n_classes = 2;  // |Y^s|

  double lr = 1e-3;
  double weight_decay = 0.0;
  /// Alignment weight. For UAN it is the gradient-reversal coefficient.
  double lambda_align = 1.0;
  /// Weight of the method's auxiliary term (UAN non-adversarial domain loss,
  /// OVANet source one-vs-all loss, DANCE entropy separation).
  double lambda_aux = 1.0;
  std::size_t head_hidden = 64;

  // Detection thresholds.
  UanScore uan_score = UanScore::DomainEntropy;
  double uan_threshold = 0.5;       // w0
  double ovanet_threshold = 0.5;    // on the argmax head's negative probability
  double ppot_threshold = 0.5;      // delta, on max softmax
  double uniot_threshold = 0.5;     // t, on scaled transported mass
  std::optional<double> dance_margin;  // rho; log(|Y^s|)/2 when unset
  double unijdot_gamma = 0.5;
  std::optional<double> unijdot_threshold;  // fixed threshold instead of Otsu

  // DANCE.
  double dance_temperature = 0.05;
  double dance_separation_margin = 0.5;

  // Optimal transport.
  double ot_epsilon = 0.05;
  double ot_mass = 0.75;
  std::size_t ot_max_iter = 500;
  double prototype_momentum = 0.9;
  double unijdot_alpha = 1.0;
  double unijdot_beta = 1.0;

  /// Throws ConfigError on invalid values.
  void validate() const;
  double effective_dance_margin() const;
};

struct LossBreakdown {
  double cls_loss = 0.0;
  double align_loss = 0.0;
  double aux_loss = 0.0;
  double total = 0.0;
  double align_weight = 0.0;
  double aux_weight = 0.0;
};

struct PredictionBatch {
  std::vector<int> labels;     // kUnknown or a class in [0, |Y^s|)
  std::vector<double> scores;  // the statistic compared against the threshold
};

/// A labeled (source) or unlabeled (target) minibatch. indices locate the rows
/// in the training set they were drawn from.
struct Batch {
  Tensor x;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// Shannon entropy in nats with 0 ln 0 = 0. Throws ContractError unless p is
/// nonnegative and sums to 1 within 1e-9.
double entropy(std::span<const double> p);

/// Otsu threshold over a `bins`-bin histogram spanning [min, max] of the
/// scores. Returns nullopt when all scores fall into a single bin. Ties in the
/// between-class variance are resolved by the midpoint of the maximizing cuts.
std::optional<double> otsu_threshold(std::span<const double> scores, std::size_t bins = 64);

/// Column sums of the plan times its column count, so a uniform column
/// marginal scores 1 everywhere.
std::vector<double> transported_mass_scores(const ot::Matrix& plan);

/// Backbone + linear classifier + method-specific heads, trained with Adam.
///
/// Backbone, classifier and heads draw their initial weights from separate
/// child streams of the seed, so two methods built from the same seed share
/// identical backbone and classifier weights.
class UniDAMethod {
 public:
  virtual ~UniDAMethod() = default;
  UniDAMethod(const UniDAMethod&) = delete;
  UniDAMethod& operator=(const UniDAMethod&) = delete;

  MethodKind kind() const { return config_.kind; }
  const MethodConfig& config() const { return config_; }
  MethodConfig& mutable_config() { return config_; }
  Backbone& backbone() { return *backbone_; }
  const nn::Linear& classifier() const { return classifier_; }

  /// Initializes data-dependent state (prototypes, memory bank) from the full
  /// source set and the target training set. Must precede compute_loss.
  virtual void begin_training(const Tensor& source_x, std::span<const int> source_y, const Tensor& target_x);

  /// Builds the training loss graph for one source/target batch pair.
  virtual std::pair<Tensor, LossBreakdown> compute_loss(const Batch& source, const Batch& target) = 0;

  /// zero_grad, compute_loss, backward, Adam step, then state updates.
  LossBreakdown train_step(const Batch& source, const Batch& target);

  /// Predictions for a whole evaluation set in eval mode.
  virtual PredictionBatch detect(const Tensor& x) = 0;

  std::vector<Parameter> parameters() const;
  std::vector<Parameter> backbone_parameters() const;

  /// Eval-mode features and classifier logits, detached, computed in chunks.
  std::pair<Tensor, Tensor> embed(const Tensor& x);

 protected:
  UniDAMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed);

  virtual void collect_heads(std::vector<Parameter>& /*out*/) const {}
  virtual void after_step() {}

  Tensor source_logits_and_loss(const Batch& source, Tensor& features, Tensor& cls_loss);
  static LossBreakdown breakdown(const Tensor& cls, const Tensor& align, const Tensor& aux, double align_weight,
                                 double aux_weight);
  Tensor combine(const Tensor& cls, const Tensor& align, const Tensor& aux, double align_weight,
                 double aux_weight) const;
  PredictionBatch argmax_predictions(const Tensor& logits) const;
  void init_optimizer();

  MethodConfig config_;
  Rng root_;
  Rng heads_rng_;
  std::unique_ptr<Backbone> backbone_;
  nn::Linear classifier_;
  std::unique_ptr<Adam> optimizer_;
};

/// Shared prototype table for the optimal-transport methods.
class PrototypeMethod : public UniDAMethod {
 public:
  void begin_training(const Tensor& source_x, std::span<const int> source_y, const Tensor& target_x) override;
  /// Class prototypes [|Y^s|, K].
  const Tensor& prototypes() const { return prototypes_; }

 protected:
  using UniDAMethod::UniDAMethod;
  /// m * prototype + (1 - m) * batch class mean, for classes in the batch.
  void update_prototypes(const Tensor& features, std::span<const int> labels);

  Tensor prototypes_;
};

class UanMethod final : public UniDAMethod {
 public:
  UanMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed);
  std::pair<Tensor, LossBreakdown> compute_loss(const Batch& source, const Batch& target) override;
  PredictionBatch detect(const Tensor& x) override;
  /// Sigmoid output of the non-adversarial domain head (probability of source).
  std::vector<double> domain_probability(const Tensor& features) const;
  nn::Mlp& discriminator() { return discriminator_; }
  nn::Mlp& domain_head() { return domain_head_; }

 private:
  void collect_heads(std::vector<Parameter>& out) const override;
  nn::Mlp discriminator_;
  nn::Mlp domain_head_;
};

class OvanetMethod final : public UniDAMethod {
 public:
  OvanetMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed);
  std::pair<Tensor, LossBreakdown> compute_loss(const Batch& source, const Batch& target) override;
  PredictionBatch detect(const Tensor& x) override;
  /// Negative-side probabilities [B, |Y^s|] of the one-vs-all heads.
  Tensor negative_probabilities(const Tensor& features) const;
  /// Reject rule given the closed-set argmax and the negative probability of its head.
  static int decide(int argmax_class, double negative_probability, double threshold = 0.5);
  /// Linear layer producing [negative | positive] logits, 2 * |Y^s| outputs.
  nn::Linear& ova_head() { return ova_; }

 private:
  void collect_heads(std::vector<Parameter>& out) const override;
  Tensor ova_logits(const Tensor& features) const;  // [B, 2, C]
  nn::Linear ova_;
};

class DanceMethod final : public UniDAMethod {
 public:
  DanceMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed);
  void begin_training(const Tensor& source_x, std::span<const int> source_y, const Tensor& target_x) override;
  std::pair<Tensor, LossBreakdown> compute_loss(const Batch& source, const Batch& target) override;
  PredictionBatch detect(const Tensor& x) override;
  /// L2-normalized target features, one row per target training sample.
  const std::vector<std::vector<double>>& memory_bank() const { return bank_; }
  /// Normalized features of the last target batch seen by compute_loss.
  const Tensor& last_target_features() const { return last_features_; }

 private:
  void after_step() override;
  std::vector<std::vector<double>> bank_;
  Tensor last_features_;
  std::vector<std::size_t> last_indices_;
};

class PpotMethod final : public PrototypeMethod {
 public:
  PpotMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed);
  std::pair<Tensor, LossBreakdown> compute_loss(const Batch& source, const Batch& target) override;
  PredictionBatch detect(const Tensor& x) override;
  const ot::TransportPlan& last_plan() const { return last_plan_; }

 private:
  ot::TransportPlan last_plan_;
};

class UniotMethod final : public PrototypeMethod {
 public:
  UniotMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed);
  std::pair<Tensor, LossBreakdown> compute_loss(const Batch& source, const Batch& target) override;
  PredictionBatch detect(const Tensor& x) override;
  const ot::TransportPlan& last_plan() const { return last_plan_; }

 private:
  ot::TransportPlan last_plan_;
};

class UnijdotMethod final : public PrototypeMethod {
 public:
  UnijdotMethod(const MethodConfig& config, const BackboneConfig& backbone, std::uint64_t seed);
  std::pair<Tensor, LossBreakdown> compute_loss(const Batch& source, const Batch& target) override;
  PredictionBatch detect(const Tensor& x) override;
  /// Joint cost [Bs, Bt]: alpha * squared distance + beta * CE(y_s, f(g(x_t))).
  Tensor joint_cost(const Tensor& source_features, std::span<const int> source_labels,
                    const Tensor& target_features, const Tensor& target_logits) const;
  const ot::TransportPlan& last_plan() const { return last_plan_; }

 private:
  ot::TransportPlan last_plan_;
};

std::unique_ptr<UniDAMethod> make_method(const MethodConfig& config, const BackboneConfig& backbone,
                                         std::uint64_t seed);

/// Solves the plan on cost / max(cost) and returns it as a constant tensor.
Tensor plan_tensor(const ot::TransportPlan& plan);
ot::Matrix to_matrix(const Tensor& t);

}  // namespace unida
