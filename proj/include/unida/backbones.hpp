#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unida/nn.hpp"
#include "unida/rng.hpp"
#include "unida/tensor.hpp"

namespace unida {

enum class BackboneKind { Cnn, Fno, S3, TslaNet };

std::string_view to_string(BackboneKind kind);
/// Accepts "cnn", "fno", "s3", "tslanet" (case-insensitive).
BackboneKind parse_backbone_kind(std::string_view name);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::Cnn;
  std::size_t in_channels = 1;
  std::size_t seq_len = 128;
  std::size_t feature_dim = 64;

  // CNN: widths of the first two blocks; the third block outputs feature_dim.
  std::array<std::size_t, 2> cnn_widths{32, 64};
  std::array<std::size_t, 3> cnn_kernels{8, 5, 3};
  double dropout = 0.0;

  // FNO frequency branch.
  std::size_t n_fourier_modes = 16;
  std::size_t fourier_width = 8;
  std::size_t fourier_features = 32;

  // S3.
  std::size_t n_segments = 4;
  std::size_t s3_layers = 3;
  double s3_temperature = 0.1;

  // TSLANet.
  std::size_t patch_size = 8;
  std::size_t embed_dim = 32;
  std::size_t tslanet_layers = 2;
  std::size_t icb_hidden = 64;
  double mask_temperature = 0.1;

  /// Throws ConfigError on inconsistent fields.
  void validate() const;
};

/// Smallest multiple of `block` that is >= length.
std::size_t padded_length(std::size_t length, std::size_t block);

/// Feature extractor mapping [B, D, T] to [B, K].
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual void collect(const std::string& prefix, std::vector<Parameter>& out) const = 0;

  std::vector<Parameter> parameters(const std::string& prefix = "backbone") const;
  BackboneKind kind() const { return config_.kind; }
  std::size_t feature_dim() const { return config_.feature_dim; }
  const BackboneConfig& config() const { return config_; }

 protected:
  Backbone(BackboneConfig config, Rng dropout_rng) : config_(std::move(config)), dropout_rng_(dropout_rng) {}

  BackboneConfig config_;
  Rng dropout_rng_;
};

/// Three conv blocks (conv -> layer norm over channels and time -> ReLU),
/// global average pooling after the last block.
class CnnBackbone final : public Backbone {
 public:
  CnnBackbone(const BackboneConfig& config, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  void collect(const std::string& prefix, std::vector<Parameter>& out) const override;

 private:
  std::array<nn::Conv1d, 3> convs_;
};

/// Cosine smoothing window over F bins: w[f] = cos(pi f / (2F)).
std::vector<double> cosine_window(std::size_t bins);

/// CNN features concatenated with a polar-coordinate spectral branch and
/// projected to feature_dim.
class FnoBackbone final : public Backbone {
 public:
  FnoBackbone(const BackboneConfig& config, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  void collect(const std::string& prefix, std::vector<Parameter>& out) const override;

  /// Radii and angles [B, fourier_width, n_fourier_modes] of the mixed,
  /// smoothed low-frequency coefficients.
  std::pair<Tensor, Tensor> polar_spectrum(const Tensor& x) const;
  /// Flattened polar features projected to fourier_features.
  Tensor frequency_features(const Tensor& x) const;

 private:
  CnnBackbone cnn_;
  Tensor mix_real_, mix_imag_;  // [width, D, modes]
  nn::Linear freq_proj_;
  nn::Linear fuse_;
};

/// Stable descending argsort: highest priority first, ties keep index order.
std::vector<std::size_t> segment_order(std::span<const double> priority);

/// Segment-shuffle: splits the last axis of x [B, D, T] into priority.numel()
/// equal segments and concatenates them in segment_order(priority). Forward is
/// the hard permutation; the priority receives a straight-through gradient
/// through softmax(priority / temperature) weights on the chosen segments.
Tensor segment_shuffle(const Tensor& x, const Tensor& priority, double temperature);

/// Three segment-shuffle-stitch layers (shuffle + residual) followed by the CNN.
class S3Backbone final : public Backbone {
 public:
  S3Backbone(const BackboneConfig& config, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  void collect(const std::string& prefix, std::vector<Parameter>& out) const override;

  /// Output of the shuffle stack before the CNN, on the padded length.
  Tensor stitched(const Tensor& x) const;
  std::vector<Tensor>& priorities() { return priorities_; }

 private:
  std::vector<Tensor> priorities_;
  CnnBackbone cnn_;
};

/// Hard mask with straight-through gradient to the threshold logit:
/// m = 1[power > sigmoid(logit)], backward through
/// sigmoid((power - sigmoid(logit)) / temperature). power is a constant.
Tensor threshold_gate(const Tensor& power, const Tensor& threshold_logit, double temperature);

struct IcbTerms {
  Tensor a1;  // gelu(conv1(s)) * conv2(s)
  Tensor a2;  // gelu(conv2(s)) * conv1(s)
};

/// The two gated products of the interactive convolution block, s: [B, E, N].
IcbTerms icb_terms(const Tensor& s, const nn::Conv1d& conv1, const nn::Conv1d& conv2);
/// conv3(a1 + a2).
Tensor interactive_conv_block(const Tensor& s, const nn::Conv1d& conv1, const nn::Conv1d& conv2,
                              const nn::Conv1d& conv3);

/// Patch embedding with positional encoding, then per layer
///   a = h + ASB(h);  h = a + ICB(LayerNorm(a)),
/// mean-pooled over patches and projected to feature_dim.
class TslaNetBackbone final : public Backbone {
 public:
  struct Layer {
    Tensor filter_real, filter_imag;            // [E, F]
    Tensor high_filter_real, high_filter_imag;  // [E, F]
    Tensor threshold_logit;                     // scalar
    nn::LayerNorm norm;
    nn::Conv1d conv1, conv2, conv3;
  };

  TslaNetBackbone(const BackboneConfig& config, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  void collect(const std::string& prefix, std::vector<Parameter>& out) const override;

  /// S_PE: embedded patches plus positional embedding, [B, N, E].
  Tensor embed(const Tensor& x) const;
  /// Adaptive spectral block on h [B, N, E].
  Tensor adaptive_spectral_block(const Tensor& h, const Layer& layer) const;
  std::vector<Layer>& layers() { return layers_; }

 private:
  std::size_t n_patches_;
  nn::Linear patch_embed_;
  Tensor position_;  // [N, E]
  std::vector<Layer> layers_;
  nn::Linear head_;
};

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config, Rng& rng);

}  // namespace unida
