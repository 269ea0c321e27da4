#include "unida/backbones.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "unida/error.hpp"
#include "unida/fft.hpp"
#include "unida/ops.hpp"

namespace unida {

using detail::Node;

std::string_view to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::Cnn: return "cnn";
    case BackboneKind::Fno: return "fno";
    case BackboneKind::S3: return "s3";
    case BackboneKind::TslaNet: return "tslanet";
  }
  return "unknown";
}

BackboneKind parse_backbone_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "cnn") return BackboneKind::Cnn;
  if (lower == "fno") return BackboneKind::Fno;
  if (lower == "s3") return BackboneKind::S3;
  if (lower == "tslanet") return BackboneKind::TslaNet;
  throw ConfigError("unknown backbone '" + std::string(name) + "'");
}

std::size_t padded_length(std::size_t length, std::size_t block) {
  if (block == 0) throw ConfigError("block size must be positive");
  return (length + block - 1) / block * block;
}

void BackboneConfig::validate() const {
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
  if (seq_len == 0) throw ConfigError("seq_len must be positive");
  if (feature_dim == 0) throw ConfigError("feature_dim must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (cnn_widths[0] == 0 || cnn_widths[1] == 0) throw ConfigError("CNN widths must be positive");
  const std::size_t cnn_len = kind == BackboneKind::S3 ? padded_length(seq_len, n_segments) : seq_len;
  for (std::size_t k : cnn_kernels) {
    if (k == 0) throw ConfigError("CNN kernel sizes must be positive");
    if (k > cnn_len)
      throw ConfigError("sequence length " + std::to_string(cnn_len) + " is shorter than kernel size " +
                        std::to_string(k));
  }
  switch (kind) {
    case BackboneKind::Cnn: break;
    case BackboneKind::Fno:
      if (n_fourier_modes == 0 || fourier_width == 0 || fourier_features == 0)
        throw ConfigError("FNO sizes must be positive");
      if (n_fourier_modes > rfft_bins(seq_len))
        throw ConfigError("n_fourier_modes " + std::to_string(n_fourier_modes) + " exceeds " +
                          std::to_string(rfft_bins(seq_len)) + " available frequency bins");
      break;
    case BackboneKind::S3:
      if (n_segments == 0) throw ConfigError("n_segments must be positive");
      if (n_segments > seq_len) throw ConfigError("n_segments exceeds sequence length");
      if (!(s3_temperature > 0.0)) throw ConfigError("s3_temperature must be positive");
      break;
    case BackboneKind::TslaNet:
      if (patch_size == 0 || embed_dim == 0 || icb_hidden == 0) throw ConfigError("TSLANet sizes must be positive");
      if (patch_size > seq_len) throw ConfigError("patch_size exceeds sequence length");
      if (!(mask_temperature > 0.0)) throw ConfigError("mask_temperature must be positive");
      break;
  }
}

std::vector<Parameter> Backbone::parameters(const std::string& prefix) const {
  std::vector<Parameter> out;
  collect(prefix, out);
  return out;
}

// ---------------------------------------------------------------- CNN

CnnBackbone::CnnBackbone(const BackboneConfig& config, Rng& rng) : Backbone(config, rng.derive("dropout")) {
  const std::array<std::size_t, 4> widths{config.in_channels, config.cnn_widths[0], config.cnn_widths[1],
                                          config.feature_dim};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t k = config.cnn_kernels[i];
    convs_[i] = nn::Conv1d(widths[i], widths[i + 1], k, rng, k / 2);
  }
}

Tensor CnnBackbone::forward(const Tensor& x, bool train) {
  if (x.rank() != 3 || x.dim(1) != config_.in_channels)
    throw DimensionError("CNN expects [B, " + std::to_string(config_.in_channels) + ", T], got " +
                         to_string(x.shape()));
  Tensor h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i](h);
    const Shape s = h.shape();
    h = reshape(layer_norm(reshape(h, {s[0], s[1] * s[2]})), s);
    h = relu(h);
    if (i + 1 < convs_.size()) h = dropout(h, config_.dropout, train, dropout_rng_);
  }
  return mean(h, 2);
}

void CnnBackbone::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(prefix + ".conv" + std::to_string(i + 1), out);
}

// ---------------------------------------------------------------- FNO

std::vector<double> cosine_window(std::size_t bins) {
  std::vector<double> w(bins);
  for (std::size_t f = 0; f < bins; ++f)
    w[f] = std::cos(std::numbers::pi * static_cast<double>(f) / (2.0 * static_cast<double>(bins)));
  return w;
}

FnoBackbone::FnoBackbone(const BackboneConfig& config, Rng& rng)
    : Backbone(config, rng.derive("dropout")), cnn_(config, rng) {
  const std::size_t o = config.fourier_width, d = config.in_channels, m = config.n_fourier_modes;
  const double std_mix = 1.0 / std::sqrt(static_cast<double>(d * m));
  mix_real_ = Tensor::randn({o, d, m}, rng, std_mix, true);
  mix_imag_ = Tensor::randn({o, d, m}, rng, std_mix, true);
  freq_proj_ = nn::Linear(o * 2 * m, config.fourier_features, rng);
  fuse_ = nn::Linear(config.feature_dim + config.fourier_features, config.feature_dim, rng);
}

std::pair<Tensor, Tensor> FnoBackbone::polar_spectrum(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(1) != config_.in_channels)
    throw DimensionError("FNO expects [B, " + std::to_string(config_.in_channels) + ", T], got " +
                         to_string(x.shape()));
  const std::size_t b = x.dim(0), d = x.dim(1), m = config_.n_fourier_modes;
  if (m > rfft_bins(x.dim(2))) throw DimensionError("too few frequency bins for n_fourier_modes");
  const ComplexTensor spec = fft_rfft(x);
  const std::size_t bins = spec.real.dim(2);
  const std::vector<double> w = cosine_window(bins);
  const Tensor window = Tensor({1, 1, m}, std::vector<double>(w.begin(), w.begin() + static_cast<long>(m)));
  const Tensor xr = reshape(slice(spec.real, 2, 0, m) * window, {b, 1, d, m});
  const Tensor xi = reshape(slice(spec.imag, 2, 0, m) * window, {b, 1, d, m});
  const Tensor yr = sum(xr * mix_real_ - xi * mix_imag_, 2);
  const Tensor yi = sum(xr * mix_imag_ + xi * mix_real_, 2);
  return {magnitude(yr, yi), phase(yr, yi)};
}

Tensor FnoBackbone::frequency_features(const Tensor& x) const {
  const auto [r, theta] = polar_spectrum(x);
  const std::size_t b = r.dim(0);
  const std::array<Tensor, 2> parts{r, theta};
  const Tensor polar = concat(parts, 2);
  return freq_proj_(reshape(polar, {b, polar.numel() / b}));
}

Tensor FnoBackbone::forward(const Tensor& x, bool train) {
  const std::array<Tensor, 2> parts{cnn_.forward(x, train), frequency_features(x)};
  return fuse_(concat(parts, 1));
}

void FnoBackbone::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  cnn_.collect(prefix + ".cnn", out);
  out.push_back({prefix + ".spectral.mix_real", mix_real_});
  out.push_back({prefix + ".spectral.mix_imag", mix_imag_});
  freq_proj_.collect(prefix + ".spectral.proj", out);
  fuse_.collect(prefix + ".fuse", out);
}

// ---------------------------------------------------------------- S3

std::vector<std::size_t> segment_order(std::span<const double> priority) {
  std::vector<std::size_t> order(priority.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return priority[a] > priority[b]; });
  return order;
}

Tensor segment_shuffle(const Tensor& x, const Tensor& priority, double temperature) {
  if (x.rank() != 3) throw DimensionError("segment_shuffle expects [B, D, T]");
  const std::size_t n = priority.numel();
  if (n == 0 || x.dim(2) % n != 0)
    throw DimensionError("segment_shuffle: length " + std::to_string(x.dim(2)) + " not divisible into " +
                         std::to_string(n) + " segments");
  if (!(temperature > 0.0)) throw ContractError("segment_shuffle temperature must be positive");
  const std::size_t rows = x.dim(0) * x.dim(1), t = x.dim(2), len = t / n;
  const std::vector<std::size_t> order = segment_order(priority.values());
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < n; ++k)
      std::copy_n(xv.begin() + static_cast<long>(r * t + order[k] * len), len,
                  out.begin() + static_cast<long>(r * t + k * len));

  return make_op(x.shape(), std::move(out), {x, priority}, [order, rows, t, len, n, temperature](const Node& self) {
    const Node& xn = *self.parents[0];
    if (xn.requires_grad) {
      auto& gx = self.parents[0]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t i = 0; i < len; ++i) gx[r * t + order[k] * len + i] += self.grad[r * t + k * len + i];
    }
    if (self.parents[1]->requires_grad) {
      const auto& p = self.parents[1]->value;
      std::vector<double> a(n, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t j = order[k];
          double acc = 0;
          for (std::size_t i = 0; i < len; ++i) acc += self.grad[r * t + k * len + i] * xn.value[r * t + j * len + i];
          a[j] += acc;
        }
      const double pmax = *std::max_element(p.begin(), p.end());
      std::vector<double> w(n);
      double z = 0;
      for (std::size_t i = 0; i < n; ++i) z += (w[i] = std::exp((p[i] - pmax) / temperature));
      const double total = std::accumulate(a.begin(), a.end(), 0.0);
      auto& gp = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) gp[i] += (a[i] - (w[i] / z) * total) / temperature;
    }
  });
}

S3Backbone::S3Backbone(const BackboneConfig& config, Rng& rng)
    : Backbone(config, rng.derive("dropout")),
      cnn_(
          [&] {
            BackboneConfig c = config;
            c.seq_len = padded_length(config.seq_len, config.n_segments);
            return c;
          }(),
          rng) {
  for (std::size_t l = 0; l < config.s3_layers; ++l)
    priorities_.push_back(Tensor::uniform({config.n_segments}, rng, 0.0, 1.0, true));
}

Tensor S3Backbone::stitched(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(1) != config_.in_channels)
    throw DimensionError("S3 expects [B, " + std::to_string(config_.in_channels) + ", T], got " +
                         to_string(x.shape()));
  Tensor h = pad_to(x, 2, padded_length(x.dim(2), config_.n_segments));
  for (const Tensor& p : priorities_) h = segment_shuffle(h, p, config_.s3_temperature) + h;
  return h;
}

Tensor S3Backbone::forward(const Tensor& x, bool train) { return cnn_.forward(stitched(x), train); }

void S3Backbone::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  for (std::size_t l = 0; l < priorities_.size(); ++l)
    out.push_back({prefix + ".s3." + std::to_string(l) + ".priority", priorities_[l]});
  cnn_.collect(prefix + ".cnn", out);
}

// ---------------------------------------------------------------- TSLANet

Tensor threshold_gate(const Tensor& power, const Tensor& threshold_logit, double temperature) {
  if (threshold_logit.numel() != 1) throw DimensionError("threshold logit must be a scalar");
  if (!(temperature > 0.0)) throw ContractError("threshold_gate temperature must be positive");
  const double logit = threshold_logit.item();
  const double thr = 1.0 / (1.0 + std::exp(-logit));
  const auto& pv = power.values();
  std::vector<double> out(pv.size());
  for (std::size_t i = 0; i < pv.size(); ++i) out[i] = pv[i] > thr ? 1.0 : 0.0;
  const Tensor constant_power = power.detach();
  return make_op(power.shape(), std::move(out), {threshold_logit, constant_power},
                 [thr, temperature](const Node& self) {
                   if (!self.parents[0]->requires_grad) return;
                   const auto& pv = self.parents[1]->value;
                   double acc = 0;
                   for (std::size_t i = 0; i < pv.size(); ++i) {
                     const double z = (pv[i] - thr) / temperature;
                     const double s = 1.0 / (1.0 + std::exp(-z));
                     acc += self.grad[i] * s * (1.0 - s) * (-thr * (1.0 - thr) / temperature);
                   }
                   self.parents[0]->grad_buffer()[0] += acc;
                 });
}

IcbTerms icb_terms(const Tensor& s, const nn::Conv1d& conv1, const nn::Conv1d& conv2) {
  const Tensor c1 = conv1(s);
  const Tensor c2 = conv2(s);
  return {gelu(c1) * c2, gelu(c2) * c1};
}

Tensor interactive_conv_block(const Tensor& s, const nn::Conv1d& conv1, const nn::Conv1d& conv2,
                              const nn::Conv1d& conv3) {
  const IcbTerms terms = icb_terms(s, conv1, conv2);
  return conv3(terms.a1 + terms.a2);
}

TslaNetBackbone::TslaNetBackbone(const BackboneConfig& config, Rng& rng)
    : Backbone(config, rng.derive("dropout")),
      n_patches_(padded_length(config.seq_len, config.patch_size) / config.patch_size) {
  const std::size_t e = config.embed_dim, bins = rfft_bins(n_patches_), h = config.icb_hidden;
  patch_embed_ = nn::Linear(config.in_channels * config.patch_size, e, rng);
  position_ = Tensor::randn({n_patches_, e}, rng, 0.02, true);
  for (std::size_t l = 0; l < config.tslanet_layers; ++l) {
    Layer layer;
    layer.filter_real = Tensor::randn({e, bins}, rng, 0.02, true);
    layer.filter_imag = Tensor::randn({e, bins}, rng, 0.02, true);
    layer.high_filter_real = Tensor::randn({e, bins}, rng, 0.02, true);
    layer.high_filter_imag = Tensor::randn({e, bins}, rng, 0.02, true);
    layer.threshold_logit = Tensor::scalar(0.0, true);
    layer.norm = nn::LayerNorm(e);
    layer.conv1 = nn::Conv1d(e, h, 1, rng);
    layer.conv2 = nn::Conv1d(e, h, 3, rng, 1);
    layer.conv3 = nn::Conv1d(h, e, 1, rng);
    layers_.push_back(std::move(layer));
  }
  head_ = nn::Linear(e, config.feature_dim, rng);
}

Tensor TslaNetBackbone::embed(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(1) != config_.in_channels)
    throw DimensionError("TSLANet expects [B, " + std::to_string(config_.in_channels) + ", T], got " +
                         to_string(x.shape()));
  const std::size_t b = x.dim(0), d = x.dim(1), p = config_.patch_size;
  const std::size_t n = padded_length(x.dim(2), p) / p;
  if (n != n_patches_) throw DimensionError("TSLANet built for " + std::to_string(n_patches_) + " patches, got " +
                                            std::to_string(n));
  Tensor patches = reshape(pad_to(x, 2, n * p), {b, d, n, p});
  patches = reshape(permute(patches, {0, 2, 1, 3}), {b, n, d * p});
  return patch_embed_(patches) + position_;
}

Tensor TslaNetBackbone::adaptive_spectral_block(const Tensor& h, const Layer& layer) const {
  const std::size_t b = h.dim(0), n = h.dim(1), e = h.dim(2);
  const ComplexTensor spec = fft_rfft(transpose(h, 1, 2));  // [B, E, F]
  const std::size_t bins = spec.real.dim(2);

  const auto& re = spec.real.values();
  const auto& im = spec.imag.values();
  std::vector<double> power(b * bins, 0.0);
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t c = 0; c < e; ++c)
      for (std::size_t f = 0; f < bins; ++f) {
        const std::size_t i = (s * e + c) * bins + f;
        power[s * bins + f] += re[i] * re[i] + im[i] * im[i];
      }
    double avg = 0;
    for (std::size_t f = 0; f < bins; ++f) avg += power[s * bins + f];
    avg /= static_cast<double>(bins);
    for (std::size_t f = 0; f < bins; ++f) power[s * bins + f] = avg > 0 ? power[s * bins + f] / avg : 0.0;
  }
  const Tensor mask =
      reshape(threshold_gate(Tensor({b, bins}, std::move(power)), layer.threshold_logit, config_.mask_temperature),
              {b, 1, bins});

  const Tensor& xr = spec.real;
  const Tensor& xi = spec.imag;
  const Tensor mr = xr * mask, mi = xi * mask;
  const Tensor yr = xr * layer.filter_real - xi * layer.filter_imag + mr * layer.high_filter_real -
                    mi * layer.high_filter_imag;
  const Tensor yi = xr * layer.filter_imag + xi * layer.filter_real + mr * layer.high_filter_imag +
                    mi * layer.high_filter_real;
  return transpose(fft_irfft({yr, yi}, n), 1, 2);
}

Tensor TslaNetBackbone::forward(const Tensor& x, bool) {
  Tensor h = embed(x);
  for (const Layer& layer : layers_) {
    const Tensor a = h + adaptive_spectral_block(h, layer);
    const Tensor s = transpose(layer.norm(a), 1, 2);
    h = a + transpose(interactive_conv_block(s, layer.conv1, layer.conv2, layer.conv3), 1, 2);
  }
  return head_(mean(h, 1));
}

void TslaNetBackbone::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  patch_embed_.collect(prefix + ".patch_embed", out);
  out.push_back({prefix + ".position", position_});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    const Layer& layer = layers_[l];
    out.push_back({p + ".asb.filter_real", layer.filter_real});
    out.push_back({p + ".asb.filter_imag", layer.filter_imag});
    out.push_back({p + ".asb.high_filter_real", layer.high_filter_real});
    out.push_back({p + ".asb.high_filter_imag", layer.high_filter_imag});
    out.push_back({p + ".asb.threshold", layer.threshold_logit});
    layer.norm.collect(p + ".norm", out);
    layer.conv1.collect(p + ".icb.conv1", out);
    layer.conv2.collect(p + ".icb.conv2", out);
    layer.conv3.collect(p + ".icb.conv3", out);
  }
  head_.collect(prefix + ".head", out);
}

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config, Rng& rng) {
  config.validate();
  switch (config.kind) {
    case BackboneKind::Cnn: return std::make_unique<CnnBackbone>(config, rng);
    case BackboneKind::Fno: return std::make_unique<FnoBackbone>(config, rng);
    case BackboneKind::S3: return std::make_unique<S3Backbone>(config, rng);
    case BackboneKind::TslaNet: return std::make_unique<TslaNetBackbone>(config, rng);
  }
  throw ConfigError("unknown backbone kind");
}

}  // namespace unida
