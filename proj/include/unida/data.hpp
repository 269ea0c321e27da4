#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unida/tensor.hpp"

namespace unida {

/// Windowed multivariate series of one domain, samples stored [N, D, T].
struct TimeSeriesDataset {
  std::string domain_id;
  std::size_t n = 0;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> samples;
  std::vector<int> labels;
  std::vector<std::string> class_names;

  /// Throws FormatError on inconsistent sizes, labels outside
  /// [0, n_classes) or non-finite samples.
  void validate(std::size_t n_classes) const;
  Tensor tensor() const;
  /// Rows `indices` as a [k, D, T] tensor.
  Tensor gather(std::span<const std::size_t> indices) const;
  /// New dataset holding rows `indices`.
  TimeSeriesDataset subset(std::span<const std::size_t> indices) const;
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct DatasetMeta {
  std::size_t n_channels = 0;
  std::size_t window_len = 0;
  std::size_t n_classes = 0;
  std::vector<std::string> domains;
  std::vector<std::string> class_names;
  std::optional<ChannelStats> normalization;
};

struct Dataset {
  DatasetMeta meta;
  std::map<std::string, TimeSeriesDataset> domains;

  const TimeSeriesDataset& domain(const std::string& id) const;
};

/// Reads meta.json plus <domain>.f32 / <domain>.lbl for every declared domain
/// and applies the declared normalization. Throws FormatError naming the file
/// and byte offset on any mismatch.
Dataset load_dataset(const std::filesystem::path& root);

/// Writes meta.json and the binary files. Samples are stored as float32.
void save_dataset(const std::filesystem::path& root, const Dataset& dataset);

/// Resolves an explicit dataset path, falling back to $UNIDA_DATA_DIR when
/// `path` is empty. Throws ConfigError when neither is available.
std::filesystem::path resolve_data_dir(const std::string& path);

struct SyntheticSpec {
  std::size_t n_domains = 2;
  std::size_t n_classes = 5;
  std::size_t samples_per_class = 60;
  std::size_t channels = 3;
  std::size_t length = 64;
  double noise = 0.3;
  /// Domain d gets amplitude 1 + amplitude_shift * u, u ~ U(-1, 1).
  double amplitude_shift = 0.3;
  /// Per-domain, per-channel additive offset ~ N(0, offset_shift^2).
  double offset_shift = 0.5;
  /// Time axis stretched by 1 + warp_shift * u, u ~ U(-1, 1).
  double warp_shift = 0.1;
  /// Per-sample phase jitter, uniform in +-phase_jitter * pi / 2.
  double phase_jitter = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class c is a sinusoid with 2 + 2c cycles per window whose phase and
/// amplitude vary per channel; domains differ by amplitude, offset and time
/// warp; per-sample phase jitter and Gaussian noise on top. Values are rounded to float32
/// so that save/load round-trips exactly. Domains are named "d0", "d1", ...
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Slices series [D, L] into windows [N, D, window_len] with
/// N = (L - window_len) / stride + 1; the trailing remainder is dropped.
Tensor window(const Tensor& series, std::size_t window_len, std::size_t stride);

/// Per-channel mean and standard deviation over all samples and time steps.
ChannelStats channel_stats(const TimeSeriesDataset& data);
/// (x - mean) / std per channel; channels with zero spread are only centered.
void normalize(TimeSeriesDataset& data, const ChannelStats& stats);

}  // namespace unida
