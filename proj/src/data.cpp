#include "unida/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "unida/error.hpp"
#include "unida/rng.hpp"

namespace unida {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kSampleMagic[4] = {'U', 'D', 'T', 'S'};
constexpr char kLabelMagic[4] = {'U', 'D', 'L', 'B'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kSampleHeader = 16;
constexpr std::size_t kLabelHeader = 8;

static_assert(std::endian::native == std::endian::little, "binary format assumes a little-endian host");

template <typename T>
T read_le(const std::vector<char>& bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

[[noreturn]] void format_error(const fs::path& file, std::size_t offset, const std::string& what) {
  throw FormatError(file.string() + " at offset " + std::to_string(offset) + ": " + what);
}

void require_size(const fs::path& file, const std::vector<char>& bytes, std::size_t needed) {
  if (bytes.size() < needed)
    format_error(file, bytes.size(), "truncated, expected " + std::to_string(needed) + " bytes, found " +
                                         std::to_string(bytes.size()));
  if (bytes.size() > needed) format_error(file, needed, "trailing bytes after declared payload");
}

DatasetMeta parse_meta(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  DatasetMeta meta;
  try {
    const json j = json::parse(in);
    meta.n_channels = j.at("n_channels").get<std::size_t>();
    meta.window_len = j.at("window_len").get<std::size_t>();
    meta.n_classes = j.at("n_classes").get<std::size_t>();
    meta.domains = j.at("domains").get<std::vector<std::string>>();
    if (j.contains("class_names")) meta.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (j.contains("normalization") && j.at("normalization").is_object()) {
      ChannelStats stats;
      stats.mean = j.at("normalization").at("mean").get<std::vector<double>>();
      stats.stddev = j.at("normalization").at("std").get<std::vector<double>>();
      meta.normalization = std::move(stats);
    }
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  if (meta.n_channels == 0 || meta.window_len == 0 || meta.n_classes == 0)
    throw FormatError(file.string() + ": n_channels, window_len and n_classes must be positive");
  if (meta.domains.empty()) throw FormatError(file.string() + ": no domains declared");
  if (!meta.class_names.empty() && meta.class_names.size() != meta.n_classes)
    throw FormatError(file.string() + ": class_names has " + std::to_string(meta.class_names.size()) +
                      " entries for " + std::to_string(meta.n_classes) + " classes");
  if (meta.normalization && (meta.normalization->mean.size() != meta.n_channels ||
                             meta.normalization->stddev.size() != meta.n_channels))
    throw FormatError(file.string() + ": normalization needs one mean and std per channel");
  return meta;
}

TimeSeriesDataset read_domain(const fs::path& root, const std::string& id, const DatasetMeta& meta) {
  TimeSeriesDataset data;
  data.domain_id = id;
  data.class_names = meta.class_names;

  const fs::path sample_file = root / (id + ".f32");
  const std::vector<char> s = read_file(sample_file);
  if (s.size() < kSampleHeader) format_error(sample_file, s.size(), "truncated header");
  if (std::memcmp(s.data(), kSampleMagic, 4) != 0) format_error(sample_file, 0, "bad magic, expected UDTS");
  const auto version = read_le<std::uint32_t>(s, 4);
  if (version != kFormatVersion) format_error(sample_file, 4, "unsupported version " + std::to_string(version));
  data.n = read_le<std::uint32_t>(s, 8);
  data.channels = read_le<std::uint16_t>(s, 12);
  data.length = read_le<std::uint16_t>(s, 14);
  if (data.channels != meta.n_channels)
    format_error(sample_file, 12, "D=" + std::to_string(data.channels) + " but meta declares " +
                                      std::to_string(meta.n_channels));
  if (data.length != meta.window_len)
    format_error(sample_file, 14, "T=" + std::to_string(data.length) + " but meta declares " +
                                      std::to_string(meta.window_len));
  const std::size_t count = data.n * data.channels * data.length;
  require_size(sample_file, s, kSampleHeader + 4 * count);
  data.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float v = read_le<float>(s, kSampleHeader + 4 * i);
    if (!std::isfinite(v)) format_error(sample_file, kSampleHeader + 4 * i, "non-finite sample value");
    data.samples[i] = v;
  }

  const fs::path label_file = root / (id + ".lbl");
  const std::vector<char> l = read_file(label_file);
  if (l.size() < kLabelHeader) format_error(label_file, l.size(), "truncated header");
  if (std::memcmp(l.data(), kLabelMagic, 4) != 0) format_error(label_file, 0, "bad magic, expected UDLB");
  const auto n_labels = read_le<std::uint32_t>(l, 4);
  if (n_labels != data.n)
    format_error(label_file, 4, std::to_string(n_labels) + " labels for " + std::to_string(data.n) + " samples");
  require_size(label_file, l, kLabelHeader + 4 * static_cast<std::size_t>(n_labels));
  data.labels.resize(n_labels);
  for (std::size_t i = 0; i < n_labels; ++i) {
    const auto y = read_le<std::int32_t>(l, kLabelHeader + 4 * i);
    if (y < 0 || static_cast<std::size_t>(y) >= meta.n_classes)
      format_error(label_file, kLabelHeader + 4 * i,
                   "label " + std::to_string(y) + " outside [0, " + std::to_string(meta.n_classes) + ")");
    data.labels[i] = y;
  }
  return data;
}

}  // namespace

void TimeSeriesDataset::validate(std::size_t n_classes) const {
  if (samples.size() != n * channels * length)
    throw FormatError(domain_id + ": sample buffer does not match [N, D, T]");
  if (labels.size() != n) throw FormatError(domain_id + ": label count differs from sample count");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes)
      throw FormatError(domain_id + ": label " + std::to_string(y) + " out of range");
  for (double v : samples)
    if (!std::isfinite(v)) throw FormatError(domain_id + ": non-finite sample");
}

Tensor TimeSeriesDataset::tensor() const { return Tensor({n, channels, length}, samples); }

Tensor TimeSeriesDataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t row = channels * length;
  std::vector<double> out(indices.size() * row);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= n) throw DimensionError("gather index out of range");
    std::copy_n(samples.begin() + static_cast<long>(indices[i] * row), row, out.begin() + static_cast<long>(i * row));
  }
  return Tensor({indices.size(), channels, length}, std::move(out));
}

TimeSeriesDataset TimeSeriesDataset::subset(std::span<const std::size_t> indices) const {
  TimeSeriesDataset out;
  out.domain_id = domain_id;
  out.n = indices.size();
  out.channels = channels;
  out.length = length;
  out.class_names = class_names;
  const Tensor rows = gather(indices);
  out.samples.assign(rows.values().begin(), rows.values().end());
  for (std::size_t i : indices) out.labels.push_back(labels[i]);
  return out;
}

const TimeSeriesDataset& Dataset::domain(const std::string& id) const {
  const auto it = domains.find(id);
  if (it == domains.end()) throw ConfigError("unknown domain '" + id + "'");
  return it->second;
}

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw FormatError("dataset directory " + root.string() + " does not exist");
  Dataset ds;
  ds.meta = parse_meta(root / "meta.json");
  for (const std::string& id : ds.meta.domains) {
    TimeSeriesDataset d = read_domain(root, id, ds.meta);
    if (ds.meta.normalization) normalize(d, *ds.meta.normalization);
    ds.domains.emplace(id, std::move(d));
  }
  return ds;
}

void save_dataset(const fs::path& root, const Dataset& dataset) {
  fs::create_directories(root);
  json meta;
  meta["n_channels"] = dataset.meta.n_channels;
  meta["window_len"] = dataset.meta.window_len;
  meta["n_classes"] = dataset.meta.n_classes;
  meta["domains"] = dataset.meta.domains;
  meta["class_names"] = dataset.meta.class_names;
  if (dataset.meta.normalization) {
    meta["normalization"] = {{"mean", dataset.meta.normalization->mean}, {"std", dataset.meta.normalization->stddev}};
  } else {
    meta["normalization"] = "none";
  }
  std::ofstream(root / "meta.json") << meta.dump(2) << '\n';

  for (const std::string& id : dataset.meta.domains) {
    const TimeSeriesDataset& d = dataset.domain(id);
    d.validate(dataset.meta.n_classes);
    if (d.channels != dataset.meta.n_channels || d.length != dataset.meta.window_len)
      throw FormatError(id + ": shape disagrees with meta");
    if (d.n > UINT32_MAX || d.channels > UINT16_MAX || d.length > UINT16_MAX)
      throw FormatError(id + ": dimensions exceed the header field widths");
    std::ofstream s(root / (id + ".f32"), std::ios::binary);
    s.write(kSampleMagic, 4);
    write_le<std::uint32_t>(s, kFormatVersion);
    write_le<std::uint32_t>(s, static_cast<std::uint32_t>(d.n));
    write_le<std::uint16_t>(s, static_cast<std::uint16_t>(d.channels));
    write_le<std::uint16_t>(s, static_cast<std::uint16_t>(d.length));
    for (double v : d.samples) write_le<float>(s, static_cast<float>(v));
    std::ofstream l(root / (id + ".lbl"), std::ios::binary);
    l.write(kLabelMagic, 4);
    write_le<std::uint32_t>(l, static_cast<std::uint32_t>(d.n));
    for (int y : d.labels) write_le<std::int32_t>(l, y);
    if (!s || !l) throw Error("failed writing domain " + id + " under " + root.string());
  }
}

fs::path resolve_data_dir(const std::string& path) {
  if (!path.empty()) return path;
  if (const char* env = std::getenv("UNIDA_DATA_DIR"); env != nullptr && *env != '\0') return env;
  throw ConfigError("no dataset path given and UNIDA_DATA_DIR is not set");
}

void SyntheticSpec::validate() const {
  if (n_domains == 0 || n_classes == 0 || samples_per_class == 0 || channels == 0 || length == 0)
    throw ConfigError("synthetic spec sizes must be positive");
  for (double v : {noise, amplitude_shift, offset_shift, warp_shift, phase_jitter})
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("synthetic shift parameters must be finite and >= 0");
  if (amplitude_shift >= 1.0 || warp_shift >= 1.0) throw ConfigError("amplitude and warp shifts must be < 1");
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t d_ch = spec.channels, t_len = spec.length;
  const Rng root(spec.seed);
  const Rng class_root = root.derive("class"), domain_root = root.derive("domain"),
            sample_root = root.derive("sample"), noise_root = root.derive("noise");

  std::vector<std::vector<double>> phase(spec.n_classes), amp(spec.n_classes);
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    Rng r = class_root.derive(c);
    for (std::size_t ch = 0; ch < d_ch; ++ch) {
      phase[c].push_back(r.uniform(0.0, 2.0 * std::numbers::pi));
      amp[c].push_back(r.uniform(0.5, 1.5));
    }
  }

  Dataset ds;
  ds.meta.n_channels = d_ch;
  ds.meta.window_len = t_len;
  ds.meta.n_classes = spec.n_classes;
  for (std::size_t c = 0; c < spec.n_classes; ++c) ds.meta.class_names.push_back("c" + std::to_string(c));

  for (std::size_t dom = 0; dom < spec.n_domains; ++dom) {
    Rng dr = domain_root.derive(dom);
    const double scale = 1.0 + spec.amplitude_shift * dr.uniform(-1.0, 1.0);
    const double warp = 1.0 + spec.warp_shift * dr.uniform(-1.0, 1.0);
    std::vector<double> offset(d_ch);
    for (double& o : offset) o = spec.offset_shift * dr.normal();

    TimeSeriesDataset data;
    data.domain_id = "d" + std::to_string(dom);
    data.channels = d_ch;
    data.length = t_len;
    data.class_names = ds.meta.class_names;
    Rng noise = noise_root.derive(dom);
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
      const double cycles = 2.0 + 2.0 * static_cast<double>(c);
      for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
        Rng sr = sample_root.derive(c * 1000003ULL + i);
        const double jitter = spec.phase_jitter * sr.uniform(-0.5, 0.5) * std::numbers::pi;
        for (std::size_t ch = 0; ch < d_ch; ++ch)
          for (std::size_t t = 0; t < t_len; ++t) {
            const double time = warp * static_cast<double>(t) / static_cast<double>(t_len);
            const double v = scale * amp[c][ch] * std::sin(2.0 * std::numbers::pi * cycles * time + phase[c][ch] + jitter) +
                             offset[ch] + spec.noise * noise.normal();
            data.samples.push_back(static_cast<double>(static_cast<float>(v)));
          }
        data.labels.push_back(static_cast<int>(c));
        ++data.n;
      }
    }
    ds.meta.domains.push_back(data.domain_id);
    ds.domains.emplace(data.domain_id, std::move(data));
  }
  return ds;
}

Tensor window(const Tensor& series, std::size_t window_len, std::size_t stride) {
  if (series.rank() != 2) throw DimensionError("window expects a [D, L] series");
  if (stride == 0) throw ContractError("window stride must be positive");
  const std::size_t d = series.dim(0), l = series.dim(1);
  if (window_len == 0 || window_len > l)
    throw ContractError("window length " + std::to_string(window_len) + " exceeds series length " + std::to_string(l));
  const std::size_t n = (l - window_len) / stride + 1;
  std::vector<double> out(n * d * window_len);
  const auto& v = series.values();
  for (std::size_t w = 0; w < n; ++w)
    for (std::size_t c = 0; c < d; ++c)
      std::copy_n(v.begin() + static_cast<long>(c * l + w * stride), window_len,
                  out.begin() + static_cast<long>((w * d + c) * window_len));
  return Tensor({n, d, window_len}, std::move(out));
}

ChannelStats channel_stats(const TimeSeriesDataset& data) {
  ChannelStats s;
  s.mean.assign(data.channels, 0.0);
  s.stddev.assign(data.channels, 0.0);
  const double count = static_cast<double>(data.n * data.length);
  if (count == 0) return s;
  for (std::size_t i = 0; i < data.n; ++i)
    for (std::size_t c = 0; c < data.channels; ++c)
      for (std::size_t t = 0; t < data.length; ++t) s.mean[c] += data.samples[(i * data.channels + c) * data.length + t];
  for (double& m : s.mean) m /= count;
  for (std::size_t i = 0; i < data.n; ++i)
    for (std::size_t c = 0; c < data.channels; ++c)
      for (std::size_t t = 0; t < data.length; ++t) {
        const double dv = data.samples[(i * data.channels + c) * data.length + t] - s.mean[c];
        s.stddev[c] += dv * dv;
      }
  for (double& v : s.stddev) v = std::sqrt(v / count);
  return s;
}

void normalize(TimeSeriesDataset& data, const ChannelStats& stats) {
  if (stats.mean.size() != data.channels || stats.stddev.size() != data.channels)
    throw DimensionError("normalization statistics do not match the channel count");
  for (std::size_t i = 0; i < data.n; ++i)
    for (std::size_t c = 0; c < data.channels; ++c) {
      const double scale = stats.stddev[c] > 0.0 ? 1.0 / stats.stddev[c] : 1.0;
      for (std::size_t t = 0; t < data.length; ++t) {
        double& v = data.samples[(i * data.channels + c) * data.length + t];
        v = (v - stats.mean[c]) * scale;
      }
    }
}

}  // namespace unida
