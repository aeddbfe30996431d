#include "pgasr/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"

#include "pgasr/error.hpp"
#include "pgasr/tensor_io.hpp"

namespace pgasr::data {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- standardizer

Standardizer Standardizer::fit(std::span<const FlowSample> samples) {
  std::array<double, 2> sum{0.0, 0.0};
  std::array<double, 2> sq{0.0, 0.0};
  std::array<std::size_t, 2> n{0, 0};
  for (const FlowSample& s : samples) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const int ch = static_cast<int>(i % 2);
      sum[ch] += s.x[i];
      ++n[ch];
    }
  }
  Standardizer st;
  for (int ch = 0; ch < 2; ++ch) {
    if (n[ch] == 0) throw ConfigError("cannot fit a standardizer on an empty training split");
    st.mean[ch] = sum[ch] / static_cast<double>(n[ch]);
  }
  for (const FlowSample& s : samples) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const int ch = static_cast<int>(i % 2);
      const double d = s.x[i] - st.mean[ch];
      sq[ch] += d * d;
    }
  }
  for (int ch = 0; ch < 2; ++ch) {
    st.std[ch] = std::sqrt(sq[ch] / static_cast<double>(n[ch]));
    if (!(st.std[ch] > 1e-12))
      throw ConfigError("channel " + std::to_string(ch) + " is constant (zero standard deviation)");
  }
  return st;
}

float Standardizer::transform_value(float v, int channel) const {
  return static_cast<float>((v - mean[channel]) / std[channel]);
}

float Standardizer::inverse_value(float v, int channel) const {
  return static_cast<float>(v * std[channel] + mean[channel]);
}

void Standardizer::transform(std::span<float> interleaved) const {
  for (std::size_t i = 0; i < interleaved.size(); ++i)
    interleaved[i] = transform_value(interleaved[i], static_cast<int>(i % 2));
}

void Standardizer::inverse(std::span<float> interleaved) const {
  for (std::size_t i = 0; i < interleaved.size(); ++i)
    interleaved[i] = inverse_value(interleaved[i], static_cast<int>(i % 2));
}

std::vector<float> destandardize(std::span<const float> interleaved, const Standardizer& standardizer) {
  std::vector<float> out(interleaved.begin(), interleaved.end());
  standardizer.inverse(out);
  return out;
}

std::string to_string(Provenance p) { return p == Provenance::public_dump ? "public_dump" : "synthetic"; }

std::vector<std::int64_t> DatasetBundle::corrupted_train_ids() const {
  std::vector<std::int64_t> ids;
  for (const FlowSample& s : train)
    if (s.corrupted) ids.push_back(s.sample_id);
  return ids;
}

std::array<std::size_t, 3> split_sizes(std::size_t n) {
  const auto train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
  const auto val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  if (train + val > n) throw ConfigError("too few samples to split 7:1:2");
  return {train, val, n - train - val};
}

namespace {

void check_finite(const FlowSample& s, const std::string& where) {
  for (float v : s.x)
    if (!std::isfinite(v)) throw LoadError("non-finite value in " + where + " inputs (sample " + std::to_string(s.sample_id) + ")");
  for (float v : s.y)
    if (!std::isfinite(v)) throw LoadError("non-finite value in " + where + " targets (sample " + std::to_string(s.sample_id) + ")");
}

void transform_all(std::vector<FlowSample>& split, const Standardizer& st) {
  for (FlowSample& s : split) {
    st.transform(s.x);
    st.transform(s.y);
  }
}

// Indices of floor/round(level * n) training samples chosen uniformly by a
// partial Fisher-Yates shuffle, returned in ascending order.
std::vector<std::size_t> choose_indices(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void corrupt_samples(std::vector<FlowSample>& train, const std::vector<std::size_t>& which, double sigma,
                     bool inputs_only, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, sigma);
  for (std::size_t i : which) {
    FlowSample& s = train[i];
    for (float& v : s.x) v = static_cast<float>(gauss(rng));
    if (!inputs_only)
      for (float& v : s.y) v = static_cast<float>(gauss(rng));
    s.corrupted = true;
  }
}

}  // namespace

// ------------------------------------------------------------------ synthetic

void SyntheticConfig::validate() const {
  if (height < 1 || width < 1 || height * width < 2) throw ConfigError("synthetic grid needs at least two cells");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (n_steps <= window + 1) throw ConfigError("n_steps must exceed window + 1");
  if (!(w_s_true >= 0.0) || !(w_r_true >= 0.0)) throw ConfigError("flux coefficients must be non-negative");
  if (!(corruption_fraction >= 0.0 && corruption_fraction <= 1.0))
    throw ConfigError("corruption fraction must lie in [0, 1]");
  if (!(source_amplitude >= 0.0)) throw ConfigError("source amplitude must be non-negative");
  if (!(transport_rate >= 0.0)) throw ConfigError("transport rate must be non-negative");
  if (period < 2) throw ConfigError("demand period must be >= 2");
  if (!(demand_swing >= 0.0 && demand_swing < 1.0)) throw ConfigError("demand swing must lie in [0, 1)");
  if (!(demand_jitter >= 0.0 && demand_jitter < 0.5)) throw ConfigError("demand jitter must lie in [0, 0.5)");
  if (!(hotspot_gain >= 0.0)) throw ConfigError("hotspot gain must be non-negative");
  if (!std::isfinite(phase_gradient)) throw ConfigError("phase gradient must be finite");
  if (!(noise_sigma > 0.0)) throw ConfigError("noise sigma must be positive");
  if (interval_minutes < 1) throw ConfigError("interval must be positive");
}

namespace {

std::vector<double> graph_laplacian_apply(const Eigen::MatrixXd& a, const std::vector<double>& x) {
  const auto m = static_cast<Eigen::Index>(x.size());
  std::vector<double> out(x.size(), 0.0);
  for (Eigen::Index i = 0; i < m; ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double w = a(i, j);
      if (w != 0.0) acc += w * (x[j] - x[i]);
    }
    out[i] = acc;
  }
  return out;
}

}  // namespace

SyntheticTimeline simulate_timeline(const SyntheticConfig& cfg, const graph::UrbanGraph& graph) {
  cfg.validate();
  const int m = graph.node_count();
  const Eigen::MatrixXd& a = graph.adjacency();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Smooth demand profile: a central bump in volume and a diagonal phase lag.
  std::vector<double> base(m);
  std::vector<double> phase(m);
  const double half_h = std::max(1.0, (graph.height() - 1) / 2.0);
  const double half_w = std::max(1.0, (graph.width() - 1) / 2.0);
  for (int r = 0; r < graph.height(); ++r) {
    for (int c = 0; c < graph.width(); ++c) {
      const double u = (r - (graph.height() - 1) / 2.0) / half_h;
      const double v = (c - (graph.width() - 1) / 2.0) / half_w;
      base[r * graph.width() + c] = 1.0 + cfg.hotspot_gain * std::exp(-(u * u + v * v));
      phase[r * graph.width() + c] = cfg.phase_gradient * (r + c);
    }
  }

  std::vector<double> z(m);
  for (double& v : z) v = 10.0 + 2.0 * gauss(rng);

  SyntheticTimeline tl;
  tl.nodes = m;
  tl.density.reserve(cfg.n_steps);
  tl.inflow.reserve(cfg.n_steps);
  tl.outflow.reserve(cfg.n_steps);
  const double omega = 2.0 * std::numbers::pi / cfg.period;
  for (int t = 0; t < cfg.n_steps; ++t) {
    std::vector<double> s(m);
    std::vector<double> r(m);
    for (int i = 0; i < m; ++i) {
      const double jitter = 1.0 + cfg.demand_jitter * gauss(rng);
      const double q_in = cfg.source_amplitude * (base[i] + cfg.demand_swing * std::sin(omega * t + phase[i])) * jitter;
      const double q_out =
          cfg.source_amplitude * (base[i] + cfg.demand_swing * std::sin(omega * t + phase[i] + 0.5)) * jitter;
      double in_transport = 0.0;
      double out_transport = 0.0;
      for (int j = 0; j < m; ++j) {
        const double w = a(i, j);
        if (w == 0.0) continue;
        // transport(j -> i) follows positive density differences z_i - z_j.
        in_transport += w * cfg.transport_rate * std::max(z[i] - z[j], 0.0);
        out_transport += w * cfg.transport_rate * std::max(z[j] - z[i], 0.0);
      }
      s[i] = std::max(q_in + in_transport, 0.0);
      r[i] = std::max(q_out + out_transport, 0.0);
    }
    tl.density.push_back(z);
    tl.inflow.push_back(s);
    tl.outflow.push_back(r);

    const std::vector<double> ls = graph_laplacian_apply(a, s);
    const std::vector<double> lr = graph_laplacian_apply(a, r);
    for (int i = 0; i < m; ++i) {
      z[i] += cfg.w_s_true * ls[i] - cfg.w_r_true * lr[i];
      if (!std::isfinite(z[i]) || std::abs(z[i]) > 1e6)
        throw NumericError("synthetic simulation diverged at step " + std::to_string(t) +
                           "; use smaller flux coefficients or transport rate");
    }
  }
  return tl;
}

std::vector<double> conservation_residuals(const SyntheticTimeline& tl, const graph::UrbanGraph& graph,
                                           double w_s, double w_r) {
  std::vector<double> out;
  for (std::size_t t = 0; t + 1 < tl.density.size(); ++t) {
    const auto ls = graph_laplacian_apply(graph.adjacency(), tl.inflow[t]);
    const auto lr = graph_laplacian_apply(graph.adjacency(), tl.outflow[t]);
    double worst = 0.0;
    for (int i = 0; i < tl.nodes; ++i) {
      const double predicted = tl.density[t][i] + w_s * ls[i] - w_r * lr[i];
      worst = std::max(worst, std::abs(tl.density[t + 1][i] - predicted));
    }
    out.push_back(worst);
  }
  return out;
}

DatasetBundle generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  DatasetBundle bundle(graph::UrbanGraph::grid(cfg.height, cfg.width, cfg.neighborhood));
  const SyntheticTimeline tl = simulate_timeline(cfg, bundle.graph);
  const int m = tl.nodes;
  const int window = cfg.window;
  const std::size_t count = static_cast<std::size_t>(cfg.n_steps - window);

  std::vector<FlowSample> all;
  all.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    FlowSample s;
    s.sample_id = static_cast<std::int64_t>(k);
    s.x.resize(static_cast<std::size_t>(window) * m * 2);
    for (int t = 0; t < window; ++t)
      for (int i = 0; i < m; ++i) {
        s.x[(static_cast<std::size_t>(t) * m + i) * 2] = static_cast<float>(tl.inflow[k + t][i]);
        s.x[(static_cast<std::size_t>(t) * m + i) * 2 + 1] = static_cast<float>(tl.outflow[k + t][i]);
      }
    s.y.resize(static_cast<std::size_t>(m) * 2);
    for (int i = 0; i < m; ++i) {
      s.y[i * 2] = static_cast<float>(tl.inflow[k + window][i]);
      s.y[i * 2 + 1] = static_cast<float>(tl.outflow[k + window][i]);
    }
    all.push_back(std::move(s));
  }

  const auto sizes = split_sizes(all.size());
  auto it = std::make_move_iterator(all.begin());
  bundle.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  bundle.val.assign(it + static_cast<std::ptrdiff_t>(sizes[0]), it + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
  bundle.test.assign(it + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), std::make_move_iterator(all.end()));
  if (bundle.train.empty() || bundle.val.empty() || bundle.test.empty())
    throw ConfigError("synthetic timeline too short for a 7:1:2 split");

  bundle.name = "synthetic";
  bundle.provenance = Provenance::synthetic;
  bundle.interval_minutes = cfg.interval_minutes;
  bundle.window = window;
  bundle.standardizer = Standardizer::fit(bundle.train);
  transform_all(bundle.train, bundle.standardizer);
  transform_all(bundle.val, bundle.standardizer);
  transform_all(bundle.test, bundle.standardizer);
  bundle.standardized = true;

  if (cfg.corruption_fraction > 0.0) {
    std::seed_seq seq{cfg.seed, std::uint64_t{0xC0FFEE}};
    std::mt19937_64 rng(seq);
    const auto n_corrupt = static_cast<std::size_t>(
        std::llround(cfg.corruption_fraction * static_cast<double>(bundle.train.size())));
    const auto which = choose_indices(bundle.train.size(), n_corrupt, rng);
    corrupt_samples(bundle.train, which, cfg.noise_sigma, cfg.corrupt_inputs_only, rng);
  }
  return bundle;
}

DatasetBundle inject_noise(const DatasetBundle& bundle, double level, std::uint64_t seed,
                           const NoiseOptions& options) {
  if (!(level > 0.0 && level <= 1.0)) throw ConfigError("noise level must lie in (0, 1]");
  if (!bundle.standardized) throw ConfigError("noise is injected in standardized space; standardize first");
  if (!(options.sigma > 0.0)) throw ConfigError("noise sigma must be positive");
  DatasetBundle out = bundle;
  std::mt19937_64 rng(seed);
  const auto count = static_cast<std::size_t>(std::floor(level * static_cast<double>(out.train.size())));
  const auto which = choose_indices(out.train.size(), count, rng);
  corrupt_samples(out.train, which, options.sigma, options.inputs_only, rng);
  return out;
}

DatasetBundle standardize(const DatasetBundle& raw) {
  if (raw.standardized) throw ConfigError("bundle is already standardized");
  DatasetBundle out = raw;
  out.standardizer = Standardizer::fit(out.train);
  transform_all(out.train, out.standardizer);
  transform_all(out.val, out.standardizer);
  transform_all(out.test, out.standardizer);
  out.standardized = true;
  return out;
}

// ---------------------------------------------------------------- disk format

namespace {

const std::array<std::string, 3> kSplits{"train", "val", "test"};

const std::vector<FlowSample>& split_of(const DatasetBundle& b, const std::string& name) {
  if (name == "train") return b.train;
  if (name == "val") return b.val;
  return b.test;
}

std::vector<FlowSample>& split_of(DatasetBundle& b, const std::string& name) {
  if (name == "train") return b.train;
  if (name == "val") return b.val;
  return b.test;
}

}  // namespace

void write_bundle(const DatasetBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = 1;
  manifest["name"] = bundle.name;
  manifest["provenance"] = to_string(bundle.provenance);
  manifest["interval_minutes"] = bundle.interval_minutes;
  manifest["height"] = bundle.graph.height();
  manifest["width"] = bundle.graph.width();
  manifest["window"] = bundle.window;
  if (bundle.standardized) {
    manifest["standardizer"] = {{"mean", bundle.standardizer.mean}, {"std", bundle.standardizer.std}};
  }
  const std::size_t m = static_cast<std::size_t>(bundle.node_count());
  json ids = json::object();
  for (const std::string& split : kSplits) {
    const auto& samples = split_of(bundle, split);
    std::vector<float> xs;
    std::vector<float> ys;
    xs.reserve(samples.size() * bundle.sample_floats_x());
    ys.reserve(samples.size() * bundle.sample_floats_y());
    json id_list = json::array();
    for (const FlowSample& s : samples) {
      xs.insert(xs.end(), s.x.begin(), s.x.end());
      ys.insert(ys.end(), s.y.begin(), s.y.end());
      id_list.push_back(s.sample_id);
    }
    io::write_f32(dir / (split + "_x.bin"), xs);
    io::write_f32(dir / (split + "_y.bin"), ys);
    manifest[split + "_x"] = {{"dtype", "float32"},
                              {"shape", {samples.size(), static_cast<std::size_t>(bundle.window), m, 2}},
                              {"file", split + "_x.bin"}};
    manifest[split + "_y"] = {{"dtype", "float32"}, {"shape", {samples.size(), m, 2}}, {"file", split + "_y.bin"}};
    ids[split] = std::move(id_list);
  }
  manifest["sample_ids"] = std::move(ids);
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  if (bundle.provenance == Provenance::synthetic) {
    std::ostringstream csv;
    csv << "sample_id,flag\n";
    for (const FlowSample& s : bundle.train) csv << s.sample_id << ',' << (s.corrupted ? 1 : 0) << '\n';
    io::write_text(dir / "corrupted_ids.csv", csv.str());
  }
}

namespace {

json read_manifest(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LoadError("dataset directory " + dir.string() + " does not exist");
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw LoadError("missing manifest.json in " + dir.string());
  try {
    return json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw LoadError("malformed manifest.json: " + std::string(e.what()));
  }
}

struct LoadedTensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

LoadedTensor load_tensor(const fs::path& dir, const json& manifest, const std::string& name) {
  if (!manifest.contains(name)) throw LoadError("manifest is missing tensor '" + name + "'");
  const json& spec = manifest[name];
  try {
    if (spec.at("dtype").get<std::string>() != "float32")
      throw LoadError("tensor '" + name + "' has unsupported dtype " + spec.at("dtype").get<std::string>());
    LoadedTensor t;
    t.shape = spec.at("shape").get<std::vector<std::size_t>>();
    std::size_t count = 1;
    for (std::size_t d : t.shape) count *= d;
    t.data = io::read_f32(dir / spec.at("file").get<std::string>(), count);
    return t;
  } catch (const json::exception& e) {
    throw LoadError("tensor '" + name + "': malformed manifest entry (" + e.what() + ")");
  } catch (const LoadError& e) {
    throw LoadError("tensor '" + name + "': " + e.what());
  }
}

}  // namespace

DatasetBundle load_public_bundle(const fs::path& dir, const graph::UrbanGraph& graph) {
  const json manifest = read_manifest(dir);
  const std::size_t m = static_cast<std::size_t>(graph.node_count());
  DatasetBundle bundle(graph);
  bundle.name = manifest.value("name", dir.filename().string());
  bundle.interval_minutes = manifest.value("interval_minutes", 60);
  bundle.provenance = manifest.value("provenance", std::string("public_dump")) == "synthetic"
                          ? Provenance::synthetic
                          : Provenance::public_dump;
  const bool pre_standardized = manifest.contains("standardizer");

  std::int64_t next_id = 0;
  for (const std::string& split : kSplits) {
    LoadedTensor x = load_tensor(dir, manifest, split + "_x");
    LoadedTensor y = load_tensor(dir, manifest, split + "_y");
    if (x.shape.size() != 4 || x.shape[2] != m || x.shape[3] != 2)
      throw LoadError("tensor '" + split + "_x' has shape inconsistent with (S, T, " + std::to_string(m) + ", 2)");
    if (y.shape.size() == 4 && y.shape[1] == 1) y.shape.erase(y.shape.begin() + 1);
    if (y.shape.size() != 3 || y.shape[1] != m || y.shape[2] != 2)
      throw LoadError("tensor '" + split + "_y' has shape inconsistent with (S, " + std::to_string(m) + ", 2)");
    if (x.shape[0] != y.shape[0]) throw LoadError("tensor '" + split + "_y' sample count differs from inputs");
    const int window = static_cast<int>(x.shape[1]);
    if (bundle.window == 0) bundle.window = window;
    if (window != bundle.window) throw LoadError("tensor '" + split + "_x' window differs from other splits");

    std::vector<std::int64_t> ids;
    if (manifest.contains("sample_ids") && manifest["sample_ids"].contains(split))
      ids = manifest["sample_ids"][split].get<std::vector<std::int64_t>>();
    if (!ids.empty() && ids.size() != x.shape[0]) throw LoadError("sample_ids for '" + split + "' do not match tensor");

    const std::size_t fx = static_cast<std::size_t>(window) * m * 2;
    const std::size_t fy = m * 2;
    auto& out = split_of(bundle, split);
    out.reserve(x.shape[0]);
    for (std::size_t s = 0; s < x.shape[0]; ++s) {
      FlowSample sample;
      sample.sample_id = ids.empty() ? next_id : ids[s];
      next_id = sample.sample_id + 1;
      sample.x.assign(x.data.begin() + static_cast<std::ptrdiff_t>(s * fx),
                      x.data.begin() + static_cast<std::ptrdiff_t>((s + 1) * fx));
      sample.y.assign(y.data.begin() + static_cast<std::ptrdiff_t>(s * fy),
                      y.data.begin() + static_cast<std::ptrdiff_t>((s + 1) * fy));
      check_finite(sample, split);
      if (!pre_standardized) {
        for (float v : sample.x)
          if (v < 0.0F) throw LoadError("negative raw flow in '" + split + "_x'");
        for (float v : sample.y)
          if (v < 0.0F) throw LoadError("negative raw flow in '" + split + "_y'");
      }
      out.push_back(std::move(sample));
    }
  }
  if (bundle.train.empty()) throw LoadError("training split is empty");

  std::vector<std::int64_t> seen;
  for (const std::string& split : kSplits)
    for (const FlowSample& s : split_of(bundle, split)) seen.push_back(s.sample_id);
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) throw LoadError("duplicate sample ids across splits");

  if (fs::exists(dir / "corrupted_ids.csv")) {
    std::istringstream csv(io::read_text(dir / "corrupted_ids.csv"));
    std::string line;
    std::getline(csv, line);
    std::vector<std::int64_t> flagged;
    while (std::getline(csv, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw LoadError("malformed corrupted_ids.csv line: " + line);
      if (std::stoi(line.substr(comma + 1)) != 0) flagged.push_back(std::stoll(line.substr(0, comma)));
    }
    std::sort(flagged.begin(), flagged.end());
    for (FlowSample& s : bundle.train) s.corrupted = std::binary_search(flagged.begin(), flagged.end(), s.sample_id);
  }

  if (pre_standardized) {
    const json& st = manifest["standardizer"];
    bundle.standardizer.mean = st.at("mean").get<std::array<double, 2>>();
    bundle.standardizer.std = st.at("std").get<std::array<double, 2>>();
    bundle.standardized = true;
    return bundle;
  }
  return standardize(bundle);
}

DatasetBundle load_bundle(const fs::path& dir, graph::Neighborhood neighborhood,
                          const std::optional<fs::path>& adjacency_override) {
  const json manifest = read_manifest(dir);
  if (!manifest.contains("height") || !manifest.contains("width"))
    throw LoadError("manifest does not record the grid height/width");
  const int h = manifest["height"].get<int>();
  const int w = manifest["width"].get<int>();
  if (adjacency_override) {
    return load_public_bundle(dir, graph::UrbanGraph::from_adjacency(load_adjacency(*adjacency_override, h * w), h, w));
  }
  return load_public_bundle(dir, graph::UrbanGraph::grid(h, w, neighborhood));
}

std::optional<KnownDataset> known_dataset(const std::string& name) {
  static const std::vector<KnownDataset> table{
      {"NYCBike1", 16, 8, 60},
      {"NYCBike2", 10, 20, 30},
      {"NYCTaxi", 10, 20, 30},
      {"BJTaxi", 32, 32, 30},
  };
  for (const KnownDataset& d : table) {
    std::string a = d.name;
    std::string b = name;
    std::transform(a.begin(), a.end(), a.begin(), ::tolower);
    std::transform(b.begin(), b.end(), b.begin(), ::tolower);
    if (a == b) return d;
  }
  return std::nullopt;
}

std::string convert_public_dump(const fs::path& dump_dir, const fs::path& out_dir, const std::string& name_hint) {
  if (!fs::is_directory(dump_dir)) throw LoadError("dump directory " + dump_dir.string() + " does not exist");
  const std::string name = name_hint.empty() ? dump_dir.filename().string() : name_hint;
  const auto known = known_dataset(name);
  if (!known) throw ConfigError("unknown dataset '" + name + "'; expected NYCBike1, NYCBike2, NYCTaxi or BJTaxi");
  const std::size_t m = static_cast<std::size_t>(known->height) * known->width;

  // Validate everything before the output directory is created.
  std::map<std::string, io::NpyArray> arrays;
  for (const std::string& split : kSplits) {
    const fs::path file = dump_dir / (split + ".npz");
    if (!fs::exists(file)) throw LoadError("missing " + file.string());
    auto members = io::read_npz(file);
    for (const char* key : {"x", "y"}) {
      auto it = members.find(key);
      if (it == members.end()) throw LoadError(file.string() + " has no array '" + key + "'");
      io::NpyArray arr = std::move(it->second);
      if (arr.shape.size() == 5) {
        arr.shape = {arr.shape[0], arr.shape[1], arr.shape[2] * arr.shape[3], arr.shape[4]};
      }
      if (arr.shape.size() != 4 || arr.shape[2] != m || arr.shape[3] != 2)
        throw LoadError("tensor '" + split + "_" + key + "' has shape inconsistent with " + std::to_string(m) +
                        " regions of " + known->name);
      for (float v : arr.data)
        if (!std::isfinite(v)) throw LoadError("tensor '" + split + "_" + key + "' contains NaN/Inf");
      arrays[split + "_" + key] = std::move(arr);
    }
  }

  fs::create_directories(out_dir);
  json manifest;
  manifest["format_version"] = 1;
  manifest["name"] = known->name;
  manifest["provenance"] = "public_dump";
  manifest["interval_minutes"] = known->interval_minutes;
  manifest["height"] = known->height;
  manifest["width"] = known->width;
  std::ostringstream summary;
  summary << known->name << ": " << known->height << "x" << known->width << " regions, interval "
          << known->interval_minutes << " min";
  for (auto& [key, arr] : arrays) {
    io::write_f32(out_dir / (key + ".bin"), arr.data);
    manifest[key] = {{"dtype", "float32"}, {"shape", arr.shape}, {"file", key + ".bin"}};
    if (key.ends_with("_x")) summary << ", " << key.substr(0, key.size() - 2) << "=" << arr.shape[0];
  }
  io::write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return summary.str();
}

Eigen::MatrixXd load_adjacency(const fs::path& file, int nodes) {
  const auto n = static_cast<std::size_t>(nodes);
  const std::vector<float> raw = io::read_f32(file, n * n);
  Eigen::MatrixXd a(nodes, nodes);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = raw[i * n + j];
  return a;
}

}  // namespace pgasr::data
