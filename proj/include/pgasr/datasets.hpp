#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pgasr/grid_graph.hpp"

namespace pgasr::data {

// One supervised example. x is laid out [T_in][M][2] and y is [M][2];
// channel 0 is inflow, channel 1 is outflow.
struct FlowSample {
  std::int64_t sample_id = 0;
  std::vector<float> x;
  std::vector<float> y;
  bool corrupted = false;
};

// Per-channel affine standardization fitted on training inputs only.
struct Standardizer {
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 2> std{1.0, 1.0};

  // Fits on every channel-interleaved value of the given input windows.
  static Standardizer fit(std::span<const FlowSample> samples);

  void transform(std::span<float> interleaved) const;
  void inverse(std::span<float> interleaved) const;
  float transform_value(float v, int channel) const;
  float inverse_value(float v, int channel) const;
};

enum class Provenance { public_dump, synthetic };
std::string to_string(Provenance p);

struct DatasetBundle {
  explicit DatasetBundle(graph::UrbanGraph g) : graph(std::move(g)) {}

  std::string name;
  std::vector<FlowSample> train;
  std::vector<FlowSample> val;
  std::vector<FlowSample> test;
  Standardizer standardizer;
  bool standardized = false;
  graph::UrbanGraph graph;
  Provenance provenance = Provenance::synthetic;
  int interval_minutes = 60;
  int window = 0;

  int node_count() const { return graph.node_count(); }
  std::size_t sample_floats_x() const { return static_cast<std::size_t>(window) * node_count() * 2; }
  std::size_t sample_floats_y() const { return static_cast<std::size_t>(node_count()) * 2; }
  std::vector<std::int64_t> corrupted_train_ids() const;
};

struct SyntheticConfig {
  int height = 4;
  int width = 4;
  graph::Neighborhood neighborhood = graph::Neighborhood::eight;
  int n_steps = 3000;
  int window = 8;
  double w_s_true = 0.05;
  double w_r_true = 0.03;
  // Mean exogenous trip generation per cell and step.
  double source_amplitude = 40.0;
  // Edge transport per unit of density difference.
  double transport_rate = 0.5;
  // Steps per demand cycle (48 half-hour steps per day).
  int period = 48;
  // Relative amplitude of the demand cycle, in [0, 1).
  double demand_swing = 0.6;
  // Relative per-cell, per-step multiplicative demand noise.
  double demand_jitter = 0.02;
  // Extra volume of the central hotspot relative to the edge cells.
  double hotspot_gain = 0.2;
  // Demand phase lag per grid step along the diagonal, in radians.
  double phase_gradient = 0.1;
  double corruption_fraction = 0.0;
  double noise_sigma = 1.0;
  bool corrupt_inputs_only = false;
  std::uint64_t seed = 0;
  int interval_minutes = 30;

  void validate() const;
};

// Full simulated timeline in raw flow units, indexed [t][node].
struct SyntheticTimeline {
  int nodes = 0;
  std::vector<std::vector<double>> density;
  std::vector<std::vector<double>> inflow;
  std::vector<std::vector<double>> outflow;
};

// Runs z_{t+1} = z_t + w_s L s_t - w_r L r_t on the graph, where L is the
// graph Laplacian (L x)_i = sum_j A_ij (x_j - x_i) and flows come from edge
// transport toward denser neighbors plus periodic exogenous demand.
SyntheticTimeline simulate_timeline(const SyntheticConfig& cfg, const graph::UrbanGraph& graph);

// Discrete conservation residual |z_{t+1} - z_t - (w_s L s_t - w_r L r_t)|,
// maximized over nodes, for every step.
std::vector<double> conservation_residuals(const SyntheticTimeline& tl, const graph::UrbanGraph& graph,
                                           double w_s, double w_r);

DatasetBundle generate_synthetic(const SyntheticConfig& cfg);

struct NoiseOptions {
  double sigma = 1.0;
  bool inputs_only = false;
};

// Replaces floor(level * |train|) seeded-uniformly chosen training samples
// with standard normal draws in standardized space. val/test are untouched.
DatasetBundle inject_noise(const DatasetBundle& bundle, double level, std::uint64_t seed,
                           const NoiseOptions& options = {});

// Fits the standardizer on training inputs and transforms every split.
DatasetBundle standardize(const DatasetBundle& raw);
std::vector<float> destandardize(std::span<const float> interleaved, const Standardizer& standardizer);

// Chronological 7:1:2 split sizes for n samples.
std::array<std::size_t, 3> split_sizes(std::size_t n);

// ------------------------------------------------------------ bundle on disk
//
// manifest.json maps train_x/train_y/val_x/val_y/test_x/test_y to
// {dtype: "float32", shape: [...], file: "..."}; tensor files are raw
// little-endian float32. Synthetic bundles also carry corrupted_ids.csv.

void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);

// Loads a bundle directory. When the manifest carries a fitted standardizer
// the tensors are taken as standardized; otherwise they are raw flows, which
// must be non-negative, and a standardizer is fitted on train inputs.
DatasetBundle load_public_bundle(const std::filesystem::path& dir, const graph::UrbanGraph& graph);

// Reads a bundle using the grid recorded in its manifest.
DatasetBundle load_bundle(const std::filesystem::path& dir,
                          graph::Neighborhood neighborhood = graph::Neighborhood::eight,
                          const std::optional<std::filesystem::path>& adjacency_override = std::nullopt);

struct KnownDataset {
  std::string name;
  int height;
  int width;
  int interval_minutes;
};
std::optional<KnownDataset> known_dataset(const std::string& name);

// Converts the published research dump layout ({train,val,test}.npz with
// arrays x: (S, T, M, 2) or (S, T, H, W, 2) and y: (S, 1, M, 2)) into a
// tensor-bundle directory. Returns the manifest summary line.
std::string convert_public_dump(const std::filesystem::path& dump_dir, const std::filesystem::path& out_dir,
                                const std::string& name_hint = "");

// Dense M x M float32 adjacency override.
Eigen::MatrixXd load_adjacency(const std::filesystem::path& file, int nodes);

}  // namespace pgasr::data
