#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pgasr/autograd.hpp"
#include "pgasr/datasets.hpp"
#include "pgasr/grid_graph.hpp"

namespace pgasr::model {

enum class Variant { pn_dis, pn_con };
std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

// sigma in the physics update. identity exists for oracle tests.
enum class PhysicsActivation { relu, identity };

struct ModelConfig {
  int embed_dim = 64;
  int n_st_blocks = 2;
  int chebyshev_order = 3;
  int temporal_kernel = 3;
  float dropout_rate = 0.1F;
  Variant variant = Variant::pn_dis;
  int integrator_steps = 1;
  PhysicsActivation physics_activation = PhysicsActivation::relu;

  // Throws ConfigError; window is the input length T_in.
  void validate(int window) const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Ordered named parameters. Copies are deep: two stores never share buffers.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  ag::Tensor& add(const std::string& name, ag::Shape shape);
  const ag::Tensor& get(const std::string& name) const;
  ag::Tensor& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::vector<std::pair<std::string, ag::Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, ag::Tensor>>& entries() const { return entries_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, ag::Tensor>> entries_;
};

// Parameters plus the architecture that determines their shapes.
struct ModelState {
  ModelConfig config;
  int nodes = 0;
  int window = 0;
  ParameterStore params;
};

// Graph operator in the form consumed by the tape.
struct GraphContext {
  std::shared_ptr<const ag::NodeOperator> laplacian;
  int chebyshev_order = 1;
  int nodes = 0;

  static GraphContext from(const graph::GraphOperator& op);
};

// Dropout streams are active only when rng is non-null.
struct ForwardOptions {
  std::mt19937_64* dropout_rng = nullptr;
};

// y = sum_k T_k(L~) x W_k (+ b), T_0 = I, T_1 = L~, T_k = 2 L~ T_{k-1} - T_{k-2}.
ag::Tensor chebyshev_conv(const ag::Tensor& x, const GraphContext& graph, std::span<const ag::Tensor> weights,
                          const ag::Tensor& bias);

// Produces the latent density z_T of shape [B, M, d] from standardized
// inputs [B, T, M, 2].
class DensityEncoder {
 public:
  virtual ~DensityEncoder() = default;
  virtual void declare(ParameterStore& params, const ModelConfig& cfg) const = 0;
  virtual ag::Tensor encode(const ag::Tensor& x, const GraphContext& graph, const ModelState& state,
                            const ForwardOptions& options) const = 0;
};

// Stacked [gated temporal conv -> Chebyshev conv -> gated temporal conv]
// blocks with residual, layer norm and dropout, reading s, r and s - r.
class StBlocksEncoder final : public DensityEncoder {
 public:
  void declare(ParameterStore& params, const ModelConfig& cfg) const override;
  ag::Tensor encode(const ag::Tensor& x, const GraphContext& graph, const ModelState& state,
                    const ForwardOptions& options) const override;
};

// Physics-guided network: encoder, residual physics update and MLP decoder.
class PhysicsGuidedNetwork {
 public:
  // Freshly initialized parameters drawn from init_seed.
  PhysicsGuidedNetwork(const ModelConfig& config, int nodes, int window, std::uint64_t init_seed,
                       std::shared_ptr<const DensityEncoder> encoder = nullptr);
  explicit PhysicsGuidedNetwork(ModelState state, std::shared_ptr<const DensityEncoder> encoder = nullptr);

  const ModelState& state() const { return state_; }
  ModelState& state() { return state_; }
  const ModelConfig& config() const { return state_.config; }
  const DensityEncoder& encoder() const { return *encoder_; }

  // Dispatches on config().variant.
  ag::Tensor forward(const ag::Tensor& x, const GraphContext& graph, const ForwardOptions& options = {}) const;

 private:
  ModelState state_;
  std::shared_ptr<const DensityEncoder> encoder_;
};

ag::Tensor st_blocks_encode(const ag::Tensor& x, const GraphContext& graph, const PhysicsGuidedNetwork& net,
                            const ForwardOptions& options = {});

// sigma(g_{w_s}(A, s)) - sigma(g_{w_r}(A, r)) for flows of shape [B, M, 1].
ag::Tensor physics_increment(const ag::Tensor& inflow, const ag::Tensor& outflow, const GraphContext& graph,
                             const ModelState& state);

// z_{T+1} = z_T + sigma(g_{w_s}(A, s_T)) - sigma(g_{w_r}(A, r_T)).
ag::Tensor advance_density(const ag::Tensor& z, const ag::Tensor& inflow, const ag::Tensor& outflow,
                           const GraphContext& graph, const ModelState& state);

ag::Tensor decode_density(const ag::Tensor& z, const ModelState& state, const ForwardOptions& options = {});

ag::Tensor pn_dis_forward(const ag::Tensor& x, const GraphContext& graph, const PhysicsGuidedNetwork& net,
                          const ForwardOptions& options = {});
ag::Tensor pn_con_forward(const ag::Tensor& x, const GraphContext& graph, const PhysicsGuidedNetwork& net,
                          const ForwardOptions& options = {});

using OdeRhs = std::function<ag::Tensor(double t, const ag::Tensor& z)>;
// One classical fourth-order Runge-Kutta step of size h from (t, z).
ag::Tensor rk4_step(const OdeRhs& rhs, double t, const ag::Tensor& z, double h);
// Fixed-step RK4 over [t0, t1] with the given number of steps.
ag::Tensor integrate_rk4(const OdeRhs& rhs, const ag::Tensor& z0, double t0, double t1, int steps);

// K stochastic passes with dropout forced active, each from its own mask
// stream derived from (seed, k). Returns K tensors of shape [B, M, 2].
std::vector<ag::Tensor> forward_mc(const ag::Tensor& x, const GraphContext& graph, const PhysicsGuidedNetwork& net,
                                   int k, std::uint64_t seed);

// Stacks sample inputs into [B, T, M, 2] and targets into [B, M, 2].
struct Batch {
  ag::Tensor x;
  ag::Tensor y;
  std::vector<std::int64_t> ids;
};
Batch make_batch(std::span<const data::FlowSample* const> samples, int window, int nodes);

}  // namespace pgasr::model
