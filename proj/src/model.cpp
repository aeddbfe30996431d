#include "pgasr/model.hpp"

#include <cmath>

#include "pgasr/error.hpp"

namespace pgasr::model {

using ag::Tensor;

std::string to_string(Variant v) { return v == Variant::pn_dis ? "pn_dis" : "pn_con"; }

Variant parse_variant(const std::string& text) {
  if (text == "pn_dis") return Variant::pn_dis;
  if (text == "pn_con") return Variant::pn_con;
  throw ConfigError("unknown model variant '" + text + "'");
}

void ModelConfig::validate(int window) const {
  if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
  if (n_st_blocks < 1) throw ConfigError("n_st_blocks must be >= 1");
  if (chebyshev_order < 1) throw ConfigError("chebyshev_order must be >= 1");
  if (temporal_kernel < 1) throw ConfigError("temporal_kernel must be >= 1");
  if (!(dropout_rate >= 0.0F && dropout_rate < 1.0F)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (variant == Variant::pn_con && integrator_steps < 1) throw ConfigError("integrator_steps must be >= 1");
  // Convolutions are causal and length preserving, so the only hard limit is
  // that a kernel must fit inside the window.
  if (window < temporal_kernel)
    throw ConfigError("input window " + std::to_string(window) + " is shorter than the temporal kernel " +
                      std::to_string(temporal_kernel));
}

nlohmann::json ModelConfig::to_json() const {
  return {{"embed_dim", embed_dim},
          {"n_st_blocks", n_st_blocks},
          {"chebyshev_order", chebyshev_order},
          {"temporal_kernel", temporal_kernel},
          {"dropout_rate", dropout_rate},
          {"variant", model::to_string(variant)},
          {"integrator_steps", integrator_steps},
          {"physics_activation", physics_activation == PhysicsActivation::relu ? "relu" : "identity"}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.n_st_blocks = j.at("n_st_blocks").get<int>();
  c.chebyshev_order = j.at("chebyshev_order").get<int>();
  c.temporal_kernel = j.at("temporal_kernel").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<float>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.integrator_steps = j.at("integrator_steps").get<int>();
  c.physics_activation =
      j.value("physics_activation", std::string("relu")) == "identity" ? PhysicsActivation::identity : PhysicsActivation::relu;
  return c;
}

// ------------------------------------------------------------ parameter store

ParameterStore::ParameterStore(const ParameterStore& other) { *this = other; }

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this == &other) return *this;
  entries_.clear();
  entries_.reserve(other.entries_.size());
  for (const auto& [name, t] : other.entries_) {
    entries_.emplace_back(name, Tensor::from_vector(t.shape(), std::vector<float>(t.data().begin(), t.data().end()),
                                                    true));
  }
  return *this;
}

Tensor& ParameterStore::add(const std::string& name, ag::Shape shape) {
  if (contains(name)) throw ConfigError("duplicate parameter " + name);
  entries_.emplace_back(name, Tensor::zeros(std::move(shape), true));
  return entries_.back().second;
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return e.second;
  throw ConfigError("unknown parameter " + name);
}

Tensor& ParameterStore::get(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParameterStore&>(*this).get(name));
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

GraphContext GraphContext::from(const graph::GraphOperator& op) {
  GraphContext ctx;
  ctx.laplacian = ag::NodeOperator::from_dense(op.scaled_laplacian);
  ctx.chebyshev_order = op.chebyshev_order;
  ctx.nodes = op.node_count();
  return ctx;
}

// ------------------------------------------------------------------- layers

Tensor chebyshev_conv(const Tensor& x, const GraphContext& graph, std::span<const Tensor> weights,
                      const Tensor& bias) {
  if (weights.empty()) throw ConfigError("chebyshev_conv needs at least one weight");
  Tensor prev2 = x;
  Tensor out = ag::linear(x, weights[0], bias);
  if (weights.size() == 1) return out;
  Tensor prev1 = ag::propagate(x, graph.laplacian);
  out = ag::add(out, ag::linear(prev1, weights[1], Tensor{}));
  for (std::size_t k = 2; k < weights.size(); ++k) {
    Tensor next = ag::sub(ag::scale(ag::propagate(prev1, graph.laplacian), 2.0F), prev2);
    out = ag::add(out, ag::linear(next, weights[k], Tensor{}));
    prev2 = prev1;
    prev1 = next;
  }
  return out;
}

namespace {

std::string block_key(int b, const char* part) { return "enc." + std::to_string(b) + "." + part; }

std::vector<Tensor> cheb_weights(const ParameterStore& p, const std::string& prefix, int order) {
  std::vector<Tensor> w;
  for (int k = 0; k < order; ++k) w.push_back(p.get(prefix + std::to_string(k)));
  return w;
}

Tensor gated_temporal(const Tensor& x, const ParameterStore& p, const std::string& prefix) {
  return ag::glu(ag::temporal_conv(x, p.get(prefix + ".w"), p.get(prefix + ".b")));
}

void initialize(ParameterStore& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, t] : params.entries()) {
    auto data = t.mutable_data();
    if (name.ends_with(".b") || name.ends_with(".shift")) {
      std::fill(data.begin(), data.end(), 0.0F);
    } else if (name.ends_with(".gain")) {
      std::fill(data.begin(), data.end(), 1.0F);
    } else {
      const auto& s = t.shape();
      std::size_t fan_in = s.size() == 3 ? s[0] * s[1] : s[0];
      std::size_t fan_out = s.back();
      const float limit = std::sqrt(6.0F / static_cast<float>(fan_in + fan_out));
      std::uniform_real_distribution<float> u(-limit, limit);
      for (float& v : data) v = u(rng);
    }
  }
}

void check_finite(const Tensor& t, const char* where) {
  for (float v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite activation in ") + where);
}

Tensor physics_sigma(const Tensor& t, PhysicsActivation a) {
  return a == PhysicsActivation::relu ? ag::relu(t) : t;
}

}  // namespace

void StBlocksEncoder::declare(ParameterStore& params, const ModelConfig& cfg) const {
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const auto k = static_cast<std::size_t>(cfg.temporal_kernel);
  for (int b = 0; b < cfg.n_st_blocks; ++b) {
    const std::size_t cin = b == 0 ? 3 : d;
    params.add(block_key(b, "t1.w"), {k, cin, 2 * d});
    params.add(block_key(b, "t1.b"), {2 * d});
    for (int c = 0; c < cfg.chebyshev_order; ++c) params.add(block_key(b, "cheb.w") + std::to_string(c), {d, d});
    params.add(block_key(b, "cheb.b"), {d});
    params.add(block_key(b, "t2.w"), {k, d, 2 * d});
    params.add(block_key(b, "t2.b"), {2 * d});
    if (cin != d) params.add(block_key(b, "res.w"), {cin, d});
    params.add(block_key(b, "ln.gain"), {d});
    params.add(block_key(b, "ln.shift"), {d});
  }
}

Tensor StBlocksEncoder::encode(const Tensor& x, const GraphContext& graph, const ModelState& state,
                               const ForwardOptions& options) const {
  const ModelConfig& cfg = state.config;
  const ParameterStore& p = state.params;
  if (x.rank() != 4 || x.dim(3) != 2 || static_cast<int>(x.dim(2)) != graph.nodes)
    throw ConfigError("encoder input must be [B, T, " + std::to_string(graph.nodes) + ", 2], got " +
                      ag::shape_string(x.shape()));
  const Tensor s = ag::slice_last(x, 0, 1);
  const Tensor r = ag::slice_last(x, 1, 1);
  Tensor h = ag::concat_last({s, r, ag::sub(s, r)});
  for (int b = 0; b < cfg.n_st_blocks; ++b) {
    Tensor u = gated_temporal(h, p, block_key(b, "t1"));
    u = ag::relu(chebyshev_conv(u, graph, cheb_weights(p, block_key(b, "cheb.w"), cfg.chebyshev_order),
                                p.get(block_key(b, "cheb.b"))));
    u = gated_temporal(u, p, block_key(b, "t2"));
    const Tensor residual = p.contains(block_key(b, "res.w")) ? ag::linear(h, p.get(block_key(b, "res.w")), Tensor{}) : h;
    h = ag::layer_norm(ag::add(u, residual), p.get(block_key(b, "ln.gain")), p.get(block_key(b, "ln.shift")));
    h = ag::dropout(h, cfg.dropout_rate, options.dropout_rng);
  }
  return ag::time_step(h, h.dim(1) - 1);
}

PhysicsGuidedNetwork::PhysicsGuidedNetwork(const ModelConfig& config, int nodes, int window, std::uint64_t init_seed,
                                           std::shared_ptr<const DensityEncoder> encoder)
    : encoder_(encoder ? std::move(encoder) : std::make_shared<StBlocksEncoder>()) {
  config.validate(window);
  if (nodes < 2) throw ConfigError("network needs at least two nodes");
  state_.config = config;
  state_.nodes = nodes;
  state_.window = window;
  encoder_->declare(state_.params, config);
  const auto d = static_cast<std::size_t>(config.embed_dim);
  for (int c = 0; c < config.chebyshev_order; ++c) state_.params.add("phys.s.w" + std::to_string(c), {1, d});
  for (int c = 0; c < config.chebyshev_order; ++c) state_.params.add("phys.r.w" + std::to_string(c), {1, d});
  state_.params.add("dec.hidden.w", {d, d});
  state_.params.add("dec.hidden.b", {d});
  state_.params.add("dec.out.w", {d, 2});
  state_.params.add("dec.out.b", {2});
  initialize(state_.params, init_seed);
}

PhysicsGuidedNetwork::PhysicsGuidedNetwork(ModelState state, std::shared_ptr<const DensityEncoder> encoder)
    : state_(std::move(state)), encoder_(encoder ? std::move(encoder) : std::make_shared<StBlocksEncoder>()) {
  state_.config.validate(state_.window);
  // Shapes must match what the architecture would declare.
  ParameterStore expected;
  encoder_->declare(expected, state_.config);
  const auto d = static_cast<std::size_t>(state_.config.embed_dim);
  for (int c = 0; c < state_.config.chebyshev_order; ++c) expected.add("phys.s.w" + std::to_string(c), {1, d});
  for (int c = 0; c < state_.config.chebyshev_order; ++c) expected.add("phys.r.w" + std::to_string(c), {1, d});
  expected.add("dec.hidden.w", {d, d});
  expected.add("dec.hidden.b", {d});
  expected.add("dec.out.w", {d, 2});
  expected.add("dec.out.b", {2});
  if (expected.entries().size() != state_.params.entries().size())
    throw LoadError("parameter count does not match the model configuration");
  for (const auto& [name, t] : expected.entries()) {
    if (!state_.params.contains(name)) throw LoadError("missing parameter " + name);
    if (state_.params.get(name).shape() != t.shape())
      throw LoadError("parameter " + name + " has shape " + ag::shape_string(state_.params.get(name).shape()) +
                      ", expected " + ag::shape_string(t.shape()));
  }
}

Tensor PhysicsGuidedNetwork::forward(const Tensor& x, const GraphContext& graph, const ForwardOptions& options) const {
  return state_.config.variant == Variant::pn_dis ? pn_dis_forward(x, graph, *this, options)
                                                  : pn_con_forward(x, graph, *this, options);
}

Tensor st_blocks_encode(const Tensor& x, const GraphContext& graph, const PhysicsGuidedNetwork& net,
                        const ForwardOptions& options) {
  return net.encoder().encode(x, graph, net.state(), options);
}

Tensor physics_increment(const Tensor& inflow, const Tensor& outflow, const GraphContext& graph,
                         const ModelState& state) {
  const int order = state.config.chebyshev_order;
  const Tensor gs = chebyshev_conv(inflow, graph, cheb_weights(state.params, "phys.s.w", order), Tensor{});
  const Tensor gr = chebyshev_conv(outflow, graph, cheb_weights(state.params, "phys.r.w", order), Tensor{});
  const PhysicsActivation a = state.config.physics_activation;
  return ag::sub(physics_sigma(gs, a), physics_sigma(gr, a));
}

Tensor advance_density(const Tensor& z, const Tensor& inflow, const Tensor& outflow, const GraphContext& graph,
                       const ModelState& state) {
  return ag::add(z, physics_increment(inflow, outflow, graph, state));
}

Tensor decode_density(const Tensor& z, const ModelState& state, const ForwardOptions& options) {
  const ParameterStore& p = state.params;
  Tensor h = ag::tanh(ag::linear(z, p.get("dec.hidden.w"), p.get("dec.hidden.b")));
  h = ag::dropout(h, state.config.dropout_rate, options.dropout_rng);
  return ag::linear(h, p.get("dec.out.w"), p.get("dec.out.b"));
}

Tensor pn_dis_forward(const Tensor& x, const GraphContext& graph, const PhysicsGuidedNetwork& net,
                      const ForwardOptions& options) {
  const Tensor z = st_blocks_encode(x, graph, net, options);
  check_finite(z, "density encoder");
  const Tensor last = ag::time_step(x, x.dim(1) - 1);
  const Tensor next = advance_density(z, ag::slice_last(last, 0, 1), ag::slice_last(last, 1, 1), graph, net.state());
  check_finite(next, "physics update");
  Tensor out = decode_density(next, net.state(), options);
  check_finite(out, "decoder");
  return out;
}

Tensor rk4_step(const OdeRhs& rhs, double t, const Tensor& z, double h) {
  const auto hf = static_cast<float>(h);
  const Tensor k1 = rhs(t, z);
  const Tensor k2 = rhs(t + h / 2, ag::add(z, ag::scale(k1, hf / 2)));
  const Tensor k3 = rhs(t + h / 2, ag::add(z, ag::scale(k2, hf / 2)));
  const Tensor k4 = rhs(t + h, ag::add(z, ag::scale(k3, hf)));
  const Tensor slope = ag::add(ag::add(k1, ag::scale(k2, 2.0F)), ag::add(ag::scale(k3, 2.0F), k4));
  return ag::add(z, ag::scale(slope, hf / 6.0F));
}

Tensor integrate_rk4(const OdeRhs& rhs, const Tensor& z0, double t0, double t1, int steps) {
  if (steps < 1) throw ConfigError("integrator needs at least one step");
  const double h = (t1 - t0) / steps;
  Tensor z = z0;
  for (int i = 0; i < steps; ++i) z = rk4_step(rhs, t0 + i * h, z, h);
  return z;
}

Tensor pn_con_forward(const Tensor& x, const GraphContext& graph, const PhysicsGuidedNetwork& net,
                      const ForwardOptions& options) {
  if (net.config().variant != Variant::pn_con) throw ConfigError("pn_con_forward requires variant pn_con");
  Tensor z = st_blocks_encode(x, graph, net, options);
  check_finite(z, "density encoder");
  // Recorded step t drives the interval [t, t + 1]; flows are held constant
  // inside it, so the final state sits at T + 1.
  const std::size_t steps = x.dim(1);
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor frame = ag::time_step(x, t);
    const Tensor drive =
        physics_increment(ag::slice_last(frame, 0, 1), ag::slice_last(frame, 1, 1), graph, net.state());
    const OdeRhs rhs = [&drive](double, const Tensor&) { return drive; };
    z = integrate_rk4(rhs, z, static_cast<double>(t), static_cast<double>(t + 1), net.config().integrator_steps);
  }
  check_finite(z, "integrator");
  Tensor out = decode_density(z, net.state(), options);
  check_finite(out, "decoder");
  return out;
}

std::vector<Tensor> forward_mc(const Tensor& x, const GraphContext& graph, const PhysicsGuidedNetwork& net, int k,
                               std::uint64_t seed) {
  if (k < 2) throw ConfigError("MC dropout needs K >= 2 passes");
  ag::NoGradGuard no_grad;
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int pass = 0; pass < k; ++pass) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(pass)};
    std::mt19937_64 rng(seq);
    ForwardOptions options;
    options.dropout_rng = &rng;
    out.push_back(net.forward(x, graph, options));
  }
  return out;
}

Batch make_batch(std::span<const data::FlowSample* const> samples, int window, int nodes) {
  const std::size_t fx = static_cast<std::size_t>(window) * nodes * 2;
  const std::size_t fy = static_cast<std::size_t>(nodes) * 2;
  std::vector<float> xs;
  std::vector<float> ys;
  xs.reserve(samples.size() * fx);
  ys.reserve(samples.size() * fy);
  Batch b;
  for (const data::FlowSample* s : samples) {
    if (s->x.size() != fx || s->y.size() != fy)
      throw ConfigError("sample " + std::to_string(s->sample_id) + " does not match window/node count");
    xs.insert(xs.end(), s->x.begin(), s->x.end());
    ys.insert(ys.end(), s->y.begin(), s->y.end());
    b.ids.push_back(s->sample_id);
  }
  const std::size_t n = samples.size();
  b.x = Tensor::from_vector({n, static_cast<std::size_t>(window), static_cast<std::size_t>(nodes), 2}, std::move(xs));
  b.y = Tensor::from_vector({n, static_cast<std::size_t>(nodes), 2}, std::move(ys));
  return b;
}

}  // namespace pgasr::model
