#include "fusionvit/nn.hpp"

#include <cmath>

#include "fusionvit/errors.hpp"

namespace fvit {

namespace {

double truncated_normal(std::mt19937_64& rng, double std) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    const double z = normal(rng);
    if (z >= -2.0 && z <= 2.0) return z * std;
  }
}

}  // namespace

Parameter& ParamStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init,
                           bool trainable) {
  if (params_.count(name) != 0) throw ConfigError("duplicate parameter name: " + name);
  Parameter p;
  p.name = name;
  p.trainable = trainable;
  switch (init) {
    case Init::Zeros:
      p.value = Matrix::Zero(rows, cols);
      break;
    case Init::Ones:
      p.value = Matrix::Ones(rows, cols);
      break;
    case Init::TruncNormal:
      p.value.resize(rows, cols);
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = truncated_normal(rng_, init_std_);
      break;
    case Init::LinearWeight: {
      const double std = fan_in_scaled_ ? 1.0 / std::sqrt(static_cast<double>(rows)) : init_std_;
      p.value.resize(rows, cols);
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = truncated_normal(rng_, std);
      break;
    }
  }
  p.zero_grad();
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) {
    if (p.trainable) n += static_cast<std::size_t>(p.value.size());
  }
  return n;
}

void ParamStore::copy_prefix_from(const ParamStore& other, const std::string& prefix) {
  std::size_t copied = 0;
  for (auto& [name, p] : params_) {
    if (name.rfind(prefix, 0) != 0) continue;
    const Parameter& src = other.at(name);
    if (src.value.rows() != p.value.rows() || src.value.cols() != p.value.cols()) {
      throw ConfigError("shape mismatch for parameter " + name);
    }
    p.value = src.value;
    ++copied;
  }
  if (copied == 0) throw ConfigError("no parameters under prefix '" + prefix + "'");
}

Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::Gelu:
      return ag::gelu(x);
    case Activation::Silu:
      return ag::silu(x);
    case Activation::Identity:
      return x;
  }
  return x;
}

Linear::Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out)
    : weight(&store.add(name + ".weight", in, out, Init::LinearWeight)),
      bias(&store.add(name + ".bias", 1, out, Init::Zeros)) {}

Var Linear::operator()(Context& ctx, const Var& x) const {
  return ag::linear(x, ctx.tape.param(*weight), ctx.tape.param(*bias));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, Eigen::Index width)
    : gain(&store.add(name + ".gain", 1, width, Init::Ones)), bias(&store.add(name + ".bias", 1, width, Init::Zeros)) {}

Var LayerNorm::operator()(Context& ctx, const Var& x) const {
  return ag::layer_norm(x, ctx.tape.param(*gain), ctx.tape.param(*bias));
}

BatchNorm::BatchNorm(ParamStore& store, const std::string& name, Eigen::Index width, bool sample_statistics_)
    : gain(&store.add(name + ".gain", 1, width, Init::Ones)),
      bias(&store.add(name + ".bias", 1, width, Init::Zeros)),
      running_mean(&store.add(name + ".running_mean", 1, width, Init::Zeros, false)),
      running_var(&store.add(name + ".running_var", 1, width, Init::Ones, false)),
      sample_statistics(sample_statistics_) {}

Var BatchNorm::operator()(Context& ctx, const Var& x) const {
  if (sample_statistics && !ctx.training) {
    return ag::batch_norm(x, ctx.tape.param(*gain), ctx.tape.param(*bias), {nullptr, nullptr}, true);
  }
  return ag::batch_norm(x, ctx.tape.param(*gain), ctx.tape.param(*bias), {running_mean, running_var}, ctx.training);
}

Mlp::Mlp(ParamStore& store, const std::string& name, Eigen::Index in, const std::vector<int>& hidden,
         Eigen::Index out, Activation act_, double dropout_)
    : act(act_), dropout(dropout_) {
  Eigen::Index prev = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers.emplace_back(store, name + "." + std::to_string(i), prev, hidden[i]);
    prev = hidden[i];
  }
  layers.emplace_back(store, name + "." + std::to_string(hidden.size()), prev, out);
}

Var Mlp::operator()(Context& ctx, const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](ctx, h);
    if (i + 1 < layers.size()) {
      h = activate(h, act);
      if (ctx.training) h = ag::dropout(h, dropout, ctx.rng);
    }
  }
  return h;
}

Mlp reconciled_mlp(ParamStore& store, const std::string& name, Eigen::Index in, const std::vector<int>& widths,
                   Eigen::Index out, Activation act, double dropout) {
  if (!widths.empty() && widths.back() == out) {
    return Mlp(store, name, in, std::vector<int>(widths.begin(), widths.end() - 1), out, act, dropout);
  }
  return Mlp(store, name, in, widths, out, act, dropout);
}

}  // namespace fvit
