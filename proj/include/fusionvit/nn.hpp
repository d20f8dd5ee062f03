#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fusionvit/autograd.hpp"

namespace fvit {

/// LinearWeight is TruncNormal unless the store scales by fan-in, in which
/// case the deviation is 1 / sqrt(rows).
enum class Init { Zeros, Ones, TruncNormal, LinearWeight };

/// Owns every Parameter of a model under hierarchical dotted names. Iteration
/// order is the lexicographic name order, so serialization is deterministic.
class ParamStore {
 public:
  /// Init::TruncNormal draws N(0, init_std^2) truncated at two deviations.
  explicit ParamStore(std::uint64_t seed = 0, double init_std = 0.02, bool fan_in_scaled = false)
      : rng_(seed), init_std_(init_std), fan_in_scaled_(fan_in_scaled) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init, bool trainable = true);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Parameter>& all() { return params_; }
  const std::map<std::string, Parameter>& all() const { return params_; }

  void zero_grad();
  std::size_t trainable_count() const;

  /// Copies values of every parameter whose name starts with `prefix` from
  /// `other`. Throws ConfigError on a missing name or shape mismatch.
  void copy_prefix_from(const ParamStore& other, const std::string& prefix);

 private:
  std::map<std::string, Parameter> params_;
  std::mt19937_64 rng_;
  double init_std_;
  bool fan_in_scaled_;
};

enum class Activation { Gelu, Silu, Identity };

Var activate(const Var& x, Activation act);

struct Linear {
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out);

  Var operator()(Context& ctx, const Var& x) const;
  Eigen::Index in_features() const { return weight->value.rows(); }
  Eigen::Index out_features() const { return weight->value.cols(); }

  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
};

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, Eigen::Index width);

  Var operator()(Context& ctx, const Var& x) const;

  Parameter* gain = nullptr;
  Parameter* bias = nullptr;
};

struct BatchNorm {
  BatchNorm() = default;
  /// With `sample_statistics` the current input's statistics are used in eval
  /// mode too (running buffers are still tracked while training).
  BatchNorm(ParamStore& store, const std::string& name, Eigen::Index width, bool sample_statistics = false);

  Var operator()(Context& ctx, const Var& x) const;

  Parameter* gain = nullptr;
  Parameter* bias = nullptr;
  Parameter* running_mean = nullptr;
  Parameter* running_var = nullptr;
  bool sample_statistics = false;
};

/// Stack of Linear layers with `act` after every hidden layer and none after
/// the output layer. With no hidden widths it is a single Linear.
struct Mlp {
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, Eigen::Index in, const std::vector<int>& hidden, Eigen::Index out,
      Activation act = Activation::Gelu, double dropout = 0.0);

  Var operator()(Context& ctx, const Var& x) const;
  Eigen::Index out_features() const { return layers.back().out_features(); }

  std::vector<Linear> layers;
  Activation act = Activation::Gelu;
  double dropout = 0.0;
};

/// MLP whose listed widths end at the output width when the last one already
/// equals `out`; otherwise an extra projection to `out` is appended.
Mlp reconciled_mlp(ParamStore& store, const std::string& name, Eigen::Index in, const std::vector<int>& widths,
                   Eigen::Index out, Activation act, double dropout);

}  // namespace fvit
