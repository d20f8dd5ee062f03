#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fvit {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A named learnable (or buffer) tensor. Gradients accumulate into `grad`
/// across backward passes until the optimizer clears them.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode recorder. Nodes are kept in creation order, so a reverse sweep
/// is a valid topological order. A tape built with record=false only computes
/// values.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out, const Matrix& out_value)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  Var param(Parameter& p);

  /// Records a node whose backward distributes grad_out onto `inputs` via
  /// accumulate(). The closure is dropped when no input requires a gradient.
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  bool requires_grad(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }
  void accumulate(const Var& v, const Matrix& g);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates; parameter leaves
  /// add their gradient into Parameter::grad.
  void backward(const Var& root);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id())].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  bool record_;
};

/// Per-forward evaluation context: tape, train/eval switch and the dropout RNG.
struct Context {
  Tape& tape;
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

namespace ag {

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// x + broadcast of the 1 x C row `bias`.
Var add_row(const Var& x, const Var& bias);
/// x * w + b, b broadcast over rows.
Var linear(const Var& x, const Var& w, const Var& b);

Var gelu(const Var& x);
Var silu(const Var& x);
Var exp(const Var& x);

/// Row-wise layer normalization with per-column gain and bias.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

struct BatchNormBuffers {
  Parameter* running_mean;
  Parameter* running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
/// Column-wise batch normalization over rows. Training mode normalizes with
/// batch statistics and updates the running buffers when they are non-null;
/// eval mode uses the running buffers.
Var batch_norm(const Var& x, const Var& gain, const Var& bias, const BatchNormBuffers& buffers, bool training);

Var softmax_rows(const Var& x);
/// Inverted dropout; identity when rate == 0 or rng is null.
Var dropout(const Var& x, double rate, std::mt19937_64* rng);

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var concat_rows(std::initializer_list<Var> parts);
/// out.row(i) = x.row(index[i]); indices may repeat.
Var gather_rows(const Var& x, std::vector<int> index);
/// out.row(s) = column-wise max over rows r with segment[r] == s. Every segment
/// must be non-empty.
Var segment_max(const Var& x, std::vector<int> segment, int num_segments);
/// Row-major reshape.
Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols);
Var sum(const Var& x);

}  // namespace ag

}  // namespace fvit
