#include "fusionvit/autograd.hpp"

#include <cmath>
#include <stdexcept>

#include "fusionvit/errors.hpp"

namespace fvit {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, &p, record_ && p.trainable});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  if (record_) {
    for (const auto& in : inputs) {
      if (in.tape_ != this) throw std::logic_error("Tape::record: input from another tape");
      needs = needs || nodes_[static_cast<std::size_t>(in.id_)].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id_)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& root) {
  if (!record_) throw std::logic_error("Tape::backward on a non-recording tape");
  Node& r = nodes_[static_cast<std::size_t>(root.id_)];
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw std::logic_error("Tape::backward: root must be a scalar");
  }
  if (!r.requires_grad) return;
  r.grad = Matrix::Ones(1, 1);
  for (int id = root.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) continue;
    if (n.backward) {
      n.backward(*this, n.grad, n.value);
    } else if (n.param != nullptr) {
      if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) {
        n.param->zero_grad();
      }
      n.param->grad += n.grad;
    }
  }
}

namespace ag {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimension mismatch");
  Tape& t = a.tape();
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    if (tape.requires_grad(a)) tape.accumulate(a, g * b.value().transpose());
    if (tape.requires_grad(b)) tape.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw ConfigError("matmul_nt: inner dimension mismatch");
  Tape& t = a.tape();
  return t.record(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    if (tape.requires_grad(a)) tape.accumulate(a, g * b.value());
    if (tape.requires_grad(b)) tape.accumulate(b, g.transpose() * a.value());
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, g);
    if (tape.requires_grad(b)) tape.accumulate(b, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    if (tape.requires_grad(a)) tape.accumulate(a, g.cwiseProduct(b.value()));
    if (tape.requires_grad(b)) tape.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double s) {
  return a.tape().record(a.value() * s, {a}, [a, s](Tape& tape, const Matrix& g, const Matrix&) { tape.accumulate(a, g * s); });
}

Var add_row(const Var& x, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) throw ConfigError("add_row: bias must be 1 x cols");
  Matrix out = x.value();
  out.rowwise() += bias.value().row(0);
  return x.tape().record(std::move(out), {x, bias}, [x, bias](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(x, g);
    if (tape.requires_grad(bias)) tape.accumulate(bias, g.colwise().sum());
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows()) {
    throw ConfigError("linear: input width " + std::to_string(x.cols()) + " != weight rows " +
                      std::to_string(w.rows()));
  }
  if (b.rows() != 1 || b.cols() != w.cols()) throw ConfigError("linear: bias shape mismatch");
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return x.tape().record(std::move(out), {x, w, b}, [x, w, b](Tape& tape, const Matrix& g, const Matrix&) {
    if (tape.requires_grad(x)) tape.accumulate(x, g * w.value().transpose());
    if (tape.requires_grad(w)) tape.accumulate(w, x.value().transpose() * g);
    if (tape.requires_grad(b)) tape.accumulate(b, g.colwise().sum());
  });
}

Var gelu(const Var& x) {
  const Matrix& v = x.value();
  Matrix out = v.unaryExpr([](double z) { return 0.5 * z * (1.0 + std::erf(z * kInvSqrt2)); });
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix d = x.value().unaryExpr([](double z) {
      return 0.5 * (1.0 + std::erf(z * kInvSqrt2)) + z * kInvSqrt2Pi * std::exp(-0.5 * z * z);
    });
    tape.accumulate(x, g.cwiseProduct(d));
  });
}

Var silu(const Var& x) {
  const Matrix& v = x.value();
  Matrix out = v.unaryExpr([](double z) { return z / (1.0 + std::exp(-z)); });
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix d = x.value().unaryExpr([](double z) {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 + z * (1.0 - s));
    });
    tape.accumulate(x, g.cwiseProduct(d));
  });
}

Var exp(const Var& x) {
  return x.tape().record(x.value().array().exp().matrix(), {x}, [x](Tape& tape, const Matrix& g, const Matrix& out) {
    tape.accumulate(x, g.cwiseProduct(out));
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Eigen::Index n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw ConfigError("layer_norm: gain/bias width mismatch");
  }
  const Matrix& v = x.value();
  Matrix xhat(v.rows(), n);
  Eigen::VectorXd inv_std(v.rows());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mean = v.row(r).mean();
    const double var = (v.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), n](Tape& tape, const Matrix& g, const Matrix&) {
        if (tape.requires_grad(gain)) tape.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
        if (tape.requires_grad(bias)) tape.accumulate(bias, g.colwise().sum());
        if (!tape.requires_grad(x)) return;
        Matrix dxhat = g.array().rowwise() * gain.value().row(0).array();
        Matrix dx(g.rows(), n);
        const double dn = static_cast<double>(n);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const double s1 = dxhat.row(r).sum();
          const double s2 = dxhat.row(r).dot(xhat.row(r));
          dx.row(r) = (inv_std(r) / dn) * (dn * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2);
        }
        tape.accumulate(x, dx);
      });
}

Var batch_norm(const Var& x, const Var& gain, const Var& bias, const BatchNormBuffers& buffers, bool training) {
  const Eigen::Index c = x.cols();
  if (gain.cols() != c || bias.cols() != c) throw ConfigError("batch_norm: gain/bias width mismatch");
  const Matrix& v = x.value();
  const Eigen::Index n = v.rows();
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd var;
  if (training) {
    mean = v.colwise().mean();
    var = (v.rowwise() - mean).array().square().colwise().mean();
    const double unbiased = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
    if (buffers.running_mean != nullptr && buffers.running_var != nullptr) {
      Matrix& rm = buffers.running_mean->value;
      Matrix& rv = buffers.running_var->value;
      rm.row(0) = (1.0 - buffers.momentum) * rm.row(0) + buffers.momentum * mean;
      rv.row(0) = (1.0 - buffers.momentum) * rv.row(0) + buffers.momentum * var * unbiased;
    }
  } else {
    mean = buffers.running_mean->value.row(0);
    var = buffers.running_var->value.row(0);
  }
  const Eigen::RowVectorXd inv_std = (var.array() + buffers.eps).rsqrt();
  Matrix xhat = (v.rowwise() - mean).array().rowwise() * inv_std.array();
  Matrix out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return x.tape().record(std::move(out), {x, gain, bias},
                         [x, gain, bias, xhat = std::move(xhat), inv_std, training](Tape& tape, const Matrix& g, const Matrix&) {
                           if (tape.requires_grad(gain)) tape.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                           if (tape.requires_grad(bias)) tape.accumulate(bias, g.colwise().sum());
                           if (!tape.requires_grad(x)) return;
                           Matrix dxhat = g.array().rowwise() * gain.value().row(0).array();
                           if (!training) {
                             tape.accumulate(x, dxhat.array().rowwise() * inv_std.array());
                             return;
                           }
                           const double dn = static_cast<double>(g.rows());
                           const Eigen::RowVectorXd s1 = dxhat.colwise().sum();
                           const Eigen::RowVectorXd s2 = dxhat.cwiseProduct(xhat).colwise().sum();
                           Matrix dx = ((dn * dxhat.array()).rowwise() - s1.array()) -
                                       (xhat.array().rowwise() * s2.array());
                           dx = dx.array().rowwise() * (inv_std.array() / dn);
                           tape.accumulate(x, dx);
                         });
}

Var softmax_rows(const Var& x) {
  const Matrix& v = x.value();
  Matrix out(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    out.row(r) = (v.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Matrix& g, const Matrix& y) {
    Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    tape.accumulate(x, y.cwiseProduct(g.colwise() - dots));
  });
}

Var dropout(const Var& x, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? inv : 0.0;
  Matrix out = x.value().cwiseProduct(mask);
  return x.tape().record(std::move(out), {x}, [x, mask = std::move(mask)](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(x, g.cwiseProduct(mask));
  });
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw ConfigError("slice_cols: out of range");
  const Eigen::Index rows = x.rows();
  const Eigen::Index cols = x.cols();
  return x.tape().record(x.value().middleCols(start, count), {x},
                         [x, start, count, rows, cols](Tape& tape, const Matrix& g, const Matrix&) {
                           Matrix full = Matrix::Zero(rows, cols);
                           full.middleCols(start, count) = g;
                           tape.accumulate(x, full);
                         });
}

Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ConfigError("slice_rows: out of range");
  const Eigen::Index rows = x.rows();
  const Eigen::Index cols = x.cols();
  return x.tape().record(x.value().middleRows(start, count), {x},
                         [x, start, count, rows, cols](Tape& tape, const Matrix& g, const Matrix&) {
                           Matrix full = Matrix::Zero(rows, cols);
                           full.middleRows(start, count) = g;
                           tape.accumulate(x, full);
                         });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ConfigError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  std::vector<Eigen::Index> offsets;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [inputs, offsets](Tape& tape, const Matrix& g, const Matrix&) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (tape.requires_grad(inputs[i])) tape.accumulate(inputs[i], g.middleCols(offsets[i], inputs[i].cols()));
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ConfigError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  std::vector<Eigen::Index> offsets;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [inputs, offsets](Tape& tape, const Matrix& g, const Matrix&) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (tape.requires_grad(inputs[i])) tape.accumulate(inputs[i], g.middleRows(offsets[i], inputs[i].rows()));
    }
  });
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

Var gather_rows(const Var& x, std::vector<int> index) {
  const Matrix& v = x.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), v.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= v.rows()) throw ConfigError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = v.row(index[i]);
  }
  const Eigen::Index rows = v.rows();
  return x.tape().record(std::move(out), {x}, [x, index = std::move(index), rows](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix dx = Matrix::Zero(rows, g.cols());
    for (std::size_t i = 0; i < index.size(); ++i) dx.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
    tape.accumulate(x, dx);
  });
}

Var segment_max(const Var& x, std::vector<int> segment, int num_segments) {
  const Matrix& v = x.value();
  if (static_cast<Eigen::Index>(segment.size()) != v.rows()) throw ConfigError("segment_max: segment length");
  const Eigen::Index cols = v.cols();
  Matrix out(num_segments, cols);
  std::vector<int> arg(static_cast<std::size_t>(num_segments) * static_cast<std::size_t>(cols), -1);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const int s = segment[static_cast<std::size_t>(r)];
    if (s < 0 || s >= num_segments) throw ConfigError("segment_max: segment id out of range");
    for (Eigen::Index c = 0; c < cols; ++c) {
      int& a = arg[static_cast<std::size_t>(s) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
      if (a < 0 || v(r, c) > out(s, c)) {
        a = static_cast<int>(r);
        out(s, c) = v(r, c);
      }
    }
  }
  for (int a : arg) {
    if (a < 0) throw ContractError("segment_max: empty segment");
  }
  const Eigen::Index rows = v.rows();
  return x.tape().record(std::move(out), {x}, [x, arg = std::move(arg), rows, cols](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix dx = Matrix::Zero(rows, cols);
    for (Eigen::Index s = 0; s < g.rows(); ++s) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        dx(arg[static_cast<std::size_t>(s * cols + c)], c) += g(s, c);
      }
    }
    tape.accumulate(x, dx);
  });
}

Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x.value().size()) throw ConfigError("reshape: size mismatch");
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  const Eigen::Index r0 = x.rows();
  const Eigen::Index c0 = x.cols();
  return x.tape().record(std::move(out), {x}, [x, r0, c0](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(x, Eigen::Map<const Matrix>(g.data(), r0, c0));
  });
}

Var sum(const Var& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const Eigen::Index rows = x.rows();
  const Eigen::Index cols = x.cols();
  return x.tape().record(std::move(out), {x}, [x, rows, cols](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(x, Matrix::Constant(rows, cols, g(0, 0)));
  });
}

}  // namespace ag
}  // namespace fvit
