#include <gtest/gtest.h>

#include "fusionvit/errors.hpp"
#include "test_util.hpp"

using namespace fvit;
using fvit::testing::check_param_grads;
using fvit::testing::random_matrix;

namespace {

/// Grad check of sum(op(a, b) .* R) for trainable a (r x c) and b (r2 x c2).
double op_error(Eigen::Index r, Eigen::Index c, Eigen::Index r2, Eigen::Index c2,
                const std::function<Var(Context&, const Var&, const Var&)>& op, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  ParamStore store(seed);
  Parameter& a = store.add("a", r, c, Init::Zeros);
  Parameter& b = store.add("b", r2, c2, Init::Zeros);
  a.value = random_matrix(r, c, rng);
  b.value = random_matrix(r2, c2, rng);
  Matrix weights;
  auto loss = [&](Tape& tape) {
    Context ctx{tape, true, nullptr};
    const Var out = op(ctx, tape.param(a), tape.param(b));
    if (weights.size() == 0) {
      std::mt19937_64 wr(seed + 99);
      weights = random_matrix(out.rows(), out.cols(), wr);
    }
    return ag::sum(ag::mul(out, tape.constant(weights)));
  };
  const auto res = check_param_grads(store, loss);
  if (res.max_rel_err >= 1e-6) ADD_FAILURE() << res.worst;
  return res.max_rel_err;
}

}  // namespace

TEST(OpGradients, Elementwise) {
  op_error(3, 4, 3, 4, [](Context&, const Var& a, const Var& b) { return ag::add(a, b); });
  op_error(3, 4, 3, 4, [](Context&, const Var& a, const Var& b) { return ag::sub(a, b); });
  op_error(3, 4, 3, 4, [](Context&, const Var& a, const Var& b) { return ag::mul(a, b); });
  op_error(3, 4, 1, 1, [](Context&, const Var& a, const Var&) { return ag::scale(a, -2.5); });
  op_error(3, 4, 1, 4, [](Context&, const Var& a, const Var& b) { return ag::add_row(a, b); });
  op_error(3, 4, 1, 1, [](Context&, const Var& a, const Var&) { return ag::gelu(a); });
  op_error(3, 4, 1, 1, [](Context&, const Var& a, const Var&) { return ag::silu(a); });
  op_error(3, 4, 1, 1, [](Context&, const Var& a, const Var&) { return ag::exp(a); });
}

TEST(OpGradients, Products) {
  op_error(3, 4, 4, 5, [](Context&, const Var& a, const Var& b) { return ag::matmul(a, b); });
  op_error(3, 4, 5, 4, [](Context&, const Var& a, const Var& b) { return ag::matmul_nt(a, b); });
  op_error(3, 4, 4, 2, [](Context& ctx, const Var& a, const Var& w) {
    return ag::linear(a, w, ctx.tape.constant(Matrix::Constant(1, 2, 0.3)));
  });
}

TEST(OpGradients, Normalization) {
  op_error(5, 6, 2, 6, [](Context&, const Var& x, const Var& gb) {
    return ag::layer_norm(x, ag::slice_rows(gb, 0, 1), ag::slice_rows(gb, 1, 1));
  });
  op_error(7, 3, 2, 3, [](Context&, const Var& x, const Var& gb) {
    return ag::batch_norm(x, ag::slice_rows(gb, 0, 1), ag::slice_rows(gb, 1, 1), {nullptr, nullptr}, true);
  });
  op_error(4, 5, 1, 1, [](Context&, const Var& x, const Var&) { return ag::softmax_rows(x); });
}

TEST(OpGradients, Structural) {
  op_error(4, 6, 4, 2, [](Context&, const Var& a, const Var& b) {
    return ag::concat_cols({ag::slice_cols(a, 1, 3), b, ag::slice_cols(a, 5, 1)});
  });
  op_error(4, 3, 2, 3, [](Context&, const Var& a, const Var& b) {
    return ag::concat_rows({ag::slice_rows(a, 1, 2), b});
  });
  op_error(4, 3, 1, 1, [](Context&, const Var& a, const Var&) { return ag::gather_rows(a, {3, 0, 3, 1}); });
  op_error(6, 3, 1, 1, [](Context&, const Var& a, const Var&) { return ag::segment_max(a, {0, 1, 0, 2, 1, 0}, 3); });
  op_error(4, 3, 1, 1, [](Context&, const Var& a, const Var&) { return ag::reshape(a, 2, 6); });
  op_error(4, 3, 1, 1, [](Context&, const Var& a, const Var&) { return ag::sum(a); });
}

TEST(Tape, GradientsAccumulateOverReusedNodes) {
  ParamStore store;
  Parameter& p = store.add("p", 1, 1, Init::Ones);
  store.zero_grad();
  Tape tape;
  const Var x = tape.param(p);
  tape.backward(ag::sum(ag::add(ag::mul(x, x), x)));  // d/dx (x^2 + x) = 3 at x = 1
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 3.0);
}

TEST(Tape, NonRecordingTapeComputesValuesOnly) {
  ParamStore store;
  Parameter& p = store.add("p", 2, 2, Init::Ones);
  Tape tape(false);
  const Var y = ag::sum(ag::scale(tape.param(p), 2.0));
  EXPECT_DOUBLE_EQ(y.scalar(), 8.0);
  EXPECT_FALSE(tape.requires_grad(y));
}

TEST(Ops, SoftmaxRowsSumToOneAndSurviveLargeInputs) {
  Tape tape(false);
  Matrix x(2, 3);
  x << 1000, 1001, 999, -5, 0, 5;
  const Matrix s = ag::softmax_rows(tape.constant(x)).value();
  EXPECT_TRUE(s.allFinite());
  EXPECT_NEAR(s.row(0).sum(), 1.0, 1e-12);
  EXPECT_NEAR(s.row(1).sum(), 1.0, 1e-12);
  EXPECT_GT(s(0, 1), s(0, 0));
}

TEST(Ops, LayerNormRowsHaveZeroMeanUnitVariance) {
  std::mt19937_64 rng(2);
  Tape tape(false);
  const Matrix x = random_matrix(4, 8, rng, 3.0);
  const Var y = ag::layer_norm(tape.constant(x), tape.constant(Matrix::Ones(1, 8)), tape.constant(Matrix::Zero(1, 8)));
  for (Eigen::Index r = 0; r < 4; ++r) {
    const auto row = y.value().row(r);
    EXPECT_NEAR(row.mean(), 0.0, 1e-12);
    EXPECT_NEAR((row.array() - row.mean()).square().mean(), 1.0, 1e-4);
  }
}

TEST(Ops, BatchNormTracksRunningStatisticsOnlyWhileTraining) {
  ParamStore store;
  BatchNorm bn(store, "bn", 2);
  Matrix x(4, 2);
  x << 1, 10, 2, 20, 3, 30, 4, 40;
  {
    Tape tape;
    Context ctx{tape, true, nullptr};
    bn(ctx, tape.constant(x));
  }
  EXPECT_NEAR(bn.running_mean->value(0, 0), 0.1 * 2.5, 1e-12);
  EXPECT_NEAR(bn.running_mean->value(0, 1), 0.1 * 25, 1e-12);
  const Matrix mean_after = bn.running_mean->value;
  {
    Tape tape(false);
    Context ctx{tape, false, nullptr};
    const Var y = bn(ctx, tape.constant(x));
    // Eval mode normalizes with the running buffers.
    const double expect =
        (1 - mean_after(0, 0)) / std::sqrt(bn.running_var->value(0, 0) + 1e-5);
    EXPECT_NEAR(y.value()(0, 0), expect, 1e-12);
  }
  EXPECT_EQ(bn.running_mean->value, mean_after);
}

TEST(Ops, BatchNormWithSampleStatisticsIgnoresRunningBuffersInEval) {
  ParamStore store;
  BatchNorm bn(store, "bn", 1, true);
  Matrix x(3, 1);
  x << 1, 2, 3;
  Tape tape(false);
  Context ctx{tape, false, nullptr};
  const Matrix y = bn(ctx, tape.constant(x)).value();
  EXPECT_NEAR(y.col(0).mean(), 0.0, 1e-12);
  EXPECT_EQ(bn.running_mean->value(0, 0), 0.0);
}

TEST(Ops, SegmentMaxPicksColumnwiseMaxima) {
  Tape tape(false);
  Matrix x(4, 2);
  x << 1, 9, 5, 2, -1, -1, 3, 4;
  const Matrix m = ag::segment_max(tape.constant(x), {0, 0, 1, 0}, 2).value();
  EXPECT_EQ(m(0, 0), 5);
  EXPECT_EQ(m(0, 1), 9);
  EXPECT_EQ(m(1, 0), -1);
}

TEST(Ops, DropoutIsIdentityAtRateZeroAndPreservesMeanOtherwise) {
  std::mt19937_64 rng(4);
  Tape tape(false);
  const Matrix ones = Matrix::Ones(200, 200);
  EXPECT_EQ(ag::dropout(tape.constant(ones), 0.0, &rng).value(), ones);
  const Matrix d = ag::dropout(tape.constant(ones), 0.3, &rng).value();
  EXPECT_NEAR(d.mean(), 1.0, 0.02);
  const double kept = (d.array() > 0).cast<double>().mean();
  EXPECT_NEAR(kept, 0.7, 0.01);
}

TEST(ParamStoreTest, InitializationIsSeededAndTruncated) {
  ParamStore a(9, 0.5), b(9, 0.5);
  const Matrix& va = a.add("w", 50, 50, Init::TruncNormal).value;
  const Matrix& vb = b.add("w", 50, 50, Init::TruncNormal).value;
  EXPECT_EQ(va, vb);
  EXPECT_LE(va.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_NEAR(va.mean(), 0.0, 0.05);
}

TEST(ParamStoreTest, CopyPrefixRejectsShapeMismatch) {
  ParamStore a, b;
  a.add("camera.w", 2, 2, Init::Ones);
  b.add("camera.w", 2, 3, Init::Zeros);
  EXPECT_THROW(b.copy_prefix_from(a, "camera."), ConfigError);
  ParamStore c;
  c.add("camera.w", 2, 2, Init::Zeros);
  c.add("lidar.w", 1, 1, Init::Zeros);
  c.copy_prefix_from(a, "camera.");
  EXPECT_EQ(c.at("camera.w").value, a.at("camera.w").value);
  EXPECT_THROW(a.at("missing"), ConfigError);
}
