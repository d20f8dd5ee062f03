#include "fusionvit/encoder.hpp"

#include <cmath>

#include "fusionvit/errors.hpp"

namespace fvit {

void EncoderConfig::validate() const {
  if (depth < 0) throw ConfigError("encoder depth must be >= 0");
  if (width <= 0 || heads <= 0 || width % heads != 0) {
    throw ConfigError("encoder width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
  }
  if (mlp_hidden <= 0) throw ConfigError("encoder mlp_hidden must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
}

TokenEmbedding::TokenEmbedding(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index width,
                               Eigen::Index max_tokens)
    : projection(store, name + ".projection", in, width),
      class_token(&store.add(name + ".class_token", 1, width, Init::TruncNormal)),
      positions(&store.add(name + ".positions", max_tokens + 1, width, Init::TruncNormal)) {}

TokenSequence TokenEmbedding::operator()(Context& ctx, const Var& features) const {
  return embed_tokens(ctx, features, projection, *class_token, *positions);
}

TokenSequence embed_tokens(Context& ctx, const Var& features, const Linear& projection, Parameter& class_token,
                           Parameter& positions) {
  const Eigen::Index s = features.rows();
  if (projection.out_features() != class_token.value.cols() || positions.value.cols() != class_token.value.cols()) {
    throw ConfigError("embed_tokens: projection, class token and positions disagree on width");
  }
  if (positions.value.rows() < s + 1) {
    throw ConfigError("embed_tokens: positional table holds " + std::to_string(positions.value.rows()) +
                      " rows, need " + std::to_string(s + 1));
  }
  Var cls = ctx.tape.param(class_token);
  Var body = projection(ctx, features);
  Var joined = ag::concat_rows({cls, body});
  Var pos = ag::slice_rows(ctx.tape.param(positions), 0, s + 1);
  return {ag::add(joined, pos), true};
}

TransformerEncoder::TransformerEncoder(ParamStore& store, const std::string& name, const EncoderConfig& cfg)
    : cfg_(cfg) {
  cfg_.validate();
  const Eigen::Index d = cfg.width;
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string p = name + ".block" + std::to_string(i);
    blocks_.push_back(Block{LayerNorm(store, p + ".ln_attn", d), Linear(store, p + ".query", d, d),
                            Linear(store, p + ".key", d, d), Linear(store, p + ".value", d, d),
                            Linear(store, p + ".out", d, d), LayerNorm(store, p + ".ln_mlp", d),
                            Linear(store, p + ".fc1", d, cfg.mlp_hidden), Linear(store, p + ".fc2", cfg.mlp_hidden, d)});
  }
}

Var TransformerEncoder::attention(Context& ctx, const Block& b, const Var& x) const {
  const Var q = b.query(ctx, x);
  const Var k = b.key(ctx, x);
  const Var v = b.value(ctx, x);
  const int dh = cfg_.head_width();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg_.heads));
  for (int h = 0; h < cfg_.heads; ++h) {
    const Var qh = ag::slice_cols(q, h * dh, dh);
    const Var kh = ag::slice_cols(k, h * dh, dh);
    const Var vh = ag::slice_cols(v, h * dh, dh);
    Var weights = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt));
    if (ctx.training) weights = ag::dropout(weights, cfg_.dropout, ctx.rng);
    heads.push_back(ag::matmul(weights, vh));
  }
  const Var merged = cfg_.heads == 1 ? heads.front() : ag::concat_cols(heads);
  return b.out(ctx, merged);
}

TokenSequence TransformerEncoder::operator()(Context& ctx, const TokenSequence& z0) const {
  if (z0.width() != cfg_.width) {
    throw ConfigError("encoder: token width " + std::to_string(z0.width()) + " != configured " +
                      std::to_string(cfg_.width));
  }
  Var z = z0.tokens;
  for (const Block& b : blocks_) {
    const Var z_mid = ag::add(attention(ctx, b, b.ln_attn(ctx, z)), z);
    Var hidden = activate(b.fc1(ctx, b.ln_mlp(ctx, z_mid)), cfg_.activation);
    if (ctx.training) hidden = ag::dropout(hidden, cfg_.dropout, ctx.rng);
    z = ag::add(b.fc2(ctx, hidden), z_mid);
  }
  return {z, z0.has_class_token};
}

EncoderStage::EncoderStage(ParamStore& store, const std::string& name, const EncoderConfig& cfg,
                           bool linear_stand_in) {
  if (linear_stand_in) {
    stand_in_ = Linear(store, name + ".stand_in", cfg.width, cfg.width);
  } else {
    transformer_ = TransformerEncoder(store, name, cfg);
  }
}

TokenSequence EncoderStage::operator()(Context& ctx, const TokenSequence& z0) const {
  if (is_stand_in()) return {stand_in_(ctx, z0.tokens), z0.has_class_token};
  return transformer_(ctx, z0);
}

Var readout(Context& ctx, const TokenSequence& z, const LayerNorm& norm) {
  if (!z.has_class_token) throw ContractError("readout: sequence has no class token");
  return norm(ctx, ag::slice_rows(z.tokens, 0, 1));
}

Var sequence_features(Context& ctx, const TokenSequence& z, const LayerNorm& norm) {
  const Eigen::Index skip = z.has_class_token ? 1 : 0;
  if (z.length() - skip < 1) throw ContractError("sequence_features: no non-class tokens");
  return norm(ctx, ag::slice_rows(z.tokens, skip, z.length() - skip));
}

}  // namespace fvit
