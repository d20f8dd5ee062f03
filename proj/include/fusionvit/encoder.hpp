#pragma once

#include <string>
#include <vector>

#include "fusionvit/nn.hpp"

namespace fvit {

/// S x D token matrix; row 0 is the class token when has_class_token is set.
struct TokenSequence {
  Var tokens;
  bool has_class_token = false;

  Eigen::Index length() const { return tokens.rows(); }
  Eigen::Index width() const { return tokens.cols(); }
};

struct EncoderConfig {
  int depth = 1;
  int width = 768;
  int heads = 12;
  int mlp_hidden = 3072;
  double dropout = 0.3;
  Activation activation = Activation::Gelu;

  int head_width() const { return width / heads; }
  /// Throws ConfigError unless width % heads == 0 and dropout is in [0, 1).
  void validate() const;
};

/// Learned projection, class token and positional table. Produces
/// [class + pos_0; proj(f_1) + pos_1; ...].
struct TokenEmbedding {
  TokenEmbedding() = default;
  TokenEmbedding(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index width,
                 Eigen::Index max_tokens);

  TokenSequence operator()(Context& ctx, const Var& features) const;

  Linear projection;
  Parameter* class_token = nullptr;
  Parameter* positions = nullptr;
};

TokenSequence embed_tokens(Context& ctx, const Var& features, const Linear& projection, Parameter& class_token,
                           Parameter& positions);

/// Pre-LN transformer stack:
///   Z' = MSA(LN(Z)) + Z
///   Z  = MLP(LN(Z')) + Z'
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ParamStore& store, const std::string& name, const EncoderConfig& cfg);

  TokenSequence operator()(Context& ctx, const TokenSequence& z0) const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  struct Block {
    LayerNorm ln_attn;
    Linear query, key, value, out;
    LayerNorm ln_mlp;
    Linear fc1, fc2;
  };

  Var attention(Context& ctx, const Block& b, const Var& x) const;

  EncoderConfig cfg_;
  std::vector<Block> blocks_;
};

/// Either a TransformerEncoder or, when ablated, a single width-preserving
/// per-token Linear standing in for the whole stack.
class EncoderStage {
 public:
  EncoderStage() = default;
  EncoderStage(ParamStore& store, const std::string& name, const EncoderConfig& cfg, bool linear_stand_in);

  TokenSequence operator()(Context& ctx, const TokenSequence& z0) const;
  bool is_stand_in() const { return stand_in_.weight != nullptr; }

 private:
  TransformerEncoder transformer_;
  Linear stand_in_;
};

/// LN of the class token. Throws ContractError without one.
Var readout(Context& ctx, const TokenSequence& z, const LayerNorm& norm);

/// LN of every non-class token.
Var sequence_features(Context& ctx, const TokenSequence& z, const LayerNorm& norm);

}  // namespace fvit
