#pragma once

#include <string>
#include <vector>

#include "fusionvit/encoder.hpp"

namespace fvit {

enum class FusionStrategy { Sum, Concat, DirectConcat };

const char* to_string(FusionStrategy s);
FusionStrategy fusion_strategy_from_string(const std::string& s);

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::Concat;
  /// Width h shared by the camera and lidar token sequences.
  int input_width = 768;
  std::vector<int> mlp_widths{256, 256, 512, 512, 1024};
  /// Fused sequence cap; CONCAT drops trailing lidar tokens beyond it.
  int max_tokens = 1024;
  /// Fixed input slots for DIRECT_CONCAT (shorter inputs are zero padded).
  int camera_tokens = 49;
  int lidar_tokens = 1024;
  EncoderConfig encoder{.depth = 12, .width = 1024, .heads = 16, .mlp_hidden = 4096, .dropout = 0.3};

  /// Fused token count N_m for the given input lengths.
  int fused_tokens(int n_camera, int n_lidar) const;
};

/// MixViT: merges the camera and lidar token sequences, maps them to the fused
/// width and re-encodes with a class token.
class MixViT {
 public:
  MixViT(ParamStore& store, const std::string& name, const FusionConfig& cfg, bool ablate_encoder = false);

  /// Pre-encoder fused tokens X_m (N_m x D_m).
  Var fuse(Context& ctx, const Var& camera_seq, const Var& lidar_seq) const;
  /// LN of the class token after the fused encoder.
  Var encode_fused(Context& ctx, const Var& fused) const;
  Var operator()(Context& ctx, const Var& camera_seq, const Var& lidar_seq) const {
    return encode_fused(ctx, fuse(ctx, camera_seq, lidar_seq));
  }
  const FusionConfig& config() const { return cfg_; }

 private:
  FusionConfig cfg_;
  Mlp token_mlp_;
  Linear direct_;
  TokenEmbedding embed_;
  EncoderStage encoder_;
  LayerNorm norm_;
};

}  // namespace fvit
