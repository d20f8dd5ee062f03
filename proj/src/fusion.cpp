#include "fusionvit/fusion.hpp"

#include <algorithm>

#include "fusionvit/errors.hpp"

namespace fvit {

const char* to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::Sum:
      return "SUM";
    case FusionStrategy::Concat:
      return "CONCAT";
    case FusionStrategy::DirectConcat:
      return "DIRECT_CONCAT";
  }
  return "?";
}

FusionStrategy fusion_strategy_from_string(const std::string& s) {
  if (s == "SUM" || s == "sum") return FusionStrategy::Sum;
  if (s == "CONCAT" || s == "concat") return FusionStrategy::Concat;
  if (s == "DIRECT_CONCAT" || s == "direct_concat") return FusionStrategy::DirectConcat;
  throw ConfigError("unknown fusion strategy: " + s);
}

int FusionConfig::fused_tokens(int n_camera, int n_lidar) const {
  switch (strategy) {
    case FusionStrategy::Concat:
      return std::min(n_camera + n_lidar, max_tokens);
    case FusionStrategy::Sum:
      return std::max(n_camera, n_lidar);
    case FusionStrategy::DirectConcat:
      return std::min(camera_tokens + lidar_tokens, max_tokens);
  }
  return 0;
}

MixViT::MixViT(ParamStore& store, const std::string& name, const FusionConfig& cfg, bool ablate_encoder)
    : cfg_(cfg),
      embed_(store, name + ".embed", cfg.encoder.width, cfg.encoder.width, cfg.max_tokens),
      encoder_(store, name + ".encoder", cfg.encoder, ablate_encoder),
      norm_(store, name + ".norm", cfg.encoder.width) {
  const Eigen::Index d = cfg.encoder.width;
  if (cfg.strategy == FusionStrategy::DirectConcat) {
    const Eigen::Index in = static_cast<Eigen::Index>(cfg.input_width) * (cfg.camera_tokens + cfg.lidar_tokens);
    direct_ = Linear(store, name + ".direct", in, static_cast<Eigen::Index>(cfg.fused_tokens(0, 0)) * d);
  } else {
    token_mlp_ = reconciled_mlp(store, name + ".token_mlp", cfg.input_width, cfg.mlp_widths, d, Activation::Gelu,
                                cfg.encoder.dropout);
  }
}

namespace {

Var pad_rows(Context& ctx, const Var& x, Eigen::Index rows) {
  if (x.rows() == rows) return x;
  return ag::concat_rows({x, ctx.tape.constant(Matrix::Zero(rows - x.rows(), x.cols()))});
}

}  // namespace

Var MixViT::fuse(Context& ctx, const Var& camera_seq, const Var& lidar_seq) const {
  if (camera_seq.cols() != cfg_.input_width || lidar_seq.cols() != cfg_.input_width) {
    throw ConfigError("fuse: camera width " + std::to_string(camera_seq.cols()) + " and lidar width " +
                      std::to_string(lidar_seq.cols()) + " must both equal " + std::to_string(cfg_.input_width));
  }
  const Eigen::Index nc = camera_seq.rows();
  const Eigen::Index nl = lidar_seq.rows();
  switch (cfg_.strategy) {
    case FusionStrategy::Concat: {
      const Eigen::Index keep_lidar = std::min<Eigen::Index>(nl, std::max<Eigen::Index>(0, cfg_.max_tokens - nc));
      if (nc > cfg_.max_tokens) throw ConfigError("fuse: camera tokens alone exceed the fused cap");
      const Var joined =
          keep_lidar == 0 ? camera_seq : ag::concat_rows({camera_seq, ag::slice_rows(lidar_seq, 0, keep_lidar)});
      return token_mlp_(ctx, joined);
    }
    case FusionStrategy::Sum: {
      const Eigen::Index n = std::max(nc, nl);
      return token_mlp_(ctx, ag::add(pad_rows(ctx, camera_seq, n), pad_rows(ctx, lidar_seq, n)));
    }
    case FusionStrategy::DirectConcat: {
      if (nc > cfg_.camera_tokens || nl > cfg_.lidar_tokens) {
        throw ConfigError("fuse: DIRECT_CONCAT input longer than its fixed slots");
      }
      const Var cam = pad_rows(ctx, camera_seq, cfg_.camera_tokens);
      const Var lid = pad_rows(ctx, lidar_seq, cfg_.lidar_tokens);
      const Var flat = ag::reshape(ag::concat_rows({cam, lid}), 1,
                                   static_cast<Eigen::Index>(cfg_.camera_tokens + cfg_.lidar_tokens) * cfg_.input_width);
      return ag::reshape(direct_(ctx, flat), cfg_.fused_tokens(0, 0), cfg_.encoder.width);
    }
  }
  throw ConfigError("fuse: unknown strategy");
}

Var MixViT::encode_fused(Context& ctx, const Var& fused) const {
  const TokenSequence z = encoder_(ctx, embed_(ctx, fused));
  return readout(ctx, z, norm_);
}

}  // namespace fvit
