#include "fusionvit/camera.hpp"

#include <algorithm>

#include "fusionvit/errors.hpp"

namespace fvit {

ImageTensor normalize(const Rgb8Image& img) {
  ImageTensor out{img.height, img.width, std::vector<double>(img.pixels.size())};
  std::transform(img.pixels.begin(), img.pixels.end(), out.data.begin(),
                 [](std::uint8_t v) { return static_cast<double>(v) / 255.0; });
  return out;
}

Rgb8Image pad_to_multiple(const Rgb8Image& img, int patch_h, int patch_w) {
  if (patch_h <= 0 || patch_w <= 0) throw ConfigError("patch size must be positive");
  const int h = (img.height + patch_h - 1) / patch_h * patch_h;
  const int w = (img.width + patch_w - 1) / patch_w * patch_w;
  if (h == img.height && w == img.width) return img;
  Rgb8Image out{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sy = std::min(y, img.height - 1);
      const int sx = std::min(x, img.width - 1);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

PatchGrid patchify(const ImageTensor& img, int patch_h, int patch_w) {
  if (patch_h <= 0 || patch_w <= 0) throw ConfigError("patch size must be positive");
  if (img.height % patch_h != 0 || img.width % patch_w != 0) {
    throw ContractError("patchify: " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        " image is not a multiple of the " + std::to_string(patch_h) + "x" +
                        std::to_string(patch_w) + " patch; pad it first");
  }
  PatchGrid grid{patch_h, patch_w, img.height / patch_h, img.width / patch_w, {}};
  const Eigen::Index len = static_cast<Eigen::Index>(patch_h) * patch_w * 3;
  grid.patches.resize(grid.count(), len);
  for (int gr = 0; gr < grid.grid_rows; ++gr) {
    for (int gc = 0; gc < grid.grid_cols; ++gc) {
      const Eigen::Index row = gr * grid.grid_cols + gc;
      Eigen::Index k = 0;
      for (int y = 0; y < patch_h; ++y) {
        for (int x = 0; x < patch_w; ++x) {
          for (int c = 0; c < 3; ++c) grid.patches(row, k++) = img.at(gr * patch_h + y, gc * patch_w + x, c);
        }
      }
    }
  }
  return grid;
}

ImageTensor unpatchify(const PatchGrid& grid) {
  ImageTensor img{grid.grid_rows * grid.patch_h, grid.grid_cols * grid.patch_w, {}};
  img.data.resize(static_cast<std::size_t>(img.height) * img.width * 3);
  for (int gr = 0; gr < grid.grid_rows; ++gr) {
    for (int gc = 0; gc < grid.grid_cols; ++gc) {
      const Eigen::Index row = gr * grid.grid_cols + gc;
      Eigen::Index k = 0;
      for (int y = 0; y < grid.patch_h; ++y) {
        for (int x = 0; x < grid.patch_w; ++x) {
          for (int c = 0; c < 3; ++c) img.at(gr * grid.patch_h + y, gc * grid.patch_w + x, c) = grid.patches(row, k++);
        }
      }
    }
  }
  return img;
}

CameraViT::CameraViT(ParamStore& store, const std::string& name, const CameraConfig& cfg, bool ablate_encoder)
    : cfg_(cfg),
      patch_mlp_(reconciled_mlp(store, name + ".patch_mlp", static_cast<Eigen::Index>(cfg.patch_h) * cfg.patch_w * 3,
                                cfg.mlp_widths, cfg.encoder.width, Activation::Gelu, cfg.encoder.dropout)),
      embed_(store, name + ".embed", cfg.encoder.width, cfg.encoder.width, cfg.max_tokens),
      encoder_(store, name + ".encoder", cfg.encoder, ablate_encoder),
      norm_(store, name + ".norm", cfg.encoder.width) {}

Var CameraViT::patch_features(Context& ctx, const PatchGrid& grid) const {
  return patch_mlp_(ctx, ctx.tape.constant(grid.patches));
}

BranchOutput CameraViT::encode(Context& ctx, const ImageTensor& img) const {
  const PatchGrid grid = patchify(img, cfg_.patch_h, cfg_.patch_w);
  if (grid.count() > cfg_.max_tokens) {
    throw ConfigError("camera: " + std::to_string(grid.count()) + " patches exceed max_tokens " +
                      std::to_string(cfg_.max_tokens));
  }
  const TokenSequence z = encoder_(ctx, embed_(ctx, patch_features(ctx, grid)));
  return {sequence_features(ctx, z, norm_), readout(ctx, z, norm_)};
}

}  // namespace fvit
