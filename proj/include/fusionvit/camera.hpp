#pragma once

#include <cstdint>
#include <vector>

#include "fusionvit/encoder.hpp"

namespace fvit {

/// 8-bit interleaved RGB raster, row-major.
struct Rgb8Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  bool operator==(const Rgb8Image&) const = default;

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Interleaved RGB in [0, 1], row-major (HWC).
struct ImageTensor {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  bool operator==(const ImageTensor&) const = default;

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Divides every channel by 255.
ImageTensor normalize(const Rgb8Image& img);

/// Edge-replicates the right and bottom borders up to multiples of the patch size.
Rgb8Image pad_to_multiple(const Rgb8Image& img, int patch_h, int patch_w);

/// Row-major grid of flattened patches; each row of `patches` is one patch laid
/// out as its own HWC raster.
struct PatchGrid {
  int patch_h = 0;
  int patch_w = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  Matrix patches;

  int count() const { return grid_rows * grid_cols; }
};

/// Throws ContractError when the image is not a patch multiple.
PatchGrid patchify(const ImageTensor& img, int patch_h, int patch_w);
ImageTensor unpatchify(const PatchGrid& grid);

struct CameraConfig {
  int patch_h = 32;
  int patch_w = 32;
  std::vector<int> mlp_widths{256, 256, 512};
  int max_tokens = 1024;
  EncoderConfig encoder{.depth = 12, .width = 768, .heads = 12, .mlp_hidden = 3072, .dropout = 0.3};
};

struct BranchOutput {
  Var sequence;  // N x D, LayerNormed non-class tokens
  Var readout;   // 1 x D, LayerNormed class token
};

class CameraViT {
 public:
  CameraViT(ParamStore& store, const std::string& name, const CameraConfig& cfg, bool ablate_encoder = false);

  /// Per-patch MLP features before token embedding (N_c x D_c).
  Var patch_features(Context& ctx, const PatchGrid& grid) const;
  BranchOutput encode(Context& ctx, const ImageTensor& img) const;
  const CameraConfig& config() const { return cfg_; }

 private:
  CameraConfig cfg_;
  Mlp patch_mlp_;
  TokenEmbedding embed_;
  EncoderStage encoder_;
  LayerNorm norm_;
};

}  // namespace fvit
