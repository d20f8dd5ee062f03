#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace fvit {

template <class Box, class IouFn>
std::vector<std::size_t> nms_indices(std::span<const Box> boxes, std::span<const double> confidence,
                                     double iou_threshold, std::size_t max_out, IouFn&& iou) {
  if (boxes.size() != confidence.size()) {
    throw std::invalid_argument("nms: boxes and confidences differ in length");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });

  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    if (kept.size() >= max_out) break;
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (iou(boxes[k], boxes[idx]) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

}  // namespace fvit
