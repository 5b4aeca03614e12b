#pragma once

#include <Eigen/Dense>
#include <vector>

#include "refgame/image.hpp"
#include "refgame/rng.hpp"

namespace refgame {

// Procedural 28x28 grayscale silhouette for an FMNIST-style label (0..9)
// with jittered placement, intensity and pixel noise.
Eigen::MatrixXd synth_shape(int label, Rng& rng);

// Pool of `count` labeled silhouettes cycling through the 10 labels.
std::vector<GrayImage> synth_gray_pool(int count, uint64_t seed);

}  // namespace refgame
