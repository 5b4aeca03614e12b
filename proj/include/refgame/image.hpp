#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>

namespace refgame {

// 28x28 grayscale source image, values in [0,1], row 0 at the top.
struct GrayImage {
  Eigen::MatrixXd pixels;  // 28x28
  int label = -1;
};

// SxSx3 image in [0,1]. For tiled images both (label, hue) pairs are kept:
// index 0 is the bottom-left object, index 1 the top-right one.
struct ColorImage {
  std::array<Eigen::MatrixXd, 3> channel;
  int label = -1;
  double hue = 0.0;
  bool tiled = false;
  int label_tr = -1;
  double hue_tr = 0.0;

  int size() const { return static_cast<int>(channel[0].rows()); }
};

// Per-channel normalization profile; one per encoder family.
struct NormStats {
  std::array<double, 3> mean;
  std::array<double, 3> stddev;
};

// CLIP-style (speaker-side) and ALIGN-style (listener-side) profiles.
NormStats speaker_norm_stats();
NormStats listener_norm_stats();

enum class TransformTag { kIdentity, kCrop, kBlur, kGrayscale };

const char* transform_name(TransformTag t);
TransformTag transform_from_name(const std::string& name);

// Catmull-Rom (a = -0.5) separable bicubic resize with edge clamping.
Eigen::MatrixXd bicubic_resize(const Eigen::MatrixXd& src, int out_size);

// HSV(h=hue, s=1, v=gray) -> RGB, bicubic upscale 28 -> size, clip to [0,1].
ColorImage colorize(const GrayImage& g, double hue, int size);

// Bottom-left quadrant from `bl`, top-right quadrant from `tr`; sources are
// downscaled to quadrant size, other quadrants stay zero.
ColorImage tile(const ColorImage& bl, const ColorImage& tr);

// Top-right S/2 square, upscaled back to S.
ColorImage transform_crop(const ColorImage& img);
// Gaussian blur, sigma = 25 * S / 224, kernel truncated at 3 sigma,
// clamp padding.
ColorImage transform_blur(const ColorImage& img);
// BT.601 luminance replicated across channels.
ColorImage transform_grayscale(const ColorImage& img);

ColorImage apply_transform(const ColorImage& img, TransformTag tag);

// Per-channel (x - mean) / std; not clipped.
ColorImage normalize(const ColorImage& img, const NormStats& stats);

// Mean hue (fraction of a turn) over saturated pixels; -1 if none.
double extract_hue(const ColorImage& img);

}  // namespace refgame
