#include "refgame/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace refgame {

NormStats speaker_norm_stats() {
  return NormStats{{0.481, 0.458, 0.408}, {0.269, 0.261, 0.278}};
}

NormStats listener_norm_stats() {
  return NormStats{{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
}

const char* transform_name(TransformTag t) {
  switch (t) {
    case TransformTag::kIdentity: return "identity";
    case TransformTag::kCrop: return "crop";
    case TransformTag::kBlur: return "blur";
    case TransformTag::kGrayscale: return "grayscale";
  }
  return "identity";
}

TransformTag transform_from_name(const std::string& name) {
  if (name == "identity") return TransformTag::kIdentity;
  if (name == "crop") return TransformTag::kCrop;
  if (name == "blur") return TransformTag::kBlur;
  if (name == "grayscale") return TransformTag::kGrayscale;
  throw std::invalid_argument("unknown transform: " + name);
}

namespace {

// Catmull-Rom kernel (bicubic with a = -0.5).
double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

void hsv_to_rgb(double h_turn, double s, double v, double& r, double& g,
                double& b) {
  const double h = h_turn * 6.0;  // sextant position
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  const double m = v - c;
  double rr = 0, gg = 0, bb = 0;
  switch (static_cast<int>(h) % 6) {
    case 0: rr = c; gg = x; break;
    case 1: rr = x; gg = c; break;
    case 2: gg = c; bb = x; break;
    case 3: gg = x; bb = c; break;
    case 4: rr = x; bb = c; break;
    default: rr = c; bb = x; break;
  }
  r = rr + m;
  g = gg + m;
  b = bb + m;
}

}  // namespace

Eigen::MatrixXd bicubic_resize(const Eigen::MatrixXd& src, int out_size) {
  const int in_rows = static_cast<int>(src.rows());
  const int in_cols = static_cast<int>(src.cols());
  const double row_scale = static_cast<double>(in_rows) / out_size;
  const double col_scale = static_cast<double>(in_cols) / out_size;

  // Horizontal pass.
  Eigen::MatrixXd tmp(in_rows, out_size);
  for (int oc = 0; oc < out_size; ++oc) {
    const double sc = (oc + 0.5) * col_scale - 0.5;
    const int base = static_cast<int>(std::floor(sc));
    double w[4];
    for (int k = 0; k < 4; ++k) w[k] = cubic_weight(sc - (base - 1 + k));
    for (int r = 0; r < in_rows; ++r) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) {
        acc += w[k] * src(r, clamp_index(base - 1 + k, in_cols));
      }
      tmp(r, oc) = acc;
    }
  }
  // Vertical pass.
  Eigen::MatrixXd out(out_size, out_size);
  for (int orow = 0; orow < out_size; ++orow) {
    const double sr = (orow + 0.5) * row_scale - 0.5;
    const int base = static_cast<int>(std::floor(sr));
    double w[4];
    for (int k = 0; k < 4; ++k) w[k] = cubic_weight(sr - (base - 1 + k));
    for (int oc = 0; oc < out_size; ++oc) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) {
        acc += w[k] * tmp(clamp_index(base - 1 + k, in_rows), oc);
      }
      out(orow, oc) = acc;
    }
  }
  return out;
}

ColorImage colorize(const GrayImage& g, double hue, int size) {
  if (hue < 0.0 || hue >= 1.0) {
    throw std::invalid_argument("colorize: hue must lie in [0,1)");
  }
  const int n = static_cast<int>(g.pixels.rows());
  // Equal-luma mix: half-saturated hue plus a gray offset chosen so the
  // Rec.601 luma of a colorized pixel is 0.55 * intensity for every hue.
  // The grayscale view then carries no hue information.
  double r0, g0, b0;
  hsv_to_rgb(hue, 1.0, 1.0, r0, g0, b0);
  const double luma0 = 0.299 * r0 + 0.587 * g0 + 0.114 * b0;
  const double alpha = 0.5;
  const double beta = 0.55 - alpha * luma0;
  const double mix[3] = {alpha * r0 + beta, alpha * g0 + beta,
                         alpha * b0 + beta};
  std::array<Eigen::MatrixXd, 3> rgb;
  for (int c = 0; c < 3; ++c) rgb[c] = mix[c] * g.pixels;
  ColorImage out;
  out.label = g.label;
  out.hue = hue;
  for (int c = 0; c < 3; ++c) {
    out.channel[c] = bicubic_resize(rgb[c], size)
                         .cwiseMax(0.0)
                         .cwiseMin(1.0);
  }
  return out;
}

ColorImage tile(const ColorImage& bl, const ColorImage& tr) {
  const int s = bl.size();
  if (tr.size() != s) throw std::invalid_argument("tile: size mismatch");
  const int q = s / 2;
  ColorImage out;
  out.tiled = true;
  out.label = bl.label;
  out.hue = bl.hue;
  out.label_tr = tr.label;
  out.hue_tr = tr.hue;
  for (int c = 0; c < 3; ++c) {
    out.channel[c] = Eigen::MatrixXd::Zero(s, s);
    out.channel[c].block(s - q, 0, q, q) =
        bicubic_resize(bl.channel[c], q).cwiseMax(0.0).cwiseMin(1.0);
    out.channel[c].block(0, s - q, q, q) =
        bicubic_resize(tr.channel[c], q).cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

ColorImage transform_crop(const ColorImage& img) {
  const int s = img.size();
  const int q = s / 2;
  ColorImage out = img;
  for (int c = 0; c < 3; ++c) {
    Eigen::MatrixXd quad = img.channel[c].block(0, s - q, q, q);
    out.channel[c] = bicubic_resize(quad, s).cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

ColorImage transform_blur(const ColorImage& img) {
  const int s = img.size();
  const double sigma = s / 4.0;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  Eigen::VectorXd kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) {
    kernel(k + radius) = std::exp(-0.5 * (k * k) / (sigma * sigma));
  }
  kernel /= kernel.sum();

  ColorImage out = img;
  for (int c = 0; c < 3; ++c) {
    const Eigen::MatrixXd& src = img.channel[c];
    Eigen::MatrixXd tmp(s, s);
    for (int i = 0; i < s; ++i) {
      for (int j = 0; j < s; ++j) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel(k + radius) * src(i, clamp_index(j + k, s));
        }
        tmp(i, j) = acc;
      }
    }
    Eigen::MatrixXd dst(s, s);
    for (int j = 0; j < s; ++j) {
      for (int i = 0; i < s; ++i) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel(k + radius) * tmp(clamp_index(i + k, s), j);
        }
        dst(i, j) = acc;
      }
    }
    out.channel[c] = std::move(dst);
  }
  return out;
}

ColorImage transform_grayscale(const ColorImage& img) {
  ColorImage out = img;
  Eigen::MatrixXd y = 0.299 * img.channel[0] + 0.587 * img.channel[1] +
                      0.114 * img.channel[2];
  out.channel[0] = y;
  out.channel[1] = y;
  out.channel[2] = std::move(y);
  return out;
}

ColorImage apply_transform(const ColorImage& img, TransformTag tag) {
  switch (tag) {
    case TransformTag::kIdentity: return img;
    case TransformTag::kCrop: return transform_crop(img);
    case TransformTag::kBlur: return transform_blur(img);
    case TransformTag::kGrayscale: return transform_grayscale(img);
  }
  return img;
}

ColorImage normalize(const ColorImage& img, const NormStats& stats) {
  ColorImage out = img;
  for (int c = 0; c < 3; ++c) {
    out.channel[c] = (img.channel[c].array() - stats.mean[c]) / stats.stddev[c];
  }
  return out;
}

double extract_hue(const ColorImage& img) {
  double sx = 0.0, sy = 0.0;
  long count = 0;
  const int s = img.size();
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      const double r = img.channel[0](i, j);
      const double g = img.channel[1](i, j);
      const double b = img.channel[2](i, j);
      const double mx = std::max({r, g, b});
      const double mn = std::min({r, g, b});
      const double d = mx - mn;
      if (mx < 0.2 || d < 0.1) continue;
      double h;
      if (mx == r) {
        h = std::fmod((g - b) / d + 6.0, 6.0);
      } else if (mx == g) {
        h = (b - r) / d + 2.0;
      } else {
        h = (r - g) / d + 4.0;
      }
      const double turn = h / 6.0;
      sx += std::cos(2.0 * M_PI * turn);
      sy += std::sin(2.0 * M_PI * turn);
      ++count;
    }
  }
  if (count == 0) return -1.0;
  double angle = std::atan2(sy, sx) / (2.0 * M_PI);
  if (angle < 0.0) angle += 1.0;
  return angle;
}

}  // namespace refgame
