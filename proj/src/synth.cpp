#include "refgame/synth.hpp"

#include <algorithm>

namespace refgame {

namespace {

void fill_rect(Eigen::MatrixXd& m, int r0, int r1, int c0, int c1, double v) {
  for (int r = std::max(0, r0); r < std::min<int>(m.rows(), r1); ++r) {
    for (int c = std::max(0, c0); c < std::min<int>(m.cols(), c1); ++c) {
      m(r, c) = v;
    }
  }
}

}  // namespace

Eigen::MatrixXd synth_shape(int label, Rng& rng) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(28, 28);
  const int ox = rng.uniform_int(5) - 2;
  const int oy = rng.uniform_int(5) - 2;
  const double v = 0.6 + 0.4 * rng.uniform();
  auto rect = [&](int r0, int r1, int c0, int c1) {
    fill_rect(m, r0 + oy, r1 + oy, c0 + ox, c1 + ox, v);
  };
  switch (label) {
    case 0:  // t-shirt: torso with short sleeves
      rect(6, 10, 3, 25);
      rect(10, 22, 9, 19);
      break;
    case 1:  // trouser: two legs
      rect(4, 24, 9, 13);
      rect(4, 24, 15, 19);
      rect(4, 8, 9, 19);
      break;
    case 2:  // pullover: torso with long sleeves
      rect(6, 22, 9, 19);
      rect(6, 20, 4, 8);
      rect(6, 20, 20, 24);
      break;
    case 3:  // dress: widening triangle
      for (int r = 4; r < 24; ++r) {
        const int w = 2 + (r - 4) / 2;
        rect(r, r + 1, 14 - w, 14 + w);
      }
      break;
    case 4:  // coat: tall body with open front
      rect(4, 24, 7, 13);
      rect(4, 24, 15, 21);
      rect(4, 7, 7, 21);
      break;
    case 5:  // sandal: sole with thin straps
      rect(20, 23, 4, 24);
      rect(12, 20, 6, 8);
      rect(12, 20, 14, 16);
      rect(12, 14, 6, 16);
      break;
    case 6:  // shirt: torso with collar slit
      rect(6, 22, 8, 20);
      fill_rect(m, 6 + oy, 14 + oy, 13 + ox, 15 + ox, 0.0);
      break;
    case 7:  // sneaker: low wedge
      rect(18, 24, 3, 25);
      rect(14, 18, 12, 25);
      break;
    case 8:  // bag: box with handle
      rect(12, 24, 6, 22);
      rect(6, 9, 10, 18);
      fill_rect(m, 8 + oy, 12 + oy, 12 + ox, 16 + ox, 0.0);
      break;
    default:  // ankle boot: shaft plus foot
      rect(4, 22, 6, 12);
      rect(16, 22, 6, 24);
      break;
  }
  for (int r = 0; r < 28; ++r) {
    for (int c = 0; c < 28; ++c) {
      if (m(r, c) > 0.0) {
        m(r, c) = std::clamp(m(r, c) + 0.05 * (rng.uniform() - 0.5), 0.0, 1.0);
      }
    }
  }
  return m;
}

std::vector<GrayImage> synth_gray_pool(int count, uint64_t seed) {
  Rng rng(seed);
  std::vector<GrayImage> out(count);
  for (int i = 0; i < count; ++i) {
    out[i].label = i % 10;
    out[i].pixels = synth_shape(out[i].label, rng);
  }
  return out;
}

}  // namespace refgame
