#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refgame/image.hpp"

namespace refgame {

// IDX container parsing (the FMNIST distribution format). Magic 2051 holds
// images, magic 2049 holds labels; pixel bytes are scaled by 1/255.
// Gzip-compressed payloads are inflated transparently.

struct IdxImages {
  int rows = 0;
  int cols = 0;
  std::vector<Eigen::MatrixXd> images;  // values in [0,1]
};

IdxImages parse_idx_images(const std::vector<uint8_t>& bytes);
std::vector<int> parse_idx_labels(const std::vector<uint8_t>& bytes);

IdxImages load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);

// Raw file read with transparent gzip inflation.
std::vector<uint8_t> read_maybe_gzip(const std::string& path);

// Writers (used by the synthetic data generator and tests).
void write_idx_images(const std::string& path,
                      const std::vector<Eigen::MatrixXd>& images);
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

}  // namespace refgame
