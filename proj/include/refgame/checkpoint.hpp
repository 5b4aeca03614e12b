#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

namespace refgame {

// Checkpoint container: an ordered map of name -> dense 64-bit real matrix.
//
// On-disk layout (all integers little-endian):
//   6-byte magic "RGCK1\n"
//   u32 entry count
//   per entry: u32 name length, name bytes, u32 rows, u32 cols,
//              rows*cols doubles (little-endian, row-major)
using TensorMap = std::map<std::string, Eigen::MatrixXd>;

void save_checkpoint(const std::string& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::string& path);

// Hex-encoded SHA-256.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

}  // namespace refgame
