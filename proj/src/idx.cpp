#include "refgame/idx.hpp"

#include <zlib.h>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace refgame {

namespace {

uint32_t read_be32(const std::vector<uint8_t>& b, size_t off) {
  if (off + 4 > b.size()) {
    throw std::runtime_error("idx: truncated header at byte offset " +
                             std::to_string(off));
  }
  return (static_cast<uint32_t>(b[off]) << 24) |
         (static_cast<uint32_t>(b[off + 1]) << 16) |
         (static_cast<uint32_t>(b[off + 2]) << 8) |
         static_cast<uint32_t>(b[off + 3]);
}

std::vector<uint8_t> gunzip(const std::vector<uint8_t>& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) {
    throw std::runtime_error("idx: inflateInit failed");
  }
  std::vector<uint8_t> out;
  std::vector<uint8_t> buf(1 << 16);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw std::runtime_error("idx: gzip payload corrupt");
    }
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

}  // namespace

std::vector<uint8_t> read_maybe_gzip(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("idx: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) {
    return gunzip(bytes);
  }
  return bytes;
}

IdxImages parse_idx_images(const std::vector<uint8_t>& bytes) {
  const uint32_t magic = read_be32(bytes, 0);
  if (magic != 2051) {
    throw std::runtime_error("idx: unknown magic " + std::to_string(magic) +
                             " at byte offset 0 (expected 2051 for images)");
  }
  const uint32_t count = read_be32(bytes, 4);
  const uint32_t rows = read_be32(bytes, 8);
  const uint32_t cols = read_be32(bytes, 12);
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096) {
    throw std::runtime_error("idx: implausible dimensions at byte offset 8");
  }
  const size_t need = 16 + static_cast<size_t>(count) * rows * cols;
  if (bytes.size() < need) {
    throw std::runtime_error("idx: truncated payload, have " +
                             std::to_string(bytes.size()) + " bytes, need " +
                             std::to_string(need));
  }
  IdxImages out;
  out.rows = static_cast<int>(rows);
  out.cols = static_cast<int>(cols);
  out.images.reserve(count);
  size_t off = 16;
  for (uint32_t k = 0; k < count; ++k) {
    Eigen::MatrixXd img(rows, cols);
    for (uint32_t i = 0; i < rows; ++i) {
      for (uint32_t j = 0; j < cols; ++j) {
        img(i, j) = bytes[off++] / 255.0;
      }
    }
    out.images.push_back(std::move(img));
  }
  return out;
}

std::vector<int> parse_idx_labels(const std::vector<uint8_t>& bytes) {
  const uint32_t magic = read_be32(bytes, 0);
  if (magic != 2049) {
    throw std::runtime_error("idx: unknown magic " + std::to_string(magic) +
                             " at byte offset 0 (expected 2049 for labels)");
  }
  const uint32_t count = read_be32(bytes, 4);
  if (bytes.size() < 8 + count) {
    throw std::runtime_error("idx: truncated label payload");
  }
  std::vector<int> labels(count);
  for (uint32_t k = 0; k < count; ++k) labels[k] = bytes[8 + k];
  return labels;
}

IdxImages load_idx_images(const std::string& path) {
  return parse_idx_images(read_maybe_gzip(path));
}

std::vector<int> load_idx_labels(const std::string& path) {
  return parse_idx_labels(read_maybe_gzip(path));
}

namespace {

void write_be32(std::ostream& os, uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  os.write(b, 4);
}

}  // namespace

void write_idx_images(const std::string& path,
                      const std::vector<Eigen::MatrixXd>& images) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("idx: cannot write " + path);
  write_be32(os, 2051);
  write_be32(os, static_cast<uint32_t>(images.size()));
  const long rows = images.empty() ? 28 : images[0].rows();
  const long cols = images.empty() ? 28 : images[0].cols();
  write_be32(os, static_cast<uint32_t>(rows));
  write_be32(os, static_cast<uint32_t>(cols));
  for (const auto& img : images) {
    for (long i = 0; i < rows; ++i) {
      for (long j = 0; j < cols; ++j) {
        const double v = std::min(1.0, std::max(0.0, img(i, j)));
        os.put(static_cast<char>(static_cast<int>(v * 255.0 + 0.5)));
      }
    }
  }
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("idx: cannot write " + path);
  write_be32(os, 2049);
  write_be32(os, static_cast<uint32_t>(labels.size()));
  for (int l : labels) os.put(static_cast<char>(l));
}

}  // namespace refgame
