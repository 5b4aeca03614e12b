#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refgame/image.hpp"

namespace refgame {

enum class DatasetKind { kCfmnist8, kCfmnistMany, kTcfmnist };

DatasetKind dataset_kind_from_name(const std::string& name);
const char* dataset_kind_name(DatasetKind k);

struct DatasetItem {
  int index = 0;
  std::string split;      // "train" or "test"
  int src = 0;            // gray-pool index (bottom-left object when tiled)
  int src_tr = -1;        // top-right object for tiled items
  int label = -1;
  int label_tr = -1;
  double hue = 0.0;
  double hue_tr = 0.0;
  std::vector<int> distractors;  // frozen test distractors (test-set indices)
};

// A colorized FMNIST variant. Gray sources are kept and images are rendered
// on demand; hue assignment, the test split, and test distractors are fixed
// by the seed.
struct Dataset {
  DatasetKind kind = DatasetKind::kCfmnist8;
  int image_size = 64;
  uint64_t seed = 0;
  int n_distractors = 3;
  std::vector<GrayImage> gray_pool;
  std::vector<DatasetItem> items;
  std::vector<int> train_indices;  // into items
  std::vector<int> test_indices;

  ColorImage render(int item_index) const;
  const DatasetItem& item(int i) const { return items.at(i); }
};

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kCfmnist8;
  int image_size = 64;
  int train_size = 2048;
  int test_size = 256;
  int n_distractors = 3;
  uint64_t seed = 0;
};

// Deterministic hue/pair/distractor assignment over gray pools loaded from
// IDX files. `train_gray` feeds the train split, `test_gray` the test split.
Dataset build_dataset(const DatasetSpec& spec,
                      std::vector<GrayImage> train_gray,
                      std::vector<GrayImage> test_gray);

// JSONL manifest: one record per image (index, split, sources, labels, hues,
// frozen distractors for test items).
void save_manifest(const Dataset& ds, const std::string& path);
// Restores item assignments from a manifest; gray pools must match the ones
// used at build time.
Dataset load_manifest(const std::string& path,
                      std::vector<GrayImage> train_gray,
                      std::vector<GrayImage> test_gray);

}  // namespace refgame
