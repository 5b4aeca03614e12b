#include "refgame/dataset.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "refgame/rng.hpp"
#include "refgame/vocab.hpp"

namespace refgame {

DatasetKind dataset_kind_from_name(const std::string& name) {
  if (name == "cfmnist8") return DatasetKind::kCfmnist8;
  if (name == "cfmnist-many") return DatasetKind::kCfmnistMany;
  if (name == "tcfmnist") return DatasetKind::kTcfmnist;
  throw std::invalid_argument("unknown dataset kind: " + name);
}

const char* dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::kCfmnist8: return "cfmnist8";
    case DatasetKind::kCfmnistMany: return "cfmnist-many";
    case DatasetKind::kTcfmnist: return "tcfmnist";
  }
  return "cfmnist8";
}

ColorImage Dataset::render(int item_index) const {
  const DatasetItem& it = items.at(item_index);
  if (kind == DatasetKind::kTcfmnist) {
    ColorImage bl = colorize(gray_pool.at(it.src), it.hue, image_size);
    ColorImage tr = colorize(gray_pool.at(it.src_tr), it.hue_tr, image_size);
    return tile(bl, tr);
  }
  return colorize(gray_pool.at(it.src), it.hue, image_size);
}

namespace {

double draw_hue(DatasetKind kind, Rng& rng) {
  if (kind == DatasetKind::kCfmnistMany) {
    return rng.uniform_int(360) / 360.0;
  }
  return hue_table()[rng.uniform_int(static_cast<int>(hue_table().size()))]
      .second;
}

}  // namespace

Dataset build_dataset(const DatasetSpec& spec,
                      std::vector<GrayImage> train_gray,
                      std::vector<GrayImage> test_gray) {
  if (static_cast<int>(train_gray.size()) < spec.train_size ||
      static_cast<int>(test_gray.size()) < spec.test_size) {
    throw std::invalid_argument("build_dataset: source pools too small");
  }
  Dataset ds;
  ds.kind = spec.kind;
  ds.image_size = spec.image_size;
  ds.seed = spec.seed;
  ds.n_distractors = spec.n_distractors;
  const int train_offset = 0;
  const int test_offset = static_cast<int>(train_gray.size());
  ds.gray_pool = std::move(train_gray);
  ds.gray_pool.insert(ds.gray_pool.end(),
                      std::make_move_iterator(test_gray.begin()),
                      std::make_move_iterator(test_gray.end()));

  Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  const bool tiled = spec.kind == DatasetKind::kTcfmnist;

  auto add_items = [&](const std::string& split, int offset, int pool_size,
                       int count) {
    for (int k = 0; k < count; ++k) {
      DatasetItem it;
      it.index = static_cast<int>(ds.items.size());
      it.split = split;
      it.src = offset + k;
      it.label = ds.gray_pool[it.src].label;
      it.hue = draw_hue(spec.kind, rng);
      if (tiled) {
        int partner = rng.uniform_int(pool_size - 1);
        if (partner >= k) ++partner;
        it.src_tr = offset + partner;
        it.label_tr = ds.gray_pool[it.src_tr].label;
        it.hue_tr = draw_hue(spec.kind, rng);
      }
      if (split == "train") {
        ds.train_indices.push_back(it.index);
      } else {
        ds.test_indices.push_back(it.index);
      }
      ds.items.push_back(std::move(it));
    }
  };
  add_items("train", train_offset, spec.train_size, spec.train_size);
  add_items("test", test_offset, spec.test_size, spec.test_size);

  // Frozen test-time distractors, drawn without replacement from the test
  // split and never equal to the target.
  for (int idx : ds.test_indices) {
    DatasetItem& it = ds.items[idx];
    std::vector<int> chosen;
    while (static_cast<int>(chosen.size()) < spec.n_distractors) {
      const int cand =
          ds.test_indices[rng.uniform_int(static_cast<int>(ds.test_indices.size()))];
      bool dup = cand == idx;
      for (int c : chosen) dup = dup || c == cand;
      if (!dup) chosen.push_back(cand);
    }
    it.distractors = std::move(chosen);
  }
  return ds;
}

void save_manifest(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("manifest: cannot write " + path);
  nlohmann::ordered_json header;
  header["kind"] = dataset_kind_name(ds.kind);
  header["image_size"] = ds.image_size;
  header["seed"] = ds.seed;
  header["n_distractors"] = ds.n_distractors;
  os << header.dump() << "\n";
  for (const DatasetItem& it : ds.items) {
    nlohmann::ordered_json j;
    j["index"] = it.index;
    j["split"] = it.split;
    if (it.src_tr >= 0) {
      j["src"] = {it.src, it.src_tr};
      j["labels"] = {it.label, it.label_tr};
      j["hues"] = {it.hue, it.hue_tr};
    } else {
      j["src"] = {it.src};
      j["labels"] = {it.label};
      j["hues"] = {it.hue};
    }
    if (!it.distractors.empty()) j["distractors"] = it.distractors;
    os << j.dump() << "\n";
  }
}

Dataset load_manifest(const std::string& path,
                      std::vector<GrayImage> train_gray,
                      std::vector<GrayImage> test_gray) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("manifest: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) {
    throw std::runtime_error("manifest: empty file " + path);
  }
  const auto header = nlohmann::json::parse(line);
  Dataset ds;
  ds.kind = dataset_kind_from_name(header.at("kind"));
  ds.image_size = header.at("image_size");
  ds.seed = header.at("seed");
  ds.n_distractors = header.at("n_distractors");
  ds.gray_pool = std::move(train_gray);
  ds.gray_pool.insert(ds.gray_pool.end(),
                      std::make_move_iterator(test_gray.begin()),
                      std::make_move_iterator(test_gray.end()));
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    DatasetItem it;
    it.index = j.at("index");
    it.split = j.at("split");
    const auto& src = j.at("src");
    it.src = src.at(0);
    it.label = j.at("labels").at(0);
    it.hue = j.at("hues").at(0);
    if (src.size() > 1) {
      it.src_tr = src.at(1);
      it.label_tr = j.at("labels").at(1);
      it.hue_tr = j.at("hues").at(1);
    }
    if (j.contains("distractors")) {
      it.distractors = j.at("distractors").get<std::vector<int>>();
    }
    if (it.split == "train") {
      ds.train_indices.push_back(it.index);
    } else {
      ds.test_indices.push_back(it.index);
    }
    ds.items.push_back(std::move(it));
  }
  return ds;
}

}  // namespace refgame
