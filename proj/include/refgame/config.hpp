#pragma once

#include <string>
#include <vector>

#include "refgame/arena.hpp"
#include "refgame/dataset.hpp"
#include "refgame/models.hpp"
#include "refgame/pretrain.hpp"

namespace refgame {

// Everything one run needs: data, model shape, pretraining budget, game
// settings, and the listener-2 handicap. Serialized canonically so the hash
// is stable across loads.
struct ExperimentConfig {
  std::string name = "fmnist-crop";
  DatasetSpec data;
  ModelDims dims;
  PretrainConfig pretrain;
  GameConfig game;
  TransformTag transform_2 = TransformTag::kCrop;

  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& json);
  // SHA-256 of the canonical JSON dump.
  std::string hash() const;
};

const std::vector<std::string>& preset_names();
ExperimentConfig preset(const std::string& name);

ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

}  // namespace refgame
