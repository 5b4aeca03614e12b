#include "refgame/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "refgame/checkpoint.hpp"

namespace refgame {

std::string ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["data"]["kind"] = dataset_kind_name(data.kind);
  j["data"]["image_size"] = data.image_size;
  j["data"]["train_size"] = data.train_size;
  j["data"]["test_size"] = data.test_size;
  j["data"]["n_distractors"] = data.n_distractors;
  j["data"]["seed"] = data.seed;
  j["dims"]["image_size"] = dims.image_size;
  j["dims"]["patch"] = dims.patch;
  j["dims"]["d_v"] = dims.d_v;
  j["dims"]["n_prefix"] = dims.n_prefix;
  j["dims"]["d_attn"] = dims.d_attn;
  j["dims"]["d_lm"] = dims.d_lm;
  j["dims"]["d_embed"] = dims.d_embed;
  j["pretrain"]["seed"] = pretrain.seed;
  j["pretrain"]["lm_epochs"] = pretrain.lm_epochs;
  j["pretrain"]["lm_lr"] = pretrain.lm_lr;
  j["pretrain"]["captioner_epochs"] = pretrain.captioner_epochs;
  j["pretrain"]["captioner_lr"] = pretrain.captioner_lr;
  j["pretrain"]["encoder_steps"] = pretrain.encoder_steps;
  j["pretrain"]["encoder_lr"] = pretrain.encoder_lr;
  j["pretrain"]["contrastive_batch"] = pretrain.contrastive_batch;
  j["pretrain"]["temperature"] = pretrain.temperature;
  j["pretrain"]["jitter_pixels"] = pretrain.jitter_pixels;
  j["pretrain"]["batch"] = pretrain.batch;
  j["game"]["reward_mode"] = reward_mode_name(game.reward_mode);
  j["game"]["batch_size"] = game.batch_size;
  j["game"]["n_distractors"] = game.n_distractors;
  j["game"]["nucleus_p"] = game.nucleus_p;
  j["game"]["temperature"] = game.temperature;
  j["game"]["length_penalty"] = game.length_penalty;
  j["game"]["learning_rate"] = game.learning_rate;
  j["game"]["use_baseline"] = game.use_baseline;
  j["game"]["early_stopping"] = game.early_stopping;
  j["game"]["patience"] = game.patience;
  j["game"]["iterations"] = game.iterations;
  j["game"]["eval_interval"] = game.eval_interval;
  j["game"]["max_tokens"] = game.max_tokens;
  j["game"]["caption_prefix"] = game.caption_prefix;
  j["game"]["seed"] = game.seed;
  j["transform_2"] = transform_name(transform_2);
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& json) {
  const auto j = nlohmann::json::parse(json);
  ExperimentConfig c;
  c.name = j.at("name");
  const auto& d = j.at("data");
  c.data.kind = dataset_kind_from_name(d.at("kind"));
  c.data.image_size = d.at("image_size");
  c.data.train_size = d.at("train_size");
  c.data.test_size = d.at("test_size");
  c.data.n_distractors = d.at("n_distractors");
  c.data.seed = d.at("seed");
  const auto& m = j.at("dims");
  c.dims.image_size = m.at("image_size");
  c.dims.patch = m.at("patch");
  c.dims.d_v = m.at("d_v");
  c.dims.n_prefix = m.at("n_prefix");
  c.dims.d_attn = m.at("d_attn");
  c.dims.d_lm = m.at("d_lm");
  c.dims.d_embed = m.at("d_embed");
  const auto& p = j.at("pretrain");
  c.pretrain.seed = p.at("seed");
  c.pretrain.lm_epochs = p.at("lm_epochs");
  c.pretrain.lm_lr = p.at("lm_lr");
  c.pretrain.captioner_epochs = p.at("captioner_epochs");
  c.pretrain.captioner_lr = p.at("captioner_lr");
  c.pretrain.encoder_steps = p.at("encoder_steps");
  c.pretrain.encoder_lr = p.at("encoder_lr");
  c.pretrain.contrastive_batch = p.at("contrastive_batch");
  c.pretrain.temperature = p.at("temperature");
  c.pretrain.jitter_pixels = p.at("jitter_pixels");
  c.pretrain.batch = p.at("batch");
  const auto& g = j.at("game");
  c.game.reward_mode = reward_mode_from_name(g.at("reward_mode"));
  c.game.batch_size = g.at("batch_size");
  c.game.n_distractors = g.at("n_distractors");
  c.game.nucleus_p = g.at("nucleus_p");
  c.game.temperature = g.at("temperature");
  c.game.length_penalty = g.at("length_penalty");
  c.game.learning_rate = g.at("learning_rate");
  c.game.use_baseline = g.at("use_baseline");
  c.game.early_stopping = g.at("early_stopping");
  c.game.patience = g.at("patience");
  c.game.iterations = g.at("iterations");
  c.game.eval_interval = g.at("eval_interval");
  c.game.max_tokens = g.at("max_tokens");
  c.game.caption_prefix = g.at("caption_prefix").get<std::vector<int>>();
  c.game.seed = g.at("seed");
  c.transform_2 = transform_from_name(j.at("transform_2"));
  return c;
}

std::string ExperimentConfig::hash() const { return sha256_hex(to_json()); }

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> kNames = {
      "fmnist-crop",   "fmnist-blur",           "fmnist-grayscale",
      "fmnist-single", "fmnist-noncontrastive", "tcfmnist-crop",
      "fmnist-many-grayscale"};
  return kNames;
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  if (name == "fmnist-crop") {
    c.transform_2 = TransformTag::kCrop;
  } else if (name == "fmnist-blur") {
    c.transform_2 = TransformTag::kBlur;
  } else if (name == "fmnist-grayscale") {
    c.transform_2 = TransformTag::kGrayscale;
    c.game.nucleus_p = 1.0;
  } else if (name == "fmnist-single") {
    c.transform_2 = TransformTag::kCrop;
    c.game.reward_mode = RewardMode::kSingleListener;
    c.game.length_penalty = 1e-5;
    c.game.early_stopping = true;
  } else if (name == "fmnist-noncontrastive") {
    c.transform_2 = TransformTag::kGrayscale;
    c.game.reward_mode = RewardMode::kNonContrastive;
    c.game.length_penalty = 3e-6;
  } else if (name == "tcfmnist-crop") {
    c.data.kind = DatasetKind::kTcfmnist;
    c.transform_2 = TransformTag::kCrop;
  } else if (name == "fmnist-many-grayscale") {
    c.data.kind = DatasetKind::kCfmnistMany;
    c.transform_2 = TransformTag::kGrayscale;
    c.game.nucleus_p = 1.0;
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ExperimentConfig::from_json(ss.str());
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("config: cannot write " + path);
  os << cfg.to_json() << "\n";
}

}  // namespace refgame
