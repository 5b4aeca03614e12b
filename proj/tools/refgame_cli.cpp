#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "refgame/arena.hpp"
#include "refgame/checkpoint.hpp"
#include "refgame/config.hpp"
#include "refgame/dataset.hpp"
#include "refgame/idx.hpp"
#include "refgame/metrics.hpp"
#include "refgame/models.hpp"
#include "refgame/pretrain.hpp"
#include "refgame/rng.hpp"
#include "refgame/synth.hpp"

namespace fs = std::filesystem;
using namespace refgame;

namespace {

constexpr const char* kFmnistEnv = "REFGAME_FMNIST_DIR";

// ---------------------------------------------------------------------------
// Synthetic FMNIST-style sources written in IDX format.

void write_synth_split(const std::string& dir, const std::string& prefix,
                       int count, Rng& rng) {
  std::vector<Eigen::MatrixXd> images;
  std::vector<int> labels;
  images.reserve(count);
  labels.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int label = i % 10;
    images.push_back(synth_shape(label, rng));
    labels.push_back(label);
  }
  write_idx_images(dir + "/" + prefix + "-images-idx3-ubyte", images);
  write_idx_labels(dir + "/" + prefix + "-labels-idx1-ubyte", labels);
}

// ---------------------------------------------------------------------------
// Source loading

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string resolve_fmnist_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv(kFmnistEnv);
  if (env && *env) return env;
  throw DataError(std::string("FMNIST source directory not set: pass "
                              "--fmnist-dir or set ") +
                  kFmnistEnv);
}

std::string find_idx_file(const std::string& dir, const std::string& base) {
  for (const std::string& cand : {dir + "/" + base, dir + "/" + base + ".gz"}) {
    if (fs::exists(cand)) return cand;
  }
  throw DataError("missing FMNIST file: expected " + dir + "/" + base +
                  " (or .gz); generate synthetic sources with the synth-data "
                  "subcommand");
}

std::vector<GrayImage> load_gray_split(const std::string& dir,
                                       const std::string& prefix) {
  const IdxImages imgs =
      load_idx_images(find_idx_file(dir, prefix + "-images-idx3-ubyte"));
  const std::vector<int> labels =
      load_idx_labels(find_idx_file(dir, prefix + "-labels-idx1-ubyte"));
  if (imgs.images.size() != labels.size()) {
    throw DataError("FMNIST " + prefix + " split: " +
                    std::to_string(imgs.images.size()) + " images but " +
                    std::to_string(labels.size()) + " labels");
  }
  std::vector<GrayImage> out(imgs.images.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i].pixels = imgs.images[i];
    out[i].label = labels[i];
  }
  return out;
}

Dataset load_or_build_dataset(const ExperimentConfig& cfg,
                              const std::string& out_dir,
                              const std::string& fmnist_flag) {
  const std::string dir = resolve_fmnist_dir(fmnist_flag);
  std::vector<GrayImage> train_gray = load_gray_split(dir, "train");
  std::vector<GrayImage> test_gray = load_gray_split(dir, "t10k");
  const std::string manifest = out_dir + "/manifest.jsonl";
  if (fs::exists(manifest)) {
    return load_manifest(manifest, std::move(train_gray),
                         std::move(test_gray));
  }
  Dataset ds = build_dataset(cfg.data, std::move(train_gray),
                             std::move(test_gray));
  save_manifest(ds, manifest);
  return ds;
}

// ---------------------------------------------------------------------------
// Config + checkpoint plumbing

ExperimentConfig resolve_config(const std::string& out_dir,
                                const std::string& config_path,
                                const std::string& preset_name) {
  if (!config_path.empty()) return load_config(config_path);
  const std::string saved = out_dir + "/config.json";
  if (preset_name.empty() && fs::exists(saved)) return load_config(saved);
  return preset(preset_name.empty() ? "fmnist-crop" : preset_name);
}

Speaker load_speaker(const ExperimentConfig& cfg, const std::string& out_dir) {
  (void)cfg;
  Speaker s;
  s.lm.load_from(load_checkpoint(out_dir + "/lm.ckpt"), "lm");
  s.encoder.load_from(load_checkpoint(out_dir + "/encoder.ckpt"), "encoder");
  s.adapter.load_from(load_checkpoint(out_dir + "/captioner.ckpt"), "adapter");
  return s;
}

DualEncoder load_listener(const std::string& out_dir) {
  DualEncoder d;
  d.load_from(load_checkpoint(out_dir + "/listener.ckpt"), "listener");
  return d;
}

NGramLM build_drift_reference(const std::vector<CorpusPair>& corpus) {
  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus.size());
  for (const CorpusPair& p : corpus) seqs.push_back(p.ids);
  NGramLM ref;
  ref.fit(seqs);
  return ref;
}

std::vector<std::string> default_prompts(DatasetKind kind) {
  if (kind == DatasetKind::kTcfmnist) {
    return {"", "an image of", "a picture of", "in the bottom left",
            "the image is"};
  }
  return {"",          "an image of",    "a picture of",
          "the image is", "the picture is", "an image of a"};
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth_data(const std::string& out_dir, int train, int test,
                   uint64_t seed) {
  fs::create_directories(out_dir);
  Rng rng(seed ^ 0x1f83d9abfb41bd6bULL);
  write_synth_split(out_dir, "train", train, rng);
  write_synth_split(out_dir, "t10k", test, rng);
  std::cout << "wrote synthetic FMNIST sources to " << out_dir << "\n";
  return 0;
}

int cmd_prepare_data(const ExperimentConfig& cfg, const std::string& out_dir,
                     const std::string& fmnist_flag) {
  fs::create_directories(out_dir);
  save_config(cfg, out_dir + "/config.json");
  const std::string dir = resolve_fmnist_dir(fmnist_flag);
  std::vector<GrayImage> train_gray = load_gray_split(dir, "train");
  std::vector<GrayImage> test_gray = load_gray_split(dir, "t10k");
  Dataset ds = build_dataset(cfg.data, std::move(train_gray),
                             std::move(test_gray));
  save_manifest(ds, out_dir + "/manifest.jsonl");
  std::cout << "manifest: " << out_dir << "/manifest.jsonl ("
            << ds.train_indices.size() << " train, " << ds.test_indices.size()
            << " test)\n";
  return 0;
}

int cmd_pretrain(const ExperimentConfig& cfg, const std::string& out_dir,
                 const std::string& fmnist_flag) {
  fs::create_directories(out_dir);
  save_config(cfg, out_dir + "/config.json");
  const Dataset ds = load_or_build_dataset(cfg, out_dir, fmnist_flag);
  const auto corpus = build_caption_corpus(ds, cfg.pretrain.seed);
  const std::string hash = cfg.hash();

  std::ofstream stages(out_dir + "/stages.jsonl", std::ios::trunc);
  auto emit = [&](const StageReport& r) {
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(r.to_json());
    j["config"] = hash;
    stages << j.dump() << "\n";
    std::cout << "stage " << r.stage << ": loss " << r.final_loss
              << (r.target_met ? " (target met)" : " (target missed)")
              << "\n";
  };

  StageReport rep;
  CaptionLM lm = pretrain_lm(corpus, cfg.dims, cfg.pretrain, &rep);
  emit(rep);

  DualEncoder spk = pretrain_dual_encoder(ds, corpus, speaker_norm_stats(),
                                          cfg.dims, cfg.pretrain,
                                          0x2222222222222222ULL, &rep);
  emit(rep);

  // The captioner stage fine-tunes the caption model and speaker encoder
  // jointly, so the frozen checkpoints are written afterwards.
  AdapterParams cap = pretrain_captioner(ds, corpus, lm, spk.enc, cfg.dims,
                                         cfg.pretrain, &rep);
  emit(rep);
  TensorMap m;
  spk.enc.append_to(m, "encoder");
  save_checkpoint(out_dir + "/encoder.ckpt", m);
  m.clear();
  lm.append_to(m, "lm");
  save_checkpoint(out_dir + "/lm.ckpt", m);
  m.clear();
  cap.append_to(m, "adapter");
  save_checkpoint(out_dir + "/captioner.ckpt", m);

  DualEncoder lis = pretrain_dual_encoder(ds, corpus, listener_norm_stats(),
                                          cfg.dims, cfg.pretrain,
                                          0x4444444444444444ULL, &rep,
                                          /*transform_augment=*/true);
  emit(rep);
  m.clear();
  lis.append_to(m, "listener");
  save_checkpoint(out_dir + "/listener.ckpt", m);
  return 0;
}

int run_training(ExperimentConfig cfg, const std::string& out_dir,
                 const std::string& fmnist_flag, uint64_t seed, bool resume) {
  cfg.game.seed = seed;
  const Dataset ds = load_or_build_dataset(cfg, out_dir, fmnist_flag);
  const auto corpus = build_caption_corpus(ds, cfg.pretrain.seed);
  const NGramLM drift_ref = build_drift_reference(corpus);
  Speaker speaker = load_speaker(cfg, out_dir);
  const DualEncoder listener = load_listener(out_dir);
  ArenaContext ctx = make_arena_context(ds, speaker, listener,
                                        TransformTag::kIdentity,
                                        cfg.transform_2);

  const std::string tag = "_seed" + std::to_string(seed);
  const std::string log_path = out_dir + "/train" + tag + ".jsonl";
  const std::string state_path = out_dir + "/state" + tag + ".ckpt";
  if (!resume) {
    fs::remove(log_path);
    fs::remove(state_path);
  }
  const TrainResult result =
      train(ctx, cfg.game, drift_ref, log_path, cfg.hash(), state_path);

  TensorMap m;
  speaker.adapter.append_to(m, "adapter");
  save_checkpoint(out_dir + "/adapter" + tag + ".ckpt", m);
  nlohmann::ordered_json j =
      nlohmann::ordered_json::parse(result.final_eval.to_json());
  j["config"] = cfg.hash();
  j["seed"] = seed;
  j["iterations"] = result.iterations_run;
  std::ofstream os(out_dir + "/eval" + tag + ".json", std::ios::trunc);
  os << j.dump(2) << "\n";
  std::cout << "seed " << seed << ": acc1 " << result.final_eval.accuracy_1
            << " acc2 " << result.final_eval.accuracy_2 << " color "
            << result.final_eval.color_prevalence << "\n";
  return 0;
}

int cmd_prompting(const ExperimentConfig& cfg, const std::string& out_dir,
                  const std::string& fmnist_flag,
                  std::vector<std::string> prompts) {
  const Dataset ds = load_or_build_dataset(cfg, out_dir, fmnist_flag);
  const auto corpus = build_caption_corpus(ds, cfg.pretrain.seed);
  const NGramLM drift_ref = build_drift_reference(corpus);
  Speaker speaker = load_speaker(cfg, out_dir);
  const DualEncoder listener = load_listener(out_dir);
  ArenaContext ctx = make_arena_context(ds, speaker, listener,
                                        TransformTag::kIdentity,
                                        cfg.transform_2);
  if (prompts.empty()) prompts = default_prompts(ds.kind);

  const auto& vocab = Vocabulary::instance();
  std::ofstream jsonl(out_dir + "/prompting.jsonl", std::ios::trunc);
  std::ofstream csv(out_dir + "/prompting.csv", std::ios::trunc);
  csv << "prefix,accuracy_difference,score_difference,color_prevalence,"
         "color_diversity,keyword_prevalence,object_prevalence_bl,"
         "object_prevalence_tr\n";
  for (const std::string& prompt : prompts) {
    GameConfig gc = cfg.game;
    gc.caption_prefix = prompt.empty() ? std::vector<int>{}
                                       : vocab.tokenize(prompt);
    const MetricsReport r = evaluate(ctx, gc, drift_ref);
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(r.to_json());
    j["prefix"] = prompt;
    j["config"] = cfg.hash();
    jsonl << j.dump() << "\n";
    csv << '"' << prompt << '"' << ',' << r.accuracy_difference << ','
        << r.score_difference << ',' << r.color_prevalence << ','
        << r.color_diversity << ',' << r.keyword_prevalence << ','
        << r.object_prevalence_bl << ',' << r.object_prevalence_tr << "\n";
    std::cout << "prefix \"" << prompt << "\": acc diff "
              << r.accuracy_difference << "\n";
  }
  return 0;
}

int cmd_zeroshot(const ExperimentConfig& cfg, const std::string& out_dir,
                 const std::string& fmnist_flag, uint64_t seed) {
  // Target: the many-hue variant built from the same sources and data seed.
  ExperimentConfig target = cfg;
  target.data.kind = DatasetKind::kCfmnistMany;
  const std::string dir = resolve_fmnist_dir(fmnist_flag);
  Dataset ds = build_dataset(target.data, load_gray_split(dir, "train"),
                             load_gray_split(dir, "t10k"));
  const auto corpus = build_caption_corpus(ds, target.pretrain.seed);
  const NGramLM drift_ref = build_drift_reference(corpus);

  Speaker speaker = load_speaker(cfg, out_dir);
  const std::string adapter_path =
      out_dir + "/adapter_seed" + std::to_string(seed) + ".ckpt";
  if (!fs::exists(adapter_path)) {
    throw DataError("zeroshot: trained adapter not found: " + adapter_path);
  }
  AdapterParams base = speaker.adapter;  // pretrained captioner
  AdapterParams trained;
  trained.load_from(load_checkpoint(adapter_path), "adapter");
  const DualEncoder listener = load_listener(out_dir);

  ArenaContext ctx = make_arena_context(ds, speaker, listener,
                                        TransformTag::kIdentity,
                                        cfg.transform_2);
  GameConfig gc = cfg.game;
  gc.seed = seed;

  auto eval_with = [&](const AdapterParams& a, const std::vector<int>& prefix,
                       std::vector<Caption>* caps) {
    speaker.adapter = a;
    GameConfig g = gc;
    g.caption_prefix = prefix;
    return evaluate(ctx, g, drift_ref, caps);
  };

  nlohmann::ordered_json out;
  out["config"] = cfg.hash();
  out["seed"] = seed;
  out["target"] = dataset_kind_name(target.data.kind);

  std::vector<Caption> caps;
  const MetricsReport trained_r = eval_with(trained, {}, &caps);
  out["trained"] = nlohmann::ordered_json::parse(trained_r.to_json());

  const MetricsReport base_r = eval_with(base, {}, nullptr);
  out["base_captioner"] = nlohmann::ordered_json::parse(base_r.to_json());

  const auto& vocab = Vocabulary::instance();
  MetricsReport best_r;
  std::string best_prompt;
  bool have_best = false;
  for (const std::string& prompt : default_prompts(ds.kind)) {
    if (prompt.empty()) continue;
    const MetricsReport r = eval_with(base, vocab.tokenize(prompt), nullptr);
    if (!have_best || r.color_prevalence > best_r.color_prevalence) {
      best_r = r;
      best_prompt = prompt;
      have_best = true;
    }
  }
  out["best_prompt"] = best_prompt;
  out["best_prompt_metrics"] = nlohmann::ordered_json::parse(best_r.to_json());

  nlohmann::ordered_json hist = nlohmann::ordered_json::object();
  for (const std::string& term : color_terms()) {
    int n = 0;
    for (const Caption& c : caps) {
      if (caption_contains(c.text, term)) ++n;
    }
    hist[term] = n;
  }
  out["color_histogram"] = hist;

  std::ofstream os(out_dir + "/zeroshot_seed" + std::to_string(seed) + ".json",
                   std::ios::trunc);
  os << out.dump(2) << "\n";
  std::cout << "zeroshot color prevalence: trained "
            << trained_r.color_prevalence << " vs base "
            << base_r.color_prevalence << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs,
               const std::string& out_path) {
  const std::vector<std::string> metrics = {
      "accuracy_1",        "accuracy_2",       "accuracy_difference",
      "score_difference",  "color_prevalence", "color_diversity",
      "keyword_prevalence", "object_prevalence_whole",
      "object_prevalence_bl", "object_prevalence_tr",
      "drift_full", "drift_per_token", "mean_reward", "mean_caption_words"};
  // Two-sided 95% Student-t critical values, df 1..30.
  const double t95[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365,
                        2.306,  2.262, 2.228, 2.201, 2.179, 2.160, 2.145,
                        2.131,  2.120, 2.110, 2.101, 2.093, 2.086, 2.080,
                        2.074,  2.069, 2.064, 2.060, 2.056, 2.052, 2.048,
                        2.045,  2.042};

  std::ofstream csv(out_path, std::ios::trunc);
  if (!csv) throw DataError("report: cannot write " + out_path);
  csv << "run,metric,n,mean,ci95\n";
  for (const std::string& dir : run_dirs) {
    std::map<std::string, std::vector<double>> values;
    int n_runs = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("eval_seed", 0) != 0 ||
          entry.path().extension() != ".json") {
        continue;
      }
      std::ifstream is(entry.path());
      nlohmann::json j;
      is >> j;
      for (const std::string& mkey : metrics) {
        if (!j.contains(mkey)) {
          throw DataError("report: " + entry.path().string() +
                          " missing field " + mkey);
        }
        values[mkey].push_back(j.at(mkey).get<double>());
      }
      ++n_runs;
    }
    if (n_runs == 0) throw DataError("report: no eval records in " + dir);
    for (const std::string& mkey : metrics) {
      const auto& v = values[mkey];
      const int n = static_cast<int>(v.size());
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= n;
      std::string ci = "n/a";
      if (n > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        const double sd = std::sqrt(ss / (n - 1));
        const double t = n - 1 <= 30 ? t95[n - 2] : 1.96;
        ci = std::to_string(t * sd / std::sqrt(static_cast<double>(n)));
      }
      csv << dir << ',' << mkey << ',' << n << ',' << mean << ',' << ci
          << "\n";
    }
  }
  std::cout << "report: " << out_path << "\n";
  return 0;
}

std::vector<uint64_t> parse_seeds(const std::string& seeds_flag,
                                  uint64_t seed_flag, bool have_seed) {
  if (!seeds_flag.empty()) {
    const auto pos = seeds_flag.find("..");
    if (pos == std::string::npos) {
      throw CLI::ValidationError("--seeds", "expected A..B");
    }
    const uint64_t a = std::stoull(seeds_flag.substr(0, pos));
    const uint64_t b = std::stoull(seeds_flag.substr(pos + 2));
    if (b < a) throw CLI::ValidationError("--seeds", "expected A <= B");
    std::vector<uint64_t> out;
    for (uint64_t s = a; s <= b; ++s) out.push_back(s);
    return out;
  }
  return {have_seed ? seed_flag : 0};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"referential-game experiment runner"};
  app.require_subcommand(1);

  std::string config_path, preset_name, out_dir = "runs/default";
  std::string fmnist_flag, seeds_flag, mode, report_out = "report.csv";
  uint64_t seed_flag = 0;
  bool resume = false;
  int synth_train = 4096, synth_test = 1024;
  std::vector<std::string> prompts, run_dirs;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config JSON path");
    cmd->add_option("--preset", preset_name, "named preset")
        ->check(CLI::IsMember(preset_names()));
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--fmnist-dir", fmnist_flag,
                    "FMNIST IDX directory (default: $" +
                        std::string(kFmnistEnv) + ")");
  };

  CLI::App* synth = app.add_subcommand(
      "synth-data", "generate synthetic FMNIST-style IDX sources");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--train", synth_train, "train pool size");
  synth->add_option("--test", synth_test, "test pool size");
  synth->add_option("--seed", seed_flag, "generator seed");

  CLI::App* prep = app.add_subcommand("prepare-data",
                                      "build dataset manifests");
  add_common(prep);

  CLI::App* pre = app.add_subcommand("pretrain",
                                     "run all pretraining stages");
  add_common(pre);

  CLI::App* trn = app.add_subcommand("train", "REINFORCE game training");
  add_common(trn);
  CLI::Option* trn_seed = trn->add_option("--seed", seed_flag, "game seed");
  trn->add_option("--seeds", seeds_flag, "seed sweep A..B");
  trn->add_flag("--resume", resume, "resume from saved state");

  CLI::App* abl = app.add_subcommand("ablate", "ablation runs");
  add_common(abl);
  abl->add_option("--mode", mode, "single-listener|non-contrastive|prompting")
      ->required()
      ->check(CLI::IsMember(
          {"single-listener", "non-contrastive", "prompting"}));
  CLI::Option* abl_seed = abl->add_option("--seed", seed_flag, "game seed");
  abl->add_option("--seeds", seeds_flag, "seed sweep A..B");
  abl->add_option("--prefix", prompts, "caption prefix (repeatable)");
  abl->add_flag("--resume", resume, "resume from saved state");

  CLI::App* zs = app.add_subcommand("zeroshot",
                                    "evaluate a trained speaker on "
                                    "cfmnist-many");
  add_common(zs);
  zs->add_option("--seed", seed_flag, "seed of the trained adapter");

  CLI::App* rep = app.add_subcommand("report", "aggregate runs");
  rep->add_option("dirs", run_dirs, "run directories")->required();
  rep->add_option("--out", report_out, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth_data(out_dir, synth_train, synth_test, seed_flag);
    }
    if (prep->parsed()) {
      return cmd_prepare_data(resolve_config(out_dir, config_path, preset_name),
                              out_dir, fmnist_flag);
    }
    if (pre->parsed()) {
      return cmd_pretrain(resolve_config(out_dir, config_path, preset_name),
                          out_dir, fmnist_flag);
    }
    if (trn->parsed()) {
      const ExperimentConfig cfg =
          resolve_config(out_dir, config_path, preset_name);
      for (uint64_t s :
           parse_seeds(seeds_flag, seed_flag, !trn_seed->empty())) {
        run_training(cfg, out_dir, fmnist_flag, s, resume);
      }
      return 0;
    }
    if (abl->parsed()) {
      ExperimentConfig cfg = resolve_config(out_dir, config_path, preset_name);
      if (mode == "prompting") {
        return cmd_prompting(cfg, out_dir, fmnist_flag, prompts);
      }
      if (mode == "single-listener") {
        cfg.game.reward_mode = RewardMode::kSingleListener;
        cfg.game.length_penalty = 1e-5;
        cfg.game.use_baseline = true;
        cfg.game.early_stopping = true;
      } else {
        cfg.game.reward_mode = RewardMode::kNonContrastive;
        cfg.game.length_penalty = 3e-6;
      }
      for (uint64_t s :
           parse_seeds(seeds_flag, seed_flag, !abl_seed->empty())) {
        run_training(cfg, out_dir, fmnist_flag, s, resume);
      }
      return 0;
    }
    if (zs->parsed()) {
      return cmd_zeroshot(resolve_config(out_dir, config_path, preset_name),
                          out_dir, fmnist_flag, seed_flag);
    }
    if (rep->parsed()) {
      return cmd_report(run_dirs, report_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    const std::string msg = e.what();
    const bool numeric = msg.find("diverged") != std::string::npos ||
                         msg.find("non-finite") != std::string::npos ||
                         msg.find("nan") != std::string::npos;
    return numeric ? 3 : 2;
  }
  return 1;
}
