#pragma once

#include <string>
#include <vector>

#include "refgame/dataset.hpp"
#include "refgame/metrics.hpp"
#include "refgame/models.hpp"
#include "refgame/optim.hpp"
#include "refgame/rng.hpp"

namespace refgame {

enum class RewardMode { kContrastive, kSingleListener, kNonContrastive };

RewardMode reward_mode_from_name(const std::string& name);
const char* reward_mode_name(RewardMode m);

struct GameConfig {
  RewardMode reward_mode = RewardMode::kContrastive;
  int batch_size = 128;
  int n_distractors = 3;
  double nucleus_p = 0.8;
  double temperature = 1.0;
  double length_penalty = 3e-3;
  double learning_rate = 3e-4;
  bool use_baseline = true;
  bool early_stopping = false;
  int patience = 10;
  int iterations = 2000;
  int eval_interval = 50;
  int max_tokens = kMaxCaptionTokens;
  std::vector<int> caption_prefix;  // forced leading tokens (prompted mode)
  uint64_t seed = 0;
};

// One sampled caption with everything the gradient pass needs to reproduce
// the truncated, renormalized per-step distributions.
struct SampledCaption {
  std::vector<int> ids;      // forced prefix + sampled tokens, EOS excluded
  std::vector<int> chosen;   // sampled token per step, EOS included if hit
  std::vector<std::vector<int>> nucleus;  // allowed ids per sampled step
  double log_prob = 0.0;     // sum over sampled steps
};

struct EpisodeRecord {
  int target = 0;                // item index
  std::vector<int> distractors;  // item indices
  SampledCaption caption;
  bool correct_1 = false;
  bool correct_2 = false;
  double score_1 = 0.0;  // listener-1 cosine on the target image
  double score_2 = 0.0;
  double raw_reward = 0.0;
  double length_cost = 0.0;  // lambda times the word count
  double reward = 0.0;       // net: raw minus length cost
};

// Frozen per-item features: speaker feature grids and listener image
// embeddings under both transforms. Rebuilt when the dataset changes,
// never during training.
struct ArenaContext {
  const Dataset* ds = nullptr;
  Speaker* speaker = nullptr;
  const DualEncoder* listener_weights = nullptr;
  TransformTag transform_1 = TransformTag::kIdentity;
  TransformTag transform_2 = TransformTag::kIdentity;
  std::vector<Mat> grids;  // per item, speaker normalization
  std::vector<Mat> emb_1;  // per item, listener 1 view
  std::vector<Mat> emb_2;
};

ArenaContext make_arena_context(const Dataset& ds, Speaker& speaker,
                                const DualEncoder& listener_weights,
                                TransformTag transform_1,
                                TransformTag transform_2);

// Nucleus sampling from the speaker given a precomputed feature grid.
// Sampled log-probs are taken under the truncated, renormalized per-step
// distribution.
SampledCaption sample_caption(const Speaker& speaker, const Mat& feature_grid,
                              const GameConfig& cfg, Rng& rng);

// Greedy decode with the forced prefix applied; used for evaluation.
std::vector<int> decode_caption(const Speaker& speaker,
                                const Mat& feature_grid,
                                const GameConfig& cfg);

// Batch of target item indices drawn from the train split, then
// per-episode distractors without replacement and never the target.
std::vector<EpisodeRecord> make_batch(const ArenaContext& ctx,
                                      const GameConfig& cfg, Rng& rng);

// Shows both listeners the same shuffled candidate list and records their
// choices and target scores.
void play_round(const ArenaContext& ctx, EpisodeRecord& ep, Rng& rng);

// Fills raw_reward/length_cost/reward and returns the net reward. The
// length penalty counts whitespace words of the detokenized text.
double compute_reward(EpisodeRecord& ep, const GameConfig& cfg);

// One REINFORCE update of the adapter from a played batch; returns the loss.
double reinforce_step(ArenaContext& ctx,
                      const std::vector<EpisodeRecord>& batch,
                      const GameConfig& cfg, Adam& opt);

// Deterministic evaluation on the test split with its frozen distractors.
MetricsReport evaluate(const ArenaContext& ctx, const GameConfig& cfg,
                       const NGramLM& drift_ref,
                       std::vector<Caption>* captions_out = nullptr);

struct TrainResult {
  int iterations_run = 0;
  double best_net_reward = 0.0;
  MetricsReport final_eval;
};

// REINFORCE training loop. Appends one JSONL record per iteration to
// `log_path` (tagged with config_hash and seed) plus full evaluation records
// every eval_interval. When `state_path` is nonempty the loop checkpoints
// there every eval_interval and resumes from it if the file exists.
TrainResult train(ArenaContext& ctx, const GameConfig& cfg,
                  const NGramLM& drift_ref, const std::string& log_path,
                  const std::string& config_hash,
                  const std::string& state_path = "");

}  // namespace refgame
