#pragma once

#include <string>
#include <vector>

#include "refgame/dataset.hpp"
#include "refgame/models.hpp"

namespace refgame {

// One (image, ground-truth caption) pair. Texts are produced from the
// procedural templates with seeded paraphrase jitter; 10% of pairs are held
// out for validation.
struct CorpusPair {
  int item_index = 0;
  std::string text;
  std::vector<int> ids;
  bool validation = false;
};

std::vector<CorpusPair> build_caption_corpus(const Dataset& ds, uint64_t seed);

struct PretrainConfig {
  uint64_t seed = 0;
  int lm_epochs = 40;
  double lm_lr = 3e-3;
  int captioner_epochs = 40;
  double captioner_lr = 1e-2;
  int encoder_steps = 2000;
  double encoder_lr = 1e-3;
  int contrastive_batch = 64;
  double temperature = 0.07;
  int jitter_pixels = 2;
  int batch = 32;
  // Quality gates; misses are reported, not fatal.
  double lm_loss_target_factor = 0.5;   // of ln|V| per token
  double caption_object_target = 0.8;
  double caption_color_target = 0.8;
  double retrieval_target = 0.95;
};

struct StageReport {
  std::string stage;
  uint64_t seed = 0;
  std::vector<double> loss_curve;   // per epoch / eval interval
  double final_loss = 0.0;
  double val_loss = -1.0;
  double retrieval_top1 = -1.0;
  double greedy_object_acc = -1.0;
  double greedy_color_acc = -1.0;
  bool target_met = false;

  std::string to_json() const;
};

// Teacher-forced cross-entropy pretraining of the caption model on corpus
// texts. Throws on divergence (NaN loss).
CaptionLM pretrain_lm(const std::vector<CorpusPair>& corpus,
                      const ModelDims& dims, const PretrainConfig& cfg,
                      StageReport* report);

// Symmetric in-batch InfoNCE over (image, caption) pairs; used for the
// speaker-side encoder and for the shared listener weights, which differ
// only in their normalization profile and seed offset.
// With `transform_augment` set, image variants are rendered through randomly
// drawn observation transforms so the embeddings stay competent under the
// handicaps listeners play with (grayscale/blur/crop); identity-only
// training leaves transformed views out of distribution.
DualEncoder pretrain_dual_encoder(const Dataset& ds,
                                  const std::vector<CorpusPair>& corpus,
                                  const NormStats& stats,
                                  const ModelDims& dims,
                                  const PretrainConfig& cfg,
                                  uint64_t seed_offset, StageReport* report,
                                  bool transform_augment = false);

// Captioning pretraining with teacher forcing. The adapter is trained from
// scratch; the caption model and the speaker-side encoder are jointly
// fine-tuned so shape information survives the visual prefix. All three are
// frozen afterwards at game time except the adapter.
AdapterParams pretrain_captioner(const Dataset& ds,
                                 const std::vector<CorpusPair>& corpus,
                                 CaptionLM& lm,
                                 VisionEncoder& encoder,
                                 const ModelDims& dims,
                                 const PretrainConfig& cfg,
                                 StageReport* report);

// Greedy decode helper shared by quality gates and evaluation baselines.
std::vector<int> greedy_decode(const Speaker& speaker, const Mat& feature_grid,
                               int max_tokens = kMaxCaptionTokens);

// 4-way retrieval top-1 on validation pairs (identity transform).
double retrieval_top1_of_4(const DualEncoder& model, const Dataset& ds,
                           const std::vector<CorpusPair>& corpus,
                           const NormStats& stats, uint64_t seed);

}  // namespace refgame
