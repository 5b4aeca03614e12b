#pragma once

#include <string>
#include <vector>

#include "refgame/checkpoint.hpp"
#include "refgame/image.hpp"
#include "refgame/rng.hpp"
#include "refgame/tensor.hpp"
#include "refgame/vocab.hpp"

namespace refgame {

using ad::Mat;
using ad::Ref;
using ad::Tape;

// Desk-scale model dimensions (full-scale values are much larger; these are
// exposed through the experiment config).
struct ModelDims {
  int image_size = 64;
  int patch = 8;          // grid P = (image_size / patch)^2
  int d_v = 32;           // per-patch feature dimension
  int n_prefix = 8;       // adapter output rows
  int d_attn = 16;        // adapter attention dimension
  int d_lm = 32;          // language model embedding / hidden size
  int d_embed = 16;       // dual-encoder shared embedding size

  int grid() const { return (image_size / patch) * (image_size / patch); }
  // Pixels plus two patch-center coordinates; mean-pooled towers need the
  // positional channels to tell rearranged patch sets apart.
  int patch_dim() const { return patch * patch * 3 + 2; }
};

// ---------------------------------------------------------------------------
// Vision encoder: patchify + linear + tanh, producing a P x d_v feature grid.

struct VisionEncoder {
  int image_size = 64;
  int patch = 8;
  Mat W;  // patch_dim x d_v
  Mat b;  // 1 x d_v

  static VisionEncoder init(const ModelDims& dims, Rng& rng);

  // Raw patch matrix (P x patch_dim) of an already-normalized image.
  Mat patches(const ColorImage& normalized) const;
  // Feature grid E(x) = tanh(patches * W + b), shape P x d_v.
  Mat encode(const ColorImage& normalized) const;

  void append_to(TensorMap& m, const std::string& prefix) const;
  void load_from(const TensorMap& m, const std::string& prefix);
};

// ---------------------------------------------------------------------------
// QKV adapter: A(x) = softmax(Q K^T / sqrt(d)) V with K = E W_K, V = E W_V.
// The only game-time trainable parameters.

struct AdapterParams {
  Mat Q;    // n x d
  Mat W_K;  // d_v x d
  Mat W_V;  // d_v x d_lm

  static AdapterParams init(const ModelDims& dims, Rng& rng);

  Mat forward(const Mat& feature_grid) const;  // n x d_lm

  void append_to(TensorMap& m, const std::string& prefix) const;
  void load_from(const TensorMap& m, const std::string& prefix);
};

// Tape-side handles for one adapter instance.
struct AdapterRefs {
  Ref Q, W_K, W_V;
  static AdapterRefs lift(Tape& tape, const AdapterParams& p,
                          bool requires_grad);
  Ref forward(Tape& tape, const Mat& feature_grid) const;
  // Variant with the feature grid already on the tape (trainable encoder).
  Ref forward(Tape& tape, Ref feature_grid) const;
};

// ---------------------------------------------------------------------------
// Caption model: token embedding + single GRU layer + output projection.
// Causal by construction; gradients flow through prefix embeddings even when
// the model itself is frozen.

struct CaptionLM {
  Mat emb;                      // V x d_lm
  Mat Wz, Wr, Wh;               // d_lm x H
  Mat Uz, Ur, Uh;               // H x H
  Mat bz, br, bh;               // 1 x H
  Mat Wo;                       // H x V
  Mat bo;                       // 1 x V

  static CaptionLM init(const ModelDims& dims, Rng& rng);

  int hidden() const { return static_cast<int>(Uz.rows()); }
  int vocab() const { return static_cast<int>(emb.rows()); }

  // One recurrent step over a batch of rows; h is B x H, x is B x d_lm.
  void step(const Mat& x, Mat& h) const;
  Mat logits(const Mat& h) const;  // B x V

  // Next-token logits after consuming `prefix` rows then BOS and
  // `tokens_so_far` (raw path, no gradients).
  Mat next_logits(const Mat& prefix, const std::vector<int>& tokens_so_far) const;

  void append_to(TensorMap& m, const std::string& prefix) const;
  void load_from(const TensorMap& m, const std::string& prefix);
};

struct CaptionLmRefs {
  Ref emb, Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh, Wo, bo;
  static CaptionLmRefs lift(Tape& tape, const CaptionLM& lm,
                            bool requires_grad);
  // One step over the batch; returns the new hidden state.
  Ref step(Tape& tape, Ref x, Ref h) const;
  Ref logits(Tape& tape, Ref h) const;
};

// ---------------------------------------------------------------------------
// Dual-encoder listener: image tower (vision encoder + mean pool + linear,
// unit-normalized) and bag-of-embeddings text tower. One weight set serves
// all listeners; instances differ only in their transform tag.

struct DualEncoder {
  VisionEncoder enc;
  Mat W_img;   // d_v x d_e
  Mat b_img;   // 1 x d_e
  Mat t_emb;   // V x d_e
  Mat W_txt;   // d_e x d_e
  Mat b_txt;   // 1 x d_e
  double temperature = 0.07;

  static DualEncoder init(const ModelDims& dims, Rng& rng);

  // Unit-norm embedding of an already transformed + normalized image.
  Mat image_embedding(const ColorImage& normalized) const;  // 1 x d_e
  // Unit-norm embedding of the caption's content tokens.
  Mat text_embedding(const std::vector<int>& token_ids) const;  // 1 x d_e

  void append_to(TensorMap& m, const std::string& prefix) const;
  void load_from(const TensorMap& m, const std::string& prefix);
};

// A frozen dual encoder observing the world through one transform.
struct Listener {
  const DualEncoder* weights = nullptr;
  TransformTag transform = TransformTag::kIdentity;

  // Raw (untransformed, unnormalized) image in, cosine match score out.
  double match(const std::vector<int>& caption_ids, const ColorImage& raw) const;
  Mat observe_embedding(const ColorImage& raw) const;
};

// Cosine of a cached listener-side image embedding against a caption.
double listener_match_cached(const DualEncoder& weights,
                             const std::vector<int>& caption_ids,
                             const Mat& image_embedding);

// Argmax over candidate scores; ties break to the lowest index.
int argmax_choice(const std::vector<double>& scores);

// ---------------------------------------------------------------------------
// Speaker: frozen encoder + trainable adapter + frozen caption model.

struct Speaker {
  VisionEncoder encoder;
  AdapterParams adapter;
  CaptionLM lm;
};

// Strips non-content ids (specials) from a sampled sequence.
std::vector<int> content_tokens(const std::vector<int>& ids);

// Speaker-side feature grid of a raw image: speaker normalization profile
// followed by the frozen encoder.
Mat speaker_feature_grid(const VisionEncoder& enc, const ColorImage& raw);

}  // namespace refgame
