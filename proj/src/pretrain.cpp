#include "refgame/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "refgame/metrics.hpp"
#include "refgame/optim.hpp"
#include "refgame/rng.hpp"

namespace refgame {

namespace {

bool starts_with_vowel(const std::string& w) {
  if (w.empty()) return false;
  const char c = w[0];
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

std::string article(const std::string& next_word) {
  return starts_with_vowel(next_word) ? "an" : "a";
}

std::string object_word(int label, Rng& rng) {
  const auto& syn = synonym_table().at(label);
  if (rng.uniform() < 0.5) return syn.front();
  return syn[rng.uniform_int(static_cast<int>(syn.size()))];
}

std::string object_phrase(int label, double hue, bool with_color, Rng& rng) {
  const std::string obj = object_word(label, rng);
  if (with_color) {
    const std::string color = color_name_for_hue(hue);
    return article(color) + " " + color + " " + obj;
  }
  return article(obj) + " " + obj;
}

std::string single_image_text(const DatasetItem& it, Rng& rng) {
  const double u = rng.uniform();
  const std::string color = color_name_for_hue(it.hue);
  if (u < 0.10) {
    switch (rng.uniform_int(5)) {
      case 0: return color;
      case 1: return article(color) + " " + color + " image";
      case 2: return article(color) + " " + color + " picture";
      case 3: return "the image is " + color;
      default: return "the picture is " + color;
    }
  }
  if (u < 0.75) {
    const std::string obj = object_word(it.label, rng);
    switch (rng.uniform_int(4)) {
      case 0: return obj;
      case 1: return article(obj) + " " + obj;
      case 2: return "an image of " + article(obj) + " " + obj;
      default: return "a picture of " + article(obj) + " " + obj;
    }
  }
  const std::string obj = object_word(it.label, rng);
  switch (rng.uniform_int(3)) {
    case 0: return color + " " + obj;
    case 1: return article(color) + " " + color + " " + obj;
    default:
      return "an image of " + article(color) + " " + color + " " + obj;
  }
}

std::string tiled_image_text(const DatasetItem& it, Rng& rng) {
  const double u = rng.uniform();
  const bool color_bl = rng.uniform() < 0.5;
  const bool color_tr = rng.uniform() < 0.5;
  if (u < 0.40) {
    return object_phrase(it.label, it.hue, color_bl, rng) +
           " in the bottom left";
  }
  if (u < 0.80) {
    return object_phrase(it.label_tr, it.hue_tr, color_tr, rng) +
           " in the top right";
  }
  return object_phrase(it.label, it.hue, color_bl, rng) +
         " in the bottom left and " +
         object_phrase(it.label_tr, it.hue_tr, color_tr, rng) +
         " in the top right";
}

GrayImage shift_gray(const GrayImage& g, int dx, int dy) {
  GrayImage out;
  out.label = g.label;
  const long n = g.pixels.rows();
  out.pixels = Eigen::MatrixXd::Zero(n, g.pixels.cols());
  for (long i = 0; i < n; ++i) {
    const long si = i - dy;
    if (si < 0 || si >= n) continue;
    for (long j = 0; j < g.pixels.cols(); ++j) {
      const long sj = j - dx;
      if (sj < 0 || sj >= g.pixels.cols()) continue;
      out.pixels(i, j) = g.pixels(si, sj);
    }
  }
  return out;
}

ColorImage render_with_jitter(const Dataset& ds, const DatasetItem& it,
                              int jitter, Rng& rng) {
  auto draw = [&] { return rng.uniform_int(2 * jitter + 1) - jitter; };
  const GrayImage bl_gray =
      jitter > 0 ? shift_gray(ds.gray_pool.at(it.src), draw(), draw())
                 : ds.gray_pool.at(it.src);
  if (ds.kind == DatasetKind::kTcfmnist) {
    const GrayImage tr_gray =
        jitter > 0 ? shift_gray(ds.gray_pool.at(it.src_tr), draw(), draw())
                   : ds.gray_pool.at(it.src_tr);
    ColorImage bl = colorize(bl_gray, it.hue, ds.image_size);
    ColorImage tr = colorize(tr_gray, it.hue_tr, ds.image_size);
    return tile(bl, tr);
  }
  return colorize(bl_gray, it.hue, ds.image_size);
}

using ad::Mat;
using ad::Ref;
using ad::Tape;

struct NamedParam {
  std::string name;
  Mat* param;
  Ref ref;
};

void adam_apply(Adam& opt, const std::vector<NamedParam>& params,
                const std::unordered_map<int, Mat>& grads) {
  opt.begin_step();
  for (const NamedParam& p : params) {
    auto it = grads.find(p.ref.id);
    if (it == grads.end()) continue;
    opt.step(p.name, *p.param, it->second);
  }
}

std::vector<NamedParam> lm_params(CaptionLM& lm, const CaptionLmRefs& r) {
  return {{"lm.emb", &lm.emb, r.emb}, {"lm.Wz", &lm.Wz, r.Wz},
          {"lm.Wr", &lm.Wr, r.Wr},   {"lm.Wh", &lm.Wh, r.Wh},
          {"lm.Uz", &lm.Uz, r.Uz},   {"lm.Ur", &lm.Ur, r.Ur},
          {"lm.Uh", &lm.Uh, r.Uh},   {"lm.bz", &lm.bz, r.bz},
          {"lm.br", &lm.br, r.br},   {"lm.bh", &lm.bh, r.bh},
          {"lm.Wo", &lm.Wo, r.Wo},   {"lm.bo", &lm.bo, r.bo}};
}

// Teacher-forced masked cross-entropy of a batch of id sequences under the
// lifted GRU; returns total log-likelihood ref and the valid-position count.
Ref batch_sequence_ll(Tape& tape, const CaptionLmRefs& refs,
                      const std::vector<const std::vector<int>*>& seqs,
                      const std::vector<Ref>* prefixes, int hidden_size,
                      long* valid_count) {
  const auto& vocab = Vocabulary::instance();
  const int B = static_cast<int>(seqs.size());
  size_t max_len = 0;
  for (const auto* s : seqs) max_len = std::max(max_len, s->size());
  const int T = static_cast<int>(max_len) + 1;  // +1 for EOS prediction

  Ref h = tape.constant(Mat::Zero(B, hidden_size));
  if (prefixes) {
    const int n_prefix = static_cast<int>((*prefixes)[0].rows());
    for (int t = 0; t < n_prefix; ++t) {
      std::vector<Ref> rows;
      rows.reserve(B);
      for (int i = 0; i < B; ++i) {
        rows.push_back(tape.slice_rows((*prefixes)[i], t, 1));
      }
      h = refs.step(tape, tape.concat_rows(rows), h);
    }
  }

  Ref total = tape.scalar(0.0);
  long count = 0;
  std::vector<int> inputs(B), targets(B);
  for (int t = 0; t < T; ++t) {
    Mat mask = Mat::Zero(B, 1);
    for (int i = 0; i < B; ++i) {
      const auto& s = *seqs[i];
      const int len = static_cast<int>(s.size());
      inputs[i] = t == 0 ? vocab.bos() : (t - 1 < len ? s[t - 1] : vocab.pad());
      if (t < len) {
        targets[i] = s[t];
        mask(i, 0) = 1.0;
        ++count;
      } else if (t == len) {
        targets[i] = vocab.eos();
        mask(i, 0) = 1.0;
        ++count;
      } else {
        targets[i] = vocab.pad();
      }
    }
    h = refs.step(tape, tape.embed(refs.emb, inputs), h);
    Ref lsm = tape.log_softmax_rows(refs.logits(tape, h));
    Ref sel = tape.select_cols(lsm, targets);
    total = tape.add(total, tape.sum_all(tape.mul(sel, tape.constant(mask))));
  }
  *valid_count = count;
  return total;
}

double raw_sequence_ce(const CaptionLM& lm, const std::vector<int>& ids) {
  const auto& vocab = Vocabulary::instance();
  Mat h = Mat::Zero(1, lm.hidden());
  double total = 0.0;
  int prev = vocab.bos();
  for (size_t t = 0; t <= ids.size(); ++t) {
    lm.step(lm.emb.row(prev), h);
    Mat logits = lm.logits(h);
    const double mx = logits.row(0).maxCoeff();
    const double lse =
        mx + std::log((logits.row(0).array() - mx).exp().sum());
    const int target = t < ids.size() ? ids[t] : vocab.eos();
    total += lse - logits(0, target);
    prev = target;
  }
  return total / static_cast<double>(ids.size() + 1);
}

}  // namespace

std::vector<CorpusPair> build_caption_corpus(const Dataset& ds,
                                             uint64_t seed) {
  const auto& vocab = Vocabulary::instance();
  Rng rng(seed ^ 0xc2b2ae3d27d4eb4fULL);
  std::vector<CorpusPair> corpus;
  corpus.reserve(ds.train_indices.size());
  for (int idx : ds.train_indices) {
    const DatasetItem& it = ds.item(idx);
    CorpusPair p;
    p.item_index = idx;
    p.text = ds.kind == DatasetKind::kTcfmnist ? tiled_image_text(it, rng)
                                               : single_image_text(it, rng);
    p.ids = vocab.tokenize(p.text);
    if (static_cast<int>(p.ids.size()) > kMaxCaptionTokens) {
      throw std::runtime_error("corpus text exceeds max caption length: " +
                               p.text);
    }
    p.validation = rng.uniform() < 0.1;
    corpus.push_back(std::move(p));
  }
  return corpus;
}

std::string StageReport::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["seed"] = seed;
  j["loss_curve"] = loss_curve;
  j["final_loss"] = final_loss;
  j["val_loss"] = val_loss;
  j["retrieval_top1"] = retrieval_top1;
  j["greedy_object_acc"] = greedy_object_acc;
  j["greedy_color_acc"] = greedy_color_acc;
  j["target_met"] = target_met;
  return j.dump();
}

CaptionLM pretrain_lm(const std::vector<CorpusPair>& corpus,
                      const ModelDims& dims, const PretrainConfig& cfg,
                      StageReport* report) {
  Rng rng(cfg.seed ^ 0x6a09e667f3bcc909ULL);
  CaptionLM lm = CaptionLM::init(dims, rng);
  Adam opt(cfg.lm_lr);

  std::vector<int> train_ids, val_ids;
  for (size_t i = 0; i < corpus.size(); ++i) {
    (corpus[i].validation ? val_ids : train_ids).push_back(static_cast<int>(i));
  }
  if (train_ids.empty()) throw std::invalid_argument("pretrain_lm: empty corpus");

  std::vector<double> curve;
  double last_loss = 0.0;
  for (int epoch = 0; epoch < cfg.lm_epochs; ++epoch) {
    rng.shuffle(train_ids);
    double epoch_nll = 0.0;
    long epoch_tokens = 0;
    for (size_t start = 0; start < train_ids.size();
         start += static_cast<size_t>(cfg.batch)) {
      const size_t end =
          std::min(train_ids.size(), start + static_cast<size_t>(cfg.batch));
      std::vector<const std::vector<int>*> seqs;
      for (size_t k = start; k < end; ++k) {
        seqs.push_back(&corpus[train_ids[k]].ids);
      }
      Tape tape;
      CaptionLmRefs refs = CaptionLmRefs::lift(tape, lm, true);
      long count = 0;
      Ref total = batch_sequence_ll(tape, refs, seqs, nullptr, lm.hidden(),
                                    &count);
      Ref loss = tape.scale(total, -1.0 / static_cast<double>(count));
      const double loss_v = loss.scalar();
      if (!std::isfinite(loss_v)) {
        throw std::runtime_error("pretrain_lm: loss diverged");
      }
      epoch_nll += loss_v * static_cast<double>(count);
      epoch_tokens += count;
      auto grads = tape.backward(loss);
      adam_apply(opt, lm_params(lm, refs), grads);
    }
    last_loss = epoch_nll / static_cast<double>(epoch_tokens);
    curve.push_back(last_loss);
  }

  double val_ce = 0.0;
  if (!val_ids.empty()) {
    for (int i : val_ids) val_ce += raw_sequence_ce(lm, corpus[i].ids);
    val_ce /= static_cast<double>(val_ids.size());
  }
  if (report) {
    report->stage = "lm";
    report->seed = cfg.seed;
    report->loss_curve = curve;
    report->final_loss = last_loss;
    report->val_loss = val_ce;
    const double target =
        cfg.lm_loss_target_factor * std::log(Vocabulary::instance().size());
    report->target_met = val_ce < target;
  }
  return lm;
}

DualEncoder pretrain_dual_encoder(const Dataset& ds,
                                  const std::vector<CorpusPair>& corpus,
                                  const NormStats& stats,
                                  const ModelDims& dims,
                                  const PretrainConfig& cfg,
                                  uint64_t seed_offset, StageReport* report,
                                  bool transform_augment) {
  Rng rng(cfg.seed ^ seed_offset ^ 0xbb67ae8584caa73bULL);
  DualEncoder model = DualEncoder::init(dims, rng);
  model.temperature = cfg.temperature;
  Adam opt(cfg.encoder_lr);

  std::vector<int> train_pairs;
  for (size_t i = 0; i < corpus.size(); ++i) {
    if (!corpus[i].validation) train_pairs.push_back(static_cast<int>(i));
  }
  const int B = std::min(cfg.contrastive_batch,
                         static_cast<int>(train_pairs.size()));
  if (B < 2) throw std::invalid_argument("pretrain_dual_encoder: corpus too small");

  // A few pre-rendered jittered variants per pair; re-rendering every step
  // dominates the runtime otherwise.
  constexpr int kVariants = 4;
  std::unordered_map<int, std::vector<Mat>> patch_cache;
  for (int ci : train_pairs) {
    std::vector<Mat> variants;
    for (int v = 0; v < kVariants; ++v) {
      ColorImage raw = render_with_jitter(
          ds, ds.item(corpus[ci].item_index), cfg.jitter_pixels, rng);
      if (transform_augment && v > 0) {
        static constexpr TransformTag kTags[] = {
            TransformTag::kIdentity, TransformTag::kGrayscale,
            TransformTag::kBlur, TransformTag::kCrop};
        raw = apply_transform(raw, kTags[rng.uniform_int(4)]);
      }
      variants.push_back(model.enc.patches(normalize(raw, stats)));
    }
    patch_cache.emplace(ci, std::move(variants));
  }
  auto patches_of = [&](int corpus_index) -> const Mat& {
    const auto& variants = patch_cache.at(corpus_index);
    return variants[rng.uniform_int(kVariants)];
  };

  const int P = dims.grid();
  const Mat pool_row = Mat::Constant(1, P, 1.0 / static_cast<double>(P));
  std::vector<int> order = train_pairs;
  rng.shuffle(order);
  size_t cursor = 0;
  std::vector<double> curve;
  double last_loss = 0.0;

  for (int step = 0; step < cfg.encoder_steps; ++step) {
    std::vector<int> batch;
    while (static_cast<int>(batch.size()) < B) {
      if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    Tape tape;
    Ref encW = tape.leaf(model.enc.W, true);
    Ref encB = tape.leaf(model.enc.b, true);
    Ref W_img = tape.leaf(model.W_img, true);
    Ref b_img = tape.leaf(model.b_img, true);
    Ref t_emb = tape.leaf(model.t_emb, true);
    Ref W_txt = tape.leaf(model.W_txt, true);
    Ref b_txt = tape.leaf(model.b_txt, true);
    Ref pool = tape.constant(pool_row);

    std::vector<Ref> img_rows, txt_rows;
    for (int ci : batch) {
      Ref X = tape.constant(patches_of(ci));
      Ref grid = tape.tanh_(tape.add(tape.matmul(X, encW), encB));
      Ref pooled = tape.matmul(pool, grid);
      img_rows.push_back(tape.add(tape.matmul(pooled, W_img), b_img));

      const std::vector<int> content = content_tokens(corpus[ci].ids);
      Ref emb = tape.embed(t_emb, content);
      Ref tpool = tape.constant(
          Mat::Constant(1, static_cast<long>(content.size()),
                        1.0 / static_cast<double>(content.size())));
      Ref tp = tape.matmul(tpool, emb);
      txt_rows.push_back(tape.add(tape.matmul(tp, W_txt), b_txt));
    }
    Ref I = tape.l2_normalize_rows(tape.concat_rows(img_rows));
    Ref T = tape.l2_normalize_rows(tape.concat_rows(txt_rows));

    std::vector<int> diag(B);
    for (int i = 0; i < B; ++i) diag[i] = i;
    Ref logits_it = tape.scale(tape.matmul_nt(I, T), 1.0 / cfg.temperature);
    Ref logits_ti = tape.scale(tape.matmul_nt(T, I), 1.0 / cfg.temperature);
    Ref nll_it =
        tape.sum_all(tape.select_cols(tape.log_softmax_rows(logits_it), diag));
    Ref nll_ti =
        tape.sum_all(tape.select_cols(tape.log_softmax_rows(logits_ti), diag));
    Ref loss =
        tape.scale(tape.add(nll_it, nll_ti), -0.5 / static_cast<double>(B));
    last_loss = loss.scalar();
    if (!std::isfinite(last_loss)) {
      throw std::runtime_error("pretrain_dual_encoder: loss diverged");
    }
    if (step % 50 == 0) curve.push_back(last_loss);

    auto grads = tape.backward(loss);
    opt.begin_step();
    const std::vector<NamedParam> params = {
        {"enc.W", &model.enc.W, encW},   {"enc.b", &model.enc.b, encB},
        {"W_img", &model.W_img, W_img},  {"b_img", &model.b_img, b_img},
        {"t_emb", &model.t_emb, t_emb},  {"W_txt", &model.W_txt, W_txt},
        {"b_txt", &model.b_txt, b_txt}};
    for (const NamedParam& p : params) {
      auto it = grads.find(p.ref.id);
      if (it != grads.end()) opt.step(p.name, *p.param, it->second);
    }
  }

  const double top1 =
      retrieval_top1_of_4(model, ds, corpus, stats, cfg.seed ^ seed_offset);
  if (report) {
    report->stage = "dual_encoder";
    report->seed = cfg.seed;
    report->loss_curve = curve;
    report->final_loss = last_loss;
    report->retrieval_top1 = top1;
    report->target_met = top1 >= cfg.retrieval_target;
  }
  return model;
}

double retrieval_top1_of_4(const DualEncoder& model, const Dataset& ds,
                           const std::vector<CorpusPair>& corpus,
                           const NormStats& stats, uint64_t seed) {
  std::vector<int> val_pairs;
  for (size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].validation) val_pairs.push_back(static_cast<int>(i));
  }
  if (static_cast<int>(val_pairs.size()) < 4) return -1.0;
  Rng rng(seed ^ 0x3c6ef372fe94f82bULL);

  std::unordered_map<int, Mat> emb_cache;
  auto embedding_of = [&](int ci) -> const Mat& {
    auto it = emb_cache.find(ci);
    if (it != emb_cache.end()) return it->second;
    const ColorImage img = normalize(ds.render(corpus[ci].item_index), stats);
    return emb_cache.emplace(ci, model.image_embedding(img)).first->second;
  };

  int correct = 0;
  for (int target : val_pairs) {
    std::vector<int> candidates = {target};
    while (candidates.size() < 4) {
      const int cand = val_pairs[rng.uniform_int(static_cast<int>(val_pairs.size()))];
      bool dup = false;
      for (int c : candidates) dup = dup || c == cand;
      if (!dup) candidates.push_back(cand);
    }
    const Mat txt = model.text_embedding(corpus[target].ids);
    std::vector<double> scores;
    for (int c : candidates) {
      scores.push_back(embedding_of(c).row(0).dot(txt.row(0)));
    }
    if (argmax_choice(scores) == 0) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(val_pairs.size());
}

AdapterParams pretrain_captioner(const Dataset& ds,
                                 const std::vector<CorpusPair>& corpus,
                                 CaptionLM& lm,
                                 VisionEncoder& encoder,
                                 const ModelDims& dims,
                                 const PretrainConfig& cfg,
                                 StageReport* report) {
  Rng rng(cfg.seed ^ 0xa54ff53a5f1d36f1ULL);
  AdapterParams adapter = AdapterParams::init(dims, rng);
  Adam opt(cfg.captioner_lr);

  std::vector<int> train_pairs, val_pairs;
  for (size_t i = 0; i < corpus.size(); ++i) {
    (corpus[i].validation ? val_pairs : train_pairs)
        .push_back(static_cast<int>(i));
  }
  if (train_pairs.empty()) {
    throw std::invalid_argument("pretrain_captioner: empty corpus");
  }

  std::vector<double> curve;
  double last_loss = 0.0;
  for (int epoch = 0; epoch < cfg.captioner_epochs; ++epoch) {
    rng.shuffle(train_pairs);
    double epoch_nll = 0.0;
    long epoch_tokens = 0;
    for (size_t start = 0; start < train_pairs.size();
         start += static_cast<size_t>(cfg.batch)) {
      const size_t end = std::min(train_pairs.size(),
                                  start + static_cast<size_t>(cfg.batch));
      Tape tape;
      AdapterRefs arefs = AdapterRefs::lift(tape, adapter, true);
      CaptionLmRefs lrefs = CaptionLmRefs::lift(tape, lm, true);
      Ref enc_W = tape.leaf(encoder.W, true);
      Ref enc_b = tape.leaf(encoder.b, true);

      std::vector<const std::vector<int>*> seqs;
      std::vector<Ref> prefixes;
      for (size_t k = start; k < end; ++k) {
        const CorpusPair& p = corpus[train_pairs[k]];
        const ColorImage raw =
            render_with_jitter(ds, ds.item(p.item_index), cfg.jitter_pixels,
                               rng);
        const Mat patches =
            encoder.patches(normalize(raw, speaker_norm_stats()));
        Ref grid = tape.tanh_(tape.add(
            tape.matmul(tape.constant(patches), enc_W), enc_b));
        prefixes.push_back(arefs.forward(tape, grid));
        seqs.push_back(&p.ids);
      }

      long count = 0;
      Ref total = batch_sequence_ll(tape, lrefs, seqs, &prefixes, lm.hidden(),
                                    &count);
      Ref loss = tape.scale(total, -1.0 / static_cast<double>(count));
      const double loss_v = loss.scalar();
      if (!std::isfinite(loss_v)) {
        throw std::runtime_error("pretrain_captioner: loss diverged");
      }
      epoch_nll += loss_v * static_cast<double>(count);
      epoch_tokens += count;
      auto grads = tape.backward(loss);
      opt.begin_step();
      opt.step("adapter.Q", adapter.Q, grads.at(arefs.Q.id));
      opt.step("adapter.W_K", adapter.W_K, grads.at(arefs.W_K.id));
      opt.step("adapter.W_V", adapter.W_V, grads.at(arefs.W_V.id));
      for (const NamedParam& p : lm_params(lm, lrefs)) {
        auto it = grads.find(p.ref.id);
        if (it != grads.end()) opt.step(p.name, *p.param, it->second);
      }
      if (auto it = grads.find(enc_W.id); it != grads.end()) {
        opt.step("encoder.W", encoder.W, it->second);
      }
      if (auto it = grads.find(enc_b.id); it != grads.end()) {
        opt.step("encoder.b", encoder.b, it->second);
      }
    }
    last_loss = epoch_nll / static_cast<double>(epoch_tokens);
    curve.push_back(last_loss);
  }

  double object_acc = -1.0;
  double color_acc = -1.0;
  if (!val_pairs.empty()) {
    const auto& vocab = Vocabulary::instance();
    Speaker speaker{encoder, adapter, lm};
    int obj_hit = 0, color_hit = 0;
    for (int ci : val_pairs) {
      const DatasetItem& it = ds.item(corpus[ci].item_index);
      const Mat grid = speaker_feature_grid(encoder, ds.render(it.index));
      const std::vector<int> ids = greedy_decode(speaker, grid);
      const std::string text = vocab.detokenize(ids);
      bool obj = false;
      for (const std::string& kw : synonym_table().at(it.label)) {
        obj = obj || caption_contains(text, kw);
      }
      if (it.label_tr >= 0) {
        for (const std::string& kw : synonym_table().at(it.label_tr)) {
          obj = obj || caption_contains(text, kw);
        }
      }
      if (obj) ++obj_hit;
      bool color = caption_contains(text, color_name_for_hue(it.hue));
      if (it.label_tr >= 0) {
        color = color || caption_contains(text, color_name_for_hue(it.hue_tr));
      }
      if (color) ++color_hit;
    }
    object_acc = static_cast<double>(obj_hit) / val_pairs.size();
    color_acc = static_cast<double>(color_hit) / val_pairs.size();
  }

  if (report) {
    report->stage = "captioner";
    report->seed = cfg.seed;
    report->loss_curve = curve;
    report->final_loss = last_loss;
    report->greedy_object_acc = object_acc;
    report->greedy_color_acc = color_acc;
    report->target_met = object_acc >= cfg.caption_object_target &&
                         color_acc >= cfg.caption_color_target;
  }
  return adapter;
}

std::vector<int> greedy_decode(const Speaker& speaker, const Mat& feature_grid,
                               int max_tokens) {
  const auto& vocab = Vocabulary::instance();
  const Mat prefix = speaker.adapter.forward(feature_grid);
  Mat h = Mat::Zero(1, speaker.lm.hidden());
  for (long i = 0; i < prefix.rows(); ++i) speaker.lm.step(prefix.row(i), h);
  speaker.lm.step(speaker.lm.emb.row(vocab.bos()), h);
  std::vector<int> out;
  for (int t = 0; t < max_tokens; ++t) {
    const Mat logits = speaker.lm.logits(h);
    int best = 0;
    for (long j = 1; j < logits.cols(); ++j) {
      if (logits(0, j) > logits(0, best)) best = static_cast<int>(j);
    }
    if (best == vocab.eos()) break;
    out.push_back(best);
    speaker.lm.step(speaker.lm.emb.row(best), h);
  }
  return out;
}

}  // namespace refgame
