#include "refgame/arena.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "refgame/checkpoint.hpp"

namespace refgame {

namespace {

using ad::Tape;

constexpr double kMaskedLogit = -1e30;

Mat listener_view(const DualEncoder& weights, const ColorImage& raw,
                  TransformTag t) {
  Listener l{&weights, t};
  return l.observe_embedding(raw);
}

std::vector<double> listener_scores(const DualEncoder& weights,
                                    const std::vector<int>& caption_ids,
                                    const std::vector<Mat>& embeddings,
                                    const std::vector<int>& candidates) {
  std::vector<double> scores(candidates.size(), 0.0);
  if (content_tokens(caption_ids).empty()) return scores;
  const Mat txt = weights.text_embedding(caption_ids);
  for (size_t i = 0; i < candidates.size(); ++i) {
    scores[i] = embeddings[candidates[i]].row(0).dot(txt.row(0));
  }
  return scores;
}

}  // namespace

RewardMode reward_mode_from_name(const std::string& name) {
  if (name == "contrastive") return RewardMode::kContrastive;
  if (name == "single-listener") return RewardMode::kSingleListener;
  if (name == "non-contrastive") return RewardMode::kNonContrastive;
  throw std::invalid_argument("unknown reward mode: " + name);
}

const char* reward_mode_name(RewardMode m) {
  switch (m) {
    case RewardMode::kContrastive: return "contrastive";
    case RewardMode::kSingleListener: return "single-listener";
    case RewardMode::kNonContrastive: return "non-contrastive";
  }
  return "contrastive";
}

ArenaContext make_arena_context(const Dataset& ds, Speaker& speaker,
                                const DualEncoder& listener_weights,
                                TransformTag transform_1,
                                TransformTag transform_2) {
  ArenaContext ctx;
  ctx.ds = &ds;
  ctx.speaker = &speaker;
  ctx.listener_weights = &listener_weights;
  ctx.transform_1 = transform_1;
  ctx.transform_2 = transform_2;
  const int n = static_cast<int>(ds.items.size());
  ctx.grids.resize(n);
  ctx.emb_1.resize(n);
  ctx.emb_2.resize(n);
  for (int i = 0; i < n; ++i) {
    const ColorImage raw = ds.render(i);
    ctx.grids[i] = speaker_feature_grid(speaker.encoder, raw);
    ctx.emb_1[i] = listener_view(listener_weights, raw, transform_1);
    ctx.emb_2[i] = listener_view(listener_weights, raw, transform_2);
  }
  return ctx;
}

SampledCaption sample_caption(const Speaker& speaker, const Mat& feature_grid,
                              const GameConfig& cfg, Rng& rng) {
  const auto& vocab = Vocabulary::instance();
  const CaptionLM& lm = speaker.lm;
  SampledCaption out;

  const Mat prefix = speaker.adapter.forward(feature_grid);
  Mat h = Mat::Zero(1, lm.hidden());
  for (long i = 0; i < prefix.rows(); ++i) lm.step(prefix.row(i), h);
  lm.step(lm.emb.row(vocab.bos()), h);
  for (int tok : cfg.caption_prefix) {
    out.ids.push_back(tok);
    lm.step(lm.emb.row(tok), h);
  }

  while (static_cast<int>(out.ids.size()) < cfg.max_tokens) {
    const Mat logits = lm.logits(h) / cfg.temperature;
    const long V = logits.cols();
    const double mx = logits.row(0).maxCoeff();
    Eigen::ArrayXd p = (logits.row(0).array() - mx).exp();
    p /= p.sum();

    std::vector<int> order(V);
    for (long j = 0; j < V; ++j) order[j] = static_cast<int>(j);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return p[a] != p[b] ? p[a] > p[b] : a < b; });
    std::vector<int> allowed;
    double mass = 0.0;
    for (int id : order) {
      allowed.push_back(id);
      mass += p[id];
      if (mass >= cfg.nucleus_p) break;
    }
    std::sort(allowed.begin(), allowed.end());

    std::vector<double> weights(allowed.size());
    for (size_t k = 0; k < allowed.size(); ++k) weights[k] = p[allowed[k]];
    const int chosen = allowed[rng.categorical(weights)];

    out.chosen.push_back(chosen);
    out.nucleus.push_back(allowed);
    out.log_prob += std::log(p[chosen] / mass);
    if (chosen == vocab.eos()) break;
    out.ids.push_back(chosen);
    lm.step(lm.emb.row(chosen), h);
  }
  return out;
}

std::vector<int> decode_caption(const Speaker& speaker,
                                const Mat& feature_grid,
                                const GameConfig& cfg) {
  const auto& vocab = Vocabulary::instance();
  const CaptionLM& lm = speaker.lm;
  const Mat prefix = speaker.adapter.forward(feature_grid);
  Mat h = Mat::Zero(1, lm.hidden());
  for (long i = 0; i < prefix.rows(); ++i) lm.step(prefix.row(i), h);
  lm.step(lm.emb.row(vocab.bos()), h);
  std::vector<int> ids = cfg.caption_prefix;
  for (int tok : cfg.caption_prefix) lm.step(lm.emb.row(tok), h);
  while (static_cast<int>(ids.size()) < cfg.max_tokens) {
    const Mat logits = lm.logits(h);
    int best = 0;
    for (long j = 1; j < logits.cols(); ++j) {
      if (logits(0, j) > logits(0, best)) best = static_cast<int>(j);
    }
    if (best == vocab.eos()) break;
    ids.push_back(best);
    lm.step(lm.emb.row(best), h);
  }
  return ids;
}

std::vector<EpisodeRecord> make_batch(const ArenaContext& ctx,
                                      const GameConfig& cfg, Rng& rng) {
  const auto& train = ctx.ds->train_indices;
  const int n_targets = std::min(cfg.batch_size,
                                 static_cast<int>(train.size()));
  if (n_targets <= cfg.n_distractors) {
    throw std::invalid_argument("make_batch: train split too small");
  }
  std::vector<int> pool = train;
  rng.shuffle(pool);
  pool.resize(n_targets);

  // Distractors come from the other targets of the same batch.
  std::vector<EpisodeRecord> batch(n_targets);
  for (int i = 0; i < n_targets; ++i) {
    EpisodeRecord& ep = batch[i];
    ep.target = pool[i];
    while (static_cast<int>(ep.distractors.size()) < cfg.n_distractors) {
      const int cand = pool[rng.uniform_int(n_targets)];
      bool dup = cand == ep.target;
      for (int d : ep.distractors) dup = dup || d == cand;
      if (!dup) ep.distractors.push_back(cand);
    }
  }
  return batch;
}

void play_round(const ArenaContext& ctx, EpisodeRecord& ep, Rng& rng) {
  for (int d : ep.distractors) {
    if (d == ep.target) {
      throw std::invalid_argument("play_round: target among distractors");
    }
  }
  std::vector<int> candidates = {ep.target};
  candidates.insert(candidates.end(), ep.distractors.begin(),
                    ep.distractors.end());
  rng.shuffle(candidates);

  const auto s1 = listener_scores(*ctx.listener_weights, ep.caption.ids,
                                  ctx.emb_1, candidates);
  const auto s2 = listener_scores(*ctx.listener_weights, ep.caption.ids,
                                  ctx.emb_2, candidates);
  ep.correct_1 = candidates[argmax_choice(s1)] == ep.target;
  ep.correct_2 = candidates[argmax_choice(s2)] == ep.target;
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i] == ep.target) {
      ep.score_1 = s1[i];
      ep.score_2 = s2[i];
    }
  }
}

double compute_reward(EpisodeRecord& ep, const GameConfig& cfg) {
  const auto& vocab = Vocabulary::instance();
  const size_t words = split_words(vocab.detokenize(ep.caption.ids)).size();
  ep.length_cost = cfg.length_penalty * static_cast<double>(words);
  switch (cfg.reward_mode) {
    case RewardMode::kContrastive:
      ep.raw_reward =
          (ep.correct_1 ? 1.0 : 0.0) - (ep.correct_2 ? 1.0 : 0.0);
      break;
    case RewardMode::kSingleListener:
      ep.raw_reward = ep.correct_1 ? 1.0 : 0.0;
      break;
    case RewardMode::kNonContrastive:
      ep.raw_reward = ep.score_1 - ep.score_2;
      break;
  }
  ep.reward = ep.raw_reward - ep.length_cost;
  return ep.reward;
}

double reinforce_step(ArenaContext& ctx,
                      const std::vector<EpisodeRecord>& batch,
                      const GameConfig& cfg, Adam& opt) {
  const auto& vocab = Vocabulary::instance();
  const int B = static_cast<int>(batch.size());
  const int V = vocab.size();
  const int H = ctx.speaker->lm.hidden();

  double baseline = 0.0;
  if (cfg.use_baseline) {
    for (const EpisodeRecord& ep : batch) baseline += ep.reward;
    baseline /= static_cast<double>(B);
  }

  int T = 0;
  for (const EpisodeRecord& ep : batch) {
    T = std::max(T, static_cast<int>(ep.caption.chosen.size()));
  }
  if (T == 0) return 0.0;

  Tape tape;
  AdapterRefs arefs = AdapterRefs::lift(tape, ctx.speaker->adapter, true);
  CaptionLmRefs lrefs = CaptionLmRefs::lift(tape, ctx.speaker->lm, false);

  std::vector<Ref> prefixes;
  prefixes.reserve(B);
  for (const EpisodeRecord& ep : batch) {
    prefixes.push_back(arefs.forward(tape, ctx.grids[ep.target]));
  }

  Ref h = tape.constant(Mat::Zero(B, H));
  const int n_prefix = static_cast<int>(prefixes[0].rows());
  for (int t = 0; t < n_prefix; ++t) {
    std::vector<Ref> rows;
    rows.reserve(B);
    for (int i = 0; i < B; ++i) rows.push_back(tape.slice_rows(prefixes[i], t, 1));
    h = lrefs.step(tape, tape.concat_rows(rows), h);
  }
  h = lrefs.step(tape, tape.embed(lrefs.emb, std::vector<int>(B, vocab.bos())),
                 h);
  for (int tok : cfg.caption_prefix) {
    h = lrefs.step(tape, tape.embed(lrefs.emb, std::vector<int>(B, tok)), h);
  }

  Ref total = tape.scalar(0.0);
  std::vector<int> inputs(B), targets(B);
  for (int t = 0; t < T; ++t) {
    Mat mask = Mat::Zero(B, V);
    Mat weight = Mat::Zero(B, 1);
    for (int i = 0; i < B; ++i) {
      const SampledCaption& c = batch[i].caption;
      if (t < static_cast<int>(c.chosen.size())) {
        mask.row(i).setConstant(kMaskedLogit);
        for (int id : c.nucleus[t]) mask(i, id) = 0.0;
        targets[i] = c.chosen[t];
        weight(i, 0) = batch[i].reward - baseline;
      } else {
        targets[i] = vocab.pad();
      }
    }
    Ref logits = tape.scale(lrefs.logits(tape, h), 1.0 / cfg.temperature);
    Ref lsm = tape.log_softmax_rows(tape.add(logits, tape.constant(mask)));
    Ref sel = tape.select_cols(lsm, targets);
    total = tape.add(total, tape.sum_all(tape.mul(sel, tape.constant(weight))));
    if (t + 1 < T) {
      for (int i = 0; i < B; ++i) {
        const SampledCaption& c = batch[i].caption;
        inputs[i] = t < static_cast<int>(c.chosen.size()) &&
                            c.chosen[t] != vocab.eos()
                        ? c.chosen[t]
                        : vocab.pad();
      }
      h = lrefs.step(tape, tape.embed(lrefs.emb, inputs), h);
    }
  }
  Ref loss = tape.scale(total, -1.0 / static_cast<double>(B));
  const double loss_v = loss.scalar();
  if (!std::isfinite(loss_v)) {
    throw std::runtime_error("reinforce_step: loss diverged");
  }

  auto grads = tape.backward(loss);
  opt.begin_step();
  opt.step("adapter.Q", ctx.speaker->adapter.Q, grads.at(arefs.Q.id));
  opt.step("adapter.W_K", ctx.speaker->adapter.W_K, grads.at(arefs.W_K.id));
  opt.step("adapter.W_V", ctx.speaker->adapter.W_V, grads.at(arefs.W_V.id));
  return loss_v;
}

MetricsReport evaluate(const ArenaContext& ctx, const GameConfig& cfg,
                       const NGramLM& drift_ref,
                       std::vector<Caption>* captions_out) {
  const auto& vocab = Vocabulary::instance();
  const Dataset& ds = *ctx.ds;
  if (ds.test_indices.empty()) {
    throw std::invalid_argument("evaluate: empty test split");
  }
  Rng rng(cfg.seed ^ 0x510e527fade682d1ULL);

  const bool tiled = ds.kind == DatasetKind::kTcfmnist;
  std::vector<Caption> captions;
  std::vector<std::string> texts;
  std::vector<int> labels, labels_tr;
  double acc1 = 0.0, acc2 = 0.0, score_diff = 0.0, reward = 0.0, words = 0.0;
  int whole_hits = 0;

  for (int idx : ds.test_indices) {
    const DatasetItem& it = ds.item(idx);
    EpisodeRecord ep;
    ep.target = idx;
    ep.distractors = it.distractors;
    ep.caption.ids = decode_caption(*ctx.speaker, ctx.grids[idx], cfg);
    play_round(ctx, ep, rng);
    ep.reward = compute_reward(ep, cfg);

    Caption cap = vocab.make_caption(ep.caption.ids);
    acc1 += ep.correct_1 ? 1.0 : 0.0;
    acc2 += ep.correct_2 ? 1.0 : 0.0;
    score_diff += ep.score_1 - ep.score_2;
    reward += ep.reward;
    words += static_cast<double>(split_words(cap.text).size());
    labels.push_back(it.label);
    if (tiled) labels_tr.push_back(it.label_tr);

    bool whole = false;
    for (const std::string& kw : synonym_table().at(it.label)) {
      whole = whole || caption_contains(cap.text, kw);
    }
    if (tiled) {
      for (const std::string& kw : synonym_table().at(it.label_tr)) {
        whole = whole || caption_contains(cap.text, kw);
      }
    }
    if (whole) ++whole_hits;

    texts.push_back(cap.text);
    captions.push_back(std::move(cap));
  }
  const double n = static_cast<double>(ds.test_indices.size());

  MetricsReport r;
  r.accuracy_1 = acc1 / n;
  r.accuracy_2 = acc2 / n;
  r.accuracy_difference = r.accuracy_1 - r.accuracy_2;
  r.score_difference = score_diff / n;
  r.chance_accuracy = 1.0 / (1.0 + ds.n_distractors);
  r.color_prevalence = color_prevalence(texts);
  r.color_diversity = color_diversity(texts);
  r.keyword_prevalence = keyword_prevalence(texts);
  r.object_prevalence_whole = static_cast<double>(whole_hits) / n;
  r.object_prevalence_bl =
      object_prevalence(texts, labels, Region::kBottomLeft);
  r.object_prevalence_tr =
      tiled ? object_prevalence(texts, labels_tr, Region::kTopRight) : 0.0;
  const DriftScore drift = drift_score(captions, drift_ref);
  r.drift_full = drift.mean_full;
  r.drift_per_token = drift.mean_per_token;
  r.mean_reward = reward / n;
  r.mean_caption_words = words / n;
  if (captions_out) *captions_out = std::move(captions);
  return r;
}

namespace {

Mat string_to_mat(const std::string& s) {
  Mat m(1, static_cast<long>(s.size()));
  for (size_t i = 0; i < s.size(); ++i) {
    m(0, static_cast<long>(i)) = static_cast<double>(s[i]);
  }
  return m;
}

std::string mat_to_string(const Mat& m) {
  std::string s(static_cast<size_t>(m.cols()), ' ');
  for (long i = 0; i < m.cols(); ++i) {
    s[static_cast<size_t>(i)] = static_cast<char>(m(0, i));
  }
  return s;
}

void save_train_state(const std::string& path, const ArenaContext& ctx,
                      Adam& opt, const Rng& rng, int next_iter, double best,
                      int since_best, const std::string& config_hash) {
  TensorMap m;
  ctx.speaker->adapter.append_to(m, "adapter");
  for (const auto& [name, v] : opt.moments1()) m["adam.m." + name] = v;
  for (const auto& [name, v] : opt.moments2()) m["adam.v." + name] = v;
  Mat meta(1, 4);
  meta << static_cast<double>(opt.step_count()), next_iter, best, since_best;
  m["meta"] = meta;
  m["rng"] = string_to_mat(rng.serialize());
  m["config_hash"] = string_to_mat(config_hash);
  save_checkpoint(path, m);
}

void load_train_state(const std::string& path, ArenaContext& ctx, Adam& opt,
                      Rng& rng, int* next_iter, double* best, int* since_best,
                      const std::string& config_hash) {
  const TensorMap m = load_checkpoint(path);
  if (m.count("config_hash") && mat_to_string(m.at("config_hash")) != config_hash) {
    throw std::runtime_error(
        "train: refusing to resume, config hash mismatch at " + path);
  }
  ctx.speaker->adapter.load_from(m, "adapter");
  for (const auto& [name, v] : m) {
    if (name.rfind("adam.m.", 0) == 0) opt.moments1()[name.substr(7)] = v;
    if (name.rfind("adam.v.", 0) == 0) opt.moments2()[name.substr(7)] = v;
  }
  const Mat& meta = m.at("meta");
  opt.set_step_count(static_cast<long>(meta(0, 0)));
  *next_iter = static_cast<int>(meta(0, 1));
  *best = meta(0, 2);
  *since_best = static_cast<int>(meta(0, 3));
  rng.deserialize(mat_to_string(m.at("rng")));
}

}  // namespace

TrainResult train(ArenaContext& ctx, const GameConfig& cfg,
                  const NGramLM& drift_ref, const std::string& log_path,
                  const std::string& config_hash,
                  const std::string& state_path) {
  Rng rng(cfg.seed ^ 0x9b05688c2b3e6c1fULL);
  Adam opt(cfg.learning_rate);
  int start_iter = 0;
  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  if (!state_path.empty() && std::filesystem::exists(state_path)) {
    load_train_state(state_path, ctx, opt, rng, &start_iter, &best,
                     &since_best, config_hash);
  }

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::app);
    if (!log) throw std::runtime_error("train: cannot open log " + log_path);
  }
  auto log_line = [&](nlohmann::ordered_json j) {
    if (!log.is_open()) return;
    j["config"] = config_hash;
    j["seed"] = cfg.seed;
    log << j.dump() << "\n";
    log.flush();
  };

  TrainResult result;
  bool have_eval = false;
  for (int iter = start_iter; iter < cfg.iterations; ++iter) {
    std::vector<EpisodeRecord> batch = make_batch(ctx, cfg, rng);
    double mean_reward = 0.0, a1 = 0.0, a2 = 0.0, tokens = 0.0;
    for (EpisodeRecord& ep : batch) {
      ep.caption = sample_caption(*ctx.speaker, ctx.grids[ep.target], cfg, rng);
      play_round(ctx, ep, rng);
      ep.reward = compute_reward(ep, cfg);
      mean_reward += ep.reward;
      a1 += ep.correct_1 ? 1.0 : 0.0;
      a2 += ep.correct_2 ? 1.0 : 0.0;
      tokens += static_cast<double>(ep.caption.ids.size());
    }
    const double B = static_cast<double>(batch.size());
    mean_reward /= B;
    const double loss = reinforce_step(ctx, batch, cfg, opt);

    nlohmann::ordered_json j;
    j["type"] = "train";
    j["iter"] = iter;
    j["loss"] = loss;
    j["mean_reward"] = mean_reward;
    j["acc1"] = a1 / B;
    j["acc2"] = a2 / B;
    j["mean_tokens"] = tokens / B;
    log_line(std::move(j));
    result.iterations_run = iter + 1;

    const bool at_eval =
        (iter + 1) % cfg.eval_interval == 0 || iter + 1 == cfg.iterations;
    if (at_eval) {
      result.final_eval = evaluate(ctx, cfg, drift_ref);
      have_eval = true;
      nlohmann::ordered_json ej =
          nlohmann::ordered_json::parse(result.final_eval.to_json());
      ej["type"] = "eval";
      ej["iter"] = iter;
      log_line(std::move(ej));
      const double net = result.final_eval.mean_reward;
      if (net > best) {
        best = net;
        since_best = 0;
      } else {
        ++since_best;
      }
      if (!state_path.empty()) {
        save_train_state(state_path, ctx, opt, rng, iter + 1, best,
                         since_best, config_hash);
      }
      if (cfg.early_stopping && since_best >= cfg.patience) break;
    }
  }
  if (!have_eval) result.final_eval = evaluate(ctx, cfg, drift_ref);
  result.best_net_reward = best;
  return result;
}

}  // namespace refgame
