#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include "refgame/arena.hpp"
#include "refgame/config.hpp"

using namespace refgame;

namespace {

std::vector<GrayImage> synth_gray(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<GrayImage> out;
  for (int i = 0; i < n; ++i) {
    GrayImage g;
    g.pixels = Eigen::MatrixXd::Zero(28, 28);
    const int cx = 8 + rng.uniform_int(12);
    const int cy = 8 + rng.uniform_int(12);
    for (int r = cy - 6; r <= cy + 6; ++r) {
      for (int c = cx - 6; c <= cx + 6; ++c) {
        if (r >= 0 && r < 28 && c >= 0 && c < 28) {
          g.pixels(r, c) = 0.5 + 0.5 * rng.uniform();
        }
      }
    }
    g.label = i % 10;
    out.push_back(std::move(g));
  }
  return out;
}

struct World {
  Dataset ds;
  Speaker speaker;
  DualEncoder listener;
  ArenaContext ctx;
};

// Heap-allocated so the context's internal pointers stay valid.
std::unique_ptr<World> make_world(TransformTag t1, TransformTag t2,
                                  int train = 64, int test = 16,
                                  uint64_t seed = 41) {
  auto w = std::make_unique<World>();
  DatasetSpec spec;
  spec.train_size = train;
  spec.test_size = test;
  spec.seed = seed;
  w->ds = build_dataset(spec, synth_gray(train, seed + 1),
                        synth_gray(test, seed + 2));
  ModelDims dims;
  Rng rng(seed + 3);
  w->speaker.encoder = VisionEncoder::init(dims, rng);
  w->speaker.adapter = AdapterParams::init(dims, rng);
  w->speaker.lm = CaptionLM::init(dims, rng);
  w->listener = DualEncoder::init(dims, rng);
  w->ctx = make_arena_context(w->ds, w->speaker, w->listener, t1, t2);
  return w;
}

// Speaker whose next-token distribution ignores the hidden state: Wo = 0 and
// bo holds the desired logits, so sampling behavior is known in closed form.
Speaker fixed_logit_speaker(const std::vector<std::pair<int, double>>& probs,
                            uint64_t seed) {
  ModelDims dims;
  Rng rng(seed);
  Speaker s;
  s.encoder = VisionEncoder::init(dims, rng);
  s.adapter = AdapterParams::init(dims, rng);
  s.lm = CaptionLM::init(dims, rng);
  s.lm.Wo.setZero();
  // Low enough that exp() underflows to exactly zero after normalization.
  s.lm.bo.setConstant(-1000.0);
  for (const auto& [id, p] : probs) s.lm.bo(0, id) = std::log(p);
  return s;
}

Mat any_grid(const Speaker& s, uint64_t seed) {
  ModelDims dims;
  Rng rng(seed);
  ColorImage img;
  for (auto& ch : img.channel) {
    ch.resize(dims.image_size, dims.image_size);
    for (int i = 0; i < dims.image_size; ++i) {
      for (int j = 0; j < dims.image_size; ++j) ch(i, j) = rng.uniform();
    }
  }
  return speaker_feature_grid(s.encoder, img);
}

// Independent teacher-forced log-probability of a sampled caption under the
// same truncated per-step distributions, using only raw model forwards.
double caption_log_prob(const Speaker& s, const Mat& grid,
                        const SampledCaption& cap, const GameConfig& cfg) {
  const auto& vocab = Vocabulary::instance();
  const Mat prefix = s.adapter.forward(grid);
  Mat h = Mat::Zero(1, s.lm.hidden());
  for (long i = 0; i < prefix.rows(); ++i) s.lm.step(prefix.row(i), h);
  s.lm.step(s.lm.emb.row(vocab.bos()), h);
  for (int tok : cfg.caption_prefix) s.lm.step(s.lm.emb.row(tok), h);
  double lp = 0.0;
  for (size_t t = 0; t < cap.chosen.size(); ++t) {
    const Mat logits = s.lm.logits(h) / cfg.temperature;
    long double mass = 0.0L, num = 0.0L;
    double mx = -1e300;
    for (int id : cap.nucleus[t]) mx = std::max(mx, logits(0, id));
    for (int id : cap.nucleus[t]) {
      const long double e = expl((long double)(logits(0, id) - mx));
      mass += e;
      if (id == cap.chosen[t]) num = e;
    }
    lp += (double)(logl(num) - logl(mass));
    if (cap.chosen[t] == vocab.eos()) break;
    if (t + 1 < cap.chosen.size()) s.lm.step(s.lm.emb.row(cap.chosen[t]), h);
  }
  return lp;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("nucleus sampling truncates and renormalizes exactly") {
  // Token probabilities 0.6 / 0.3 / 0.1 on ids 3, 4, 5: with p = 0.8 the
  // nucleus is {3, 4} (0.6 < 0.8 <= 0.9), renormalized to 2/3 and 1/3.
  Speaker s = fixed_logit_speaker({{3, 0.6}, {4, 0.3}, {5, 0.1}}, 51);
  const Mat grid = any_grid(s, 52);
  GameConfig cfg;
  cfg.nucleus_p = 0.8;
  cfg.max_tokens = 1;

  Rng rng(53);
  int count3 = 0;
  const int N = 20000;
  for (int i = 0; i < N; ++i) {
    const SampledCaption cap = sample_caption(s, grid, cfg, rng);
    REQUIRE(cap.chosen.size() == 1);
    REQUIRE(cap.nucleus.size() == 1);
    REQUIRE(cap.nucleus[0] == std::vector<int>({3, 4}));
    REQUIRE((cap.chosen[0] == 3 || cap.chosen[0] == 4));
    if (cap.chosen[0] == 3) ++count3;
    const double expect =
        cap.chosen[0] == 3 ? std::log(2.0 / 3.0) : std::log(1.0 / 3.0);
    REQUIRE(cap.log_prob == doctest::Approx(expect).epsilon(1e-9));
  }
  // 3 sigma around 2/3 for N Bernoulli draws.
  const double mean = 2.0 / 3.0;
  const double sigma = std::sqrt(mean * (1.0 - mean) / N);
  CHECK(std::abs(count3 / double(N) - mean) < 3.0 * sigma);
}

TEST_CASE("nucleus p = 1 keeps the full support") {
  Speaker s = fixed_logit_speaker({{3, 0.5}, {4, 0.3}, {5, 0.2}}, 54);
  const Mat grid = any_grid(s, 55);
  GameConfig cfg;
  cfg.nucleus_p = 1.0;
  cfg.max_tokens = 1;
  Rng rng(56);
  const SampledCaption cap = sample_caption(s, grid, cfg, rng);
  for (int id : {3, 4, 5}) {
    CHECK(std::count(cap.nucleus[0].begin(), cap.nucleus[0].end(), id) == 1);
  }
  CHECK(cap.log_prob == doctest::Approx(std::log(
      cap.chosen[0] == 3 ? 0.5 : cap.chosen[0] == 4 ? 0.3 : 0.2)).epsilon(1e-6));
}

TEST_CASE("sampled nuclei are minimal mass-covering prefixes") {
  Rng gen(57);
  for (int trial = 0; trial < 50; ++trial) {
    ModelDims dims;
    Rng init(100 + trial);
    Speaker s;
    s.encoder = VisionEncoder::init(dims, init);
    s.adapter = AdapterParams::init(dims, init);
    s.lm = CaptionLM::init(dims, init);
    s.lm.Wo.setZero();
    for (long j = 0; j < s.lm.bo.cols(); ++j) s.lm.bo(0, j) = 3.0 * gen.normal();
    const Mat grid = any_grid(s, 200 + trial);

    GameConfig cfg;
    cfg.nucleus_p = 0.05 + 0.9 * gen.uniform();
    cfg.temperature = 0.5 + gen.uniform();
    cfg.max_tokens = 1;
    Rng rng(300 + trial);
    const SampledCaption cap = sample_caption(s, grid, cfg, rng);

    // Oracle: softmax of bo / temperature, sorted descending, shortest
    // prefix reaching the target mass.
    const long V = s.lm.bo.cols();
    Eigen::ArrayXd logits = s.lm.bo.row(0).array() / cfg.temperature;
    Eigen::ArrayXd p = (logits - logits.maxCoeff()).exp();
    p /= p.sum();
    std::vector<int> order(V);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return p[a] != p[b] ? p[a] > p[b] : a < b; });
    std::vector<int> want;
    double mass = 0.0;
    for (int id : order) {
      want.push_back(id);
      mass += p[id];
      if (mass >= cfg.nucleus_p) break;
    }
    std::sort(want.begin(), want.end());
    REQUIRE(cap.nucleus[0] == want);
    bool in_nucleus = false;
    for (int id : want) in_nucleus = in_nucleus || id == cap.chosen[0];
    REQUIRE(in_nucleus);
  }
}

TEST_CASE("reward arithmetic follows the mode") {
  const auto ids = Vocabulary::instance().tokenize("red pullover");
  GameConfig cfg;
  cfg.length_penalty = 3e-3;

  EpisodeRecord ep;
  ep.caption.ids = ids;
  ep.correct_1 = true;
  ep.correct_2 = false;
  cfg.reward_mode = RewardMode::kContrastive;
  CHECK(compute_reward(ep, cfg) == doctest::Approx(1.0 - 0.006).epsilon(1e-12));
  CHECK(ep.raw_reward == 1.0);
  CHECK(ep.length_cost == doctest::Approx(0.006));

  ep.correct_2 = true;
  CHECK(compute_reward(ep, cfg) == doctest::Approx(-0.006).epsilon(1e-12));
  CHECK(ep.raw_reward == 0.0);

  ep.correct_1 = false;
  CHECK(compute_reward(ep, cfg) == doctest::Approx(-1.0 - 0.006).epsilon(1e-12));

  cfg.reward_mode = RewardMode::kSingleListener;
  ep.correct_1 = true;
  CHECK(compute_reward(ep, cfg) == doctest::Approx(1.0 - 0.006).epsilon(1e-12));

  cfg.reward_mode = RewardMode::kNonContrastive;
  ep.score_1 = 0.4;
  ep.score_2 = 0.4;
  CHECK(compute_reward(ep, cfg) == doctest::Approx(-0.006).epsilon(1e-12));
  ep.score_1 = 0.7;
  ep.score_2 = 0.1;
  CHECK(compute_reward(ep, cfg) ==
        doctest::Approx(0.6 - 0.006).epsilon(1e-12));

  // Multi-word tokens count as their word count.
  ep.caption.ids = Vocabulary::instance().tokenize("red ankle boot");
  cfg.reward_mode = RewardMode::kContrastive;
  compute_reward(ep, cfg);
  CHECK(ep.length_cost == doctest::Approx(3e-3 * 3));
}

TEST_CASE("play_round rejects a target among distractors") {
  auto w = make_world(TransformTag::kIdentity, TransformTag::kCrop);
  EpisodeRecord ep;
  ep.target = w->ds.train_indices[0];
  ep.distractors = {w->ds.train_indices[1], ep.target};
  ep.caption.ids = Vocabulary::instance().tokenize("red pullover");
  Rng rng(61);
  CHECK_THROWS_WITH_AS(play_round(w->ctx, ep, rng), doctest::Contains("target"),
                       std::invalid_argument);
}

TEST_CASE("empty captions score zero everywhere") {
  auto w = make_world(TransformTag::kIdentity, TransformTag::kCrop);
  EpisodeRecord ep;
  ep.target = w->ds.train_indices[0];
  ep.distractors = {w->ds.train_indices[1], w->ds.train_indices[2],
                    w->ds.train_indices[3]};
  Rng rng(62);
  play_round(w->ctx, ep, rng);
  CHECK(ep.score_1 == 0.0);
  CHECK(ep.score_2 == 0.0);
}

TEST_CASE("untrained contrastive play is unbiased and at chance") {
  auto w = make_world(TransformTag::kIdentity, TransformTag::kIdentity);
  GameConfig cfg;
  cfg.batch_size = 64;
  cfg.max_tokens = 6;
  Rng rng(63);

  int episodes = 0, acc1 = 0;
  for (int b = 0; b < 16; ++b) {
    auto batch = make_batch(w->ctx, cfg, rng);
    for (EpisodeRecord& ep : batch) {
      ep.caption = sample_caption(*w->ctx.speaker, w->ctx.grids[ep.target], cfg,
                                  rng);
      play_round(w->ctx, ep, rng);
      compute_reward(ep, cfg);
      CHECK((ep.raw_reward == -1.0 || ep.raw_reward == 0.0 ||
             ep.raw_reward == 1.0));
      // Identical listener transforms agree on every choice.
      CHECK(ep.correct_1 == ep.correct_2);
      CHECK(ep.raw_reward == 0.0);
      acc1 += ep.correct_1 ? 1 : 0;
      ++episodes;
    }
  }
  REQUIRE(episodes == 1024);
  const double sigma = std::sqrt(0.25 * 0.75 / episodes);
  CHECK(std::abs(acc1 / double(episodes) - 0.25) < 3.0 * sigma);
}

TEST_CASE("make_batch draws distractors from its own targets") {
  auto w = make_world(TransformTag::kIdentity, TransformTag::kCrop);
  GameConfig cfg;
  cfg.batch_size = 16;
  Rng rng(64);
  const auto batch = make_batch(w->ctx, cfg, rng);
  REQUIRE(batch.size() == 16);
  std::set<int> targets;
  for (const auto& ep : batch) targets.insert(ep.target);
  CHECK(targets.size() == batch.size());
  for (const auto& ep : batch) {
    CHECK(w->ds.item(ep.target).split == "train");
    REQUIRE(ep.distractors.size() == 3);
    std::set<int> seen = {ep.target};
    for (int d : ep.distractors) {
      CHECK(targets.count(d) == 1);
      CHECK(seen.insert(d).second);
    }
  }

  GameConfig tiny = cfg;
  tiny.batch_size = 3;  // <= n_distractors
  CHECK_THROWS_AS(make_batch(w->ctx, tiny, rng), std::invalid_argument);
}

TEST_CASE("reinforce loss equals the surrogate oracle") {
  auto w = make_world(TransformTag::kIdentity, TransformTag::kCrop);
  GameConfig cfg;
  cfg.batch_size = 8;
  cfg.max_tokens = 5;
  cfg.nucleus_p = 0.8;
  cfg.temperature = 1.3;
  Rng rng(65);
  auto batch = make_batch(w->ctx, cfg, rng);
  for (EpisodeRecord& ep : batch) {
    ep.caption = sample_caption(*w->ctx.speaker, w->ctx.grids[ep.target], cfg,
                                rng);
    play_round(w->ctx, ep, rng);
    compute_reward(ep, cfg);
  }
  double baseline = 0.0;
  for (const auto& ep : batch) baseline += ep.reward;
  baseline /= batch.size();
  double want = 0.0;
  for (const auto& ep : batch) {
    const double lp =
        caption_log_prob(*w->ctx.speaker, w->ctx.grids[ep.target], ep.caption,
                         cfg);
    // The sampling path computes the same quantity independently.
    CHECK(lp == doctest::Approx(ep.caption.log_prob).epsilon(1e-9));
    want += (ep.reward - baseline) * lp;
  }
  want = -want / batch.size();

  Adam opt(0.0);
  const double loss = reinforce_step(w->ctx, batch, cfg, opt);
  CHECK(loss == doctest::Approx(want).epsilon(1e-8));
}

TEST_CASE("zero advantage leaves the adapter untouched") {
  auto w = make_world(TransformTag::kIdentity, TransformTag::kCrop);
  GameConfig cfg;
  cfg.batch_size = 8;
  cfg.max_tokens = 4;
  Rng rng(66);
  auto batch = make_batch(w->ctx, cfg, rng);
  for (EpisodeRecord& ep : batch) {
    ep.caption = sample_caption(*w->ctx.speaker, w->ctx.grids[ep.target], cfg,
                                rng);
    // Identical, exactly representable rewards: the batch-mean baseline
    // cancels them bit for bit.
    ep.reward = 0.5;
  }
  const Mat Q = w->speaker.adapter.Q;
  const Mat WK = w->speaker.adapter.W_K;
  const Mat WV = w->speaker.adapter.W_V;
  Adam opt(cfg.learning_rate);
  const double loss = reinforce_step(w->ctx, batch, cfg, opt);
  CHECK(loss == 0.0);
  CHECK((w->speaker.adapter.Q.array() == Q.array()).all());
  CHECK((w->speaker.adapter.W_K.array() == WK.array()).all());
  CHECK((w->speaker.adapter.W_V.array() == WV.array()).all());
}

TEST_CASE("reinforce updates only the adapter and raises caption likelihood") {
  auto w = make_world(TransformTag::kIdentity, TransformTag::kCrop);
  GameConfig cfg;
  cfg.batch_size = 8;
  cfg.max_tokens = 4;
  cfg.use_baseline = false;
  cfg.learning_rate = 1e-3;
  Rng rng(67);

  const Mat lm_emb = w->speaker.lm.emb;
  const Mat lm_Wo = w->speaker.lm.Wo;
  const Mat enc_W = w->speaker.encoder.W;
  const Mat lis_emb = w->listener.t_emb;
  const Mat Q_before = w->speaker.adapter.Q;

  auto batch = make_batch(w->ctx, cfg, rng);
  batch.resize(1);
  batch[0].caption = sample_caption(*w->ctx.speaker,
                                    w->ctx.grids[batch[0].target], cfg, rng);
  batch[0].reward = 1.0;
  const double lp_before = caption_log_prob(
      *w->ctx.speaker, w->ctx.grids[batch[0].target], batch[0].caption, cfg);

  Adam opt(cfg.learning_rate);
  reinforce_step(w->ctx, batch, cfg, opt);

  CHECK((w->speaker.lm.emb.array() == lm_emb.array()).all());
  CHECK((w->speaker.lm.Wo.array() == lm_Wo.array()).all());
  CHECK((w->speaker.encoder.W.array() == enc_W.array()).all());
  CHECK((w->listener.t_emb.array() == lis_emb.array()).all());
  CHECK(!(w->speaker.adapter.Q.array() == Q_before.array()).all());

  // Positive reward: a gradient step makes the sampled caption more likely.
  const double lp_after = caption_log_prob(
      *w->ctx.speaker, w->ctx.grids[batch[0].target], batch[0].caption, cfg);
  CHECK(lp_after > lp_before);
}

TEST_CASE("training is deterministic and resumable") {
  namespace fs = std::filesystem;
  const std::string dir =
      (fs::temp_directory_path() / "rg_arena_train").string();
  fs::remove_all(dir);
  fs::create_directories(dir);

  GameConfig cfg;
  cfg.batch_size = 8;
  cfg.max_tokens = 4;
  cfg.iterations = 6;
  cfg.eval_interval = 3;
  cfg.seed = 5;
  NGramLM drift;
  drift.fit({Vocabulary::instance().tokenize("red pullover")});

  auto run = [&](const std::string& log, const std::string& state,
                 int iterations) {
    auto w = make_world(TransformTag::kIdentity, TransformTag::kCrop, 32, 8);
    GameConfig c = cfg;
    c.iterations = iterations;
    return train(w->ctx, c, drift, log, "hash-a", state);
  };

  const TrainResult r1 = run(dir + "/a.jsonl", "", 6);
  run(dir + "/b.jsonl", "", 6);
  CHECK(r1.iterations_run == 6);
  const std::string full = read_file(dir + "/a.jsonl");
  CHECK(full == read_file(dir + "/b.jsonl"));
  CHECK(full.find("\"type\":\"eval\"") != std::string::npos);
  CHECK(full.find("\"config\":\"hash-a\"") != std::string::npos);

  // Interrupt after 3 iterations, then resume to 6: identical log.
  run(dir + "/c.jsonl", dir + "/state.ckpt", 3);
  run(dir + "/c.jsonl", dir + "/state.ckpt", 6);
  CHECK(read_file(dir + "/c.jsonl") == full);

  // Resuming under a different config hash is refused.
  auto w = make_world(TransformTag::kIdentity, TransformTag::kCrop, 32, 8);
  CHECK_THROWS_WITH_AS(
      train(w->ctx, cfg, drift, dir + "/d.jsonl", "hash-b", dir + "/state.ckpt"),
      doctest::Contains("mismatch"), std::runtime_error);

  fs::remove_all(dir);
}

TEST_CASE("evaluation is deterministic and fully populated") {
  auto w = make_world(TransformTag::kIdentity, TransformTag::kGrayscale, 32,
                       8);
  GameConfig cfg;
  cfg.max_tokens = 5;
  NGramLM drift;
  drift.fit({Vocabulary::instance().tokenize("red pullover")});
  std::vector<Caption> caps;
  const MetricsReport a = evaluate(w->ctx, cfg, drift, &caps);
  const MetricsReport b = evaluate(w->ctx, cfg, drift);
  CHECK(a.to_json() == b.to_json());
  CHECK(caps.size() == w->ds.test_indices.size());
  CHECK(a.chance_accuracy == doctest::Approx(0.25));
  CHECK(a.accuracy_difference ==
        doctest::Approx(a.accuracy_1 - a.accuracy_2).epsilon(1e-12));
  CHECK(a.mean_caption_words >= 0.0);
}
