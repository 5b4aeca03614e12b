#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "refgame/models.hpp"

using namespace refgame;

namespace {

ColorImage random_image(int size, Rng& rng) {
  ColorImage img;
  for (auto& ch : img.channel) {
    ch.resize(size, size);
    for (int i = 0; i < size; ++i) {
      for (int j = 0; j < size; ++j) ch(i, j) = rng.uniform();
    }
  }
  return img;
}

Mat random_mat(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

}  // namespace

TEST_CASE("vision encoder produces a bounded deterministic feature grid") {
  ModelDims dims;
  Rng rng(31);
  VisionEncoder enc = VisionEncoder::init(dims, rng);
  const ColorImage img = random_image(dims.image_size, rng);
  const Mat grid = enc.encode(img);
  CHECK(grid.rows() == dims.grid());
  CHECK(grid.cols() == dims.d_v);
  CHECK(grid.array().abs().maxCoeff() < 1.0);
  CHECK((enc.encode(img).array() == grid.array()).all());

  ColorImage wrong = random_image(dims.image_size / 2, rng);
  CHECK_THROWS_WITH_AS(enc.encode(wrong), doctest::Contains("size"),
                       std::invalid_argument);
}

TEST_CASE("adapter outputs are convex combinations of value rows") {
  ModelDims dims;
  Rng rng(32);
  VisionEncoder enc = VisionEncoder::init(dims, rng);
  AdapterParams adapter = AdapterParams::init(dims, rng);
  const Mat grid = enc.encode(random_image(dims.image_size, rng));
  const Mat out = adapter.forward(grid);
  CHECK(out.rows() == dims.n_prefix);
  CHECK(out.cols() == dims.d_lm);

  // Attention weights are a softmax, so each output row lies inside the
  // per-column envelope of V = grid * W_V.
  const Mat V = grid * adapter.W_V;
  for (int j = 0; j < out.cols(); ++j) {
    const double lo = V.col(j).minCoeff();
    const double hi = V.col(j).maxCoeff();
    for (int i = 0; i < out.rows(); ++i) {
      CHECK(out(i, j) >= lo - 1e-12);
      CHECK(out(i, j) <= hi + 1e-12);
    }
  }

  Mat bad = random_mat(dims.grid(), dims.d_v + 1, rng);
  CHECK_THROWS_WITH_AS(adapter.forward(bad), doctest::Contains("columns"),
                       std::invalid_argument);
}

TEST_CASE("tape forwards match the raw forwards") {
  ModelDims dims;
  Rng rng(33);
  VisionEncoder enc = VisionEncoder::init(dims, rng);
  AdapterParams adapter = AdapterParams::init(dims, rng);
  CaptionLM lm = CaptionLM::init(dims, rng);
  const Mat grid = enc.encode(random_image(dims.image_size, rng));

  ad::Tape tape;
  AdapterRefs aref = AdapterRefs::lift(tape, adapter, true);
  const Mat tape_out = aref.forward(tape, grid).val();
  const Mat raw_out = adapter.forward(grid);
  CHECK((tape_out - raw_out).array().abs().maxCoeff() < 1e-12);

  const int B = 3;
  Mat x = random_mat(B, dims.d_lm, rng);
  Mat h_raw = random_mat(B, lm.hidden(), rng);
  Mat h_copy = h_raw;
  lm.step(x, h_copy);
  CaptionLmRefs lref = CaptionLmRefs::lift(tape, lm, false);
  ad::Ref h_tape = lref.step(tape, tape.constant(x), tape.constant(h_raw));
  CHECK((h_tape.val() - h_copy).array().abs().maxCoeff() < 1e-12);

  const Mat logits_raw = lm.logits(h_copy);
  const Mat logits_tape = lref.logits(tape, h_tape).val();
  CHECK((logits_tape - logits_raw).array().abs().maxCoeff() < 1e-12);
  CHECK(logits_raw.cols() == Vocabulary::instance().size());
}

TEST_CASE("caption model rejects over-long sequences") {
  ModelDims dims;
  Rng rng(34);
  CaptionLM lm = CaptionLM::init(dims, rng);
  Mat prefix = random_mat(dims.n_prefix, dims.d_lm, rng);
  std::vector<int> ok(kMaxCaptionTokens, 3);
  CHECK(lm.next_logits(prefix, ok).cols() == lm.vocab());
  std::vector<int> too_long(kMaxCaptionTokens + 1, 3);
  CHECK_THROWS_AS(lm.next_logits(prefix, too_long), std::invalid_argument);
}

TEST_CASE("dual encoder embeddings are unit norm") {
  ModelDims dims;
  Rng rng(35);
  DualEncoder de = DualEncoder::init(dims, rng);
  for (int i = 0; i < 5; ++i) {
    const ColorImage img = random_image(dims.image_size, rng);
    CHECK(de.image_embedding(img).norm() == doctest::Approx(1.0));
  }
  const auto& v = Vocabulary::instance();
  CHECK(de.text_embedding(v.tokenize("red pullover")).norm() ==
        doctest::Approx(1.0));
  CHECK_THROWS_WITH_AS(de.text_embedding({v.bos(), v.eos()}),
                       doctest::Contains("empty"), std::invalid_argument);
}

TEST_CASE("listener match equals the cosine of its cached embedding") {
  ModelDims dims;
  Rng rng(36);
  DualEncoder de = DualEncoder::init(dims, rng);
  Listener listener{&de, TransformTag::kGrayscale};
  const ColorImage raw = random_image(dims.image_size, rng);
  const auto ids = Vocabulary::instance().tokenize("blue bag");
  const Mat cached = listener.observe_embedding(raw);
  CHECK(listener.match(ids, raw) ==
        doctest::Approx(listener_match_cached(de, ids, cached)).epsilon(1e-12));
  // Unit-norm towers keep the cosine in [-1, 1].
  CHECK(std::abs(listener.match(ids, raw)) <= 1.0 + 1e-12);
}

TEST_CASE("argmax choice breaks ties low and ignores positive rescaling") {
  CHECK(argmax_choice({0.1, 0.7, 0.3}) == 1);
  CHECK(argmax_choice({0.5, 0.5, 0.2}) == 0);
  CHECK(argmax_choice({-1.0, -2.0}) == 0);
  Rng rng(37);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s;
    for (int i = 0; i < 4; ++i) s.push_back(rng.normal());
    const double scale = 0.01 + 5.0 * rng.uniform();
    std::vector<double> scaled;
    for (double x : s) scaled.push_back(scale * x);
    CHECK(argmax_choice(s) == argmax_choice(scaled));
  }
}

TEST_CASE("content tokens strip specials") {
  const auto& v = Vocabulary::instance();
  const auto ids = v.tokenize("red pullover");
  std::vector<int> padded = {v.bos(), ids[0], ids[1], v.eos(), v.pad(), ids[0]};
  const auto content = content_tokens(padded);
  REQUIRE(content.size() == 2);
  CHECK(content[0] == ids[0]);
  CHECK(content[1] == ids[1]);
}

TEST_CASE("speaker feature grid applies the speaker normalization profile") {
  ModelDims dims;
  Rng rng(38);
  VisionEncoder enc = VisionEncoder::init(dims, rng);
  const ColorImage raw = random_image(dims.image_size, rng);
  const Mat got = speaker_feature_grid(enc, raw);
  const Mat want = enc.encode(normalize(raw, speaker_norm_stats()));
  CHECK((got - want).array().abs().maxCoeff() == 0.0);
}

TEST_CASE("model parameters round-trip through checkpoints") {
  ModelDims dims;
  Rng rng(39);
  VisionEncoder enc = VisionEncoder::init(dims, rng);
  AdapterParams adapter = AdapterParams::init(dims, rng);
  CaptionLM lm = CaptionLM::init(dims, rng);
  DualEncoder de = DualEncoder::init(dims, rng);

  TensorMap m;
  enc.append_to(m, "encoder.");
  adapter.append_to(m, "adapter.");
  lm.append_to(m, "lm.");
  de.append_to(m, "listener.");
  const std::string path =
      (std::filesystem::temp_directory_path() / "rg_models_ckpt.bin").string();
  save_checkpoint(path, m);
  const TensorMap back = load_checkpoint(path);
  std::filesystem::remove(path);

  Rng rng2(40);
  VisionEncoder enc2 = VisionEncoder::init(dims, rng2);
  AdapterParams adapter2 = AdapterParams::init(dims, rng2);
  CaptionLM lm2 = CaptionLM::init(dims, rng2);
  DualEncoder de2 = DualEncoder::init(dims, rng2);
  enc2.load_from(back, "encoder.");
  adapter2.load_from(back, "adapter.");
  lm2.load_from(back, "lm.");
  de2.load_from(back, "listener.");

  CHECK((enc2.W.array() == enc.W.array()).all());
  CHECK((adapter2.Q.array() == adapter.Q.array()).all());
  CHECK((adapter2.W_V.array() == adapter.W_V.array()).all());
  CHECK((lm2.emb.array() == lm.emb.array()).all());
  CHECK((lm2.Uh.array() == lm.Uh.array()).all());
  CHECK((de2.t_emb.array() == de.t_emb.array()).all());
  CHECK((de2.enc.W.array() == de.enc.W.array()).all());

  const ColorImage img = random_image(dims.image_size, rng);
  CHECK((enc2.encode(img).array() == enc.encode(img).array()).all());

  CHECK_THROWS_WITH_AS(enc2.load_from(back, "missing."),
                       doctest::Contains("missing"), std::runtime_error);
}
