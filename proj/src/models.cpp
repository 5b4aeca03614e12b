#include "refgame/models.hpp"

#include <cmath>
#include <stdexcept>

namespace refgame {

namespace {

Mat gaussian(int rows, int cols, double stddev, Rng& rng) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
  }
  return m;
}

Mat fan_in_init(int rows, int cols, Rng& rng) {
  return gaussian(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)), rng);
}

void store(TensorMap& m, const std::string& key, const Mat& v) {
  m[key] = v;
}

const Mat& fetch(const TensorMap& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw std::runtime_error("checkpoint: missing tensor " + key);
  return it->second;
}

}  // namespace

// ---------------------------------------------------------------------------
// VisionEncoder

VisionEncoder VisionEncoder::init(const ModelDims& dims, Rng& rng) {
  VisionEncoder e;
  e.image_size = dims.image_size;
  e.patch = dims.patch;
  e.W = fan_in_init(dims.patch_dim(), dims.d_v, rng);
  e.b = Mat::Zero(1, dims.d_v);
  return e;
}

Mat VisionEncoder::patches(const ColorImage& normalized) const {
  if (normalized.size() != image_size) {
    throw std::invalid_argument("encode_image: expected size " +
                                std::to_string(image_size) + ", got " +
                                std::to_string(normalized.size()));
  }
  const int grid = image_size / patch;
  Mat X(grid * grid, patch * patch * 3 + 2);
  for (int gi = 0; gi < grid; ++gi) {
    for (int gj = 0; gj < grid; ++gj) {
      const int row = gi * grid + gj;
      int col = 0;
      for (int pi = 0; pi < patch; ++pi) {
        for (int pj = 0; pj < patch; ++pj) {
          for (int c = 0; c < 3; ++c) {
            X(row, col++) =
                normalized.channel[c](gi * patch + pi, gj * patch + pj);
          }
        }
      }
      // Patch-center coordinates in [-1, 1].
      X(row, col++) = grid > 1 ? 2.0 * gi / (grid - 1) - 1.0 : 0.0;
      X(row, col++) = grid > 1 ? 2.0 * gj / (grid - 1) - 1.0 : 0.0;
    }
  }
  return X;
}

Mat VisionEncoder::encode(const ColorImage& normalized) const {
  Mat pre = patches(normalized) * W;
  pre.rowwise() += b.row(0);
  return pre.array().tanh().matrix();
}

void VisionEncoder::append_to(TensorMap& m, const std::string& prefix) const {
  store(m, prefix + ".W", W);
  store(m, prefix + ".b", b);
  Mat meta(1, 2);
  meta << image_size, patch;
  store(m, prefix + ".dims", meta);
}

void VisionEncoder::load_from(const TensorMap& m, const std::string& prefix) {
  W = fetch(m, prefix + ".W");
  b = fetch(m, prefix + ".b");
  const Mat& meta = fetch(m, prefix + ".dims");
  image_size = static_cast<int>(meta(0, 0));
  patch = static_cast<int>(meta(0, 1));
}

// ---------------------------------------------------------------------------
// AdapterParams

AdapterParams AdapterParams::init(const ModelDims& dims, Rng& rng) {
  AdapterParams a;
  a.Q = gaussian(dims.n_prefix, dims.d_attn, 0.5, rng);
  a.W_K = fan_in_init(dims.d_v, dims.d_attn, rng);
  a.W_V = fan_in_init(dims.d_v, dims.d_lm, rng);
  return a;
}

Mat AdapterParams::forward(const Mat& feature_grid) const {
  if (feature_grid.cols() != W_K.rows()) {
    throw std::invalid_argument("adapter_forward: feature grid has " +
                                std::to_string(feature_grid.cols()) +
                                " columns, expected " +
                                std::to_string(W_K.rows()));
  }
  const Mat K = feature_grid * W_K;  // P x d
  const Mat V = feature_grid * W_V;  // P x d_lm
  Mat scores = Q * K.transpose() / std::sqrt(static_cast<double>(Q.cols()));
  for (long i = 0; i < scores.rows(); ++i) {
    Eigen::ArrayXd row = scores.row(i).array() - scores.row(i).maxCoeff();
    Eigen::ArrayXd e = row.exp();
    scores.row(i) = (e / e.sum()).matrix();
  }
  return scores * V;  // n x d_lm
}

void AdapterParams::append_to(TensorMap& m, const std::string& prefix) const {
  store(m, prefix + ".Q", Q);
  store(m, prefix + ".W_K", W_K);
  store(m, prefix + ".W_V", W_V);
}

void AdapterParams::load_from(const TensorMap& m, const std::string& prefix) {
  Q = fetch(m, prefix + ".Q");
  W_K = fetch(m, prefix + ".W_K");
  W_V = fetch(m, prefix + ".W_V");
}

AdapterRefs AdapterRefs::lift(Tape& tape, const AdapterParams& p,
                              bool requires_grad) {
  return AdapterRefs{tape.leaf(p.Q, requires_grad),
                     tape.leaf(p.W_K, requires_grad),
                     tape.leaf(p.W_V, requires_grad)};
}

Ref AdapterRefs::forward(Tape& tape, const Mat& feature_grid) const {
  return forward(tape, tape.constant(feature_grid));
}

Ref AdapterRefs::forward(Tape& tape, Ref E) const {
  Ref K = tape.matmul(E, W_K);
  Ref V = tape.matmul(E, W_V);
  Ref scores = tape.scale(tape.matmul_nt(Q, K),
                          1.0 / std::sqrt(static_cast<double>(Q.cols())));
  Ref attn = tape.softmax_rows(scores);
  return tape.matmul(attn, V);
}

// ---------------------------------------------------------------------------
// CaptionLM

CaptionLM CaptionLM::init(const ModelDims& dims, Rng& rng) {
  const int V = Vocabulary::instance().size();
  const int d = dims.d_lm;
  CaptionLM lm;
  lm.emb = gaussian(V, d, 0.5, rng);
  lm.Wz = fan_in_init(d, d, rng);
  lm.Wr = fan_in_init(d, d, rng);
  lm.Wh = fan_in_init(d, d, rng);
  lm.Uz = fan_in_init(d, d, rng);
  lm.Ur = fan_in_init(d, d, rng);
  lm.Uh = fan_in_init(d, d, rng);
  lm.bz = Mat::Zero(1, d);
  lm.br = Mat::Zero(1, d);
  lm.bh = Mat::Zero(1, d);
  lm.Wo = fan_in_init(d, V, rng);
  lm.bo = Mat::Zero(1, V);
  return lm;
}

void CaptionLM::step(const Mat& x, Mat& h) const {
  const Mat z = (1.0 / (1.0 + (-((x * Wz + h * Uz).rowwise() + bz.row(0)).array()).exp())).matrix();
  const Mat r = (1.0 / (1.0 + (-((x * Wr + h * Ur).rowwise() + br.row(0)).array()).exp())).matrix();
  const Mat hh = (((x * Wh + (r.cwiseProduct(h)) * Uh).rowwise() + bh.row(0)).array().tanh()).matrix();
  h = ((1.0 - z.array()) * h.array() + z.array() * hh.array()).matrix();
}

Mat CaptionLM::logits(const Mat& h) const {
  Mat out = h * Wo;
  out.rowwise() += bo.row(0);
  return out;
}

Mat CaptionLM::next_logits(const Mat& prefix,
                           const std::vector<int>& tokens_so_far) const {
  if (static_cast<int>(tokens_so_far.size()) > kMaxCaptionTokens) {
    throw std::invalid_argument("lm_next_logits: sequence exceeds max length");
  }
  const auto& vocab = Vocabulary::instance();
  Mat h = Mat::Zero(1, hidden());
  for (long i = 0; i < prefix.rows(); ++i) {
    step(prefix.row(i), h);
  }
  step(emb.row(vocab.bos()), h);
  for (int tok : tokens_so_far) {
    step(emb.row(tok), h);
  }
  return logits(h);
}

void CaptionLM::append_to(TensorMap& m, const std::string& p) const {
  store(m, p + ".emb", emb);
  store(m, p + ".Wz", Wz); store(m, p + ".Wr", Wr); store(m, p + ".Wh", Wh);
  store(m, p + ".Uz", Uz); store(m, p + ".Ur", Ur); store(m, p + ".Uh", Uh);
  store(m, p + ".bz", bz); store(m, p + ".br", br); store(m, p + ".bh", bh);
  store(m, p + ".Wo", Wo); store(m, p + ".bo", bo);
}

void CaptionLM::load_from(const TensorMap& m, const std::string& p) {
  emb = fetch(m, p + ".emb");
  Wz = fetch(m, p + ".Wz"); Wr = fetch(m, p + ".Wr"); Wh = fetch(m, p + ".Wh");
  Uz = fetch(m, p + ".Uz"); Ur = fetch(m, p + ".Ur"); Uh = fetch(m, p + ".Uh");
  bz = fetch(m, p + ".bz"); br = fetch(m, p + ".br"); bh = fetch(m, p + ".bh");
  Wo = fetch(m, p + ".Wo"); bo = fetch(m, p + ".bo");
}

CaptionLmRefs CaptionLmRefs::lift(Tape& tape, const CaptionLM& lm,
                                  bool requires_grad) {
  CaptionLmRefs r;
  r.emb = tape.leaf(lm.emb, requires_grad);
  r.Wz = tape.leaf(lm.Wz, requires_grad);
  r.Wr = tape.leaf(lm.Wr, requires_grad);
  r.Wh = tape.leaf(lm.Wh, requires_grad);
  r.Uz = tape.leaf(lm.Uz, requires_grad);
  r.Ur = tape.leaf(lm.Ur, requires_grad);
  r.Uh = tape.leaf(lm.Uh, requires_grad);
  r.bz = tape.leaf(lm.bz, requires_grad);
  r.br = tape.leaf(lm.br, requires_grad);
  r.bh = tape.leaf(lm.bh, requires_grad);
  r.Wo = tape.leaf(lm.Wo, requires_grad);
  r.bo = tape.leaf(lm.bo, requires_grad);
  return r;
}

Ref CaptionLmRefs::step(Tape& t, Ref x, Ref h) const {
  Ref z = t.sigmoid(t.add(t.add(t.matmul(x, Wz), t.matmul(h, Uz)), bz));
  Ref r = t.sigmoid(t.add(t.add(t.matmul(x, Wr), t.matmul(h, Ur)), br));
  Ref hh = t.tanh_(t.add(t.add(t.matmul(x, Wh), t.matmul(t.mul(r, h), Uh)), bh));
  Ref ones = t.constant(Mat::Ones(h.rows(), h.cols()));
  return t.add(t.mul(t.sub(ones, z), h), t.mul(z, hh));
}

Ref CaptionLmRefs::logits(Tape& t, Ref h) const {
  return t.add(t.matmul(h, Wo), bo);
}

// ---------------------------------------------------------------------------
// DualEncoder

DualEncoder DualEncoder::init(const ModelDims& dims, Rng& rng) {
  const int V = Vocabulary::instance().size();
  DualEncoder d;
  d.enc = VisionEncoder::init(dims, rng);
  d.W_img = fan_in_init(dims.d_v, dims.d_embed, rng);
  d.b_img = Mat::Zero(1, dims.d_embed);
  d.t_emb = gaussian(V, dims.d_embed, 0.5, rng);
  d.W_txt = fan_in_init(dims.d_embed, dims.d_embed, rng);
  d.b_txt = Mat::Zero(1, dims.d_embed);
  return d;
}

Mat DualEncoder::image_embedding(const ColorImage& normalized) const {
  const Mat grid = enc.encode(normalized);
  Mat pooled = grid.colwise().mean();  // 1 x d_v
  Mat out = pooled * W_img + b_img;
  const double n = std::max(out.norm(), 1e-12);
  return out / n;
}

Mat DualEncoder::text_embedding(const std::vector<int>& token_ids) const {
  const std::vector<int> content = content_tokens(token_ids);
  if (content.empty()) {
    throw std::invalid_argument("text_embedding: empty caption");
  }
  Mat pooled = Mat::Zero(1, t_emb.cols());
  for (int id : content) pooled += t_emb.row(id);
  pooled /= static_cast<double>(content.size());
  Mat out = pooled * W_txt + b_txt;
  const double n = std::max(out.norm(), 1e-12);
  return out / n;
}

void DualEncoder::append_to(TensorMap& m, const std::string& p) const {
  enc.append_to(m, p + ".enc");
  store(m, p + ".W_img", W_img);
  store(m, p + ".b_img", b_img);
  store(m, p + ".t_emb", t_emb);
  store(m, p + ".W_txt", W_txt);
  store(m, p + ".b_txt", b_txt);
  store(m, p + ".temperature", Mat::Constant(1, 1, temperature));
}

void DualEncoder::load_from(const TensorMap& m, const std::string& p) {
  enc.load_from(m, p + ".enc");
  W_img = fetch(m, p + ".W_img");
  b_img = fetch(m, p + ".b_img");
  t_emb = fetch(m, p + ".t_emb");
  W_txt = fetch(m, p + ".W_txt");
  b_txt = fetch(m, p + ".b_txt");
  temperature = fetch(m, p + ".temperature")(0, 0);
}

// ---------------------------------------------------------------------------
// Listener

Mat Listener::observe_embedding(const ColorImage& raw) const {
  const ColorImage seen =
      normalize(apply_transform(raw, transform), listener_norm_stats());
  return weights->image_embedding(seen);
}

double Listener::match(const std::vector<int>& caption_ids,
                       const ColorImage& raw) const {
  const Mat img = observe_embedding(raw);
  const Mat txt = weights->text_embedding(caption_ids);
  return img.row(0).dot(txt.row(0));
}

double listener_match_cached(const DualEncoder& weights,
                             const std::vector<int>& caption_ids,
                             const Mat& image_embedding) {
  const Mat txt = weights.text_embedding(caption_ids);
  return image_embedding.row(0).dot(txt.row(0));
}

int argmax_choice(const std::vector<double>& scores) {
  int best = 0;
  for (size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = static_cast<int>(i);
  }
  return best;
}

Mat speaker_feature_grid(const VisionEncoder& enc, const ColorImage& raw) {
  return enc.encode(normalize(raw, speaker_norm_stats()));
}

std::vector<int> content_tokens(const std::vector<int>& ids) {
  const auto& vocab = Vocabulary::instance();
  std::vector<int> out;
  for (int id : ids) {
    if (id == vocab.eos()) break;
    if (id == vocab.bos() || id == vocab.pad()) continue;
    out.push_back(id);
  }
  return out;
}

}  // namespace refgame
