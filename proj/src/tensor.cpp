#include "refgame/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace refgame::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Mat& a, const Mat& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes (" << a.rows() << "x" << a.cols()
     << ") vs (" << b.rows() << "x" << b.cols() << ")";
  throw std::invalid_argument(os.str());
}

}  // namespace

const Mat& Ref::val() const { return tape->value(id); }
const Mat& Ref::grad() const { return tape->gradient(id); }

void Tape::check_finite(const Mat& m, const char* op) const {
  if (!m.allFinite()) {
    throw std::runtime_error(std::string(op) + ": non-finite value produced");
  }
}

Ref Tape::push(Mat value, bool needs_grad, std::function<void()> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Ref{this, static_cast<int>(nodes_.size()) - 1};
}

Ref Tape::leaf(Mat value, bool requires_grad) {
  Ref r = push(std::move(value), requires_grad, nullptr);
  nodes_[r.id].is_grad_leaf = requires_grad;
  return r;
}

Ref Tape::matmul(Ref a, Ref b) {
  const Mat& A = a.val();
  const Mat& B = b.val();
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Mat C = A * B;
  Ref out = push(std::move(C), ng, nullptr);
  if (ng) {
    int ai = a.id, bi = b.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, bi, oi]() {
      const Mat& g = nodes_[oi].grad;
      if (nodes_[ai].needs_grad) nodes_[ai].grad.noalias() += g * nodes_[bi].value.transpose();
      if (nodes_[bi].needs_grad) nodes_[bi].grad.noalias() += nodes_[ai].value.transpose() * g;
    };
  }
  return out;
}

Ref Tape::matmul_nt(Ref a, Ref b) {
  const Mat& A = a.val();
  const Mat& B = b.val();
  if (A.cols() != B.cols()) shape_error("matmul_nt", A, B);
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Mat C = A * B.transpose();
  Ref out = push(std::move(C), ng, nullptr);
  if (ng) {
    int ai = a.id, bi = b.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, bi, oi]() {
      const Mat& g = nodes_[oi].grad;
      if (nodes_[ai].needs_grad) nodes_[ai].grad.noalias() += g * nodes_[bi].value;
      if (nodes_[bi].needs_grad) nodes_[bi].grad.noalias() += g.transpose() * nodes_[ai].value;
    };
  }
  return out;
}

Ref Tape::add(Ref a, Ref b) {
  const Mat& A = a.val();
  const Mat& B = b.val();
  const bool broadcast = B.rows() == 1 && A.rows() > 1 && A.cols() == B.cols();
  if (!broadcast && (A.rows() != B.rows() || A.cols() != B.cols())) {
    shape_error("add", A, B);
  }
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Mat C = broadcast ? Mat(A.rowwise() + B.row(0)) : Mat(A + B);
  Ref out = push(std::move(C), ng, nullptr);
  if (ng) {
    int ai = a.id, bi = b.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, bi, oi, broadcast]() {
      const Mat& g = nodes_[oi].grad;
      if (nodes_[ai].needs_grad) nodes_[ai].grad += g;
      if (nodes_[bi].needs_grad) {
        if (broadcast) {
          nodes_[bi].grad += g.colwise().sum();
        } else {
          nodes_[bi].grad += g;
        }
      }
    };
  }
  return out;
}

Ref Tape::sub(Ref a, Ref b) {
  const Mat& A = a.val();
  const Mat& B = b.val();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("sub", A, B);
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Ref out = push(A - B, ng, nullptr);
  if (ng) {
    int ai = a.id, bi = b.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, bi, oi]() {
      const Mat& g = nodes_[oi].grad;
      if (nodes_[ai].needs_grad) nodes_[ai].grad += g;
      if (nodes_[bi].needs_grad) nodes_[bi].grad -= g;
    };
  }
  return out;
}

Ref Tape::scale(Ref a, double s) {
  bool ng = nodes_[a.id].needs_grad;
  Ref out = push(a.val() * s, ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi, s]() { nodes_[ai].grad += nodes_[oi].grad * s; };
  }
  return out;
}

Ref Tape::tanh_(Ref a) {
  bool ng = nodes_[a.id].needs_grad;
  Ref out = push(a.val().array().tanh().matrix(), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi]() {
      nodes_[ai].grad.array() +=
          nodes_[oi].grad.array() * (1.0 - nodes_[oi].value.array().square());
    };
  }
  return out;
}

Ref Tape::relu(Ref a) {
  bool ng = nodes_[a.id].needs_grad;
  Ref out = push(a.val().cwiseMax(0.0), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi]() {
      nodes_[ai].grad.array() +=
          nodes_[oi].grad.array() * (nodes_[ai].value.array() > 0.0).cast<double>();
    };
  }
  return out;
}

Ref Tape::sigmoid(Ref a) {
  bool ng = nodes_[a.id].needs_grad;
  Mat y = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
  Ref out = push(std::move(y), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi]() {
      const auto& y = nodes_[oi].value.array();
      nodes_[ai].grad.array() += nodes_[oi].grad.array() * y * (1.0 - y);
    };
  }
  return out;
}

Ref Tape::mul(Ref a, Ref b) {
  const Mat& A = a.val();
  const Mat& B = b.val();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("mul", A, B);
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  Ref out = push(A.cwiseProduct(B), ng, nullptr);
  if (ng) {
    int ai = a.id, bi = b.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, bi, oi]() {
      const Mat& g = nodes_[oi].grad;
      if (nodes_[ai].needs_grad) nodes_[ai].grad += g.cwiseProduct(nodes_[bi].value);
      if (nodes_[bi].needs_grad) nodes_[bi].grad += g.cwiseProduct(nodes_[ai].value);
    };
  }
  return out;
}

Ref Tape::log_(Ref a) {
  bool ng = nodes_[a.id].needs_grad;
  Mat y = a.val().array().log().matrix();
  check_finite(y, "log");
  Ref out = push(std::move(y), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi]() {
      nodes_[ai].grad.array() += nodes_[oi].grad.array() / nodes_[ai].value.array();
    };
  }
  return out;
}

Ref Tape::exp_(Ref a) {
  bool ng = nodes_[a.id].needs_grad;
  Ref out = push(a.val().array().exp().matrix(), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi]() {
      nodes_[ai].grad.array() += nodes_[oi].grad.array() * nodes_[oi].value.array();
    };
  }
  return out;
}

Ref Tape::softmax_rows(Ref a) {
  const Mat& A = a.val();
  Mat y(A.rows(), A.cols());
  for (long i = 0; i < A.rows(); ++i) {
    Eigen::ArrayXd row = A.row(i).array() - A.row(i).maxCoeff();
    Eigen::ArrayXd e = row.exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  bool ng = nodes_[a.id].needs_grad;
  Ref out = push(std::move(y), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi]() {
      const Mat& y = nodes_[oi].value;
      const Mat& g = nodes_[oi].grad;
      for (long i = 0; i < y.rows(); ++i) {
        double dot = g.row(i).dot(y.row(i));
        nodes_[ai].grad.row(i).array() +=
            y.row(i).array() * (g.row(i).array() - dot);
      }
    };
  }
  return out;
}

Ref Tape::log_softmax_rows(Ref a) {
  const Mat& A = a.val();
  Mat y(A.rows(), A.cols());
  for (long i = 0; i < A.rows(); ++i) {
    Eigen::ArrayXd row = A.row(i).array() - A.row(i).maxCoeff();
    double lse = std::log(row.exp().sum());
    y.row(i) = (row - lse).matrix();
  }
  bool ng = nodes_[a.id].needs_grad;
  Ref out = push(std::move(y), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi]() {
      const Mat& y = nodes_[oi].value;
      const Mat& g = nodes_[oi].grad;
      for (long i = 0; i < y.rows(); ++i) {
        double gsum = g.row(i).sum();
        nodes_[ai].grad.row(i).array() +=
            g.row(i).array() - gsum * y.row(i).array().exp();
      }
    };
  }
  return out;
}

Ref Tape::embed(Ref table, const std::vector<int>& ids) {
  const Mat& T = table.val();
  Mat y(static_cast<long>(ids.size()), T.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= T.rows()) {
      throw std::invalid_argument("embed: index out of range");
    }
    y.row(static_cast<long>(i)) = T.row(ids[i]);
  }
  bool ng = nodes_[table.id].needs_grad;
  Ref out = push(std::move(y), ng, nullptr);
  if (ng) {
    int ti = table.id, oi = out.id;
    nodes_[oi].backprop = [this, ti, oi, ids]() {
      const Mat& g = nodes_[oi].grad;
      for (size_t i = 0; i < ids.size(); ++i) {
        nodes_[ti].grad.row(ids[i]) += g.row(static_cast<long>(i));
      }
    };
  }
  return out;
}

Ref Tape::concat_rows(const std::vector<Ref>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  long total = 0;
  long cols = parts[0].cols();
  bool ng = false;
  for (const Ref& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", parts[0].val(), p.val());
    total += p.rows();
    ng = ng || nodes_[p.id].needs_grad;
  }
  Mat y(total, cols);
  long r = 0;
  for (const Ref& p : parts) {
    y.middleRows(r, p.rows()) = p.val();
    r += p.rows();
  }
  Ref out = push(std::move(y), ng, nullptr);
  if (ng) {
    std::vector<int> pids;
    for (const Ref& p : parts) pids.push_back(p.id);
    int oi = out.id;
    nodes_[oi].backprop = [this, pids, oi]() {
      const Mat& g = nodes_[oi].grad;
      long r = 0;
      for (int pid : pids) {
        long n = nodes_[pid].value.rows();
        if (nodes_[pid].needs_grad) nodes_[pid].grad += g.middleRows(r, n);
        r += n;
      }
    };
  }
  return out;
}

Ref Tape::slice_rows(Ref a, int first, int count) {
  const Mat& A = a.val();
  if (first < 0 || count < 0 || first + count > A.rows()) {
    throw std::invalid_argument("slice_rows: range out of bounds");
  }
  bool ng = nodes_[a.id].needs_grad;
  Ref out = push(A.middleRows(first, count), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi, first, count]() {
      nodes_[ai].grad.middleRows(first, count) += nodes_[oi].grad;
    };
  }
  return out;
}

Ref Tape::row_sum(Ref a) {
  bool ng = nodes_[a.id].needs_grad;
  Ref out = push(a.val().rowwise().sum(), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi]() {
      const Mat& g = nodes_[oi].grad;
      nodes_[ai].grad.colwise() += g.col(0);
    };
  }
  return out;
}

Ref Tape::sum_all(Ref a) {
  bool ng = nodes_[a.id].needs_grad;
  Ref out = push(Mat::Constant(1, 1, a.val().sum()), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi]() {
      nodes_[ai].grad.array() += nodes_[oi].grad(0, 0);
    };
  }
  return out;
}

Ref Tape::mean_all(Ref a) {
  double inv = 1.0 / static_cast<double>(a.val().size());
  bool ng = nodes_[a.id].needs_grad;
  Ref out = push(Mat::Constant(1, 1, a.val().sum() * inv), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi, inv]() {
      nodes_[ai].grad.array() += nodes_[oi].grad(0, 0) * inv;
    };
  }
  return out;
}

Ref Tape::select_cols(Ref a, const std::vector<int>& ids) {
  const Mat& A = a.val();
  if (static_cast<long>(ids.size()) != A.rows()) {
    throw std::invalid_argument("select_cols: one index per row required");
  }
  Mat y(A.rows(), 1);
  for (long i = 0; i < A.rows(); ++i) {
    if (ids[i] < 0 || ids[i] >= A.cols()) {
      throw std::invalid_argument("select_cols: index out of range");
    }
    y(i, 0) = A(i, ids[i]);
  }
  bool ng = nodes_[a.id].needs_grad;
  Ref out = push(std::move(y), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi, ids]() {
      const Mat& g = nodes_[oi].grad;
      for (long i = 0; i < g.rows(); ++i) {
        nodes_[ai].grad(i, ids[i]) += g(i, 0);
      }
    };
  }
  return out;
}

Ref Tape::l2_normalize_rows(Ref a) {
  const Mat& A = a.val();
  Mat y(A.rows(), A.cols());
  Eigen::VectorXd norms(A.rows());
  for (long i = 0; i < A.rows(); ++i) {
    const double n = std::max(A.row(i).norm(), 1e-12);
    norms(i) = n;
    y.row(i) = A.row(i) / n;
  }
  bool ng = nodes_[a.id].needs_grad;
  Ref out = push(std::move(y), ng, nullptr);
  if (ng) {
    int ai = a.id, oi = out.id;
    nodes_[oi].backprop = [this, ai, oi, norms]() {
      const Mat& y = nodes_[oi].value;
      const Mat& g = nodes_[oi].grad;
      for (long i = 0; i < y.rows(); ++i) {
        const double dot = g.row(i).dot(y.row(i));
        nodes_[ai].grad.row(i) += (g.row(i) - dot * y.row(i)) / norms(i);
      }
    };
  }
  return out;
}

std::unordered_map<int, Mat> Tape::backward(Ref loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward: loss must be scalar");
  }
  for (Node& n : nodes_) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  }
  nodes_[loss.id].grad(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    if (nodes_[i].backprop && (nodes_[i].grad.array() != 0.0).any()) {
      nodes_[i].backprop();
    }
  }
  std::unordered_map<int, Mat> grads;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_grad_leaf) grads.emplace(static_cast<int>(i), nodes_[i].grad);
  }
  return grads;
}

double finite_diff_check(
    const std::function<double(const std::vector<Mat>&)>& f,
    const std::vector<Mat>& params, const std::vector<Mat>& analytic_grads,
    double step) {
  std::vector<Mat> p = params;
  double worst = 0.0;
  for (size_t k = 0; k < p.size(); ++k) {
    for (long i = 0; i < p[k].rows(); ++i) {
      for (long j = 0; j < p[k].cols(); ++j) {
        const double orig = p[k](i, j);
        p[k](i, j) = orig + step;
        const double fp = f(p);
        p[k](i, j) = orig - step;
        const double fm = f(p);
        p[k](i, j) = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        const double analytic = analytic_grads[k](i, j);
        const double err = std::abs(analytic - numeric) / (std::abs(analytic) + 1e-12);
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

}  // namespace refgame::ad
