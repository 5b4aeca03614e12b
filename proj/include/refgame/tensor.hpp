#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace refgame::ad {

using Mat = Eigen::MatrixXd;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the lifetime of the
// tape that produced it.
struct Ref {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& val() const;
  const Mat& grad() const;
  long rows() const { return val().rows(); }
  long cols() const { return val().cols(); }
  double scalar() const { return val()(0, 0); }
};

// Dynamic (define-by-run) tape of primitive operations. Values are dense
// 64-bit matrices; vectors are n-by-1 or 1-by-n, scalars 1-by-1. A tape is
// single-owner and single-threaded; rebuild it for every forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Ref leaf(Mat value, bool requires_grad = false);
  Ref constant(Mat value) { return leaf(std::move(value), false); }
  Ref scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

  // C = A * B
  Ref matmul(Ref a, Ref b);
  // C = A * B^T
  Ref matmul_nt(Ref a, Ref b);
  // Same shape, or b a 1-by-k row vector broadcast over a's rows.
  Ref add(Ref a, Ref b);
  Ref sub(Ref a, Ref b);
  Ref scale(Ref a, double s);
  Ref tanh_(Ref a);
  Ref relu(Ref a);
  Ref sigmoid(Ref a);
  Ref mul(Ref a, Ref b);  // elementwise
  Ref log_(Ref a);
  Ref exp_(Ref a);
  // Row-wise softmax / log-softmax with max subtraction.
  Ref softmax_rows(Ref a);
  Ref log_softmax_rows(Ref a);
  // Rows of `table` gathered by index.
  Ref embed(Ref table, const std::vector<int>& ids);
  Ref concat_rows(const std::vector<Ref>& parts);
  Ref slice_rows(Ref a, int first, int count);
  Ref row_sum(Ref a);   // n x k -> n x 1
  Ref sum_all(Ref a);   // -> 1 x 1
  Ref mean_all(Ref a);  // -> 1 x 1
  // One entry per row: out(i,0) = a(i, ids[i]).
  Ref select_cols(Ref a, const std::vector<int>& ids);
  // Rows scaled to unit Euclidean norm.
  Ref l2_normalize_rows(Ref a);

  // Reverse pass from a scalar loss. Fills per-node gradients and returns
  // the gradient of every requires_grad leaf (zero matrix if unreached).
  std::unordered_map<int, Mat> backward(Ref loss);

  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& gradient(int id) const { return nodes_[id].grad; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    bool is_grad_leaf = false;
    std::function<void()> backprop;  // adds into parent grads
  };

  Ref push(Mat value, bool needs_grad, std::function<void()> backprop);
  void check_finite(const Mat& m, const char* op) const;

  std::vector<Node> nodes_;

  friend struct Ref;
};

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-12)
// for a deterministic scalar function of a parameter list.
double finite_diff_check(
    const std::function<double(const std::vector<Mat>&)>& f,
    const std::vector<Mat>& params, const std::vector<Mat>& analytic_grads,
    double step);

}  // namespace refgame::ad
