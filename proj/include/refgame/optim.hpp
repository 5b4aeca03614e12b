#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>

namespace refgame {

// Bias-corrected Adam over a named parameter set. Moment buffers are created
// lazily with the shape of their parameter.
class Adam {
 public:
  explicit Adam(double learning_rate = 3e-4, double beta1 = 0.9,
                double beta2 = 0.95, double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  // Applies one update to every (name, param, grad) triple passed via step()
  // calls bracketed by begin_step()/end_step(); the step counter is shared.
  void begin_step() { ++t_; }
  void step(const std::string& name, Eigen::MatrixXd& param,
            const Eigen::MatrixXd& grad);

  long step_count() const { return t_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  std::map<std::string, Eigen::MatrixXd>& moments1() { return m_; }
  std::map<std::string, Eigen::MatrixXd>& moments2() { return v_; }
  void set_step_count(long t) { t_ = t; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Eigen::MatrixXd> m_, v_;
};

}  // namespace refgame
