#include "refgame/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace refgame {

void Adam::step(const std::string& name, Eigen::MatrixXd& param,
                const Eigen::MatrixXd& grad) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
    throw std::invalid_argument("Adam::step: shape mismatch for " + name);
  }
  auto mit = m_.find(name);
  if (mit == m_.end()) {
    m_[name] = Eigen::MatrixXd::Zero(param.rows(), param.cols());
    v_[name] = Eigen::MatrixXd::Zero(param.rows(), param.cols());
  }
  Eigen::MatrixXd& m = m_[name];
  Eigen::MatrixXd& v = v_[name];
  m = beta1_ * m + (1.0 - beta1_) * grad;
  v = (beta2_ * v.array() + (1.0 - beta2_) * grad.array().square()).matrix();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
}

}  // namespace refgame
