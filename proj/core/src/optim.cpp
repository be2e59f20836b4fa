#include "aspdc/optim.hpp"

#include <algorithm>
#include <cmath>

#include "aspdc/errors.hpp"

namespace aspdc {

template <typename T>
Adam<T>::Adam(ParamList<T> params, AdamHyper hyper) : params_(std::move(params)), hyper_(hyper) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), T(0));
    v_.emplace_back(p.tensor.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  ++step_;
  const double b1 = hyper_.beta1;
  const double b2 = hyper_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_[i].tensor;
    if (!t.requires_grad() || !t.has_grad()) continue;
    auto g = t.grad();
    auto x = t.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      x[j] = static_cast<T>(x[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + hyper_.eps));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double Schedule::lr(int epoch) const {
  return lr0 * std::pow(0.5, static_cast<double>(std::max(epoch, 0) / std::max(period, 1)));
}

int Schedule::levels() const {
  if (!(floor > 0.0)) throw ConfigError("schedule floor must be positive");
  int k = 0;
  while (lr0 * std::pow(0.5, k) >= floor) ++k;
  return k;
}

Schedule Schedule::fitted_to(int epochs) const {
  Schedule s = *this;
  const int k = std::max(levels(), 1);
  s.period = std::max(1, (epochs + k - 1) / k);
  return s;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace aspdc
