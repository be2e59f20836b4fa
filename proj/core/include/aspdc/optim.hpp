#pragma once

#include <cstdint>
#include <vector>

#include "aspdc/layers.hpp"

namespace aspdc {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-18;
};

// Adam with bias correction. Parameters whose tensor does not require grad
// (or has no gradient yet) are skipped; their moments stay untouched.
template <typename T>
class Adam {
 public:
  explicit Adam(ParamList<T> params, AdamHyper hyper = {});

  void step(double lr);
  void zero_grad();

  long step_count() const { return step_; }
  void set_step_count(long step) { step_ = step; }
  const AdamHyper& hyper() const { return hyper_; }
  const ParamList<T>& params() const { return params_; }

  std::vector<T>& first_moment(std::size_t i) { return m_[i]; }
  std::vector<T>& second_moment(std::size_t i) { return v_[i]; }
  const std::vector<T>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  ParamList<T> params_;
  AdamHyper hyper_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  long step_ = 0;
};

// Step decay: lr = lr0 * 0.5^floor(epoch / period), finished once below floor.
struct Schedule {
  double lr0 = 1e-4;
  int period = 1000;
  double floor = 1e-6;

  double lr(int epoch) const;
  bool finished(int epoch) const { return lr(epoch) < floor; }
  // Number of halvings before the rate drops below the floor.
  int levels() const;
  // First epoch at which training stops.
  int total_epochs() const { return levels() * period; }

  static Schedule pretrain() { return {1e-4, 1000, 1e-6}; }
  static Schedule finetune() { return {1e-5, 200, 1e-6}; }
  // Same lr0 and floor, period shrunk so all levels fit in `epochs` epochs.
  Schedule fitted_to(int epochs) const;
};

}  // namespace aspdc
