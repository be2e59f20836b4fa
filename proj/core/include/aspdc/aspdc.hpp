#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aspdc/deform.hpp"
#include "aspdc/layers.hpp"

namespace aspdc {

// Replicate one deformable module `copies` times (independent weights).
// Module numbers are 1-based: module 1 is the zero-offset branch.
struct DuplicateMode {
  int module = 3;
  int copies = 3;
};

struct AspdcConfig {
  std::array<bool, 4> branch_enabled{true, true, true, true};
  std::array<int, 4> branch_dilations{1, 1, 2, 4};
  std::optional<DuplicateMode> duplicate;
  bool afim_enabled = true;

  struct Branch {
    int module = 1;  // 1..4
    int dilation = 1;
    bool zero_offset = false;
  };

  // Resolved branch list in construction order. Module 1 always runs with
  // zero offsets. With duplicate set, the list is module 1 (if enabled)
  // followed by `copies` instances of the duplicated module.
  std::vector<Branch> branches() const;
  void validate() const;

  // The ablation topologies (1)..(12) of the ASPDC study: module 1 always on,
  // subsets of modules 2-4, x3 duplicates for 8-10, AFIM off for 1 and 11.
  static AspdcConfig ablation_version(int version);
};

// Attention feature integration: concat -> 1x1 conv -> ReLU -> 1x1 conv to B
// channels -> channel softmax. The result is (n, B, h, w) with per-pixel
// channel sums of one.
template <typename T>
struct Afim {
  Afim() = default;
  Afim(int width, int branches, Rng& rng);

  Conv2d<T> fuse;
  Conv2d<T> logits;

  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
BasicTensor<T> afim(const Afim<T>& params, std::span<const BasicTensor<T>> branch_outputs);

template <typename T>
struct AspdcOutput {
  BasicTensor<T> features;
  BasicTensor<T> attention;  // (n, B, h, w)
  std::vector<BasicTensor<T>> branch_outputs;
};

template <typename T>
class AspdcModule {
 public:
  AspdcModule(int width, const AspdcConfig& config, Rng& rng);

  AspdcOutput<T> forward(const BasicTensor<T>& input) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;

  const AspdcConfig& config() const { return config_; }
  int width() const { return width_; }
  int branch_count() const { return static_cast<int>(branches.size()); }

  std::vector<DeformBranchParams<T>> branches;
  // Present when AFIM is enabled and there is more than one branch.
  std::optional<Afim<T>> fusion;

 private:
  AspdcConfig config_;
  int width_;
};

// f_o = sum_i a_i * f_i, or the plain branch mean when AFIM is disabled.
template <typename T>
AspdcOutput<T> aspdc_forward(const BasicTensor<T>& input, const AspdcModule<T>& module) {
  return module.forward(input);
}

// Sequential ASPDC modules whose outputs are channel-concatenated and
// reduced back to the working width by a 1x1 conv.
template <typename T>
class AspdcStack {
 public:
  AspdcStack() = default;
  AspdcStack(int width, int n_modules, const AspdcConfig& config, Rng& rng);

  struct Output {
    BasicTensor<T> features;
    std::vector<BasicTensor<T>> attention;  // one per module
  };

  Output forward(const BasicTensor<T>& input) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;

  std::vector<AspdcModule<T>> modules;
  Conv2d<T> reduce;
};

template <typename T>
BasicTensor<T> aspdc_stack(const BasicTensor<T>& input, const AspdcStack<T>& stack) {
  return stack.forward(input).features;
}

}  // namespace aspdc
