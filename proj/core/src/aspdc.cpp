#include "aspdc/aspdc.hpp"

#include "aspdc/ops.hpp"

namespace aspdc {

std::vector<AspdcConfig::Branch> AspdcConfig::branches() const {
  std::vector<Branch> out;
  auto make = [this](int module) {
    return Branch{module, branch_dilations[module - 1], module == 1};
  };
  if (duplicate) {
    if (branch_enabled[0]) out.push_back(make(1));
    for (int i = 0; i < duplicate->copies; ++i) out.push_back(make(duplicate->module));
    return out;
  }
  for (int m = 1; m <= 4; ++m) {
    if (branch_enabled[m - 1]) out.push_back(make(m));
  }
  return out;
}

void AspdcConfig::validate() const {
  for (int d : branch_dilations) {
    if (d < 1) throw ConfigError("ASPDC dilation rates must be >= 1");
  }
  if (duplicate && (duplicate->module < 1 || duplicate->module > 4 || duplicate->copies < 1)) {
    throw ConfigError("ASPDC duplicate mode needs module in 1..4 and copies >= 1");
  }
  if (branches().empty()) throw ConfigError("ASPDC config enables no branches");
}

AspdcConfig AspdcConfig::ablation_version(int version) {
  AspdcConfig cfg;
  auto only = [&cfg](bool m2, bool m3, bool m4) { cfg.branch_enabled = {true, m2, m3, m4}; };
  switch (version) {
    case 1: only(false, false, false); cfg.afim_enabled = false; break;
    case 2: only(true, false, false); break;
    case 3: only(false, true, false); break;
    case 4: only(false, false, true); break;
    case 5: only(true, true, false); break;
    case 6: only(true, false, true); break;
    case 7: only(false, true, true); break;
    case 8: cfg.duplicate = DuplicateMode{2, 3}; break;
    case 9: cfg.duplicate = DuplicateMode{3, 3}; break;
    case 10: cfg.duplicate = DuplicateMode{4, 3}; break;
    case 11: cfg.afim_enabled = false; break;
    case 12: break;
    default: throw ConfigError("ablation version must be in 1..12, got " + std::to_string(version));
  }
  return cfg;
}

template <typename T>
Afim<T>::Afim(int width, int branches, Rng& rng)
    : fuse(branches * width, width, 1, 1, 0, 1, rng), logits(width, branches, 1, 1, 0, 1, rng) {}

template <typename T>
void Afim<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  fuse.collect(out, prefix + ".fuse");
  logits.collect(out, prefix + ".logits");
}

template <typename T>
BasicTensor<T> afim(const Afim<T>& params, std::span<const BasicTensor<T>> branch_outputs) {
  if (branch_outputs.empty()) throw ContractError("afim: no branch outputs");
  for (const auto& f : branch_outputs) {
    if (f.shape() != branch_outputs[0].shape()) {
      throw DimensionError("afim: branch outputs differ in shape: " + branch_outputs[0].shape().str() + " vs " +
                           f.shape().str());
    }
  }
  const auto stacked = concat_channels(branch_outputs);
  return softmax_channels(params.logits(relu(params.fuse(stacked))));
}

template <typename T>
AspdcModule<T>::AspdcModule(int width, const AspdcConfig& config, Rng& rng) : config_(config), width_(width) {
  config_.validate();
  const auto specs = config_.branches();
  for (const auto& b : specs) {
    branches.push_back(DeformBranchParams<T>::create(width, b.dilation, b.zero_offset, rng));
  }
  if (config_.afim_enabled && specs.size() > 1) fusion.emplace(width, static_cast<int>(specs.size()), rng);
}

template <typename T>
AspdcOutput<T> AspdcModule<T>::forward(const BasicTensor<T>& input) const {
  if (input.c() != width_) {
    throw DimensionError("aspdc_forward: input " + input.shape().str() + " does not have working width " +
                         std::to_string(width_));
  }
  AspdcOutput<T> out;
  for (const auto& b : branches) out.branch_outputs.push_back(deform_branch_forward(input, b));
  const int count = branch_count();
  const Shape& s = input.shape();

  if (count == 1) {
    out.features = out.branch_outputs[0];
    out.attention = BasicTensor<T>(Shape{s.n, 1, s.h, s.w}, T(1));
    return out;
  }
  if (!fusion) {
    BasicTensor<T> acc = out.branch_outputs[0];
    for (int i = 1; i < count; ++i) acc = add(acc, out.branch_outputs[i]);
    out.features = scale(acc, 1.0 / count);
    out.attention = BasicTensor<T>(Shape{s.n, count, s.h, s.w}, static_cast<T>(1.0 / count));
    return out;
  }
  out.attention = afim(*fusion, std::span<const BasicTensor<T>>(out.branch_outputs));
  BasicTensor<T> acc;
  for (int i = 0; i < count; ++i) {
    auto weighted = mul_channel_broadcast(slice_channels(out.attention, i, 1), out.branch_outputs[i]);
    acc = acc.defined() ? add(acc, weighted) : weighted;
  }
  out.features = acc;
  return out;
}

template <typename T>
void AspdcModule<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < branches.size(); ++i) branches[i].collect(out, prefix + ".b" + std::to_string(i));
  if (fusion) fusion->collect(out, prefix + ".afim");
}

template <typename T>
AspdcStack<T>::AspdcStack(int width, int n_modules, const AspdcConfig& config, Rng& rng) {
  if (n_modules < 1) throw ConfigError("ASPDC stack needs at least one module");
  for (int i = 0; i < n_modules; ++i) modules.emplace_back(width, config, rng);
  reduce = Conv2d<T>(n_modules * width, width, 1, 1, 0, 1, rng);
}

template <typename T>
typename AspdcStack<T>::Output AspdcStack<T>::forward(const BasicTensor<T>& input) const {
  Output out;
  std::vector<BasicTensor<T>> features;
  BasicTensor<T> x = input;
  for (const auto& m : modules) {
    auto r = m.forward(x);
    x = r.features;
    features.push_back(r.features);
    out.attention.push_back(r.attention);
  }
  out.features = reduce(concat_channels(std::span<const BasicTensor<T>>(features)));
  return out;
}

template <typename T>
void AspdcStack<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < modules.size(); ++i) modules[i].collect(out, prefix + ".m" + std::to_string(i));
  reduce.collect(out, prefix + ".reduce");
}

#define ASPDC_INSTANTIATE_ASPDC(T)                                                         \
  template struct Afim<T>;                                                                 \
  template BasicTensor<T> afim(const Afim<T>&, std::span<const BasicTensor<T>>);          \
  template class AspdcModule<T>;                                                           \
  template class AspdcStack<T>;

ASPDC_INSTANTIATE_ASPDC(float)
ASPDC_INSTANTIATE_ASPDC(double)

#undef ASPDC_INSTANTIATE_ASPDC

}  // namespace aspdc
