#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aspdc/deblur_net.hpp"
#include "aspdc/optim.hpp"
#include "aspdc/reblur_net.hpp"

namespace aspdc {

// Named float32 tensors in a little-endian binary container:
//   "ASPDC1\0" | u32 count | count x (u32 name_len, name, 4 x u32 dims, u64 offset) | blobs
// Offsets are relative to the start of the blob section. Scalars (step
// counts, config values) are stored as 1-element tensors.
class Checkpoint {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> values;
  };

  void put(const std::string& name, Shape shape, std::vector<float> values);
  void put(const std::string& name, const Tensor& tensor);
  void put_scalar(const std::string& name, double value);

  bool contains(const std::string& name) const;
  // Throws IoError when the entry is missing.
  const Entry& get(const std::string& name) const;
  double scalar(const std::string& name) const;
  double scalar_or(const std::string& name, double fallback) const;
  const std::vector<Entry>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<Entry> entries_;
};

// Parameter tensors under "param/<name>".
void store_parameters(Checkpoint& ckpt, const ParamList<float>& params);
// Copies values into the existing tensors. Missing entries or shape
// mismatches throw DimensionError ("incompatible checkpoint").
void load_parameters(const Checkpoint& ckpt, const ParamList<float>& params);

// Moments under "opt/<name>/m" and "opt/<name>/v", step under "opt/step".
void store_optimizer(Checkpoint& ckpt, const Adam<float>& adam);
void load_optimizer(const Checkpoint& ckpt, Adam<float>& adam);

Checkpoint deblur_checkpoint(const DeblurNet<float>& net);
DeblurNetConfig deblur_config(const Checkpoint& ckpt);
DeblurNet<float> load_deblur(const Checkpoint& ckpt);

Checkpoint reblur_checkpoint(const ReblurNet<float>& net);
ReblurNetConfig reblur_config(const Checkpoint& ckpt);
ReblurNet<float> load_reblur(const Checkpoint& ckpt);

}  // namespace aspdc
