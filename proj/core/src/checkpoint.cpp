#include "aspdc/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace aspdc {

namespace {

constexpr char kMagic[7] = {'A', 'S', 'P', 'D', 'C', '1', '\0'};
constexpr double kKindDeblur = 1.0;
constexpr double kKindReblur = 2.0;

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    std::reverse(b, b + sizeof(U));
    std::memcpy(&v, b, sizeof(U));
  }
  return v;
}

template <typename U>
void write_le(std::ostream& os, U v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_le(std::istream& is, const std::filesystem::path& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw IoError("truncated checkpoint " + path.string());
  return to_little(v);
}

}  // namespace

void Checkpoint::put(const std::string& name, Shape shape, std::vector<float> values) {
  if (values.size() != shape.numel()) throw ContractError("checkpoint entry '" + name + "': size/shape mismatch");
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
  if (it != entries_.end()) {
    it->shape = shape;
    it->values = std::move(values);
  } else {
    entries_.push_back({name, shape, std::move(values)});
  }
}

void Checkpoint::put(const std::string& name, const Tensor& tensor) {
  put(name, tensor.shape(), std::vector<float>(tensor.data().begin(), tensor.data().end()));
}

void Checkpoint::put_scalar(const std::string& name, double value) {
  put(name, Shape{1, 1, 1, 1}, {static_cast<float>(value)});
}

bool Checkpoint::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

const Checkpoint::Entry& Checkpoint::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw IoError("checkpoint has no entry '" + name + "'");
}

double Checkpoint::scalar(const std::string& name) const {
  const auto& e = get(name);
  if (e.values.size() != 1) throw IoError("checkpoint entry '" + name + "' is not a scalar");
  return e.values[0];
}

double Checkpoint::scalar_or(const std::string& name, double fallback) const {
  return contains(name) ? scalar(name) : fallback;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
  std::uint64_t offset = 0;
  for (const auto& e : entries_) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    for (int d : {e.shape.n, e.shape.c, e.shape.h, e.shape.w}) write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    write_le<std::uint64_t>(os, offset);
    offset += e.values.size() * sizeof(float);
  }
  for (const auto& e : entries_) {
    for (float v : e.values) write_le<float>(os, v);
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + " is not a checkpoint file");
  }
  const auto count = read_le<std::uint32_t>(is, path);
  struct Header {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Header> headers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = read_le<std::uint32_t>(is, path);
    if (len > 4096) throw IoError("corrupt checkpoint " + path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("truncated checkpoint " + path.string());
    Shape s;
    s.n = static_cast<int>(read_le<std::uint32_t>(is, path));
    s.c = static_cast<int>(read_le<std::uint32_t>(is, path));
    s.h = static_cast<int>(read_le<std::uint32_t>(is, path));
    s.w = static_cast<int>(read_le<std::uint32_t>(is, path));
    headers.push_back({std::move(name), s, read_le<std::uint64_t>(is, path)});
  }
  const auto base = is.tellg();
  Checkpoint ckpt;
  for (const auto& h : headers) {
    is.seekg(base + static_cast<std::streamoff>(h.offset));
    std::vector<float> values(h.shape.numel());
    for (auto& v : values) v = read_le<float>(is, path);
    ckpt.entries_.push_back({h.name, h.shape, std::move(values)});
  }
  return ckpt;
}

void store_parameters(Checkpoint& ckpt, const ParamList<float>& params) {
  for (const auto& p : params) ckpt.put("param/" + p.name, p.tensor);
}

void load_parameters(const Checkpoint& ckpt, const ParamList<float>& params) {
  for (const auto& p : params) {
    const std::string key = "param/" + p.name;
    if (!ckpt.contains(key)) throw DimensionError("incompatible checkpoint: missing parameter " + p.name);
    const auto& e = ckpt.get(key);
    if (e.shape != p.tensor.shape()) {
      throw DimensionError("incompatible checkpoint: " + p.name + " has shape " + e.shape.str() + ", network expects " +
                           p.tensor.shape().str());
    }
    auto dst = Tensor(p.tensor).data();
    std::copy(e.values.begin(), e.values.end(), dst.begin());
  }
}

void store_optimizer(Checkpoint& ckpt, const Adam<float>& adam) {
  ckpt.put_scalar("opt/step", static_cast<double>(adam.step_count()));
  const auto& params = adam.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.put("opt/" + params[i].name + "/m", params[i].tensor.shape(), adam.first_moment(i));
    ckpt.put("opt/" + params[i].name + "/v", params[i].tensor.shape(), adam.second_moment(i));
  }
}

void load_optimizer(const Checkpoint& ckpt, Adam<float>& adam) {
  adam.set_step_count(static_cast<long>(ckpt.scalar("opt/step")));
  const auto& params = adam.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (const char* which : {"m", "v"}) {
      const auto& e = ckpt.get("opt/" + params[i].name + "/" + which);
      if (e.shape != params[i].tensor.shape()) {
        throw DimensionError("incompatible checkpoint: optimizer state for " + params[i].name);
      }
      (which[0] == 'm' ? adam.first_moment(i) : adam.second_moment(i)) = e.values;
    }
  }
}

Checkpoint deblur_checkpoint(const DeblurNet<float>& net) {
  Checkpoint ckpt;
  const auto& cfg = net.config();
  ckpt.put_scalar("meta/kind", kKindDeblur);
  ckpt.put_scalar("meta/base_width", cfg.base_width);
  ckpt.put_scalar("meta/n_modules", cfg.n_modules);
  for (int i = 0; i < 4; ++i) {
    ckpt.put_scalar("meta/branch" + std::to_string(i + 1), cfg.aspdc.branch_enabled[i] ? 1.0 : 0.0);
    ckpt.put_scalar("meta/dilation" + std::to_string(i + 1), cfg.aspdc.branch_dilations[i]);
  }
  ckpt.put_scalar("meta/afim", cfg.aspdc.afim_enabled ? 1.0 : 0.0);
  ckpt.put_scalar("meta/dup_module", cfg.aspdc.duplicate ? cfg.aspdc.duplicate->module : 0);
  ckpt.put_scalar("meta/dup_copies", cfg.aspdc.duplicate ? cfg.aspdc.duplicate->copies : 0);
  store_parameters(ckpt, net.parameters());
  return ckpt;
}

DeblurNetConfig deblur_config(const Checkpoint& ckpt) {
  if (ckpt.scalar_or("meta/kind", 0.0) != kKindDeblur) throw IoError("checkpoint does not hold a deblurring network");
  DeblurNetConfig cfg;
  cfg.base_width = static_cast<int>(ckpt.scalar("meta/base_width"));
  cfg.n_modules = static_cast<int>(ckpt.scalar("meta/n_modules"));
  for (int i = 0; i < 4; ++i) {
    cfg.aspdc.branch_enabled[i] = ckpt.scalar("meta/branch" + std::to_string(i + 1)) != 0.0;
    cfg.aspdc.branch_dilations[i] = static_cast<int>(ckpt.scalar("meta/dilation" + std::to_string(i + 1)));
  }
  cfg.aspdc.afim_enabled = ckpt.scalar("meta/afim") != 0.0;
  const int dup = static_cast<int>(ckpt.scalar("meta/dup_module"));
  if (dup > 0) cfg.aspdc.duplicate = DuplicateMode{dup, static_cast<int>(ckpt.scalar("meta/dup_copies"))};
  return cfg;
}

DeblurNet<float> load_deblur(const Checkpoint& ckpt) {
  DeblurNet<float> net(deblur_config(ckpt));
  load_parameters(ckpt, net.parameters());
  return net;
}

Checkpoint reblur_checkpoint(const ReblurNet<float>& net) {
  Checkpoint ckpt;
  ckpt.put_scalar("meta/kind", kKindReblur);
  ckpt.put_scalar("meta/base_width", net.config().base_width);
  ckpt.put_scalar("meta/levels", net.config().levels);
  store_parameters(ckpt, net.parameters());
  return ckpt;
}

ReblurNetConfig reblur_config(const Checkpoint& ckpt) {
  if (ckpt.scalar_or("meta/kind", 0.0) != kKindReblur) throw IoError("checkpoint does not hold a reblurring network");
  ReblurNetConfig cfg;
  cfg.base_width = static_cast<int>(ckpt.scalar("meta/base_width"));
  cfg.levels = static_cast<int>(ckpt.scalar("meta/levels"));
  return cfg;
}

ReblurNet<float> load_reblur(const Checkpoint& ckpt) {
  ReblurNet<float> net(reblur_config(ckpt));
  load_parameters(ckpt, net.parameters());
  return net;
}

}  // namespace aspdc
