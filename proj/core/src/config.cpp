#include "aspdc/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace aspdc {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const KeyValueEntry& e, const std::string& what) {
  throw ConfigError("line " + std::to_string(e.line) + ": " + e.section + "." + e.key + " expects " + what + ", got '" +
                    e.value + "'");
}

long long to_int(const KeyValueEntry& e) {
  long long v = 0;
  const auto* end = e.value.data() + e.value.size();
  const auto r = std::from_chars(e.value.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) bad_value(e, "an integer");
  return v;
}

double to_double(const KeyValueEntry& e) {
  try {
    std::size_t used = 0;
    const double v = std::stod(e.value, &used);
    if (used != e.value.size()) bad_value(e, "a number");
    return v;
  } catch (const std::logic_error&) {
    bad_value(e, "a number");
  }
}

bool to_bool(const KeyValueEntry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  bad_value(e, "true/false");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

KeyValueDocument KeyValueDocument::parse(std::string_view text) {
  KeyValueDocument doc;
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    KeyValueEntry e{section, trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)),
                    line_no};
    if (e.key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    doc.entries_.push_back(std::move(e));
  }
  return doc;
}

KeyValueDocument KeyValueDocument::read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

AppConfig AppConfig::parse(std::string_view text) {
  AppConfig cfg;
  cfg.train.steps = 2000;
  using Setter = std::function<void(const KeyValueEntry&)>;
  std::map<std::string, Setter> keys;
  auto& n = cfg.deblur;
  keys["net.base_width"] = [&](const auto& e) { n.base_width = static_cast<int>(to_int(e)); };
  keys["net.modules"] = [&](const auto& e) { n.n_modules = static_cast<int>(to_int(e)); };
  keys["net.branches"] = [&](const auto& e) {
    if (e.value.size() != 4 || e.value.find_first_not_of("01") != std::string::npos) bad_value(e, "four 0/1 flags");
    for (int i = 0; i < 4; ++i) n.aspdc.branch_enabled[i] = e.value[i] == '1';
  };
  keys["net.dilations"] = [&](const auto& e) {
    std::stringstream ss(e.value);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, ',')) {
      if (i >= 4) bad_value(e, "four comma-separated rates");
      KeyValueEntry sub = e;
      sub.value = trim(item);
      n.aspdc.branch_dilations[i++] = static_cast<int>(to_int(sub));
    }
    if (i != 4) bad_value(e, "four comma-separated rates");
  };
  keys["net.duplicate"] = [&](const auto& e) {
    if (e.value == "none") {
      n.aspdc.duplicate.reset();
      return;
    }
    const auto x = e.value.find('x');
    if (x == std::string::npos) bad_value(e, "none or <module>x<copies>");
    KeyValueEntry module = e;
    KeyValueEntry copies = e;
    module.value = e.value.substr(0, x);
    copies.value = e.value.substr(x + 1);
    n.aspdc.duplicate = DuplicateMode{static_cast<int>(to_int(module)), static_cast<int>(to_int(copies))};
  };
  keys["net.afim"] = [&](const auto& e) { n.aspdc.afim_enabled = to_bool(e); };
  keys["net.ablation"] = [&](const auto& e) { n.aspdc = AspdcConfig::ablation_version(static_cast<int>(to_int(e))); };
  keys["net.reblur_width"] = [&](const auto& e) { cfg.reblur.base_width = static_cast<int>(to_int(e)); };
  keys["net.reblur_levels"] = [&](const auto& e) { cfg.reblur.levels = static_cast<int>(to_int(e)); };

  auto& t = cfg.train;
  keys["train.steps"] = [&](const auto& e) { t.steps = static_cast<int>(to_int(e)); };
  keys["train.batch_size"] = [&](const auto& e) { t.batch_size = static_cast<int>(to_int(e)); };
  keys["train.crop"] = [&](const auto& e) { t.crop = static_cast<int>(to_int(e)); };
  keys["train.lr"] = [&](const auto& e) { t.schedule.lr0 = to_double(e); };
  keys["train.halving_period"] = [&](const auto& e) { t.schedule.period = static_cast<int>(to_int(e)); };
  keys["train.lr_floor"] = [&](const auto& e) {
    t.schedule.floor = to_double(e);
    cfg.finetune_schedule.floor = t.schedule.floor;
  };
  keys["train.fit_schedule"] = [&](const auto& e) { t.fit_schedule = to_bool(e); };
  keys["train.finetune_lr"] = [&](const auto& e) { cfg.finetune_schedule.lr0 = to_double(e); };
  keys["train.finetune_halving_period"] = [&](const auto& e) {
    cfg.finetune_schedule.period = static_cast<int>(to_int(e));
  };
  keys["train.seed"] = [&](const auto& e) { t.seed = static_cast<std::uint64_t>(to_int(e)); };
  keys["train.eval_every"] = [&](const auto& e) { t.eval_every = static_cast<int>(to_int(e)); };
  keys["train.checkpoint_every"] = [&](const auto& e) { t.checkpoint_every = static_cast<int>(to_int(e)); };
  keys["train.lambda"] = [&](const auto& e) { cfg.consistency.lambda = to_double(e); };
  keys["train.freeze_reblur"] = [&](const auto& e) { cfg.consistency.freeze_reblur = to_bool(e); };
  keys["train.validation_pairs"] = [&](const auto& e) { cfg.validation_pairs = static_cast<int>(to_int(e)); };

  auto& s = cfg.synth;
  keys["synth.seed"] = [&](const auto& e) { s.seed = static_cast<std::uint64_t>(to_int(e)); };
  keys["synth.count"] = [&](const auto& e) { s.count = static_cast<int>(to_int(e)); };
  keys["synth.size"] = [&](const auto& e) { s.size = static_cast<int>(to_int(e)); };
  keys["synth.frames"] = [&](const auto& e) { s.frames = static_cast<int>(to_int(e)); };
  keys["synth.gamma"] = [&](const auto& e) { s.crf_gamma = to_double(e); };
  keys["synth.noise_sigma"] = [&](const auto& e) { s.noise_sigma = to_double(e); };
  keys["synth.max_motion"] = [&](const auto& e) { s.max_motion = to_double(e); };

  const auto doc = KeyValueDocument::parse(text);
  for (const auto& e : doc.entries()) {
    if (e.section != "net" && e.section != "train" && e.section != "synth") {
      throw ConfigError("line " + std::to_string(e.line) + ": unknown section '" + e.section + "'");
    }
    const auto it = keys.find(e.section + "." + e.key);
    if (it == keys.end()) {
      throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key + "' in [" + e.section + "]");
    }
    it->second(e);
  }
  n.aspdc.validate();
  if (n.base_width < 1 || n.n_modules < 1) throw ConfigError("net.base_width and net.modules must be positive");
  if (cfg.reblur.base_width < 1 || cfg.reblur.levels < 1) throw ConfigError("reblur width and levels must be positive");
  if (cfg.consistency.lambda <= 0.0) throw ConfigError("train.lambda must be > 0");
  return cfg;
}

AppConfig AppConfig::read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string AppConfig::to_text() const {
  std::ostringstream os;
  std::string branches;
  for (bool b : deblur.aspdc.branch_enabled) branches += b ? '1' : '0';
  const auto& d = deblur.aspdc.branch_dilations;
  os << "[net]\n";
  os << "base_width = " << deblur.base_width << "\n";
  os << "modules = " << deblur.n_modules << "\n";
  os << "branches = " << branches << "\n";
  os << "dilations = " << d[0] << "," << d[1] << "," << d[2] << "," << d[3] << "\n";
  os << "duplicate = ";
  if (deblur.aspdc.duplicate) os << deblur.aspdc.duplicate->module << "x" << deblur.aspdc.duplicate->copies << "\n";
  else os << "none\n";
  os << "afim = " << (deblur.aspdc.afim_enabled ? "true" : "false") << "\n";
  os << "reblur_width = " << reblur.base_width << "\n";
  os << "reblur_levels = " << reblur.levels << "\n";
  os << "\n[train]\n";
  os << "steps = " << train.steps << "\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "crop = " << train.crop << "\n";
  os << "lr = " << fmt(train.schedule.lr0) << "\n";
  os << "halving_period = " << train.schedule.period << "\n";
  os << "lr_floor = " << fmt(train.schedule.floor) << "\n";
  os << "fit_schedule = " << (train.fit_schedule ? "true" : "false") << "\n";
  os << "finetune_lr = " << fmt(finetune_schedule.lr0) << "\n";
  os << "finetune_halving_period = " << finetune_schedule.period << "\n";
  os << "seed = " << train.seed << "\n";
  os << "eval_every = " << train.eval_every << "\n";
  os << "checkpoint_every = " << train.checkpoint_every << "\n";
  os << "lambda = " << fmt(consistency.lambda) << "\n";
  os << "freeze_reblur = " << (consistency.freeze_reblur ? "true" : "false") << "\n";
  os << "validation_pairs = " << validation_pairs << "\n";
  os << "\n[synth]\n";
  os << "seed = " << synth.seed << "\n";
  os << "count = " << synth.count << "\n";
  os << "size = " << synth.size << "\n";
  os << "frames = " << synth.frames << "\n";
  os << "gamma = " << fmt(synth.crf_gamma) << "\n";
  os << "noise_sigma = " << fmt(synth.noise_sigma) << "\n";
  os << "max_motion = " << fmt(synth.max_motion) << "\n";
  return os.str();
}

}  // namespace aspdc
