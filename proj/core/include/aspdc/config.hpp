#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "aspdc/blur_synth.hpp"
#include "aspdc/deblur_net.hpp"
#include "aspdc/reblur_net.hpp"
#include "aspdc/trainer.hpp"

namespace aspdc {

// Line-oriented "key = value" text. "[name]" opens a section, '#' starts a
// comment line. Keys before any section belong to section "".
struct KeyValueEntry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
};

class KeyValueDocument {
 public:
  static KeyValueDocument parse(std::string_view text);
  static KeyValueDocument read(const std::filesystem::path& path);

  const std::vector<KeyValueEntry>& entries() const { return entries_; }

 private:
  std::vector<KeyValueEntry> entries_;
};

// Experiment configuration. Sections: [net], [train], [synth]. Every key has
// a default; unknown sections or keys throw ConfigError.
struct AppConfig {
  DeblurNetConfig deblur;
  ReblurNetConfig reblur;
  TrainConfig train;
  Schedule finetune_schedule = Schedule::finetune();
  ConsistencyConfig consistency;
  CorpusConfig synth;
  int validation_pairs = 0;

  static AppConfig parse(std::string_view text);
  static AppConfig read(const std::filesystem::path& path);
  std::string to_text() const;
};

}  // namespace aspdc
