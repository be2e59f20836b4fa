#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "aspdc/blur_synth.hpp"
#include "aspdc/checkpoint.hpp"
#include "aspdc/config.hpp"
#include "aspdc/deblur_net.hpp"
#include "aspdc/gradcheck.hpp"
#include "aspdc/image.hpp"
#include "aspdc/metrics.hpp"
#include "aspdc/reblur_net.hpp"
#include "aspdc/trainer.hpp"

namespace fs = std::filesystem;
using namespace aspdc;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

struct ConfigFlags {
  std::string path;
  std::optional<int> steps;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<int> width;
  std::optional<int> modules;
  std::optional<int> ablation;
  std::optional<int> batch;
  std::optional<int> crop;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "key = value config file ([net], [train], [synth])");
    cmd->add_option("--steps", steps, "optimizer step budget (0: run schedule to its floor)");
    cmd->add_option("--lr", lr, "initial learning rate");
    cmd->add_option("--seed", seed, "training seed");
    cmd->add_option("--width", width, "deblur base width");
    cmd->add_option("--modules", modules, "number of ASPDC modules");
    cmd->add_option("--ablation", ablation, "ASPDC ablation topology 1..12");
    cmd->add_option("--batch", batch, "batch size");
    cmd->add_option("--crop", crop, "crop size (multiple of 8)");
  }

  AppConfig resolve(bool finetune = false) const {
    AppConfig cfg = path.empty() ? AppConfig::parse("") : AppConfig::read(path);
    if (steps) cfg.train.steps = *steps;
    if (lr) (finetune ? cfg.finetune_schedule.lr0 : cfg.train.schedule.lr0) = *lr;
    if (seed) cfg.train.seed = *seed;
    if (width) cfg.deblur.base_width = *width;
    if (modules) cfg.deblur.n_modules = *modules;
    if (ablation) cfg.deblur.aspdc = AspdcConfig::ablation_version(*ablation);
    if (batch) cfg.train.batch_size = *batch;
    if (crop) cfg.train.crop = *crop;
    return cfg;
  }
};

Image run_deblur(const DeblurNet<float>& net, const Image& input) {
  const Image padded = reflect_pad_to_multiple(input, 4);
  const Image out = from_tensor(net.infer(to_tensor(padded)));
  return crop(out, 0, 0, input.height, input.width);
}

DeblurNet<float> deblur_from_arg(const std::string& ckpt) {
  if (ckpt == "zeroinit") return DeblurNet<float>(DeblurNetConfig{}, 0);
  return load_deblur(Checkpoint::load(ckpt));
}

void print_log(const TrainLog& log) {
  std::cout << "steps " << log.step_losses.size() << ", epochs " << log.epochs.size() << ", halving period "
            << log.schedule.period << " epochs\n";
  if (!log.step_losses.empty()) {
    std::cout << "loss first " << log.step_losses.front() << " last " << log.step_losses.back() << "\n";
  }
  std::cout << "validation PSNR " << format_psnr(log.initial_psnr) << " -> " << format_psnr(log.final_psnr)
            << " dB, SSIM " << log.initial_ssim << " -> " << log.final_ssim << "\n";
}

fs::path output_path(const fs::path& out, const fs::path& input, std::size_t count) {
  if (count > 1 || fs::is_directory(out)) {
    fs::create_directories(out);
    return out / input.filename();
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deblurring with atrous spatial pyramid deformable convolutions and reblurring consistency"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic blurred/sharp corpus");
  std::string synth_out;
  std::string synth_config;
  CorpusConfig corpus;
  std::optional<std::uint64_t> s_seed;
  std::optional<int> s_count, s_size, s_frames;
  std::optional<double> s_gamma, s_noise, s_motion;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--config", synth_config, "config file ([synth] section)");
  synth->add_option("--seed", s_seed, "master seed");
  synth->add_option("--count", s_count, "number of pairs");
  synth->add_option("--size", s_size, "square image size");
  synth->add_option("--frames", s_frames, "frames averaged per exposure");
  synth->add_option("--gamma", s_gamma, "camera response gamma");
  synth->add_option("--noise", s_noise, "Gaussian noise std");
  synth->add_option("--max-motion", s_motion, "maximum displacement in pixels");

  // train-deblur / train-reblur
  auto* tdeblur = app.add_subcommand("train-deblur", "train the deblurring network");
  auto* treblur = app.add_subcommand("train-reblur", "train the reblurring network");
  std::string corpus_dir;
  std::string run_dir;
  ConfigFlags tflags;
  for (auto* cmd : {tdeblur, treblur}) {
    cmd->add_option("--corpus", corpus_dir, "corpus directory written by synth")->required();
    cmd->add_option("--run", run_dir, "run directory for metrics and checkpoints")->required();
    tflags.attach(cmd);
  }

  // finetune
  auto* finetune = app.add_subcommand("finetune", "fine-tune the deblurring network with the consistency loss");
  std::string ft_deblur, ft_reblur;
  std::optional<double> ft_lambda;
  bool ft_unfreeze = false;
  finetune->add_option("--corpus", corpus_dir, "corpus directory")->required();
  finetune->add_option("--run", run_dir, "run directory")->required();
  finetune->add_option("--deblur-ckpt", ft_deblur, "pretrained deblurring checkpoint")->required();
  finetune->add_option("--reblur-ckpt", ft_reblur, "pretrained reblurring checkpoint")->required();
  finetune->add_option("--lambda", ft_lambda, "weight of the reblurring term");
  finetune->add_flag("--unfreeze-reblur", ft_unfreeze, "also update the reblurring network");
  tflags.attach(finetune);

  // deblur
  auto* deblur = app.add_subcommand("deblur", "deblur PNG images");
  std::string ckpt;
  std::vector<std::string> inputs;
  std::string out;
  deblur->add_option("--ckpt", ckpt, "checkpoint file, or 'zeroinit' for an untrained net")->required();
  deblur->add_option("--in", inputs, "input PNG(s)")->required();
  deblur->add_option("--out", out, "output PNG (or directory for several inputs)")->required();

  // reblur
  auto* reblur = app.add_subcommand("reblur", "reblur a sharp image towards a blurred one");
  std::string rb_sharp, rb_blur;
  reblur->add_option("--ckpt", ckpt, "reblurring checkpoint")->required();
  reblur->add_option("--sharp", rb_sharp, "sharp(-like) PNG")->required();
  reblur->add_option("--blur", rb_blur, "blurred PNG")->required();
  reblur->add_option("--out", out, "output PNG")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM/difference statistics for image pairs");
  std::vector<std::string> results, references;
  std::string csv, diff_dir;
  eval->add_option("--result", results, "result PNG(s)")->required();
  eval->add_option("--reference", references, "reference PNG(s)")->required();
  eval->add_option("--csv", csv, "write the metric report here");
  eval->add_option("--diff-dir", diff_dir, "write |result - reference| maps here");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  GradcheckOptions gopts;
  gradcheck->add_option("--seeds", gopts.seeds, "seeds per check");
  gradcheck->add_option("--seed", gopts.base_seed, "master seed");

  // dump-attn
  auto* dump = app.add_subcommand("dump-attn", "write attention maps of the last ASPDC module");
  std::string dump_in;
  dump->add_option("--ckpt", ckpt, "deblurring checkpoint or 'zeroinit'")->required();
  dump->add_option("--in", dump_in, "input PNG")->required();
  dump->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      if (!synth_config.empty()) corpus = AppConfig::read(synth_config).synth;
      if (s_seed) corpus.seed = *s_seed;
      if (s_count) corpus.count = *s_count;
      if (s_size) corpus.size = *s_size;
      if (s_frames) corpus.frames = *s_frames;
      if (s_gamma) corpus.crf_gamma = *s_gamma;
      if (s_noise) corpus.noise_sigma = *s_noise;
      if (s_motion) corpus.max_motion = *s_motion;
      make_corpus(corpus, synth_out);
      std::cout << "wrote " << corpus.count << " pairs to " << synth_out << "\n";
      return 0;
    }

    if (tdeblur->parsed() || treblur->parsed()) {
      AppConfig cfg = tflags.resolve();
      cfg.train.run_dir = run_dir;
      fs::create_directories(run_dir);
      std::ofstream(fs::path(run_dir) / "config.txt") << cfg.to_text();
      const TrainData data = split_corpus(load_corpus(corpus_dir), cfg.validation_pairs);
      if (tdeblur->parsed()) {
        DeblurNet<float> net(cfg.deblur, cfg.train.seed);
        print_log(train_deblur(net, data, cfg.train).log);
      } else {
        ReblurNet<float> net(cfg.reblur, cfg.train.seed);
        const auto r = train_reblur(net, data, cfg.train);
        print_log(r.log);
        const auto train_set = std::span<const CorpusPair>(data.train);
        const Quality q = evaluate_reblur(net, train_set);
        double copy_mse = 0.0;
        for (const auto& p : data.train) {
          const double v = psnr(p.sharp, p.blurred);
          copy_mse += std::isinf(v) ? 0.0 : std::pow(10.0, -v / 10.0);
        }
        copy_mse /= data.train.size();
        std::cout << "reblur MSE " << q.mse << " vs copy-sharp MSE " << copy_mse << "\n";
        if (data.train.size() >= 2) std::cout << "collapse probe " << reblur_collapse_probe(net, train_set) << "\n";
      }
      std::cout << "checkpoint " << (fs::path(run_dir) / "final.ckpt").string() << "\n";
      return 0;
    }

    if (finetune->parsed()) {
      AppConfig cfg = tflags.resolve(true);
      if (ft_lambda) cfg.consistency.lambda = *ft_lambda;
      if (ft_unfreeze) cfg.consistency.freeze_reblur = false;
      cfg.train.schedule = cfg.finetune_schedule;
      cfg.train.run_dir = run_dir;
      fs::create_directories(run_dir);
      std::ofstream(fs::path(run_dir) / "config.txt") << cfg.to_text();
      const TrainData data = split_corpus(load_corpus(corpus_dir), cfg.validation_pairs);
      DeblurNet<float> dnet = load_deblur(Checkpoint::load(ft_deblur));
      ReblurNet<float> rnet = load_reblur(Checkpoint::load(ft_reblur));
      const double before = reblur_consistency(dnet, rnet, data.train);
      const auto r = finetune_consistency(dnet, rnet, data, cfg.train, cfg.consistency);
      print_log(r.log);
      std::cout << "reblur consistency " << before << " -> " << reblur_consistency(dnet, rnet, data.train) << "\n";
      return 0;
    }

    if (deblur->parsed()) {
      const auto net = deblur_from_arg(ckpt);
      for (const auto& in : inputs) {
        const fs::path dst = output_path(out, in, inputs.size());
        write_png(dst, run_deblur(net, read_png(in)));
        std::cout << in << " -> " << dst.string() << "\n";
      }
      return 0;
    }

    if (reblur->parsed()) {
      const auto net = load_reblur(Checkpoint::load(ckpt));
      const Image sharp = read_png(rb_sharp);
      const Image blurred = read_png(rb_blur);
      if (!sharp.same_size(blurred)) throw DimensionError("sharp and blurred inputs differ in size");
      const int multiple = 1 << net.config().levels;
      const Image s = reflect_pad_to_multiple(sharp, multiple);
      const Image b = reflect_pad_to_multiple(blurred, multiple);
      write_png(out, crop(from_tensor(net.infer(to_tensor(s), to_tensor(b))), 0, 0, sharp.height, sharp.width));
      return 0;
    }

    if (eval->parsed()) {
      if (results.size() != references.size()) throw ConfigError("--result and --reference counts differ");
      MetricReport report;
      report.rows.resize(results.size());
      if (!diff_dir.empty()) fs::create_directories(diff_dir);
      std::vector<std::thread> workers;
      std::vector<std::exception_ptr> errors(results.size());
      for (std::size_t i = 0; i < results.size(); ++i) {
        workers.emplace_back([&, i] {
          try {
            const Image a = read_png(results[i]);
            const Image b = read_png(references[i]);
            report.rows[i] = evaluate_pair(fs::path(results[i]).filename().string(), a, b);
            if (!diff_dir.empty()) {
              std::vector<float> diff(static_cast<std::size_t>(a.height) * a.width);
              for (std::size_t k = 0; k < diff.size(); ++k) {
                float m = 0.0f;
                for (int c = 0; c < 3; ++c) m += std::abs(a.pixels[k * 3 + c] - b.pixels[k * 3 + c]) / 3.0f;
                diff[k] = m;
              }
              write_png_gray(fs::path(diff_dir) / ("diff_" + fs::path(results[i]).filename().string()), diff,
                             a.height, a.width);
            }
          } catch (...) {
            errors[i] = std::current_exception();
          }
        });
      }
      for (auto& w : workers) w.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
      if (!csv.empty()) report.write_csv(csv);
      std::cout << report.to_csv();
      return 0;
    }

    if (gradcheck->parsed()) {
      const auto t0 = std::chrono::steady_clock::now();
      int failed = 0;
      const auto res = run_gradcheck_suite(gopts, [&](const GradcheckResult& r) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  max rel err " << r.max_error << " over "
                  << r.seeds << " seeds" << std::endl;
        if (!r.passed) ++failed;
      });
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << res.size() << " checks, " << failed << " failed, " << secs << " s\n";
      return failed ? kExitNumeric : 0;
    }

    if (dump->parsed()) {
      const auto net = deblur_from_arg(ckpt);
      const Image input = read_png(dump_in);
      const Image padded = reflect_pad_to_multiple(input, 4);
      NoGradGuard<float> guard;
      const auto fwd = net.forward(to_tensor(padded));
      const Tensor& a = fwd.attention.back();
      fs::create_directories(out);
      const int scale = padded.height / a.h();
      for (int i = 0; i < a.c(); ++i) {
        std::vector<float> plane(static_cast<std::size_t>(input.height) * input.width);
        for (int y = 0; y < input.height; ++y) {
          for (int x = 0; x < input.width; ++x) plane[y * input.width + x] = a.at(0, i, y / scale, x / scale);
        }
        const fs::path dst = fs::path(out) / ("attn_" + std::to_string(i + 1) + ".png");
        write_png_gray(dst, plane, input.height, input.width);
        std::cout << dst.string() << "\n";
      }
      return 0;
    }
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
