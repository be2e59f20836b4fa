#include "aspdc/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "aspdc/metrics.hpp"

namespace aspdc {

namespace {

Image pad_crop_back(const Image& src, int multiple, const std::function<Image(const Image&)>& fn) {
  const Image padded = reflect_pad_to_multiple(src, multiple);
  const Image out = fn(padded);
  return crop(out, 0, 0, src.height, src.width);
}

std::span<const CorpusPair> eval_set(const TrainData& data) {
  return data.validation.empty() ? std::span<const CorpusPair>(data.train)
                                 : std::span<const CorpusPair>(data.validation);
}

void check_data(const TrainData& data, const TrainConfig& cfg) {
  if (data.train.empty()) throw ConfigError("training corpus is empty");
  if (cfg.crop <= 0 || cfg.crop % 8 != 0) throw ConfigError("crop size must be a positive multiple of 8");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (cfg.steps < 0) throw ConfigError("step budget must be >= 0");
  for (const auto& p : data.train) {
    if (!p.blurred.same_size(p.sharp)) throw DimensionError("pair " + p.name + ": blurred/sharp sizes differ");
    if (p.blurred.height < cfg.crop || p.blurred.width < cfg.crop) {
      throw ConfigError("pair " + p.name + " is smaller than the crop size");
    }
  }
}

struct Batch {
  Tensor blurred;
  Tensor sharp;
};

struct StepOutput {
  Tensor loss;
  std::vector<Tensor> attention;
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

// Shared epoch/step loop: shuffled minibatches of random crops, Adam on the
// given optimizer, per-epoch logging, checkpoints and CSV in run_dir.
class Loop {
 public:
  Loop(const TrainData& data, const TrainConfig& cfg, std::string kind)
      : data_(data), cfg_(cfg), kind_(std::move(kind)), rng_(cfg.seed) {
    check_data(data, cfg);
    steps_per_epoch_ = (static_cast<int>(data.train.size()) + cfg.batch_size - 1) / cfg.batch_size;
    schedule_ = cfg.schedule;
    if (cfg.steps > 0 && cfg.fit_schedule) {
      schedule_ = schedule_.fitted_to((cfg.steps + steps_per_epoch_ - 1) / steps_per_epoch_);
    }
  }

  template <typename StepFn, typename EvalFn, typename SnapshotFn>
  TrainLog run(Adam<float>& adam, StepFn step_fn, EvalFn eval_fn, SnapshotFn snapshot,
               const std::vector<std::pair<std::string, std::string>>& extra) {
    TrainLog log;
    log.schedule = schedule_;
    std::ofstream csv;
    if (!cfg_.run_dir.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(cfg_.run_dir, ec);
      if (ec) throw IoError("cannot create run directory " + cfg_.run_dir.string());
      write_snapshot(extra);
      csv.open(cfg_.run_dir / "metrics.csv");
      if (!csv) throw IoError("cannot write metrics in " + cfg_.run_dir.string());
      csv << "epoch,lr,loss,psnr,ssim\n";
    }

    const Quality q0 = eval_fn();
    log.initial_psnr = q0.psnr;
    log.initial_ssim = q0.ssim;
    log.final_psnr = q0.psnr;
    log.final_ssim = q0.ssim;

    int step = 0;
    int epoch = 0;
    const auto n = static_cast<int>(data_.train.size());
    std::vector<int> order(n);
    while (!schedule_.finished(epoch) && (cfg_.steps == 0 || step < cfg_.steps)) {
      const double lr = schedule_.lr(epoch);
      for (int i = 0; i < n; ++i) order[i] = i;
      for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng_.uniform_int(0, i)]);
      double loss_sum = 0.0;
      int loss_count = 0;
      for (int b = 0; b < n && (cfg_.steps == 0 || step < cfg_.steps); b += cfg_.batch_size) {
        const Batch batch = make_batch(order, b);
        StepOutput out = step_fn(batch);
        const double loss = out.loss.item();
        // A fully frozen model leaves nothing on the tape; the step is then a no-op.
        if (out.loss.requires_grad()) backward(out.loss);
        adam.step(lr);
        adam.zero_grad();
        ++step;
        log.step_losses.push_back(loss);
        loss_sum += loss;
        ++loss_count;
        if (cfg_.on_step) cfg_.on_step(StepEvent{step, epoch, lr, loss, &out.attention});
      }
      const bool last = schedule_.finished(epoch + 1) || (cfg_.steps > 0 && step >= cfg_.steps);
      EpochRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.lr = lr;
      rec.loss = loss_count ? loss_sum / loss_count : 0.0;
      rec.psnr = std::numeric_limits<double>::quiet_NaN();
      rec.ssim = std::numeric_limits<double>::quiet_NaN();
      if (last || (cfg_.eval_every > 0 && (epoch + 1) % cfg_.eval_every == 0)) {
        const Quality q = eval_fn();
        rec.psnr = q.psnr;
        rec.ssim = q.ssim;
        log.final_psnr = q.psnr;
        log.final_ssim = q.ssim;
      }
      log.epochs.push_back(rec);
      if (csv.is_open()) {
        csv << rec.epoch << ',' << fmt(rec.lr) << ',' << fmt(rec.loss) << ',';
        if (!std::isnan(rec.psnr)) csv << format_psnr(rec.psnr) << ',' << fmt(rec.ssim);
        else csv << ',';
        csv << '\n';
        csv.flush();
      }
      ++epoch;
      if (!cfg_.run_dir.empty() && cfg_.checkpoint_every > 0 && epoch % cfg_.checkpoint_every == 0 && !last) {
        Checkpoint ck = snapshot();
        store_optimizer(ck, adam);
        ck.put_scalar("sched/epoch", epoch);
        ck.put_scalar("sched/step", step);
        std::ostringstream name;
        name << "epoch_" << std::setw(5) << std::setfill('0') << epoch << ".ckpt";
        ck.save(cfg_.run_dir / name.str());
      }
    }
    final_epoch_ = epoch;
    final_step_ = step;
    return log;
  }

  Checkpoint finish(Checkpoint ck, const Adam<float>& adam) const {
    store_optimizer(ck, adam);
    ck.put_scalar("sched/epoch", final_epoch_);
    ck.put_scalar("sched/step", final_step_);
    if (!cfg_.run_dir.empty()) ck.save(cfg_.run_dir / "final.ckpt");
    return ck;
  }

 private:
  Batch make_batch(const std::vector<int>& order, int begin) {
    std::vector<Image> blurred;
    std::vector<Image> sharp;
    const int end = std::min<int>(begin + cfg_.batch_size, static_cast<int>(order.size()));
    for (int i = begin; i < end; ++i) {
      const auto& p = data_.train[order[i]];
      const int y = rng_.uniform_int(0, p.blurred.height - cfg_.crop);
      const int x = rng_.uniform_int(0, p.blurred.width - cfg_.crop);
      blurred.push_back(crop(p.blurred, y, x, cfg_.crop, cfg_.crop));
      sharp.push_back(crop(p.sharp, y, x, cfg_.crop, cfg_.crop));
    }
    return {to_tensor(std::span<const Image>(blurred)), to_tensor(std::span<const Image>(sharp))};
  }

  void write_snapshot(const std::vector<std::pair<std::string, std::string>>& extra) const {
    std::ofstream os(cfg_.run_dir / "run.txt");
    if (!os) throw IoError("cannot write run snapshot in " + cfg_.run_dir.string());
    os << "kind = " << kind_ << "\n\n[train]\n";
    os << "steps = " << cfg_.steps << "\n";
    os << "batch_size = " << cfg_.batch_size << "\n";
    os << "crop = " << cfg_.crop << "\n";
    os << "seed = " << cfg_.seed << "\n";
    os << "lr = " << fmt(schedule_.lr0) << "\n";
    os << "lr_floor = " << fmt(schedule_.floor) << "\n";
    os << "halving_period_requested = " << cfg_.schedule.period << "\n";
    os << "halving_period = " << schedule_.period << "\n";
    os << "steps_per_epoch = " << steps_per_epoch_ << "\n";
    os << "train_pairs = " << data_.train.size() << "\n";
    os << "validation_pairs = " << data_.validation.size() << "\n";
    for (const auto& [k, v] : extra) os << k << " = " << v << "\n";
  }

  const TrainData& data_;
  const TrainConfig& cfg_;
  std::string kind_;
  Rng rng_;
  Schedule schedule_;
  int steps_per_epoch_ = 1;
  int final_epoch_ = 0;
  int final_step_ = 0;
};

std::vector<std::pair<std::string, std::string>> describe(const DeblurNet<float>& net) {
  const auto& c = net.config();
  std::string branches;
  for (bool b : c.aspdc.branch_enabled) branches += b ? '1' : '0';
  return {{"deblur_base_width", std::to_string(c.base_width)},
          {"deblur_modules", std::to_string(c.n_modules)},
          {"deblur_branches", branches},
          {"deblur_afim", c.aspdc.afim_enabled ? "true" : "false"},
          {"deblur_parameters", std::to_string(parameter_count(net.parameters()))}};
}

std::vector<std::pair<std::string, std::string>> describe(const ReblurNet<float>& net) {
  return {{"reblur_base_width", std::to_string(net.config().base_width)},
          {"reblur_levels", std::to_string(net.config().levels)},
          {"reblur_parameters", std::to_string(parameter_count(net.parameters()))}};
}

}  // namespace

Quality evaluate_deblur(const DeblurNet<float>& net, std::span<const CorpusPair> pairs) {
  NoGradGuard<float> guard;
  Quality q;
  for (const auto& p : pairs) {
    Image raw;
    const Image out = pad_crop_back(p.blurred, 4, [&](const Image& in) {
      const auto r = net.forward(to_tensor(in)).image;
      raw = from_tensor(r);
      return from_tensor(clamp01(r));
    });
    q.psnr += psnr(out, p.sharp);
    q.ssim += ssim(out, p.sharp);
    const Image unclamped = crop(raw, 0, 0, p.sharp.height, p.sharp.width);
    double acc = 0.0;
    for (std::size_t i = 0; i < unclamped.pixels.size(); ++i) {
      const double d = static_cast<double>(unclamped.pixels[i]) - p.sharp.pixels[i];
      acc += d * d;
    }
    q.mse += acc / static_cast<double>(unclamped.pixels.size());
  }
  if (!pairs.empty()) {
    q.psnr /= pairs.size();
    q.ssim /= pairs.size();
    q.mse /= pairs.size();
  }
  return q;
}

namespace {

Image reblur_image(const ReblurNet<float>& net, const Image& sharp_like, const Image& blurred, bool clamp) {
  const int multiple = 1 << net.config().levels;
  const Image s = reflect_pad_to_multiple(sharp_like, multiple);
  const Image b = reflect_pad_to_multiple(blurred, multiple);
  auto r = net.forward(to_tensor(s), to_tensor(b));
  if (clamp) r = clamp01(r);
  return crop(from_tensor(r), 0, 0, blurred.height, blurred.width);
}

double mse_of(const Image& a, const Image& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.pixels.size());
}

}  // namespace

Quality evaluate_reblur(const ReblurNet<float>& net, std::span<const CorpusPair> pairs) {
  NoGradGuard<float> guard;
  Quality q;
  for (const auto& p : pairs) {
    q.mse += mse_of(reblur_image(net, p.sharp, p.blurred, false), p.blurred);
    const Image out = reblur_image(net, p.sharp, p.blurred, true);
    q.psnr += psnr(out, p.blurred);
    q.ssim += ssim(out, p.blurred);
  }
  if (!pairs.empty()) {
    q.psnr /= pairs.size();
    q.ssim /= pairs.size();
    q.mse /= pairs.size();
  }
  return q;
}

double reblur_collapse_probe(const ReblurNet<float>& net, std::span<const CorpusPair> pairs) {
  if (pairs.size() < 2) throw ContractError("collapse probe needs at least two pairs");
  NoGradGuard<float> guard;
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& target = pairs[i];
    const auto& other = pairs[(i + 1) % pairs.size()];
    if (!other.sharp.same_size(target.blurred)) throw DimensionError("collapse probe: pair sizes differ");
    const Image r = reblur_image(net, other.sharp, target.blurred, true);
    double acc = 0.0;
    for (std::size_t k = 0; k < r.pixels.size(); ++k) acc += std::abs(double(r.pixels[k]) - target.blurred.pixels[k]);
    total += acc / static_cast<double>(r.pixels.size());
  }
  return total / static_cast<double>(pairs.size());
}

double reblur_consistency(const DeblurNet<float>& deblur, const ReblurNet<float>& reblur,
                          std::span<const CorpusPair> pairs) {
  NoGradGuard<float> guard;
  double total = 0.0;
  for (const auto& p : pairs) {
    const int multiple = std::max(4, 1 << reblur.config().levels);
    const Image b = reflect_pad_to_multiple(p.blurred, multiple);
    const Tensor bt = to_tensor(b);
    const Tensor d = deblur.forward(bt).image;
    const Image r = crop(from_tensor(reblur.forward(d, bt)), 0, 0, p.blurred.height, p.blurred.width);
    total += mse_of(r, p.blurred);
  }
  return pairs.empty() ? 0.0 : total / static_cast<double>(pairs.size());
}

ConsistencyTerms consistency_loss(const DeblurNet<float>& deblur, const ReblurNet<float>& reblur,
                                  const Tensor& blurred, const Tensor& sharp, double lambda) {
  if (lambda < 0.0) throw ConfigError("consistency weight must be non-negative");
  ConsistencyTerms t;
  const Tensor d = deblur.forward(blurred).image;
  t.deblur = deblurring_loss(d, sharp);
  t.reblur = reblurring_loss(reblur.forward(d, blurred), blurred);
  t.total = add(t.deblur, scale(t.reblur, lambda));
  return t;
}

TrainResult train_deblur(DeblurNet<float>& net, const TrainData& data, const TrainConfig& cfg) {
  Loop loop(data, cfg, "deblur");
  Adam<float> adam(net.parameters());
  auto step = [&](const Batch& b) {
    auto out = net.forward(b.blurred);
    return StepOutput{deblurring_loss(out.image, b.sharp), std::move(out.attention)};
  };
  auto eval = [&] { return evaluate_deblur(net, eval_set(data)); };
  auto snap = [&] { return deblur_checkpoint(net); };
  TrainResult r;
  r.log = loop.run(adam, step, eval, snap, describe(net));
  r.checkpoint = loop.finish(deblur_checkpoint(net), adam);
  return r;
}

TrainResult train_reblur(ReblurNet<float>& net, const TrainData& data, const TrainConfig& cfg) {
  if (cfg.crop % (1 << net.config().levels) != 0) throw ConfigError("crop size must be divisible by 2^levels");
  Loop loop(data, cfg, "reblur");
  Adam<float> adam(net.parameters());
  auto step = [&](const Batch& b) {
    return StepOutput{reblurring_loss(net.forward(b.sharp, b.blurred), b.blurred), {}};
  };
  auto eval = [&] { return evaluate_reblur(net, eval_set(data)); };
  auto snap = [&] { return reblur_checkpoint(net); };
  TrainResult r;
  r.log = loop.run(adam, step, eval, snap, describe(net));
  r.checkpoint = loop.finish(reblur_checkpoint(net), adam);
  return r;
}

TrainResult finetune_consistency(DeblurNet<float>& deblur, ReblurNet<float>& reblur, const TrainData& data,
                                 const TrainConfig& cfg, const ConsistencyConfig& cc) {
  if (!(cc.lambda > 0.0)) throw ConfigError("consistency weight lambda must be > 0");
  Loop loop(data, cfg, "finetune");
  ParamList<float> trainable = deblur.parameters();
  for (auto& p : trainable) p.tensor.set_requires_grad(true);
  const ParamList<float> reblur_params = reblur.parameters();
  std::vector<bool> previous;
  for (const auto& p : reblur_params) previous.push_back(p.tensor.requires_grad());
  for (auto p : reblur_params) p.tensor.set_requires_grad(!cc.freeze_reblur);
  if (!cc.freeze_reblur) {
    for (const auto& p : reblur_params) trainable.push_back({"reblur." + p.name, p.tensor});
  }
  Adam<float> adam(trainable);
  auto step = [&](const Batch& b) {
    auto t = consistency_loss(deblur, reblur, b.blurred, b.sharp, cc.lambda);
    return StepOutput{t.total, {}};
  };
  auto eval = [&] { return evaluate_deblur(deblur, eval_set(data)); };
  auto snap = [&] { return deblur_checkpoint(deblur); };
  auto extra = describe(deblur);
  for (auto& kv : describe(reblur)) extra.push_back(kv);
  extra.push_back({"lambda", fmt(cc.lambda)});
  extra.push_back({"freeze_reblur", cc.freeze_reblur ? "true" : "false"});
  TrainResult r;
  try {
    r.log = loop.run(adam, step, eval, snap, extra);
  } catch (...) {
    for (std::size_t i = 0; i < reblur_params.size(); ++i) Tensor(reblur_params[i].tensor).set_requires_grad(previous[i]);
    throw;
  }
  for (std::size_t i = 0; i < reblur_params.size(); ++i) Tensor(reblur_params[i].tensor).set_requires_grad(previous[i]);
  Checkpoint ck = deblur_checkpoint(deblur);
  ck.put_scalar("meta/lambda", cc.lambda);
  r.checkpoint = loop.finish(std::move(ck), adam);
  return r;
}

TrainResult finetune_consistency(const Checkpoint& deblur_ckpt, const Checkpoint& reblur_ckpt, const TrainData& data,
                                 const TrainConfig& cfg, const ConsistencyConfig& cc) {
  DeblurNet<float> deblur = load_deblur(deblur_ckpt);
  ReblurNet<float> reblur = load_reblur(reblur_ckpt);
  return finetune_consistency(deblur, reblur, data, cfg, cc);
}

TrainData split_corpus(std::vector<CorpusPair> pairs, int validation_count) {
  if (validation_count < 0 || validation_count >= static_cast<int>(pairs.size())) {
    throw ConfigError("validation split must leave at least one training pair");
  }
  TrainData d;
  d.validation.assign(pairs.end() - validation_count, pairs.end());
  pairs.resize(pairs.size() - validation_count);
  d.train = std::move(pairs);
  return d;
}

}  // namespace aspdc
