#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aspdc/blur_synth.hpp"
#include "aspdc/checkpoint.hpp"
#include "aspdc/deblur_net.hpp"
#include "aspdc/optim.hpp"
#include "aspdc/reblur_net.hpp"

namespace aspdc {

struct StepEvent {
  int step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  // Per-module attention maps of the deblurring pass (empty for reblur runs).
  const std::vector<Tensor>* attention = nullptr;
};

struct TrainConfig {
  // Optimizer step budget; 0 runs until the schedule reaches its floor.
  int steps = 0;
  int batch_size = 2;
  int crop = 64;  // must be divisible by 8
  Schedule schedule = Schedule::pretrain();
  // With a step budget, shrink the halving period so that every rate level
  // of the schedule is visited within the budget.
  bool fit_schedule = true;
  std::uint64_t seed = 1;
  int eval_every = 1;         // epochs between validation passes (0: start and end only)
  int checkpoint_every = 0;   // epochs between checkpoints in run_dir (0: final only)
  std::filesystem::path run_dir;  // empty: nothing written
  std::function<void(const StepEvent&)> on_step;
};

struct ConsistencyConfig {
  double lambda = 0.1;
  bool freeze_reblur = true;
};

struct TrainData {
  std::vector<CorpusPair> train;
  std::vector<CorpusPair> validation;
};

struct EpochRecord {
  int epoch = 0;
  int step = 0;  // steps completed at the end of the epoch
  double lr = 0.0;
  double loss = 0.0;  // mean minibatch loss over the epoch
  double psnr = 0.0;  // NaN when no validation pass ran
  double ssim = 0.0;
};

struct TrainLog {
  std::vector<double> step_losses;
  std::vector<EpochRecord> epochs;
  Schedule schedule;  // the schedule actually used
  double initial_psnr = 0.0;
  double initial_ssim = 0.0;
  double final_psnr = 0.0;
  double final_ssim = 0.0;
};

struct TrainResult {
  TrainLog log;
  Checkpoint checkpoint;
};

struct Quality {
  double psnr = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
};

// Full-image evaluation (inputs reflect-padded to the network's multiple).
Quality evaluate_deblur(const DeblurNet<float>& net, std::span<const CorpusPair> pairs);
// Reblurred sharp image against the blurred target.
Quality evaluate_reblur(const ReblurNet<float>& net, std::span<const CorpusPair> pairs);
// Mean absolute deviation (0-1 scale) between reblur(unrelated sharp, I_b) and
// I_b, where pair i is paired with the sharp image of pair i+1.
double reblur_collapse_probe(const ReblurNet<float>& net, std::span<const CorpusPair> pairs);
// Mean over pairs of MSE(reblur(deblur(I_b), I_b), I_b), unclamped.
double reblur_consistency(const DeblurNet<float>& deblur, const ReblurNet<float>& reblur,
                          std::span<const CorpusPair> pairs);

struct ConsistencyTerms {
  Tensor total;
  Tensor deblur;
  Tensor reblur;
};
// L_deblur + lambda * L_reblur with the reblur net fed the deblurred output.
ConsistencyTerms consistency_loss(const DeblurNet<float>& deblur, const ReblurNet<float>& reblur,
                                  const Tensor& blurred, const Tensor& sharp, double lambda);

// Parameters whose tensor does not require grad stay fixed.
TrainResult train_deblur(DeblurNet<float>& net, const TrainData& data, const TrainConfig& cfg);
TrainResult train_reblur(ReblurNet<float>& net, const TrainData& data, const TrainConfig& cfg);
// Updates `deblur` in place. The reblur net is frozen unless
// cc.freeze_reblur is false. Adam state starts fresh.
TrainResult finetune_consistency(DeblurNet<float>& deblur, ReblurNet<float>& reblur, const TrainData& data,
                                 const TrainConfig& cfg, const ConsistencyConfig& cc);
TrainResult finetune_consistency(const Checkpoint& deblur_ckpt, const Checkpoint& reblur_ckpt,
                                 const TrainData& data, const TrainConfig& cfg, const ConsistencyConfig& cc);

// Split the last `validation_count` pairs off as validation data.
TrainData split_corpus(std::vector<CorpusPair> pairs, int validation_count);

}  // namespace aspdc
