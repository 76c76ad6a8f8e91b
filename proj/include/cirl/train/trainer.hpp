#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cirl/adversarial_mask.hpp"
#include "cirl/data/dataset.hpp"
#include "cirl/nn/backbones.hpp"
#include "cirl/train/config.hpp"

namespace cirl::train {

// Per-step losses. total_model = l_sup + l_inf + fac_weight * l_fac over the
// active terms; total_masker = l_sup - l_inf. Disabled terms log as 0.
struct LossBundle {
  double l_sup = 0.0;
  double l_inf = 0.0;
  double l_fac = 0.0;
  double total_model = 0.0;
  double total_masker = 0.0;
};

// The four networks of the game: generator g, classifiers h1/h2, masker w.
template <class T>
struct CirlModel {
  nn::ModelSpec spec;
  std::unique_ptr<nn::Backbone<T>> g;
  nn::Linear<T> h1, h2;
  MaskerMlp<T> masker;

  nn::ParamRefs<T> model_params();   // g + h1 + h2
  nn::ParamRefs<T> masker_params();  // w
  nn::BufferRefs<T> buffers();       // batch-norm running stats
};

template <class T>
CirlModel<T> build_model(const nn::ModelSpec& spec, std::uint64_t seed);

// SGD with momentum: v = momentum*v + grad + weight_decay*p; p -= lr*v.
// Gradients are zeroed after the update. Momentum buffers live inside the
// parameters, so the masker and model groups never share state.
template <class T>
void sgd_step(nn::ParamRefs<T>& params, double lr, double momentum,
              double weight_decay);

template <class T>
void zero_grads(nn::ParamRefs<T>& params);

template <class T>
double grad_norm(const nn::ParamRefs<T>& params);

// Concatenates the original and augmented branches along the batch axis:
// {C, B, H, W} x2 -> {C, 2B, H, W}. One backbone pass then serves both
// branches (and batch-norm sees the union, as it would under a doubled
// batch).
template <class T>
Tensor<T> stack_branches(const Tensor<T>& x_o, const Tensor<T>& x_a);

MaskConfig mask_config(const TrainConfig& cfg);

// Model-step objective: forwards the batch through g, masks the
// representation with caller-supplied Gumbel noise ({B', k, N}; ignored when
// use_advm is off), and evaluates the classification and factorization
// terms. labels has one entry per ORIGINAL sample; stacked=true means
// x holds {C, 2B, H, W} with the augmented branch in rows B..2B-1 (loss
// terms are per-branch sums, so the stacked cross-entropy is scaled by 2).
// grads=true accumulates gradients into g/h1/h2 (gradient also flows through
// the mask path, leaving masker gradients behind as a side effect for the
// caller to clear). cached_r skips the forward when the caller already ran g
// on this exact tensor with g unchanged since; x must outlive the call
// either way.
template <class T>
LossBundle model_objective(CirlModel<T>& model, const Tensor<T>& x,
                           const std::vector<int>& labels, bool stacked,
                           const TrainConfig& cfg,
                           const Tensor<T>& gumbel_noise, bool grads,
                           const Tensor<T>* cached_r = nullptr);

// Masker-step objective L_sup - L_inf on a fixed representation r ({B', N}).
// h1/h2 enter as frozen values (their caches and gradients stay untouched);
// grads=true accumulates gradients for the masker only.
template <class T>
LossBundle masker_objective(CirlModel<T>& model, const Tensor<T>& r,
                            const std::vector<int>& labels, bool stacked,
                            const TrainConfig& cfg,
                            const Tensor<T>& gumbel_noise, bool grads);

// One alternating update on a batch: (1) augment, (2) forward g, (3) masker
// SGD step on L_sup - L_inf with the model frozen, (4) fresh Gumbel noise,
// (5) model SGD step on L_sup + L_inf + fac_weight*L_fac with the masker
// frozen. Returns the bundle of step (5). All randomness derives from
// cfg.seed and step_index. Raises NumericError with a diagnostic snapshot
// (step, losses, gradient norms) if a loss goes non-finite.
template <class T>
LossBundle train_step(CirlModel<T>& model, const Tensor<T>& images,
                      const std::vector<int>& labels,
                      const std::vector<int>& domains, const TrainConfig& cfg,
                      std::uint64_t step_index, double lr);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double l_sup = 0.0, l_inf = 0.0, l_fac = 0.0;
  double total_model = 0.0, total_masker = 0.0;
  double val_accuracy = 0.0;
  double independence = 0.0;
};

struct FitResult {
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_accuracy = 0.0;
  std::string best_checkpoint, last_checkpoint, metrics_path;
};

// Full training run on the source view (the target domain is not reachable
// through it). Writes best.ckpt (highest source-val accuracy), last.ckpt and
// metrics.json under out_dir; metrics carry per-epoch losses, source-val
// accuracy and the independence probe, and are byte-stable across reruns of
// the same configuration.
FitResult fit(const data::SourceView& sources, const TrainConfig& cfg,
              const std::string& out_dir);

// Independence degree of the correlation between original and augmented
// representations on a fixed, seeded source-val probe batch (eval mode,
// fixed augmentation stream). Comparable across epochs of one run.
double independence_probe(CirlModel<float>& model,
                          const data::DomainDataset& ds,
                          const std::vector<std::uint32_t>& val_ids,
                          const TrainConfig& cfg);

// Top-1 accuracy of h1(g(x)): whole representation, no masking, h2 unused.
double evaluate(CirlModel<float>& model, const data::DomainDataset& ds,
                const std::vector<std::uint32_t>& ids);
double evaluate(CirlModel<float>& model, const data::TargetView& target);

// Loads the checkpoint and evaluates it on the target view. Raises
// SchemaError when the checkpoint's class count does not match the data.
double evaluate_checkpoint(const std::string& path,
                           const data::TargetView& target);

void save_model(const std::string& path, CirlModel<float>& model,
                std::uint64_t step);
CirlModel<float> load_model(const std::string& path);

}  // namespace cirl::train
