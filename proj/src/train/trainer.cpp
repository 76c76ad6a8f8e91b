#include "cirl/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cirl/error.hpp"
#include "cirl/fourier_intervention.hpp"
#include "cirl/kernels.hpp"
#include "cirl/nn/checkpoint.hpp"
#include "cirl/representation.hpp"
#include "cirl/rng.hpp"

namespace cirl::train {

namespace {

constexpr std::size_t kProbeBatch = 128;
constexpr std::size_t kEvalBatch = 256;

// Augmentation streams are global step indices, so the probe gets a stream no
// training step can collide with.
constexpr std::uint64_t kProbeStream = ~std::uint64_t(0);

// One label per branch row: the augmented copy keeps its image's label.
std::vector<int> branch_labels(const std::vector<int>& labels, bool stacked) {
  if (!stacked) return labels;
  std::vector<int> out(labels.size() * 2);
  std::copy(labels.begin(), labels.end(), out.begin());
  std::copy(labels.begin(), labels.end(),
            out.begin() + static_cast<std::ptrdiff_t>(labels.size()));
  return out;
}

template <class T>
Tensor<T> scaled(Tensor<T> t, double s) {
  kernels::scale<T>(static_cast<T>(s), t.data(), t.size());
  return t;
}

// y = x * W^T + b without touching the layer's caches or gradients; the
// masker step and evaluation treat classifiers as frozen values.
template <class T>
Tensor<T> linear_value(const nn::Linear<T>& lin, const Tensor<T>& x) {
  require(x.rank() == 2 && x.dim(1) == lin.in_dim(),
          "linear_value: bad input shape");
  const std::size_t bsz = x.dim(0), in = lin.in_dim(), out = lin.out_dim();
  Tensor<T> y({bsz, out});
  kernels::gemm<T>(false, true, bsz, out, in, T(1), x.data(), in,
                   lin.w.value.data(), in, T(0), y.data(), out);
  for (std::size_t i = 0; i < bsz; ++i)
    kernels::axpy<T>(T(1), lin.b.value.data(), y.data() + i * out, out);
  return y;
}

// dL/dx = dy * W for the same frozen-value evaluation.
template <class T>
Tensor<T> linear_value_dx(const nn::Linear<T>& lin, const Tensor<T>& dy) {
  const std::size_t bsz = dy.dim(0), in = lin.in_dim(), out = lin.out_dim();
  Tensor<T> dx({bsz, in});
  kernels::gemm<T>(false, false, bsz, in, out, T(1), dy.data(), out,
                   lin.w.value.data(), in, T(0), dx.data(), in);
  return dx;
}

template <class T>
Tensor<T> gumbel_tensor(std::vector<std::size_t> shape, Rng rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t) v = static_cast<T>(rng.gumbel());
  return t;
}

template <class T>
void check_probs_finite(const Tensor<T>& z) {
  const std::size_t n = z.dim(1);
  for (std::size_t i = 0; i < z.size(); ++i)
    if (!std::isfinite(static_cast<double>(z[i])))
      throw NumericError("masker probabilities went non-finite in sample " +
                         std::to_string(i / n));
}

bool bundle_finite(const LossBundle& b) {
  return std::isfinite(b.l_sup) && std::isfinite(b.l_inf) &&
         std::isfinite(b.l_fac) && std::isfinite(b.total_model) &&
         std::isfinite(b.total_masker);
}

template <class T>
void check_step_finite(const LossBundle& b, CirlModel<T>& model,
                       std::uint64_t step, const char* phase) {
  if (bundle_finite(b)) return;
  auto mp = model.model_params();
  auto wp = model.masker_params();
  std::ostringstream os;
  os << "train_step " << step << " (" << phase << "): non-finite loss;"
     << " l_sup=" << b.l_sup << " l_inf=" << b.l_inf << " l_fac=" << b.l_fac
     << " |grad model|=" << grad_norm(mp)
     << " |grad masker|=" << grad_norm(wp);
  throw NumericError(os.str());
}

}  // namespace

// ---------------------------------------------------------------------------
// Model assembly

template <class T>
nn::ParamRefs<T> CirlModel<T>::model_params() {
  nn::ParamRefs<T> out;
  g->collect(out, "g");
  h1.collect(out, "h1");
  h2.collect(out, "h2");
  return out;
}

template <class T>
nn::ParamRefs<T> CirlModel<T>::masker_params() {
  nn::ParamRefs<T> out;
  masker.collect(out, "w");
  return out;
}

template <class T>
nn::BufferRefs<T> CirlModel<T>::buffers() {
  nn::BufferRefs<T> out;
  g->collect_buffers(out, "g");
  return out;
}

template <class T>
CirlModel<T> build_model(const nn::ModelSpec& spec, std::uint64_t seed) {
  nn::validate_model_spec(spec);
  Rng rng(seed, "init", 0);
  CirlModel<T> m;
  m.spec = spec;
  // One sequential init stream, masker last: ablations that never touch the
  // masker still start from identical g/h1/h2 weights for a given seed.
  m.g = nn::build_backbone<T>(spec, rng);
  const std::size_t n = m.g->feature_dim();
  m.h1 = nn::build_classifier<T>(n, spec.num_classes, rng);
  m.h2 = nn::build_classifier<T>(n, spec.num_classes, rng);
  m.masker = MaskerMlp<T>(n);
  m.masker.init(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Optimizer

template <class T>
void sgd_step(nn::ParamRefs<T>& params, double lr, double momentum,
              double weight_decay) {
  const T mu = static_cast<T>(momentum);
  const T wd = static_cast<T>(weight_decay);
  const T step = static_cast<T>(lr);
  for (auto& pr : params) {
    nn::ParamTensor<T>& p = *pr.param;
    if (!p.momentum.same_shape(p.value)) {
      p.momentum = Tensor<T>(p.value.shape());
    }
    T* v = p.momentum.data();
    T* val = p.value.data();
    T* g = p.grad.data();
    const std::size_t n = p.value.size();
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = mu * v[i] + g[i] + wd * val[i];
      val[i] -= step * v[i];
      g[i] = T(0);
    }
  }
}

template <class T>
void zero_grads(nn::ParamRefs<T>& params) {
  for (auto& pr : params) pr.param->grad.fill(T(0));
}

template <class T>
double grad_norm(const nn::ParamRefs<T>& params) {
  double acc = 0.0;
  for (const auto& pr : params)
    for (const T& g : pr.param->grad) {
      const double d = static_cast<double>(g);
      acc += d * d;
    }
  return std::sqrt(acc);
}

// ---------------------------------------------------------------------------
// Objectives

template <class T>
Tensor<T> stack_branches(const Tensor<T>& x_o, const Tensor<T>& x_a) {
  require(x_o.rank() == 4 && x_o.same_shape(x_a),
          "stack_branches: branch shapes differ");
  const std::size_t c = x_o.dim(0), b = x_o.dim(1), h = x_o.dim(2),
                    w = x_o.dim(3);
  Tensor<T> out({c, 2 * b, h, w});
  const std::size_t plane = b * h * w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    T* dst = out.data() + ch * 2 * plane;
    std::copy_n(x_o.data() + ch * plane, plane, dst);
    std::copy_n(x_a.data() + ch * plane, plane, dst + plane);
  }
  return out;
}

MaskConfig mask_config(const TrainConfig& cfg) {
  MaskConfig mc;
  mc.kappa = cfg.kappa;
  mc.gumbel_temperature = cfg.gumbel_temperature;
  mc.seed = cfg.seed;
  return mc;
}

template <class T>
LossBundle masker_objective(CirlModel<T>& model, const Tensor<T>& r,
                            const std::vector<int>& labels, bool stacked,
                            const TrainConfig& cfg,
                            const Tensor<T>& gumbel_noise, bool grads) {
  require(r.rank() == 2, "masker_objective: representation must be {B, N}");
  const std::size_t rows = r.dim(0);
  const std::size_t n = r.dim(1);
  require(model.masker.dim() == n, "masker_objective: masker width mismatch");
  const std::vector<int> ly = branch_labels(labels, stacked);
  require(ly.size() == rows, "masker_objective: label count mismatch");
  // Branch losses are sums over branches of per-branch mean cross-entropy;
  // over a stacked batch that is twice the pooled mean.
  const double scale = stacked ? 2.0 : 1.0;

  const Tensor<T>& z = model.masker.forward_probs(r);
  check_probs_finite(z);
  mask_cardinality(mask_config(cfg), n);  // validates kappa against N
  GumbelKhotBatch<T> khot(z, gumbel_noise,
                          static_cast<T>(cfg.gumbel_temperature));
  const Tensor<T>& m = khot.mask();

  Tensor<T> u(r.shape()), v(r.shape());
  for (std::size_t i = 0; i < r.size(); ++i) {
    u[i] = r[i] * m[i];
    v[i] = r[i] * (T(1) - m[i]);
  }

  Tensor<T> logits_u = linear_value(model.h1, u);
  Tensor<T> logits_v = linear_value(model.h2, v);
  nn::SoftmaxCrossEntropy<T> ce_u, ce_v;
  LossBundle out;
  out.l_sup = scale * static_cast<double>(ce_u.forward(logits_u, ly));
  out.l_inf = scale * static_cast<double>(ce_v.forward(logits_v, ly));
  out.total_masker = out.l_sup - out.l_inf;

  if (grads) {
    // d(l_sup - l_inf)/du and /dv; the sign of the inf term rides along.
    Tensor<T> du = linear_value_dx(model.h1, scaled(ce_u.backward(), scale));
    Tensor<T> dv = linear_value_dx(model.h2, scaled(ce_v.backward(), -scale));
    // u = r*m, v = r*(1-m) => dL/dm = (dL/du - dL/dv) * r.
    Tensor<T> dm(r.shape());
    for (std::size_t i = 0; i < r.size(); ++i)
      dm[i] = (du[i] - dv[i]) * r[i];
    Tensor<T> dz = khot.backward(dm);
    model.masker.backward(dz);  // accumulates masker grads; dr is discarded
  }
  return out;
}

template <class T>
LossBundle model_objective(CirlModel<T>& model, const Tensor<T>& x,
                           const std::vector<int>& labels, bool stacked,
                           const TrainConfig& cfg,
                           const Tensor<T>& gumbel_noise, bool grads,
                           const Tensor<T>* cached_r) {
  require(x.rank() == 4, "model_objective: batch must be {C, B, H, W}");
  const std::size_t rows = x.dim(1);
  require(!stacked || rows % 2 == 0,
          "model_objective: stacked batch needs an even row count");
  const std::size_t b = stacked ? rows / 2 : rows;
  require(labels.size() == b, "model_objective: label count mismatch");
  const std::vector<int> ly = branch_labels(labels, stacked);
  const double scale = stacked ? 2.0 : 1.0;

  Tensor<T> r_local;
  const Tensor<T>* r = cached_r;
  if (r == nullptr) {
    r_local = model.g->forward(x, true);
    r = &r_local;
  }
  require(r->rank() == 2 && r->dim(0) == rows,
          "model_objective: representation shape mismatch");
  const std::size_t n = r->dim(1);

  LossBundle out;
  const bool advm = cfg.ablation.use_advm;
  const bool cfac = cfg.ablation.use_cfac;

  std::optional<GumbelKhotBatch<T>> khot;
  if (advm) {
    const Tensor<T>& z = model.masker.forward_probs(*r);
    check_probs_finite(z);
    mask_cardinality(mask_config(cfg), n);  // validates kappa against N
    khot.emplace(z, gumbel_noise, static_cast<T>(cfg.gumbel_temperature));
  }

  // Superior branch (the whole representation when masking is off).
  Tensor<T> u;
  if (advm) {
    const Tensor<T>& m = khot->mask();
    u = Tensor<T>(r->shape());
    for (std::size_t i = 0; i < r->size(); ++i) u[i] = (*r)[i] * m[i];
  } else {
    u = *r;
  }
  nn::SoftmaxCrossEntropy<T> ce_u, ce_v;
  out.l_sup = scale * static_cast<double>(ce_u.forward(model.h1.forward(u), ly));

  // Inferior branch.
  Tensor<T> v;
  if (advm) {
    const Tensor<T>& m = khot->mask();
    v = Tensor<T>(r->shape());
    for (std::size_t i = 0; i < r->size(); ++i)
      v[i] = (*r)[i] * (T(1) - m[i]);
    out.l_inf =
        scale * static_cast<double>(ce_v.forward(model.h2.forward(v), ly));
  }

  // Factorization term on raw representations; the z-score lives inside.
  std::optional<FactorizationGrad<T>> fg;
  Tensor<T> r_o, r_a;
  if (cfac) {
    if (stacked) {
      r_o = Tensor<T>({b, n});
      r_a = Tensor<T>({b, n});
      std::copy_n(r->data(), b * n, r_o.data());
      std::copy_n(r->data() + b * n, b * n, r_a.data());
      fg.emplace(factorization_loss_grad(r_o, r_a));
    } else {
      fg.emplace(factorization_loss_grad(*r, *r));
    }
    out.l_fac = static_cast<double>(fg->loss);
  }

  out.total_model = out.l_sup + out.l_inf + cfg.fac_weight * out.l_fac;
  out.total_masker = advm ? out.l_sup - out.l_inf : 0.0;

  if (!grads) return out;

  // Backward. dL/dr collects the classifier paths, the mask path through the
  // masker, and the factorization term.
  Tensor<T> d1 = model.h1.backward(scaled(ce_u.backward(), scale));
  Tensor<T> dr({rows, n});
  if (advm) {
    Tensor<T> d2 = model.h2.backward(scaled(ce_v.backward(), scale));
    const Tensor<T>& m = khot->mask();
    Tensor<T> dm({rows, n});
    for (std::size_t i = 0; i < dr.size(); ++i) {
      dr[i] = d1[i] * m[i] + d2[i] * (T(1) - m[i]);
      dm[i] = (d1[i] - d2[i]) * (*r)[i];
    }
    Tensor<T> dz = khot->backward(dm);
    // The mask depends on r through the masker; this leaves gradients on the
    // masker parameters, which the caller clears after its model update.
    Tensor<T> dr_mask = model.masker.backward(dz);
    kernels::axpy<T>(T(1), dr_mask.data(), dr.data(), dr.size());
  } else {
    dr = std::move(d1);
  }
  if (cfac) {
    const T fw = static_cast<T>(cfg.fac_weight);
    if (stacked) {
      kernels::axpy<T>(fw, fg->d_ro.data(), dr.data(), b * n);
      kernels::axpy<T>(fw, fg->d_ra.data(), dr.data() + b * n, b * n);
    } else {
      kernels::axpy<T>(fw, fg->d_ro.data(), dr.data(), dr.size());
      kernels::axpy<T>(fw, fg->d_ra.data(), dr.data(), dr.size());
    }
  }
  model.g->backward(dr);
  return out;
}

// ---------------------------------------------------------------------------
// Alternating step

template <class T>
LossBundle train_step(CirlModel<T>& model, const Tensor<T>& images,
                      const std::vector<int>& labels,
                      const std::vector<int>& domains, const TrainConfig& cfg,
                      std::uint64_t step_index, double lr) {
  require(images.rank() == 4, "train_step: batch must be {C, B, H, W}");
  const std::size_t b = images.dim(1);
  require(b >= 2, "train_step: batch of at least 2 required");
  require(labels.size() == b && domains.size() == b,
          "train_step: label/domain count mismatch");

  const bool stacked = cfg.ablation.use_cint;
  Tensor<T> x_storage;
  const Tensor<T>* x = &images;
  if (stacked) {
    InterventionConfig icfg;
    icfg.eta = cfg.eta;
    icfg.strategy = cfg.mix_strategy;
    icfg.seed = cfg.seed;
    Tensor<T> x_a = augment_batch(images, domains, icfg, step_index);
    x_storage = stack_branches(images, x_a);
    x = &x_storage;
  }

  const std::size_t n = model.g->feature_dim();
  const std::size_t rows = x->dim(1);

  // Masker step first: minimize l_sup - l_inf with g, h1, h2 frozen.
  Tensor<T> r;
  bool have_r = false;
  std::size_t k = 0;
  if (cfg.ablation.use_advm) {
    k = mask_cardinality(mask_config(cfg), n);
    r = model.g->forward(*x, true);
    have_r = true;
    Tensor<T> noise = gumbel_tensor<T>(
        {rows, k, n}, Rng(cfg.seed, "gumbel_masker", step_index));
    LossBundle wb =
        masker_objective(model, r, labels, stacked, cfg, noise, true);
    check_step_finite(wb, model, step_index, "masker");
    auto wp = model.masker_params();
    sgd_step(wp, lr, cfg.momentum, cfg.weight_decay);
  }

  // Model step on the full objective, fresh Gumbel draws, masker frozen. The
  // forward pass from the masker step is still valid: that step never touches
  // g, so its layer caches can back the model-side backward directly.
  Tensor<T> noise2;
  if (cfg.ablation.use_advm)
    noise2 =
        gumbel_tensor<T>({rows, k, n}, Rng(cfg.seed, "gumbel_model", step_index));
  LossBundle bundle = model_objective(model, *x, labels, stacked, cfg, noise2,
                                      true, have_r ? &r : nullptr);
  check_step_finite(bundle, model, step_index, "model");
  auto mp = model.model_params();
  sgd_step(mp, lr, cfg.momentum, cfg.weight_decay);
  if (cfg.ablation.use_advm) {
    // Drop the mask-path gradients the model step deposited on the masker.
    auto wp = model.masker_params();
    zero_grads(wp);
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Evaluation and probes

double evaluate(CirlModel<float>& model, const data::DomainDataset& ds,
                const std::vector<std::uint32_t>& ids) {
  require(!ids.empty(), "evaluate: empty id list");
  if (ds.class_names.size() != model.h1.out_dim())
    throw SchemaError("evaluate: model has " +
                      std::to_string(model.h1.out_dim()) +
                      " classes but the dataset has " +
                      std::to_string(ds.class_names.size()));
  std::size_t correct = 0;
  for (std::size_t i0 = 0; i0 < ids.size(); i0 += kEvalBatch) {
    const std::size_t cur = std::min(kEvalBatch, ids.size() - i0);
    std::vector<std::uint32_t> chunk(ids.begin() + i0, ids.begin() + i0 + cur);
    data::Batch batch = data::gather_batch(ds, chunk);
    Tensor<float> r = model.g->forward(batch.images, false);
    Tensor<float> logits = linear_value(model.h1, r);
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < cur; ++i) {
      const float* row = logits.data() + i * c;
      std::size_t arg = 0;
      for (std::size_t j = 1; j < c; ++j)
        if (row[j] > row[arg]) arg = j;
      if (static_cast<int>(arg) == batch.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

double evaluate(CirlModel<float>& model, const data::TargetView& target) {
  require(target.dataset != nullptr, "evaluate: target view has no dataset");
  return evaluate(model, *target.dataset, target.ids);
}

double evaluate_checkpoint(const std::string& path,
                           const data::TargetView& target) {
  CirlModel<float> model = load_model(path);
  return evaluate(model, target);
}

double independence_probe(CirlModel<float>& model,
                          const data::DomainDataset& ds,
                          const std::vector<std::uint32_t>& val_ids,
                          const TrainConfig& cfg) {
  if (val_ids.size() < 2) return 0.0;
  std::vector<std::uint32_t> ids = val_ids;
  Rng rng(cfg.seed, "probe", 0);
  rng.shuffle(ids.begin(), ids.end());
  if (ids.size() > kProbeBatch) ids.resize(kProbeBatch);
  data::Batch batch = data::gather_batch(ds, ids);
  // Fixed probe intervention, independent of the run's own augmentation
  // settings: runs that differ only in ablation flags see the same probe.
  InterventionConfig icfg;
  icfg.eta = 1.0;
  icfg.strategy = MixStrategy::random;
  icfg.seed = cfg.seed;
  Tensor<float> x_a = augment_batch(batch.images, batch.domains, icfg,
                                    kProbeStream);
  Tensor<float> r_o = model.g->forward(batch.images, false);
  Tensor<float> r_a = model.g->forward(x_a, false);
  Tensor<float> c = correlation_matrix(r_o, r_a);
  return static_cast<double>(independence_degree(c));
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing

void save_model(const std::string& path, CirlModel<float>& model,
                std::uint64_t step) {
  std::vector<nn::NamedTensor<float>> tensors;
  for (auto& pr : model.model_params())
    tensors.push_back({pr.name, pr.param->value});
  for (auto& pr : model.masker_params())
    tensors.push_back({pr.name, pr.param->value});
  for (auto& br : model.buffers()) tensors.push_back({br.name, *br.tensor});
  nn::CheckpointMeta meta;
  meta.spec = model.spec;
  meta.step = step;
  nn::save_checkpoint(path, meta, tensors);
}

CirlModel<float> load_model(const std::string& path) {
  nn::Checkpoint<float> ck = nn::load_checkpoint<float>(path);
  nn::ModelSpec spec = ck.meta.spec;
  // Every weight comes from this checkpoint; never chase the original
  // pretrained file again.
  spec.pretrained = false;
  spec.weights_path.clear();
  CirlModel<float> model = build_model<float>(spec, 0);

  std::unordered_map<std::string, Tensor<float>*> want;
  for (auto& pr : model.model_params()) want[pr.name] = &pr.param->value;
  for (auto& pr : model.masker_params()) want[pr.name] = &pr.param->value;
  for (auto& br : model.buffers()) want[br.name] = br.tensor;

  std::size_t filled = 0;
  for (auto& nt : ck.tensors) {
    auto it = want.find(nt.name);
    if (it == want.end() || it->second == nullptr)
      throw LoadError("checkpoint " + path + ": unexpected tensor '" +
                      nt.name + "'");
    if (it->second->shape() != nt.tensor.shape())
      throw LoadError("checkpoint " + path + ": tensor '" + nt.name +
                      "' has the wrong shape");
    *it->second = std::move(nt.tensor);
    it->second = nullptr;
    ++filled;
  }
  if (filled != want.size()) {
    for (auto& [name, slot] : want)
      if (slot != nullptr)
        throw LoadError("checkpoint " + path + ": missing tensor '" + name +
                        "'");
  }
  return model;
}

// ---------------------------------------------------------------------------
// Full training loop

FitResult fit(const data::SourceView& sources, const TrainConfig& cfg_in,
              const std::string& out_dir) {
  require(sources.dataset != nullptr, "fit: source view has no dataset");
  const data::DomainDataset& ds = *sources.dataset;
  if (sources.train_ids.empty())
    throw ConfigError("fit: empty source training set");

  TrainConfig cfg = cfg_in;
  validate_config(cfg);
  const std::size_t n_classes = ds.class_names.size();
  if (cfg.model.num_classes == 0) cfg.model.num_classes = n_classes;
  if (cfg.model.num_classes != n_classes)
    throw ConfigError("fit: model expects " +
                      std::to_string(cfg.model.num_classes) +
                      " classes but the dataset has " +
                      std::to_string(n_classes));

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  FitResult result;
  result.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
  result.last_checkpoint = (fs::path(out_dir) / "last.ckpt").string();
  result.metrics_path = (fs::path(out_dir) / "metrics.json").string();

  CirlModel<float> model = build_model<float>(cfg.model, cfg.seed);

  std::vector<std::uint32_t> order = sources.train_ids;
  std::uint64_t step = 0;
  double best_acc = -1.0;

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double lr = lr_at_epoch(cfg, e);
    Rng shuffle_rng(cfg.seed, "epoch_order", e);
    shuffle_rng.shuffle(order.begin(), order.end());

    double s_sup = 0, s_inf = 0, s_fac = 0, s_tm = 0, s_tw = 0;
    std::size_t n_steps = 0;
    for (std::size_t i0 = 0; i0 < order.size(); i0 += cfg.batch_size) {
      const std::size_t cur = std::min(cfg.batch_size, order.size() - i0);
      if (cur < 2) continue;  // batch statistics need at least two samples
      std::vector<std::uint32_t> ids(order.begin() + i0,
                                     order.begin() + i0 + cur);
      data::Batch batch = data::gather_batch(ds, ids);
      LossBundle lb = train_step(model, batch.images, batch.labels,
                                 batch.domains, cfg, step, lr);
      s_sup += lb.l_sup;
      s_inf += lb.l_inf;
      s_fac += lb.l_fac;
      s_tm += lb.total_model;
      s_tw += lb.total_masker;
      ++n_steps;
      ++step;
    }

    EpochMetrics em;
    em.epoch = e + 1;
    em.lr = lr;
    if (n_steps > 0) {
      const double inv = 1.0 / static_cast<double>(n_steps);
      em.l_sup = s_sup * inv;
      em.l_inf = s_inf * inv;
      em.l_fac = s_fac * inv;
      em.total_model = s_tm * inv;
      em.total_masker = s_tw * inv;
    }
    em.val_accuracy =
        sources.val_ids.empty() ? 0.0 : evaluate(model, ds, sources.val_ids);
    em.independence = independence_probe(model, ds, sources.val_ids, cfg);
    result.epochs.push_back(em);

    if (em.val_accuracy > best_acc) {
      best_acc = em.val_accuracy;
      result.best_epoch = e + 1;
      save_model(result.best_checkpoint, model, step);
    }
    std::fprintf(stderr,
                 "[fit %s] epoch %zu/%zu lr=%.4g sup=%.4f inf=%.4f fac=%.4f "
                 "val=%.4f ind=%.4f\n",
                 cfg.target_domain.empty() ? "-" : cfg.target_domain.c_str(),
                 em.epoch, cfg.epochs, em.lr, em.l_sup, em.l_inf, em.l_fac,
                 em.val_accuracy, em.independence);
  }
  result.best_val_accuracy = best_acc < 0.0 ? 0.0 : best_acc;
  save_model(result.last_checkpoint, model, step);

  nlohmann::json j;
  j["target_domain"] = cfg.target_domain;
  j["seed"] = cfg.seed;
  j["backbone"] = nn::backbone_name(cfg.model.backbone);
  j["ablation"] = {{"use_cint", cfg.ablation.use_cint},
                   {"use_cfac", cfg.ablation.use_cfac},
                   {"use_advm", cfg.ablation.use_advm}};
  j["best_epoch"] = result.best_epoch;
  j["best_val_accuracy"] = result.best_val_accuracy;
  nlohmann::json eps = nlohmann::json::array();
  for (const EpochMetrics& em : result.epochs) {
    eps.push_back({{"epoch", em.epoch},
                   {"lr", em.lr},
                   {"l_sup", em.l_sup},
                   {"l_inf", em.l_inf},
                   {"l_fac", em.l_fac},
                   {"total_model", em.total_model},
                   {"total_masker", em.total_masker},
                   {"val_accuracy", em.val_accuracy},
                   {"independence", em.independence}});
  }
  j["epochs"] = std::move(eps);
  std::ofstream out(result.metrics_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + result.metrics_path);
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed writing " + result.metrics_path);
  return result;
}

// ---------------------------------------------------------------------------

template struct CirlModel<float>;
template struct CirlModel<double>;
template CirlModel<float> build_model<float>(const nn::ModelSpec&,
                                             std::uint64_t);
template CirlModel<double> build_model<double>(const nn::ModelSpec&,
                                               std::uint64_t);
template void sgd_step<float>(nn::ParamRefs<float>&, double, double, double);
template void sgd_step<double>(nn::ParamRefs<double>&, double, double, double);
template void zero_grads<float>(nn::ParamRefs<float>&);
template void zero_grads<double>(nn::ParamRefs<double>&);
template double grad_norm<float>(const nn::ParamRefs<float>&);
template double grad_norm<double>(const nn::ParamRefs<double>&);
template Tensor<float> stack_branches<float>(const Tensor<float>&,
                                             const Tensor<float>&);
template Tensor<double> stack_branches<double>(const Tensor<double>&,
                                               const Tensor<double>&);
template LossBundle masker_objective<float>(CirlModel<float>&,
                                            const Tensor<float>&,
                                            const std::vector<int>&, bool,
                                            const TrainConfig&,
                                            const Tensor<float>&, bool);
template LossBundle masker_objective<double>(CirlModel<double>&,
                                             const Tensor<double>&,
                                             const std::vector<int>&, bool,
                                             const TrainConfig&,
                                             const Tensor<double>&, bool);
template LossBundle model_objective<float>(CirlModel<float>&,
                                           const Tensor<float>&,
                                           const std::vector<int>&, bool,
                                           const TrainConfig&,
                                           const Tensor<float>&, bool,
                                           const Tensor<float>*);
template LossBundle model_objective<double>(CirlModel<double>&,
                                            const Tensor<double>&,
                                            const std::vector<int>&, bool,
                                            const TrainConfig&,
                                            const Tensor<double>&, bool,
                                            const Tensor<double>*);
template LossBundle train_step<float>(CirlModel<float>&, const Tensor<float>&,
                                      const std::vector<int>&,
                                      const std::vector<int>&,
                                      const TrainConfig&, std::uint64_t,
                                      double);
template LossBundle train_step<double>(CirlModel<double>&,
                                       const Tensor<double>&,
                                       const std::vector<int>&,
                                       const std::vector<int>&,
                                       const TrainConfig&, std::uint64_t,
                                       double);

}  // namespace cirl::train
