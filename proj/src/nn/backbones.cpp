#include "cirl/nn/backbones.hpp"

#include <array>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cirl/error.hpp"
#include "cirl/kernels.hpp"
#include "cirl/nn/checkpoint.hpp"

namespace cirl::nn {

const char* backbone_name(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::convnet_digits:
      return "convnet_digits";
    case BackboneKind::resnet18:
      return "resnet18";
    case BackboneKind::resnet50:
      return "resnet50";
  }
  return "?";
}

BackboneKind parse_backbone(const std::string& name) {
  if (name == "convnet_digits") return BackboneKind::convnet_digits;
  if (name == "resnet18") return BackboneKind::resnet18;
  if (name == "resnet50") return BackboneKind::resnet50;
  throw ConfigError("unknown backbone '" + name +
                    "' (expected convnet_digits, resnet18 or resnet50)");
}

std::size_t default_feature_dim(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::convnet_digits:
      return 256;
    case BackboneKind::resnet18:
      return 512;
    case BackboneKind::resnet50:
      return 2048;
  }
  return 0;
}

std::size_t resolved_feature_dim(const ModelSpec& spec) {
  return spec.feature_dim == 0 ? default_feature_dim(spec.backbone)
                               : spec.feature_dim;
}

void validate_model_spec(const ModelSpec& spec) {
  require_config(spec.num_classes >= 1, "model: num_classes must be positive");
  require_config(!spec.pretrained || !spec.weights_path.empty(),
                 "model: pretrained=true requires a weights path");
}

namespace {

// Copies checkpoint tensors into the network's parameters and buffers by
// name. Anything missing or shape-mismatched is a hard error: a pretrained
// build never falls back to random initialization.
template <class T>
void apply_pretrained(Backbone<T>& net, const std::string& path) {
  Checkpoint<T> ckpt = load_checkpoint<T>(path);
  std::unordered_map<std::string, const Tensor<T>*> by_name;
  for (const auto& nt : ckpt.tensors) by_name.emplace(nt.name, &nt.tensor);

  ParamRefs<T> params;
  BufferRefs<T> buffers;
  net.collect(params, "g");
  net.collect_buffers(buffers, "g");

  auto fetch = [&](const std::string& name, const Tensor<T>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw LoadError("pretrained weights at " + path + " missing tensor " +
                      name);
    if (!it->second->same_shape(dst))
      throw LoadError("pretrained tensor " + name + " in " + path +
                      " has the wrong shape");
    return it->second;
  };
  for (auto& p : params) p.param->value = *fetch(p.name, p.param->value);
  for (auto& b : buffers) *b.tensor = *fetch(b.name, *b.tensor);
}

// ---------------------------------------------------------------------------

template <class T>
class ConvNetDigits final : public Backbone<T> {
 public:
  static constexpr std::size_t kWidth = 64;
  static constexpr std::size_t kFlatDim = 256;  // 64 channels x 2 x 2

  ConvNetDigits(std::size_t feature_dim, bool batch_norm)
      : use_bn_(batch_norm), out_dim_(feature_dim) {
    std::size_t in_c = 3;
    for (int i = 0; i < 4; ++i) {
      convs_.emplace_back(in_c, kWidth, 3, 1, 1);
      if (use_bn_) bns_.emplace_back(kWidth);
      pools_.emplace_back(2, 2, 0);
      in_c = kWidth;
    }
    if (out_dim_ != kFlatDim) proj_.emplace(kFlatDim, out_dim_);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    require_config(x.rank() == 4 && x.dim(0) == 3 && x.dim(2) == 32 &&
                       x.dim(3) == 32,
                   "convnet_digits expects 3-channel 32x32 input");
    const Tensor<T>* cur = &x;
    for (std::size_t i = 0; i < 4; ++i) {
      cur = &convs_[i].forward(*cur);
      if (use_bn_) cur = &bns_[i].forward(*cur, train);
      cur = &relus_[i].forward(*cur);
      cur = &pools_[i].forward(*cur);
    }
    const Tensor<T>* r = &flatten_.forward(*cur);
    if (proj_) r = &proj_->forward(*r);
    return *r;
  }

  void backward(const Tensor<T>& d_r) override {
    Tensor<T> g = proj_ ? proj_->backward(d_r) : d_r;
    g = flatten_.backward(g);
    for (std::size_t i = 4; i-- > 0;) {
      g = pools_[i].backward(g);
      g = relus_[i].backward(g);
      if (use_bn_) g = bns_[i].backward(g);
      g = convs_[i].backward(g, i > 0);
    }
  }

  void init(Rng& rng) override {
    for (auto& c : convs_) c.init(rng);
    if (proj_) proj_->init(rng, false);
  }

  void collect(ParamRefs<T>& out, const std::string& prefix) override {
    for (std::size_t i = 0; i < 4; ++i) {
      convs_[i].collect(out, prefix + ".conv" + std::to_string(i + 1));
      if (use_bn_)
        bns_[i].collect(out, prefix + ".bn" + std::to_string(i + 1));
    }
    if (proj_) proj_->collect(out, prefix + ".proj");
  }

  void collect_buffers(BufferRefs<T>& out, const std::string& prefix) override {
    if (!use_bn_) return;
    for (std::size_t i = 0; i < 4; ++i)
      bns_[i].collect_buffers(out, prefix + ".bn" + std::to_string(i + 1));
  }

  std::size_t feature_dim() const override { return out_dim_; }

 private:
  bool use_bn_;
  std::size_t out_dim_;
  std::vector<Conv2d<T>> convs_;
  std::vector<BatchNorm2d<T>> bns_;
  std::array<Relu<T>, 4> relus_;
  std::vector<MaxPool2d<T>> pools_;
  Flatten<T> flatten_;
  std::optional<Linear<T>> proj_;
};

// ---------------------------------------------------------------------------

template <class T>
class BasicBlock {
 public:
  static constexpr std::size_t kExpansion = 1;

  BasicBlock(std::size_t in_c, std::size_t width, std::size_t stride)
      : conv1_(in_c, width, 3, stride, 1),
        bn1_(width),
        conv2_(width, width, 3, 1, 1),
        bn2_(width) {
    if (stride != 1 || in_c != width * kExpansion) {
      down_conv_.emplace(in_c, width * kExpansion, 1, stride, 0);
      down_bn_.emplace(width * kExpansion);
    }
  }

  const Tensor<T>& forward(const Tensor<T>& x, bool train) {
    const Tensor<T>& a =
        relu1_.forward(bn1_.forward(conv1_.forward(x), train));
    sum_ = bn2_.forward(conv2_.forward(a), train);
    const Tensor<T>& skip =
        down_conv_ ? down_bn_->forward(down_conv_->forward(x), train) : x;
    kernels::axpy<T>(T(1), skip.data(), sum_.data(), sum_.size());
    return relu_out_.forward(sum_);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> d_sum = relu_out_.backward(dy);
    Tensor<T> g = bn2_.backward(d_sum);
    g = conv2_.backward(g);
    g = relu1_.backward(g);
    g = bn1_.backward(g);
    Tensor<T> dx = conv1_.backward(g);
    if (down_conv_) {
      Tensor<T> s = down_bn_->backward(d_sum);
      s = down_conv_->backward(s);
      kernels::axpy<T>(T(1), s.data(), dx.data(), dx.size());
    } else {
      kernels::axpy<T>(T(1), d_sum.data(), dx.data(), dx.size());
    }
    return dx;
  }

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    if (down_conv_) down_conv_->init(rng);
  }

  void collect(ParamRefs<T>& out, const std::string& prefix) {
    conv1_.collect(out, prefix + ".conv1");
    bn1_.collect(out, prefix + ".bn1");
    conv2_.collect(out, prefix + ".conv2");
    bn2_.collect(out, prefix + ".bn2");
    if (down_conv_) {
      down_conv_->collect(out, prefix + ".down.conv");
      down_bn_->collect(out, prefix + ".down.bn");
    }
  }

  void collect_buffers(BufferRefs<T>& out, const std::string& prefix) {
    bn1_.collect_buffers(out, prefix + ".bn1");
    bn2_.collect_buffers(out, prefix + ".bn2");
    if (down_bn_) down_bn_->collect_buffers(out, prefix + ".down.bn");
  }

 private:
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn2_;
  Relu<T> relu1_, relu_out_;
  std::optional<Conv2d<T>> down_conv_;
  std::optional<BatchNorm2d<T>> down_bn_;
  Tensor<T> sum_;
};

template <class T>
class Bottleneck {
 public:
  static constexpr std::size_t kExpansion = 4;

  Bottleneck(std::size_t in_c, std::size_t width, std::size_t stride)
      : conv1_(in_c, width, 1, 1, 0),
        bn1_(width),
        conv2_(width, width, 3, stride, 1),
        bn2_(width),
        conv3_(width, width * kExpansion, 1, 1, 0),
        bn3_(width * kExpansion) {
    if (stride != 1 || in_c != width * kExpansion) {
      down_conv_.emplace(in_c, width * kExpansion, 1, stride, 0);
      down_bn_.emplace(width * kExpansion);
    }
  }

  const Tensor<T>& forward(const Tensor<T>& x, bool train) {
    const Tensor<T>& a =
        relu1_.forward(bn1_.forward(conv1_.forward(x), train));
    const Tensor<T>& b =
        relu2_.forward(bn2_.forward(conv2_.forward(a), train));
    sum_ = bn3_.forward(conv3_.forward(b), train);
    const Tensor<T>& skip =
        down_conv_ ? down_bn_->forward(down_conv_->forward(x), train) : x;
    kernels::axpy<T>(T(1), skip.data(), sum_.data(), sum_.size());
    return relu_out_.forward(sum_);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> d_sum = relu_out_.backward(dy);
    Tensor<T> g = bn3_.backward(d_sum);
    g = conv3_.backward(g);
    g = relu2_.backward(g);
    g = bn2_.backward(g);
    g = conv2_.backward(g);
    g = relu1_.backward(g);
    g = bn1_.backward(g);
    Tensor<T> dx = conv1_.backward(g);
    if (down_conv_) {
      Tensor<T> s = down_bn_->backward(d_sum);
      s = down_conv_->backward(s);
      kernels::axpy<T>(T(1), s.data(), dx.data(), dx.size());
    } else {
      kernels::axpy<T>(T(1), d_sum.data(), dx.data(), dx.size());
    }
    return dx;
  }

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    conv3_.init(rng);
    if (down_conv_) down_conv_->init(rng);
  }

  void collect(ParamRefs<T>& out, const std::string& prefix) {
    conv1_.collect(out, prefix + ".conv1");
    bn1_.collect(out, prefix + ".bn1");
    conv2_.collect(out, prefix + ".conv2");
    bn2_.collect(out, prefix + ".bn2");
    conv3_.collect(out, prefix + ".conv3");
    bn3_.collect(out, prefix + ".bn3");
    if (down_conv_) {
      down_conv_->collect(out, prefix + ".down.conv");
      down_bn_->collect(out, prefix + ".down.bn");
    }
  }

  void collect_buffers(BufferRefs<T>& out, const std::string& prefix) {
    bn1_.collect_buffers(out, prefix + ".bn1");
    bn2_.collect_buffers(out, prefix + ".bn2");
    bn3_.collect_buffers(out, prefix + ".bn3");
    if (down_bn_) down_bn_->collect_buffers(out, prefix + ".down.bn");
  }

 private:
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn2_;
  Conv2d<T> conv3_;
  BatchNorm2d<T> bn3_;
  Relu<T> relu1_, relu2_, relu_out_;
  std::optional<Conv2d<T>> down_conv_;
  std::optional<BatchNorm2d<T>> down_bn_;
  Tensor<T> sum_;
};

template <class T, class Block>
class ResNet final : public Backbone<T> {
 public:
  ResNet(const std::array<std::size_t, 4>& depths, std::size_t feature_dim)
      : stem_(3, 64, 7, 2, 3),
        stem_bn_(64),
        stem_pool_(3, 2, 1),
        out_dim_(feature_dim) {
    const std::size_t widths[4] = {64, 128, 256, 512};
    std::size_t in_c = 64;
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t d = 0; d < depths[s]; ++d) {
        blocks_.emplace_back(in_c, widths[s], (s > 0 && d == 0) ? 2 : 1);
        names_.push_back("layer" + std::to_string(s + 1) + "." +
                         std::to_string(d));
        in_c = widths[s] * Block::kExpansion;
      }
    }
    flat_dim_ = in_c;
    if (out_dim_ != flat_dim_) proj_.emplace(flat_dim_, out_dim_);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    require_config(x.rank() == 4 && x.dim(0) == 3,
                   "resnet expects 3-channel input");
    require_config(x.dim(2) >= 32 && x.dim(3) >= 32,
                   "resnet expects at least 32x32 input");
    const Tensor<T>* cur =
        &stem_pool_.forward(stem_relu_.forward(stem_bn_.forward(
            stem_.forward(x), train)));
    for (auto& blk : blocks_) cur = &blk.forward(*cur, train);
    const Tensor<T>* r = &gap_.forward(*cur);
    if (proj_) r = &proj_->forward(*r);
    return *r;
  }

  void backward(const Tensor<T>& d_r) override {
    Tensor<T> g = proj_ ? proj_->backward(d_r) : d_r;
    g = gap_.backward(g);
    for (std::size_t i = blocks_.size(); i-- > 0;) g = blocks_[i].backward(g);
    g = stem_pool_.backward(g);
    g = stem_relu_.backward(g);
    g = stem_bn_.backward(g);
    stem_.backward(g, false);
  }

  void init(Rng& rng) override {
    stem_.init(rng);
    for (auto& blk : blocks_) blk.init(rng);
    if (proj_) proj_->init(rng, false);
  }

  void collect(ParamRefs<T>& out, const std::string& prefix) override {
    stem_.collect(out, prefix + ".stem");
    stem_bn_.collect(out, prefix + ".stem_bn");
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(out, prefix + "." + names_[i]);
    if (proj_) proj_->collect(out, prefix + ".proj");
  }

  void collect_buffers(BufferRefs<T>& out, const std::string& prefix) override {
    stem_bn_.collect_buffers(out, prefix + ".stem_bn");
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect_buffers(out, prefix + "." + names_[i]);
  }

  std::size_t feature_dim() const override { return out_dim_; }

 private:
  Conv2d<T> stem_;
  BatchNorm2d<T> stem_bn_;
  Relu<T> stem_relu_;
  MaxPool2d<T> stem_pool_;
  std::vector<Block> blocks_;
  std::vector<std::string> names_;
  GlobalAvgPool<T> gap_;
  std::optional<Linear<T>> proj_;
  std::size_t flat_dim_ = 0;
  std::size_t out_dim_ = 0;
};

}  // namespace

template <class T>
std::unique_ptr<Backbone<T>> build_convnet(const ModelSpec& spec, Rng& rng) {
  validate_model_spec(spec);
  require_config(spec.backbone == BackboneKind::convnet_digits,
                 "build_convnet: spec names a different backbone");
  auto net = std::make_unique<ConvNetDigits<T>>(resolved_feature_dim(spec),
                                                spec.batch_norm);
  net->init(rng);
  if (spec.pretrained) apply_pretrained<T>(*net, spec.weights_path);
  return net;
}

template <class T>
std::unique_ptr<Backbone<T>> build_resnet(const ModelSpec& spec, Rng& rng) {
  validate_model_spec(spec);
  std::unique_ptr<Backbone<T>> net;
  if (spec.backbone == BackboneKind::resnet18) {
    net = std::make_unique<ResNet<T, BasicBlock<T>>>(
        std::array<std::size_t, 4>{2, 2, 2, 2}, resolved_feature_dim(spec));
  } else if (spec.backbone == BackboneKind::resnet50) {
    net = std::make_unique<ResNet<T, Bottleneck<T>>>(
        std::array<std::size_t, 4>{3, 4, 6, 3}, resolved_feature_dim(spec));
  } else {
    throw ConfigError("build_resnet: spec names a non-residual backbone");
  }
  net->init(rng);
  if (spec.pretrained) apply_pretrained<T>(*net, spec.weights_path);
  return net;
}

template <class T>
std::unique_ptr<Backbone<T>> build_backbone(const ModelSpec& spec, Rng& rng) {
  if (spec.backbone == BackboneKind::convnet_digits)
    return build_convnet<T>(spec, rng);
  return build_resnet<T>(spec, rng);
}

template <class T>
Linear<T> build_classifier(std::size_t feature_dim, std::size_t num_classes,
                           Rng& rng) {
  require_config(feature_dim >= 1 && num_classes >= 1,
                 "classifier: dimensions must be positive");
  Linear<T> h(feature_dim, num_classes);
  h.init(rng, false);
  return h;
}

template std::unique_ptr<Backbone<float>> build_convnet<float>(
    const ModelSpec&, Rng&);
template std::unique_ptr<Backbone<double>> build_convnet<double>(
    const ModelSpec&, Rng&);
template std::unique_ptr<Backbone<float>> build_resnet<float>(const ModelSpec&,
                                                              Rng&);
template std::unique_ptr<Backbone<double>> build_resnet<double>(
    const ModelSpec&, Rng&);
template std::unique_ptr<Backbone<float>> build_backbone<float>(
    const ModelSpec&, Rng&);
template std::unique_ptr<Backbone<double>> build_backbone<double>(
    const ModelSpec&, Rng&);
template Linear<float> build_classifier<float>(std::size_t, std::size_t, Rng&);
template Linear<double> build_classifier<double>(std::size_t, std::size_t,
                                                 Rng&);

}  // namespace cirl::nn
