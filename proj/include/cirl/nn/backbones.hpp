#pragma once

#include <memory>
#include <string>

#include "cirl/nn/layers.hpp"
#include "cirl/rng.hpp"
#include "cirl/tensor.hpp"

namespace cirl::nn {

enum class BackboneKind { convnet_digits, resnet18, resnet50 };

const char* backbone_name(BackboneKind kind);
BackboneKind parse_backbone(const std::string& name);

// Default representation width of each backbone (flattened conv features or
// the channel count entering global average pooling).
std::size_t default_feature_dim(BackboneKind kind);

struct ModelSpec {
  BackboneKind backbone = BackboneKind::convnet_digits;
  std::size_t feature_dim = 0;  // 0 = backbone default (256 / 512 / 2048)
  std::size_t num_classes = 0;
  bool pretrained = false;
  std::string weights_path;  // checkpoint to load when pretrained
  bool batch_norm = true;    // conv-net normalization toggle
};

// feature_dim with the 0-means-default rule applied.
std::size_t resolved_feature_dim(const ModelSpec& spec);

// Throws ConfigError on non-positive num_classes or a pretrained spec with
// no weights path.
void validate_model_spec(const ModelSpec& spec);

// The generator network. forward() consumes a {C, B, H, W} batch and emits
// the representation {B, N}; the input tensor must stay alive until
// backward() has run (convolutions keep a reference, not a copy).
template <class T>
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual Tensor<T> forward(const Tensor<T>& x, bool train) = 0;

  // Accumulates parameter gradients from dL/dr; the image gradient is not
  // materialized.
  virtual void backward(const Tensor<T>& d_r) = 0;

  virtual void init(Rng& rng) = 0;
  virtual void collect(ParamRefs<T>& out, const std::string& prefix) = 0;
  virtual void collect_buffers(BufferRefs<T>& out,
                               const std::string& prefix) = 0;
  virtual std::size_t feature_dim() const = 0;
};

// Four 3x3 conv layers (64 channels, optional batch-norm, ReLU, 2x2
// max-pooling each), flattened to 256 features; 32x32 RGB input only
// (ConfigError otherwise). A linear projection is appended when spec
// overrides feature_dim.
template <class T>
std::unique_ptr<Backbone<T>> build_convnet(const ModelSpec& spec, Rng& rng);

// Standard residual network (18: basic blocks, 50: bottlenecks) truncated
// before its classification layer; global average pooling yields 512 / 2048
// features. pretrained=true loads spec.weights_path and raises LoadError if
// the file is missing or fails integrity checks; it never falls back to
// random initialization.
template <class T>
std::unique_ptr<Backbone<T>> build_resnet(const ModelSpec& spec, Rng& rng);

// Dispatch on spec.backbone.
template <class T>
std::unique_ptr<Backbone<T>> build_backbone(const ModelSpec& spec, Rng& rng);

// Single affine layer N -> num_classes (softmax lives in the loss).
template <class T>
Linear<T> build_classifier(std::size_t feature_dim, std::size_t num_classes,
                           Rng& rng);

}  // namespace cirl::nn
