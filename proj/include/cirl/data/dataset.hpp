#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cirl/tensor.hpp"

namespace cirl::data {

struct Sample {
  std::string domain;
  std::string class_name;
  std::string file;  // path relative to the dataset root; "" for synthetic
  std::string sha256;
  int label = 0;
  int domain_index = 0;
  std::uint32_t id = 0;  // index into DomainDataset::images
  bool train_split = true;
};

// All domains of a multi-domain classification dataset, image data included.
// Class label sets are identical across domains by construction; loaders
// reject anything else.
struct DomainDataset {
  std::vector<std::string> domains;
  std::vector<std::string> class_names;
  std::size_t image_h = 32, image_w = 32;
  std::vector<Sample> samples;  // ordered by id
  Tensor<float> images;         // {num_samples, 3, H, W}, values in [0, 1]
};

struct LoadOptions {
  std::size_t image_size = 32;  // square resize target (32 digits, 224 resnet)
  double train_fraction = 0.8;  // per-domain, per-class train/val split
  std::uint64_t split_seed = 0;
};

// Loads a `<root>/<domain>/<class>/<image file>` tree (PNG or JPEG). Domains,
// classes and files are taken in sorted order, so the manifest is a pure
// function of the tree contents. Raises SchemaError (listing the delta) when
// class sets differ across domains and IoError (with the path) on unreadable
// files.
DomainDataset load_folder_dataset(const std::string& root,
                                  const LoadOptions& opts = {});

// JSON manifest: one {domain, class, file, sha256, split} record per sample,
// in id order. Identical trees produce byte-identical manifests.
std::string manifest_json(const DomainDataset& ds);

// Assigns the train/val markers per (domain, class) group from a seeded
// stream; independent of sample order and of other groups.
void assign_split(std::vector<Sample>& samples, double train_fraction,
                  std::uint64_t seed);

// Training-path view: only source-domain sample ids are reachable.
struct SourceView {
  const DomainDataset* dataset = nullptr;
  std::vector<std::string> domains;  // source domain names
  std::vector<std::uint32_t> train_ids;
  std::vector<std::uint32_t> val_ids;
};

// Evaluation-only view of the held-out domain.
struct TargetView {
  const DomainDataset* dataset = nullptr;
  std::string domain;
  std::vector<std::uint32_t> ids;
};

// Reserves `target` entirely for evaluation; the remaining domains keep their
// train/val split. Unknown domain -> InvalidInputError.
std::pair<SourceView, TargetView> leave_one_domain_out(
    const DomainDataset& ds, const std::string& target);

// One assembled mini-batch in the {C, B, H, W} training layout.
struct Batch {
  Tensor<float> images;  // {3, B, H, W}
  std::vector<int> labels;
  std::vector<int> domains;
  std::vector<std::uint32_t> ids;
};

Batch gather_batch(const DomainDataset& ds,
                   const std::vector<std::uint32_t>& ids);

}  // namespace cirl::data
