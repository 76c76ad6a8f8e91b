#include "cirl/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "json.hpp"

#include "cirl/data/image_io.hpp"
#include "cirl/digest.hpp"
#include "cirl/error.hpp"
#include "cirl/rng.hpp"

namespace fs = std::filesystem;

namespace cirl::data {

namespace {

std::vector<std::string> sorted_subdirs(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<std::string> sorted_files(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

std::string join(const std::set<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += ", ";
    out += s;
  }
  return out;
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading file: " + path.string());
  return sha256_hex(bytes);
}

}  // namespace

void assign_split(std::vector<Sample>& samples, double train_fraction,
                  std::uint64_t seed) {
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>>
      groups;
  for (std::size_t i = 0; i < samples.size(); ++i)
    groups[{samples[i].domain, samples[i].class_name}].push_back(i);
  for (auto& [key, idx] : groups) {
    // Anchor the permutation to sample ids, not vector positions, so a
    // reordered samples vector still gets identical markers.
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return samples[a].id < samples[b].id;
    });
    Rng rng(seed, "split:" + key.first + "/" + key.second, 0);
    rng.shuffle(idx.begin(), idx.end());
    const std::size_t n = idx.size();
    std::size_t n_train = n;
    if (n >= 2) {
      const auto want = static_cast<std::size_t>(
          std::llround(train_fraction * static_cast<double>(n)));
      n_train = std::clamp<std::size_t>(want, 1, n - 1);
    }
    for (std::size_t j = 0; j < n; ++j)
      samples[idx[j]].train_split = j < n_train;
  }
}

DomainDataset load_folder_dataset(const std::string& root,
                                  const LoadOptions& opts) {
  require(opts.image_size > 0, "dataset: image_size must be positive");
  require(opts.train_fraction > 0.0 && opts.train_fraction < 1.0,
          "dataset: train_fraction must lie in (0, 1)");
  const fs::path rootp(root);
  if (!fs::is_directory(rootp))
    throw IoError("dataset root is not a directory: " + root);

  DomainDataset ds;
  ds.image_h = ds.image_w = opts.image_size;
  ds.domains = sorted_subdirs(rootp);
  require(ds.domains.size() >= 2,
          "dataset: need at least 2 domain directories under " + root);

  ds.class_names = sorted_subdirs(rootp / ds.domains.front());
  require(!ds.class_names.empty(),
          "dataset: domain " + ds.domains.front() + " has no class folders");
  for (const auto& dom : ds.domains) {
    const auto classes = sorted_subdirs(rootp / dom);
    if (classes != ds.class_names) {
      std::set<std::string> ref(ds.class_names.begin(), ds.class_names.end());
      std::set<std::string> got(classes.begin(), classes.end());
      std::set<std::string> missing, extra;
      std::set_difference(ref.begin(), ref.end(), got.begin(), got.end(),
                          std::inserter(missing, missing.end()));
      std::set_difference(got.begin(), got.end(), ref.begin(), ref.end(),
                          std::inserter(extra, extra.end()));
      throw SchemaError("class sets differ across domains: domain '" + dom +
                        "' is missing {" + join(missing) + "} and has extra {" +
                        join(extra) + "} relative to domain '" +
                        ds.domains.front() + "'");
    }
  }

  struct PendingFile {
    std::string domain, class_name, rel;
    int label, domain_index;
  };
  std::vector<PendingFile> files;
  for (std::size_t d = 0; d < ds.domains.size(); ++d) {
    for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
      const fs::path dir = rootp / ds.domains[d] / ds.class_names[c];
      for (const auto& f : sorted_files(dir))
        files.push_back({ds.domains[d], ds.class_names[c],
                         (fs::path(ds.domains[d]) / ds.class_names[c] / f)
                             .generic_string(),
                         static_cast<int>(c), static_cast<int>(d)});
    }
  }
  require(!files.empty(), "dataset: no image files under " + root);

  const std::size_t hw = ds.image_h * ds.image_w;
  ds.images = Tensor<float>({files.size(), 3, ds.image_h, ds.image_w});
  std::size_t lossy_count = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const fs::path full = rootp / files[i].rel;
    bool lossy = false;
    ImageU8 img = read_image(full.string(), &lossy);
    if (lossy) ++lossy_count;
    img = resize_bilinear(img, ds.image_h, ds.image_w);
    float* dst = ds.images.data() + i * 3 * hw;
    for (std::size_t y = 0; y < ds.image_h; ++y)
      for (std::size_t x = 0; x < ds.image_w; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          dst[c * hw + y * ds.image_w + x] = img.at(y, x, c) / 255.0f;

    Sample s;
    s.domain = files[i].domain;
    s.class_name = files[i].class_name;
    s.file = files[i].rel;
    s.sha256 = file_sha256(full);
    s.label = files[i].label;
    s.domain_index = files[i].domain_index;
    s.id = static_cast<std::uint32_t>(i);
    ds.samples.push_back(std::move(s));
  }
  if (lossy_count > 0)
    std::cerr << "warning: " << lossy_count
              << " lossy JPEG file(s) loaded; decoded pixel values are "
                 "codec-dependent\n";

  assign_split(ds.samples, opts.train_fraction, opts.split_seed);
  return ds;
}

std::string manifest_json(const DomainDataset& ds) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : ds.samples)
    arr.push_back({{"domain", s.domain},
                   {"class", s.class_name},
                   {"file", s.file},
                   {"sha256", s.sha256},
                   {"split", s.train_split ? "train" : "val"}});
  return arr.dump(1);
}

std::pair<SourceView, TargetView> leave_one_domain_out(
    const DomainDataset& ds, const std::string& target) {
  const bool known = std::find(ds.domains.begin(), ds.domains.end(), target) !=
                     ds.domains.end();
  require(known, "leave_one_domain_out: unknown domain '" + target + "'");
  require(ds.domains.size() >= 2,
          "leave_one_domain_out: need at least one source domain");

  SourceView src;
  TargetView tgt;
  src.dataset = &ds;
  tgt.dataset = &ds;
  tgt.domain = target;
  for (const auto& dom : ds.domains)
    if (dom != target) src.domains.push_back(dom);
  for (const auto& s : ds.samples) {
    if (s.domain == target) {
      tgt.ids.push_back(s.id);
    } else if (s.train_split) {
      src.train_ids.push_back(s.id);
    } else {
      src.val_ids.push_back(s.id);
    }
  }
  return {std::move(src), std::move(tgt)};
}

Batch gather_batch(const DomainDataset& ds,
                   const std::vector<std::uint32_t>& ids) {
  require(!ids.empty(), "gather_batch: empty id list");
  const std::size_t hw = ds.image_h * ds.image_w;
  Batch b;
  b.images = Tensor<float>({3, ids.size(), ds.image_h, ds.image_w});
  b.ids = ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] < ds.samples.size(), "gather_batch: id out of range");
    const Sample& s = ds.samples[ids[i]];
    b.labels.push_back(s.label);
    b.domains.push_back(s.domain_index);
    const float* srcp = ds.images.data() + std::size_t(ids[i]) * 3 * hw;
    for (std::size_t c = 0; c < 3; ++c)
      std::copy(srcp + c * hw, srcp + (c + 1) * hw,
                b.images.data() + (c * ids.size() + i) * hw);
  }
  return b;
}

}  // namespace cirl::data
