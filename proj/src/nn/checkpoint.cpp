#include "cirl/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "cirl/digest.hpp"
#include "cirl/error.hpp"

namespace cirl::nn {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'R', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kDigestLen = 32;

template <class T>
const char* dtype_tag();
template <>
const char* dtype_tag<float>() {
  return "f32";
}
template <>
const char* dtype_tag<double>() {
  return "f64";
}

void append_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

nlohmann::json spec_to_json(const ModelSpec& spec) {
  return {{"backbone", backbone_name(spec.backbone)},
          {"feature_dim", spec.feature_dim},
          {"num_classes", spec.num_classes},
          {"pretrained", spec.pretrained},
          {"weights_path", spec.weights_path},
          {"batch_norm", spec.batch_norm}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.backbone = parse_backbone(j.at("backbone").get<std::string>());
  spec.feature_dim = j.at("feature_dim").get<std::size_t>();
  spec.num_classes = j.at("num_classes").get<std::size_t>();
  spec.pretrained = j.at("pretrained").get<bool>();
  spec.weights_path = j.at("weights_path").get<std::string>();
  spec.batch_norm = j.at("batch_norm").get<bool>();
  return spec;
}

}  // namespace

template <class T>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<NamedTensor<T>>& tensors) {
  nlohmann::json header = {{"dtype", dtype_tag<T>()},
                           {"step", meta.step},
                           {"spec", spec_to_json(meta.spec)}};
  auto& tlist = header["tensors"] = nlohmann::json::array();
  for (const auto& nt : tensors)
    tlist.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}});
  const std::string hjson = header.dump();

  std::string buf;
  buf.reserve(hjson.size() + 64);
  buf.append(kMagic, sizeof(kMagic));
  append_u32(buf, kVersion);
  append_u64(buf, hjson.size());
  buf += hjson;
  for (const auto& nt : tensors) {
    const std::size_t bytes = nt.tensor.size() * sizeof(T);
    const std::size_t off = buf.size();
    buf.resize(off + bytes);
    std::memcpy(buf.data() + off, nt.tensor.data(), bytes);
  }
  const auto digest = sha256_raw(buf.data(), buf.size());
  buf.append(reinterpret_cast<const char*>(digest.data()), kDigestLen);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (in.bad()) throw LoadError("failed reading checkpoint: " + path);

  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  const std::size_t prelude = sizeof(kMagic) + 4 + 8;
  if (buf.size() < prelude + kDigestLen)
    throw LoadError("truncated checkpoint: " + path);
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw LoadError("not a checkpoint file: " + path);
  const std::uint32_t version = read_u32(p + sizeof(kMagic));
  if (version != kVersion)
    throw LoadError("unsupported checkpoint version " +
                    std::to_string(version) + ": " + path);
  const std::uint64_t hlen = read_u64(p + sizeof(kMagic) + 4);
  if (prelude + hlen + kDigestLen > buf.size())
    throw LoadError("truncated checkpoint: " + path);

  const auto digest = sha256_raw(buf.data(), buf.size() - kDigestLen);
  if (std::memcmp(digest.data(), buf.data() + buf.size() - kDigestLen,
                  kDigestLen) != 0)
    throw LoadError("checkpoint digest mismatch (corrupted file): " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(prelude, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed checkpoint header in " + path + ": " +
                    e.what());
  }

  Checkpoint<T> ckpt;
  try {
    if (header.at("dtype").get<std::string>() != dtype_tag<T>())
      throw LoadError("checkpoint dtype is " +
                      header.at("dtype").get<std::string>() + ", expected " +
                      dtype_tag<T>() + ": " + path);
    ckpt.meta.step = header.at("step").get<std::uint64_t>();
    ckpt.meta.spec = spec_from_json(header.at("spec"));

    std::size_t off = prelude + hlen;
    const std::size_t end = buf.size() - kDigestLen;
    for (const auto& tj : header.at("tensors")) {
      NamedTensor<T> nt;
      nt.name = tj.at("name").get<std::string>();
      const auto shape = tj.at("shape").get<std::vector<std::size_t>>();
      std::size_t numel = 1;
      for (std::size_t d : shape) {
        if (d == 0 || numel > std::numeric_limits<std::size_t>::max() / d)
          throw LoadError("implausible tensor shape in checkpoint: " + path);
        numel *= d;
      }
      const std::size_t bytes = numel * sizeof(T);
      if (off + bytes > end)
        throw LoadError("checkpoint data shorter than its header claims: " +
                        path);
      nt.tensor = Tensor<T>(shape);
      std::memcpy(nt.tensor.data(), buf.data() + off, bytes);
      off += bytes;
      ckpt.tensors.push_back(std::move(nt));
    }
    if (off != end)
      throw LoadError("checkpoint carries unexpected trailing data: " + path);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed checkpoint header in " + path + ": " +
                    e.what());
  }
  return ckpt;
}

template void save_checkpoint<float>(const std::string&, const CheckpointMeta&,
                                     const std::vector<NamedTensor<float>>&);
template void save_checkpoint<double>(
    const std::string&, const CheckpointMeta&,
    const std::vector<NamedTensor<double>>&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace cirl::nn
