#include "phantom/nanoformer/checkpoint.hpp"

#include <bit>
#include <iterator>
#include <span>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace phantom::model {

namespace {

constexpr char kMagic[8] = {'P', 'H', 'N', 'T', 'C', 'K', 'P', 'T'};

static_assert(sizeof(float) == 4);

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

void put_floats(std::ostream& os, std::span<const float> data) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 4));
  } else {
    for (float f : data) {
      const auto u = std::bit_cast<std::uint32_t>(f);
      unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                            static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
      os.write(reinterpret_cast<const char*>(b), 4);
    }
  }
}

void get_floats(const unsigned char* src, std::span<float> dst) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const unsigned char* b = src + 4 * i;
    const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                            (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    dst[i] = std::bit_cast<float>(u);
  }
}

}  // namespace

Model<float> Checkpoint::model() const {
  Model<float> m(config);
  if (m.params().size() != params.size()) {
    throw std::runtime_error("checkpoint: " + std::to_string(params.size()) + " parameter tensors, config implies " +
                             std::to_string(m.params().size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != m.param_names()[i] || params[i].value.shape() != m.params()[i].shape()) {
      throw std::runtime_error("checkpoint: parameter " + params[i].name + " " + nd::shape_str(params[i].value.shape()) +
                               " does not match model " + m.param_names()[i] + " " +
                               nd::shape_str(m.params()[i].shape()));
    }
    m.params()[i] = params[i].value;
  }
  return m;
}

const NamedTensor* Checkpoint::find_extra(const std::string& name) const {
  for (const auto& t : extra)
    if (t.name == name) return &t;
  return nullptr;
}

Checkpoint make_checkpoint(const Model<float>& model, std::vector<NamedTensor> extra, nlohmann::json meta) {
  Checkpoint c;
  c.config = model.config();
  for (std::size_t i = 0; i < model.params().size(); ++i) c.params.push_back({model.param_names()[i], model.params()[i]});
  c.extra = std::move(extra);
  c.meta = std::move(meta);
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  auto describe = [&](const NamedTensor& t, const char* group) {
    manifest.push_back({{"name", t.name},
                        {"group", group},
                        {"shape", t.value.shape()},
                        {"offset", offset},
                        {"count", t.value.size()}});
    offset += t.value.size() * 4;
  };
  for (const auto& t : ckpt.params) describe(t, "param");
  for (const auto& t : ckpt.extra) describe(t, "extra");
  const nlohmann::json header{{"format_version", kCheckpointVersion},
                              {"config", ckpt.config},
                              {"tensors", manifest},
                              {"data_bytes", offset},
                              {"meta", ckpt.meta}};
  const std::string hs = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    os.write(kMagic, 8);
    put_u64(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& t : ckpt.params) put_floats(os, t.value.data());
    for (const auto& t : ckpt.extra) put_floats(os, t.value.data());
    if (!os) throw std::runtime_error("write failed for checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string() + ": ";
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw std::runtime_error(where + "bad magic");
  const std::uint64_t hlen = get_u64(bytes.data() + 8);
  if (hlen > bytes.size() - 16) throw std::runtime_error(where + "truncated header");
  const auto header =
      nlohmann::json::parse(std::string(reinterpret_cast<const char*>(bytes.data() + 16), static_cast<std::size_t>(hlen)));
  if (header.value("format_version", 0) != kCheckpointVersion) {
    throw std::runtime_error(where + "unsupported format version " + header.value("format_version", nlohmann::json()).dump());
  }
  const std::size_t data_start = 16 + static_cast<std::size_t>(hlen);
  const auto data_bytes = header.at("data_bytes").get<std::uint64_t>();
  if (bytes.size() - data_start != data_bytes) {
    throw std::runtime_error(where + "expected " + std::to_string(data_bytes) + " data bytes, found " +
                             std::to_string(bytes.size() - data_start));
  }
  Checkpoint c;
  c.config = header.at("config").get<ModelConfig>();
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    const auto shape = t.at("shape").get<nd::Shape>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    const auto count = t.at("count").get<std::uint64_t>();
    if (nd::numel(shape) != count || offset + count * 4 > data_bytes) {
      throw std::runtime_error(where + "inconsistent manifest entry " + t.at("name").get<std::string>());
    }
    NamedTensor nt{t.at("name").get<std::string>(), nd::Tensor<float>(shape)};
    get_floats(bytes.data() + data_start + offset, nt.value.data());
    (t.at("group").get<std::string>() == "param" ? c.params : c.extra).push_back(std::move(nt));
  }
  c.model();
  return c;
}

}  // namespace phantom::model
