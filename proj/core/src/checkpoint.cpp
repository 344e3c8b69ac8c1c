#include <bit>
#include <cstring>
#include <fstream>

#include <openssl/evp.h>

#include "slod/errors.hpp"
#include "slod/train.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace slod {

namespace {

constexpr char kMagic[4] = {'S', 'L', 'O', 'D'};
constexpr std::size_t kPreamble = 4 + 4 + 8;

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[offset + i]) << (8 * i);
  return value;
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : ckpt.params) {
    manifest.push_back({{"name", p.name},
                        {"shape", p.tensor.shape()},
                        {"offset", offset},
                        {"count", p.tensor.size()}});
    offset += p.tensor.size() * sizeof(float);
  }
  const nlohmann::json header{{"format", "slod-checkpoint"},
                              {"model", ckpt.spec},
                              {"provenance", ckpt.provenance},
                              {"parameters", manifest}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPreamble + text.size() + offset);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& p : ckpt.params) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(p.tensor.data().data());
    out.insert(out.end(), raw, raw + p.tensor.size() * sizeof(float));
  }
  return out;
}

nlohmann::json checkpoint_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreamble) throw LengthError("checkpoint: truncated preamble");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic (expected SLOD)");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kPreamble) throw LengthError("checkpoint: truncated header");
  try {
    return nlohmann::json::parse(bytes.begin() + kPreamble, bytes.begin() + kPreamble + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  const nlohmann::json header = checkpoint_header(bytes);
  const std::size_t payload_start = kPreamble + get_le<std::uint64_t>(bytes, 8);
  const auto payload = bytes.subspan(payload_start);
  Checkpoint ckpt;
  try {
    header.at("model").get_to(ckpt.spec);
    header.at("provenance").get_to(ckpt.provenance);
    std::size_t expected_end = 0;
    for (const auto& entry : header.at("parameters")) {
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (count != element_count(shape)) throw FormatError("checkpoint: manifest count disagrees with shape");
      if (offset + count * sizeof(float) > payload.size()) throw LengthError("checkpoint: truncated parameter data");
      std::vector<float> data(count);
      std::memcpy(data.data(), payload.data() + offset, count * sizeof(float));
      Tensor<float> t(shape, std::move(data));
      t.set_requires_grad(true);
      ckpt.params.push_back({entry.at("name").get<std::string>(), std::move(t)});
      expected_end = std::max(expected_end, offset + count * sizeof(float));
    }
    if (expected_end != payload.size()) throw LengthError("checkpoint: trailing bytes after parameter data");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: invalid header: ") + e.what());
  }
  const auto layout = parameter_layout(ckpt.spec);
  if (layout.size() != ckpt.params.size()) throw FormatError("checkpoint: parameter manifest does not match model");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != ckpt.params[i].name || layout[i].second != ckpt.params[i].tensor.shape()) {
      throw FormatError("checkpoint: unexpected parameter " + ckpt.params[i].name);
    }
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  try {
    return deserialize_checkpoint(read_file_bytes(path));
  } catch (const LengthError& e) {
    throw LengthError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string checkpoint_hash(const Checkpoint& ckpt) { return sha256_hex(serialize_checkpoint(ckpt)); }

std::string parameters_hash(const Parameters<float>& params) {
  std::vector<std::uint8_t> buf;
  for (const auto& p : params) {
    buf.insert(buf.end(), p.name.begin(), p.name.end());
    buf.push_back(0);
    for (std::size_t d : p.tensor.shape()) put_le<std::uint64_t>(buf, d);
    const auto* raw = reinterpret_cast<const std::uint8_t*>(p.tensor.data().data());
    buf.insert(buf.end(), raw, raw + p.tensor.size() * sizeof(float));
  }
  return sha256_hex(buf);
}

std::string dataset_tag(const LabeledDataset& ds) {
  std::vector<std::uint8_t> buf;
  for (std::size_t d : ds.images().shape()) put_le<std::uint64_t>(buf, d);
  const auto* raw = reinterpret_cast<const std::uint8_t*>(ds.images().data().data());
  buf.insert(buf.end(), raw, raw + ds.images().size() * sizeof(float));
  if (ds.has_labels()) {
    for (int l : ds.labels()) put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(l));
  }
  return ds.name() + "@" + sha256_hex(buf).substr(0, 16);
}

bool same_checkpoint(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.spec == b.spec) || !(a.provenance == b.provenance) || a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const auto& x = a.params[i];
    const auto& y = b.params[i];
    if (x.name != y.name || x.tensor.shape() != y.tensor.shape()) return false;
    if (std::memcmp(x.tensor.data().data(), y.tensor.data().data(), x.tensor.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace slod
