#include "rlgan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace rlgan {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointTruncatedError(std::string("checkpoint truncated while reading ") + what);
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename U>
  U get(const char* what) {
    auto s = take(sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<U>(s[i]) << (8 * i));
    return value;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string dims_string(const std::vector<std::uint32_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? ", " : "") + std::to_string(dims[i]);
  return s + "]";
}

}  // namespace

void Checkpoint::add(CheckpointEntry entry) {
  if (entry.name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw CheckpointError("checkpoint entry name too long");
  }
  if (entry.dims.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw CheckpointError("checkpoint entry '" + entry.name + "' has too many dimensions");
  }
  if (element_count(entry.dims) != entry.values.size()) {
    throw CheckpointError("checkpoint entry '" + entry.name + "' payload does not match its shape");
  }
  if (contains(entry.name)) throw CheckpointError("duplicate checkpoint entry '" + entry.name + "'");
  entries_.push_back(std::move(entry));
}

void Checkpoint::add(const nn::Sequential<float>& net) {
  for (const auto* p : net.params()) {
    add(CheckpointEntry{p->name, p->shape, std::vector<float>(p->value.data(), p->value.data() + p->value.size())});
  }
}

void Checkpoint::restore(nn::Sequential<float>& net) const {
  for (auto* p : net.params()) {
    if (!contains(p->name)) throw CheckpointMismatchError("checkpoint has no entry '" + p->name + "'");
    const auto& e = find(p->name);
    if (e.dims != p->shape) {
      throw CheckpointMismatchError("checkpoint entry '" + p->name + "' has shape " + dims_string(e.dims) +
                                    " but the network expects " + dims_string(p->shape));
    }
    std::memcpy(p->value.data(), e.values.data(), e.values.size() * sizeof(float));
  }
}

const CheckpointEntry& Checkpoint::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw CheckpointMismatchError("checkpoint has no entry '" + std::string(name) + "'");
}

bool Checkpoint::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_le(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put_le(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) put_le(out, d);
    for (float v : e.values) put_le(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes) {
  const auto head = bytes.first(std::min(bytes.size(), kMagic.size()));
  // "RLGN" followed by a different version tag.
  const bool family = head.size() >= 4 && std::memcmp(head.data(), kMagic.data(), 4) == 0;
  if (head.size() == kMagic.size() && std::memcmp(head.data(), kMagic.data(), kMagic.size()) != 0) {
    if (family) throw CheckpointVersionError("unsupported checkpoint version");
    throw CheckpointFormatError("not a checkpoint (bad magic)");
  }
  if (head.size() < kMagic.size()) {
    if (std::memcmp(head.data(), kMagic.data(), head.size()) == 0) {
      throw CheckpointTruncatedError("checkpoint truncated inside the header");
    }
    throw CheckpointFormatError("not a checkpoint (bad magic)");
  }

  Reader r(bytes.subspan(kMagic.size()));
  Checkpoint ckpt;
  const auto count = r.get<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name_len = r.get<std::uint16_t>("name length");
    const auto name = r.take(name_len, "name");
    e.name.assign(name.begin(), name.end());
    const auto rank = r.get<std::uint8_t>("rank");
    for (std::uint8_t k = 0; k < rank; ++k) e.dims.push_back(r.get<std::uint32_t>("dims"));
    const std::size_t n = element_count(e.dims);
    e.values.reserve(n);
    for (std::size_t k = 0; k < n; ++k) e.values.push_back(std::bit_cast<float>(r.get<std::uint32_t>("payload")));
    ckpt.add(std::move(e));
  }
  if (!r.done()) throw CheckpointFormatError("trailing bytes after the last checkpoint entry");
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing '" + path.string() + "'");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace rlgan
