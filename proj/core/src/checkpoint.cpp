#include <bit>
#include <cstring>

#include <json.hpp>

#include "fpx/error.hpp"
#include "fpx/network.hpp"
#include "hash.hpp"

namespace fpx {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    check(n <= in_.size() - pos_, ErrorCode::DecodeError, "checkpoint truncated");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint16_t u16() {
    std::uint16_t v;
    bytes(&v, 2);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::string str(std::size_t limit) {
    const auto n = u32();
    check(n <= limit, ErrorCode::DecodeError, "checkpoint string too long");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t remaining() const noexcept { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const Parameter& p) {
  w.str(p.name);
  w.u32(static_cast<std::uint32_t>(p.shape.size()));
  for (int d : p.shape) w.u32(static_cast<std::uint32_t>(d));
  for (double v : p.values) {
    const auto f = static_cast<float>(v);
    w.bytes(&f, 4);
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u16(kCheckpointVersion);
  nlohmann::json meta{{"config", nlohmann::json::parse(config_to_json(model.config))},
                      {"frozen_backbone", model.frozen_backbone},
                      {"heads", nlohmann::json::array()}};
  for (const auto& [task, head] : model.heads) meta["heads"].push_back(to_string(task));
  w.str(meta.dump());

  std::uint32_t count = static_cast<std::uint32_t>(model.backbone.size() + 2 * model.heads.size());
  w.u32(count);
  for (const auto& p : model.backbone) write_tensor(w, p);
  for (const auto& [task, head] : model.heads) {
    write_tensor(w, head.weight);
    write_tensor(w, head.bias);
  }
  Fnv1a64 h;
  h.update(w.buffer());
  const auto digest = h.digest();
  w.bytes(&digest, 8);
  return std::move(w.buffer());
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  check(bytes.size() >= 4 + 2 + 8, ErrorCode::DecodeError, "checkpoint too short");
  check(std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0, ErrorCode::DecodeError, "missing RFG1 magic");
  Reader r(bytes.first(bytes.size() - 8));
  char magic[4];
  r.bytes(magic, 4);
  const auto version = r.u16();
  check(version == kCheckpointVersion, ErrorCode::VersionMismatch,
        "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  {
    Fnv1a64 h;
    h.update(bytes.first(bytes.size() - 8));
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    check(stored == h.digest(), ErrorCode::DecodeError, "checkpoint digest mismatch (corrupted file)");
  }

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str(1 << 20));
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::DecodeError, std::string("checkpoint metadata: ") + ex.what());
  }
  std::set<Task> tasks;
  ModelConfig config;
  bool frozen = false;
  try {
    config = config_from_json(meta.at("config").dump());
    frozen = meta.at("frozen_backbone").get<bool>();
    for (const auto& t : meta.at("heads")) {
      const auto task = parse_task(t.get<std::string>());
      check(task.has_value(), ErrorCode::DecodeError, "unknown head in checkpoint");
      tasks.insert(*task);
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::DecodeError, std::string("checkpoint metadata: ") + ex.what());
  }

  Model model = build_model(config, {}, 0);
  for (Task t : tasks) attach_head(model, t, 0);
  model.frozen_backbone = frozen;

  const auto count = r.u32();
  std::size_t expected = model.backbone.size() + 2 * model.heads.size();
  check(count == expected, ErrorCode::DecodeError, "checkpoint tensor count does not match its config");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.str(4096);
    Parameter* p = model.find(name);
    check(p != nullptr, ErrorCode::DecodeError, "unexpected tensor " + name);
    const auto rank = r.u32();
    check(rank == p->shape.size(), ErrorCode::DecodeError, "rank mismatch for " + name);
    for (std::uint32_t k = 0; k < rank; ++k) {
      check(r.u32() == static_cast<std::uint32_t>(p->shape[k]), ErrorCode::DecodeError, "shape mismatch for " + name);
    }
    check(r.remaining() / 4 >= p->values.size(), ErrorCode::DecodeError, "checkpoint truncated in " + name);
    for (auto& v : p->values) {
      float f;
      r.bytes(&f, 4);
      v = f;
    }
  }
  check(r.remaining() == 0, ErrorCode::DecodeError, "trailing bytes in checkpoint");
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  write_file(path, bytes);
}

Model load_model(const std::filesystem::path& path) {
  std::error_code ec;
  check(std::filesystem::exists(path, ec), ErrorCode::MissingCheckpoint, "no checkpoint at " + path.string());
  return deserialize_model(read_file(path));
}

}  // namespace fpx
