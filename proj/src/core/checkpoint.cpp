#include "checkpoint.hpp"

#include <bit>
#include <cstring>

#include "error.hpp"
#include "image.hpp"

namespace flowparts {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'F', 'P', 'C', 'K', 'P', 'T', '0', '1'};

void put_le(std::vector<uint8_t>& out, uint64_t v, int bytes) {
  for (int b = 0; b < bytes; ++b) out.push_back(static_cast<uint8_t>(v >> (8 * b)));
}

class Reader {
 public:
  Reader(const std::vector<uint8_t>& bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  uint64_t le(int n) {
    need(static_cast<size_t>(n));
    uint64_t v = 0;
    for (int b = 0; b < n; ++b) v |= static_cast<uint64_t>(bytes_[pos_ + b]) << (8 * b);
    pos_ += static_cast<size_t>(n);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorCode::kIo, source_ + ": truncated checkpoint");
  }
  const std::vector<uint8_t>& bytes_;
  std::string source_;
  size_t pos_ = 0;
};

}  // namespace

const std::vector<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, values] : arrays) {
    if (n == name) return &values;
  }
  return nullptr;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  json names = json::array();
  for (const auto& [name, values] : ckpt.arrays) names.push_back({{"name", name}, {"count", values.size()}});
  const json header = {{"format", "flowparts-checkpoint"},
                       {"version", 1},
                       {"C", ckpt.model.capsule_dim},
                       {"K", ckpt.model.num_capsules},
                       {"resolution", {ckpt.model.height, ckpt.model.width}},
                       {"architecture", model_config_to_json(ckpt.model)},
                       {"training", ckpt.training},
                       {"arrays", names}};
  const std::string text = header.dump();
  std::vector<uint8_t> out(kMagic, kMagic + 8);
  put_le(out, text.size(), 8);
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, values] : ckpt.arrays) {
    put_le(out, name.size(), 4);
    out.insert(out.end(), name.begin(), name.end());
    put_le(out, values.size(), 8);
    for (float f : values) put_le(out, std::bit_cast<uint32_t>(f), 4);
  }
  const fs::path tmp = path.string() + ".tmp";
  write_file_bytes(tmp, out);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  Reader r(bytes, path.string());
  if (r.str(8) != std::string(kMagic, 8)) fail(ErrorCode::kIo, path.string() + ": not a flowparts checkpoint");
  const auto header_len = r.le(8);
  json header;
  try {
    header = json::parse(r.str(header_len));
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, path.string() + ": bad checkpoint header: " + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.model = model_config_from_json(header.at("architecture"));
    ckpt.training = header.value("training", json::object());
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, path.string() + ": bad checkpoint header: " + e.what());
  }
  while (!r.done()) {
    const auto name_len = r.le(4);
    std::string name = r.str(name_len);
    const auto count = r.le(8);
    std::vector<float> values(count);
    for (auto& v : values) v = std::bit_cast<float>(static_cast<uint32_t>(r.le(4)));
    ckpt.arrays.emplace_back(std::move(name), std::move(values));
  }
  return ckpt;
}

Checkpoint checkpoint_from_model(const FlowCapsuleModel<float>& model) {
  Checkpoint ckpt;
  ckpt.model = model.config();
  const auto& p = model.params();
  for (size_t i = 0; i < p.size(); ++i) ckpt.arrays.emplace_back(p.names[i], p.values[i]);
  return ckpt;
}

FlowCapsuleModel<float> model_from_checkpoint(const Checkpoint& ckpt) {
  FlowCapsuleModel<float> model(ckpt.model, 0);
  auto& p = model.params();
  for (size_t i = 0; i < p.size(); ++i) {
    const auto* values = ckpt.find(p.names[i]);
    if (!values) fail(ErrorCode::kIncompatible, "checkpoint lacks parameter " + p.names[i]);
    if (values->size() != p.values[i].size()) {
      fail(ErrorCode::kIncompatible, "checkpoint parameter " + p.names[i] + " has wrong size");
    }
    p.values[i] = *values;
  }
  return model;
}

FlowCapsuleModel<float> load_model(const fs::path& path) {
  return model_from_checkpoint(read_checkpoint(path));
}

}  // namespace flowparts
