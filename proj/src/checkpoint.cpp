#include <filesystem>
#include <fstream>
#include <iterator>
#include <system_error>

#include "binary_io.hpp"
#include "semcom/network.hpp"

namespace semcom {

namespace detail {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw DataError("cannot move '" + tmp.string() + "' into place: " + ec.message());
  }
}

void write_text_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace detail

namespace {

constexpr std::string_view kMagic = "PMSC";
constexpr std::uint16_t kVersion = 1;

enum SpecTag : std::uint16_t {
  kEnd = 0,
  kVariant = 1,
  kDimHsi = 2,
  kDimLidar = 3,
  kClasses = 4,
  kSymbols = 5,
  kEncoderWidths = 6,
  kFusionWidths = 7,
  kDecoderWidths = 8,
};

void put_field(detail::ByteWriter& w, std::uint16_t tag, const detail::ByteWriter& field) {
  const auto& payload = field.data();
  w.u16(tag);
  w.u32(static_cast<std::uint32_t>(payload.size()));
  for (std::uint8_t b : payload) w.u8(b);
}

void put_u32_field(detail::ByteWriter& w, std::uint16_t tag, std::size_t v) {
  detail::ByteWriter p;
  p.u32(static_cast<std::uint32_t>(v));
  put_field(w, tag, p);
}

void put_list_field(detail::ByteWriter& w, std::uint16_t tag, const std::vector<std::size_t>& v) {
  detail::ByteWriter p;
  p.u32(static_cast<std::uint32_t>(v.size()));
  for (std::size_t x : v) p.u32(static_cast<std::uint32_t>(x));
  put_field(w, tag, p);
}

std::vector<std::size_t> get_list(detail::ByteReader& r) {
  const std::uint32_t n = r.u32();
  r.need(4ULL * n, "width list");
  std::vector<std::size_t> out(n);
  for (auto& x : out) x = r.u32();
  return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
  const ModelSpec& s = model.spec;
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kVersion);

  detail::ByteWriter name;
  name.bytes(to_string(s.variant));
  put_field(w, kVariant, name);
  put_u32_field(w, kDimHsi, s.d_hsi);
  put_u32_field(w, kDimLidar, s.d_lidar);
  put_u32_field(w, kClasses, s.classes);
  put_u32_field(w, kSymbols, s.symbols);
  put_list_field(w, kEncoderWidths, s.encoder_widths);
  put_list_field(w, kFusionWidths, s.fusion_widths);
  put_list_field(w, kDecoderWidths, s.decoder_widths);
  w.u16(kEnd);
  w.u32(0);

  w.u32(static_cast<std::uint32_t>(model.params.tensors.size()));
  for (const auto& [pname, t] : model.params.tensors) {
    w.u16(static_cast<std::uint16_t>(pname.size()));
    w.bytes(pname);
    w.u32(static_cast<std::uint32_t>(t.rows));
    w.u32(static_cast<std::uint32_t>(t.cols));
    for (double v : t.data) w.f64(v);
  }
  return std::move(w.buffer());
}

Model deserialize_model(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw FormatError("not a checkpoint (bad magic)", 0);
  }
  const std::size_t version_at = r.offset();
  if (const auto v = r.u16(); v != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v), version_at);
  }

  Model model;
  ModelSpec& s = model.spec;
  for (;;) {
    const std::size_t field_at = r.offset();
    const std::uint16_t tag = r.u16();
    const std::uint32_t len = r.u32();
    if (tag == kEnd) break;
    r.need(len, "spec field");
    const std::size_t start = r.offset();
    switch (tag) {
      case kVariant:
        try {
          s.variant = parse_variant(r.bytes(len));
        } catch (const ConfigError& e) {
          throw FormatError(e.what(), start);
        }
        break;
      case kDimHsi: s.d_hsi = r.u32(); break;
      case kDimLidar: s.d_lidar = r.u32(); break;
      case kClasses: s.classes = r.u32(); break;
      case kSymbols: s.symbols = r.u32(); break;
      case kEncoderWidths: s.encoder_widths = get_list(r); break;
      case kFusionWidths: s.fusion_widths = get_list(r); break;
      case kDecoderWidths: s.decoder_widths = get_list(r); break;
      default: r.bytes(len); break;  // unknown tags are skipped
    }
    if (r.offset() != start + len) {
      throw FormatError("spec field " + std::to_string(tag) + " has inconsistent length", field_at);
    }
  }
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid model spec: ") + e.what(), r.offset());
  }

  const auto layout = param_layout(s);
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32();
  if (count != layout.size()) {
    throw FormatError("expected " + std::to_string(layout.size()) + " tensors, found " +
                          std::to_string(count),
                      count_at);
  }
  for (const ParamSlot& slot : layout) {
    const std::size_t at = r.offset();
    const std::string pname = r.bytes(r.u16());
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (pname != slot.name || rows != slot.rows || cols != slot.cols) {
      throw FormatError("tensor '" + pname + "' does not match expected '" + slot.name + "'", at);
    }
    r.need(8ULL * rows * cols, "tensor values");
    Tensor t(rows, cols);
    for (double& v : t.data) v = r.f64();
    t.requires_grad = slot.trainable;
    model.params.tensors.emplace(slot.name, std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor", r.offset());
  return model;
}

void save_checkpoint(const std::string& path, const Model& model) {
  detail::write_file_atomic(path, serialize_model(model));
}

Model load_checkpoint(const std::string& path) {
  return deserialize_model(detail::read_file(path));
}

}  // namespace semcom
