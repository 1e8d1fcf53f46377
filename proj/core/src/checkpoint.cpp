#include "cmslstm/checkpoint.hpp"

#include "cmslstm/error.hpp"
#include "cmslstm/io.hpp"

namespace cmslstm {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'S', 'L'};

enum class Section { value, m, v };

const Tensor& section_tensor(const nn::ParamEntry& e, Section s) {
  switch (s) {
    case Section::m:
      return e.m;
    case Section::v:
      return e.v;
    default:
      return e.value;
  }
}

void write_section(io::ByteWriter& w, const nn::ParamStore& store, Section s) {
  for (const auto& e : store.entries()) {
    const Tensor& t = section_tensor(e, s);
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.text(e.name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f64(v);
  }
}

struct RawEntry {
  std::string name;
  Tensor tensor;
};

RawEntry read_entry(io::ByteReader& r) {
  RawEntry e;
  const std::size_t at = r.offset();
  const std::uint32_t len = r.u32();
  e.name = r.text(len, "parameter name");
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError("invalid rank " + std::to_string(rank) + " for '" + e.name + "'", at);
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = r.u32();
    if (d == 0) throw FormatError("zero dimension in '" + e.name + "'", r.offset() - 4);
    n *= d;
  }
  if (n > r.remaining() / 8) throw FormatError("truncated values for '" + e.name + "'", r.offset());
  std::vector<double> data(n);
  for (double& v : data) v = r.f64();
  e.tensor = Tensor(std::move(shape), std::move(data));
  return e;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const nn::ParamStore& store, const nn::AdamWState& opt) {
  io::ByteWriter w;
  w.text(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(store.size()));
  write_section(w, store, Section::value);
  write_section(w, store, Section::m);
  write_section(w, store, Section::v);
  w.u64(opt.t);
  w.f64(opt.lr);
  w.f64(opt.beta1);
  w.f64(opt.beta2);
  w.f64(opt.eps);
  w.f64(opt.weight_decay);
  return std::move(w).take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.text(4, "magic") != std::string_view(kMagic, 4)) throw FormatError("bad magic, expected CMSL", 0);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint32_t count = r.u32();

  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    RawEntry e = read_entry(r);
    if (ck.store.contains(e.name)) throw FormatError("duplicate parameter '" + e.name + "'", at);
    ck.store.add(std::move(e.name), std::move(e.tensor));
  }
  for (Section s : {Section::m, Section::v}) {
    for (auto& entry : ck.store.entries()) {
      const std::size_t at = r.offset();
      RawEntry e = read_entry(r);
      if (e.name != entry.name || e.tensor.shape() != entry.value.shape()) {
        throw FormatError("moment entry '" + e.name + "' does not match value entry '" + entry.name + "'", at);
      }
      (s == Section::m ? entry.m : entry.v) = std::move(e.tensor);
    }
  }
  ck.optimizer.t = r.u64();
  ck.optimizer.lr = r.f64();
  ck.optimizer.beta1 = r.f64();
  ck.optimizer.beta2 = r.f64();
  ck.optimizer.eps = r.f64();
  ck.optimizer.weight_decay = r.f64();
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
  return ck;
}

void save_checkpoint(const nn::ParamStore& store, const nn::AdamWState& opt, const std::filesystem::path& path) {
  io::atomic_write(path, encode_checkpoint(store, opt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace cmslstm
