#include "bsl/checkpoint.hpp"

#include "bsl/binary_io.hpp"
#include "bsl/errors.hpp"

namespace bsl {

namespace {

constexpr char kMagic[] = "BSLCKPT1";

void write_section(io::Writer& out, const TensorMap& tensors, std::uint64_t& checksum) {
  out.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    out.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    out.str(name);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) out.put<std::uint64_t>(d);
    const std::size_t begin = out.buffer().size();
    for (Real v : t.data()) out.f64(v);
    checksum = io::fnv1a64(std::span(out.buffer()).subspan(begin), checksum);
  }
}

TensorMap read_section(io::Reader& in, std::uint64_t& checksum) {
  TensorMap out;
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name = in.str(name_len);
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw FormatError("checkpoint tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
    const std::size_t n = shape_numel(shape);
    if (n > in.remaining() / 8) throw TruncatedError("checkpoint ends inside tensor '" + name + "'");
    auto bytes = in.take(n * 8);
    checksum = io::fnv1a64(bytes, checksum);
    io::Reader values(bytes);
    std::vector<Real> data(n);
    for (auto& v : data) v = values.f64();
    out.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
  io::Writer out;
  out.str(std::string_view(kMagic, 8));
  std::uint64_t checksum = 0xcbf29ce484222325ULL;
  write_section(out, params.values(), checksum);
  write_section(out, params.adam().first_moment, checksum);
  write_section(out, params.adam().second_moment, checksum);
  out.put<std::uint64_t>(params.adam().step);
  out.put<std::uint64_t>(checksum);
  io::write_file_atomic(path.string(), out.buffer());
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path.string());
  io::Reader in(bytes);
  const std::string magic = bytes.size() < 8 ? std::string() : in.str(8);
  if (magic.compare(0, 7, kMagic, 7) != 0) {
    throw BadMagicError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  if (magic[7] != kMagic[7]) {
    throw VersionMismatchError("checkpoint '" + path.string() + "' has format version " + magic[7] +
                               ", expected " + kMagic[7]);
  }
  std::uint64_t checksum = 0xcbf29ce484222325ULL;
  TensorMap values = read_section(in, checksum);
  TensorMap first = read_section(in, checksum);
  TensorMap second = read_section(in, checksum);
  const auto step = in.get<std::uint64_t>();
  const auto stored = in.get<std::uint64_t>();
  if (stored != checksum) throw ChecksumError("checkpoint '" + path.string() + "' fails checksum");
  if (in.remaining() != 0) throw FormatError("trailing bytes after checkpoint trailer");

  ParamSet params;
  for (auto& [name, t] : values) params.add(name, std::move(t));
  for (auto* section : {&first, &second}) {
    if (section->size() != params.values().size()) throw FormatError("optimizer state does not match parameters");
  }
  for (const auto& name : params.names()) {
    auto f = first.find(name);
    auto s = second.find(name);
    if (f == first.end() || s == second.end() || f->second.shape() != params.value(name).shape() ||
        s->second.shape() != params.value(name).shape()) {
      throw FormatError("optimizer state for '" + name + "' missing or mis-shaped");
    }
    params.adam().first_moment.at(name) = f->second;
    params.adam().second_moment.at(name) = s->second;
  }
  params.adam().step = step;
  return params;
}

}  // namespace bsl
