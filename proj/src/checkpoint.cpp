#include "mifcn/checkpoint.hpp"

#include <fstream>

#include "mifcn/binary_io.hpp"

namespace mifcn {

namespace {
constexpr std::string_view kMagic = "MIFCNCKP";
}

void write_checkpoint(std::ostream& os, const MifcnParams& params, const ModelConfig& config) {
  check_params(params, config);
  io::BinaryWriter w(os);
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.i32(config.branches);
  w.i32(config.channels);
  w.i32(config.branch_layers);
  w.i32(config.head_layers);
  w.u32(static_cast<std::uint32_t>(config.dilations.size()));
  for (int d : config.dilations) w.i32(d);
  w.f64(config.h);
  w.f64(config.alpha);
  std::uint32_t count = 0;
  for_each_param(params, [&](const std::string&, const Tensor&) { ++count; });
  w.u32(count);
  for_each_param(params, [&](const std::string& name, const Tensor& t) {
    w.string(name);
    w.tensor(t);
  });
}

Checkpoint read_checkpoint(std::istream& is) {
  io::BinaryReader r(is, "checkpoint");
  if (r.bytes(kMagic.size()) != kMagic) throw DataError("checkpoint: bad magic, not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported format version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.config.branches = r.i32();
  ck.config.channels = r.i32();
  ck.config.branch_layers = r.i32();
  ck.config.head_layers = r.i32();
  const std::uint32_t n = r.u32();
  if (n > 1024) throw DataError("checkpoint: implausible dilation count");
  ck.config.dilations.clear();
  for (std::uint32_t i = 0; i < n; ++i) ck.config.dilations.push_back(r.i32());
  ck.config.h = r.f64();
  ck.config.alpha = r.f64();
  try {
    ck.config.validate();
  } catch (const PreconditionError& e) {
    throw DataError(std::string("checkpoint: invalid stored config: ") + e.what());
  }

  // Lay out the expected structure, then fill it tensor by tensor.
  ck.params = identity_init(ck.config, 0, 0.0);
  std::uint32_t expected = 0;
  for_each_param(ck.params, [&](const std::string&, const Tensor&) { ++expected; });
  const std::uint32_t count = r.u32();
  if (count != expected)
    throw DataError("checkpoint: holds " + std::to_string(count) + " tensors, config implies " +
                    std::to_string(expected));
  for_each_param(ck.params, [&](const std::string& name, Tensor& slot) {
    const std::string stored = r.string();
    if (stored != name) throw DataError("checkpoint: expected tensor '" + name + "', found '" + stored + "'");
    Tensor t = r.tensor(slot.size());
    if (t.shape() != slot.shape())
      throw DataError("checkpoint: tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                      shape_string(slot.shape()));
    slot = std::move(t);
  });
  if (!r.at_end()) throw DataError("checkpoint: trailing bytes after last tensor");
  return ck;
}

void save_checkpoint(const MifcnParams& params, const ModelConfig& config, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(os, params, config);
  if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  return read_checkpoint(is);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  const ModelConfig& got = ck.config;
  if (got.branches != expected.branches)
    throw DataError("checkpoint " + path.string() + " was trained with T=" + std::to_string(got.branches) +
                    " branches, but T=" + std::to_string(expected.branches) + " was requested");
  if (got.channels != expected.channels || got.branch_layers != expected.branch_layers ||
      got.head_layers != expected.head_layers || got.dilations != expected.dilations)
    throw DataError("checkpoint " + path.string() + " architecture (C, A, B, dilations) differs from the requested one");
  return ck;
}

}  // namespace mifcn
