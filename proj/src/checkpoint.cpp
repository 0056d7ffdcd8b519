#include "raingen/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace raingen::harness {

namespace {

constexpr char kMagic[4] = {'T', 'P', 'S', 'N'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  RG_CHECK(in.good(), "truncated checkpoint");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  RG_CHECK(in.good(), "truncated checkpoint");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_tensor(std::ostream& out, const std::string& name, const ad::Tensor& t) {
  write_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<uint32_t>(t.shape.size()));
  for (int64_t d : t.shape) write_u64(out, static_cast<uint64_t>(d));
  for (double v : t.values) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(out, bits);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const models::Models& m,
                     uint64_t config_digest) {
  std::ofstream out(path, std::ios::binary);
  RG_CHECK(out.good(), "cannot write checkpoint ", path.string());
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  uint32_t count = 0;
  for (const auto* ps : {&m.generator, &m.discriminator, &m.heads})
    count += static_cast<uint32_t>(ps->items.size());
  write_u32(out, count);
  for (const auto* ps : {&m.generator, &m.discriminator, &m.heads})
    for (const auto& [name, tensor] : ps->items) write_tensor(out, name, tensor);
  write_u64(out, config_digest);
  RG_CHECK(out.good(), "failed writing checkpoint ", path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const models::ModelDims& dims,
                                 const models::EncoderTaps& taps,
                                 std::optional<uint64_t> expected_digest) {
  std::ifstream in(path, std::ios::binary);
  RG_CHECK(in.good(), "cannot open checkpoint ", path.string());
  char magic[4];
  in.read(magic, 4);
  RG_CHECK(in.good() && std::memcmp(magic, kMagic, 4) == 0,
           "not a checkpoint file (bad magic): ", path.string());
  LoadedCheckpoint result;
  result.version = read_u32(in);
  RG_CHECK(result.version == kVersion, "unsupported checkpoint version ", result.version);
  const uint32_t count = read_u32(in);

  // the reference layout supplies expected names, shapes and set routing
  result.models = models::init_params(0, dims, taps);
  uint32_t expected = 0;
  for (const auto* ps :
       {&result.models.generator, &result.models.discriminator, &result.models.heads})
    expected += static_cast<uint32_t>(ps->items.size());
  RG_CHECK(count == expected, "checkpoint holds ", count, " tensors, expected ",
           expected, " for the configured dims");

  for (auto* ps :
       {&result.models.generator, &result.models.discriminator, &result.models.heads}) {
    for (auto& [name, tensor] : ps->items) {
      const uint32_t name_len = read_u32(in);
      std::string got_name(name_len, '\0');
      in.read(got_name.data(), name_len);
      RG_CHECK(in.good(), "truncated checkpoint");
      RG_CHECK(got_name == name, "checkpoint tensor order mismatch: got '", got_name,
               "', expected '", name, "'");
      const uint32_t rank = read_u32(in);
      ad::Shape shape(rank);
      for (uint32_t i = 0; i < rank; ++i)
        shape[i] = static_cast<int64_t>(read_u64(in));
      RG_CHECK(shape == tensor.shape, "checkpoint tensor '", name, "' has shape ",
               ad::shape_str(shape), ", expected ", ad::shape_str(tensor.shape));
      for (double& v : tensor.values) {
        const uint32_t bits = read_u32(in);
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<double>(f);
      }
    }
  }
  result.config_digest = read_u64(in);
  if (expected_digest)
    RG_CHECK(result.config_digest == *expected_digest,
             "checkpoint config digest mismatch: file has ", result.config_digest,
             ", current config gives ", *expected_digest,
             " (the checkpoint was written under a different configuration)");
  return result;
}

}  // namespace raingen::harness
