#include "relclust/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace relclust {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::size_t kMagicSize = 8;

struct Slot {
  const char* prefix;
  EncoderParams Checkpoint::*params;
};
constexpr Slot kSlots[] = {{"momentum", &Checkpoint::momentum},
                           {"propulsion", &Checkpoint::propulsion}};

void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.write(buf, 8);
}

std::uint64_t read_u64(std::istream& in) {
  char buf[8];
  if (!in.read(buf, 8)) throw CheckpointError("truncated checkpoint header");
  std::uint64_t v;
  std::memcpy(&v, buf, 8);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (!ckpt.momentum.same_shape(ckpt.propulsion)) {
    throw std::invalid_argument("checkpoint encoders differ in shape");
  }
  nlohmann::ordered_json header;
  header["config"] = config_to_json(ckpt.config);
  header["epoch"] = ckpt.epoch;
  header["vocabulary"] = ckpt.vocabulary;
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  for (const Slot& slot : kSlots) {
    const EncoderParams& p = ckpt.*slot.params;
    for (std::size_t t = 0; t < EncoderParams::kTensorCount; ++t) {
      table.push_back({{"name", std::string(slot.prefix) + "/" + EncoderParams::names()[t]},
                       {"rows", p.tensor(t).rows()},
                       {"cols", p.tensor(t).cols()}});
    }
  }
  header["tensors"] = table;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, kMagicSize);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Slot& slot : kSlots) {
    const EncoderParams& p = ckpt.*slot.params;
    for (std::size_t t = 0; t < EncoderParams::kTensorCount; ++t) {
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = p.tensor(t);
      out.write(reinterpret_cast<const char*>(rm.data()),
                static_cast<std::streamsize>(rm.size() * sizeof(double)));
    }
  }
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[kMagicSize];
  if (!in.read(magic, kMagicSize) || std::memcmp(magic, kCheckpointMagic, kMagicSize) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  const std::uint64_t length = read_u64(in);
  if (length > (std::uint64_t{1} << 32)) throw CheckpointError("implausible header length");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
    throw CheckpointError("truncated checkpoint header");
  }

  Checkpoint ckpt;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    ckpt.config = config_from_json(header.at("config"));
    ckpt.epoch = header.at("epoch").get<std::size_t>();
    ckpt.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }

  const auto& table = header.at("tensors");
  if (table.size() != 2 * EncoderParams::kTensorCount) {
    throw CheckpointError("checkpoint tensor table has unexpected length");
  }
  std::size_t entry = 0;
  for (const Slot& slot : kSlots) {
    EncoderParams& p = ckpt.*slot.params;
    p = EncoderParams::zeros(ckpt.config.dims);
    for (std::size_t t = 0; t < EncoderParams::kTensorCount; ++t, ++entry) {
      const auto& info = table[entry];
      const std::string expected = std::string(slot.prefix) + "/" + EncoderParams::names()[t];
      if (info.at("name").get<std::string>() != expected ||
          info.at("rows").get<Eigen::Index>() != p.tensor(t).rows() ||
          info.at("cols").get<Eigen::Index>() != p.tensor(t).cols()) {
        throw CheckpointError("tensor " + expected + " does not match the stored dimensions");
      }
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(p.tensor(t).rows(),
                                                                              p.tensor(t).cols());
      if (!in.read(reinterpret_cast<char*>(rm.data()),
                   static_cast<std::streamsize>(rm.size() * sizeof(double)))) {
        throw CheckpointError("truncated tensor data for " + expected);
      }
      p.tensor(t) = rm;
    }
  }
  in.peek();
  if (!in.eof()) throw CheckpointError("trailing bytes after tensor data");
  return ckpt;
}

}  // namespace relclust
