#include "parsec/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace parsec {

static_assert(std::endian::native == std::endian::little,
              "weight checkpoints are little-endian; this build targets little-endian hosts");

namespace {

constexpr char kMagic[4] = {'P', 'S', 'E', 'C'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4))
    throw std::runtime_error("weight checkpoint '" + path + "' is truncated");
  return v;
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8))
    throw std::runtime_error("weight checkpoint '" + path + "' is truncated");
  return v;
}

void write_entry(std::ostream& out, const std::string& key, const Tensor& t) {
  write_u32(out, static_cast<std::uint32_t>(key.size()));
  out.write(key.data(), static_cast<std::streamsize>(key.size()));
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape) write_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

}  // namespace

void save_weights(const WeightStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u64(out, static_cast<std::uint64_t>(store.params().size() + store.buffers().size()));
  // Both maps are key-sorted; params and buffers never share a key, so writing
  // them back to back keeps the table deterministic.
  for (const auto& [key, t] : store.params()) write_entry(out, key, t);
  for (const auto& [key, t] : store.buffers()) write_entry(out, key, t);
  if (!out) throw std::runtime_error("failed writing weight checkpoint '" + path + "'");
}

std::map<std::string, Tensor> read_weight_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weight checkpoint '" + path + "'");
  char magic[4] = {};
  if (!in.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4))
    throw std::runtime_error("'" + path + "' is not a weight checkpoint (bad magic)");
  const std::uint32_t version = read_u32(in, path);
  if (version != kVersion)
    throw std::runtime_error("weight checkpoint '" + path + "' has version " +
                             std::to_string(version) + ", expected " + std::to_string(kVersion));
  const std::uint64_t count = read_u64(in, path);
  std::map<std::string, Tensor> table;
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::uint32_t key_len = read_u32(in, path);
    std::string key(key_len, '\0');
    if (!in.read(key.data(), key_len))
      throw std::runtime_error("weight checkpoint '" + path + "' is truncated");
    const std::uint32_t rank = read_u32(in, path);
    if (rank > 8)
      throw std::runtime_error("weight checkpoint '" + path + "' entry '" + key +
                               "' claims rank " + std::to_string(rank));
    std::vector<int> shape;
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t extent = read_u32(in, path);
      shape.push_back(static_cast<int>(extent));
      numel *= extent;
    }
    Tensor t = Tensor::zeros(shape);
    if (!in.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(numel * sizeof(double))))
      throw std::runtime_error("weight checkpoint '" + path + "' is truncated in entry '" + key + "'");
    if (table.count(key))
      throw std::runtime_error("weight checkpoint '" + path + "' repeats key '" + key + "'");
    table.emplace(std::move(key), std::move(t));
  }
  return table;
}

void load_weights_into(WeightStore& store, const std::string& path) {
  std::map<std::string, Tensor> table = read_weight_file(path);
  const auto place = [&](std::map<std::string, Tensor>& dst, const char* what) {
    for (auto& [key, tensor] : dst) {
      auto it = table.find(key);
      if (it == table.end())
        throw std::runtime_error("weight checkpoint '" + path + "' is missing " + what + " '" + key + "'");
      if (it->second.shape != tensor.shape)
        throw std::runtime_error("weight checkpoint '" + path + "' entry '" + key + "' has shape " +
                                 shape_string(it->second.shape) + ", store expects " +
                                 shape_string(tensor.shape));
      tensor = std::move(it->second);
      table.erase(it);
    }
  };
  place(store.params(), "parameter");
  place(store.buffers(), "buffer");
  if (!table.empty())
    throw std::runtime_error("weight checkpoint '" + path + "' holds key '" + table.begin()->first +
                             "' that the store does not declare");
}

}  // namespace parsec
