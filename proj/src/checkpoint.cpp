#include "duodepth/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "duodepth/core/errors.hpp"

namespace duodepth::nn {

namespace {
constexpr char kMagic[8] = {'D', 'D', 'C', 'P', '0', '0', '0', '1'};
}

using nlohmann::json;

void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const std::map<std::string, Eigen::ArrayXf>& extra_arrays,
                     const json& meta) {
  json header = meta;
  json arrays = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, p] : params) {
    arrays.push_back({{"name", name}, {"dims", p.dims}, {"offset", offset},
                      {"count", p.count()}});
    offset += std::uint64_t(p.count());
  }
  for (const auto& [name, a] : extra_arrays) {
    arrays.push_back({{"name", "extra." + name}, {"dims", {a.size()}}, {"offset", offset},
                      {"count", a.size()}});
    offset += std::uint64_t(a.size());
  }
  header["arrays"] = arrays;
  header["format"] = "duodepth-checkpoint-v1";
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open for write: " + path);
  f.write(kMagic, 8);
  const std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& [name, p] : params)
    f.write(reinterpret_cast<const char*>(p.value.data()), std::streamsize(p.count() * 4));
  for (const auto& [name, a] : extra_arrays)
    f.write(reinterpret_cast<const char*>(a.data()), std::streamsize(a.size() * 4));
  if (!f) throw IoError("checkpoint: write failed: " + path);
}

json load_checkpoint(const std::string& path, ParamStore<float>& params,
                     std::map<std::string, Eigen::ArrayXf>* extra_arrays) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (f.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError("checkpoint: bad magic", 0);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  f.read(hs.data(), std::streamsize(hlen));
  if (std::uint64_t(f.gcount()) != hlen) throw ParseError("checkpoint: truncated header", 16);
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what(), 16 + std::size_t(e.byte));
  }

  const std::size_t data_start = 16 + hlen;
  for (const auto& a : header.at("arrays")) {
    const std::string name = a.at("name");
    const std::uint64_t count = a.at("count");
    const std::uint64_t offset = a.at("offset");
    f.seekg(std::streamoff(data_start + offset * 4));
    if (name.rfind("extra.", 0) == 0) {
      if (!extra_arrays) continue;
      const Eigen::Index n_elems = Eigen::Index(count);
      Eigen::ArrayXf arr(n_elems);
      f.read(reinterpret_cast<char*>(arr.data()), std::streamsize(count * 4));
      if (std::uint64_t(f.gcount()) != count * 4)
        throw ParseError("checkpoint: truncated array " + name, data_start + offset * 4);
      (*extra_arrays)[name.substr(6)] = std::move(arr);
      continue;
    }
    std::vector<int> dims = a.at("dims").get<std::vector<int>>();
    Param<float>& p = params.has(name) ? params.at(name) : params.create(name, dims);
    if (std::uint64_t(p.count()) != count)
      throw ContractViolation("checkpoint: size mismatch for " + name);
    f.read(reinterpret_cast<char*>(p.value.data()), std::streamsize(count * 4));
    if (std::uint64_t(f.gcount()) != count * 4)
      throw ParseError("checkpoint: truncated array " + name, data_start + offset * 4);
  }
  return header;
}

}  // namespace duodepth::nn
