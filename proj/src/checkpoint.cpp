#include "hyprl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace hyprl::ckpt {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kMagic[8] = {'H', 'Y', 'P', 'R', 'L', 'C', 'K', '1'};

int64_t shape_elems(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::runtime_error("checkpoint: non-positive shape dimension");
    n *= d;
  }
  return n;
}

}  // namespace

void save_arrays(const std::string& path, const std::vector<NamedArray>& arrays) {
  nlohmann::ordered_json header;
  header["version"] = 1;
  header["arrays"] = nlohmann::ordered_json::array();
  int64_t offset = 0;
  for (const auto& a : arrays) {
    if (shape_elems(a.shape) != static_cast<int64_t>(a.data.size())) {
      throw std::runtime_error("checkpoint: array '" + a.name + "' shape/data mismatch");
    }
    header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}});
    offset += static_cast<int64_t>(a.data.size() * sizeof(double));
  }
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& a : arrays) {
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

std::vector<NamedArray> load_arrays(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic) + sizeof(uint64_t) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
  }
  uint64_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + sizeof(kMagic), sizeof(hlen));
  const size_t payload_start = sizeof(kMagic) + sizeof(uint64_t) + hlen;
  if (payload_start > bytes.size()) {
    throw std::runtime_error("checkpoint: '" + path + "' header is truncated");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(sizeof(kMagic) + sizeof(uint64_t), hlen));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: '" + path + "' has a corrupt header: " + e.what());
  }

  const size_t payload_len = bytes.size() - payload_start;
  std::vector<NamedArray> arrays;
  try {
    for (const auto& item : header.at("arrays")) {
      NamedArray a;
      a.name = item.at("name").get<std::string>();
      a.shape = item.at("shape").get<std::vector<int>>();
      const int64_t offset = item.at("offset").get<int64_t>();
      const int64_t elems = shape_elems(a.shape);
      const int64_t nbytes = elems * static_cast<int64_t>(sizeof(double));
      if (offset < 0 || static_cast<size_t>(offset) + nbytes > payload_len) {
        throw std::runtime_error("checkpoint: array '" + a.name + "' is out of bounds");
      }
      a.data.resize(static_cast<size_t>(elems));
      std::memcpy(a.data.data(), bytes.data() + payload_start + offset,
                  static_cast<size_t>(nbytes));
      arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: '" + path + "' has a corrupt header: " + e.what());
  }
  return arrays;
}

std::vector<NamedArray> net_snapshot(const nn::Net& net) {
  std::vector<NamedArray> arrays;
  for (const auto& p : net.params().params) {
    arrays.push_back({p.name, p.shape, p.value});
  }
  for (int k = 0; k < net.sn_layers(); ++k) {
    const auto& u = net.sn_u()[static_cast<size_t>(k)];
    const auto& v = net.sn_v()[static_cast<size_t>(k)];
    arrays.push_back({"sn.u" + std::to_string(k), {static_cast<int>(u.size())}, u});
    arrays.push_back({"sn.v" + std::to_string(k), {static_cast<int>(v.size())}, v});
  }
  return arrays;
}

void net_restore(nn::Net& net, const std::vector<NamedArray>& arrays) {
  const size_t expect = net.params().params.size() + 2 * static_cast<size_t>(net.sn_layers());
  if (arrays.size() != expect) {
    throw std::runtime_error("checkpoint: array count does not match the network");
  }
  size_t i = 0;
  for (auto& p : net.params().params) {
    const auto& a = arrays[i++];
    if (a.name != p.name || a.shape != p.shape) {
      throw std::runtime_error("checkpoint: expected parameter '" + p.name + "', found '" +
                               a.name + "'");
    }
    p.value = a.data;
  }
  for (int k = 0; k < net.sn_layers(); ++k) {
    const auto& au = arrays[i++];
    const auto& av = arrays[i++];
    auto& u = net.sn_u()[static_cast<size_t>(k)];
    auto& v = net.sn_v()[static_cast<size_t>(k)];
    if (au.name != "sn.u" + std::to_string(k) || au.data.size() != u.size() ||
        av.name != "sn.v" + std::to_string(k) || av.data.size() != v.size()) {
      throw std::runtime_error("checkpoint: normalization state does not match the network");
    }
    u = au.data;
    v = av.data;
  }
}

void save_net(const std::string& path, const nn::Net& net) {
  save_arrays(path, net_snapshot(net));
}

void load_net(const std::string& path, nn::Net& net) { net_restore(net, load_arrays(path)); }

}  // namespace hyprl::ckpt
