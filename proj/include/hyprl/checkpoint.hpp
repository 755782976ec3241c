#pragma once

#include <string>
#include <vector>

#include "hyprl/nn.hpp"

namespace hyprl::ckpt {

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

// Binary container: magic "HYPRLCK1", u64 little-endian header length, JSON
// header listing {name, shape, offset} per array, then a packed f64
// little-endian payload. Loading validates magic, bounds and shapes and
// throws std::runtime_error on any corruption.
void save_arrays(const std::string& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_arrays(const std::string& path);

// Net state <-> named arrays (parameters plus power-iteration vectors).
std::vector<NamedArray> net_snapshot(const nn::Net& net);
void net_restore(nn::Net& net, const std::vector<NamedArray>& arrays);

void save_net(const std::string& path, const nn::Net& net);
void load_net(const std::string& path, nn::Net& net);

}  // namespace hyprl::ckpt
