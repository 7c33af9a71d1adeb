#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "arpex/mlp.hpp"
#include "arpex/policy.hpp"

namespace arpex {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian");

// Checkpoint layout: "ARPX" magic, little-endian u32 JSON header length, the
// JSON header (layer sizes, log_std, step count), then the flat parameter
// vector as little-endian 64-bit floats: mean net, std net when present,
// value net.
inline void save_checkpoint(const std::string& path, const PolicyHead& head,
                            const Mlp& value_net, std::int64_t step_count) {
  nlohmann::json header;
  header["format"] = "arpex-v1";
  header["policy_layers"] = head.mean_net().layer_sizes();
  header["value_layers"] = value_net.layer_sizes();
  header["state_dependent_std"] = head.state_dependent_std();
  header["sigma_scale"] = head.sigma_scale();
  header["step_count"] = step_count;
  if (!head.state_dependent_std()) {
    std::vector<double> ls(head.log_std().data(),
                           head.log_std().data() + head.log_std().size());
    header["log_std"] = ls;
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write("ARPX", 4);
  const std::uint32_t len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto write_params = [&out](const VectorXd& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  write_params(head.mean_net().params());
  if (head.state_dependent_std()) write_params(head.std_net().params());
  write_params(value_net.params());
  if (!out) throw std::runtime_error("short write: " + path);
}

struct Checkpoint {
  PolicyHead head;
  Mlp value_net;
  std::int64_t step_count = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "ARPX")
    throw std::runtime_error("not an arpex checkpoint: " + path);
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  const nlohmann::json header = nlohmann::json::parse(text);

  const std::vector<int> policy_layers = header.at("policy_layers");
  const std::vector<int> value_layers = header.at("value_layers");
  const bool state_dep = header.at("state_dependent_std");

  auto read_params = [&in, &path](Mlp& net) {
    VectorXd v(net.param_count());
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint payload: " + path);
    net.set_params(v);
  };

  Mlp mean_net(policy_layers);
  read_params(mean_net);
  const int act_dim = policy_layers.back();

  PolicyHead head = [&]() {
    if (state_dep) {
      Mlp std_net(policy_layers);
      read_params(std_net);
      return PolicyHead(std::move(mean_net), std::move(std_net));
    }
    return PolicyHead(std::move(mean_net), act_dim);
  }();
  if (!state_dep) {
    const std::vector<double> ls = header.at("log_std");
    head.set_log_std(Eigen::Map<const VectorXd>(ls.data(), ls.size()));
  }
  head.set_sigma_scale(header.at("sigma_scale"));

  Mlp value_net(value_layers);
  read_params(value_net);

  return Checkpoint{std::move(head), std::move(value_net),
                    header.at("step_count")};
}

}  // namespace arpex
