// Versioned regressor checkpoints: a JSON header (descriptor + array
// manifest) followed by flat little-endian float64 arrays. Round trips are
// byte-exact.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "icregress/regressor.hpp"

namespace icregress {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'I', 'C', 'R', 'G', 'C', 'K', 'P', 'T'};

namespace detail {

struct NamedArray {
  std::string name;
  const std::vector<double>* data;
};

inline std::vector<NamedArray> checkpoint_arrays(const RegressorParams& p) {
  std::vector<NamedArray> arrays;
  for (std::size_t s = 0; s < p.conv.size(); ++s) {
    const std::string prefix = "conv" + std::to_string(s) + ".";
    arrays.push_back({prefix + "weight", &p.conv[s].weight});
    arrays.push_back({prefix + "bias", &p.conv[s].bias});
    arrays.push_back({prefix + "bn_gamma", &p.conv[s].bn_gamma});
    arrays.push_back({prefix + "bn_beta", &p.conv[s].bn_beta});
    arrays.push_back({prefix + "bn_running_mean", &p.conv[s].bn_running_mean});
    arrays.push_back({prefix + "bn_running_var", &p.conv[s].bn_running_var});
  }
  for (std::size_t l = 0; l < p.fc.size(); ++l) {
    const std::string prefix = "fc" + std::to_string(l) + ".";
    arrays.push_back({prefix + "weight", &p.fc[l].weight});
    arrays.push_back({prefix + "bias", &p.fc[l].bias});
  }
  arrays.push_back({"feature_mean", &p.feature_mean});
  arrays.push_back({"feature_std", &p.feature_std});
  return arrays;
}

inline std::vector<std::vector<double>*> checkpoint_arrays_mutable(RegressorParams& p) {
  std::vector<std::vector<double>*> arrays;
  for (auto& s : p.conv) {
    arrays.push_back(&s.weight);
    arrays.push_back(&s.bias);
    arrays.push_back(&s.bn_gamma);
    arrays.push_back(&s.bn_beta);
    arrays.push_back(&s.bn_running_mean);
    arrays.push_back(&s.bn_running_var);
  }
  for (auto& l : p.fc) {
    arrays.push_back(&l.weight);
    arrays.push_back(&l.bias);
  }
  arrays.push_back(&p.feature_mean);
  arrays.push_back(&p.feature_std);
  return arrays;
}

inline void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t read_u32(std::string_view data, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[offset + i])) << (8 * i);
  }
  return v;
}

inline nlohmann::json descriptor_to_json(const ArchitectureDescriptor& d) {
  return nlohmann::json{{"input_channels", d.input_channels},
                        {"input_timesteps", d.input_timesteps},
                        {"conv_maps", d.conv_maps},
                        {"kernel_size", d.kernel_size},
                        {"pool_size", d.pool_size},
                        {"dropout_p", d.dropout_p},
                        {"fc_widths", d.fc_widths}};
}

inline ArchitectureDescriptor descriptor_from_json(const nlohmann::json& j) {
  ArchitectureDescriptor d;
  d.input_channels = j.at("input_channels").get<int>();
  d.input_timesteps = j.at("input_timesteps").get<int>();
  d.conv_maps = j.at("conv_maps").get<std::vector<int>>();
  d.kernel_size = j.at("kernel_size").get<int>();
  d.pool_size = j.at("pool_size").get<int>();
  d.dropout_p = j.at("dropout_p").get<double>();
  d.fc_widths = j.at("fc_widths").get<std::vector<int>>();
  return d;
}

}  // namespace detail

static_assert(sizeof(double) == 8, "checkpoint format assumes 8-byte doubles");

inline std::string serialize_params(const RegressorParams& params) {
  const auto arrays = detail::checkpoint_arrays(params);
  nlohmann::json header;
  header["format_version"] = params.format_version;
  header["descriptor"] = detail::descriptor_to_json(params.descriptor);
  header["target_mean"] = params.target_mean;
  header["target_std"] = params.target_std;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& a : arrays) {
    manifest.push_back({{"name", a.name}, {"count", a.data->size()}});
  }
  header["arrays"] = manifest;
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::append_u32(out, params.format_version);
  detail::append_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  for (const auto& a : arrays) {
    const std::size_t bytes = a.data->size() * sizeof(double);
    const std::size_t offset = out.size();
    out.resize(offset + bytes);
    std::memcpy(out.data() + offset, a.data->data(), bytes);
  }
  return out;
}

inline RegressorParams deserialize_params(std::string_view data) {
  constexpr std::size_t kPrefix = sizeof(kCheckpointMagic) + 8;
  if (data.size() < kPrefix || std::memcmp(data.data(), kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("corrupt checkpoint: bad magic");
  }
  const std::uint32_t version = detail::read_u32(data, 8);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint format version " + std::to_string(version));
  }
  const std::uint32_t header_len = detail::read_u32(data, 12);
  if (data.size() < kPrefix + header_len) {
    throw std::runtime_error("corrupt checkpoint: truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(data.substr(kPrefix, header_len));
  } catch (const nlohmann::json::exception&) {
    throw std::runtime_error("corrupt checkpoint: unreadable header");
  }

  RegressorParams params;
  params.format_version = version;
  params.descriptor = detail::descriptor_from_json(header.at("descriptor"));
  params.descriptor.validate();
  params.target_mean = header.at("target_mean").get<double>();
  params.target_std = header.at("target_std").get<double>();
  params.conv.resize(params.descriptor.conv_maps.size());
  params.fc.resize(params.descriptor.fc_widths.size());

  const auto slots = detail::checkpoint_arrays_mutable(params);
  const auto& manifest = header.at("arrays");
  if (manifest.size() != slots.size()) {
    throw std::runtime_error("corrupt checkpoint: array manifest mismatch");
  }
  std::size_t offset = kPrefix + header_len;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const std::size_t count = manifest[i].at("count").get<std::size_t>();
    const std::size_t bytes = count * sizeof(double);
    if (data.size() < offset + bytes) {
      throw std::runtime_error("corrupt checkpoint: truncated arrays");
    }
    slots[i]->resize(count);
    std::memcpy(slots[i]->data(), data.data() + offset, bytes);
    offset += bytes;
  }
  if (offset != data.size()) {
    throw std::runtime_error("corrupt checkpoint: trailing bytes");
  }

  // Shape sanity against the descriptor.
  const auto dims = detail::stage_dims(params.descriptor);
  for (std::size_t s = 0; s < dims.size(); ++s) {
    const std::size_t maps = static_cast<std::size_t>(dims[s].maps);
    const std::size_t expect = maps * dims[s].in_c * params.descriptor.kernel_size;
    if (params.conv[s].weight.size() != expect || params.conv[s].bias.size() != maps ||
        params.conv[s].bn_gamma.size() != maps || params.conv[s].bn_beta.size() != maps ||
        params.conv[s].bn_running_mean.size() != maps ||
        params.conv[s].bn_running_var.size() != maps) {
      throw std::runtime_error("corrupt checkpoint: conv tensor shape mismatch");
    }
    for (double v : params.conv[s].bn_running_var) {
      if (!(v > 0.0)) throw std::runtime_error("corrupt checkpoint: non-positive running variance");
    }
  }
  int fc_in = params.descriptor.flatten_dim();
  for (std::size_t l = 0; l < params.fc.size(); ++l) {
    const std::size_t out_dim = static_cast<std::size_t>(params.descriptor.fc_widths[l]);
    if (params.fc[l].weight.size() != out_dim * fc_in || params.fc[l].bias.size() != out_dim) {
      throw std::runtime_error("corrupt checkpoint: fc tensor shape mismatch");
    }
    fc_in = params.descriptor.fc_widths[l];
  }
  if (params.feature_mean.size() != FeatureWindow::kValues ||
      params.feature_std.size() != FeatureWindow::kValues) {
    throw std::runtime_error("corrupt checkpoint: normalization shape mismatch");
  }
  return params;
}

inline void save_checkpoint(const RegressorParams& params, const std::filesystem::path& path) {
  const std::string bytes = serialize_params(params);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);  // atomic publish
}

inline RegressorParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

}  // namespace icregress
