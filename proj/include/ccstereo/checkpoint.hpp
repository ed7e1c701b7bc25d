#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccstereo/model.hpp"
#include "ccstereo/optim.hpp"

namespace ccs {

// Text header (magic, config hash, counters, tensor directory), a "---"
// separator, then raw little-endian float32 blobs in directory order.
// Parameters are tagged p, batchnorm buffers b, Adam moments m and v.
inline constexpr const char* kCheckpointMagic = "ccstereo-checkpoint v1";

struct CheckpointMeta {
  int64_t step = 0;
  int64_t epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
};

namespace detail {

inline void write_f32_blob(std::ostream& out, const std::vector<uint8_t>& bytes) {
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
std::vector<uint8_t> to_f32_bytes(const std::vector<T>& values) {
  std::vector<uint8_t> bytes(values.size() * 4);
  for (size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    bytes[i * 4 + 0] = static_cast<uint8_t>(u);
    bytes[i * 4 + 1] = static_cast<uint8_t>(u >> 8);
    bytes[i * 4 + 2] = static_cast<uint8_t>(u >> 16);
    bytes[i * 4 + 3] = static_cast<uint8_t>(u >> 24);
  }
  return bytes;
}

template <typename T>
void from_f32_bytes(std::istream& in, std::vector<T>* values) {
  std::vector<uint8_t> bytes(values->size() * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
  for (size_t i = 0; i < values->size(); ++i) {
    const uint32_t u = static_cast<uint32_t>(bytes[i * 4 + 0]) |
                       (static_cast<uint32_t>(bytes[i * 4 + 1]) << 8) |
                       (static_cast<uint32_t>(bytes[i * 4 + 2]) << 16) |
                       (static_cast<uint32_t>(bytes[i * 4 + 3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    (*values)[i] = static_cast<T>(f);
  }
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const ad::Adam<T>* optimizer,
                     const CheckpointMeta& meta) {
  const ParamStore<T>& store = model.params();

  // Moment blobs are named after their parameters; map node identity to name.
  std::map<const void*, std::string> names;
  for (const auto& [name, tensor] : store.entries()) names[tensor.node().get()] = name;

  std::ostringstream header;
  header << kCheckpointMagic << "\n";
  header << "config_hash " << std::hex << model.config().hash() << std::dec << "\n";
  header << "step " << meta.step << "\n";
  header << "epoch " << meta.epoch << "\n";
  header << "best_val " << detail::format_double(meta.best_val) << "\n";

  std::ostringstream directory;
  std::vector<std::vector<uint8_t>> blobs;
  size_t count = 0;
  auto push = [&](char tag, const std::string& name, const std::vector<T>& values) {
    directory << tag << " " << name << " " << values.size() << "\n";
    blobs.push_back(detail::to_f32_bytes(values));
    ++count;
  };

  for (const auto& [name, tensor] : store.entries()) push('p', name, tensor.node()->values);
  for (size_t i = 0; i < store.buffer_count(); ++i) push('b', store.buffer_name(i), store.buffer(i));
  if (optimizer) {
    size_t flat = 0;
    for (const auto& group : optimizer->groups())
      for (const auto& param : group.params) {
        const auto it = names.find(param.node().get());
        if (it == names.end())
          throw std::logic_error("save_checkpoint: optimizer param not in model");
        push('m', it->second, optimizer->moment_m(flat));
        push('v', it->second, optimizer->moment_v(flat));
        ++flat;
      }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out << header.str();
  out << "tensors " << count << "\n";
  out << directory.str();
  out << "---\n";
  for (const auto& blob : blobs) detail::write_f32_blob(out, blob);
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, Model<T>* model, ad::Adam<T>* optimizer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);

  auto next_line = [&in, &path]() {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated header in " + path);
    return line;
  };

  if (next_line() != kCheckpointMagic)
    throw std::runtime_error("checkpoint: bad magic in " + path);

  auto parse_field = [&](const std::string& line, const std::string& key) {
    if (line.rfind(key + " ", 0) != 0)
      throw std::runtime_error("checkpoint: expected \"" + key + "\" in " + path);
    return line.substr(key.size() + 1);
  };

  const uint64_t hash = std::stoull(parse_field(next_line(), "config_hash"), nullptr, 16);
  if (hash != model->config().hash())
    throw std::runtime_error("checkpoint: config hash mismatch; the checkpoint was trained with a "
                             "different model configuration");

  CheckpointMeta meta;
  meta.step = std::stoll(parse_field(next_line(), "step"));
  meta.epoch = std::stoll(parse_field(next_line(), "epoch"));
  meta.best_val = std::stod(parse_field(next_line(), "best_val"));
  const size_t count = std::stoull(parse_field(next_line(), "tensors"));

  struct Entry {
    char tag;
    std::string name;
    size_t numel;
  };
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    std::istringstream line(next_line());
    if (!(line >> e.tag >> e.name >> e.numel))
      throw std::runtime_error("checkpoint: malformed tensor entry in " + path);
  }
  if (next_line() != "---") throw std::runtime_error("checkpoint: missing separator in " + path);

  ParamStore<T>& store = model->params();
  std::map<std::string, std::vector<T>*> params, buffers, m_slots, v_slots;
  for (auto& [name, tensor] : store.entries()) params[name] = &tensor.node()->values;
  for (size_t i = 0; i < store.buffer_count(); ++i) buffers[store.buffer_name(i)] = &store.buffer(i);
  if (optimizer) {
    std::map<const void*, std::string> names;
    for (const auto& [name, tensor] : store.entries()) names[tensor.node().get()] = name;
    size_t flat = 0;
    for (const auto& group : optimizer->groups())
      for (const auto& param : group.params) {
        const auto it = names.find(param.node().get());
        if (it == names.end())
          throw std::logic_error("load_checkpoint: optimizer param not in model");
        m_slots[it->second] = &optimizer->moment_m(flat);
        v_slots[it->second] = &optimizer->moment_v(flat);
        ++flat;
      }
  }

  size_t moments_loaded = 0;
  for (const auto& e : entries) {
    std::vector<T>* target = nullptr;
    switch (e.tag) {
      case 'p': {
        auto it = params.find(e.name);
        if (it != params.end()) target = it->second;
        break;
      }
      case 'b': {
        auto it = buffers.find(e.name);
        if (it != buffers.end()) target = it->second;
        break;
      }
      case 'm':
      case 'v': {
        auto& slots = e.tag == 'm' ? m_slots : v_slots;
        auto it = slots.find(e.name);
        if (it != slots.end()) {
          target = it->second;
          ++moments_loaded;
        } else if (!optimizer) {
          // Weights-only load: skip optimizer state.
          in.seekg(static_cast<std::streamoff>(e.numel * 4), std::ios::cur);
          continue;
        }
        break;
      }
      default:
        throw std::runtime_error("checkpoint: unknown tensor tag in " + path);
    }
    if (!target) throw std::runtime_error("checkpoint: unexpected tensor \"" + e.name + "\"");
    if (target->size() != e.numel)
      throw std::runtime_error("checkpoint: size mismatch for \"" + e.name + "\"");
    detail::from_f32_bytes(in, target);
  }

  if (optimizer) {
    if (moments_loaded != m_slots.size() + v_slots.size())
      throw std::runtime_error("checkpoint: missing optimizer state in " + path);
    optimizer->set_step_count(meta.step);
  }
  return meta;
}

}  // namespace ccs
