#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "nav/nn.hpp"
#include "nav/tensor.hpp"

namespace nav {

/// One tensor in a checkpoint container. Values are float32 on disk.
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Flat binary container: magic "NAVCKPT1", u64 manifest length, JSON
/// manifest (meta + tensor directory), then raw little-endian float32
/// payload. Layout documented in FORMATS.md.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  void add(const std::string& name, Shape shape, std::vector<float> values) {
    NAV_CHECK_SHAPE(
        static_cast<std::int64_t>(values.size()) == shape_numel(shape),
        "checkpoint tensor size mismatch for " + name);
    tensors.push_back({name, std::move(shape), std::move(values)});
  }
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);  // IoError on bad file

/// Appends every parameter in the store (converted to float32).
template <class T>
void pack_params(const ParamStore<T>& params, Checkpoint& ck,
                 const std::string& prefix = "") {
  for (const auto& [name, t] : params.items()) {
    std::vector<float> v(static_cast<std::size_t>(t.numel()));
    const T* d = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i)
      v[static_cast<std::size_t>(i)] = static_cast<float>(d[i]);
    ck.add(prefix + name, t.shape(), std::move(v));
  }
}

/// Strict restore: every parameter in the store must be present with a
/// matching shape, otherwise CheckpointError.
template <class T>
void unpack_params(const Checkpoint& ck, ParamStore<T>& params,
                   const std::string& prefix = "") {
  for (auto& [name, t] : params.items()) {
    const NamedTensor* src = ck.find(prefix + name);
    NAV_CHECK(src != nullptr, CheckpointError,
              "checkpoint is missing parameter " + prefix + name);
    NAV_CHECK(src->shape == t.shape(), CheckpointError,
              "checkpoint shape mismatch for " + prefix + name + ": stored " +
                  shape_str(src->shape) + ", expected " + shape_str(t.shape()));
    T* d = t.data();
    for (std::size_t i = 0; i < src->values.size(); ++i)
      d[i] = static_cast<T>(src->values[i]);
  }
}

}  // namespace nav
