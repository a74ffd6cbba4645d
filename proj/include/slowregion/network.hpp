#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "slowregion/layers.hpp"
#include "slowregion/rng.hpp"

namespace slowregion {

struct NetworkProfile {
  std::string name;
  int in_channels = 3;
  int in_size = 0;
  std::vector<LayerSpec> layers;
};

// Full-scale architecture: the classic five-conv stack (without channel
// groups or local response normalization) plus two fully connected layers,
// the second of which is the 1024-wide embedding.
inline NetworkProfile paper_network_profile() {
  NetworkProfile p;
  p.name = "paper";
  p.in_size = 227;
  p.layers = {
      LayerSpec::conv(96, 11, 4, 0), LayerSpec::relu(), LayerSpec::maxpool(3, 2),
      LayerSpec::conv(256, 5, 1, 2), LayerSpec::relu(), LayerSpec::maxpool(3, 2),
      LayerSpec::conv(384, 3, 1, 1), LayerSpec::relu(),
      LayerSpec::conv(384, 3, 1, 1), LayerSpec::relu(),
      LayerSpec::conv(256, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(3, 2),
      LayerSpec::fc(4096),           LayerSpec::relu(),
      LayerSpec::fc(1024),
  };
  return p;
}

// CPU-scale architecture for 64 x 64 crops, ending in a 32-wide embedding.
inline NetworkProfile desk_network_profile() {
  NetworkProfile p;
  p.name = "desk";
  p.in_size = 64;
  p.layers = {
      LayerSpec::conv(16, 5, 2, 0), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
      LayerSpec::conv(32, 3, 1, 0), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
      LayerSpec::conv(32, 3, 1, 0), LayerSpec::relu(),
      LayerSpec::fc(128),           LayerSpec::relu(),
      LayerSpec::fc(32),
  };
  return p;
}

inline NetworkProfile network_profile(const std::string& name) {
  if (name == "paper") return paper_network_profile();
  if (name == "desk") return desk_network_profile();
  throw ConfigError("unknown network profile: " + name);
}

template <typename T>
struct ModelCache {
  std::vector<LayerCache<T>> layers;
};

// A profile instantiated with parameter storage. Forward/backward operate
// on one sample; the caller owns one ModelCache per in-flight sample, so a
// whole batch can be run forward before any backward pass.
template <typename T>
class Model {
 public:
  explicit Model(const NetworkProfile& profile) : profile_(profile) {
    std::vector<int> shape = {profile.in_channels, profile.in_size, profile.in_size};
    for (const auto& spec : profile.layers) {
      layers_.push_back(make_layer<T>(spec, shape));
      shape = layers_.back()->out_shape(shape);
      shapes_.push_back(shape);
    }
    if (shape.size() != 1) throw ShapeError("profile does not end in a vector output");
  }

  const NetworkProfile& profile() const { return profile_; }
  std::vector<int> input_shape() const {
    return {profile_.in_channels, profile_.in_size, profile_.in_size};
  }
  int embedding_dim() const { return shapes_.back()[0]; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }

  // Weights from a zero-mean gaussian with std 0.01, biases zero. Each
  // parameter tensor gets its own derived stream, so the values do not
  // depend on how other layers are sized.
  void init(std::uint64_t seed) {
    std::size_t param_index = 0;
    for (auto& layer : layers_) {
      for (auto& p : layer->params()) {
        Rng rng = Rng::stream(seed, fnv1a64("init"), param_index++);
        if (p.name == "bias") {
          p.value->fill(T(0));
        } else {
          for (auto& v : p.value->data) v = static_cast<T>(rng.normal(0.0, 0.01));
        }
        p.grad->fill(T(0));
      }
    }
  }

  Tensor<T> forward(const Tensor<T>& x, ModelCache<T>& cache) const {
    if (x.shape != input_shape()) {
      throw ShapeError("model input " + shape_string(x.shape) + ", expected " +
                       shape_string(input_shape()));
    }
    cache.layers.resize(layers_.size());
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      cur = layers_[i]->forward(cur, cache.layers[i]);
    }
    return cur;
  }

  // Embedding gradient in, input gradient out; parameter gradients
  // accumulate across calls until zero_grad().
  Tensor<T> backward(const Tensor<T>& dy, const ModelCache<T>& cache) {
    Tensor<T> cur = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      cur = layers_[i]->backward(cur, cache.layers[i]);
    }
    return cur;
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (auto& p : layers_[i]->params()) {
        out.push_back({"layer" + std::to_string(i) + "." + p.name, p.value, p.grad});
      }
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : params()) p.grad->fill(T(0));
  }

  double weight_sq_norm() {
    double s = 0.0;
    for (auto& p : params()) {
      for (T v : p.value->data) s += static_cast<double>(v) * static_cast<double>(v);
    }
    return s;
  }

 private:
  NetworkProfile profile_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<std::vector<int>> shapes_;
};

// ---- checkpoints -----------------------------------------------------------
//
// Layout: magic "SRCK", version u32, profile id (u32 length + bytes),
// iteration u64, config hash u64, parameter count u32, then per parameter a
// shape table entry (name, ndims, dims) followed by the values as
// little-endian f32.

struct CheckpointMeta {
  std::string profile;
  std::uint64_t iteration = 0;
  std::uint64_t config_hash = 0;
};

namespace detail {

inline void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline void write_str(std::ofstream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_str(std::ifstream& in) {
  const std::uint32_t n = read_u32(in);
  if (n > 4096) throw DecodeError("checkpoint: unreasonable string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

}  // namespace detail

// Header only — profile id, iteration, config hash — without needing a
// constructed model.
inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SRCK", 4) != 0) throw DecodeError(path + ": bad magic");
  if (detail::read_u32(in) != 1) throw DecodeError(path + ": unsupported version");
  CheckpointMeta meta;
  meta.profile = detail::read_str(in);
  meta.iteration = detail::read_u64(in);
  meta.config_hash = detail::read_u64(in);
  if (!in) throw DecodeError(path + ": truncated header");
  return meta;
}

template <typename T>
void save_checkpoint(Model<T>& model, const std::string& path, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write("SRCK", 4);
  detail::write_u32(out, 1);
  detail::write_str(out, meta.profile);
  detail::write_u64(out, meta.iteration);
  detail::write_u64(out, meta.config_hash);
  auto params = model.params();
  detail::write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (auto& p : params) {
    detail::write_str(out, p.name);
    detail::write_u32(out, static_cast<std::uint32_t>(p.value->shape.size()));
    for (int d : p.value->shape) detail::write_u32(out, static_cast<std::uint32_t>(d));
    for (T v : p.value->data) {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), sizeof(f));
    }
  }
  if (!out) throw IoError("short write to " + path);
}

template <typename T>
CheckpointMeta load_checkpoint(Model<T>& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SRCK", 4) != 0) throw DecodeError(path + ": bad magic");
  if (detail::read_u32(in) != 1) throw DecodeError(path + ": unsupported version");
  CheckpointMeta meta;
  meta.profile = detail::read_str(in);
  meta.iteration = detail::read_u64(in);
  meta.config_hash = detail::read_u64(in);
  if (meta.profile != model.profile().name) {
    throw ConfigError("checkpoint profile '" + meta.profile + "' does not match model '" +
                      model.profile().name + "'");
  }
  const std::uint32_t count = detail::read_u32(in);
  auto params = model.params();
  if (count != params.size()) throw DecodeError(path + ": parameter count mismatch");
  for (auto& p : params) {
    const std::string name = detail::read_str(in);
    if (name != p.name) throw DecodeError(path + ": parameter order mismatch at " + name);
    const std::uint32_t ndims = detail::read_u32(in);
    std::vector<int> dims(ndims);
    for (auto& d : dims) d = static_cast<int>(detail::read_u32(in));
    if (dims != p.value->shape) throw DecodeError(path + ": shape mismatch for " + name);
    for (T& v : p.value->data) {
      float f{};
      in.read(reinterpret_cast<char*>(&f), sizeof(f));
      v = static_cast<T>(f);
    }
  }
  if (!in) throw DecodeError(path + ": truncated weights");
  return meta;
}

}  // namespace slowregion
