#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "telkit/common.hpp"

namespace telkit {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major array. Training uses `float`; gradient checks instantiate
/// the same code with `double`.
template <class S>
class BasicTensor {
 public:
  using value_type = S;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, S fill = S{0})
      : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
      throw ShapeError("tensor data does not match shape " +
                       telkit::to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::span<S> values() { return data_; }
  std::span<const S> values() const { return data_; }
  std::vector<S>& storage() { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }
  S& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  const S& operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  S& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const S& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Reinterprets the extents; the element count must not change.
  void reshape(Shape shape) {
    if (numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + telkit::to_string(shape_) + " to " +
                       telkit::to_string(shape));
    }
    shape_ = std::move(shape);
  }
  BasicTensor reshaped(Shape shape) const {
    BasicTensor t = *this;
    t.reshape(std::move(shape));
    return t;
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(S{0}); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](S v) { return std::isfinite(v); });
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  Shape shape_;
  std::vector<S> data_;
};

using Tensor = BasicTensor<float>;

template <class D, class S>
BasicTensor<D> tensor_cast(const BasicTensor<S>& t) {
  std::vector<D> out(t.values().begin(), t.values().end());
  return BasicTensor<D>(t.shape(), std::move(out));
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

/// Trainable tensor with its gradient and SGD momentum buffer.
template <class S>
struct Param {
  BasicTensor<S> value;
  BasicTensor<S> grad;
  BasicTensor<S> velocity;

  Param() = default;
  explicit Param(Shape shape)
      : value(shape), grad(shape), velocity(std::move(shape)) {}

  void zero_grad() { grad.zero(); }
};

template <class S>
struct NamedParam {
  std::string name;
  Param<S>* param;
};

template <class S>
using ParamList = std::vector<NamedParam<S>>;

/// He-uniform initialisation: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <class S>
void he_uniform(BasicTensor<S>& t, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.values()) v = static_cast<S>(u(rng));
}

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
};

/// v <- momentum * v + g; p <- p - lr * v; g <- 0.
template <class S>
void sgd_step(const ParamList<S>& params, SgdOptions opt = {}) {
  for (const auto& np : params) {
    auto& p = *np.param;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double v =
          opt.momentum * double{p.velocity[i]} + double{p.grad[i]};
      p.velocity[i] = static_cast<S>(v);
      p.value[i] = static_cast<S>(double{p.value[i]} - opt.lr * v);
    }
    p.zero_grad();
  }
}

template <class S>
void zero_grads(const ParamList<S>& params) {
  for (const auto& np : params) np.param->zero_grad();
}

template <class S>
std::size_t parameter_count(const ParamList<S>& params) {
  std::size_t n = 0;
  for (const auto& np : params) n += np.param->value.size();
  return n;
}

// ---------------------------------------------------------------------------
// TKW1 checkpoints: "TKW1", u32 count, then per tensor
//   u32 name length, name bytes, u32 rank, rank x u32 extents, f32 payload.

template <class S>
std::string encode_checkpoint(const ParamList<S>& params) {
  std::string out = "TKW1";
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& np : params) {
    const auto& t = np.param->value;
    detail::put_u32(out, static_cast<std::uint32_t>(np.name.size()));
    out += np.name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
    for (auto v : t.values()) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

struct CheckpointTensor {
  std::string name;
  Tensor value;
};

inline std::vector<CheckpointTensor> decode_checkpoint(std::string_view bytes) {
  detail::ByteReader in(bytes, "checkpoint");
  if (in.take(4) != "TKW1") throw FormatError("checkpoint: bad magic");
  const auto count = in.u32();
  std::vector<CheckpointTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor ct;
    ct.name = std::string(in.take(in.u32()));
    Shape shape(in.u32());
    for (auto& e : shape) e = in.u32();
    std::vector<float> data(numel(shape));
    for (auto& v : data) v = in.f32();
    ct.value = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(ct));
  }
  if (!in.done()) throw FormatError("checkpoint: trailing bytes");
  return out;
}

/// Copies checkpoint tensors into `params`, which must match by name and
/// shape exactly.
template <class S>
void apply_checkpoint(const std::vector<CheckpointTensor>& tensors,
                      const ParamList<S>& params) {
  if (tensors.size() != params.size()) {
    throw ValidationError("incompatible checkpoint: expected " +
                          std::to_string(params.size()) + " tensors, found " +
                          std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i].param;
    if (tensors[i].name != params[i].name ||
        tensors[i].value.shape() != p.value.shape()) {
      throw ValidationError("incompatible checkpoint shape for '" +
                            params[i].name + "': expected " +
                            to_string(p.value.shape()) + ", found '" +
                            tensors[i].name + "' " +
                            to_string(tensors[i].value.shape()));
    }
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      p.value[k] = static_cast<S>(tensors[i].value[k]);
    }
  }
}

template <class S>
void save_checkpoint(const std::filesystem::path& path,
                     const ParamList<S>& params) {
  detail::write_file_atomic(path, encode_checkpoint(params));
}

template <class S>
void load_checkpoint(const std::filesystem::path& path,
                     const ParamList<S>& params) {
  apply_checkpoint(decode_checkpoint(detail::read_file(path)), params);
}

}  // namespace telkit
