#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "featprobe/error.hpp"

namespace featprobe {

using Dims = std::vector<std::uint64_t>;

inline std::uint64_t dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>());
}

inline std::string dims_string(const Dims& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

/// Named row-major f32 tensor. Validated on construction.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::string name, Dims dims, std::vector<float> data)
      : name_(std::move(name)), dims_(std::move(dims)), data_(std::move(data)) {
    validate();
  }

  /// Zero-filled tensor of the given shape.
  Tensor(std::string name, Dims dims) : name_(std::move(name)), dims_(std::move(dims)) {
    require(!dims_.empty(), Errc::shape_mismatch, "tensor '" + name_ + "' has no dims");
    data_.assign(dims_product(dims_), 0.0f);
    validate();
  }

  const std::string& name() const { return name_; }
  const Dims& dims() const { return dims_; }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return static_cast<std::size_t>(dims_.at(i)); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // [C,H,W] accessors; caller guarantees rank 3.
  float& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * dims_[1] + h) * dims_[2] + w];
  }
  float at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * dims_[1] + h) * dims_[2] + w];
  }

  void rename(std::string name) { name_ = std::move(name); }

  bool operator==(const Tensor&) const = default;

 private:
  void validate() const {
    require(!dims_.empty(), Errc::shape_mismatch, "tensor '" + name_ + "' has no dims");
    for (auto d : dims_)
      require(d >= 1, Errc::shape_mismatch, "tensor '" + name_ + "' has a zero dim");
    require(dims_product(dims_) == data_.size(), Errc::shape_mismatch,
            "tensor '" + name_ + "' dims " + dims_string(dims_) + " do not match data length " +
                std::to_string(data_.size()));
  }

  std::string name_;
  Dims dims_;
  std::vector<float> data_;
};

/// Ordered name -> tensor map plus free-form string metadata.
class TensorBundle {
 public:
  using Meta = std::map<std::string, std::string>;

  void add(Tensor t) {
    require(!contains(t.name()), Errc::invalid_argument, "duplicate tensor name '" + t.name() + "'");
    index_.emplace(t.name(), entries_.size());
    entries_.push_back(std::move(t));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), Errc::shape_mismatch, "bundle has no tensor '" + name + "'");
    return entries_[it->second];
  }

  const std::vector<Tensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  Meta& meta() { return meta_; }
  const Meta& meta() const { return meta_; }

  bool operator==(const TensorBundle& o) const {
    return entries_ == o.entries_ && meta_ == o.meta_;
  }

 private:
  std::vector<Tensor> entries_;
  std::map<std::string, std::size_t> index_;
  Meta meta_;
};

}  // namespace featprobe
