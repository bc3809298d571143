#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "famt/autograd.hpp"
#include "famt/tensor.hpp"

namespace famt {

struct Parameter {
  std::string name;
  Tensor value;
  bool decay = false;  // decoupled weight decay applies (weight matrices only)
};

class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value, bool decay);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::vector<Tensor> zeros_like() const;
  std::size_t element_count() const;
  // FNV-1a over names and raw value bytes of parameters whose name starts
  // with `prefix` (all parameters when empty).
  std::uint64_t checksum(std::string_view prefix = {}) const;

 private:
  std::vector<Parameter> params_;
};

// Lazily binds parameters onto a tape. Gradients land in `grads[i]` when
// backward runs; pass nullptr for inference.
class Bound {
 public:
  Bound(ag::Tape& tape, const ParameterSet& params, std::vector<Tensor>* grads);

  ag::Var operator()(std::size_t id);
  ag::Tape& tape() { return tape_; }

 private:
  ag::Tape& tape_;
  const ParameterSet& params_;
  std::vector<Tensor>* grads_;
  std::vector<ag::Var> cache_;
};

}  // namespace famt
