#include "famt/params.hpp"

#include <cstring>

#include "famt/errors.hpp"

namespace famt {

std::size_t ParameterSet::add(std::string name, Tensor value, bool decay) {
  if (find(name)) throw UsageError("duplicate parameter name '" + name + "'");
  params_.push_back({std::move(name), std::move(value), decay});
  return params_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  return std::nullopt;
}

std::vector<Tensor> ParameterSet::zeros_like() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.value.dims());
  return out;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::uint64_t ParameterSet::checksum(std::string_view prefix) const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& p : params_) {
    if (!p.name.starts_with(prefix)) continue;
    mix(p.name.data(), p.name.size());
    mix(p.value.ptr(), p.value.size() * sizeof(double));
  }
  return h;
}

Bound::Bound(ag::Tape& tape, const ParameterSet& params, std::vector<Tensor>* grads)
    : tape_(tape), params_(params), grads_(grads), cache_(params.size()) {
  if (grads_ != nullptr && grads_->size() != params.size()) {
    throw ShapeError("Bound: gradient buffer count does not match parameters");
  }
}

ag::Var Bound::operator()(std::size_t id) {
  if (!cache_[id].valid()) {
    Tensor* sink = grads_ != nullptr ? &(*grads_)[id] : nullptr;
    cache_[id] = tape_.parameter(params_[id].value, sink);
  }
  return cache_[id];
}

}  // namespace famt
