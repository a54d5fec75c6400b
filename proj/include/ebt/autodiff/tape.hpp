#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ebt/autodiff/tensor.hpp"

namespace ebt::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using Gradients = std::map<std::string, Tensor>;

/// Define-by-run record of primitive operations. Single-threaded; build a
/// fresh tape per forward pass.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Registers a named leaf whose gradient backward() reports.
  Var parameter(const std::string& name, Tensor value);
  std::optional<Var> find_parameter(const std::string& name) const;

  /// d(root)/d(param) for every registered parameter. Parameters the root
  /// does not depend on get zero tensors. Root must hold exactly one element.
  Gradients backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Primitive-implementation API.
  Var record(Tensor value, bool needs_grad, Backprop backprop, const char* op);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Upstream gradient of a node during backward().
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  /// Accumulation buffer for an input's gradient; allocated on first use.
  Tensor& grad_accum(std::size_t id);
  Var var(std::size_t id) { return Var(this, id); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backprop backprop;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> params_;
};

}  // namespace ebt::ad
