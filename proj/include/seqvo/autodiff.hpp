#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "seqvo/tensor.hpp"

namespace seqvo::ad {

// Storage is always double. In kFloat32 mode every recorded value is rounded
// to the nearest float, so values, parameters and checkpoints carry exactly
// 32-bit information. kFloat64 keeps full precision for gradient checks.
enum class Precision { kFloat32, kFloat64 };

struct Diagnostics {
  std::size_t log_clamped = 0;   // log() arguments that were <= 0
  std::size_t div_guarded = 0;   // denominators replaced by +-1e-12
};

using NodeId = std::uint32_t;

class Tape;

// Lightweight handle to a node on a tape. Valid for the lifetime of the tape.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  NodeId id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const;
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

class Tape {
 public:
  // Invoked during backward with the id of the node whose gradient is being
  // propagated. Implementations read grad(self) and accumulate into
  // grad_accum(input) for inputs that require gradients.
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  explicit Tape(Precision precision = Precision::kFloat32) : precision_(precision) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Precision precision() const noexcept { return precision_; }

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an operation output. The value is rounded according to the
  // tape precision. If no input requires gradients the backward rule is
  // dropped and the output is a constant.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  // Seeds d(root)/d(root) = 1 and replays backward rules in reverse
  // recording order. Previous gradients are cleared first, so repeated calls
  // produce identical results.
  void backward(Var root);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  // Gradient of a node; all zeros when nothing flowed into it.
  const Tensor& grad(NodeId id) const;
  Tensor& grad_accum(NodeId id);
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }

  std::size_t size() const noexcept { return nodes_.size(); }
  Diagnostics& diagnostics() noexcept { return diagnostics_; }
  const Diagnostics& diagnostics() const noexcept { return diagnostics_; }

  void round_in_place(Tensor& t) const;

 private:
  struct Node {
    Tensor value;
    mutable Tensor grad;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Precision precision_;
  std::deque<Node> nodes_;  // stable references across record()
  Diagnostics diagnostics_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }
inline const Shape& Var::shape() const { return tape_->value(id_).shape(); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// Rounds to the nearest float when the precision is kFloat32.
inline double round_to(Precision p, double v) {
  return p == Precision::kFloat32 ? static_cast<double>(static_cast<float>(v)) : v;
}

}  // namespace seqvo::ad
