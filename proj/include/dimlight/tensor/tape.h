#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dimlight/tensor/tensor.h"

namespace dimlight {

/// Ordered record of differentiable operations executed while the tape is
/// recording. backward() replays the record in exact reverse order.
///
///   Tape<float> tape;
///   Tensor<float> loss;
///   {
///     auto rec = tape.record();
///     loss = ops::mean(ops::abs(ops::sub(model.forward(x), y)));
///   }
///   tape.backward(loss);
///
/// A tape is single-use: after backward() it must be reset() before the
/// next forward pass. Ops executed while no tape is recording build no graph.
template <typename T>
class Tape {
 public:
  /// Propagates the output gradient into the operation's inputs.
  using BackwardFn = std::function<void(std::span<const T> out_grad)>;

  class Recording {
   public:
    explicit Recording(Tape* tape) : previous_(active_) { active_ = tape; }
    ~Recording() { active_ = previous_; }
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] Recording record() {
    if (consumed_) throw ContractError("tape already consumed by backward(); call reset() first");
    return Recording(this);
  }

  /// The tape ops on this thread currently record into, if any.
  static Tape* active() { return active_; }

  void push(const Tensor<T>& output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded node in reverse.
  /// Gradients accumulate into leaf tensors that require them; gradient
  /// buffers of intermediate outputs are released as soon as they are used.
  void backward(const Tensor<T>& loss);

  void reset();
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor<T> output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;

  static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

/// True when an op over `inputs` must be recorded on the active tape.
template <typename T>
bool grad_enabled(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Marks `out` as differentiable and appends its backward function to the
/// active tape. Call only when grad_enabled() returned true.
template <typename T, typename Fn>
void record_op(Tensor<T>& out, Fn&& fn) {
  out.set_requires_grad(true);
  Tape<T>::active()->push(out, std::forward<Fn>(fn));
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace dimlight
