#include "dimlight/tensor/tape.h"

#include <algorithm>

namespace dimlight {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "," +
         std::to_string(s[3]) + ")";
}

template <typename T>
Tape<T>::~Tape() {
  if (active_ == this) active_ = nullptr;
}

template <typename T>
void Tape<T>::push(const Tensor<T>& output, BackwardFn fn) {
  if (consumed_) throw ContractError("recording onto a consumed tape");
  nodes_.push_back(Node{output, std::move(fn)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw ContractError("backward() called twice on the same tape without a new forward pass");
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  auto it = std::find_if(nodes_.rbegin(), nodes_.rend(),
                         [&](const Node& n) { return n.output.same_storage(loss); });
  if (it == nodes_.rend()) throw ContractError("loss was not produced by this tape");

  Tensor<T> seed = loss;
  seed.ensure_grad()[0] = T(1);
  for (; it != nodes_.rend(); ++it) {
    Tensor<T>& out = it->output;
    if (!out.has_grad()) continue;
    it->fn(out.grad());
    out.release_grad();
  }
  nodes_.clear();
  consumed_ = true;
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  consumed_ = false;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace dimlight
