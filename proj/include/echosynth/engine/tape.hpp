#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "echosynth/engine/tensor.hpp"

namespace echosynth::engine {

// Append-only record of the forward pass. Nodes are replayed once, in
// reverse insertion order, which is a valid topological order because an
// op's operands always exist before its output. Distinct tapes are
// independent; one tape has a single writer.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  int record(BackwardFn fn) {
    if (consumed_)
      throw std::runtime_error("Tape: recording after backward; call reset() first");
    nodes_.push_back(std::move(fn));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void backward(Tensor& loss) {
    if (consumed_)
      throw std::runtime_error("Tape: backward already ran; re-record before calling it again");
    if (loss.numel() != 1)
      throw std::invalid_argument("Tape: backward requires a scalar loss, got " +
                                  shape_str(loss.shape()));
    if (loss.tape != this || loss.node < 0)
      throw std::invalid_argument("Tape: loss was not recorded on this tape");
    consumed_ = true;
    loss.grad()[0] = 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<BackwardFn> nodes_;
  bool consumed_ = false;
};

}  // namespace echosynth::engine
