#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "mancount/tensor.hpp"

namespace mancount {

/// Reverse-mode tape. Ops append nodes in topological order (inputs
/// always recorded before outputs); backward() walks the list once in
/// reverse and accumulates into per-node gradient buffers. Everything
/// is single-threaded and the accumulation order is fixed, so repeated
/// runs are bit-identical.
class Tape {
 public:
  using BackwardFn =
      std::function<void(Tape& tape, const std::vector<double>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Enters a value onto the tape as a differentiable leaf. The result
  /// shares the input buffer.
  Tensor leaf(const Tensor& value);

  /// Records an op node. `parents` may contain -1 for untracked inputs;
  /// tracked parents must already live on this tape. `backward` reads
  /// the node's output gradient and accumulates into the parents'
  /// buffers via grad_buf(); leaves pass nullptr.
  Tensor record(Shape shape, std::vector<double> data,
                std::vector<int> parents, BackwardFn backward);

  /// Runs reverse accumulation from a scalar tracked loss.
  void backward(const Tensor& loss);

  /// Gradient buffer of a node, valid during/after backward().
  std::vector<double>& grad_buf(int node);

  /// Gradient of a tracked tensor as a fresh untracked tensor.
  Tensor grad(const Tensor& t) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<int> parents;
    BackwardFn backward;
    std::size_t out_size = 0;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool ran_backward_ = false;
};

/// Tape shared by the tracked tensors among `inputs` (nullptr when all
/// are untracked). Two different tapes in one op is a contract error.
Tape* joint_tape(std::initializer_list<const Tensor*> inputs);

inline int node_of(const Tensor& t) { return t.tracked() ? t.node() : -1; }

}  // namespace mancount
