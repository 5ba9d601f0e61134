#include "mancount/tape.hpp"

namespace mancount {

Tensor Tape::leaf(const Tensor& value) {
  Tensor t = value;  // shares the buffer
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{{}, nullptr, t.size()});
  return t;
}

Tensor Tape::record(Shape shape, std::vector<double> data,
                    std::vector<int> parents, BackwardFn backward) {
  for (int p : parents) {
    if (p >= static_cast<int>(nodes_.size())) {
      throw ContractError("tape parent recorded after its consumer");
    }
  }
  Tensor t(std::move(shape), std::move(data));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{std::move(parents), std::move(backward), t.size()});
  return t;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.tracked() || loss.tape() != this) {
    throw ContractError("backward requires a loss tracked on this tape");
  }
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  }
  grads_.assign(nodes_.size(), {});
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    grads_[i].assign(nodes_[i].out_size, 0.0);
  }
  grads_[static_cast<std::size_t>(loss.node())][0] = 1.0;
  ran_backward_ = true;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward(*this, grads_[i]);
  }
}

std::vector<double>& Tape::grad_buf(int node) {
  if (!ran_backward_) throw ContractError("grad_buf before backward");
  return grads_[static_cast<std::size_t>(node)];
}

Tensor Tape::grad(const Tensor& t) const {
  if (!t.tracked() || t.tape() != this) {
    throw ContractError("grad of a tensor not tracked on this tape");
  }
  if (!ran_backward_) throw ContractError("grad before backward");
  return Tensor(t.shape(), grads_[static_cast<std::size_t>(t.node())]);
}

Tape* joint_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape()) {
      throw ContractError("operands tracked on different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

}  // namespace mancount
