#include "gsf/tensor.hpp"

#include <atomic>
#include <cmath>

#include <fmt/format.h>

#include "gsf/error.hpp"

namespace gsf::ad {

namespace {

thread_local Tape* current_tape = nullptr;
std::atomic<std::uint64_t> tape_counter{0};

}  // namespace

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

float* Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad.data();
}

float* grad_target(const Node& out, Node* in) {
  if (in->requires_grad || (in->tape_serial != 0 && in->tape_serial == out.tape_serial)) {
    return in->grad_buffer();
  }
  return nullptr;
}

Tensor::Tensor() : node_(std::make_shared<Node>()) {}

Tensor::Tensor(Shape shape, float fill) : node_(std::make_shared<Node>()) {
  node_->data.assign(element_count(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : node_(std::make_shared<Node>()) {
  if (values.size() != element_count(shape)) {
    throw ShapeError(fmt::format("tensor: {} values do not fill shape {}", values.size(),
                                 shape_string(shape)));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{}, std::vector<float>{value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError(fmt::format("tensor: axis {} out of range for shape {}", axis,
                                 shape_string(shape())));
  }
  return node_->shape[axis];
}

float Tensor::item() const {
  if (size() != 1) {
    throw ShapeError(fmt::format("item: expected one element, shape is {}", shape_string(shape())));
  }
  return node_->data[0];
}

Tensor Tensor::clone() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  return Tensor(std::move(n));
}

Tensor make_tensor(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

void check_finite(const Tensor& t, const std::string& where) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t.data()[i])) {
      throw NumericError(fmt::format("{}: non-finite value {} at index {}", where, t.data()[i], i));
    }
  }
  for (std::size_t i = 0; i < t.grad().size(); ++i) {
    if (!std::isfinite(t.grad()[i])) {
      throw NumericError(fmt::format("{}: non-finite gradient at index {}", where, i));
    }
  }
}

Tape::Tape() : serial_(++tape_counter) {}

void Tape::record(std::vector<std::shared_ptr<Node>> inputs, const std::shared_ptr<Node>& output,
                  BackwardFn backward) {
  if (consumed_) throw TapeError("tape: recording on a consumed tape; call clear() first");
  output->tape_serial = serial_;
  output->id = next_id_++;
  records_.push_back(Record{std::move(inputs), output, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("backward: tape already consumed by a previous backward pass");
  const auto& root = loss.node();
  if (root->tape_serial != serial_) {
    throw TapeError("backward: loss is not connected to this tape (detached tensor)");
  }
  if (root->data.size() != 1) {
    throw TapeError(fmt::format("backward: loss must be scalar, shape is {}",
                                shape_string(root->shape)));
  }
  consumed_ = true;
  root->grad.assign(1, 1.0f);

  std::vector<Node*> ptrs;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not reachable from loss
    ptrs.clear();
    for (auto& in : it->inputs) ptrs.push_back(in.get());
    it->backward(*it->output, ptrs);
  }
}

void Tape::clear() {
  records_.clear();
  consumed_ = false;
  serial_ = ++tape_counter;
  next_id_ = 1;
}

Tape* active_tape() { return current_tape; }

GradScope::GradScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
GradScope::~GradScope() { current_tape = previous_; }

NoGradScope::NoGradScope() : previous_(current_tape) { current_tape = nullptr; }
NoGradScope::~NoGradScope() { current_tape = previous_; }

}  // namespace gsf::ad
