#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gsf::ad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

// Storage shared by Tensor handles. `tape_serial` is nonzero when the node
// was produced by a recorded operation.
struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  std::uint64_t tape_serial = 0;
  std::uint64_t id = 0;

  // True when gradients should flow into this node.
  bool wants_grad() const { return requires_grad || tape_serial != 0; }
  // Grad buffer, zero-allocated on first use.
  float* grad_buffer();
};

// Grad buffer of `in` if gradients flow into it from `out`, else nullptr.
float* grad_target(const Node& out, Node* in);

// Dense row-major float32 array. Copies share storage; use clone() for a
// deep copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->data.size(); }

  std::span<float> data() { return node_->data; }
  std::span<const float> data() const { return node_->data; }
  std::vector<float>& values() { return node_->data; }
  const std::vector<float>& values() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  float item() const;
  float operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Produced by a recorded op, or a leaf that wants gradients.
  bool tracked() const { return node_->wants_grad(); }
  std::uint64_t node_id() const { return node_->id; }

  Tensor clone() const;   // deep copy, detached from any tape
  Tensor detach() const { return clone(); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend class Tape;
  friend Tensor make_tensor(std::shared_ptr<Node>);

  std::shared_ptr<Node> node_;
};

Tensor make_tensor(std::shared_ptr<Node> node);

// Throws NumericError naming `where` if any value (or grad) is non-finite.
void check_finite(const Tensor& t, const std::string& where);

// Ordered record of differentiable operations. Confined to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(const Node& out, std::span<Node* const> inputs)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<std::shared_ptr<Node>> inputs, const std::shared_ptr<Node>& output,
              BackwardFn backward);

  // Populates grads of every leaf reachable from `loss` (a one-element
  // tensor recorded on this tape). A tape supports one backward pass; call
  // clear() before recording again.
  void backward(const Tensor& loss);

  void clear();
  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  std::uint64_t serial() const { return serial_; }

 private:
  struct Record {
    std::vector<std::shared_ptr<Node>> inputs;
    std::shared_ptr<Node> output;
    BackwardFn backward;
  };

  std::vector<Record> records_;
  std::uint64_t serial_;
  std::uint64_t next_id_ = 1;
  bool consumed_ = false;
};

// Tape currently recording on this thread, or nullptr.
Tape* active_tape();

// Makes `tape` the recording tape of the calling thread for its lifetime.
class GradScope {
 public:
  explicit GradScope(Tape& tape);
  ~GradScope();
  GradScope(const GradScope&) = delete;
  GradScope& operator=(const GradScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace gsf::ad
