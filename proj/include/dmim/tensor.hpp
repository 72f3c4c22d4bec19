#pragma once

// Dense f64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage. Parameters are
// long-lived tensors with requires_grad set; every forward pass records into
// a fresh Graph, and Graph::backward accumulates into the parameters' grads.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dmim {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string_view op, const Shape& a, const Shape& b);
  ShapeError(std::string_view op, const std::string& what);
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> data();
  double item() const;
  double& operator[](std::size_t i) { return data()[i]; }
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero-filled gradient buffer on first use.
  std::span<double> grad_buffer() const;
  void zero_grad();

  std::uint64_t id() const;
  // Deep copy of the values; the copy has no grad and no graph history.
  Tensor clone() const;

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
  };
  std::shared_ptr<Node> node_;
};

void zero_grads(std::span<Tensor> params);

// Records differentiable operations in execution order. One graph per forward
// pass; a graph must not be shared between threads.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // b may have the same shape as a, or a trailing-suffix shape that is
  // broadcast over a's leading dims (bias rows).
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double s);

  // [M,K]x[K,N], [B,M,K]x[K,N] (shared right operand), [B,M,K]x[B,K,N].
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor reshape(const Tensor& a, Shape shape);
  Tensor concat(std::span<const Tensor> parts, std::size_t axis);
  // Selects slices along axis 0.
  Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
  // Contiguous sub-range [start, start+len) of the last dimension.
  Tensor slice_last(const Tensor& a, std::size_t start, std::size_t len);

  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);
  Tensor mean_axis(const Tensor& a, std::size_t axis);

  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                    double eps = 1e-6);
  Tensor gelu(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  Tensor softmax_lastdim(const Tensor& x);

  // Mean of squared differences over every element.
  Tensor mse_all_patches(const Tensor& xhat, const Tensor& target);
  // Mean binary cross-entropy of probabilities against {0,1} labels.
  // Smoothing spreads `smoothing` over both classes, as two-class softmax
  // cross-entropy does: targets become 1 - s/2 and s/2. Probabilities are
  // clamped to [clamp, 1-clamp]; clamped entries get no gradient.
  Tensor binary_cross_entropy(const Tensor& prob, std::span<const double> labels,
                              double smoothing = 0.0, double clamp = 1e-7);

  void backward(const Tensor& loss);

  std::size_t size() const { return ops_.size(); }
  std::vector<std::string_view> op_tags() const;

 private:
  struct Op {
    std::string_view tag;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  bool tracking(std::initializer_list<const Tensor*> inputs) const;
  void record(std::string_view tag, std::vector<Tensor> inputs, Tensor& output,
              std::function<void()> backward);

  std::vector<Op> ops_;
};

}  // namespace dmim
