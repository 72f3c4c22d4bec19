#include "dmim/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dmim {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::atomic<std::uint64_t> g_next_id{1};

ConstMap cmap(const double* p, std::size_t rows, std::size_t cols) {
  return ConstMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap mmap(double* p, std::size_t rows, std::size_t cols) {
  return MutMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

ShapeError::ShapeError(std::string_view op, const Shape& a, const Shape& b)
    : std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                            shape_str(b)) {}

ShapeError::ShapeError(std::string_view op, const std::string& what)
    : std::invalid_argument(std::string(op) + ": " + what) {}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : Tensor(shape, std::vector<double>(shape_numel(shape), fill), requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor", "zero-sized dimension in " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor", "shape " + shape_str(shape) + " holds " +
                                   std::to_string(shape_numel(shape)) + " values, got " +
                                   std::to_string(values.size()));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
  node_->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor(Shape{}, std::vector<double>{v}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item", "tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::grad_buffer() const {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::uint64_t Tensor::id() const { return node_->id; }

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Graph plumbing

bool Graph::tracking(std::initializer_list<const Tensor*> inputs) const {
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void Graph::record(std::string_view tag, std::vector<Tensor> inputs, Tensor& output,
                   std::function<void()> backward) {
  output.set_requires_grad(true);
  ops_.push_back(Op{tag, std::move(inputs), output, std::move(backward)});
}

std::vector<std::string_view> Graph::op_tags() const {
  std::vector<std::string_view> tags;
  tags.reserve(ops_.size());
  for (const auto& op : ops_) tags.push_back(op.tag);
  return tags;
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward", "loss must be scalar, got " + shape_str(loss.shape()));
  for (auto& op : ops_) {
    if (op.output.has_grad()) op.output.zero_grad();
  }
  Tensor seed = loss;
  seed.grad_buffer()[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward();
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  if (!is_suffix(a.shape(), b.shape())) throw ShapeError("add", a.shape(), b.shape());
  const std::size_t inner = b.numel();
  const std::size_t reps = a.numel() / inner;
  Tensor out(a.shape(), std::vector<double>(a.data().begin(), a.data().end()));
  auto o = out.data();
  auto bv = b.data();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < inner; ++i) o[r * inner + i] += bv[i];
  if (tracking({&a, &b})) {
    record("add", {a, b}, out, [a, b, out, inner, reps]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t r = 0; r < reps; ++r)
          for (std::size_t i = 0; i < inner; ++i) gb[i] += g[r * inner + i];
      }
    });
  }
  return out;
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("sub", a.shape(), b.shape());
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
  Tensor out(a.shape(), std::move(v));
  if (tracking({&a, &b})) {
    record("sub", {a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul", a.shape(), b.shape());
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  Tensor out(a.shape(), std::move(v));
  if (tracking({&a, &b})) {
    record("mul", {a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

Tensor Graph::scale(const Tensor& a, double s) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * s;
  Tensor out(a.shape(), std::move(v));
  if (tracking({&a})) {
    record("scale", {a}, out, [a, out, s]() mutable {
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const bool batched_a = as.size() == 3;
  if ((as.size() != 2 && as.size() != 3) || (bs.size() != 2 && bs.size() != 3) ||
      (bs.size() == 3 && as.size() != 3)) {
    throw ShapeError("matmul", as, bs);
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  if (bs[bs.size() - 2] != k) throw ShapeError("matmul", as, bs);
  const std::size_t batch = batched_a ? as[0] : 1;

  if (bs.size() == 2) {
    // Shared right operand: fold the batch into the row dimension.
    const std::size_t rows = batch * m;
    Shape os = batched_a ? Shape{batch, m, n} : Shape{m, n};
    Tensor out(os);
    mmap(out.data().data(), rows, n).noalias() = cmap(a.data().data(), rows, k) * cmap(b.data().data(), k, n);
    if (tracking({&a, &b})) {
      record("matmul", {a, b}, out, [a, b, out, rows, k, n]() mutable {
        auto g = cmap(out.grad().data(), rows, n);
        if (a.requires_grad())
          mmap(a.grad_buffer().data(), rows, k).noalias() += g * cmap(b.data().data(), k, n).transpose();
        if (b.requires_grad())
          mmap(b.grad_buffer().data(), k, n).noalias() += cmap(a.data().data(), rows, k).transpose() * g;
      });
    }
    return out;
  }

  if (bs[0] != batch) throw ShapeError("matmul", as, bs);
  Tensor out(Shape{batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    mmap(out.data().data() + i * m * n, m, n).noalias() =
        cmap(a.data().data() + i * m * k, m, k) * cmap(b.data().data() + i * k * n, k, n);
  }
  if (tracking({&a, &b})) {
    record("bmm", {a, b}, out, [a, b, out, batch, m, k, n]() mutable {
      for (std::size_t i = 0; i < batch; ++i) {
        auto g = cmap(out.grad().data() + i * m * n, m, n);
        if (a.requires_grad())
          mmap(a.grad_buffer().data() + i * m * k, m, k).noalias() +=
              g * cmap(b.data().data() + i * k * n, k, n).transpose();
        if (b.requires_grad())
          mmap(b.grad_buffer().data() + i * k * n, k, n).noalias() +=
              cmap(a.data().data() + i * m * k, m, k).transpose() * g;
      }
    });
  }
  return out;
}

Tensor Graph::transpose(const Tensor& a) {
  if (a.ndim() < 2) throw ShapeError("transpose", "need at least 2 dims, got " + shape_str(a.shape()));
  Shape os = a.shape();
  const std::size_t r = os[os.size() - 2];
  const std::size_t c = os.back();
  std::swap(os[os.size() - 2], os.back());
  const std::size_t batch = a.numel() / (r * c);
  Tensor out(os);
  for (std::size_t i = 0; i < batch; ++i)
    mmap(out.data().data() + i * r * c, c, r) = cmap(a.data().data() + i * r * c, r, c).transpose();
  if (tracking({&a})) {
    record("transpose", {a}, out, [a, out, batch, r, c]() mutable {
      for (std::size_t i = 0; i < batch; ++i)
        mmap(a.grad_buffer().data() + i * r * c, r, c) += cmap(out.grad().data() + i * r * c, c, r).transpose();
    });
  }
  return out;
}

Tensor Graph::reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) throw ShapeError("reshape", a.shape(), shape);
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (tracking({&a})) {
    record("reshape", {a}, out, [a, out]() mutable {
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor Graph::concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat", "axis " + std::to_string(axis) + " out of range for " + shape_str(ref));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size()) throw ShapeError("concat", ref, s);
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != ref[d]) throw ShapeError("concat", ref, s);
    total += s[axis];
  }
  const std::size_t outer = shape_numel(Shape(ref.begin(), ref.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_numel(Shape(ref.begin() + static_cast<std::ptrdiff_t>(axis) + 1, ref.end()));
  Shape os = ref;
  os[axis] = total;
  Tensor out(os);
  auto o = out.data();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.dim(axis) * inner;
    for (std::size_t r = 0; r < outer; ++r)
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(r * chunk), chunk,
                  o.begin() + static_cast<std::ptrdiff_t>(r * total * inner + off));
    off += chunk;
  }
  bool any = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    record("concat", inputs, out, [inputs, out, offsets, outer, inner, total, axis]() mutable {
      auto g = out.grad();
      for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
        auto& p = inputs[pi];
        if (!p.requires_grad()) continue;
        const std::size_t chunk = p.dim(axis) * inner;
        auto gp = p.grad_buffer();
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t i = 0; i < chunk; ++i) gp[r * chunk + i] += g[r * total * inner + offsets[pi] + i];
      }
    });
  }
  return out;
}

Tensor Graph::gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.ndim() < 1) throw ShapeError("gather_rows", "cannot gather from a scalar");
  if (rows.empty()) throw ShapeError("gather_rows", "empty index list");
  const std::size_t n = a.dim(0);
  const std::size_t width = a.numel() / n;
  for (auto r : rows)
    if (r >= n) throw ShapeError("gather_rows", "row " + std::to_string(r) + " out of range for " + shape_str(a.shape()));
  Shape os = a.shape();
  os[0] = rows.size();
  Tensor out(os);
  auto o = out.data();
  auto av = a.data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(rows[i] * width), width,
                o.begin() + static_cast<std::ptrdiff_t>(i * width));
  if (tracking({&a})) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    record("gather_rows", {a}, out, [a, out, idx, width]() mutable {
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < width; ++j) ga[idx[i] * width + j] += g[i * width + j];
    });
  }
  return out;
}

Tensor Graph::slice_last(const Tensor& a, std::size_t start, std::size_t len) {
  if (a.ndim() < 1 || len == 0 || start + len > a.shape().back())
    throw ShapeError("slice_last", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                       ") invalid for " + shape_str(a.shape()));
  const std::size_t w = a.shape().back();
  const std::size_t rows = a.numel() / w;
  Shape os = a.shape();
  os.back() = len;
  Tensor out(os);
  auto o = out.data();
  auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(r * w + start), len,
                o.begin() + static_cast<std::ptrdiff_t>(r * len));
  if (tracking({&a})) {
    record("slice_last", {a}, out, [a, out, rows, w, start, len]() mutable {
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j) ga[r * w + start + j] += g[r * len + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor Graph::sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (tracking({&a})) {
    record("sum", {a}, out, [a, out]() mutable {
      const double g = out.grad()[0];
      for (auto& v : a.grad_buffer()) v += g;
    });
  }
  return out;
}

Tensor Graph::mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s / n);
  if (tracking({&a})) {
    record("mean", {a}, out, [a, out, n]() mutable {
      const double g = out.grad()[0] / n;
      for (auto& v : a.grad_buffer()) v += g;
    });
  }
  return out;
}

Tensor Graph::mean_axis(const Tensor& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ShapeError("mean_axis", "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t len = s[axis];
  const std::size_t inner = shape_numel(Shape(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end()));
  Shape os = s;
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(os);
  auto o = out.data();
  auto av = a.data();
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t r = 0; r < outer; ++r)
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t i = 0; i < inner; ++i) o[r * inner + i] += av[(r * len + k) * inner + i] * inv;
  if (tracking({&a})) {
    record("mean_axis", {a}, out, [a, out, outer, len, inner, inv]() mutable {
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t k = 0; k < len; ++k)
          for (std::size_t i = 0; i < inner; ++i) ga[(r * len + k) * inner + i] += g[r * inner + i] * inv;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Neural-network primitives

Tensor Graph::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.ndim() == 0 || x.shape().back() == 0) throw ShapeError("layer_norm", "empty feature dimension");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d}) throw ShapeError("layer_norm", x.shape(), gain.shape());
  if (bias.shape() != Shape{d}) throw ShapeError("layer_norm", x.shape(), bias.shape());
  if (!(eps > 0.0)) throw ShapeError("layer_norm", "eps must be positive");
  const std::size_t rows = x.numel() / d;
  Tensor out(x.shape());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  auto xv = x.data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (row[i] - mu) * is;
      xhat[r * d + i] = h;
      o[r * d + i] = h * gain[i] + bias[i];
    }
  }
  if (tracking({&x, &gain, &bias})) {
    record("layer_norm", {x, gain, bias}, out,
           [x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d]() mutable {
             auto g = out.grad();
             if (gain.requires_grad() || bias.requires_grad()) {
               auto gg = gain.requires_grad() ? gain.grad_buffer() : std::span<double>{};
               auto gb = bias.requires_grad() ? bias.grad_buffer() : std::span<double>{};
               for (std::size_t r = 0; r < rows; ++r)
                 for (std::size_t i = 0; i < d; ++i) {
                   if (!gg.empty()) gg[i] += g[r * d + i] * xhat[r * d + i];
                   if (!gb.empty()) gb[i] += g[r * d + i];
                 }
             }
             if (x.requires_grad()) {
               auto gx = x.grad_buffer();
               const double invd = 1.0 / static_cast<double>(d);
               for (std::size_t r = 0; r < rows; ++r) {
                 double m1 = 0.0;
                 double m2 = 0.0;
                 for (std::size_t i = 0; i < d; ++i) {
                   const double dh = g[r * d + i] * gain[i];
                   m1 += dh;
                   m2 += dh * xhat[r * d + i];
                 }
                 m1 *= invd;
                 m2 *= invd;
                 for (std::size_t i = 0; i < d; ++i) {
                   const double dh = g[r * d + i] * gain[i];
                   gx[r * d + i] += inv_std[r] * (dh - m1 - xhat[r * d + i] * m2);
                 }
               }
             }
           });
  }
  return out;
}

Tensor Graph::gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  if (tracking({&x})) {
    record("gelu", {x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = x[i];
        const double t = std::tanh(kC * (v + kA * v * v * v));
        const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
        gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
      }
    });
  }
  return out;
}

Tensor Graph::sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  if (tracking({&x})) {
    record("sigmoid", {x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * out[i] * (1.0 - out[i]);
    });
  }
  return out;
}

Tensor Graph::softmax_lastdim(const Tensor& x) {
  const std::size_t d = x.shape().empty() ? 1 : x.shape().back();
  const std::size_t rows = x.numel() / d;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x[r * d];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, x[r * d + i]);
    double z = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      out[r * d + i] = std::exp(x[r * d + i] - mx);
      z += out[r * d + i];
    }
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] /= z;
  }
  if (tracking({&x})) {
    record("softmax", {x}, out, [x, out, rows, d]() mutable {
      auto g = out.grad();
      auto gx = x.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += g[r * d + i] * out[r * d + i];
        for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += out[r * d + i] * (g[r * d + i] - dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

Tensor Graph::mse_all_patches(const Tensor& xhat, const Tensor& target) {
  if (xhat.shape() != target.shape()) throw ShapeError("mse_all_patches", xhat.shape(), target.shape());
  const double n = static_cast<double>(xhat.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < xhat.numel(); ++i) {
    const double e = xhat[i] - target[i];
    s += e * e;
  }
  Tensor out = Tensor::scalar(s / n);
  if (tracking({&xhat, &target})) {
    record("mse", {xhat, target}, out, [xhat, target, out, n]() mutable {
      const double g = out.grad()[0] * 2.0 / n;
      if (xhat.requires_grad()) {
        auto gx = xhat.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * (xhat[i] - target[i]);
      }
      if (target.requires_grad()) {
        auto gt = target.grad_buffer();
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g * (xhat[i] - target[i]);
      }
    });
  }
  return out;
}

Tensor Graph::binary_cross_entropy(const Tensor& prob, std::span<const double> labels, double smoothing,
                                   double clamp) {
  if (prob.numel() != labels.size())
    throw ShapeError("binary_cross_entropy", prob.shape(), Shape{labels.size()});
  if (smoothing < 0.0 || smoothing >= 1.0) throw ShapeError("binary_cross_entropy", "smoothing must lie in [0, 1)");
  const double n = static_cast<double>(labels.size());
  std::vector<double> targets(labels.size());
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double t = labels[i] * (1.0 - 0.5 * smoothing) + (1.0 - labels[i]) * 0.5 * smoothing;
    targets[i] = t;
    const double p = std::clamp(prob[i], clamp, 1.0 - clamp);
    s -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  Tensor out = Tensor::scalar(s / n);
  if (tracking({&prob})) {
    record("bce", {prob}, out, [prob, out, targets = std::move(targets), n, clamp]() mutable {
      const double g = out.grad()[0] / n;
      auto gp = prob.grad_buffer();
      for (std::size_t i = 0; i < gp.size(); ++i) {
        const double p = prob[i];
        if (p < clamp || p > 1.0 - clamp) continue;
        gp[i] -= g * (targets[i] / p - (1.0 - targets[i]) / (1.0 - p));
      }
    });
  }
  return out;
}

}  // namespace dmim
