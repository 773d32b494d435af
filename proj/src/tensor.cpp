#include "mgmo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mgmo {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

Tensor make_tensor(Shape shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(static_cast<size_t>(shape_numel(t.impl_->shape)), 0.0);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension in " + shape_str(shape));
  }
  return make_tensor(std::move(shape), requires_grad);
}

Tensor Tensor::constant(Shape shape, double value) {
  Tensor t = zeros(std::move(shape), false);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
    throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  }
  Tensor t = zeros(std::move(shape), requires_grad);
  t.data() = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item: tensor has shape " + shape_str(shape()) + ", expected a scalar");
  }
  return impl_->data[0];
}

// ---- tape -------------------------------------------------------------

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::function<void()> backward_fn) {
  nodes_.push_back(std::move(backward_fn));
}

void Tape::reset() { nodes_.clear(); }

void Tape::run_backward_from_end() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

NoGradGuard::NoGradGuard() : previous(Tape::current().grad_enabled_) {
  Tape::current().grad_enabled_ = false;
}
NoGradGuard::~NoGradGuard() { Tape::current().grad_enabled_ = previous; }

namespace {

bool tracing(const Tensor& t) { return Tape::current().grad_enabled() && t.requires_grad(); }

void check_rank(const Tensor& t, int rank, const char* op) {
  if (static_cast<int>(t.shape().size()) != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_str(t.shape()));
  }
}

// True when b's shape is a strict suffix of a's (leading-dim broadcast).
bool suffix_broadcast(const Shape& a, const Shape& b) {
  if (b.size() >= a.size()) return false;
  for (size_t i = 0; i < b.size(); ++i) {
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
  }
  return true;
}

void check_elementwise(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return;
  if (suffix_broadcast(a.shape(), b.shape())) return;
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
}

}  // namespace

// ---- elementwise ------------------------------------------------------

template <typename Fwd, typename Bwd>
static Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  check_elementwise(a, b, name);
  const bool bc = a.shape() != b.shape();
  const size_t bn = static_cast<size_t>(b.numel());
  Tensor out = make_tensor(a.shape(), tracing(a) || tracing(b));
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = fwd(ad[i], bd[bc ? i % bn : i]);
  if (out.requires_grad()) {
    Tensor ac = a, bc_t = b, oc = out;
    bool a_grad = a.requires_grad(), b_grad = b.requires_grad();
    Tape::current().record([ac, bc_t, oc, bc, bn, a_grad, b_grad, bwd]() mutable {
      const auto& og = oc.grad();
      const auto& ad = ac.data();
      const auto& bd = bc_t.data();
      std::vector<double>* ag = a_grad ? &ac.grad() : nullptr;
      std::vector<double>* bg = b_grad ? &bc_t.grad() : nullptr;
      for (size_t i = 0; i < og.size(); ++i) {
        size_t j = bc ? i % bn : i;
        auto [da, db] = bwd(ad[i], bd[j], og[i]);
        if (ag) (*ag)[i] += da;
        if (bg) (*bg)[j] += db;
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                   [](double, double, double g) { return std::pair<double, double>(g, g); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double, double, double g) { return std::pair<double, double>(g, -g); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                   [](double x, double y, double g) { return std::pair<double, double>(g * y, g * x); });
}

template <typename Fwd, typename Bwd>
static Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
  Tensor out = make_tensor(a.shape(), tracing(a));
  const auto& ad = a.data();
  auto& od = out.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = fwd(ad[i]);
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    Tape::current().record([ac, oc, bwd]() mutable {
      const auto& og = oc.grad();
      const auto& ad = ac.data();
      const auto& od = oc.data();
      auto& ag = ac.grad();
      for (size_t i = 0; i < og.size(); ++i) ag[i] += bwd(ad[i], od[i], og[i]);
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(a, [c](double x) { return c * x; },
                  [c](double, double, double g) { return c * g; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor log(const Tensor& a) {
  return unary_op(a, [](double x) { return std::log(x); },
                  [](double x, double, double g) { return g / x; });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, [](double x) { return std::exp(x); },
                  [](double, double y, double g) { return g * y; });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

// ---- matmul family ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out = make_tensor({m, n}, tracing(a) || tracing(b));
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data().data();
  for (int i = 0; i < m; ++i) {
    double* Ci = C + static_cast<size_t>(i) * n;
    const double* Ai = A + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double aik = Ai[kk];
      const double* Bk = B + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) Ci[j] += aik * Bk[j];
    }
  }
  if (out.requires_grad()) {
    Tensor ac = a, bc = b, oc = out;
    bool a_grad = a.requires_grad(), b_grad = b.requires_grad();
    Tape::current().record([ac, bc, oc, m, k, n, a_grad, b_grad]() mutable {
      const double* G = oc.grad().data();
      if (a_grad) {
        double* dA = ac.grad().data();
        const double* B = bc.data().data();
        // dA[i,kk] += sum_j G[i,j] * B[kk,j]
        for (int i = 0; i < m; ++i) {
          const double* Gi = G + static_cast<size_t>(i) * n;
          double* dAi = dA + static_cast<size_t>(i) * k;
          for (int kk = 0; kk < k; ++kk) {
            const double* Bk = B + static_cast<size_t>(kk) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += Gi[j] * Bk[j];
            dAi[kk] += acc;
          }
        }
      }
      if (b_grad) {
        double* dB = bc.grad().data();
        const double* A = ac.data().data();
        // dB[kk,j] += sum_i A[i,kk] * G[i,j]
        for (int i = 0; i < m; ++i) {
          const double* Ai = A + static_cast<size_t>(i) * k;
          const double* Gi = G + static_cast<size_t>(i) * n;
          for (int kk = 0; kk < k; ++kk) {
            const double aik = Ai[kk];
            double* dBk = dB + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) dBk[j] += aik * Gi[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  check_rank(a, 2, "transpose");
  const int r = a.shape()[0], c = a.shape()[1];
  Tensor out = make_tensor({c, r}, tracing(a));
  const auto& ad = a.data();
  auto& od = out.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) od[static_cast<size_t>(j) * r + i] = ad[static_cast<size_t>(i) * c + j];
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    Tape::current().record([ac, oc, r, c]() mutable {
      const auto& og = oc.grad();
      auto& ag = ac.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          ag[static_cast<size_t>(i) * c + j] += og[static_cast<size_t>(j) * r + i];
    });
  }
  return out;
}

// ---- softmax ----------------------------------------------------------

namespace {

void rows_of(const Tensor& t, int& rows, int& cols, const char* op) {
  if (t.shape().size() == 1) {
    rows = 1;
    cols = t.shape()[0];
  } else if (t.shape().size() == 2) {
    rows = t.shape()[0];
    cols = t.shape()[1];
  } else {
    throw std::invalid_argument(std::string(op) + ": expected rank 1 or 2, got " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor softmax_lastdim(const Tensor& a) {
  int rows, cols;
  rows_of(a, rows, cols, "softmax_lastdim");
  Tensor out = make_tensor(a.shape(), tracing(a));
  const auto& x = a.data();
  auto& y = out.data();
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.data() + static_cast<size_t>(r) * cols;
    double* yr = y.data() + static_cast<size_t>(r) * cols;
    double mx = xr[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      z += yr[c];
    }
    for (int c = 0; c < cols; ++c) yr[c] /= z;
  }
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    Tape::current().record([ac, oc, rows, cols]() mutable {
      const auto& y = oc.data();
      const auto& og = oc.grad();
      auto& ag = ac.grad();
      for (int r = 0; r < rows; ++r) {
        const double* yr = y.data() + static_cast<size_t>(r) * cols;
        const double* gr = og.data() + static_cast<size_t>(r) * cols;
        double dot = 0.0;
        for (int c = 0; c < cols; ++c) dot += yr[c] * gr[c];
        double* ar = ag.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) ar[c] += yr[c] * (gr[c] - dot);
      }
    });
  }
  return out;
}

Tensor log_softmax_lastdim(const Tensor& a) {
  int rows, cols;
  rows_of(a, rows, cols, "log_softmax_lastdim");
  Tensor out = make_tensor(a.shape(), tracing(a));
  const auto& x = a.data();
  auto& y = out.data();
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.data() + static_cast<size_t>(r) * cols;
    double* yr = y.data() + static_cast<size_t>(r) * cols;
    double mx = xr[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += std::exp(xr[c] - mx);
    const double lz = mx + std::log(z);
    for (int c = 0; c < cols; ++c) yr[c] = xr[c] - lz;
  }
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    Tape::current().record([ac, oc, rows, cols]() mutable {
      const auto& y = oc.data();
      const auto& og = oc.grad();
      auto& ag = ac.grad();
      for (int r = 0; r < rows; ++r) {
        const double* yr = y.data() + static_cast<size_t>(r) * cols;
        const double* gr = og.data() + static_cast<size_t>(r) * cols;
        double gsum = 0.0;
        for (int c = 0; c < cols; ++c) gsum += gr[c];
        double* ar = ag.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) ar[c] += gr[c] - std::exp(yr[c]) * gsum;
      }
    });
  }
  return out;
}

// ---- reductions / reshapes --------------------------------------------

Tensor sum(const Tensor& a) {
  Tensor out = make_tensor({1}, tracing(a));
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out.data()[0] = acc;
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    Tape::current().record([ac, oc]() mutable {
      const double g = oc.grad()[0];
      auto& ag = ac.grad();
      for (auto& v : ag) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  Tensor out = make_tensor({1}, tracing(a));
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out.data()[0] = acc / n;
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    Tape::current().record([ac, oc, n]() mutable {
      const double g = oc.grad()[0] / n;
      auto& ag = ac.grad();
      for (auto& v : ag) v += g;
    });
  }
  return out;
}

Tensor sum_lastdim(const Tensor& a) {
  check_rank(a, 2, "sum_lastdim");
  const int r = a.shape()[0], c = a.shape()[1];
  Tensor out = make_tensor({r}, tracing(a));
  const auto& ad = a.data();
  auto& od = out.data();
  for (int i = 0; i < r; ++i) {
    double acc = 0.0;
    for (int j = 0; j < c; ++j) acc += ad[static_cast<size_t>(i) * c + j];
    od[i] = acc;
  }
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    Tape::current().record([ac, oc, r, c]() mutable {
      const auto& og = oc.grad();
      auto& ag = ac.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) ag[static_cast<size_t>(i) * c + j] += og[i];
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& a) {
  check_rank(a, 2, "mean_rows");
  const int r = a.shape()[0], c = a.shape()[1];
  Tensor out = make_tensor({c}, tracing(a));
  const auto& ad = a.data();
  auto& od = out.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) od[j] += ad[static_cast<size_t>(i) * c + j];
  for (int j = 0; j < c; ++j) od[j] /= r;
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    Tape::current().record([ac, oc, r, c]() mutable {
      const auto& og = oc.grad();
      auto& ag = ac.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) ag[static_cast<size_t>(i) * c + j] += og[j] / r;
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(shape));
  }
  Tensor out = make_tensor(std::move(shape), tracing(a));
  out.data() = a.data();
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    Tape::current().record([ac, oc]() mutable {
      const auto& og = oc.grad();
      auto& ag = ac.grad();
      for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
    });
  }
  return out;
}

// ---- layer norm -------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  int rows, cols;
  rows_of(x, rows, cols, "layer_norm");
  if (gain.numel() != cols || bias.numel() != cols) {
    throw std::invalid_argument("layer_norm: shape mismatch " + shape_str(x.shape()) + " vs gain " +
                                shape_str(gain.shape()));
  }
  Tensor out = make_tensor(x.shape(), tracing(x) || tracing(gain) || tracing(bias));
  // Cache per-row (mean, inv_std) for backward.
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * 2);
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  auto& od = out.data();
  for (int r = 0; r < rows; ++r) {
    const double* xr = xd.data() + static_cast<size_t>(r) * cols;
    double* yr = od.data() + static_cast<size_t>(r) * cols;
    double mu = 0.0;
    for (int c = 0; c < cols; ++c) mu += xr[c];
    mu /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[static_cast<size_t>(r) * 2] = mu;
    (*stats)[static_cast<size_t>(r) * 2 + 1] = inv;
    for (int c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * inv * gd[c] + bd[c];
  }
  if (out.requires_grad()) {
    Tensor xc = x, gc = gain, bc = bias, oc = out;
    bool xg = x.requires_grad(), gg = gain.requires_grad(), bg = bias.requires_grad();
    Tape::current().record([xc, gc, bc, oc, stats, rows, cols, xg, gg, bg]() mutable {
      const auto& og = oc.grad();
      const auto& xd = xc.data();
      const auto& gd = gc.data();
      for (int r = 0; r < rows; ++r) {
        const double* xr = xd.data() + static_cast<size_t>(r) * cols;
        const double* gr = og.data() + static_cast<size_t>(r) * cols;
        const double mu = (*stats)[static_cast<size_t>(r) * 2];
        const double inv = (*stats)[static_cast<size_t>(r) * 2 + 1];
        if (gg || bg) {
          auto* ggrad = gg ? gc.grad().data() : nullptr;
          auto* bgrad = bg ? bc.grad().data() : nullptr;
          for (int c = 0; c < cols; ++c) {
            const double xhat = (xr[c] - mu) * inv;
            if (ggrad) ggrad[c] += gr[c] * xhat;
            if (bgrad) bgrad[c] += gr[c];
          }
        }
        if (xg) {
          double m1 = 0.0, m2 = 0.0;  // mean(g*gain), mean(g*gain*xhat)
          for (int c = 0; c < cols; ++c) {
            const double xhat = (xr[c] - mu) * inv;
            const double gy = gr[c] * gd[c];
            m1 += gy;
            m2 += gy * xhat;
          }
          m1 /= cols;
          m2 /= cols;
          double* ar = xc.grad().data() + static_cast<size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) {
            const double xhat = (xr[c] - mu) * inv;
            const double gy = gr[c] * gd[c];
            ar[c] += (gy - m1 - xhat * m2) * inv;
          }
        }
      }
    });
  }
  return out;
}

// ---- indexing ---------------------------------------------------------

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  check_rank(table, 2, "embedding_lookup");
  const int v = table.shape()[0], d = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw std::invalid_argument("embedding_lookup: id " + std::to_string(id) +
                                  " outside table " + shape_str(table.shape()));
    }
  }
  const int t = static_cast<int>(ids.size());
  Tensor out = make_tensor({t, d}, tracing(table));
  const auto& td = table.data();
  auto& od = out.data();
  for (int i = 0; i < t; ++i) {
    const double* src = td.data() + static_cast<size_t>(ids[i]) * d;
    std::copy(src, src + d, od.data() + static_cast<size_t>(i) * d);
  }
  if (out.requires_grad()) {
    Tensor tc = table, oc = out;
    auto idc = ids;
    Tape::current().record([tc, oc, idc, d]() mutable {
      const auto& og = oc.grad();
      auto& tg = tc.grad();
      for (size_t i = 0; i < idc.size(); ++i) {
        double* dst = tg.data() + static_cast<size_t>(idc[i]) * d;
        const double* src = og.data() + i * d;
        for (int c = 0; c < d; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

Tensor gather_lastdim(const Tensor& rows, const std::vector<int>& indices) {
  int r, c;
  rows_of(rows, r, c, "gather_lastdim");
  if (static_cast<int>(indices.size()) != r) {
    throw std::invalid_argument("gather_lastdim: " + std::to_string(indices.size()) +
                                " indices for " + std::to_string(r) + " rows");
  }
  for (int idx : indices) {
    if (idx < 0 || idx >= c) {
      throw std::invalid_argument("gather_lastdim: index " + std::to_string(idx) +
                                  " outside row of size " + std::to_string(c));
    }
  }
  Tensor out = make_tensor({r}, tracing(rows));
  const auto& rd = rows.data();
  auto& od = out.data();
  for (int i = 0; i < r; ++i) od[i] = rd[static_cast<size_t>(i) * c + indices[i]];
  if (out.requires_grad()) {
    Tensor rc = rows, oc = out;
    auto idc = indices;
    Tape::current().record([rc, oc, idc, c]() mutable {
      const auto& og = oc.grad();
      auto& rg = rc.grad();
      for (size_t i = 0; i < idc.size(); ++i) rg[i * c + idc[i]] += og[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int offset, int len) {
  check_rank(a, 2, "slice_cols");
  const int r = a.shape()[0], c = a.shape()[1];
  if (offset < 0 || len <= 0 || offset + len > c) {
    throw std::invalid_argument("slice_cols: [" + std::to_string(offset) + "," +
                                std::to_string(offset + len) + ") outside " + shape_str(a.shape()));
  }
  Tensor out = make_tensor({r, len}, tracing(a));
  const auto& ad = a.data();
  auto& od = out.data();
  for (int i = 0; i < r; ++i) {
    const double* src = ad.data() + static_cast<size_t>(i) * c + offset;
    std::copy(src, src + len, od.data() + static_cast<size_t>(i) * len);
  }
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    Tape::current().record([ac, oc, r, c, offset, len]() mutable {
      const auto& og = oc.grad();
      auto& ag = ac.grad();
      for (int i = 0; i < r; ++i) {
        double* dst = ag.data() + static_cast<size_t>(i) * c + offset;
        const double* src = og.data() + static_cast<size_t>(i) * len;
        for (int j = 0; j < len; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int r = parts[0].shape()[0];
  int total = 0;
  bool track = false;
  for (const auto& p : parts) {
    check_rank(p, 2, "concat_cols");
    if (p.shape()[0] != r) {
      throw std::invalid_argument("concat_cols: shape mismatch " + shape_str(parts[0].shape()) +
                                  " vs " + shape_str(p.shape()));
    }
    total += p.shape()[1];
    track = track || tracing(p);
  }
  Tensor out = make_tensor({r, total}, track);
  auto& od = out.data();
  int off = 0;
  for (const auto& p : parts) {
    const int c = p.shape()[1];
    const auto& pd = p.data();
    for (int i = 0; i < r; ++i) {
      std::copy(pd.data() + static_cast<size_t>(i) * c, pd.data() + static_cast<size_t>(i) * c + c,
                od.data() + static_cast<size_t>(i) * total + off);
    }
    off += c;
  }
  if (out.requires_grad()) {
    auto pc = parts;
    Tensor oc = out;
    Tape::current().record([pc, oc, r, total]() mutable {
      const auto& og = oc.grad();
      int off = 0;
      for (auto& p : pc) {
        const int c = p.shape()[1];
        if (p.requires_grad()) {
          auto& pg = p.grad();
          for (int i = 0; i < r; ++i) {
            const double* src = og.data() + static_cast<size_t>(i) * total + off;
            double* dst = pg.data() + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j) dst[j] += src[j];
          }
        }
        off += c;
      }
    });
  }
  return out;
}

Tensor stack_scalars(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_scalars: no inputs");
  bool track = false;
  for (const auto& p : parts) {
    if (p.numel() != 1) {
      throw std::invalid_argument("stack_scalars: non-scalar input of shape " + shape_str(p.shape()));
    }
    track = track || tracing(p);
  }
  Tensor out = make_tensor({static_cast<int>(parts.size())}, track);
  for (size_t i = 0; i < parts.size(); ++i) out.data()[i] = parts[i].data()[0];
  if (out.requires_grad()) {
    auto pc = parts;
    Tensor oc = out;
    Tape::current().record([pc, oc]() mutable {
      const auto& og = oc.grad();
      for (size_t i = 0; i < pc.size(); ++i) {
        if (pc[i].requires_grad()) pc[i].grad()[0] += og[i];
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  Tensor mask = Tensor::zeros(a.shape());
  const double keep = 1.0 - p;
  for (auto& v : mask.data()) v = (rng.uniform() < p) ? 0.0 : 1.0 / keep;
  return mul(a, mask);
}

// ---- backward ---------------------------------------------------------

void backward(const Tensor& scalar_loss) {
  if (scalar_loss.numel() != 1) {
    throw std::invalid_argument("backward: loss has shape " + shape_str(scalar_loss.shape()) +
                                ", expected a scalar");
  }
  Tensor seed = scalar_loss;
  seed.grad()[0] += 1.0;
  Tape::current().run_backward_from_end();
}

double finite_difference_check(const std::function<Tensor()>& f,
                               const std::vector<Tensor>& params, double h, double denom_eps) {
  Tape::current().reset();
  std::vector<Tensor> ps = params;
  for (auto& p : ps) p.zero_grad();
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(ps.size());
  for (auto& p : ps) analytic.push_back(p.grad());
  Tape::current().reset();

  double max_rel = 0.0;
  NoGradGuard ng;
  for (size_t pi = 0; pi < ps.size(); ++pi) {
    auto& d = ps[pi].data();
    for (size_t i = 0; i < d.size(); ++i) {
      const double saved = d[i];
      d[i] = saved + h;
      const double up = f().item();
      d[i] = saved - h;
      const double down = f().item();
      d[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double rel = std::abs(analytic[pi][i] - fd) / (std::abs(fd) + denom_eps);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace mgmo
