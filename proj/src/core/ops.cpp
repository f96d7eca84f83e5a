#include "s2st/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace s2st::ops {

using s2st::detail::Node;

namespace detail {

void check_finite(const char* op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::overflow_error(std::string(op) + ": non-finite result");
    }
  }
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->id = s2st::detail::next_node_id();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

namespace {

using detail::make_result;

// `what` may be a string or a callable building one, so hot paths only pay
// for formatting on failure.
template <typename Msg>
void require(bool cond, const char* op, Msg&& what) {
  if (cond) return;
  if constexpr (std::is_invocable_v<Msg>)
    throw std::invalid_argument(std::string(op) + ": " + what());
  else
    throw std::invalid_argument(std::string(op) + ": " + std::string(what));
}

void require_matrix(const Tensor& x, const char* op) {
  require(x.defined(), op, "undefined input");
  require(x.rank() == 2, op, [&] { return "expected a matrix, got shape " + shape_str(x.shape()); });
}

bool is_scalar(const Tensor& t) { return t.rank() == 0; }

// Grad buffer of parent i if it takes part in backprop, else nullptr.
double* parent_grad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p->requires_grad) return nullptr;
  return p->ensure_grad().data();
}

const std::vector<double>& parent_data(const Node& self, std::size_t i) { return self.parents[i]->data; }

enum class Binary { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  require(a.defined() && b.defined(), name, "undefined input");
  const bool bcast = is_scalar(b) && !is_scalar(a);
  require(bcast || a.shape() == b.shape(), name,
          [&] { return "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()); });
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t n = ad.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = bd[bcast ? 0 : i];
    switch (kind) {
      case Binary::kAdd: out[i] = ad[i] + y; break;
      case Binary::kSub: out[i] = ad[i] - y; break;
      case Binary::kMul: out[i] = ad[i] * y; break;
      case Binary::kDiv: out[i] = ad[i] / y; break;
    }
  }
  if (kind == Binary::kMul || kind == Binary::kDiv) detail::check_finite(name, out);
  return make_result(name, a.shape(), std::move(out), {a, b}, [kind, bcast](Node& self) {
    const auto& g = self.grad;
    const auto& x = parent_data(self, 0);
    const auto& y = parent_data(self, 1);
    double* gx = parent_grad(self, 0);
    double* gy = parent_grad(self, 1);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t j = bcast ? 0 : i;
      switch (kind) {
        case Binary::kAdd:
          if (gx) gx[i] += g[i];
          if (gy) gy[j] += g[i];
          break;
        case Binary::kSub:
          if (gx) gx[i] += g[i];
          if (gy) gy[j] -= g[i];
          break;
        case Binary::kMul:
          if (gx) gx[i] += g[i] * y[j];
          if (gy) gy[j] += g[i] * x[i];
          break;
        case Binary::kDiv:
          if (gx) gx[i] += g[i] / y[j];
          if (gy) gy[j] -= g[i] * x[i] / (y[j] * y[j]);
          break;
      }
    }
  });
}

template <typename F, typename D>
Tensor unary(const Tensor& x, const char* name, F forward, D derivative, bool check = false) {
  require(x.defined(), name, "undefined input");
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = forward(xd[i]);
  if (check) detail::check_finite(name, out);
  return make_result(name, x.shape(), std::move(out), {x}, [derivative](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& in = parent_data(self, 0);
    for (std::size_t i = 0; i < in.size(); ++i) gx[i] += self.grad[i] * derivative(in[i], self.data[i]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kMul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kDiv, "div"); }

Tensor add_row(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_row");
  require(bias.defined() && bias.size() == x.cols(), "add_row", "bias length must equal column count");
  const std::size_t m = x.rows(), n = x.cols();
  const auto xd = x.data();
  const auto bd = bias.data();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xd[r * n + c] + bd[c];
  return make_result("add_row", x.shape(), std::move(out), {x, bias}, [m, n](Node& self) {
    double* gx = parent_grad(self, 0);
    double* gb = parent_grad(self, 1);
    const auto& g = self.grad;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        if (gx) gx[r * n + c] += g[r * n + c];
        if (gb) gb[c] += g[r * n + c];
      }
  });
}

Tensor mul_row(const Tensor& x, const Tensor& v) {
  require_matrix(x, "mul_row");
  require(v.defined() && v.size() == x.cols(), "mul_row", "vector length must equal column count");
  const std::size_t m = x.rows(), n = x.cols();
  const auto xd = x.data();
  const auto vd = v.data();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xd[r * n + c] * vd[c];
  detail::check_finite("mul_row", out);
  return make_result("mul_row", x.shape(), std::move(out), {x, v}, [m, n](Node& self) {
    double* gx = parent_grad(self, 0);
    double* gv = parent_grad(self, 1);
    const auto& xd = parent_data(self, 0);
    const auto& vd = parent_data(self, 1);
    const auto& g = self.grad;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        if (gx) gx[r * n + c] += g[r * n + c] * vd[c];
        if (gv) gv[c] += g[r * n + c] * xd[r * n + c];
      }
  });
}

Tensor mul_col(const Tensor& x, const Tensor& v) {
  require_matrix(x, "mul_col");
  require(v.defined() && v.size() == x.rows(), "mul_col", "vector length must equal row count");
  const std::size_t m = x.rows(), n = x.cols();
  const auto xd = x.data();
  const auto vd = v.data();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xd[r * n + c] * vd[r];
  detail::check_finite("mul_col", out);
  return make_result("mul_col", x.shape(), std::move(out), {x, v}, [m, n](Node& self) {
    double* gx = parent_grad(self, 0);
    double* gv = parent_grad(self, 1);
    const auto& xd = parent_data(self, 0);
    const auto& vd = parent_data(self, 1);
    const auto& g = self.grad;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        if (gx) gx[r * n + c] += g[r * n + c] * vd[r];
        if (gv) gv[r] += g[r * n + c] * xd[r * n + c];
      }
  });
}

Tensor scale(const Tensor& x, double s) {
  return unary(x, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; }, true);
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul",
          [&] { return "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()); });
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  detail::check_finite("matmul", out);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& g = self.grad;
    const auto& ad = parent_data(self, 0);
    const auto& bd = parent_data(self, 1);
    if (double* ga = parent_grad(self, 0)) {
      // ga = g * b^T, over a transposed copy of b so the inner loop is contiguous
      std::vector<double> bt(n * k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bd[p * n + j];
      for (std::size_t i = 0; i < m; ++i) {
        double* garow = ga + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g[i * n + j];
          if (gv == 0.0) continue;
          const double* btrow = bt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) garow[p] += gv * btrow[p];
        }
      }
    }
    if (double* gb = parent_grad(self, 1)) {
      // gb = a^T * g
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ad[i * k + p];
          if (av == 0.0) continue;
          const double* grow = g.data() + i * n;
          double* gbrow = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  const auto xd = x.data();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c * m + r] = xd[r * n + c];
  return make_result("transpose", {n, m}, std::move(out), {x}, [m, n](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += self.grad[c * m + r];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(x.defined(), "reshape", "undefined input");
  require(shape_numel(shape) == x.size(), "reshape", "element count changes");
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; }, true);
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw std::domain_error("log: non-positive input");
  }
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; }, true);
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0) throw std::domain_error("sqrt: negative input");
  }
  return unary(x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; }, true);
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor swish(const Tensor& x) {
  return unary(
      x, "swish", [](double v) { return v * stable_sigmoid(v); },
      [](double v, double) {
        const double s = stable_sigmoid(v);
        return s + v * s * (1.0 - s);
      });
}

Tensor softmax(const Tensor& x) {
  require(x.defined() && x.rank() >= 1, "softmax", "expected rank >= 1");
  const std::size_t m = x.rows(), n = x.cols();
  const auto xd = x.data();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xd.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += (out[r * n + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [m, n](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  require(x.defined() && x.rank() >= 1, "log_softmax", "expected rank >= 1");
  const std::size_t m = x.rows(), n = x.cols();
  const auto xd = x.data();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xd.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = row[c] - lse;
  }
  return make_result("log_softmax", x.shape(), std::move(out), {x}, [m, n](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t r = 0; r < m; ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < n; ++c) gs += g[r * n + c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[r * n + c] - std::exp(y[r * n + c]) * gs;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require(x.defined() && x.rank() >= 1, "layer_norm", "expected rank >= 1");
  const std::size_t m = x.rows(), n = x.cols();
  require(gamma.size() == n && beta.size() == n, "layer_norm", "gain/bias length must equal column count");
  require(eps >= 0.0, "layer_norm", "eps must be non-negative");
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xd.data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    const double denom = std::sqrt(var + eps);
    if (!(denom > 0.0)) throw std::overflow_error("layer_norm: zero variance row with eps = 0");
    inv_std[r] = 1.0 / denom;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mu) * inv_std[r];
      xhat[r * n + c] = h;
      out[r * n + c] = h * gd[c] + bd[c];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                     [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const auto& g = self.grad;
                       const auto& gd = parent_data(self, 1);
                       double* gx = parent_grad(self, 0);
                       double* gg = parent_grad(self, 1);
                       double* gb = parent_grad(self, 2);
                       for (std::size_t r = 0; r < m; ++r) {
                         double mean_gh = 0.0, mean_ghh = 0.0;
                         for (std::size_t c = 0; c < n; ++c) {
                           const std::size_t i = r * n + c;
                           if (gg) gg[c] += g[i] * xhat[i];
                           if (gb) gb[c] += g[i];
                           const double gh = g[i] * gd[c];
                           mean_gh += gh;
                           mean_ghh += gh * xhat[i];
                         }
                         if (!gx) continue;
                         mean_gh /= static_cast<double>(n);
                         mean_ghh /= static_cast<double>(n);
                         for (std::size_t c = 0; c < n; ++c) {
                           const std::size_t i = r * n + c;
                           gx[i] += inv_std[r] * (g[i] * gd[c] - mean_gh - xhat[i] * mean_ghh);
                         }
                       }
                     });
}

Tensor normalize_rows(const Tensor& x, double eps) {
  require(x.defined() && x.rank() >= 1, "normalize_rows", "expected rank >= 1");
  const std::size_t m = x.rows(), n = x.cols();
  const auto xd = x.data();
  std::vector<double> out(m * n);
  std::vector<double> norms(m);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += xd[r * n + c] * xd[r * n + c];
    norms[r] = std::sqrt(s);
    const double d = norms[r] + eps;
    if (!(d > 0.0)) throw std::overflow_error("normalize_rows: zero row with eps = 0");
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xd[r * n + c] / d;
  }
  return make_result("normalize_rows", x.shape(), std::move(out), {x},
                     [m, n, eps, norms = std::move(norms)](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       const auto& xd = parent_data(self, 0);
                       const auto& g = self.grad;
                       for (std::size_t r = 0; r < m; ++r) {
                         const double s = norms[r];
                         const double d = s + eps;
                         double gdotx = 0.0;
                         for (std::size_t c = 0; c < n; ++c) gdotx += g[r * n + c] * xd[r * n + c];
                         const double k = s > 0.0 ? gdotx / (d * d * s) : 0.0;
                         for (std::size_t c = 0; c < n; ++c) {
                           gx[r * n + c] += g[r * n + c] / d - xd[r * n + c] * k;
                         }
                       }
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require(table.defined() && table.rank() >= 1, "gather_rows", "expected rank >= 1");
  require(!ids.empty(), "gather_rows", "empty index list");
  const std::size_t vocab = table.rows(), n = table.cols();
  const auto td = table.data();
  std::vector<double> out(ids.size() * n);
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= vocab) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[r]) + " outside table of " +
                              std::to_string(vocab) + " rows");
    }
    std::copy_n(td.data() + idx[r] * n, n, out.data() + r * n);
  }
  Shape shape{idx.size(), n};
  return make_result("gather_rows", std::move(shape), std::move(out), {table},
                     [n, idx = std::move(idx)](Node& self) {
                       double* gt = parent_grad(self, 0);
                       if (!gt) return;
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t c = 0; c < n; ++c) gt[idx[r] * n + c] += self.grad[r * n + c];
                     });
}

Tensor gather_cols(const Tensor& x, std::span<const std::size_t> idx, std::size_t per_row) {
  require(x.defined() && x.rank() >= 1, "gather_cols", "expected rank >= 1");
  const std::size_t m = x.rows(), n = x.cols();
  require(per_row >= 1 && idx.size() == m * per_row, "gather_cols", "index count must be rows * per_row");
  const auto xd = x.data();
  std::vector<std::size_t> ix(idx.begin(), idx.end());
  std::vector<double> out(m * per_row);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < per_row; ++j) {
      const std::size_t c = ix[r * per_row + j];
      if (c >= n) throw std::out_of_range("gather_cols: column index out of range");
      out[r * per_row + j] = xd[r * n + c];
    }
  return make_result("gather_cols", {m, per_row}, std::move(out), {x},
                     [n, per_row, m, ix = std::move(ix)](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t j = 0; j < per_row; ++j)
                           gx[r * n + ix[r * per_row + j]] += self.grad[r * per_row + j];
                     });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  require(!parts.empty(), "concat", "no inputs");
  require(axis <= 1, "concat", "axis must be 0 or 1");
  for (const auto& p : parts) require_matrix(p, "concat");
  std::size_t rows = 0, cols = 0;
  if (axis == 0) {
    cols = parts[0].cols();
    for (const auto& p : parts) {
      require(p.cols() == cols, "concat", "column counts differ");
      rows += p.rows();
    }
  } else {
    rows = parts[0].rows();
    for (const auto& p : parts) {
      require(p.rows() == rows, "concat", "row counts differ");
      cols += p.cols();
    }
  }
  std::vector<double> out(rows * cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto pd = p.data();
    const std::size_t pr = p.rows(), pc = p.cols();
    for (std::size_t r = 0; r < pr; ++r)
      for (std::size_t c = 0; c < pc; ++c) {
        if (axis == 0) out[(off + r) * cols + c] = pd[r * pc + c];
        else out[r * cols + off + c] = pd[r * pc + c];
      }
    off += axis == 0 ? pr : pc;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_result("concat", {rows, cols}, std::move(out), parents,
                     [axis, cols, offsets = std::move(offsets)](Node& self) {
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         double* gp = parent_grad(self, i);
                         if (!gp) continue;
                         const auto& shape = self.parents[i]->shape;
                         const std::size_t pr = shape[0], pc = shape[1];
                         for (std::size_t r = 0; r < pr; ++r)
                           for (std::size_t c = 0; c < pc; ++c) {
                             const std::size_t src =
                                 axis == 0 ? (offsets[i] + r) * cols + c : r * cols + offsets[i] + c;
                             gp[r * pc + c] += self.grad[src];
                           }
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  require(begin < end && end <= x.rows(), "slice_rows", "invalid row range");
  const std::size_t n = x.cols();
  const auto xd = x.data();
  std::vector<double> out(xd.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          xd.begin() + static_cast<std::ptrdiff_t>(end * n));
  return make_result("slice_rows", {end - begin, n}, std::move(out), {x}, [begin, n](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[begin * n + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  require(begin < end && end <= x.cols(), "slice_cols", "invalid column range");
  const std::size_t m = x.rows(), n = x.cols(), w = end - begin;
  const auto xd = x.data();
  std::vector<double> out(m * w);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = xd[r * n + begin + c];
  return make_result("slice_cols", {m, w}, std::move(out), {x}, [m, n, w, begin](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c) gx[r * n + begin + c] += self.grad[r * w + c];
  });
}

Tensor sum(const Tensor& x) {
  require(x.defined(), "sum", "undefined input");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("sum", {}, {s}, {x}, [](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const std::size_t n = self.parents[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  require_matrix(x, "sum_axis");
  require(axis <= 1, "sum_axis", "axis must be 0 or 1");
  const std::size_t m = x.rows(), n = x.cols();
  const auto xd = x.data();
  std::vector<double> out(axis == 0 ? n : m, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[axis == 0 ? c : r] += xd[r * n + c];
  Shape shape{axis == 0 ? n : m};
  return make_result("sum_axis", shape, std::move(out), {x}, [axis, m, n](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += self.grad[axis == 0 ? c : r];
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  require_matrix(x, "mean_axis");
  const double count = static_cast<double>(axis == 0 ? x.rows() : x.cols());
  return scale(sum_axis(x, axis), 1.0 / count);
}

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value) {
  require(x.defined() && mask.size() == x.size(), "masked_fill", "mask size must equal tensor size");
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  std::vector<std::uint8_t> keep(mask.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    keep[i] = mask[i] == 0;
    out[i] = keep[i] ? xd[i] : value;
  }
  return make_result("masked_fill", x.shape(), std::move(out), {x}, [keep = std::move(keep)](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (keep[i]) gx[i] += self.grad[i];
  });
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel) {
  require_matrix(x, "depthwise_conv1d");
  require_matrix(kernel, "depthwise_conv1d");
  const std::size_t t_len = x.rows(), d = x.cols(), k = kernel.rows();
  require(kernel.cols() == d, "depthwise_conv1d", "kernel width must equal channel count");
  require(k % 2 == 1, "depthwise_conv1d", "kernel size must be odd");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  const auto xd = x.data();
  const auto wd = kernel.data();
  std::vector<double> out(t_len * d, 0.0);
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
      for (std::size_t c = 0; c < d; ++c) out[t * d + c] += xd[static_cast<std::size_t>(src) * d + c] * wd[j * d + c];
    }
  return make_result("depthwise_conv1d", {t_len, d}, std::move(out), {x, kernel}, [t_len, d, k, half](Node& self) {
    double* gx = parent_grad(self, 0);
    double* gw = parent_grad(self, 1);
    const auto& xd = parent_data(self, 0);
    const auto& wd = parent_data(self, 1);
    const auto& g = self.grad;
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
        const std::size_t s = static_cast<std::size_t>(src);
        for (std::size_t c = 0; c < d; ++c) {
          if (gx) gx[s * d + c] += g[t * d + c] * wd[j * d + c];
          if (gw) gw[j * d + c] += g[t * d + c] * xd[s * d + c];
        }
      }
  });
}

Tensor straight_through(const Tensor& value, const Tensor& grad_path) {
  require(value.defined() && grad_path.defined() && value.shape() == grad_path.shape(), "straight_through",
          "value and gradient path must have the same shape");
  std::vector<double> out(value.data().begin(), value.data().end());
  return make_result("straight_through", value.shape(), std::move(out), {grad_path}, [](Node& self) {
    double* gp = parent_grad(self, 0);
    if (!gp) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += self.grad[i];
  });
}

}  // namespace s2st::ops
