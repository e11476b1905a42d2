#include "tar2/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "tar2/common/error.hpp"

namespace tar2::nn {

namespace {

std::string shape_str(const Tensor& t) { return "[" + std::to_string(t.rows()) + "," + std::to_string(t.cols()) + "]"; }

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) fail(Errc::shape_mismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

// Elementwise y = f(x); backward dx = g * df(x, y).
template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) y[k] = f(x[k]);
  const std::size_t ia = a.id();
  Tape& tape = *a.tape();
  const std::size_t out_id = tape.size();
  return tape.record(std::move(y), {a}, [ia, out_id, df](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(out_id);
    Tensor& gx = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * df(xv[k], yv[k]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) fail(Errc::shape_mismatch, "matmul: " + shape_str(A) + " x " + shape_str(B));
  Tensor out(A.rows(), B.cols());
  gemm(A, false, B, false, out, false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.needs_grad(ia)) gemm(g, false, t.value(ib), true, t.grad(ia), true);
    if (t.needs_grad(ib)) gemm(t.value(ia), true, g, false, t.grad(ib), true);
  });
}

Var transpose(const Var& a) {
  const Tensor& x = a.value();
  Tensor y(x.cols(), x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) y(c, r) = x(r, c);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(y), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(ia);
    for (std::size_t r = 0; r < gx.rows(); ++r)
      for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g(c, r);
  });
}

Var add(const Var& a, const Var& b) {
  same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  y.axpy(1.0, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(y), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.needs_grad(ia)) t.grad(ia).axpy(1.0, g);
    if (t.needs_grad(ib)) t.grad(ib).axpy(1.0, g);
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  y.axpy(-1.0, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(y), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.needs_grad(ia)) t.grad(ia).axpy(1.0, g);
    if (t.needs_grad(ib)) t.grad(ib).axpy(-1.0, g);
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a.value(), b.value(), "mul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor y(A.rows(), A.cols());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = A[k] * B[k];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(y), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * bv[k];
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t k = 0; k < g.size(); ++k) gb[k] += g[k] * av[k];
    }
  });
}

Var add_row(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (B.rows() != 1 || B.cols() != A.cols()) fail(Errc::shape_mismatch,
          "add_row: " + shape_str(A) + " + " + shape_str(B));
  Tensor y = A;
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) y(r, c) += B[c];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(y), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.needs_grad(ia)) t.grad(ia).axpy(1.0, g);
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + k * x * x * x);
        const double th = std::tanh(u);
        const double du = c * (1.0 + 3.0 * k * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softmax_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += (y(r, c) = std::exp(x(r, c) - mx));
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) /= s;
  }
  const std::size_t ia = a.id();
  const std::size_t out_id = a.tape()->size();
  return a.tape()->record(std::move(y), {a}, [ia, out_id](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(out_id);
    Tensor& gx = t.grad(ia);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * yv(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) += yv(r, c) * (g(r, c) - dot);
    }
  });
}

Var log_softmax_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += std::exp(x(r, c) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = x(r, c) - lse;
  }
  const std::size_t ia = a.id();
  const std::size_t out_id = a.tape()->size();
  return a.tape()->record(std::move(y), {a}, [ia, out_id](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(out_id);
    Tensor& gx = t.grad(ia);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) gs += g(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) += g(r, c) - std::exp(yv(r, c)) * gs;
    }
  });
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Tensor& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != n || !bias.value().same_shape(gain.value()))
    fail(Errc::shape_mismatch, "layer_norm: gain/bias must be [1," + std::to_string(n) + "]");
  auto xhat = std::make_shared<Tensor>(m, n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  Tensor y(m, n);
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += X(r, c);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (X(r, c) - mu) * (X(r, c) - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      (*xhat)(r, c) = (X(r, c) - mu) * is;
      y(r, c) = G[c] * (*xhat)(r, c) + B[c];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->record(std::move(y), {x, gain, bias}, [ix, ig, ib, xhat, inv_std](Tape& t, const Tensor& g) {
    const std::size_t m = g.rows(), n = g.cols();
    const Tensor& Gv = t.value(ig);
    if (t.needs_grad(ig)) {
      Tensor& gg = t.grad(ig);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gg[c] += g(r, c) * (*xhat)(r, c);
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g(r, c);
    }
    if (t.needs_grad(ix)) {
      Tensor& gx = t.grad(ix);
      std::vector<double> dxhat(n);
      for (std::size_t r = 0; r < m; ++r) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          dxhat[c] = g(r, c) * Gv[c];
          mean_d += dxhat[c];
          mean_dx += dxhat[c] * (*xhat)(r, c);
        }
        mean_d /= static_cast<double>(n);
        mean_dx /= static_cast<double>(n);
        for (std::size_t c = 0; c < n; ++c)
          gx(r, c) += (*inv_std)[r] * (dxhat[c] - mean_d - (*xhat)(r, c) * mean_dx);
      }
    }
  });
}

Var gather_rows(const Var& table, std::span<const std::size_t> indices) {
  const Tensor& T = table.value();
  Tensor y(indices.size(), T.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= T.rows()) fail(Errc::invalid_argument,
            "gather_rows: index " + std::to_string(indices[r]) + " out of range " + std::to_string(T.rows()));
    std::copy_n(T.ptr() + indices[r] * T.cols(), T.cols(), y.ptr() + r * T.cols());
  }
  const std::size_t it = table.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return table.tape()->record(std::move(y), {table}, [it, idx = std::move(idx)](Tape& t, const Tensor& g) {
    Tensor& gt = t.grad(it);
    const std::size_t n = g.cols();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < n; ++c) gt(idx[r], c) += g(r, c);
  });
}

Var pick(const Var& a, std::span<const std::size_t> cols) {
  const Tensor& x = a.value();
  require(cols.size() == x.rows(), Errc::shape_mismatch, "pick: one column index per row required");
  Tensor y(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    require(cols[r] < x.cols(), Errc::invalid_argument, "pick: column index out of range");
    y[r] = x(r, cols[r]);
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return a.tape()->record(std::move(y), {a}, [ia, idx = std::move(idx)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) gx(r, idx[r]) += g[r];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), Errc::invalid_argument, "concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const Var& p : parts) {
    require(p.rows() == m, Errc::shape_mismatch, "concat_cols: row counts differ");
    n += p.cols();
  }
  Tensor y(m, n);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < m; ++r) std::copy_n(v.ptr() + r * v.cols(), v.cols(), y.ptr() + r * n + off);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.cols();
  }
  return parts.front().tape()->record(std::move(y), parts, [ids, offsets](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.needs_grad(ids[k])) continue;
      Tensor& gp = t.grad(ids[k]);
      for (std::size_t r = 0; r < gp.rows(); ++r)
        for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, offsets[k] + c);
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), Errc::invalid_argument, "concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const Var& p : parts) {
    require(p.cols() == n, Errc::shape_mismatch, "concat_rows: column counts differ");
    m += p.rows();
  }
  Tensor y(m, n);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy_n(v.ptr(), v.size(), y.ptr() + off * n);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.rows();
  }
  return parts.front().tape()->record(std::move(y), parts, [ids, offsets, n](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.needs_grad(ids[k])) continue;
      Tensor& gp = t.grad(ids[k]);
      const double* src = g.ptr() + offsets[k] * n;
      for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += src[j];
    }
  });
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  Tensor y = a.value();
  y.reshape(rows, cols);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(y), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k];
  });
}

Var sum(const Var& a) {
  Tensor y(1, 1, a.value().sum());
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(y), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(ia);
    for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += g[0];
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  require(n > 0, Errc::invalid_argument, "mean of an empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var sum_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor y(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) y[r] += x(r, c);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(y), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(ia);
    for (std::size_t r = 0; r < gx.rows(); ++r)
      for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g[r];
  });
}

Var sum_cols(const Var& a) {
  const Tensor& x = a.value();
  Tensor y(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) y[c] += x(r, c);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(y), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(ia);
    for (std::size_t r = 0; r < gx.rows(); ++r)
      for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g[c];
  });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

namespace {

Var select(const Var& a, const Var& b, bool take_min) {
  same_shape(a.value(), b.value(), take_min ? "minimum" : "maximum");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor y(A.rows(), A.cols());
  auto from_a = std::make_shared<std::vector<std::uint8_t>>(A.size());
  for (std::size_t k = 0; k < A.size(); ++k) {
    const bool pa = take_min ? (A[k] <= B[k]) : (A[k] >= B[k]);
    (*from_a)[k] = pa ? 1 : 0;
    y[k] = pa ? A[k] : B[k];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(y), {a, b}, [ia, ib, from_a](Tape& t, const Tensor& g) {
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t k = 0; k < g.size(); ++k)
        if ((*from_a)[k]) ga[k] += g[k];
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t k = 0; k < g.size(); ++k)
        if (!(*from_a)[k]) gb[k] += g[k];
    }
  });
}

}  // namespace

Var minimum(const Var& a, const Var& b) { return select(a, b, true); }
Var maximum(const Var& a, const Var& b) { return select(a, b, false); }

Var cross_entropy(const Var& logits, std::span<const std::size_t> targets) {
  return scale(pick(log_softmax_rows(logits), targets), -1.0);
}

Var cross_entropy(const Var& logits, const Tensor& target_probs) {
  same_shape(logits.value(), target_probs, "cross_entropy");
  Var lp = log_softmax_rows(logits);
  return scale(sum_rows(mul(lp, logits.tape()->constant(target_probs))), -1.0);
}

Var squared_error(const Var& a, const Var& b) { return square(sub(a, b)); }

Var dropout(const Var& a, double rate, std::mt19937_64& rng) {
  require(rate >= 0.0 && rate < 1.0, Errc::invalid_argument, "dropout rate must be in [0,1)");
  if (rate == 0.0) return a;
  const Tensor& x = a.value();
  auto keep = std::make_shared<Tensor>(x.rows(), x.cols());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = 1.0 / (1.0 - rate);
  Tensor y(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) {
    (*keep)[k] = u(rng) >= rate ? s : 0.0;
    y[k] = x[k] * (*keep)[k];
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(y), {a}, [ia, keep](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * (*keep)[k];
  });
}

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, const Tensor& mask) {
  require(q.cols() == k.cols(), Errc::shape_mismatch, "attention: query/key widths differ");
  require(k.rows() == v.rows(), Errc::shape_mismatch, "attention: key/value counts differ");
  Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (!mask.empty()) {
    require(mask.rows() == q.rows() && mask.cols() == k.rows(), Errc::shape_mismatch, "attention: mask shape");
    scores = add(scores, q.tape()->constant(mask));
  }
  return matmul(softmax_rows(scores), v);
}

Var grouped_attention(const Var& q, const Var& k, const Var& v, const AttentionGroups& spec, std::size_t heads) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  require(Q.same_shape(K) && Q.same_shape(V), Errc::shape_mismatch, "grouped_attention: Q/K/V shapes differ");
  require(heads >= 1 && Q.cols() % heads == 0, Errc::invalid_argument, "grouped_attention: width not divisible by heads");
  require(spec.key_active.size() == Q.rows(), Errc::shape_mismatch, "grouped_attention: key mask length");
  const std::size_t d = Q.cols(), dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));

  struct Plan {
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::vector<std::size_t>> keys;  // active rows per group
    std::vector<double> probs;                   // per group: heads * |group| * |keys|
    std::vector<std::size_t> prob_offset;
  };
  auto plan = std::make_shared<Plan>();
  plan->groups = spec.groups;
  std::size_t total = 0;
  for (const auto& grp : plan->groups) {
    std::vector<std::size_t> keys;
    for (std::size_t r : grp) {
      require(r < Q.rows(), Errc::invalid_argument, "grouped_attention: row index out of range");
      if (spec.key_active[r]) keys.push_back(r);
    }
    plan->prob_offset.push_back(total);
    total += heads * grp.size() * keys.size();
    plan->keys.push_back(std::move(keys));
  }
  plan->probs.assign(total, 0.0);

  Tensor out(Q.rows(), d);
  std::vector<double> s;
  for (std::size_t gi = 0; gi < plan->groups.size(); ++gi) {
    const auto& grp = plan->groups[gi];
    const auto& keys = plan->keys[gi];
    const std::size_t nk = keys.size();
    if (nk == 0) continue;
    s.resize(nk);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      for (std::size_t qi = 0; qi < grp.size(); ++qi) {
        const double* qr = Q.ptr() + grp[qi] * d + c0;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < nk; ++j) {
          const double* kr = K.ptr() + keys[j] * d + c0;
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += qr[c] * kr[c];
          s[j] = dot * inv;
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < nk; ++j) z += (s[j] = std::exp(s[j] - mx));
        double* p = plan->probs.data() + plan->prob_offset[gi] + (h * grp.size() + qi) * nk;
        double* o = out.ptr() + grp[qi] * d + c0;
        for (std::size_t j = 0; j < nk; ++j) {
          p[j] = s[j] / z;
          const double* vr = V.ptr() + keys[j] * d + c0;
          for (std::size_t c = 0; c < dh; ++c) o[c] += p[j] * vr[c];
        }
      }
    }
  }

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->record(std::move(out), {q, k, v}, [iq, ik, iv, plan, heads, d, dh, inv](Tape& t, const Tensor& g) {
    const Tensor& Qv = t.value(iq);
    const Tensor& Kv = t.value(ik);
    const Tensor& Vv = t.value(iv);
    Tensor* gq = t.needs_grad(iq) ? &t.grad(iq) : nullptr;
    Tensor* gk = t.needs_grad(ik) ? &t.grad(ik) : nullptr;
    Tensor* gv = t.needs_grad(iv) ? &t.grad(iv) : nullptr;
    std::vector<double> dp, ds;
    for (std::size_t gi = 0; gi < plan->groups.size(); ++gi) {
      const auto& grp = plan->groups[gi];
      const auto& keys = plan->keys[gi];
      const std::size_t nk = keys.size();
      if (nk == 0) continue;
      dp.resize(nk);
      ds.resize(nk);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        for (std::size_t qi = 0; qi < grp.size(); ++qi) {
          const std::size_t r = grp[qi];
          const double* p = plan->probs.data() + plan->prob_offset[gi] + (h * grp.size() + qi) * nk;
          const double* go = g.ptr() + r * d + c0;
          double pdp = 0.0;
          for (std::size_t j = 0; j < nk; ++j) {
            const double* vr = Vv.ptr() + keys[j] * d + c0;
            double dot = 0.0;
            for (std::size_t c = 0; c < dh; ++c) dot += go[c] * vr[c];
            dp[j] = dot;
            pdp += p[j] * dot;
            if (gv) {
              double* gvr = gv->ptr() + keys[j] * d + c0;
              for (std::size_t c = 0; c < dh; ++c) gvr[c] += p[j] * go[c];
            }
          }
          for (std::size_t j = 0; j < nk; ++j) ds[j] = p[j] * (dp[j] - pdp) * inv;
          if (gq) {
            double* gqr = gq->ptr() + r * d + c0;
            for (std::size_t j = 0; j < nk; ++j) {
              const double* kr = Kv.ptr() + keys[j] * d + c0;
              for (std::size_t c = 0; c < dh; ++c) gqr[c] += ds[j] * kr[c];
            }
          }
          if (gk) {
            const double* qr = Qv.ptr() + r * d + c0;
            for (std::size_t j = 0; j < nk; ++j) {
              double* gkr = gk->ptr() + keys[j] * d + c0;
              for (std::size_t c = 0; c < dh; ++c) gkr[c] += ds[j] * qr[c];
            }
          }
        }
      }
    }
  });
}

}  // namespace tar2::nn
