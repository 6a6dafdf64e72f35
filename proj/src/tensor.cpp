#include "same/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace same {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

int shape_size(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  if (shape_size(shape) != static_cast<int>(data.size()))
    throw std::invalid_argument("tensor data length " +
                                std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<double> d(shape_size(shape), 0.0);
  return Tensor(std::move(shape), std::move(d));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item() on non-scalar tensor");
  return node_->data[0];
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::logic_error("backward requires a scalar loss, got shape " +
                           shape_str(loss.shape()));
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

namespace {

Tensor make_out(Tape* tape, Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  if (tape) tape->record(t);
  return t;
}

// Rows-of-last-axis view: [n] is one row, [m,n] is m rows.
void row_view(const Tensor& t, int& rows, int& cols) {
  const Shape& s = t.shape();
  if (s.size() == 1) {
    rows = 1;
    cols = s[0];
  } else if (s.size() == 2) {
    rows = s[0];
    cols = s[1];
  } else {
    throw std::invalid_argument("expected 1-D or 2-D tensor, got " +
                                shape_str(s));
  }
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data())
    if (!std::isfinite(v))
      throw std::domain_error(std::string(op) + ": non-finite input value");
}

void softmax_row(const double* x, double* y, int n) {
  double m = x[0];
  for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - m);
    z += y[i];
  }
  for (int i = 0; i < n; ++i) y[i] /= z;
}

}  // namespace

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul shape mismatch: " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = make_out(tape, {m, n});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data().data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* Bp = B + p * n;
      double* Ci = C + i * n;
      for (int j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
    }
  if (tape) {
    auto an = a.node(), bn = b.node();
    TensorNode* on = out.node().get();
    on->backprop = [an, bn, on, m, k, n] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      bn->ensure_grad();
      const double* G = on->grad.data();
      // dA += G * B^T
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += G[i * n + j] * bn->data[p * n + j];
          an->grad[i * k + p] += acc;
        }
      // dB += A^T * G
      for (int p = 0; p < k; ++p)
        for (int i = 0; i < m; ++i) {
          const double aip = an->data[i * k + p];
          if (aip == 0.0) continue;
          for (int j = 0; j < n; ++j)
            bn->grad[p * n + j] += aip * G[i * n + j];
        }
    };
  }
  return out;
}

namespace {

Tensor elementwise2(Tape* tape, const Tensor& a, const Tensor& b,
                    const char* name,
                    double (*f)(double, double),
                    double (*dfa)(double, double),
                    double (*dfb)(double, double)) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(name) + " shape mismatch: " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Tensor out = make_out(tape, a.shape());
  for (int i = 0; i < a.size(); ++i)
    out.data()[i] = f(a.data()[i], b.data()[i]);
  if (tape) {
    auto an = a.node(), bn = b.node();
    TensorNode* on = out.node().get();
    on->backprop = [an, bn, on, dfa, dfb] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      bn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) {
        an->grad[i] += on->grad[i] * dfa(an->data[i], bn->data[i]);
        bn->grad[i] += on->grad[i] * dfb(an->data[i], bn->data[i]);
      }
    };
  }
  return out;
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  return elementwise2(
      tape, a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  return elementwise2(
      tape, a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  return elementwise2(
      tape, a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(Tape* tape, const Tensor& a, double c) {
  Tensor out = make_out(tape, a.shape());
  for (int i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  if (tape) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    on->backprop = [an, on, c] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += c * on->grad[i];
    };
  }
  return out;
}

Tensor add_row(Tape* tape, const Tensor& a, const Tensor& b) {
  int m, n;
  row_view(a, m, n);
  if (b.shape().size() != 1 || b.shape()[0] != n)
    throw std::invalid_argument("add_row shape mismatch: " +
                                shape_str(a.shape()) + " + " +
                                shape_str(b.shape()));
  Tensor out = make_out(tape, a.shape());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[i * n + j] = a.data()[i * n + j] + b.data()[j];
  if (tape) {
    auto an = a.node(), bn = b.node();
    TensorNode* on = out.node().get();
    on->backprop = [an, bn, on, m, n] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      bn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          an->grad[i * n + j] += on->grad[i * n + j];
          bn->grad[j] += on->grad[i * n + j];
        }
    };
  }
  return out;
}

Tensor softmax(Tape* tape, const Tensor& logits) {
  check_finite(logits, "softmax");
  int m, n;
  row_view(logits, m, n);
  Tensor out = make_out(tape, logits.shape());
  for (int i = 0; i < m; ++i)
    softmax_row(logits.data().data() + i * n, out.data().data() + i * n, n);
  if (tape) {
    auto xn = logits.node();
    TensorNode* on = out.node().get();
    on->backprop = [xn, on, m, n] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (int i = 0; i < m; ++i) {
        const double* y = on->data.data() + i * n;
        const double* dy = on->grad.data() + i * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
        for (int j = 0; j < n; ++j)
          xn->grad[i * n + j] += y[j] * (dy[j] - dot);
      }
    };
  }
  return out;
}

Tensor log_softmax(Tape* tape, const Tensor& logits) {
  check_finite(logits, "log_softmax");
  int m, n;
  row_view(logits, m, n);
  Tensor out = make_out(tape, logits.shape());
  for (int i = 0; i < m; ++i) {
    const double* x = logits.data().data() + i * n;
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lz = mx + std::log(z);
    for (int j = 0; j < n; ++j) out.data()[i * n + j] = x[j] - lz;
  }
  if (tape) {
    auto xn = logits.node();
    TensorNode* on = out.node().get();
    on->backprop = [xn, on, m, n] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (int i = 0; i < m; ++i) {
        const double* dy = on->grad.data() + i * n;
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += dy[j];
        for (int j = 0; j < n; ++j)
          xn->grad[i * n + j] += dy[j] - std::exp(on->data[i * n + j]) * s;
      }
    };
  }
  return out;
}

Tensor cross_entropy(Tape* tape, const Tensor& logits, int target_class) {
  if (logits.shape().size() != 1)
    throw std::invalid_argument("cross_entropy expects 1-D logits, got " +
                                shape_str(logits.shape()));
  const int k = logits.shape()[0];
  if (target_class < 0 || target_class >= k)
    throw std::domain_error("cross_entropy target " +
                            std::to_string(target_class) +
                            " out of range for " + std::to_string(k) +
                            " classes");
  Tensor ls = log_softmax(tape, logits);
  Tensor out = make_out(tape, {1});
  out.data()[0] = -ls.data()[target_class];
  if (tape) {
    auto ln = ls.node();
    TensorNode* on = out.node().get();
    on->backprop = [ln, on, target_class] {
      if (on->grad.empty()) return;
      ln->ensure_grad();
      ln->grad[target_class] -= on->grad[0];
    };
  }
  return out;
}

Tensor soft_cross_entropy(Tape* tape, const Tensor& logits,
                          const std::vector<double>& target_dist) {
  if (logits.shape().size() != 1 ||
      logits.shape()[0] != static_cast<int>(target_dist.size()))
    throw std::invalid_argument("soft_cross_entropy shape mismatch");
  double sum = 0.0;
  for (double q : target_dist) sum += q;
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::domain_error("soft_cross_entropy target not normalized (sum " +
                            std::to_string(sum) + ")");
  Tensor ls = log_softmax(tape, logits);
  Tensor out = make_out(tape, {1});
  double v = 0.0;
  for (size_t j = 0; j < target_dist.size(); ++j)
    v -= target_dist[j] * ls.data()[j];
  out.data()[0] = v;
  if (tape) {
    auto ln = ls.node();
    TensorNode* on = out.node().get();
    std::vector<double> q = target_dist;
    on->backprop = [ln, on, q] {
      if (on->grad.empty()) return;
      ln->ensure_grad();
      for (size_t j = 0; j < q.size(); ++j) ln->grad[j] -= q[j] * on->grad[0];
    };
  }
  return out;
}

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta) {
  int m, n;
  row_view(x, m, n);
  if (gamma.size() != n || beta.size() != n)
    throw std::invalid_argument("layer_norm parameter size mismatch");
  constexpr double kEps = 1e-5;
  Tensor out = make_out(tape, x.shape());
  std::vector<double> inv_sigma(m), mu(m);
  for (int i = 0; i < m; ++i) {
    const double* xi = x.data().data() + i * n;
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += xi[j];
    mu[i] = s / n;
    double v = 0.0;
    for (int j = 0; j < n; ++j) v += (xi[j] - mu[i]) * (xi[j] - mu[i]);
    inv_sigma[i] = 1.0 / std::sqrt(v / n + kEps);
    for (int j = 0; j < n; ++j)
      out.data()[i * n + j] =
          gamma.data()[j] * (xi[j] - mu[i]) * inv_sigma[i] + beta.data()[j];
  }
  if (tape) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    TensorNode* on = out.node().get();
    on->backprop = [xn, gn, bn, on, m, n, mu, inv_sigma] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      gn->ensure_grad();
      bn->ensure_grad();
      for (int i = 0; i < m; ++i) {
        const double* dy = on->grad.data() + i * n;
        const double* xi = xn->data.data() + i * n;
        double sum_gdy = 0.0, sum_gdy_xhat = 0.0;
        for (int j = 0; j < n; ++j) {
          const double xhat = (xi[j] - mu[i]) * inv_sigma[i];
          const double gdy = gn->data[j] * dy[j];
          sum_gdy += gdy;
          sum_gdy_xhat += gdy * xhat;
          gn->grad[j] += dy[j] * xhat;
          bn->grad[j] += dy[j];
        }
        for (int j = 0; j < n; ++j) {
          const double xhat = (xi[j] - mu[i]) * inv_sigma[i];
          const double gdy = gn->data[j] * dy[j];
          xn->grad[i * n + j] +=
              inv_sigma[i] * (gdy - sum_gdy / n - xhat * sum_gdy_xhat / n);
        }
      }
    };
  }
  return out;
}

Tensor gelu(Tape* tape, const Tensor& x) {
  // tanh approximation
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor out = make_out(tape, x.shape());
  for (int i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  if (tape) {
    auto xn = x.node();
    TensorNode* on = out.node().get();
    on->backprop = [xn, on] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) {
        const double v = xn->data[i];
        const double u = kC * (v + kA * v * v * v);
        const double t = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * kA * v * v);
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        xn->grad[i] += on->grad[i] * d;
      }
    };
  }
  return out;
}

Tensor embedding_lookup(Tape* tape, const Tensor& table,
                        const std::vector<int>& ids) {
  if (table.shape().size() != 2)
    throw std::invalid_argument("embedding_lookup expects 2-D table");
  const int rows = table.shape()[0], d = table.shape()[1];
  for (int id : ids)
    if (id < 0 || id >= rows)
      throw std::domain_error("embedding id " + std::to_string(id) +
                              " out of range [0," + std::to_string(rows) + ")");
  Tensor out = make_out(tape, {static_cast<int>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i)
    for (int j = 0; j < d; ++j)
      out.data()[i * d + j] = table.data()[ids[i] * d + j];
  if (tape) {
    auto tn = table.node();
    TensorNode* on = out.node().get();
    on->backprop = [tn, on, ids, d] {
      if (on->grad.empty()) return;
      tn->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j)
          tn->grad[ids[i] * d + j] += on->grad[i * d + j];
    };
  }
  return out;
}

Tensor reshape(Tape* tape, const Tensor& x, Shape new_shape) {
  if (shape_size(new_shape) != x.size())
    throw std::invalid_argument("reshape " + shape_str(x.shape()) + " -> " +
                                shape_str(new_shape) + " changes element count");
  Tensor out = make_out(tape, std::move(new_shape));
  out.data() = x.data();
  if (tape) {
    auto xn = x.node();
    TensorNode* on = out.node().get();
    on->backprop = [xn, on] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    };
  }
  return out;
}

Tensor transpose2d(Tape* tape, const Tensor& x) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("transpose2d expects 2-D tensor");
  const int m = x.shape()[0], n = x.shape()[1];
  Tensor out = make_out(tape, {n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[j * m + i] = x.data()[i * n + j];
  if (tape) {
    auto xn = x.node();
    TensorNode* on = out.node().get();
    on->backprop = [xn, on, m, n] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          xn->grad[i * n + j] += on->grad[j * m + i];
    };
  }
  return out;
}

Tensor slice_cols(Tape* tape, const Tensor& x, int start, int count) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("slice_cols expects 2-D tensor");
  const int m = x.shape()[0], n = x.shape()[1];
  if (start < 0 || count <= 0 || start + count > n)
    throw std::invalid_argument("slice_cols range out of bounds");
  Tensor out = make_out(tape, {m, count});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < count; ++j)
      out.data()[i * count + j] = x.data()[i * n + start + j];
  if (tape) {
    auto xn = x.node();
    TensorNode* on = out.node().get();
    on->backprop = [xn, on, m, n, start, count] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j)
          xn->grad[i * n + start + j] += on->grad[i * count + j];
    };
  }
  return out;
}

Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty list");
  const int m = parts[0].shape()[0];
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != m)
      throw std::invalid_argument("concat_cols: row count mismatch");
    total += p.shape()[1];
  }
  Tensor out = make_out(tape, {m, total});
  int off = 0;
  for (const Tensor& p : parts) {
    const int c = p.shape()[1];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < c; ++j)
        out.data()[i * total + off + j] = p.data()[i * c + j];
    off += c;
  }
  if (tape) {
    std::vector<std::shared_ptr<TensorNode>> pn;
    for (const Tensor& p : parts) pn.push_back(p.node());
    TensorNode* on = out.node().get();
    on->backprop = [pn, on, m, total] {
      if (on->grad.empty()) return;
      int off = 0;
      for (auto& p : pn) {
        p->ensure_grad();
        const int c = p->shape[1];
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < c; ++j)
            p->grad[i * c + j] += on->grad[i * total + off + j];
        off += c;
      }
    };
  }
  return out;
}

Tensor reduce_sum(Tape* tape, const Tensor& x) {
  Tensor out = make_out(tape, {1});
  double s = 0.0;
  for (double v : x.data()) s += v;
  out.data()[0] = s;
  if (tape) {
    auto xn = x.node();
    TensorNode* on = out.node().get();
    on->backprop = [xn, on] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (double& g : xn->grad) g += on->grad[0];
    };
  }
  return out;
}

Tensor reduce_mean(Tape* tape, const Tensor& x) {
  Tensor s = reduce_sum(tape, x);
  return scale(tape, s, 1.0 / x.size());
}

Tensor mean_rows(Tape* tape, const Tensor& x) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("mean_rows expects 2-D tensor");
  const int m = x.shape()[0], n = x.shape()[1];
  Tensor out = make_out(tape, {n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[j] += x.data()[i * n + j];
  for (int j = 0; j < n; ++j) out.data()[j] /= m;
  if (tape) {
    auto xn = x.node();
    TensorNode* on = out.node().get();
    on->backprop = [xn, on, m, n] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          xn->grad[i * n + j] += on->grad[j] / m;
    };
  }
  return out;
}

}  // namespace same
