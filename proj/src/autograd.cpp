#include "harmonizer/autograd.hpp"

#include <cmath>
#include <memory>
#include <string>

namespace harmonizer::ag {

const Mat& Var::value() const { return tape->value(id); }
const Mat& Var::grad() const { return tape->grad(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::leaf(Mat value, bool requires_grad) { return push(std::move(value), requires_grad, nullptr); }

Var Tape::push(Mat value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var out) {
  if (out.tape != this) throw InvalidArgument("backward: variable belongs to another tape");
  if (value(out.id).size() != 1) throw DimensionError("backward: output must be 1x1");
  if (!requires_grad(out.id)) return;
  grad_buffer(out.id)(0, 0) += 1.0;
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(n.grad);
  }
}

namespace {

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw InvalidArgument("autograd: operands on different tapes");
}

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

Var unary(Var a, Mat out, Tape::BackwardFn fn) {
  return a.tape->push(std::move(out), a.requires_grad(), std::move(fn));
}

}  // namespace

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  Tape* t = a.tape;
  Mat out = a.value() * b.value();
  return t->push(std::move(out), a.requires_grad() || b.requires_grad(), [t, a, b](const Mat& g) {
    if (a.requires_grad()) t->grad_buffer(a.id).noalias() += g * b.value().transpose();
    if (b.requires_grad()) t->grad_buffer(b.id).noalias() += a.value().transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: inner dimensions differ");
  Tape* t = a.tape;
  Mat out = a.value() * b.value().transpose();
  return t->push(std::move(out), a.requires_grad() || b.requires_grad(), [t, a, b](const Mat& g) {
    if (a.requires_grad()) t->grad_buffer(a.id).noalias() += g * b.value();
    if (b.requires_grad()) t->grad_buffer(b.id).noalias() += g.transpose() * a.value();
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a.value(), b.value(), "add");
  Tape* t = a.tape;
  return t->push(a.value() + b.value(), a.requires_grad() || b.requires_grad(), [t, a, b](const Mat& g) {
    if (a.requires_grad()) t->grad_buffer(a.id) += g;
    if (b.requires_grad()) t->grad_buffer(b.id) += g;
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a.value(), b.value(), "sub");
  Tape* t = a.tape;
  return t->push(a.value() - b.value(), a.requires_grad() || b.requires_grad(), [t, a, b](const Mat& g) {
    if (a.requires_grad()) t->grad_buffer(a.id) += g;
    if (b.requires_grad()) t->grad_buffer(b.id) -= g;
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a.value(), b.value(), "mul");
  Tape* t = a.tape;
  return t->push(a.value().cwiseProduct(b.value()), a.requires_grad() || b.requires_grad(),
                 [t, a, b](const Mat& g) {
                   if (a.requires_grad()) t->grad_buffer(a.id) += g.cwiseProduct(b.value());
                   if (b.requires_grad()) t->grad_buffer(b.id) += g.cwiseProduct(a.value());
                 });
}

Var scale(Var a, double s) {
  Tape* t = a.tape;
  return unary(a, a.value() * s, [t, a, s](const Mat& g) { t->grad_buffer(a.id) += g * s; });
}

Var add_row(Var a, Var row) {
  check_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError("add_row: row vector width mismatch");
  Tape* t = a.tape;
  Mat out = a.value().rowwise() + row.value().row(0);
  return t->push(std::move(out), a.requires_grad() || row.requires_grad(), [t, a, row](const Mat& g) {
    if (a.requires_grad()) t->grad_buffer(a.id) += g;
    if (row.requires_grad()) t->grad_buffer(row.id) += g.colwise().sum();
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
  Tape* t = a.tape;
  const Mat& x = a.value();
  Mat out = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); });
  return unary(a, std::move(out), [t, a](const Mat& g) {
    const Mat& x = a.value();
    Mat d = x.unaryExpr([](double v) {
      const double u = kGeluC * (v + kGeluA * v * v * v);
      const double th = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
    });
    t->grad_buffer(a.id) += g.cwiseProduct(d);
  });
}

Var relu(Var a) {
  Tape* t = a.tape;
  return unary(a, a.value().cwiseMax(0.0), [t, a](const Mat& g) {
    t->grad_buffer(a.id) += (a.value().array() > 0.0).select(g, 0.0);
  });
}

Var clamp(Var a, double lo, double hi) {
  Tape* t = a.tape;
  return unary(a, a.value().cwiseMax(lo).cwiseMin(hi), [t, a, lo, hi](const Mat& g) {
    const auto& x = a.value().array();
    t->grad_buffer(a.id) += ((x >= lo) && (x <= hi)).select(g, 0.0);
  });
}

Var detach(Var a) { return a.tape->constant(a.value()); }

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  const Eigen::Index n = x.rows(), c = x.cols();
  if (gamma.cols() != c || beta.cols() != c) throw DimensionError("layer_norm: affine width mismatch");
  auto xhat = std::make_shared<Mat>(n, c);
  auto inv_std = std::make_shared<Eigen::VectorXd>(n);
  const Mat& xv = x.value();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(i) = is;
    xhat->row(i) = (xv.row(i).array() - mu) * is;
  }
  Mat out = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  Tape* t = x.tape;
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return t->push(std::move(out), rg, [t, x, gamma, beta, xhat, inv_std](const Mat& g) {
    if (gamma.requires_grad()) t->grad_buffer(gamma.id) += g.cwiseProduct(*xhat).colwise().sum();
    if (beta.requires_grad()) t->grad_buffer(beta.id) += g.colwise().sum();
    if (x.requires_grad()) {
      Mat dxhat = g.array().rowwise() * gamma.value().row(0).array();
      Mat& gx = t->grad_buffer(x.id);
      for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = dxhat.row(i).cwiseProduct(xhat->row(i)).mean();
        gx.row(i).array() += (*inv_std)(i) * (dxhat.row(i).array() - m1 - xhat->row(i).array() * m2);
      }
    }
  });
}

Var gather(Var x, const std::vector<int>& index, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != index.size()) {
    throw DimensionError("gather: index size does not match output shape");
  }
  const Mat& xv = x.value();
  const Eigen::Index limit = xv.size();
  Mat out(rows, cols);
  const double* src = xv.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const int j = index[i];
    if (j >= limit) throw DimensionError("gather: index out of range");
    dst[i] = j >= 0 ? src[j] : 0.0;
  }
  Tape* t = x.tape;
  auto idx = std::make_shared<const std::vector<int>>(index);
  return unary(x, std::move(out), [t, x, idx](const Mat& g) {
    double* gx = t->grad_buffer(x.id).data();
    const double* gg = g.data();
    const auto& ix = *idx;
    for (std::size_t i = 0; i < ix.size(); ++i) {
      if (ix[i] >= 0) gx[ix[i]] += gg[i];
    }
  });
}

Var self_attention(Var qkv, int heads) {
  const Eigen::Index n = qkv.rows();
  if (qkv.cols() % 3 != 0) throw DimensionError("self_attention: packed width must be 3*D");
  const Eigen::Index d = qkv.cols() / 3;
  if (heads <= 0 || d % heads != 0) throw DimensionError("self_attention: D not divisible by heads");
  const Eigen::Index dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const Mat& p = qkv.value();
  auto probs = std::make_shared<std::vector<Mat>>(heads);
  Mat out(n, d);
  for (int h = 0; h < heads; ++h) {
    const auto q = p.middleCols(h * dh, dh);
    const auto k = p.middleCols(d + h * dh, dh);
    const auto v = p.middleCols(2 * d + h * dh, dh);
    Mat s = (q * k.transpose()) * inv;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - m).exp();
      s.row(i) /= s.row(i).sum();
    }
    out.middleCols(h * dh, dh).noalias() = s * v;
    (*probs)[h] = std::move(s);
  }
  Tape* t = qkv.tape;
  return unary(qkv, std::move(out), [t, qkv, heads, d, dh, inv, probs](const Mat& g) {
    const Mat& p = qkv.value();
    Mat& gp = t->grad_buffer(qkv.id);
    for (int h = 0; h < heads; ++h) {
      const Mat& pr = (*probs)[h];
      const auto q = p.middleCols(h * dh, dh);
      const auto k = p.middleCols(d + h * dh, dh);
      const auto v = p.middleCols(2 * d + h * dh, dh);
      const auto go = g.middleCols(h * dh, dh);
      gp.middleCols(2 * d + h * dh, dh).noalias() += pr.transpose() * go;
      Mat dprob = go * v.transpose();
      Eigen::VectorXd rs = pr.cwiseProduct(dprob).rowwise().sum();
      Mat ds = pr.cwiseProduct(dprob.colwise() - rs) * inv;
      gp.middleCols(h * dh, dh).noalias() += ds * k;
      gp.middleCols(d + h * dh, dh).noalias() += ds.transpose() * q;
    }
  });
}

Var frame_attention(Var q, const std::vector<Var>& kv, int heads) {
  if (kv.empty()) throw InvalidArgument("frame_attention: need at least one key/value frame");
  const Eigen::Index n = q.rows(), d = q.cols();
  if (heads <= 0 || d % heads != 0) throw DimensionError("frame_attention: D not divisible by heads");
  bool rg = q.requires_grad();
  for (const Var& f : kv) {
    check_same_tape(q, f);
    if (f.rows() != n || f.cols() != 2 * d) throw DimensionError("frame_attention: key/value frame shape mismatch");
    rg = rg || f.requires_grad();
  }
  const int nf = static_cast<int>(kv.size());
  const Eigen::Index dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<Mat>(n, heads * nf);
  Mat out = Mat::Zero(n, d);
  const Mat& qv = q.value();
  std::vector<double> s(nf);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int h = 0; h < heads; ++h) {
      const auto qi = qv.row(i).segment(h * dh, dh);
      double m = -1e300;
      for (int f = 0; f < nf; ++f) {
        s[f] = qi.dot(kv[f].value().row(i).segment(h * dh, dh)) * inv;
        m = std::max(m, s[f]);
      }
      double z = 0.0;
      for (int f = 0; f < nf; ++f) {
        s[f] = std::exp(s[f] - m);
        z += s[f];
      }
      for (int f = 0; f < nf; ++f) {
        const double pf = s[f] / z;
        (*probs)(i, h * nf + f) = pf;
        out.row(i).segment(h * dh, dh) += pf * kv[f].value().row(i).segment(d + h * dh, dh);
      }
    }
  }
  Tape* t = q.tape;
  return t->push(std::move(out), rg, [t, q, kv, heads, nf, d, dh, inv, probs](const Mat& g) {
    const Mat& qv = q.value();
    const Eigen::Index n = qv.rows();
    std::vector<Mat*> gkv(nf, nullptr);
    for (int f = 0; f < nf; ++f) {
      if (kv[f].requires_grad()) gkv[f] = &t->grad_buffer(kv[f].id);
    }
    Mat* gq = q.requires_grad() ? &t->grad_buffer(q.id) : nullptr;
    std::vector<double> dp(nf);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int h = 0; h < heads; ++h) {
        const auto go = g.row(i).segment(h * dh, dh);
        double acc = 0.0;
        for (int f = 0; f < nf; ++f) {
          dp[f] = go.dot(kv[f].value().row(i).segment(d + h * dh, dh));
          acc += (*probs)(i, h * nf + f) * dp[f];
        }
        for (int f = 0; f < nf; ++f) {
          const double pf = (*probs)(i, h * nf + f);
          const double ds = pf * (dp[f] - acc) * inv;
          if (gkv[f] != nullptr) {
            gkv[f]->row(i).segment(d + h * dh, dh) += pf * go;
            gkv[f]->row(i).segment(h * dh, dh) += ds * qv.row(i).segment(h * dh, dh);
          }
          if (gq != nullptr) gq->row(i).segment(h * dh, dh) += ds * kv[f].value().row(i).segment(h * dh, dh);
        }
      }
    }
  });
}

Var sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  Tape* t = a.tape;
  return unary(a, std::move(out), [t, a](const Mat& g) { t->grad_buffer(a.id).array() += g(0, 0); });
}

Var mean_square(Var a) {
  const double n = static_cast<double>(a.value().size());
  Mat out(1, 1);
  out(0, 0) = n > 0 ? a.value().squaredNorm() / n : 0.0;
  Tape* t = a.tape;
  return unary(a, std::move(out), [t, a, n](const Mat& g) {
    if (n > 0) t->grad_buffer(a.id) += a.value() * (2.0 * g(0, 0) / n);
  });
}

Var sum_square(Var a) {
  Mat out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  Tape* t = a.tape;
  return unary(a, std::move(out), [t, a](const Mat& g) { t->grad_buffer(a.id) += a.value() * (2.0 * g(0, 0)); });
}

Var weighted_row_square(Var a, const std::vector<double>& row_weight, double normaliser) {
  if (static_cast<Eigen::Index>(row_weight.size()) != a.rows()) {
    throw DimensionError("weighted_row_square: weight count must equal row count");
  }
  if (!(normaliser > 0.0)) throw InvalidArgument("weighted_row_square: normaliser must be positive");
  const Eigen::Map<const Eigen::VectorXd> w(row_weight.data(), static_cast<Eigen::Index>(row_weight.size()));
  Mat out(1, 1);
  out(0, 0) = w.dot(a.value().rowwise().squaredNorm()) / normaliser;
  Tape* t = a.tape;
  auto wc = std::make_shared<Eigen::VectorXd>(w);
  return unary(a, std::move(out), [t, a, wc, normaliser](const Mat& g) {
    t->grad_buffer(a.id) += (a.value().array().colwise() * wc->array()).matrix() * (2.0 * g(0, 0) / normaliser);
  });
}

}  // namespace harmonizer::ag
