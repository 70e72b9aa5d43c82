#include "declab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <type_traits>

#include "declab/blas.hpp"

namespace declab {

double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
double silu_exact(double x) { return x / (1.0 + std::exp(-x)); }

namespace ops {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

bool wants_grad(const Tensor& t) {
  return t.requires_grad() || (t.attached() && t.tape() == Tape::current());
}

bool recording_for(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current()) return false;
  for (const Tensor* t : inputs)
    if (wants_grad(*t)) return true;
  return false;
}

void attach(Tensor& out) { out.ptr()->tape = Tape::current(); }

template <class T> std::vector<T>& vals(TensorData& d);
template <> std::vector<float>& vals<float>(TensorData& d) { return d.v32; }
template <> std::vector<double>& vals<double>(TensorData& d) { return d.v64; }

template <class T> std::vector<T>& grad_vec(TensorData& d);
template <> std::vector<float>& grad_vec<float>(TensorData& d) { return d.g32; }
template <> std::vector<double>& grad_vec<double>(TensorData& d) { return d.g64; }

template <class T>
T* ensure_grad_buf(const std::shared_ptr<TensorData>& d) {
  auto& g = grad_vec<T>(*d);
  if (g.empty()) g.assign(vals<T>(*d).size(), T(0));
  return g.data();
}

// Output grad pointer, or null when nothing downstream contributed.
template <class T>
const T* out_grad(const std::shared_ptr<TensorData>& d) {
  auto& g = grad_vec<T>(*d);
  return g.empty() ? nullptr : g.data();
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw UsageError(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) + " vs " +
                     dtype_name(b.dtype()) + ")");
}

template <class T>
void matmul_backward(bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
                     const std::shared_ptr<TensorData>& ad, const std::shared_ptr<TensorData>& bd,
                     const std::shared_ptr<TensorData>& od, bool need_a, bool need_b,
                     int64_t a_off, int64_t b_off, int64_t o_off, T* ga, T* gb) {
  const T* go = out_grad<T>(od);
  if (!go) return;
  go += o_off;
  const T* av = vals<T>(*ad).data() + a_off;
  const T* bv = vals<T>(*bd).data() + b_off;
  T al = static_cast<T>(alpha);
  if (need_a) {
    // dA = alpha * dC * op(B)^T
    if (!trans_b)
      blas::gemm(false, true, m, k, n, al, go, bv, T(1), ga + a_off);
    else
      blas::gemm(false, false, m, k, n, al, go, bv, T(1), ga + a_off);
  }
  if (need_b) {
    if (!trans_b)  // dB[k,n] = alpha * A^T * dC
      blas::gemm(true, false, k, n, m, al, av, go, T(1), gb + b_off);
    else  // dB[n,k] = alpha * dC^T * A
      blas::gemm(true, false, n, k, m, al, go, av, T(1), gb + b_off);
  }
}

template <class T>
void matmul_one(bool trans_b, int64_t m, int64_t n, int64_t k,
                double alpha, const T* a, const T* b, T* c) {
  blas::gemm(false, trans_b, m, n, k, static_cast<T>(alpha), a, b, T(0), c);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b) {
  require_same_dtype(a, b, "matmul");
  if (a.rank() != 2 || b.rank() != 2) throw UsageError("matmul expects rank-2 tensors");
  int64_t m = a.shape()[0], k = a.shape()[1];
  int64_t bk = trans_b ? b.shape()[1] : b.shape()[0];
  int64_t n = trans_b ? b.shape()[0] : b.shape()[1];
  if (bk != k)
    throw UsageError("matmul inner-dim mismatch " + format_shape(a.shape()) + " x " +
                     format_shape(b.shape()) + (trans_b ? " (b transposed)" : ""));
  Tensor out = make_tensor({m, n}, a.dtype());
  bool rec = recording_for({&a, &b});
  bool need_a = wants_grad(a), need_b = wants_grad(b);
  if (a.dtype() == Dtype::f32)
    matmul_one<float>(trans_b, m, n, k, 1.0, a.data<float>(), b.data<float>(), out.data<float>());
  else
    matmul_one<double>(trans_b, m, n, k, 1.0, a.data<double>(), b.data<double>(), out.data<double>());
  check_finite(out, "matmul");
  if (rec) {
    attach(out);
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    Tape::current()->record([=]() {
      if (od->dtype == Dtype::f32) {
        float* ga = need_a ? ensure_grad_buf<float>(ad) : nullptr;
        float* gb = need_b ? ensure_grad_buf<float>(bd) : nullptr;
        matmul_backward<float>(trans_b, m, n, k, 1.0, ad, bd, od, need_a, need_b, 0, 0, 0, ga, gb);
      } else {
        double* ga = need_a ? ensure_grad_buf<double>(ad) : nullptr;
        double* gb = need_b ? ensure_grad_buf<double>(bd) : nullptr;
        matmul_backward<double>(trans_b, m, n, k, 1.0, ad, bd, od, need_a, need_b, 0, 0, 0, ga, gb);
      }
    });
  }
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b, double alpha) {
  require_same_dtype(a, b, "bmm");
  if (a.rank() != 3 || b.rank() != 3) throw UsageError("bmm expects rank-3 tensors");
  int64_t h = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  if (b.shape()[0] != h) throw UsageError("bmm batch-dim mismatch");
  int64_t bk = trans_b ? b.shape()[2] : b.shape()[1];
  int64_t n = trans_b ? b.shape()[1] : b.shape()[2];
  if (bk != k)
    throw UsageError("bmm inner-dim mismatch " + format_shape(a.shape()) + " x " +
                     format_shape(b.shape()) + (trans_b ? " (b transposed)" : ""));
  Tensor out = make_tensor({h, m, n}, a.dtype());
  bool rec = recording_for({&a, &b});
  bool need_a = wants_grad(a), need_b = wants_grad(b);

  auto fwd = [&](auto* tag) {
    using T = std::remove_pointer_t<decltype(tag)>;
    const T* av = a.data<T>();
    const T* bv = b.data<T>();
    T* ov = out.data<T>();
    int64_t bstride = b.shape()[1] * b.shape()[2];
    for (int64_t s = 0; s < h; ++s)
      blas::gemm(false, trans_b, m, n, k, static_cast<T>(alpha), av + s * m * k,
                 bv + s * bstride, T(0), ov + s * m * n);
  };
  if (a.dtype() == Dtype::f32) fwd(static_cast<float*>(nullptr));
  else fwd(static_cast<double*>(nullptr));
  check_finite(out, "bmm");

  if (rec) {
    attach(out);
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    int64_t bstride = b.shape()[1] * b.shape()[2];
    Tape::current()->record([=]() {
      auto run = [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        if (!out_grad<T>(od)) return;
        T* ga = need_a ? ensure_grad_buf<T>(ad) : nullptr;
        T* gb = need_b ? ensure_grad_buf<T>(bd) : nullptr;
        for (int64_t s = 0; s < h; ++s)
          matmul_backward<T>(trans_b, m, n, k, alpha, ad, bd, od, need_a, need_b,
                             s * m * k, s * bstride, s * m * n, ga, gb);
      };
      if (od->dtype == Dtype::f32) run(static_cast<float*>(nullptr));
      else run(static_cast<double*>(nullptr));
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "add");
  if (a.shape() != b.shape())
    throw UsageError("add shape mismatch " + format_shape(a.shape()) + " vs " + format_shape(b.shape()));
  Tensor out = make_tensor(a.shape(), a.dtype());
  int64_t n = a.numel();
  bool rec = recording_for({&a, &b});
  bool need_a = wants_grad(a), need_b = wants_grad(b);
  if (a.dtype() == Dtype::f32) {
    const float* av = a.data<float>();
    const float* bv = b.data<float>();
    float* ov = out.data<float>();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
  } else {
    const double* av = a.data<double>();
    const double* bv = b.data<double>();
    double* ov = out.data<double>();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
  }
  check_finite(out, "add");
  if (rec) {
    attach(out);
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    Tape::current()->record([=]() {
      auto run = [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        const T* go = out_grad<T>(od);
        if (!go) return;
        if (need_a) accumulate_grad(ad, go);
        if (need_b) accumulate_grad(bd, go);
      };
      if (od->dtype == Dtype::f32) run(static_cast<float*>(nullptr));
      else run(static_cast<double*>(nullptr));
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "mul");
  if (a.shape() != b.shape())
    throw UsageError("mul shape mismatch " + format_shape(a.shape()) + " vs " + format_shape(b.shape()));
  Tensor out = make_tensor(a.shape(), a.dtype());
  int64_t n = a.numel();
  bool rec = recording_for({&a, &b});
  bool need_a = wants_grad(a), need_b = wants_grad(b);
  auto fwd = [&](auto* tag) {
    using T = std::remove_pointer_t<decltype(tag)>;
    const T* av = a.data<T>();
    const T* bv = b.data<T>();
    T* ov = out.data<T>();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
  };
  if (a.dtype() == Dtype::f32) fwd(static_cast<float*>(nullptr));
  else fwd(static_cast<double*>(nullptr));
  check_finite(out, "mul");
  if (rec) {
    attach(out);
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    Tape::current()->record([=]() {
      auto run = [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        const T* go = out_grad<T>(od);
        if (!go) return;
        const T* av = vals<T>(*ad).data();
        const T* bv = vals<T>(*bd).data();
        if (need_a) {
          T* ga = ensure_grad_buf<T>(ad);
          for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * bv[i];
        }
        if (need_b) {
          T* gb = ensure_grad_buf<T>(bd);
          for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * av[i];
        }
      };
      if (od->dtype == Dtype::f32) run(static_cast<float*>(nullptr));
      else run(static_cast<double*>(nullptr));
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = make_tensor(a.shape(), a.dtype());
  int64_t n = a.numel();
  bool rec = recording_for({&a});
  auto fwd = [&](auto* tag) {
    using T = std::remove_pointer_t<decltype(tag)>;
    const T* av = a.data<T>();
    T* ov = out.data<T>();
    T cc = static_cast<T>(c);
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * cc;
  };
  if (a.dtype() == Dtype::f32) fwd(static_cast<float*>(nullptr));
  else fwd(static_cast<double*>(nullptr));
  check_finite(out, "scale");
  if (rec) {
    attach(out);
    auto ad = a.ptr(), od = out.ptr();
    Tape::current()->record([=]() {
      auto run = [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        const T* go = out_grad<T>(od);
        if (!go) return;
        T* ga = ensure_grad_buf<T>(ad);
        T cc = static_cast<T>(c);
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * cc;
      };
      if (od->dtype == Dtype::f32) run(static_cast<float*>(nullptr));
      else run(static_cast<double*>(nullptr));
    });
  }
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_same_dtype(x, bias, "add_row_bias");
  if (x.rank() < 1 || bias.rank() != 1) throw UsageError("add_row_bias expects x[r,c], bias[c]");
  int64_t c = x.shape().back();
  if (bias.shape()[0] != c) throw UsageError("add_row_bias width mismatch");
  int64_t r = x.numel() / c;
  Tensor out = make_tensor(x.shape(), x.dtype());
  bool rec = recording_for({&x, &bias});
  bool need_x = wants_grad(x), need_b = wants_grad(bias);
  auto fwd = [&](auto* tag) {
    using T = std::remove_pointer_t<decltype(tag)>;
    const T* xv = x.data<T>();
    const T* bv = bias.data<T>();
    T* ov = out.data<T>();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) ov[i * c + j] = xv[i * c + j] + bv[j];
  };
  if (x.dtype() == Dtype::f32) fwd(static_cast<float*>(nullptr));
  else fwd(static_cast<double*>(nullptr));
  check_finite(out, "add_row_bias");
  if (rec) {
    attach(out);
    auto xd = x.ptr(), bd = bias.ptr(), od = out.ptr();
    Tape::current()->record([=]() {
      auto run = [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        const T* go = out_grad<T>(od);
        if (!go) return;
        if (need_x) accumulate_grad(xd, go);
        if (need_b) {
          T* gb = ensure_grad_buf<T>(bd);
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) gb[j] += go[i * c + j];
        }
      };
      if (od->dtype == Dtype::f32) run(static_cast<float*>(nullptr));
      else run(static_cast<double*>(nullptr));
    });
  }
  return out;
}

namespace {

template <class T>
void activation_fwd(Activation kind, const T* x, T* out, T* deriv, int64_t n) {
  if (kind == Activation::gelu) {
    for (int64_t i = 0; i < n; ++i) {
      T v = x[i];
      T cdf;
      if constexpr (std::is_same_v<T, float>)
        cdf = 0.5f * (1.0f + erff(v * (float)M_SQRT1_2));
      else
        cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      out[i] = v * cdf;
      if (deriv) {
        T pdf;
        if constexpr (std::is_same_v<T, float>)
          pdf = (float)kInvSqrt2Pi * expf(-0.5f * v * v);
        else
          pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        deriv[i] = cdf + v * pdf;
      }
    }
  } else {
    for (int64_t i = 0; i < n; ++i) {
      T v = x[i];
      T sig;
      if constexpr (std::is_same_v<T, float>)
        sig = 1.0f / (1.0f + expf(-v));
      else
        sig = 1.0 / (1.0 + std::exp(-v));
      out[i] = v * sig;
      if (deriv) deriv[i] = sig * (T(1) + v * (T(1) - sig));
    }
  }
}

}  // namespace

Tensor activation(Activation kind, const Tensor& x) {
  Tensor out = make_tensor(x.shape(), x.dtype());
  int64_t n = x.numel();
  bool rec = recording_for({&x});
  if (x.dtype() == Dtype::f32) {
    std::vector<float> deriv(rec ? n : 0);
    activation_fwd<float>(kind, x.data<float>(), out.data<float>(), rec ? deriv.data() : nullptr, n);
    check_finite(out, "activation");
    if (rec) {
      attach(out);
      auto xd = x.ptr(), od = out.ptr();
      Tape::current()->record([xd, od, n, dv = std::move(deriv)]() {
        const float* go = out_grad<float>(od);
        if (!go) return;
        float* gx = ensure_grad_buf<float>(xd);
        for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * dv[i];
      });
    }
  } else {
    std::vector<double> deriv(rec ? n : 0);
    activation_fwd<double>(kind, x.data<double>(), out.data<double>(), rec ? deriv.data() : nullptr, n);
    check_finite(out, "activation");
    if (rec) {
      attach(out);
      auto xd = x.ptr(), od = out.ptr();
      Tape::current()->record([xd, od, n, dv = std::move(deriv)]() {
        const double* go = out_grad<double>(od);
        if (!go) return;
        double* gx = ensure_grad_buf<double>(xd);
        for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * dv[i];
      });
    }
  }
  return out;
}

Tensor normalize(NormKind kind, const Tensor& x, const Tensor& gain, const Tensor* bias,
                 double eps) {
  require_same_dtype(x, gain, "normalize");
  if (bias) require_same_dtype(x, *bias, "normalize");
  if (x.rank() < 1) throw UsageError("normalize expects rank >= 1");
  int64_t c = x.shape().back();
  if (gain.numel() != c || (bias && bias->numel() != c))
    throw UsageError("normalize gain/bias width mismatch");
  int64_t r = x.numel() / c;
  Tensor out = make_tensor(x.shape(), x.dtype());
  bool rec = recording_for(bias ? std::initializer_list<const Tensor*>{&x, &gain, bias}
                                : std::initializer_list<const Tensor*>{&x, &gain});
  bool need_x = wants_grad(x), need_g = wants_grad(gain);
  bool need_b = bias && wants_grad(*bias);

  auto run = [&](auto* tag) {
    using T = std::remove_pointer_t<decltype(tag)>;
    const T* xv = x.data<T>();
    const T* gv = gain.data<T>();
    const T* bv = bias ? bias->data<T>() : nullptr;
    T* ov = out.data<T>();
    std::vector<T> xhat(rec ? static_cast<size_t>(r * c) : 0);
    std::vector<T> inv_s(rec ? static_cast<size_t>(r) : 0);
    for (int64_t i = 0; i < r; ++i) {
      const T* row = xv + i * c;
      T* orow = ov + i * c;
      double mu = 0.0, ms = 0.0;
      if (kind == NormKind::layernorm) {
        for (int64_t j = 0; j < c; ++j) mu += row[j];
        mu /= c;
        for (int64_t j = 0; j < c; ++j) {
          double d = row[j] - mu;
          ms += d * d;
        }
        ms /= c;
      } else {
        for (int64_t j = 0; j < c; ++j) ms += static_cast<double>(row[j]) * row[j];
        ms /= c;
        mu = 0.0;
      }
      double is = 1.0 / std::sqrt(ms + eps);
      for (int64_t j = 0; j < c; ++j) {
        T xh = static_cast<T>((row[j] - mu) * is);
        if (rec) xhat[static_cast<size_t>(i * c + j)] = xh;
        orow[j] = xh * gv[j] + (bv ? bv[j] : T(0));
      }
      if (rec) inv_s[static_cast<size_t>(i)] = static_cast<T>(is);
    }
    check_finite(out, "normalize");
    if (rec) {
      attach(out);
      auto xd = x.ptr(), gd = gain.ptr(), od = out.ptr();
      auto bd = bias ? bias->ptr() : nullptr;
      Tape::current()->record([=, xh = std::move(xhat), is = std::move(inv_s)]() {
        const T* go = out_grad<T>(od);
        if (!go) return;
        const T* gv2 = vals<T>(*gd).data();
        T* gx = need_x ? ensure_grad_buf<T>(xd) : nullptr;
        T* gg = need_g ? ensure_grad_buf<T>(gd) : nullptr;
        T* gb = need_b ? ensure_grad_buf<T>(bd) : nullptr;
        for (int64_t i = 0; i < r; ++i) {
          const T* grow = go + i * c;
          const T* xrow = xh.data() + i * c;
          if (gg || gb) {
            for (int64_t j = 0; j < c; ++j) {
              if (gg) gg[j] += grow[j] * xrow[j];
              if (gb) gb[j] += grow[j];
            }
          }
          if (gx) {
            double m1 = 0.0, m2 = 0.0;
            for (int64_t j = 0; j < c; ++j) {
              double dxh = static_cast<double>(grow[j]) * gv2[j];
              m1 += dxh;
              m2 += dxh * xrow[j];
            }
            m1 /= c;
            m2 /= c;
            double s = is[static_cast<size_t>(i)];
            T* gxrow = gx + i * c;
            if (kind == NormKind::layernorm) {
              for (int64_t j = 0; j < c; ++j) {
                double dxh = static_cast<double>(grow[j]) * gv2[j];
                gxrow[j] += static_cast<T>((dxh - m1 - xrow[j] * m2) * s);
              }
            } else {
              for (int64_t j = 0; j < c; ++j) {
                double dxh = static_cast<double>(grow[j]) * gv2[j];
                gxrow[j] += static_cast<T>((dxh - xrow[j] * m2) * s);
              }
            }
          }
        }
      });
    }
  };
  if (x.dtype() == Dtype::f32) run(static_cast<float*>(nullptr));
  else run(static_cast<double*>(nullptr));
  return out;
}

Tensor causal_softmax(const Tensor& z) {
  if (z.rank() != 3 || z.shape()[1] != z.shape()[2])
    throw UsageError("causal_softmax expects [h,n,n], got " + format_shape(z.shape()));
  int64_t h = z.shape()[0], n = z.shape()[1];
  Tensor out = make_tensor(z.shape(), z.dtype());
  bool rec = recording_for({&z});

  auto run = [&](auto* tag) {
    using T = std::remove_pointer_t<decltype(tag)>;
    const T* zv = z.data<T>();
    T* ov = out.data<T>();
    for (int64_t s = 0; s < h; ++s) {
      for (int64_t i = 0; i < n; ++i) {
        const T* zrow = zv + (s * n + i) * n;
        T* orow = ov + (s * n + i) * n;
        T mx = zrow[0];
        for (int64_t j = 1; j <= i; ++j) mx = std::max(mx, zrow[j]);
        double sum = 0.0;
        for (int64_t j = 0; j <= i; ++j) {
          T e;
          if constexpr (std::is_same_v<T, float>)
            e = expf(zrow[j] - mx);
          else
            e = std::exp(zrow[j] - mx);
          orow[j] = e;
          sum += e;
        }
        T inv = static_cast<T>(1.0 / sum);
        for (int64_t j = 0; j <= i; ++j) orow[j] *= inv;
        for (int64_t j = i + 1; j < n; ++j) orow[j] = T(0);
      }
    }
    check_finite(out, "causal_softmax");
    if (rec) {
      attach(out);
      auto zd = z.ptr(), od = out.ptr();
      Tape::current()->record([=]() {
        const T* go = out_grad<T>(od);
        if (!go) return;
        const T* pv = vals<T>(*od).data();
        T* gz = ensure_grad_buf<T>(zd);
        for (int64_t s = 0; s < h; ++s) {
          for (int64_t i = 0; i < n; ++i) {
            int64_t base = (s * n + i) * n;
            double dot = 0.0;
            for (int64_t j = 0; j <= i; ++j)
              dot += static_cast<double>(go[base + j]) * pv[base + j];
            for (int64_t j = 0; j <= i; ++j)
              gz[base + j] += static_cast<T>(pv[base + j] * (go[base + j] - dot));
          }
        }
      });
    }
  };
  if (z.dtype() == Dtype::f32) run(static_cast<float*>(nullptr));
  else run(static_cast<double*>(nullptr));
  return out;
}

Tensor rope_rotate(const Tensor& x, double base) {
  if (x.rank() != 3) throw UsageError("rope_rotate expects [h,n,dk]");
  int64_t h = x.shape()[0], n = x.shape()[1], dk = x.shape()[2];
  if (dk % 2 != 0) throw UsageError("rope_rotate requires even head dim, got " + std::to_string(dk));
  if (base <= 0.0) throw UsageError("rope_rotate requires positive base");
  int64_t np = dk / 2;
  // cos/sin table per (position, pair); frequency base^(-2j/dk)
  std::vector<double> cs(static_cast<size_t>(n * np * 2));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < np; ++j) {
      double freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dk));
      double ang = static_cast<double>(i) * freq;
      cs[static_cast<size_t>((i * np + j) * 2)] = std::cos(ang);
      cs[static_cast<size_t>((i * np + j) * 2 + 1)] = std::sin(ang);
    }
  }
  Tensor out = make_tensor(x.shape(), x.dtype());
  bool rec = recording_for({&x});
  auto run = [&](auto* tag) {
    using T = std::remove_pointer_t<decltype(tag)>;
    const T* xv = x.data<T>();
    T* ov = out.data<T>();
    for (int64_t s = 0; s < h; ++s) {
      for (int64_t i = 0; i < n; ++i) {
        const T* xr = xv + (s * n + i) * dk;
        T* orow = ov + (s * n + i) * dk;
        const double* row_cs = cs.data() + i * np * 2;
        for (int64_t j = 0; j < np; ++j) {
          double cth = row_cs[j * 2], sth = row_cs[j * 2 + 1];
          double x0 = xr[2 * j], x1 = xr[2 * j + 1];
          orow[2 * j] = static_cast<T>(x0 * cth - x1 * sth);
          orow[2 * j + 1] = static_cast<T>(x0 * sth + x1 * cth);
        }
      }
    }
    check_finite(out, "rope_rotate");
    if (rec) {
      attach(out);
      auto xd = x.ptr(), od = out.ptr();
      Tape::current()->record([=, tab = std::move(cs)]() {
        const T* go = out_grad<T>(od);
        if (!go) return;
        T* gx = ensure_grad_buf<T>(xd);
        for (int64_t s = 0; s < h; ++s) {
          for (int64_t i = 0; i < n; ++i) {
            const T* gr = go + (s * n + i) * dk;
            T* gxr = gx + (s * n + i) * dk;
            const double* row_cs = tab.data() + i * np * 2;
            for (int64_t j = 0; j < np; ++j) {
              double cth = row_cs[j * 2], sth = row_cs[j * 2 + 1];
              double g0 = gr[2 * j], g1 = gr[2 * j + 1];
              gxr[2 * j] += static_cast<T>(g0 * cth + g1 * sth);
              gxr[2 * j + 1] += static_cast<T>(-g0 * sth + g1 * cth);
            }
          }
        }
      });
    }
  };
  if (x.dtype() == Dtype::f32) run(static_cast<float*>(nullptr));
  else run(static_cast<double*>(nullptr));
  return out;
}

Tensor cross_entropy_mean(const Tensor& logits, std::span<const int32_t> targets) {
  if (logits.rank() != 2) throw UsageError("cross_entropy_mean expects [r,v] logits");
  int64_t r = logits.shape()[0], v = logits.shape()[1];
  if (static_cast<int64_t>(targets.size()) != r)
    throw UsageError("cross_entropy_mean target count mismatch");
  for (int64_t i = 0; i < r; ++i)
    if (targets[i] < 0 || targets[i] >= v)
      throw UsageError("cross_entropy_mean target out of range at row " + std::to_string(i));
  Tensor out = make_tensor({}, logits.dtype());
  bool rec = recording_for({&logits});

  auto run = [&](auto* tag) {
    using T = std::remove_pointer_t<decltype(tag)>;
    const T* lv = logits.data<T>();
    std::vector<T> probs(rec ? static_cast<size_t>(r * v) : 0);
    double total = 0.0;
    for (int64_t i = 0; i < r; ++i) {
      const T* row = lv + i * v;
      T mx = row[0];
      for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int64_t j = 0; j < v; ++j) {
        double e;
        if constexpr (std::is_same_v<T, float>)
          e = expf(row[j] - mx);
        else
          e = std::exp(row[j] - mx);
        if (rec) probs[static_cast<size_t>(i * v + j)] = static_cast<T>(e);
        sum += e;
      }
      total += std::log(sum) + mx - row[targets[i]];
      if (rec) {
        T inv = static_cast<T>(1.0 / sum);
        T* prow = probs.data() + i * v;
        for (int64_t j = 0; j < v; ++j) prow[j] *= inv;
      }
    }
    out.set(0, total / static_cast<double>(r));
    check_finite(out, "cross_entropy_mean");
    if (rec) {
      attach(out);
      auto ld = logits.ptr(), od = out.ptr();
      std::vector<int32_t> tgt(targets.begin(), targets.end());
      Tape::current()->record([=, p = std::move(probs), t = std::move(tgt)]() {
        const T* go = out_grad<T>(od);
        if (!go) return;
        T g = go[0];
        T* gl = ensure_grad_buf<T>(ld);
        T invr = static_cast<T>(1.0 / static_cast<double>(r));
        for (int64_t i = 0; i < r; ++i) {
          const T* prow = p.data() + i * v;
          T* grow = gl + i * v;
          for (int64_t j = 0; j < v; ++j) grow[j] += g * invr * prow[j];
          grow[t[static_cast<size_t>(i)]] -= g * invr;
        }
      });
    }
  };
  if (logits.dtype() == Dtype::f32) run(static_cast<float*>(nullptr));
  else run(static_cast<double*>(nullptr));
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int32_t> ids) {
  if (table.rank() != 2) throw UsageError("embedding expects [v,d] table");
  int64_t v = table.shape()[0], d = table.shape()[1];
  int64_t r = static_cast<int64_t>(ids.size());
  for (int64_t i = 0; i < r; ++i)
    if (ids[i] < 0 || ids[i] >= v)
      throw UsageError("embedding id out of range at position " + std::to_string(i));
  Tensor out = make_tensor({r, d}, table.dtype());
  bool rec = recording_for({&table});
  auto run = [&](auto* tag) {
    using T = std::remove_pointer_t<decltype(tag)>;
    const T* tv = table.data<T>();
    T* ov = out.data<T>();
    for (int64_t i = 0; i < r; ++i)
      std::memcpy(ov + i * d, tv + static_cast<int64_t>(ids[i]) * d, sizeof(T) * static_cast<size_t>(d));
  };
  if (table.dtype() == Dtype::f32) run(static_cast<float*>(nullptr));
  else run(static_cast<double*>(nullptr));
  check_finite(out, "embedding");
  if (rec) {
    attach(out);
    auto td = table.ptr(), od = out.ptr();
    std::vector<int32_t> idv(ids.begin(), ids.end());
    Tape::current()->record([=, id = std::move(idv)]() {
      auto run_b = [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        const T* go = out_grad<T>(od);
        if (!go) return;
        T* gt = ensure_grad_buf<T>(td);
        for (int64_t i = 0; i < r; ++i) {
          T* dst = gt + static_cast<int64_t>(id[static_cast<size_t>(i)]) * d;
          const T* src = go + i * d;
          for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      };
      if (od->dtype == Dtype::f32) run_b(static_cast<float*>(nullptr));
      else run_b(static_cast<double*>(nullptr));
    });
  }
  return out;
}

namespace {

// split: out[(b*H + h), t, j] = x[b*n + t, h*dk + j]
template <class T>
void head_permute(const T* src, T* dst, int64_t b, int64_t heads, int64_t n, int64_t dk,
                  bool splitting) {
  int64_t d = heads * dk;
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t hi = 0; hi < heads; ++hi)
      for (int64_t t = 0; t < n; ++t) {
        int64_t flat = ((bi * heads + hi) * n + t) * dk;
        int64_t xflat = (bi * n + t) * d + hi * dk;
        if (splitting)
          std::memcpy(dst + flat, src + xflat, sizeof(T) * static_cast<size_t>(dk));
        else
          std::memcpy(dst + xflat, src + flat, sizeof(T) * static_cast<size_t>(dk));
      }
}

}  // namespace

Tensor split_heads(const Tensor& x, int64_t batch, int64_t heads) {
  if (x.rank() != 2) throw UsageError("split_heads expects [b*n, d]");
  int64_t rows = x.shape()[0], d = x.shape()[1];
  if (batch <= 0 || rows % batch != 0) throw UsageError("split_heads batch does not divide rows");
  if (heads <= 0 || d % heads != 0) throw UsageError("split_heads heads do not divide width");
  int64_t n = rows / batch, dk = d / heads;
  Tensor out = make_tensor({batch * heads, n, dk}, x.dtype());
  bool rec = recording_for({&x});
  if (x.dtype() == Dtype::f32)
    head_permute<float>(x.data<float>(), out.data<float>(), batch, heads, n, dk, true);
  else
    head_permute<double>(x.data<double>(), out.data<double>(), batch, heads, n, dk, true);
  if (rec) {
    attach(out);
    auto xd = x.ptr(), od = out.ptr();
    Tape::current()->record([=]() {
      auto run = [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        const T* go = out_grad<T>(od);
        if (!go) return;
        std::vector<T> tmp(static_cast<size_t>(rows * d));
        head_permute<T>(go, tmp.data(), batch, heads, n, dk, false);
        accumulate_grad(xd, tmp.data());
      };
      if (od->dtype == Dtype::f32) run(static_cast<float*>(nullptr));
      else run(static_cast<double*>(nullptr));
    });
  }
  return out;
}

Tensor merge_heads(const Tensor& x, int64_t batch) {
  if (x.rank() != 3) throw UsageError("merge_heads expects [b*h, n, dk]");
  int64_t bh = x.shape()[0], n = x.shape()[1], dk = x.shape()[2];
  if (batch <= 0 || bh % batch != 0) throw UsageError("merge_heads batch does not divide slices");
  int64_t heads = bh / batch;
  Tensor out = make_tensor({batch * n, heads * dk}, x.dtype());
  bool rec = recording_for({&x});
  if (x.dtype() == Dtype::f32)
    head_permute<float>(x.data<float>(), out.data<float>(), batch, heads, n, dk, false);
  else
    head_permute<double>(x.data<double>(), out.data<double>(), batch, heads, n, dk, false);
  if (rec) {
    attach(out);
    auto xd = x.ptr(), od = out.ptr();
    Tape::current()->record([=]() {
      auto run = [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        const T* go = out_grad<T>(od);
        if (!go) return;
        std::vector<T> tmp(static_cast<size_t>(bh * n * dk));
        head_permute<T>(go, tmp.data(), batch, heads, n, dk, true);
        accumulate_grad(xd, tmp.data());
      };
      if (od->dtype == Dtype::f32) run(static_cast<float*>(nullptr));
      else run(static_cast<double*>(nullptr));
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out = make_tensor({}, x.dtype());
  int64_t n = x.numel();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) total += x.at(i);
  out.set(0, total);
  check_finite(out, "sum_all");
  if (recording_for({&x})) {
    attach(out);
    auto xd = x.ptr(), od = out.ptr();
    Tape::current()->record([=]() {
      auto run = [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        const T* go = out_grad<T>(od);
        if (!go) return;
        T g = go[0];
        T* gx = ensure_grad_buf<T>(xd);
        for (int64_t i = 0; i < n; ++i) gx[i] += g;
      };
      if (od->dtype == Dtype::f32) run(static_cast<float*>(nullptr));
      else run(static_cast<double*>(nullptr));
    });
  }
  return out;
}

Tensor causal_entropy_mean(const Tensor& probs) {
  if (probs.rank() != 3 || probs.shape()[1] != probs.shape()[2])
    throw UsageError("causal_entropy_mean expects [h,n,n]");
  int64_t h = probs.shape()[0], n = probs.shape()[1];
  if (n < 2) throw UsageError("causal_entropy_mean needs n >= 2 (row 0 is excluded)");
  Tensor out = make_tensor({}, probs.dtype());
  int64_t count = h * (n - 1);
  auto run = [&](auto* tag) {
    using T = std::remove_pointer_t<decltype(tag)>;
    const T* pv = probs.data<T>();
    double total = 0.0;
    for (int64_t s = 0; s < h; ++s) {
      for (int64_t i = 1; i < n; ++i) {
        const T* row = pv + (s * n + i) * n;
        double ent = 0.0;
        for (int64_t j = 0; j <= i; ++j) {
          double p = row[j];
          if (p > 0.0) ent -= p * std::log(p);
        }
        total += ent / std::log(static_cast<double>(i + 1));
      }
    }
    out.set(0, total / static_cast<double>(count));
  };
  if (probs.dtype() == Dtype::f32) run(static_cast<float*>(nullptr));
  else run(static_cast<double*>(nullptr));
  check_finite(out, "causal_entropy_mean");
  if (recording_for({&probs})) {
    attach(out);
    auto pd = probs.ptr(), od = out.ptr();
    Tape::current()->record([=]() {
      auto run_b = [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        const T* go = out_grad<T>(od);
        if (!go) return;
        double g = go[0];
        const T* pv = vals<T>(*pd).data();
        T* gp = ensure_grad_buf<T>(pd);
        for (int64_t s = 0; s < h; ++s) {
          for (int64_t i = 1; i < n; ++i) {
            int64_t base = (s * n + i) * n;
            double scale_row = g / (std::log(static_cast<double>(i + 1)) * count);
            for (int64_t j = 0; j <= i; ++j) {
              double p = std::max(static_cast<double>(pv[base + j]), 1e-30);
              gp[base + j] += static_cast<T>(-(std::log(p) + 1.0) * scale_row);
            }
          }
        }
      };
      if (od->dtype == Dtype::f32) run_b(static_cast<float*>(nullptr));
      else run_b(static_cast<double*>(nullptr));
    });
  }
  return out;
}

Tensor entropy_floor_penalty(const Tensor& h, double h0, double lambda) {
  if (h.numel() != 1) throw UsageError("entropy_floor_penalty expects a scalar");
  Tensor out = make_tensor({}, h.dtype());
  double hv = h.at(0);
  out.set(0, hv < h0 ? lambda * (h0 - hv) : 0.0);
  check_finite(out, "entropy_floor_penalty");
  if (recording_for({&h})) {
    attach(out);
    auto hd = h.ptr(), od = out.ptr();
    bool active = hv < h0;
    Tape::current()->record([=]() {
      auto run = [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        const T* go = out_grad<T>(od);
        if (!go) return;
        T* gh = ensure_grad_buf<T>(hd);
        if (active) gh[0] += static_cast<T>(-lambda) * go[0];
      };
      if (od->dtype == Dtype::f32) run(static_cast<float*>(nullptr));
      else run(static_cast<double*>(nullptr));
    });
  }
  return out;
}

}  // namespace ops

void backward(Tensor& loss) {
  if (!loss.attached())
    throw UsageError("backward on a tensor not attached to a tape");
  loss.tape()->backward(loss);
}

}  // namespace declab
