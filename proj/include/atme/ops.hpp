#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <vector>

#include "atme/autograd.hpp"

namespace atme {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const EMat<T>>;

enum class PadMode { kZero, kReplicate };

namespace scalar_fn {
template <typename T>
T sigmoid(T z) {
    if (z >= T(0)) {
        const T e = std::exp(-z);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(z);
    return e / (T(1) + e);
}

// softplus(z) = log(1 + e^z), overflow-safe.
template <typename T>
T softplus(T z) {
    const T a = std::max(z, T(0));
    return a + std::log1p(std::exp(-std::abs(z)));
}
}  // namespace scalar_fn

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check(a.val().same_shape(b.val()), "add: shape mismatch");
    Tensor<T> out = a.val();
    const T* pb = b.val().data();
    T* po = out.data();
    for (int64_t i = 0; i < out.size(); ++i) po[i] += pb[i];
    auto an = a.node(), bn = b.node();
    return make_op<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
        if (an->requires_grad) an->add_grad(self.grad);
        if (bn->requires_grad) bn->add_grad(self.grad);
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check(a.val().same_shape(b.val()), "mul: shape mismatch");
    Tensor<T> out(a.val().shape());
    const T* pa = a.val().data();
    const T* pb = b.val().data();
    T* po = out.data();
    for (int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
    auto an = a.node(), bn = b.node();
    return make_op<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
        const T* g = self.grad.data();
        if (an->requires_grad) {
            Tensor<T> da(an->value.shape());
            const T* vb = bn->value.data();
            for (int64_t i = 0; i < da.size(); ++i) da[i] = g[i] * vb[i];
            an->add_grad(da);
        }
        if (bn->requires_grad) {
            Tensor<T> db(bn->value.shape());
            const T* va = an->value.data();
            for (int64_t i = 0; i < db.size(); ++i) db[i] = g[i] * va[i];
            bn->add_grad(db);
        }
    });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T c) {
    Tensor<T> out = a.val();
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= c;
    auto an = a.node();
    return make_op<T>(std::move(out), {a}, [an, c](Node<T>& self) {
        Tensor<T> da(an->value.shape());
        const T* g = self.grad.data();
        for (int64_t i = 0; i < da.size(); ++i) da[i] = g[i] * c;
        an->add_grad(da);
    });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
    Tensor<T> out(x.val().shape());
    const T* px = x.val().data();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = px[i] * scalar_fn::sigmoid(px[i]);
    auto xn = x.node();
    return make_op<T>(std::move(out), {x}, [xn](Node<T>& self) {
        Tensor<T> dx(xn->value.shape());
        const T* g = self.grad.data();
        const T* px = xn->value.data();
        for (int64_t i = 0; i < dx.size(); ++i) {
            const T s = scalar_fn::sigmoid(px[i]);
            dx[i] = g[i] * s * (T(1) + px[i] * (T(1) - s));
        }
        xn->add_grad(dx);
    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    Tensor<T> out(x.val().shape());
    const T* px = x.val().data();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = px[i] > T(0) ? px[i] : slope * px[i];
    auto xn = x.node();
    return make_op<T>(std::move(out), {x}, [xn, slope](Node<T>& self) {
        Tensor<T> dx(xn->value.shape());
        const T* g = self.grad.data();
        const T* px = xn->value.data();
        for (int64_t i = 0; i < dx.size(); ++i) dx[i] = px[i] > T(0) ? g[i] : slope * g[i];
        xn->add_grad(dx);
    });
}

template <typename T>
Var<T> tanh_act(const Var<T>& x) {
    Tensor<T> out(x.val().shape());
    const T* px = x.val().data();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(px[i]);
    auto xn = x.node();
    auto yv = std::make_shared<Tensor<T>>(out);
    return make_op<T>(std::move(out), {x}, [xn, yv](Node<T>& self) {
        Tensor<T> dx(xn->value.shape());
        const T* g = self.grad.data();
        const T* y = yv->data();
        for (int64_t i = 0; i < dx.size(); ++i) dx[i] = g[i] * (T(1) - y[i] * y[i]);
        xn->add_grad(dx);
    });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int> shape) {
    Tensor<T> out = x.val().reshaped(std::move(shape));
    auto xn = x.node();
    return make_op<T>(std::move(out), {x}, [xn](Node<T>& self) {
        xn->add_grad(self.grad.reshaped(xn->value.shape()));
    });
}

// Selects one element as a scalar; used by gradient probes.
template <typename T>
Var<T> pick(const Var<T>& x, int64_t index) {
    check(index >= 0 && index < x.val().size(), "pick: index out of range");
    Tensor<T> out = Tensor<T>::scalar(x.val()[index]);
    auto xn = x.node();
    return make_op<T>(std::move(out), {x}, [xn, index](Node<T>& self) {
        Tensor<T> dx(xn->value.shape());
        dx[index] = self.grad[0];
        xn->add_grad(dx);
    });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    check(sa.size() == 4 && sb.size() == 4 && sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
          "concat_channels: incompatible shapes");
    const int B = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
    const int64_t hw = int64_t(H) * W;
    Tensor<T> out({B, Ca + Cb, H, W});
    for (int bi = 0; bi < B; ++bi) {
        std::copy_n(a.val().data() + bi * Ca * hw, Ca * hw, out.data() + int64_t(bi) * (Ca + Cb) * hw);
        std::copy_n(b.val().data() + bi * Cb * hw, Cb * hw,
                    out.data() + int64_t(bi) * (Ca + Cb) * hw + Ca * hw);
    }
    auto an = a.node(), bn = b.node();
    return make_op<T>(std::move(out), {a, b}, [an, bn, B, Ca, Cb, hw](Node<T>& self) {
        const T* g = self.grad.data();
        if (an->requires_grad) {
            Tensor<T> da(an->value.shape());
            for (int bi = 0; bi < B; ++bi)
                std::copy_n(g + int64_t(bi) * (Ca + Cb) * hw, Ca * hw, da.data() + int64_t(bi) * Ca * hw);
            an->add_grad(da);
        }
        if (bn->requires_grad) {
            Tensor<T> db(bn->value.shape());
            for (int bi = 0; bi < B; ++bi)
                std::copy_n(g + int64_t(bi) * (Ca + Cb) * hw + Ca * hw, Cb * hw,
                            db.data() + int64_t(bi) * Cb * hw);
            bn->add_grad(db);
        }
    });
}

// y[b,c,:,:] = x[b,c,:,:] * w[b,0,:,:]
template <typename T>
Var<T> mul_channel_broadcast(const Var<T>& x, const Var<T>& w) {
    const auto& sx = x.shape();
    const auto& sw = w.shape();
    check(sx.size() == 4 && sw.size() == 4 && sw[1] == 1 && sx[0] == sw[0] && sx[2] == sw[2] &&
              sx[3] == sw[3],
          "mul_channel_broadcast: expected x[B,C,H,W], w[B,1,H,W]");
    const int B = sx[0], C = sx[1];
    const int64_t hw = int64_t(sx[2]) * sx[3];
    Tensor<T> out(sx);
    for (int bi = 0; bi < B; ++bi) {
        const T* pw = w.val().data() + bi * hw;
        for (int c = 0; c < C; ++c) {
            const T* px = x.val().data() + (int64_t(bi) * C + c) * hw;
            T* po = out.data() + (int64_t(bi) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) po[i] = px[i] * pw[i];
        }
    }
    auto xn = x.node(), wn = w.node();
    return make_op<T>(std::move(out), {x, w}, [xn, wn, B, C, hw](Node<T>& self) {
        const T* g = self.grad.data();
        if (xn->requires_grad) {
            Tensor<T> dx(xn->value.shape());
            for (int bi = 0; bi < B; ++bi) {
                const T* pw = wn->value.data() + bi * hw;
                for (int c = 0; c < C; ++c) {
                    const int64_t off = (int64_t(bi) * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i) dx[off + i] = g[off + i] * pw[i];
                }
            }
            xn->add_grad(dx);
        }
        if (wn->requires_grad) {
            Tensor<T> dw(wn->value.shape());
            for (int bi = 0; bi < B; ++bi) {
                T* pdw = dw.data() + bi * hw;
                for (int c = 0; c < C; ++c) {
                    const int64_t off = (int64_t(bi) * C + c) * hw;
                    const T* px = xn->value.data() + off;
                    for (int64_t i = 0; i < hw; ++i) pdw[i] += g[off + i] * px[i];
                }
            }
            wn->add_grad(dw);
        }
    });
}

// Nearest-neighbor resize to (Ho, Wo); source index floor(i*H/Ho). Exact for
// integer upscale factors and constant-preserving for any target size.
template <typename T>
Var<T> resize_nearest(const Var<T>& x, int Ho, int Wo) {
    const auto& s = x.shape();
    check(s.size() == 4, "resize_nearest: expected [B,C,H,W]");
    check(Ho >= 1 && Wo >= 1, "resize_nearest: bad target size");
    const int B = s[0], C = s[1], H = s[2], W = s[3];
    std::vector<int> ys(Ho), xs(Wo);
    for (int i = 0; i < Ho; ++i) ys[i] = std::min(H - 1, int(int64_t(i) * H / Ho));
    for (int i = 0; i < Wo; ++i) xs[i] = std::min(W - 1, int(int64_t(i) * W / Wo));
    Tensor<T> out({B, C, Ho, Wo});
    for (int bc = 0; bc < B * C; ++bc) {
        const T* src = x.val().data() + int64_t(bc) * H * W;
        T* dst = out.data() + int64_t(bc) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) dst[int64_t(oy) * Wo + ox] = src[int64_t(ys[oy]) * W + xs[ox]];
    }
    auto xn = x.node();
    return make_op<T>(std::move(out), {x},
                      [xn, B, C, H, W, Ho, Wo, ys, xs](Node<T>& self) {
                          Tensor<T> dx(xn->value.shape());
                          const T* g = self.grad.data();
                          for (int bc = 0; bc < B * C; ++bc) {
                              T* dst = dx.data() + int64_t(bc) * H * W;
                              const T* src = g + int64_t(bc) * Ho * Wo;
                              for (int oy = 0; oy < Ho; ++oy)
                                  for (int ox = 0; ox < Wo; ++ox)
                                      dst[int64_t(ys[oy]) * W + xs[ox]] += src[int64_t(oy) * Wo + ox];
                          }
                          xn->add_grad(dx);
                      });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
    return resize_nearest(x, x.shape()[2] * 2, x.shape()[3] * 2);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

// Per-sample mean over all non-batch elements: [B,...] -> [B].
template <typename T>
Var<T> mean_per_sample(const Var<T>& x) {
    const auto& s = x.shape();
    check(!s.empty(), "mean_per_sample: empty tensor");
    const int B = s[0];
    const int64_t m = x.val().size() / std::max(B, 1);
    Tensor<T> out({B});
    for (int bi = 0; bi < B; ++bi) {
        double acc = 0;
        const T* p = x.val().data() + bi * m;
        for (int64_t i = 0; i < m; ++i) acc += static_cast<double>(p[i]);
        out[bi] = static_cast<T>(acc / double(m));
    }
    auto xn = x.node();
    return make_op<T>(std::move(out), {x}, [xn, B, m](Node<T>& self) {
        Tensor<T> dx(xn->value.shape());
        for (int bi = 0; bi < B; ++bi) {
            const T gi = self.grad[bi] / static_cast<T>(m);
            T* p = dx.data() + bi * m;
            for (int64_t i = 0; i < m; ++i) p[i] = gi;
        }
        xn->add_grad(dx);
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    const int64_t n = x.val().size();
    check(n > 0, "mean_all: empty tensor");
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x.val()[i]);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / double(n)));
    auto xn = x.node();
    return make_op<T>(std::move(out), {x}, [xn, n](Node<T>& self) {
        Tensor<T> dx(xn->value.shape());
        const T gi = self.grad[0] / static_cast<T>(n);
        for (int64_t i = 0; i < n; ++i) dx[i] = gi;
        xn->add_grad(dx);
    });
}

// ---------------------------------------------------------------------------
// Losses (scalar outputs)
// ---------------------------------------------------------------------------

// mean( softplus(z) - target*z ); equals -mean(log sigmoid(z)) at target=1
// and -mean(log(1-sigmoid(z))) at target=0.
template <typename T>
Var<T> bce_logits_mean(const Var<T>& z, T target) {
    const int64_t n = z.val().size();
    double acc = 0;
    const T* pz = z.val().data();
    for (int64_t i = 0; i < n; ++i)
        acc += static_cast<double>(scalar_fn::softplus(pz[i]) - target * pz[i]);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / double(n)));
    auto zn = z.node();
    return make_op<T>(std::move(out), {z}, [zn, target, n](Node<T>& self) {
        Tensor<T> dz(zn->value.shape());
        const T g = self.grad[0] / static_cast<T>(n);
        const T* pz = zn->value.data();
        for (int64_t i = 0; i < n; ++i) dz[i] = g * (scalar_fn::sigmoid(pz[i]) - target);
        zn->add_grad(dz);
    });
}

// mean(log(1 - sigmoid(z))) = mean(-softplus(z)).
template <typename T>
Var<T> log1m_sigmoid_mean(const Var<T>& z) {
    const int64_t n = z.val().size();
    double acc = 0;
    const T* pz = z.val().data();
    for (int64_t i = 0; i < n; ++i) acc -= static_cast<double>(scalar_fn::softplus(pz[i]));
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / double(n)));
    auto zn = z.node();
    return make_op<T>(std::move(out), {z}, [zn, n](Node<T>& self) {
        Tensor<T> dz(zn->value.shape());
        const T g = self.grad[0] / static_cast<T>(n);
        const T* pz = zn->value.data();
        for (int64_t i = 0; i < n; ++i) dz[i] = -g * scalar_fn::sigmoid(pz[i]);
        zn->add_grad(dz);
    });
}

template <typename T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
    check(a.val().same_shape(b.val()), "l1_mean: shape mismatch");
    const int64_t n = a.val().size();
    double acc = 0;
    const T* pa = a.val().data();
    const T* pb = b.val().data();
    for (int64_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(pa[i]) - static_cast<double>(pb[i]));
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / double(n)));
    auto an = a.node(), bn = b.node();
    return make_op<T>(std::move(out), {a, b}, [an, bn, n](Node<T>& self) {
        const T g = self.grad[0] / static_cast<T>(n);
        const T* pa = an->value.data();
        const T* pb = bn->value.data();
        if (an->requires_grad) {
            Tensor<T> da(an->value.shape());
            for (int64_t i = 0; i < n; ++i) {
                const T d = pa[i] - pb[i];
                da[i] = d > T(0) ? g : (d < T(0) ? -g : T(0));
            }
            an->add_grad(da);
        }
        if (bn->requires_grad) {
            Tensor<T> db(bn->value.shape());
            for (int64_t i = 0; i < n; ++i) {
                const T d = pa[i] - pb[i];
                db[i] = d > T(0) ? -g : (d < T(0) ? g : T(0));
            }
            bn->add_grad(db);
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra ops
// ---------------------------------------------------------------------------

// y[B,Out] = x[B,In] * w[Out,In]^T + b[Out]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const auto& sx = x.shape();
    const auto& sw = w.shape();
    check(sx.size() == 2 && sw.size() == 2 && sx[1] == sw[1], "linear: shape mismatch");
    check(b.shape() == std::vector<int>{sw[0]}, "linear: bias shape mismatch");
    const int B = sx[0], In = sx[1], Out = sw[0];
    Tensor<T> out({B, Out});
    CMatMap<T> X(x.val().data(), B, In), W(w.val().data(), Out, In);
    MatMap<T> Y(out.data(), B, Out);
    Y.noalias() = X * W.transpose();
    for (int bi = 0; bi < B; ++bi)
        for (int o = 0; o < Out; ++o) out[int64_t(bi) * Out + o] += b.val()[o];
    auto xn = x.node(), wn = w.node(), bn = b.node();
    return make_op<T>(std::move(out), {x, w, b}, [xn, wn, bn, B, In, Out](Node<T>& self) {
        CMatMap<T> G(self.grad.data(), B, Out);
        if (xn->requires_grad) {
            Tensor<T> dx({B, In});
            CMatMap<T> W(wn->value.data(), Out, In);
            MatMap<T>(dx.data(), B, In).noalias() = G * W;
            xn->add_grad(dx);
        }
        if (wn->requires_grad) {
            Tensor<T> dw({Out, In});
            CMatMap<T> X(xn->value.data(), B, In);
            MatMap<T>(dw.data(), Out, In).noalias() = G.transpose() * X;
            wn->add_grad(dw);
        }
        if (bn->requires_grad) {
            Tensor<T> db({Out});
            for (int bi = 0; bi < B; ++bi)
                for (int o = 0; o < Out; ++o) db[o] += self.grad[int64_t(bi) * Out + o];
            bn->add_grad(db);
        }
    });
}

// Batched matmul: a[B,M,K] * b[B,K,N] -> [B,M,N]
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    check(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1], "bmm: shape mismatch");
    const int B = sa[0], M = sa[1], K = sa[2], N = sb[2];
    Tensor<T> out({B, M, N});
    for (int bi = 0; bi < B; ++bi) {
        CMatMap<T> A(a.val().data() + int64_t(bi) * M * K, M, K);
        CMatMap<T> Bm(b.val().data() + int64_t(bi) * K * N, K, N);
        MatMap<T>(out.data() + int64_t(bi) * M * N, M, N).noalias() = A * Bm;
    }
    auto an = a.node(), bn = b.node();
    return make_op<T>(std::move(out), {a, b}, [an, bn, B, M, K, N](Node<T>& self) {
        if (an->requires_grad) {
            Tensor<T> da({B, M, K});
            for (int bi = 0; bi < B; ++bi) {
                CMatMap<T> G(self.grad.data() + int64_t(bi) * M * N, M, N);
                CMatMap<T> Bm(bn->value.data() + int64_t(bi) * K * N, K, N);
                MatMap<T>(da.data() + int64_t(bi) * M * K, M, K).noalias() = G * Bm.transpose();
            }
            an->add_grad(da);
        }
        if (bn->requires_grad) {
            Tensor<T> db({B, K, N});
            for (int bi = 0; bi < B; ++bi) {
                CMatMap<T> G(self.grad.data() + int64_t(bi) * M * N, M, N);
                CMatMap<T> A(an->value.data() + int64_t(bi) * M * K, M, K);
                MatMap<T>(db.data() + int64_t(bi) * K * N, K, N).noalias() = A.transpose() * G;
            }
            bn->add_grad(db);
        }
    });
}

template <typename T>
Var<T> transpose12(const Var<T>& x) {
    const auto& s = x.shape();
    check(s.size() == 3, "transpose12: expected [B,M,N]");
    const int B = s[0], M = s[1], N = s[2];
    Tensor<T> out({B, N, M});
    for (int bi = 0; bi < B; ++bi) {
        CMatMap<T> X(x.val().data() + int64_t(bi) * M * N, M, N);
        MatMap<T>(out.data() + int64_t(bi) * M * N, N, M) = X.transpose();
    }
    auto xn = x.node();
    return make_op<T>(std::move(out), {x}, [xn, B, M, N](Node<T>& self) {
        Tensor<T> dx({B, M, N});
        for (int bi = 0; bi < B; ++bi) {
            CMatMap<T> G(self.grad.data() + int64_t(bi) * M * N, N, M);
            MatMap<T>(dx.data() + int64_t(bi) * M * N, M, N) = G.transpose();
        }
        xn->add_grad(dx);
    });
}

// Softmax over the last dimension of [B,M,N].
template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
    const auto& s = x.shape();
    check(s.size() == 3, "softmax_lastdim: expected [B,M,N]");
    const int64_t rows = int64_t(s[0]) * s[1];
    const int N = s[2];
    Tensor<T> out(s);
    for (int64_t r = 0; r < rows; ++r) {
        const T* px = x.val().data() + r * N;
        T* po = out.data() + r * N;
        T mx = px[0];
        for (int i = 1; i < N; ++i) mx = std::max(mx, px[i]);
        double z = 0;
        for (int i = 0; i < N; ++i) {
            po[i] = std::exp(px[i] - mx);
            z += static_cast<double>(po[i]);
        }
        const T rz = static_cast<T>(1.0 / z);
        for (int i = 0; i < N; ++i) po[i] *= rz;
    }
    auto xn = x.node();
    auto yv = std::make_shared<Tensor<T>>(out);
    return make_op<T>(std::move(out), {x}, [xn, yv, rows, N](Node<T>& self) {
        Tensor<T> dx(xn->value.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const T* y = yv->data() + r * N;
            const T* g = self.grad.data() + r * N;
            double dot = 0;
            for (int i = 0; i < N; ++i) dot += static_cast<double>(g[i]) * y[i];
            T* pd = dx.data() + r * N;
            for (int i = 0; i < N; ++i) pd[i] = y[i] * (g[i] - static_cast<T>(dot));
        }
        xn->add_grad(dx);
    });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Group normalization without learned affine; instance norm is groups == C.
template <typename T>
Var<T> group_norm(const Var<T>& x, int groups, T eps) {
    const auto& s = x.shape();
    check(s.size() == 4, "group_norm: expected [B,C,H,W]");
    const int B = s[0], C = s[1];
    check(groups >= 1 && C % groups == 0, "group_norm: groups must divide channels");
    const int64_t m = int64_t(C / groups) * s[2] * s[3];
    Tensor<T> out(s);
    auto rinv = std::make_shared<std::vector<T>>(size_t(B) * groups);
    for (int bg = 0; bg < B * groups; ++bg) {
        const T* px = x.val().data() + bg * m;
        double mu = 0;
        for (int64_t i = 0; i < m; ++i) mu += static_cast<double>(px[i]);
        mu /= double(m);
        double var = 0;
        for (int64_t i = 0; i < m; ++i) {
            const double d = static_cast<double>(px[i]) - mu;
            var += d * d;
        }
        var /= double(m);
        const T ri = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        (*rinv)[bg] = ri;
        T* po = out.data() + bg * m;
        const T muT = static_cast<T>(mu);
        for (int64_t i = 0; i < m; ++i) po[i] = (px[i] - muT) * ri;
    }
    auto xn = x.node();
    auto yv = std::make_shared<Tensor<T>>(out);
    return make_op<T>(std::move(out), {x}, [xn, yv, rinv, B, groups, m](Node<T>& self) {
        Tensor<T> dx(xn->value.shape());
        for (int bg = 0; bg < B * groups; ++bg) {
            const T* y = yv->data() + bg * m;
            const T* g = self.grad.data() + bg * m;
            double gsum = 0, gysum = 0;
            for (int64_t i = 0; i < m; ++i) {
                gsum += static_cast<double>(g[i]);
                gysum += static_cast<double>(g[i]) * y[i];
            }
            const T gmean = static_cast<T>(gsum / double(m));
            const T gymean = static_cast<T>(gysum / double(m));
            const T ri = (*rinv)[bg];
            T* pd = dx.data() + bg * m;
            for (int64_t i = 0; i < m; ++i) pd[i] = ri * (g[i] - gmean - y[i] * gymean);
        }
        xn->add_grad(dx);
    });
}

template <typename T>
struct NormStats {
    std::vector<T> mu, rinv;
};

// Same forward as group_norm, but the per-group statistics are treated as
// constants in backward. This keeps the gradient of each output strictly
// local to its own input position, which the patch discriminator's locality
// contract requires; the normalization values themselves are unchanged.
// `capture` records the statistics used; `pinned` substitutes externally
// supplied ones, turning the op into the exact function the frozen backward
// differentiates (used by the finite-difference oracle).
template <typename T>
Var<T> group_norm_frozen_stats(const Var<T>& x, int groups, T eps,
                               NormStats<T>* capture = nullptr,
                               const NormStats<T>* pinned = nullptr) {
    const auto& s = x.shape();
    check(s.size() == 4, "group_norm_frozen_stats: expected [B,C,H,W]");
    const int B = s[0], C = s[1];
    check(groups >= 1 && C % groups == 0, "group_norm_frozen_stats: groups must divide channels");
    const int64_t m = int64_t(C / groups) * s[2] * s[3];
    const size_t ng = size_t(B) * groups;
    if (pinned)
        check(pinned->mu.size() == ng && pinned->rinv.size() == ng,
              "group_norm_frozen_stats: pinned stats size mismatch");
    Tensor<T> out(s);
    auto stats = std::make_shared<NormStats<T>>();
    stats->mu.resize(ng);
    stats->rinv.resize(ng);
    for (size_t bg = 0; bg < ng; ++bg) {
        const T* px = x.val().data() + bg * m;
        T muT, ri;
        if (pinned) {
            muT = pinned->mu[bg];
            ri = pinned->rinv[bg];
        } else {
            double mu = 0;
            for (int64_t i = 0; i < m; ++i) mu += static_cast<double>(px[i]);
            mu /= double(m);
            double var = 0;
            for (int64_t i = 0; i < m; ++i) {
                const double d = static_cast<double>(px[i]) - mu;
                var += d * d;
            }
            var /= double(m);
            muT = static_cast<T>(mu);
            ri = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        }
        stats->mu[bg] = muT;
        stats->rinv[bg] = ri;
        T* po = out.data() + bg * m;
        for (int64_t i = 0; i < m; ++i) po[i] = (px[i] - muT) * ri;
    }
    if (capture) *capture = *stats;
    auto xn = x.node();
    return make_op<T>(std::move(out), {x}, [xn, stats, ng, m](Node<T>& self) {
        Tensor<T> dx(xn->value.shape());
        for (size_t bg = 0; bg < ng; ++bg) {
            const T ri = stats->rinv[bg];
            const T* g = self.grad.data() + bg * m;
            T* pd = dx.data() + bg * m;
            for (int64_t i = 0; i < m; ++i) pd[i] = g[i] * ri;
        }
        xn->add_grad(dx);
    });
}

// Per-channel affine conditioning: y = x*(1+s) + t with s,t of shape [B,C].
template <typename T>
Var<T> scale_shift(const Var<T>& x, const Var<T>& s, const Var<T>& t) {
    const auto& sx = x.shape();
    check(sx.size() == 4, "scale_shift: expected [B,C,H,W]");
    const int B = sx[0], C = sx[1];
    check((s.shape() == std::vector<int>{B, C}) && (t.shape() == std::vector<int>{B, C}),
          "scale_shift: scale/shift must be [B,C]");
    const int64_t hw = int64_t(sx[2]) * sx[3];
    Tensor<T> out(sx);
    for (int bc = 0; bc < B * C; ++bc) {
        const T sc = T(1) + s.val()[bc];
        const T sh = t.val()[bc];
        const T* px = x.val().data() + bc * hw;
        T* po = out.data() + bc * hw;
        for (int64_t i = 0; i < hw; ++i) po[i] = px[i] * sc + sh;
    }
    auto xn = x.node(), sn = s.node(), tn = t.node();
    return make_op<T>(std::move(out), {x, s, t}, [xn, sn, tn, B, C, hw](Node<T>& self) {
        const T* g = self.grad.data();
        if (xn->requires_grad) {
            Tensor<T> dx(xn->value.shape());
            for (int bc = 0; bc < B * C; ++bc) {
                const T sc = T(1) + sn->value[bc];
                const T* pg = g + bc * hw;
                T* pd = dx.data() + bc * hw;
                for (int64_t i = 0; i < hw; ++i) pd[i] = pg[i] * sc;
            }
            xn->add_grad(dx);
        }
        if (sn->requires_grad) {
            Tensor<T> ds({B, C});
            for (int bc = 0; bc < B * C; ++bc) {
                const T* pg = g + bc * hw;
                const T* px = xn->value.data() + bc * hw;
                double acc = 0;
                for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(pg[i]) * px[i];
                ds[bc] = static_cast<T>(acc);
            }
            sn->add_grad(ds);
        }
        if (tn->requires_grad) {
            Tensor<T> dt({B, C});
            for (int bc = 0; bc < B * C; ++bc) {
                const T* pg = g + bc * hw;
                double acc = 0;
                for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(pg[i]);
                dt[bc] = static_cast<T>(acc);
            }
            tn->add_grad(dt);
        }
    });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

inline int conv_out_size(int in, int kernel, int stride, int pad) {
    const int out = (in + 2 * pad - kernel) / stride + 1;
    check(out >= 1, "conv: output size would be empty");
    return out;
}

namespace detail {

// col is [Ci*kh*kw, Ho*Wo]; replicate mode clamps coordinates at borders.
template <typename T>
void im2col(const T* x, int Ci, int H, int W, int kh, int kw, int stride, int pad, PadMode mode,
            int Ho, int Wo, T* col) {
    const int64_t P = int64_t(Ho) * Wo;
    for (int ci = 0; ci < Ci; ++ci) {
        const T* xc = x + int64_t(ci) * H * W;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* row = col + ((int64_t(ci) * kh + ki) * kw + kj) * P;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride - pad + ki;
                    bool y_in = iy >= 0 && iy < H;
                    if (!y_in && mode == PadMode::kReplicate) {
                        iy = std::clamp(iy, 0, H - 1);
                        y_in = true;
                    }
                    T* dst = row + int64_t(oy) * Wo;
                    if (!y_in) {
                        std::fill_n(dst, Wo, T(0));
                        continue;
                    }
                    const T* src = xc + int64_t(iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride - pad + kj;
                        if (ix < 0 || ix >= W) {
                            if (mode == PadMode::kReplicate)
                                ix = std::clamp(ix, 0, W - 1);
                            else {
                                dst[ox] = T(0);
                                continue;
                            }
                        }
                        dst[ox] = src[ix];
                    }
                }
            }
        }
    }
}

// Scatter-add of a column gradient back to the input image; mirrors im2col's
// index mapping, including border clamping under replicate padding.
template <typename T>
void col2im_add(const T* col, int Ci, int H, int W, int kh, int kw, int stride, int pad,
                PadMode mode, int Ho, int Wo, T* dx) {
    const int64_t P = int64_t(Ho) * Wo;
    for (int ci = 0; ci < Ci; ++ci) {
        T* xc = dx + int64_t(ci) * H * W;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* row = col + ((int64_t(ci) * kh + ki) * kw + kj) * P;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= H) {
                        if (mode == PadMode::kReplicate)
                            iy = std::clamp(iy, 0, H - 1);
                        else
                            continue;
                    }
                    const T* src = row + int64_t(oy) * Wo;
                    T* drow = xc + int64_t(iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride - pad + kj;
                        if (ix < 0 || ix >= W) {
                            if (mode == PadMode::kReplicate)
                                ix = std::clamp(ix, 0, W - 1);
                            else
                                continue;
                        }
                        drow[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 2-D convolution, x[B,Ci,H,W] * w[Co,Ci,kh,kw] + b[Co].
// Forward im2col buffers are kept for the backward pass when grads are on.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad,
              PadMode mode = PadMode::kZero) {
    const auto& sx = x.shape();
    const auto& sw = w.shape();
    check(sx.size() == 4 && sw.size() == 4, "conv2d: expected 4-D tensors");
    check(sx[1] == sw[1], "conv2d: channel mismatch between input " + x.val().shape_str() +
                              " and weight " + w.val().shape_str());
    const int B = sx[0], Ci = sx[1], H = sx[2], W = sx[3];
    const int Co = sw[0], kh = sw[2], kw = sw[3];
    check(b.shape() == std::vector<int>{Co}, "conv2d: bias shape mismatch");
    const int Ho = conv_out_size(H, kh, stride, pad);
    const int Wo = conv_out_size(W, kw, stride, pad);
    const int K = Ci * kh * kw;
    const int64_t P = int64_t(Ho) * Wo;

    const bool track = grad_enabled() && (x.requires_grad() || w.requires_grad() || b.requires_grad());
    auto cols = track ? std::make_shared<std::vector<T>>(size_t(B) * K * P) : nullptr;
    std::vector<T> scratch;
    if (!track) scratch.resize(size_t(K) * P);

    Tensor<T> out({B, Co, Ho, Wo});
    CMatMap<T> Wm(w.val().data(), Co, K);
    for (int bi = 0; bi < B; ++bi) {
        T* col = track ? cols->data() + size_t(bi) * K * P : scratch.data();
        detail::im2col(x.val().data() + int64_t(bi) * Ci * H * W, Ci, H, W, kh, kw, stride, pad,
                       mode, Ho, Wo, col);
        MatMap<T> Y(out.data() + int64_t(bi) * Co * P, Co, P);
        Y.noalias() = Wm * CMatMap<T>(col, K, P);
        for (int co = 0; co < Co; ++co) Y.row(co).array() += b.val()[co];
    }

    auto xn = x.node(), wn = w.node(), bn = b.node();
    return make_op<T>(
        std::move(out), {x, w, b},
        [xn, wn, bn, cols, B, Ci, H, W, Co, kh, kw, stride, pad, mode, Ho, Wo, K, P](Node<T>& self) {
            if (wn->requires_grad) {
                Tensor<T> dw({Co, Ci, kh, kw});
                MatMap<T> dWm(dw.data(), Co, K);
                for (int bi = 0; bi < B; ++bi) {
                    CMatMap<T> G(self.grad.data() + int64_t(bi) * Co * P, Co, P);
                    CMatMap<T> col(cols->data() + size_t(bi) * K * P, K, P);
                    dWm.noalias() += G * col.transpose();
                }
                wn->add_grad(dw);
            }
            if (bn->requires_grad) {
                Tensor<T> db({Co});
                for (int bi = 0; bi < B; ++bi) {
                    CMatMap<T> G(self.grad.data() + int64_t(bi) * Co * P, Co, P);
                    for (int co = 0; co < Co; ++co)
                        db[co] += static_cast<T>(G.row(co).template cast<double>().sum());
                }
                bn->add_grad(db);
            }
            if (xn->requires_grad) {
                Tensor<T> dx({B, Ci, H, W});
                CMatMap<T> Wm(wn->value.data(), Co, K);
                std::vector<T> dcol(size_t(K) * P);
                for (int bi = 0; bi < B; ++bi) {
                    CMatMap<T> G(self.grad.data() + int64_t(bi) * Co * P, Co, P);
                    MatMap<T>(dcol.data(), K, P).noalias() = Wm.transpose() * G;
                    detail::col2im_add(dcol.data(), Ci, H, W, kh, kw, stride, pad, mode, Ho, Wo,
                                       dx.data() + int64_t(bi) * Ci * H * W);
                }
                xn->add_grad(dx);
            }
        });
}

// ---------------------------------------------------------------------------
// Time embedding
// ---------------------------------------------------------------------------

// Sin/cos features of a per-sample scalar at geometrically spaced frequencies
// 1, ..., 1/max_period; output layout [sin..., cos...], shape [B, dim].
template <typename T>
Var<T> fourier_features(const Var<T>& t, int dim, double max_period = 10000.0) {
    check(dim >= 2 && dim % 2 == 0, "fourier_features: dim must be even and >= 2");
    check(t.shape().size() == 1, "fourier_features: expected [B]");
    const int B = t.shape()[0];
    const int half = dim / 2;
    auto freqs = std::make_shared<std::vector<T>>(half);
    for (int j = 0; j < half; ++j)
        (*freqs)[j] = half == 1 ? T(1)
                                : static_cast<T>(std::exp(-std::log(max_period) * double(j) /
                                                          double(half - 1)));
    Tensor<T> out({B, dim});
    for (int bi = 0; bi < B; ++bi) {
        const T tv = t.val()[bi];
        for (int j = 0; j < half; ++j) {
            out[int64_t(bi) * dim + j] = std::sin((*freqs)[j] * tv);
            out[int64_t(bi) * dim + half + j] = std::cos((*freqs)[j] * tv);
        }
    }
    auto tn = t.node();
    return make_op<T>(std::move(out), {t}, [tn, freqs, B, dim, half](Node<T>& self) {
        Tensor<T> dt({B});
        for (int bi = 0; bi < B; ++bi) {
            const T tv = tn->value[bi];
            double acc = 0;
            for (int j = 0; j < half; ++j) {
                const T f = (*freqs)[j];
                acc += static_cast<double>(f) * std::cos(f * tv) *
                       self.grad[int64_t(bi) * dim + j];
                acc -= static_cast<double>(f) * std::sin(f * tv) *
                       self.grad[int64_t(bi) * dim + half + j];
            }
            dt[bi] = static_cast<T>(acc);
        }
        tn->add_grad(dt);
    });
}

// ---------------------------------------------------------------------------
// Plain tensor helpers (no autograd)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sigmoid_tensor(const Tensor<T>& z) {
    Tensor<T> out(z.shape());
    for (int64_t i = 0; i < z.size(); ++i) out[i] = scalar_fn::sigmoid(z[i]);
    return out;
}

}  // namespace atme
