#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "rwkviml/tensor.hpp"

namespace iml {

// Bidirectional WKV attention. For target position t over a sequence of T
// tokens, per channel:
//
//   wkv_t = ( sum_{i != t} exp(-(|t-i|-1)/T * w + k_i) * v_i
//              + exp(u + k_t) * v_t )
//           / ( same weights, v_i replaced by 1 )
//
// w >= 0 is a channel-wise decay, u a channel-wise self bonus. The /T makes
// the effective per-step decay exp(-w/T), so decay strength adapts to the
// sequence length instead of the absolute pixel distance. This normalization
// is load-bearing; tests exercise it at two different T.

template <typename T>
T softplus(T x) {
    return x > T(30) ? x : std::log1p(std::exp(x));
}

template <typename T>
T softplus_inv(T y) {
    return y > T(30) ? y : std::log(std::expm1(y));
}

// Decay is stored as an unconstrained free parameter; the kernels see
// softplus(w_free) >= 0. A negative effective decay would make the scan
// amplify distant tokens and overflow.
template <typename T>
struct WkvParams {
    Tensor<T> w_free;  // (C)
    Tensor<T> u;       // (C)

    explicit WkvParams(int channels = 0) : w_free({channels}), u({channels}) {}

    Tensor<T> effective_w() const {
        return map(w_free, [](T x) { return softplus(x); });
    }
};

// arithmetic ops per (t, channel) step of the scan: two accumulator folds of
// 11 (sub, max, 2x exp-with-sub as 2, two fma-like updates as 3+2) plus the
// 19-op combine (add, 2 max, three 2-op exps, 5+4 blend, divide)
inline constexpr std::int64_t kWkvScanOpsPerStep = 41;

namespace detail {

template <typename T>
inline T shift_scale(T m_old, T m_new) {
    // e^{m_old - m_new}; an empty accumulator (m_old = -inf) contributes 0
    if (m_old == -std::numeric_limits<T>::infinity()) return T(0);
    return std::exp(m_old - m_new);
}

template <typename T>
void check_wkv_args(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w,
                    const Tensor<T>& u) {
    if (k.rank() != 2 || v.rank() != 2 || !same_shape(k, v))
        throw ShapeError("wkv: k and v must both be (T,C), got " + shape_str(k.shape()) +
                         " and " + shape_str(v.shape()));
    const int c = k.dim(1);
    if (w.numel() != c || u.numel() != c)
        throw ShapeError("wkv: w and u need one entry per channel (" + std::to_string(c) +
                         "), got " + shape_str(w.shape()) + " and " + shape_str(u.shape()));
    if (k.dim(0) < 1) throw ShapeError("wkv: empty sequence");
    if (!k.all_finite() || !v.all_finite() || !w.all_finite() || !u.all_finite())
        throw NumericError("wkv: non-finite input");
    for (std::int64_t i = 0; i < w.numel(); ++i)
        if (w[i] < T(0))
            throw NumericError("wkv: decay must be >= 0, got w[" + std::to_string(i) + "] < 0");
}

// One channel of the linear scan. Strides walk the (T,C) row-major layout.
// If dscale/dmant are given, the per-position denominator is recorded as
// dmant[t] * e^{dscale[t]} for the backward pass.
template <typename T>
void wkv_scan_channel(const T* k, const T* v, int t_len, int stride, T wq, T uu, T* out,
                      int out_stride, T* m_bwd, T* a_bwd, T* b_bwd, T* dscale, T* dmant,
                      std::int64_t* ops) {
    const T neg_inf = -std::numeric_limits<T>::infinity();

    // future-side accumulator: after the sweep, position t holds
    // sum_{i>t} e^{-(i-1-t) wq + k_i} [v_i; 1] in (max, mantissa) form
    T m = neg_inf, a = T(0), b = T(0);
    for (int t = t_len - 1; t >= 0; --t) {
        m_bwd[t] = m;
        a_bwd[t] = a;
        b_bwd[t] = b;
        const T kt = k[static_cast<std::int64_t>(t) * stride];
        const T vt = v[static_cast<std::int64_t>(t) * stride];
        const T md = m - wq;
        const T new_m = std::max(md, kt);
        const T sc = shift_scale(md, new_m);
        const T en = std::exp(kt - new_m);
        a = sc * a + en * vt;
        b = sc * b + en;
        m = new_m;
    }

    // past-side accumulator advances in the same sweep that combines
    T mf = neg_inf, af = T(0), bf = T(0);
    for (int t = 0; t < t_len; ++t) {
        const T kt = k[static_cast<std::int64_t>(t) * stride];
        const T vt = v[static_cast<std::int64_t>(t) * stride];

        const T s = uu + kt;
        const T big = std::max(std::max(mf, m_bwd[t]), s);
        const T ef = shift_scale(mf, big);
        const T eb = shift_scale(m_bwd[t], big);
        const T es = std::exp(s - big);
        const T num = ef * af + eb * a_bwd[t] + es * vt;
        const T den = ef * bf + eb * b_bwd[t] + es;
        out[static_cast<std::int64_t>(t) * out_stride] = num / den;
        if (dscale) {
            dscale[t] = big;
            dmant[t] = den;
        }

        const T md = mf - wq;
        const T new_m = std::max(md, kt);
        const T sc = shift_scale(md, new_m);
        const T en = std::exp(kt - new_m);
        af = sc * af + en * vt;
        bf = sc * bf + en;
        mf = new_m;
    }

    // 11 flops per accumulator fold (x2) + 19 per combine; see scan body
    if (ops) *ops += static_cast<std::int64_t>(t_len) * kWkvScanOpsPerStep;
}

}  // namespace detail

// Quadratic reference. Every target position evaluates all T source weights
// with max-subtraction. The scan below must match this to tight tolerance.
template <typename T>
Tensor<T> wkv_naive(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w,
                    const Tensor<T>& u) {
    detail::check_wkv_args(k, v, w, u);
    const int t_len = k.dim(0), c_len = k.dim(1);
    Tensor<T> out({t_len, c_len});
    std::vector<T> ex(static_cast<size_t>(t_len));
    for (int c = 0; c < c_len; ++c) {
        const T wq = w[c] / T(t_len);
        for (int t = 0; t < t_len; ++t) {
            T mx = -std::numeric_limits<T>::infinity();
            for (int i = 0; i < t_len; ++i) {
                const T e = (i == t) ? u[c] + k.at(t, c)
                                     : k.at(i, c) - T(std::abs(t - i) - 1) * wq;
                ex[static_cast<size_t>(i)] = e;
                mx = std::max(mx, e);
            }
            T num = T(0), den = T(0);
            for (int i = 0; i < t_len; ++i) {
                const T e = std::exp(ex[static_cast<size_t>(i)] - mx);
                num += e * v.at(i, c);
                den += e;
            }
            out.at(t, c) = num / den;
        }
    }
    return out;
}

// Linear-time evaluation: one backward and one forward recurrence with
// per-step decay exp(-w/T), each kept stable by carrying a running max
// exponent next to the mantissas.
template <typename T>
Tensor<T> wkv_scan_counted(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w,
                           const Tensor<T>& u, std::int64_t* ops) {
    detail::check_wkv_args(k, v, w, u);
    const int t_len = k.dim(0), c_len = k.dim(1);
    Tensor<T> out({t_len, c_len});
    std::vector<T> m_bwd(static_cast<size_t>(t_len)), a_bwd(static_cast<size_t>(t_len)),
        b_bwd(static_cast<size_t>(t_len));
    for (int c = 0; c < c_len; ++c) {
        detail::wkv_scan_channel(k.data() + c, v.data() + c, t_len, c_len, w[c] / T(t_len),
                                 u[c], out.data() + c, c_len, m_bwd.data(), a_bwd.data(),
                                 b_bwd.data(), static_cast<T*>(nullptr),
                                 static_cast<T*>(nullptr), ops);
    }
    return out;
}

template <typename T>
Tensor<T> wkv_scan(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w,
                   const Tensor<T>& u) {
    return wkv_scan_counted(k, v, w, u, nullptr);
}

template <typename T>
struct WkvGrads {
    Tensor<T> k, v;  // (T,C)
    Tensor<T> w, u;  // (C); w is the gradient w.r.t. the effective decay
};

// Hand-derived linear-time backward. With D_t the denominator, g the upstream
// gradient, beta_t = g_t/D_t and gamma_t = beta_t * wkv_t:
//
//   d/dv_j = e^{k_j} (S+_j[beta] + S-_j[beta]) + e^{u+k_j} beta_j
//   d/dk_j = v_j * d/dv_j - (same with gamma)
//   d/du   = sum_t e^{u+k_t} beta_t (v_t - wkv_t)
//   d/dw   = -(1/T) sum_t beta_t ((Pv_t + Qv_t) - wkv_t (P1_t + Q1_t))
//
// where S+/S- are decayed suffix/prefix sums of beta (resp. gamma) and P/Q
// are distance-weighted variants obeying P_{t+1} = e^{-w/T} (P_t + A_t) with
// A the plain decayed sum. Every accumulator carries a log scale so the
// e^{k}-sized terms never materialize.
template <typename T>
WkvGrads<T> wkv_backward(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w,
                         const Tensor<T>& u, const Tensor<T>& grad_out) {
    detail::check_wkv_args(k, v, w, u);
    if (!same_shape(grad_out, k))
        throw ShapeError("wkv_backward: grad_out shape " + shape_str(grad_out.shape()) +
                         " does not match k " + shape_str(k.shape()));
    const int t_len = k.dim(0), c_len = k.dim(1);
    const T neg_inf = -std::numeric_limits<T>::infinity();

    WkvGrads<T> g{Tensor<T>({t_len, c_len}), Tensor<T>({t_len, c_len}), Tensor<T>({c_len}),
                  Tensor<T>({c_len})};

    const size_t tl = static_cast<size_t>(t_len);
    std::vector<T> m_bwd(tl), a_bwd(tl), b_bwd(tl);
    std::vector<T> wkv(tl), dscale(tl), dmant(tl);
    std::vector<T> ms(tl), sb(tl), sg(tl);          // suffix scans of beta/gamma
    std::vector<T> mq(tl), qv(tl), q1(tl);          // distance-weighted future scan

    for (int c = 0; c < c_len; ++c) {
        const T wq = w[c] / T(t_len);
        const T uu = u[c];
        const std::int64_t cs = c;

        detail::wkv_scan_channel(k.data() + cs, v.data() + cs, t_len, c_len, wq, uu,
                                 wkv.data(), 1, m_bwd.data(), a_bwd.data(), b_bwd.data(),
                                 dscale.data(), dmant.data(),
                                 static_cast<std::int64_t*>(nullptr));

        auto kat = [&](int t) { return k[static_cast<std::int64_t>(t) * c_len + cs]; };
        auto vat = [&](int t) { return v[static_cast<std::int64_t>(t) * c_len + cs]; };
        auto gat = [&](int t) { return grad_out[static_cast<std::int64_t>(t) * c_len + cs]; };

        // Suffix sweep: S+_j = sum_{t>j} beta_t e^{-(t-1-j) wq}, element beta_t
        // carried as mantissa g_t/dmant_t at log scale -dscale_t; gamma shares
        // the scale. Also the mirrored distance-weighted (Q, A) pair over
        // e^{k_i} v_i terms.
        {
            T m = neg_inf, vb = T(0), vg = T(0);
            T mA = neg_inf, av = T(0), a1 = T(0), pv = T(0), p1 = T(0);
            for (int t = t_len - 1; t >= 0; --t) {
                ms[static_cast<size_t>(t)] = m;
                sb[static_cast<size_t>(t)] = vb;
                sg[static_cast<size_t>(t)] = vg;
                mq[static_cast<size_t>(t)] = mA;
                qv[static_cast<size_t>(t)] = pv;
                q1[static_cast<size_t>(t)] = p1;

                const T gm = gat(t) / dmant[static_cast<size_t>(t)];
                const T el = -dscale[static_cast<size_t>(t)];
                T md = m - wq;
                T nm = std::max(md, el);
                T sc = detail::shift_scale(md, nm);
                T en = std::exp(el - nm);
                vb = sc * vb + en * gm;
                vg = sc * vg + en * gm * wkv[static_cast<size_t>(t)];
                m = nm;

                const T kt = kat(t), vt = vat(t);
                md = mA - wq;
                nm = std::max(md, kt);
                sc = detail::shift_scale(md, nm);
                en = std::exp(kt - nm);
                pv = sc * (pv + av);
                p1 = sc * (p1 + a1);
                av = sc * av + en * vt;
                a1 = sc * a1 + en;
                mA = nm;
            }
        }

        // Prefix sweep computes S- and P on the fly and emits the gradients.
        T m = neg_inf, vb = T(0), vg = T(0);
        T mA = neg_inf, av = T(0), a1 = T(0), pv = T(0), p1 = T(0);
        T gu = T(0), gw = T(0);
        for (int t = 0; t < t_len; ++t) {
            const T kt = kat(t), vt = vat(t);
            const T gm = gat(t) / dmant[static_cast<size_t>(t)];
            const T wk = wkv[static_cast<size_t>(t)];
            const T ds = dscale[static_cast<size_t>(t)];

            const T e_self = std::exp(uu + kt - ds);
            const T e_pre = (m == neg_inf) ? T(0) : std::exp(kt + m);
            const T e_suf = (ms[static_cast<size_t>(t)] == neg_inf)
                                ? T(0)
                                : std::exp(kt + ms[static_cast<size_t>(t)]);

            const T dv = e_pre * vb + e_suf * sb[static_cast<size_t>(t)] + e_self * gm;
            const T dk_neg = e_pre * vg + e_suf * sg[static_cast<size_t>(t)] + e_self * gm * wk;
            g.v[static_cast<std::int64_t>(t) * c_len + cs] = dv;
            g.k[static_cast<std::int64_t>(t) * c_len + cs] = vt * dv - dk_neg;

            gu += e_self * gm * (vt - wk);

            const T e_p = (mA == neg_inf) ? T(0) : std::exp(mA - ds);
            const T e_q = (mq[static_cast<size_t>(t)] == neg_inf)
                              ? T(0)
                              : std::exp(mq[static_cast<size_t>(t)] - ds);
            gw += gm * (e_p * (pv - wk * p1) + e_q * (qv[static_cast<size_t>(t)] -
                                                      wk * q1[static_cast<size_t>(t)]));

            // advance prefix accumulators past position t
            T md = m - wq;
            T nm = std::max(md, -dscale[static_cast<size_t>(t)]);
            T sc = detail::shift_scale(md, nm);
            T en = std::exp(-dscale[static_cast<size_t>(t)] - nm);
            vb = sc * vb + en * gm;
            vg = sc * vg + en * gm * wk;
            m = nm;

            md = mA - wq;
            nm = std::max(md, kt);
            sc = detail::shift_scale(md, nm);
            en = std::exp(kt - nm);
            pv = sc * (pv + av);
            p1 = sc * (p1 + a1);
            av = sc * av + en * vt;
            a1 = sc * a1 + en;
            mA = nm;
        }
        g.u[cs] = gu;
        g.w[cs] = -gw / T(t_len);
    }
    return g;
}

// Gradients for the parameter struct: chains the softplus reparameterization
// onto the effective-decay gradient.
template <typename T>
WkvGrads<T> wkv_backward(const Tensor<T>& k, const Tensor<T>& v, const WkvParams<T>& p,
                         const Tensor<T>& grad_out) {
    auto g = wkv_backward(k, v, p.effective_w(), p.u, grad_out);
    for (std::int64_t i = 0; i < g.w.numel(); ++i)
        g.w[i] *= sigmoid_scalar(p.w_free[i]);
    return g;
}

}  // namespace iml
