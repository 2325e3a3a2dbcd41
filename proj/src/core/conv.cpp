#include "conv.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#ifdef NFORGE_HAVE_CBLAS
#include <cblas.h>
#endif

namespace nforge {

ConvSpec ConvSpec::same(int64_t kernel, int64_t dilation, int64_t stride) {
    ConvSpec s;
    for (int a = 0; a < 3; ++a) {
        s.kernel[a] = kernel;
        s.dilation[a] = dilation;
        s.stride[a] = stride;
        s.padding[a] = dilation * (kernel - 1) / 2;
    }
    return s;
}

int64_t ConvSpec::out_extent(int axis, int64_t in) const {
    int64_t eff = dilation[axis] * (kernel[axis] - 1) + 1;
    return (in + 2 * padding[axis] - eff) / stride[axis] + 1;
}

void ConvSpec::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (kernel[a] < 1 || kernel[a] % 2 == 0)
            throw std::invalid_argument("ConvSpec: kernel extent must be odd positive, got " +
                                        std::to_string(kernel[a]));
        if (stride[a] < 1) throw std::invalid_argument("ConvSpec: stride must be >= 1");
        if (dilation[a] < 1) throw std::invalid_argument("ConvSpec: dilation must be >= 1");
        if (padding[a] < 0) throw std::invalid_argument("ConvSpec: padding must be >= 0");
    }
}

namespace {

ConvPath g_conv_path =
#ifdef NFORGE_HAVE_CBLAS
    ConvPath::gemm;
#else
    ConvPath::direct;
#endif

struct ConvDims {
    int64_t N, Cin, D, H, W;
    int64_t Cout, kd, kh, kw;
    int64_t OD, OH, OW;
    int64_t taps() const { return Cin * kd * kh * kw; }
    int64_t out_spatial() const { return OD * OH * OW; }
};

ConvDims check_conv_args(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                         const ConvSpec& spec) {
    spec.validate();
    if (input.shape().rank() != 5)
        throw std::invalid_argument("conv3d: input must be [N,C,D,H,W], got " +
                                    input.shape().str());
    if (kernel.shape().rank() != 5)
        throw std::invalid_argument("conv3d: kernel must be [Cout,Cin,kd,kh,kw], got " +
                                    kernel.shape().str());
    ConvDims d;
    d.N = input.shape()[0];
    d.Cin = input.shape()[1];
    d.D = input.shape()[2];
    d.H = input.shape()[3];
    d.W = input.shape()[4];
    d.Cout = kernel.shape()[0];
    d.kd = kernel.shape()[2];
    d.kh = kernel.shape()[3];
    d.kw = kernel.shape()[4];
    if (kernel.shape()[1] != d.Cin)
        throw std::invalid_argument("conv3d: kernel channels " + kernel.shape().str() +
                                    " do not match input " + input.shape().str());
    if (d.kd != spec.kernel[0] || d.kh != spec.kernel[1] || d.kw != spec.kernel[2])
        throw std::invalid_argument("conv3d: kernel tensor extents disagree with ConvSpec");
    if (bias.defined() && (bias.shape().rank() != 1 || bias.shape()[0] != d.Cout))
        throw std::invalid_argument("conv3d: bias must be [Cout]");
    d.OD = spec.out_extent(0, d.D);
    d.OH = spec.out_extent(1, d.H);
    d.OW = spec.out_extent(2, d.W);
    if (d.OD < 1 || d.OH < 1 || d.OW < 1)
        throw std::invalid_argument("conv3d: non-positive output extent for input " +
                                    input.shape().str());
    input.check_finite("conv3d input");
    kernel.check_finite("conv3d kernel");
    return d;
}

// Valid output range [lo,hi) along one axis for a fixed tap offset.
inline void tap_bounds(int64_t in_extent, int64_t out_extent, int64_t stride, int64_t off,
                       int64_t& lo, int64_t& hi) {
    // index = ow*stride + off must lie in [0, in_extent)
    int64_t t = -off;
    lo = t <= 0 ? 0 : (t + stride - 1) / stride;
    int64_t u = in_extent - off;  // need ow*stride <= u-1
    hi = u <= 0 ? 0 : std::min(out_extent, (u - 1) / stride + 1);
    if (lo > hi) lo = hi;
}

void add_bias(std::vector<Scalar>& out, const Tensor& bias, const ConvDims& d) {
    if (!bias.defined()) return;
    int64_t m = d.out_spatial();
    for (int64_t n = 0; n < d.N; ++n)
        for (int64_t co = 0; co < d.Cout; ++co) {
            Scalar b = bias.values()[static_cast<size_t>(co)];
            Scalar* row = out.data() + (n * d.Cout + co) * m;
            for (int64_t i = 0; i < m; ++i) row[i] += b;
        }
}

// Stride-1 fast path: one pass per (ci,t0,t1) row accumulating all kw taps.
void forward_direct_s1(const std::vector<Scalar>& in, const std::vector<Scalar>& k,
                       const ConvDims& d, const ConvSpec& s, std::vector<Scalar>& out) {
    int64_t dw = s.dilation[2], pw = s.padding[2];
    for (int64_t n = 0; n < d.N; ++n)
        for (int64_t co = 0; co < d.Cout; ++co) {
            Scalar* outc = out.data() + (n * d.Cout + co) * d.out_spatial();
            for (int64_t ci = 0; ci < d.Cin; ++ci)
                for (int64_t t0 = 0; t0 < d.kd; ++t0)
                    for (int64_t t1 = 0; t1 < d.kh; ++t1) {
                        const Scalar* krow =
                            k.data() + (((co * d.Cin + ci) * d.kd + t0) * d.kh + t1) * d.kw;
                        int64_t offd = t0 * s.dilation[0] - s.padding[0];
                        int64_t offh = t1 * s.dilation[1] - s.padding[1];
                        for (int64_t od = 0; od < d.OD; ++od) {
                            int64_t id = od + offd;
                            if (id < 0 || id >= d.D) continue;
                            for (int64_t oh = 0; oh < d.OH; ++oh) {
                                int64_t ih = oh + offh;
                                if (ih < 0 || ih >= d.H) continue;
                                const Scalar* __restrict irow =
                                    in.data() +
                                    (((n * d.Cin + ci) * d.D + id) * d.H + ih) * d.W;
                                Scalar* __restrict orow = outc + (od * d.OH + oh) * d.OW;
                                // Interior where every tap is in-bounds.
                                int64_t lo_all = pw, hi_all = d.W - dw * (d.kw - 1) + pw;
                                lo_all = std::max<int64_t>(0, lo_all);
                                hi_all = std::min(d.OW, hi_all);
                                if (lo_all > hi_all) lo_all = hi_all;
                                for (int64_t ow = 0; ow < lo_all; ++ow) {
                                    Scalar acc = 0.0;
                                    for (int64_t t2 = 0; t2 < d.kw; ++t2) {
                                        int64_t iw = ow + t2 * dw - pw;
                                        if (iw >= 0 && iw < d.W) acc += krow[t2] * irow[iw];
                                    }
                                    orow[ow] += acc;
                                }
                                if (d.kw == 3) {
                                    Scalar w0 = krow[0], w1 = krow[1], w2 = krow[2];
                                    const Scalar* __restrict base = irow - pw;
                                    for (int64_t ow = lo_all; ow < hi_all; ++ow)
                                        orow[ow] += w0 * base[ow] + w1 * base[ow + dw] +
                                                    w2 * base[ow + 2 * dw];
                                } else {
                                    const Scalar* __restrict base = irow - pw;
                                    for (int64_t t2 = 0; t2 < d.kw; ++t2) {
                                        Scalar w = krow[t2];
                                        const Scalar* b2 = base + t2 * dw;
                                        for (int64_t ow = lo_all; ow < hi_all; ++ow)
                                            orow[ow] += w * b2[ow];
                                    }
                                }
                                for (int64_t ow = hi_all; ow < d.OW; ++ow) {
                                    Scalar acc = 0.0;
                                    for (int64_t t2 = 0; t2 < d.kw; ++t2) {
                                        int64_t iw = ow + t2 * dw - pw;
                                        if (iw >= 0 && iw < d.W) acc += krow[t2] * irow[iw];
                                    }
                                    orow[ow] += acc;
                                }
                            }
                        }
                    }
        }
}

std::vector<Scalar> forward_direct(const std::vector<Scalar>& in, const std::vector<Scalar>& k,
                                   const ConvDims& d, const ConvSpec& s) {
    std::vector<Scalar> out(static_cast<size_t>(d.N * d.Cout * d.out_spatial()), 0.0);
    if (s.stride[0] == 1 && s.stride[1] == 1 && s.stride[2] == 1) {
        forward_direct_s1(in, k, d, s, out);
        return out;
    }
    for (int64_t n = 0; n < d.N; ++n)
        for (int64_t co = 0; co < d.Cout; ++co) {
            Scalar* outc = out.data() + (n * d.Cout + co) * d.out_spatial();
            for (int64_t ci = 0; ci < d.Cin; ++ci)
                for (int64_t t0 = 0; t0 < d.kd; ++t0)
                    for (int64_t t1 = 0; t1 < d.kh; ++t1)
                        for (int64_t t2 = 0; t2 < d.kw; ++t2) {
                            Scalar w = k[static_cast<size_t>(
                                (((co * d.Cin + ci) * d.kd + t0) * d.kh + t1) * d.kw + t2)];
                            int64_t offd = t0 * s.dilation[0] - s.padding[0];
                            int64_t offh = t1 * s.dilation[1] - s.padding[1];
                            int64_t offw = t2 * s.dilation[2] - s.padding[2];
                            int64_t lo, hi;
                            tap_bounds(d.W, d.OW, s.stride[2], offw, lo, hi);
                            for (int64_t od = 0; od < d.OD; ++od) {
                                int64_t id = od * s.stride[0] + offd;
                                if (id < 0 || id >= d.D) continue;
                                for (int64_t oh = 0; oh < d.OH; ++oh) {
                                    int64_t ih = oh * s.stride[1] + offh;
                                    if (ih < 0 || ih >= d.H) continue;
                                    const Scalar* irow =
                                        in.data() +
                                        (((n * d.Cin + ci) * d.D + id) * d.H + ih) * d.W + offw;
                                    Scalar* __restrict orow = outc + (od * d.OH + oh) * d.OW;
                                    if (s.stride[2] == 1)
                                        for (int64_t ow = lo; ow < hi; ++ow)
                                            orow[ow] += w * irow[ow];
                                    else
                                        for (int64_t ow = lo; ow < hi; ++ow)
                                            orow[ow] += w * irow[ow * s.stride[2]];
                                }
                            }
                        }
        }
    return out;
}

// Stride-1 grad_input: correlation of grad_out with the channel-transposed,
// spatially flipped kernel at padding d*(k-1)-p.
bool backward_input_flip(const std::vector<Scalar>& go, const std::vector<Scalar>& k,
                         const ConvDims& d, const ConvSpec& s, std::vector<Scalar>& gin) {
    ConvSpec s2 = s;
    for (int a = 0; a < 3; ++a) {
        s2.padding[a] = s.dilation[a] * (s.kernel[a] - 1) - s.padding[a];
        if (s2.padding[a] < 0) return false;
    }
    std::vector<Scalar> kflip(k.size());
    for (int64_t co = 0; co < d.Cout; ++co)
        for (int64_t ci = 0; ci < d.Cin; ++ci)
            for (int64_t t0 = 0; t0 < d.kd; ++t0)
                for (int64_t t1 = 0; t1 < d.kh; ++t1)
                    for (int64_t t2 = 0; t2 < d.kw; ++t2)
                        kflip[static_cast<size_t>(
                            (((ci * d.Cout + co) * d.kd + (d.kd - 1 - t0)) * d.kh +
                             (d.kh - 1 - t1)) *
                                d.kw +
                            (d.kw - 1 - t2))] = k[static_cast<size_t>(
                            (((co * d.Cin + ci) * d.kd + t0) * d.kh + t1) * d.kw + t2)];
    ConvDims d2;
    d2.N = d.N;
    d2.Cin = d.Cout;
    d2.D = d.OD;
    d2.H = d.OH;
    d2.W = d.OW;
    d2.Cout = d.Cin;
    d2.kd = d.kd;
    d2.kh = d.kh;
    d2.kw = d.kw;
    d2.OD = d.D;
    d2.OH = d.H;
    d2.OW = d.W;
    forward_direct_s1(go, kflip, d2, s2, gin);
    return true;
}

// Stride-1 grad_kernel: per-tap row dot products, kw taps fused per row pass.
void backward_kernel_s1(const std::vector<Scalar>& go, const std::vector<Scalar>& in,
                        const ConvDims& d, const ConvSpec& s, std::vector<Scalar>& gk) {
    int64_t dw = s.dilation[2], pw = s.padding[2];
    for (int64_t n = 0; n < d.N; ++n)
        for (int64_t co = 0; co < d.Cout; ++co) {
            const Scalar* goc = go.data() + (n * d.Cout + co) * d.out_spatial();
            for (int64_t ci = 0; ci < d.Cin; ++ci)
                for (int64_t t0 = 0; t0 < d.kd; ++t0)
                    for (int64_t t1 = 0; t1 < d.kh; ++t1) {
                        Scalar* gkrow =
                            gk.data() + (((co * d.Cin + ci) * d.kd + t0) * d.kh + t1) * d.kw;
                        int64_t offd = t0 * s.dilation[0] - s.padding[0];
                        int64_t offh = t1 * s.dilation[1] - s.padding[1];
                        for (int64_t od = 0; od < d.OD; ++od) {
                            int64_t id = od + offd;
                            if (id < 0 || id >= d.D) continue;
                            for (int64_t oh = 0; oh < d.OH; ++oh) {
                                int64_t ih = oh + offh;
                                if (ih < 0 || ih >= d.H) continue;
                                const Scalar* __restrict irow =
                                    in.data() +
                                    (((n * d.Cin + ci) * d.D + id) * d.H + ih) * d.W;
                                const Scalar* __restrict gorow = goc + (od * d.OH + oh) * d.OW;
                                for (int64_t t2 = 0; t2 < d.kw; ++t2) {
                                    int64_t off = t2 * dw - pw;
                                    int64_t lo, hi;
                                    tap_bounds(d.W, d.OW, 1, off, lo, hi);
                                    const Scalar* __restrict b = irow + off;
                                    Scalar acc = 0.0;
                                    for (int64_t ow = lo; ow < hi; ++ow)
                                        acc += b[ow] * gorow[ow];
                                    gkrow[t2] += acc;
                                }
                            }
                        }
                    }
        }
}

// grad_in / grad_k accumulation shared by the direct backward path.
void backward_direct(const std::vector<Scalar>& go, const std::vector<Scalar>& in,
                     const std::vector<Scalar>& k, const ConvDims& d, const ConvSpec& s,
                     std::vector<Scalar>* gin, std::vector<Scalar>* gk) {
    if (s.stride[0] == 1 && s.stride[1] == 1 && s.stride[2] == 1) {
        bool in_done = !gin || backward_input_flip(go, k, d, s, *gin);
        if (gk) backward_kernel_s1(go, in, d, s, *gk);
        if (in_done) return;
        gk = nullptr;  // kernel grad already handled above
    }
    for (int64_t n = 0; n < d.N; ++n)
        for (int64_t co = 0; co < d.Cout; ++co) {
            const Scalar* goc = go.data() + (n * d.Cout + co) * d.out_spatial();
            for (int64_t ci = 0; ci < d.Cin; ++ci)
                for (int64_t t0 = 0; t0 < d.kd; ++t0)
                    for (int64_t t1 = 0; t1 < d.kh; ++t1)
                        for (int64_t t2 = 0; t2 < d.kw; ++t2) {
                            size_t kidx = static_cast<size_t>(
                                (((co * d.Cin + ci) * d.kd + t0) * d.kh + t1) * d.kw + t2);
                            Scalar w = k[kidx];
                            int64_t offd = t0 * s.dilation[0] - s.padding[0];
                            int64_t offh = t1 * s.dilation[1] - s.padding[1];
                            int64_t offw = t2 * s.dilation[2] - s.padding[2];
                            int64_t lo, hi;
                            tap_bounds(d.W, d.OW, s.stride[2], offw, lo, hi);
                            Scalar acc = 0.0;
                            for (int64_t od = 0; od < d.OD; ++od) {
                                int64_t id = od * s.stride[0] + offd;
                                if (id < 0 || id >= d.D) continue;
                                for (int64_t oh = 0; oh < d.OH; ++oh) {
                                    int64_t ih = oh * s.stride[1] + offh;
                                    if (ih < 0 || ih >= d.H) continue;
                                    int64_t ibase =
                                        (((n * d.Cin + ci) * d.D + id) * d.H + ih) * d.W + offw;
                                    const Scalar* __restrict gorow = goc + (od * d.OH + oh) * d.OW;
                                    if (gin) {
                                        Scalar* girow = gin->data() + ibase;
                                        for (int64_t ow = lo; ow < hi; ++ow)
                                            girow[ow * s.stride[2]] += w * gorow[ow];
                                    }
                                    if (gk) {
                                        const Scalar* irow = in.data() + ibase;
                                        for (int64_t ow = lo; ow < hi; ++ow)
                                            acc += irow[ow * s.stride[2]] * gorow[ow];
                                    }
                                }
                            }
                            if (gk) (*gk)[kidx] += acc;
                        }
        }
}

#ifdef NFORGE_HAVE_CBLAS
void im2col(const Scalar* in, const ConvDims& d, const ConvSpec& s, Scalar* col) {
    int64_t m = d.out_spatial();
    int64_t row = 0;
    for (int64_t ci = 0; ci < d.Cin; ++ci)
        for (int64_t t0 = 0; t0 < d.kd; ++t0)
            for (int64_t t1 = 0; t1 < d.kh; ++t1)
                for (int64_t t2 = 0; t2 < d.kw; ++t2, ++row) {
                    Scalar* crow = col + row * m;
                    int64_t offd = t0 * s.dilation[0] - s.padding[0];
                    int64_t offh = t1 * s.dilation[1] - s.padding[1];
                    int64_t offw = t2 * s.dilation[2] - s.padding[2];
                    int64_t lo, hi;
                    tap_bounds(d.W, d.OW, s.stride[2], offw, lo, hi);
                    for (int64_t od = 0; od < d.OD; ++od) {
                        int64_t id = od * s.stride[0] + offd;
                        for (int64_t oh = 0; oh < d.OH; ++oh) {
                            int64_t ih = oh * s.stride[1] + offh;
                            Scalar* seg = crow + (od * d.OH + oh) * d.OW;
                            if (id < 0 || id >= d.D || ih < 0 || ih >= d.H) {
                                for (int64_t ow = 0; ow < d.OW; ++ow) seg[ow] = 0.0;
                                continue;
                            }
                            const Scalar* irow =
                                in + ((ci * d.D + id) * d.H + ih) * d.W + offw;
                            for (int64_t ow = 0; ow < lo; ++ow) seg[ow] = 0.0;
                            for (int64_t ow = lo; ow < hi; ++ow)
                                seg[ow] = irow[ow * s.stride[2]];
                            for (int64_t ow = hi; ow < d.OW; ++ow) seg[ow] = 0.0;
                        }
                    }
                }
}

void col2im_add(const Scalar* col, const ConvDims& d, const ConvSpec& s, Scalar* gin) {
    int64_t m = d.out_spatial();
    int64_t row = 0;
    for (int64_t ci = 0; ci < d.Cin; ++ci)
        for (int64_t t0 = 0; t0 < d.kd; ++t0)
            for (int64_t t1 = 0; t1 < d.kh; ++t1)
                for (int64_t t2 = 0; t2 < d.kw; ++t2, ++row) {
                    const Scalar* crow = col + row * m;
                    int64_t offd = t0 * s.dilation[0] - s.padding[0];
                    int64_t offh = t1 * s.dilation[1] - s.padding[1];
                    int64_t offw = t2 * s.dilation[2] - s.padding[2];
                    int64_t lo, hi;
                    tap_bounds(d.W, d.OW, s.stride[2], offw, lo, hi);
                    for (int64_t od = 0; od < d.OD; ++od) {
                        int64_t id = od * s.stride[0] + offd;
                        if (id < 0 || id >= d.D) continue;
                        for (int64_t oh = 0; oh < d.OH; ++oh) {
                            int64_t ih = oh * s.stride[1] + offh;
                            if (ih < 0 || ih >= d.H) continue;
                            const Scalar* seg = crow + (od * d.OH + oh) * d.OW;
                            Scalar* girow = gin + ((ci * d.D + id) * d.H + ih) * d.W + offw;
                            for (int64_t ow = lo; ow < hi; ++ow)
                                girow[ow * s.stride[2]] += seg[ow];
                        }
                    }
                }
}

std::vector<Scalar> forward_gemm(const std::vector<Scalar>& in, const std::vector<Scalar>& k,
                                 const ConvDims& d, const ConvSpec& s) {
    int64_t m = d.out_spatial();
    int64_t kt = d.taps();
    std::vector<Scalar> out(static_cast<size_t>(d.N * d.Cout * m));
    std::vector<Scalar> col(static_cast<size_t>(kt * m));
    for (int64_t n = 0; n < d.N; ++n) {
        im2col(in.data() + n * d.Cin * d.D * d.H * d.W, d, s, col.data());
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(d.Cout),
                    static_cast<int>(m), static_cast<int>(kt), 1.0, k.data(),
                    static_cast<int>(kt), col.data(), static_cast<int>(m), 0.0,
                    out.data() + n * d.Cout * m, static_cast<int>(m));
    }
    return out;
}

void backward_gemm(const std::vector<Scalar>& go, const std::vector<Scalar>& in,
                   const std::vector<Scalar>& k, const ConvDims& d, const ConvSpec& s,
                   std::vector<Scalar>* gin, std::vector<Scalar>* gk) {
    int64_t m = d.out_spatial();
    int64_t kt = d.taps();
    std::vector<Scalar> col(static_cast<size_t>(kt * m));
    std::vector<Scalar> colgrad(gin ? static_cast<size_t>(kt * m) : 0);
    for (int64_t n = 0; n < d.N; ++n) {
        const Scalar* gon = go.data() + n * d.Cout * m;
        if (gk) {
            im2col(in.data() + n * d.Cin * d.D * d.H * d.W, d, s, col.data());
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(d.Cout),
                        static_cast<int>(kt), static_cast<int>(m), 1.0, gon,
                        static_cast<int>(m), col.data(), static_cast<int>(m), 1.0, gk->data(),
                        static_cast<int>(kt));
        }
        if (gin) {
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(kt),
                        static_cast<int>(m), static_cast<int>(d.Cout), 1.0, k.data(),
                        static_cast<int>(kt), gon, static_cast<int>(m), 0.0, colgrad.data(),
                        static_cast<int>(m));
            col2im_add(colgrad.data(), d, s, gin->data() + n * d.Cin * d.D * d.H * d.W);
        }
    }
}
#endif  // NFORGE_HAVE_CBLAS

Tensor conv_common(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                   const ConvSpec& spec, bool use_gemm) {
    ConvDims d = check_conv_args(input, kernel, bias, spec);
    std::vector<Scalar> out;
#ifdef NFORGE_HAVE_CBLAS
    if (use_gemm)
        out = forward_gemm(input.values(), kernel.values(), d, spec);
    else
#endif
        out = forward_direct(input.values(), kernel.values(), d, spec);
    (void)use_gemm;
    add_bias(out, bias, d);

    auto in_node = input.node();
    auto k_node = kernel.node();
    auto b_node = bias.defined() ? bias.node() : nullptr;
    std::vector<Tensor> parents{input, kernel};
    if (bias.defined()) parents.push_back(bias);
    return Tensor::from_op(
        Shape{d.N, d.Cout, d.OD, d.OH, d.OW}, std::move(out), std::move(parents),
        [in_node, k_node, b_node, d, spec, use_gemm](detail::TensorData& self) {
            bool want_in = in_node->requires_grad || in_node->on_tape();
            bool want_k = k_node->requires_grad || k_node->on_tape();
            std::vector<Scalar>* gin = want_in ? &in_node->ensure_grad() : nullptr;
            std::vector<Scalar>* gk = want_k ? &k_node->ensure_grad() : nullptr;
#ifdef NFORGE_HAVE_CBLAS
            if (use_gemm)
                backward_gemm(self.grad, in_node->values, k_node->values, d, spec, gin, gk);
            else
#endif
                backward_direct(self.grad, in_node->values, k_node->values, d, spec, gin, gk);
            if (b_node && (b_node->requires_grad || b_node->on_tape())) {
                auto& gb = b_node->ensure_grad();
                int64_t m = d.out_spatial();
                for (int64_t n = 0; n < d.N; ++n)
                    for (int64_t co = 0; co < d.Cout; ++co) {
                        const Scalar* row = self.grad.data() + (n * d.Cout + co) * m;
                        Scalar acc = 0.0;
                        for (int64_t i = 0; i < m; ++i) acc += row[i];
                        gb[static_cast<size_t>(co)] += acc;
                    }
            }
        });
}

}  // namespace

void set_conv_path(ConvPath p) { g_conv_path = p; }
ConvPath conv_path() { return g_conv_path; }

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const ConvSpec& spec) {
    return conv_common(input, kernel, bias, spec, g_conv_path == ConvPath::gemm);
}

Tensor conv3d_direct(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     const ConvSpec& spec) {
    return conv_common(input, kernel, bias, spec, false);
}

Tensor upsample_nearest(const Tensor& input, int64_t factor) {
    if (factor < 1)
        throw std::invalid_argument("upsample_nearest: factor must be >= 1, got " +
                                    std::to_string(factor));
    if (input.shape().rank() != 5)
        throw std::invalid_argument("upsample_nearest: input must be [N,C,D,H,W]");
    int64_t N = input.shape()[0], C = input.shape()[1], D = input.shape()[2],
            H = input.shape()[3], W = input.shape()[4];
    int64_t OD = D * factor, OH = H * factor, OW = W * factor;
    std::vector<Scalar> out(static_cast<size_t>(N * C * OD * OH * OW));
    const auto& in = input.values();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const Scalar* ib = in.data() + nc * D * H * W;
        Scalar* ob = out.data() + nc * OD * OH * OW;
        for (int64_t od = 0; od < OD; ++od)
            for (int64_t oh = 0; oh < OH; ++oh) {
                const Scalar* irow = ib + ((od / factor) * H + oh / factor) * W;
                Scalar* orow = ob + (od * OH + oh) * OW;
                for (int64_t ow = 0; ow < OW; ++ow) orow[ow] = irow[ow / factor];
            }
    }
    auto in_node = input.node();
    return Tensor::from_op(
        Shape{N, C, OD, OH, OW}, std::move(out), {input},
        [in_node, N, C, D, H, W, factor](detail::TensorData& self) {
            auto& gin = in_node->ensure_grad();
            int64_t OD = D * factor, OH = H * factor, OW = W * factor;
            for (int64_t nc = 0; nc < N * C; ++nc) {
                Scalar* gb = gin.data() + nc * D * H * W;
                const Scalar* ob = self.grad.data() + nc * OD * OH * OW;
                for (int64_t od = 0; od < OD; ++od)
                    for (int64_t oh = 0; oh < OH; ++oh) {
                        Scalar* grow = gb + ((od / factor) * H + oh / factor) * W;
                        const Scalar* orow = ob + (od * OH + oh) * OW;
                        for (int64_t ow = 0; ow < OW; ++ow) grow[ow / factor] += orow[ow];
                    }
            }
        });
}

std::array<int64_t, 3> effective_receptive_field(const std::vector<ConvSpec>& layers) {
    if (layers.empty())
        throw std::invalid_argument("effective_receptive_field: empty layer list");
    std::array<int64_t, 3> rf{1, 1, 1};
    for (const auto& l : layers) {
        for (int a = 0; a < 3; ++a) {
            if (l.stride[a] != 1)
                throw std::invalid_argument(
                    "effective_receptive_field: stride > 1 unsupported");
            rf[a] += (l.kernel[a] - 1) * l.dilation[a];
        }
    }
    return rf;
}

}  // namespace nforge
