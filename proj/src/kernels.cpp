#include "dproto/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace dproto::kern {

namespace {

inline std::size_t idx3(int a, int b, int c, int nb, int nc) {
    return (static_cast<std::size_t>(a) * nb + b) * nc + c;
}

// Bilinear tap table for one axis: clamped lower/upper indices and the
// fractional weight of the upper tap.
struct ResizeTaps {
    std::vector<int> lo, hi;
    std::vector<double> t;
};

ResizeTaps resize_taps(int in_extent, int out_extent) {
    ResizeTaps taps;
    taps.lo.resize(out_extent);
    taps.hi.resize(out_extent);
    taps.t.resize(out_extent);
    for (int i = 0; i < out_extent; ++i) {
        const double src = resize_src_coord(i, in_extent, out_extent);
        const double f = std::floor(src);
        const int i0 = static_cast<int>(f);
        taps.t[i] = src - f;
        taps.lo[i] = std::clamp(i0, 0, in_extent - 1);
        taps.hi[i] = std::clamp(i0 + 1, 0, in_extent - 1);
    }
    return taps;
}

}  // namespace

void conv2d_fwd(const double* x, const double* w, const double* bias, double* y,
                int cin, int h, int wd, int cout, int kh, int kw,
                int stride, int pad, int ho, int wo) {
    const bool fast3 = kh == 3 && kw == 3 && stride == 1 && pad == 1 &&
                       ho == h && wo == wd && wd >= 4;
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < cout; ++co) {
        for (int oh = 0; oh < ho; ++oh) {
            double* yrow = y + idx3(co, oh, 0, ho, wo);
            const double b0 = bias ? bias[co] : 0.0;
            for (int ow = 0; ow < wo; ++ow) yrow[ow] = b0;
            for (int ci = 0; ci < cin; ++ci) {
                const double* xc = x + static_cast<std::size_t>(ci) * h * wd;
                const double* wk = w + idx3(co, ci, 0, cin, kh * kw);
                if (fast3) {
                    for (int fh = 0; fh < 3; ++fh) {
                        const int ih = oh + fh - 1;
                        if (ih < 0 || ih >= h) continue;
                        const double* xr = xc + static_cast<std::size_t>(ih) * wd;
                        const double w0 = wk[fh * 3 + 0];
                        const double w1 = wk[fh * 3 + 1];
                        const double w2 = wk[fh * 3 + 2];
                        yrow[0] += w1 * xr[0] + w2 * xr[1];
#pragma omp simd
                        for (int ow = 1; ow < wo - 1; ++ow) {
                            yrow[ow] += w0 * xr[ow - 1] + w1 * xr[ow] + w2 * xr[ow + 1];
                        }
                        yrow[wo - 1] += w0 * xr[wo - 2] + w1 * xr[wo - 1];
                    }
                    continue;
                }
                for (int fh = 0; fh < kh; ++fh) {
                    const int ih = oh * stride + fh - pad;
                    if (ih < 0 || ih >= h) continue;
                    const double* xr = xc + static_cast<std::size_t>(ih) * wd;
                    for (int fw = 0; fw < kw; ++fw) {
                        const double wv = wk[fh * kw + fw];
                        if (stride == 1) {
                            const int lo = std::max(0, pad - fw);
                            const int hi = std::min(wo, wd + pad - fw);
                            const double* xs = xr + fw - pad;
#pragma omp simd
                            for (int ow = lo; ow < hi; ++ow) yrow[ow] += wv * xs[ow];
                        } else {
                            for (int ow = 0; ow < wo; ++ow) {
                                const int iw = ow * stride + fw - pad;
                                if (iw >= 0 && iw < wd) yrow[ow] += wv * xr[iw];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_bwd_input(const double* gy, const double* w, double* gx,
                      int cin, int h, int wd, int cout, int kh, int kw,
                      int stride, int pad, int ho, int wo) {
    const bool fast3 = kh == 3 && kw == 3 && stride == 1 && pad == 1 &&
                       ho == h && wo == wd && wd >= 4;
#pragma omp parallel for collapse(2) schedule(static)
    for (int ci = 0; ci < cin; ++ci) {
        for (int ih = 0; ih < h; ++ih) {
            double* gxr = gx + idx3(ci, ih, 0, h, wd);
            for (int co = 0; co < cout; ++co) {
                const double* wk = w + idx3(co, ci, 0, cin, kh * kw);
                const double* gc = gy + static_cast<std::size_t>(co) * ho * wo;
                if (fast3) {
                    for (int fh = 0; fh < 3; ++fh) {
                        const int oh = ih + 1 - fh;
                        if (oh < 0 || oh >= ho) continue;
                        const double* gr = gc + static_cast<std::size_t>(oh) * wo;
                        const double w0 = wk[fh * 3 + 0];
                        const double w1 = wk[fh * 3 + 1];
                        const double w2 = wk[fh * 3 + 2];
                        gxr[0] += w0 * gr[1] + w1 * gr[0];
#pragma omp simd
                        for (int iw = 1; iw < wd - 1; ++iw) {
                            gxr[iw] += w0 * gr[iw + 1] + w1 * gr[iw] + w2 * gr[iw - 1];
                        }
                        gxr[wd - 1] += w1 * gr[wd - 1] + w2 * gr[wd - 2];
                    }
                    continue;
                }
                for (int fh = 0; fh < kh; ++fh) {
                    const int oh_num = ih + pad - fh;
                    if (stride == 1) {
                        const int oh = oh_num;
                        if (oh < 0 || oh >= ho) continue;
                        const double* gr = gc + static_cast<std::size_t>(oh) * wo;
                        for (int fw = 0; fw < kw; ++fw) {
                            const double wv = wk[fh * kw + fw];
                            const int lo = std::max(0, fw - pad);
                            const int hi = std::min(wd, wo + fw - pad);
                            const double* gs = gr + pad - fw;
#pragma omp simd
                            for (int iw = lo; iw < hi; ++iw) gxr[iw] += wv * gs[iw];
                        }
                    } else {
                        if (oh_num % stride != 0) continue;
                        const int oh = oh_num / stride;
                        if (oh < 0 || oh >= ho) continue;
                        const double* gr = gc + static_cast<std::size_t>(oh) * wo;
                        for (int fw = 0; fw < kw; ++fw) {
                            const double wv = wk[fh * kw + fw];
                            for (int iw = 0; iw < wd; ++iw) {
                                const int ow_num = iw + pad - fw;
                                if (ow_num % stride != 0) continue;
                                const int ow = ow_num / stride;
                                if (ow >= 0 && ow < wo) gxr[iw] += wv * gr[ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_bwd_weight(const double* gy, const double* x, double* gw,
                       int cin, int h, int wd, int cout, int kh, int kw,
                       int stride, int pad, int ho, int wo) {
    const bool fast3 = kh == 3 && kw == 3 && stride == 1 && pad == 1 &&
                       ho == h && wo == wd && wd >= 4;
    if (fast3) {
        // One sweep over gy per (co, ci) with the nine tap sums carried in
        // registers, instead of nine separate sweeps.
#pragma omp parallel for collapse(2) schedule(static)
        for (int co = 0; co < cout; ++co) {
            for (int ci = 0; ci < cin; ++ci) {
                const double* gc = gy + static_cast<std::size_t>(co) * ho * wo;
                const double* xc = x + static_cast<std::size_t>(ci) * h * wd;
                double acc[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
                for (int oh = 0; oh < ho; ++oh) {
                    const double* gr = gc + static_cast<std::size_t>(oh) * wo;
                    for (int fh = 0; fh < 3; ++fh) {
                        const int ih = oh + fh - 1;
                        if (ih < 0 || ih >= h) continue;
                        const double* xr = xc + static_cast<std::size_t>(ih) * wd;
                        double s0 = 0.0, s1 = 0.0, s2 = 0.0;
#pragma omp simd reduction(+ : s0, s1, s2)
                        for (int ow = 1; ow < wo - 1; ++ow) {
                            const double g = gr[ow];
                            s0 += g * xr[ow - 1];
                            s1 += g * xr[ow];
                            s2 += g * xr[ow + 1];
                        }
                        s1 += gr[0] * xr[0];
                        s2 += gr[0] * xr[1];
                        s0 += gr[wo - 1] * xr[wo - 2];
                        s1 += gr[wo - 1] * xr[wo - 1];
                        acc[fh * 3 + 0] += s0;
                        acc[fh * 3 + 1] += s1;
                        acc[fh * 3 + 2] += s2;
                    }
                }
                double* gwk = gw + idx3(co, ci, 0, cin, 9);
                for (int t = 0; t < 9; ++t) gwk[t] += acc[t];
            }
        }
        return;
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < cout; ++co) {
        for (int ci = 0; ci < cin; ++ci) {
            double* gwk = gw + idx3(co, ci, 0, cin, kh * kw);
            const double* gc = gy + static_cast<std::size_t>(co) * ho * wo;
            const double* xc = x + static_cast<std::size_t>(ci) * h * wd;
            for (int fh = 0; fh < kh; ++fh) {
                for (int fw = 0; fw < kw; ++fw) {
                    double acc = 0.0;
                    for (int oh = 0; oh < ho; ++oh) {
                        const int ih = oh * stride + fh - pad;
                        if (ih < 0 || ih >= h) continue;
                        const double* gr = gc + static_cast<std::size_t>(oh) * wo;
                        const double* xr = xc + static_cast<std::size_t>(ih) * wd;
                        if (stride == 1) {
                            const int lo = std::max(0, pad - fw);
                            const int hi = std::min(wo, wd + pad - fw);
                            const double* xs = xr + fw - pad;
                            double rowacc = 0.0;
#pragma omp simd reduction(+ : rowacc)
                            for (int ow = lo; ow < hi; ++ow) rowacc += gr[ow] * xs[ow];
                            acc += rowacc;
                        } else {
                            for (int ow = 0; ow < wo; ++ow) {
                                const int iw = ow * stride + fw - pad;
                                if (iw >= 0 && iw < wd) acc += gr[ow] * xr[iw];
                            }
                        }
                    }
                    gwk[fh * kw + fw] += acc;
                }
            }
        }
    }
}

void conv2d_bwd_bias(const double* gy, double* gb, int cout, int ho, int wo) {
    const int hw = ho * wo;
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        const double* gc = gy + static_cast<std::size_t>(co) * hw;
        double acc = 0.0;
#pragma omp simd reduction(+ : acc)
        for (int i = 0; i < hw; ++i) acc += gc[i];
        gb[co] += acc;
    }
}

void maxpool2d_fwd(const double* x, double* y, std::int64_t* arg,
                   int c, int h, int wd, int k, int stride, int ho, int wo) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        for (int oh = 0; oh < ho; ++oh) {
            const double* xc = x + static_cast<std::size_t>(ch) * h * wd;
            for (int ow = 0; ow < wo; ++ow) {
                double best = -std::numeric_limits<double>::infinity();
                std::int64_t bestidx = -1;
                for (int fh = 0; fh < k; ++fh) {
                    const int ih = oh * stride + fh;
                    if (ih >= h) continue;
                    for (int fw = 0; fw < k; ++fw) {
                        const int iw = ow * stride + fw;
                        if (iw >= wd) continue;
                        const double v = xc[static_cast<std::size_t>(ih) * wd + iw];
                        if (v > best) {
                            best = v;
                            bestidx = static_cast<std::int64_t>(ch) * h * wd + ih * wd + iw;
                        }
                    }
                }
                const std::size_t o = idx3(ch, oh, ow, ho, wo);
                y[o] = best;
                arg[o] = bestidx;
            }
        }
    }
}

void maxpool2d_bwd(const double* gy, const std::int64_t* arg, double* gx,
                   int c, int h, int wd, int ho, int wo) {
    // Scatter stays inside one channel, so parallelizing over channels keeps
    // each gx element owned by a single thread.
    (void)h;
    (void)wd;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = static_cast<std::size_t>(ch) * ho * wo;
        for (int i = 0; i < ho * wo; ++i) {
            gx[arg[base + i]] += gy[base + i];
        }
    }
}

void upsample_bilinear_fwd(const double* x, double* y,
                           int c, int h, int wd, int ho, int wo) {
    const ResizeTaps th = resize_taps(h, ho);
    const ResizeTaps tw = resize_taps(wd, wo);
#pragma omp parallel for collapse(2) schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        for (int oh = 0; oh < ho; ++oh) {
            const double* xc = x + static_cast<std::size_t>(ch) * h * wd;
            const double* r0 = xc + static_cast<std::size_t>(th.lo[oh]) * wd;
            const double* r1 = xc + static_cast<std::size_t>(th.hi[oh]) * wd;
            const double fh = th.t[oh];
            double* yr = y + idx3(ch, oh, 0, ho, wo);
            for (int ow = 0; ow < wo; ++ow) {
                const double fw = tw.t[ow];
                const double top = r0[tw.lo[ow]] * (1.0 - fw) + r0[tw.hi[ow]] * fw;
                const double bot = r1[tw.lo[ow]] * (1.0 - fw) + r1[tw.hi[ow]] * fw;
                yr[ow] = top * (1.0 - fh) + bot * fh;
            }
        }
    }
}

void upsample_bilinear_bwd(const double* gy, double* gx,
                           int c, int h, int wd, int ho, int wo) {
    const ResizeTaps th = resize_taps(h, ho);
    const ResizeTaps tw = resize_taps(wd, wo);
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        double* gc = gx + static_cast<std::size_t>(ch) * h * wd;
        for (int oh = 0; oh < ho; ++oh) {
            const double fh = th.t[oh];
            double* g0 = gc + static_cast<std::size_t>(th.lo[oh]) * wd;
            double* g1 = gc + static_cast<std::size_t>(th.hi[oh]) * wd;
            const double* gr = gy + idx3(ch, oh, 0, ho, wo);
            for (int ow = 0; ow < wo; ++ow) {
                const double fw = tw.t[ow];
                const double g = gr[ow];
                g0[tw.lo[ow]] += g * (1.0 - fh) * (1.0 - fw);
                g0[tw.hi[ow]] += g * (1.0 - fh) * fw;
                g1[tw.lo[ow]] += g * fh * (1.0 - fw);
                g1[tw.hi[ow]] += g * fh * fw;
            }
        }
    }
}

void matmul_fwd(const double* a, const double* b, double* y, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* yr = y + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) yr[j] = 0.0;
        const double* ar = a + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double av = ar[kk];
            const double* br = b + static_cast<std::size_t>(kk) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) yr[j] += av * br[j];
        }
    }
}

void matmul_bwd_a(const double* gy, const double* b, double* ga, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const double* gr = gy + static_cast<std::size_t>(i) * n;
        double* gar = ga + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double* br = b + static_cast<std::size_t>(kk) * n;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (int j = 0; j < n; ++j) acc += gr[j] * br[j];
            gar[kk] += acc;
        }
    }
}

void matmul_bwd_b(const double* gy, const double* a, double* gb, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int kk = 0; kk < k; ++kk) {
        double* gbr = gb + static_cast<std::size_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
            const double av = a[static_cast<std::size_t>(i) * k + kk];
            const double* gr = gy + static_cast<std::size_t>(i) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) gbr[j] += av * gr[j];
        }
    }
}

void masked_gap_fwd(const double* feat, const double* masks, double* z,
                    int nmask, int d, int hw) {
    const double inv = 1.0 / hw;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nmask; ++i) {
        const double* mi = masks + static_cast<std::size_t>(i) * d * hw;
        double* zi = z + static_cast<std::size_t>(i) * d;
        for (int dd = 0; dd < d; ++dd) {
            const double* mr = mi + static_cast<std::size_t>(dd) * hw;
            const double* fr = feat + static_cast<std::size_t>(dd) * hw;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (int s = 0; s < hw; ++s) acc += mr[s] * fr[s];
            zi[dd] = acc * inv;
        }
    }
}

void masked_gap_bwd_feat(const double* gz, const double* masks, double* gfeat,
                         int nmask, int d, int hw) {
    const double inv = 1.0 / hw;
#pragma omp parallel for schedule(static)
    for (int dd = 0; dd < d; ++dd) {
        double* gr = gfeat + static_cast<std::size_t>(dd) * hw;
        for (int i = 0; i < nmask; ++i) {
            const double coef = gz[static_cast<std::size_t>(i) * d + dd] * inv;
            const double* mr = masks + (static_cast<std::size_t>(i) * d + dd) * hw;
#pragma omp simd
            for (int s = 0; s < hw; ++s) gr[s] += coef * mr[s];
        }
    }
}

void masked_gap_bwd_mask(const double* gz, const double* feat, double* gmask,
                         int nmask, int d, int hw) {
    const double inv = 1.0 / hw;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nmask; ++i) {
        for (int dd = 0; dd < d; ++dd) {
            const double coef = gz[static_cast<std::size_t>(i) * d + dd] * inv;
            double* gr = gmask + (static_cast<std::size_t>(i) * d + dd) * hw;
            const double* fr = feat + static_cast<std::size_t>(dd) * hw;
#pragma omp simd
            for (int s = 0; s < hw; ++s) gr[s] += coef * fr[s];
        }
    }
}

void pairwise_sqdist_fwd(const double* z, const double* p, double* s,
                         int n, int k, int d) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* zi = z + static_cast<std::size_t>(i) * d;
        double* si = s + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            const double* pj = p + static_cast<std::size_t>(j) * d;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (int dd = 0; dd < d; ++dd) {
                const double diff = zi[dd] - pj[dd];
                acc += diff * diff;
            }
            si[j] = acc;
        }
    }
}

void pairwise_sqdist_bwd_z(const double* gs, const double* z, const double* p,
                           double* gz, int n, int k, int d) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* zi = z + static_cast<std::size_t>(i) * d;
        const double* gsi = gs + static_cast<std::size_t>(i) * k;
        double* gzi = gz + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < k; ++j) {
            const double coef = 2.0 * gsi[j];
            const double* pj = p + static_cast<std::size_t>(j) * d;
#pragma omp simd
            for (int dd = 0; dd < d; ++dd) gzi[dd] += coef * (zi[dd] - pj[dd]);
        }
    }
}

void pairwise_sqdist_bwd_p(const double* gs, const double* z, const double* p,
                           double* gp, int n, int k, int d) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < k; ++j) {
        const double* pj = p + static_cast<std::size_t>(j) * d;
        double* gpj = gp + static_cast<std::size_t>(j) * d;
        for (int i = 0; i < n; ++i) {
            const double coef = -2.0 * gs[static_cast<std::size_t>(i) * k + j];
            const double* zi = z + static_cast<std::size_t>(i) * d;
#pragma omp simd
            for (int dd = 0; dd < d; ++dd) gpj[dd] += coef * (zi[dd] - pj[dd]);
        }
    }
}

}  // namespace dproto::kern
