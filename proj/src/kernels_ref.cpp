#include "dproto/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

// Naive serial implementations: one plainly-written loop nest per output
// element, no pragmas. These act as the correctness oracle for the
// OpenMP kernels and as the baseline in the kernel benchmark.

namespace dproto::kern::ref {

namespace {

inline std::size_t at(int a, int b, int c, int nb, int nc) {
    return (static_cast<std::size_t>(a) * nb + b) * nc + c;
}

}  // namespace

void conv2d_fwd(const double* x, const double* w, const double* bias, double* y,
                int cin, int h, int wd, int cout, int kh, int kw,
                int stride, int pad, int ho, int wo) {
    for (int co = 0; co < cout; ++co) {
        for (int oh = 0; oh < ho; ++oh) {
            for (int ow = 0; ow < wo; ++ow) {
                double acc = bias ? bias[co] : 0.0;
                for (int ci = 0; ci < cin; ++ci) {
                    for (int fh = 0; fh < kh; ++fh) {
                        for (int fw = 0; fw < kw; ++fw) {
                            const int ih = oh * stride + fh - pad;
                            const int iw = ow * stride + fw - pad;
                            if (ih < 0 || ih >= h || iw < 0 || iw >= wd) continue;
                            acc += w[at(co, ci, fh * kw + fw, cin, kh * kw)] *
                                   x[at(ci, ih, iw, h, wd)];
                        }
                    }
                }
                y[at(co, oh, ow, ho, wo)] = acc;
            }
        }
    }
}

void conv2d_bwd_input(const double* gy, const double* w, double* gx,
                      int cin, int h, int wd, int cout, int kh, int kw,
                      int stride, int pad, int ho, int wo) {
    for (int ci = 0; ci < cin; ++ci) {
        for (int ih = 0; ih < h; ++ih) {
            for (int iw = 0; iw < wd; ++iw) {
                double acc = 0.0;
                for (int co = 0; co < cout; ++co) {
                    for (int fh = 0; fh < kh; ++fh) {
                        for (int fw = 0; fw < kw; ++fw) {
                            const int ohn = ih + pad - fh;
                            const int own = iw + pad - fw;
                            if (ohn % stride != 0 || own % stride != 0) continue;
                            const int oh = ohn / stride;
                            const int ow = own / stride;
                            if (oh < 0 || oh >= ho || ow < 0 || ow >= wo) continue;
                            acc += w[at(co, ci, fh * kw + fw, cin, kh * kw)] *
                                   gy[at(co, oh, ow, ho, wo)];
                        }
                    }
                }
                gx[at(ci, ih, iw, h, wd)] += acc;
            }
        }
    }
}

void conv2d_bwd_weight(const double* gy, const double* x, double* gw,
                       int cin, int h, int wd, int cout, int kh, int kw,
                       int stride, int pad, int ho, int wo) {
    for (int co = 0; co < cout; ++co) {
        for (int ci = 0; ci < cin; ++ci) {
            for (int fh = 0; fh < kh; ++fh) {
                for (int fw = 0; fw < kw; ++fw) {
                    double acc = 0.0;
                    for (int oh = 0; oh < ho; ++oh) {
                        for (int ow = 0; ow < wo; ++ow) {
                            const int ih = oh * stride + fh - pad;
                            const int iw = ow * stride + fw - pad;
                            if (ih < 0 || ih >= h || iw < 0 || iw >= wd) continue;
                            acc += gy[at(co, oh, ow, ho, wo)] * x[at(ci, ih, iw, h, wd)];
                        }
                    }
                    gw[at(co, ci, fh * kw + fw, cin, kh * kw)] += acc;
                }
            }
        }
    }
}

void conv2d_bwd_bias(const double* gy, double* gb, int cout, int ho, int wo) {
    for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (int i = 0; i < ho * wo; ++i) {
            acc += gy[static_cast<std::size_t>(co) * ho * wo + i];
        }
        gb[co] += acc;
    }
}

void maxpool2d_fwd(const double* x, double* y, std::int64_t* arg,
                   int c, int h, int wd, int k, int stride, int ho, int wo) {
    for (int ch = 0; ch < c; ++ch) {
        for (int oh = 0; oh < ho; ++oh) {
            for (int ow = 0; ow < wo; ++ow) {
                double best = -std::numeric_limits<double>::infinity();
                std::int64_t bestidx = -1;
                for (int fh = 0; fh < k; ++fh) {
                    for (int fw = 0; fw < k; ++fw) {
                        const int ih = oh * stride + fh;
                        const int iw = ow * stride + fw;
                        if (ih >= h || iw >= wd) continue;
                        const double v = x[at(ch, ih, iw, h, wd)];
                        if (v > best) {
                            best = v;
                            bestidx = static_cast<std::int64_t>(at(ch, ih, iw, h, wd));
                        }
                    }
                }
                y[at(ch, oh, ow, ho, wo)] = best;
                arg[at(ch, oh, ow, ho, wo)] = bestidx;
            }
        }
    }
}

void maxpool2d_bwd(const double* gy, const std::int64_t* arg, double* gx,
                   int c, int h, int wd, int ho, int wo) {
    (void)h;
    (void)wd;
    for (int i = 0; i < c * ho * wo; ++i) {
        gx[arg[i]] += gy[i];
    }
}

void upsample_bilinear_fwd(const double* x, double* y,
                           int c, int h, int wd, int ho, int wo) {
    for (int ch = 0; ch < c; ++ch) {
        for (int oh = 0; oh < ho; ++oh) {
            for (int ow = 0; ow < wo; ++ow) {
                const double sh = resize_src_coord(oh, h, ho);
                const double sw = resize_src_coord(ow, wd, wo);
                const int h0 = static_cast<int>(std::floor(sh));
                const int w0 = static_cast<int>(std::floor(sw));
                const double fh = sh - std::floor(sh);
                const double fw = sw - std::floor(sw);
                const int hlo = std::clamp(h0, 0, h - 1);
                const int hhi = std::clamp(h0 + 1, 0, h - 1);
                const int wlo = std::clamp(w0, 0, wd - 1);
                const int whi = std::clamp(w0 + 1, 0, wd - 1);
                const double top =
                    x[at(ch, hlo, wlo, h, wd)] * (1.0 - fw) + x[at(ch, hlo, whi, h, wd)] * fw;
                const double bot =
                    x[at(ch, hhi, wlo, h, wd)] * (1.0 - fw) + x[at(ch, hhi, whi, h, wd)] * fw;
                y[at(ch, oh, ow, ho, wo)] = top * (1.0 - fh) + bot * fh;
            }
        }
    }
}

void upsample_bilinear_bwd(const double* gy, double* gx,
                           int c, int h, int wd, int ho, int wo) {
    for (int ch = 0; ch < c; ++ch) {
        for (int oh = 0; oh < ho; ++oh) {
            for (int ow = 0; ow < wo; ++ow) {
                const double sh = resize_src_coord(oh, h, ho);
                const double sw = resize_src_coord(ow, wd, wo);
                const int h0 = static_cast<int>(std::floor(sh));
                const int w0 = static_cast<int>(std::floor(sw));
                const double fh = sh - std::floor(sh);
                const double fw = sw - std::floor(sw);
                const int hlo = std::clamp(h0, 0, h - 1);
                const int hhi = std::clamp(h0 + 1, 0, h - 1);
                const int wlo = std::clamp(w0, 0, wd - 1);
                const int whi = std::clamp(w0 + 1, 0, wd - 1);
                const double g = gy[at(ch, oh, ow, ho, wo)];
                gx[at(ch, hlo, wlo, h, wd)] += g * (1.0 - fh) * (1.0 - fw);
                gx[at(ch, hlo, whi, h, wd)] += g * (1.0 - fh) * fw;
                gx[at(ch, hhi, wlo, h, wd)] += g * fh * (1.0 - fw);
                gx[at(ch, hhi, whi, h, wd)] += g * fh * fw;
            }
        }
    }
}

void matmul_fwd(const double* a, const double* b, double* y, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) {
                acc += a[static_cast<std::size_t>(i) * k + kk] *
                       b[static_cast<std::size_t>(kk) * n + j];
            }
            y[static_cast<std::size_t>(i) * n + j] = acc;
        }
    }
}

void matmul_bwd_a(const double* gy, const double* b, double* ga, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) {
                acc += gy[static_cast<std::size_t>(i) * n + j] *
                       b[static_cast<std::size_t>(kk) * n + j];
            }
            ga[static_cast<std::size_t>(i) * k + kk] += acc;
        }
    }
}

void matmul_bwd_b(const double* gy, const double* a, double* gb, int m, int k, int n) {
    for (int kk = 0; kk < k; ++kk) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i) {
                acc += a[static_cast<std::size_t>(i) * k + kk] *
                       gy[static_cast<std::size_t>(i) * n + j];
            }
            gb[static_cast<std::size_t>(kk) * n + j] += acc;
        }
    }
}

void masked_gap_fwd(const double* feat, const double* masks, double* z,
                    int nmask, int d, int hw) {
    for (int i = 0; i < nmask; ++i) {
        for (int dd = 0; dd < d; ++dd) {
            double acc = 0.0;
            for (int s = 0; s < hw; ++s) {
                acc += masks[(static_cast<std::size_t>(i) * d + dd) * hw + s] *
                       feat[static_cast<std::size_t>(dd) * hw + s];
            }
            z[static_cast<std::size_t>(i) * d + dd] = acc / hw;
        }
    }
}

void masked_gap_bwd_feat(const double* gz, const double* masks, double* gfeat,
                         int nmask, int d, int hw) {
    for (int dd = 0; dd < d; ++dd) {
        for (int s = 0; s < hw; ++s) {
            double acc = 0.0;
            for (int i = 0; i < nmask; ++i) {
                acc += gz[static_cast<std::size_t>(i) * d + dd] *
                       masks[(static_cast<std::size_t>(i) * d + dd) * hw + s];
            }
            gfeat[static_cast<std::size_t>(dd) * hw + s] += acc / hw;
        }
    }
}

void masked_gap_bwd_mask(const double* gz, const double* feat, double* gmask,
                         int nmask, int d, int hw) {
    for (int i = 0; i < nmask; ++i) {
        for (int dd = 0; dd < d; ++dd) {
            for (int s = 0; s < hw; ++s) {
                gmask[(static_cast<std::size_t>(i) * d + dd) * hw + s] +=
                    gz[static_cast<std::size_t>(i) * d + dd] *
                    feat[static_cast<std::size_t>(dd) * hw + s] / hw;
            }
        }
    }
}

void pairwise_sqdist_fwd(const double* z, const double* p, double* s,
                         int n, int k, int d) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int dd = 0; dd < d; ++dd) {
                const double diff = z[static_cast<std::size_t>(i) * d + dd] -
                                    p[static_cast<std::size_t>(j) * d + dd];
                acc += diff * diff;
            }
            s[static_cast<std::size_t>(i) * k + j] = acc;
        }
    }
}

void pairwise_sqdist_bwd_z(const double* gs, const double* z, const double* p,
                           double* gz, int n, int k, int d) {
    for (int i = 0; i < n; ++i) {
        for (int dd = 0; dd < d; ++dd) {
            double acc = 0.0;
            for (int j = 0; j < k; ++j) {
                acc += 2.0 * gs[static_cast<std::size_t>(i) * k + j] *
                       (z[static_cast<std::size_t>(i) * d + dd] -
                        p[static_cast<std::size_t>(j) * d + dd]);
            }
            gz[static_cast<std::size_t>(i) * d + dd] += acc;
        }
    }
}

void pairwise_sqdist_bwd_p(const double* gs, const double* z, const double* p,
                           double* gp, int n, int k, int d) {
    for (int j = 0; j < k; ++j) {
        for (int dd = 0; dd < d; ++dd) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += -2.0 * gs[static_cast<std::size_t>(i) * k + j] *
                       (z[static_cast<std::size_t>(i) * d + dd] -
                        p[static_cast<std::size_t>(j) * d + dd]);
            }
            gp[static_cast<std::size_t>(j) * d + dd] += acc;
        }
    }
}

}  // namespace dproto::kern::ref
