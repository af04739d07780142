#pragma once

#include <cstddef>
#include <cstdint>

// Dense float64 compute kernels. Layouts are row-major: images/feature maps
// are CHW, conv weights are [cout][cin][kh][kw], mask pools are [n][d][h*w].
//
// Every kernel is written in gather form: each output element is produced by
// exactly one thread with a fixed inner accumulation order, so results are
// bit-identical for any OpenMP thread count. Backward kernels accumulate
// (+=) into their gradient buffers.
//
// dproto::kern holds the OpenMP-parallel implementations used everywhere;
// dproto::kern::ref holds naive serial versions kept as a test oracle and
// for the kernel benchmark.

namespace dproto::kern {

void conv2d_fwd(const double* x, const double* w, const double* bias, double* y,
                int cin, int h, int wd, int cout, int kh, int kw,
                int stride, int pad, int ho, int wo);
void conv2d_bwd_input(const double* gy, const double* w, double* gx,
                      int cin, int h, int wd, int cout, int kh, int kw,
                      int stride, int pad, int ho, int wo);
void conv2d_bwd_weight(const double* gy, const double* x, double* gw,
                       int cin, int h, int wd, int cout, int kh, int kw,
                       int stride, int pad, int ho, int wo);
void conv2d_bwd_bias(const double* gy, double* gb, int cout, int ho, int wo);

void maxpool2d_fwd(const double* x, double* y, std::int64_t* arg,
                   int c, int h, int wd, int k, int stride, int ho, int wo);
void maxpool2d_bwd(const double* gy, const std::int64_t* arg, double* gx,
                   int c, int h, int wd, int ho, int wo);

void upsample_bilinear_fwd(const double* x, double* y,
                           int c, int h, int wd, int ho, int wo);
void upsample_bilinear_bwd(const double* gy, double* gx,
                           int c, int h, int wd, int ho, int wo);

void matmul_fwd(const double* a, const double* b, double* y, int m, int k, int n);
void matmul_bwd_a(const double* gy, const double* b, double* ga, int m, int k, int n);
void matmul_bwd_b(const double* gy, const double* a, double* gb, int m, int k, int n);

// z[i][d] = mean over spatial s of masks[i][d][s] * feat[d][s]  (hw = h*w)
void masked_gap_fwd(const double* feat, const double* masks, double* z,
                    int nmask, int d, int hw);
void masked_gap_bwd_feat(const double* gz, const double* masks, double* gfeat,
                         int nmask, int d, int hw);
void masked_gap_bwd_mask(const double* gz, const double* feat, double* gmask,
                         int nmask, int d, int hw);

// s[i][j] = squared L2 distance between z[i] and p[j]
void pairwise_sqdist_fwd(const double* z, const double* p, double* s,
                         int n, int k, int d);
void pairwise_sqdist_bwd_z(const double* gs, const double* z, const double* p,
                           double* gz, int n, int k, int d);
void pairwise_sqdist_bwd_p(const double* gs, const double* z, const double* p,
                           double* gp, int n, int k, int d);

namespace ref {

void conv2d_fwd(const double* x, const double* w, const double* bias, double* y,
                int cin, int h, int wd, int cout, int kh, int kw,
                int stride, int pad, int ho, int wo);
void conv2d_bwd_input(const double* gy, const double* w, double* gx,
                      int cin, int h, int wd, int cout, int kh, int kw,
                      int stride, int pad, int ho, int wo);
void conv2d_bwd_weight(const double* gy, const double* x, double* gw,
                       int cin, int h, int wd, int cout, int kh, int kw,
                       int stride, int pad, int ho, int wo);
void conv2d_bwd_bias(const double* gy, double* gb, int cout, int ho, int wo);

void maxpool2d_fwd(const double* x, double* y, std::int64_t* arg,
                   int c, int h, int wd, int k, int stride, int ho, int wo);
void maxpool2d_bwd(const double* gy, const std::int64_t* arg, double* gx,
                   int c, int h, int wd, int ho, int wo);

void upsample_bilinear_fwd(const double* x, double* y,
                           int c, int h, int wd, int ho, int wo);
void upsample_bilinear_bwd(const double* gy, double* gx,
                           int c, int h, int wd, int ho, int wo);

void matmul_fwd(const double* a, const double* b, double* y, int m, int k, int n);
void matmul_bwd_a(const double* gy, const double* b, double* ga, int m, int k, int n);
void matmul_bwd_b(const double* gy, const double* a, double* gb, int m, int k, int n);

void masked_gap_fwd(const double* feat, const double* masks, double* z,
                    int nmask, int d, int hw);
void masked_gap_bwd_feat(const double* gz, const double* masks, double* gfeat,
                         int nmask, int d, int hw);
void masked_gap_bwd_mask(const double* gz, const double* feat, double* gmask,
                         int nmask, int d, int hw);

void pairwise_sqdist_fwd(const double* z, const double* p, double* s,
                         int n, int k, int d);
void pairwise_sqdist_bwd_z(const double* gs, const double* z, const double* p,
                           double* gz, int n, int k, int d);
void pairwise_sqdist_bwd_p(const double* gs, const double* z, const double* p,
                           double* gp, int n, int k, int d);

}  // namespace ref

// Shared by both implementations: bilinear source coordinate for
// align-corners=false resizing, before edge clamping.
inline double resize_src_coord(int dst, int in_extent, int out_extent) {
    const double scale = static_cast<double>(in_extent) / static_cast<double>(out_extent);
    return (static_cast<double>(dst) + 0.5) * scale - 0.5;
}

}  // namespace dproto::kern
