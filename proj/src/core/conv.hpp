#pragma once

#include <array>

#include "tensor.hpp"

namespace nforge {

// Per-axis geometry of a 3-D convolution. Axis order: depth, height, width.
struct ConvSpec {
    std::array<int64_t, 3> kernel{3, 3, 3};
    std::array<int64_t, 3> stride{1, 1, 1};
    std::array<int64_t, 3> dilation{1, 1, 1};
    std::array<int64_t, 3> padding{0, 0, 0};

    static ConvSpec same(int64_t kernel, int64_t dilation = 1, int64_t stride = 1);

    // floor((in + 2*pad - (dilation*(kernel-1)+1)) / stride) + 1, per axis.
    int64_t out_extent(int axis, int64_t in) const;
    void validate() const;
};

// Dilated cross-correlation of input [N,Cin,D,H,W] with kernel
// [Cout,Cin,kd,kh,kw]; zero padding; differentiable w.r.t. both.
// bias may be undefined; when defined it is [Cout], added per channel.
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const ConvSpec& spec);

// Reference direct-summation path, tap-major accumulation order. The default
// path routes through im2col + BLAS when available; tests pin the two
// together.
Tensor conv3d_direct(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     const ConvSpec& spec);

// Selects the conv execution path. Gemm falls back to direct when the build
// has no BLAS.
enum class ConvPath { direct, gemm };
void set_conv_path(ConvPath p);
ConvPath conv_path();

// Voxel replication by an integer factor along D,H,W; gradient sums over the
// replicated positions.
Tensor upsample_nearest(const Tensor& input, int64_t factor);

// RF_0 = 1, RF_n = RF_{n-1} + (kernel_n - 1) * dilation_n, per axis.
// Stride > 1 in any layer is rejected.
std::array<int64_t, 3> effective_receptive_field(const std::vector<ConvSpec>& layers);

}  // namespace nforge
