#pragma once

#include <map>
#include <string>
#include <vector>

#include "conv.hpp"
#include "tensor.hpp"

namespace nforge {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Per-channel normalization over batch + spatial axes with learned scale and
// shift. Running statistics are tracked in train mode and used in eval mode.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 std::vector<Scalar>& running_mean, std::vector<Scalar>& running_var,
                 bool train, Scalar momentum = 0.1, Scalar eps = 1e-5);

// Kaiming fan-in init for conv/FC weights, zeros for biases.
Tensor kaiming_conv_weight(int64_t cout, int64_t cin, const std::array<int64_t, 3>& kernel,
                           std::mt19937_64& rng);
Tensor kaiming_fc_weight(int64_t in_features, int64_t out_features, std::mt19937_64& rng);

struct Conv3dLayer {
    Tensor weight;  // [Cout,Cin,kd,kh,kw]
    Tensor bias;    // [Cout]
    ConvSpec spec;

    static Conv3dLayer make(int64_t cin, int64_t cout, const ConvSpec& spec,
                            std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const { return conv3d(x, weight, bias, spec); }
    void params(const std::string& prefix, std::vector<NamedTensor>& out);
};

struct BatchNorm3d {
    Tensor gamma;  // [C], init 1
    Tensor beta;   // [C], init 0
    std::vector<Scalar> running_mean;
    std::vector<Scalar> running_var;

    static BatchNorm3d make(int64_t channels);
    Tensor forward(const Tensor& x, bool train) {
        return batchnorm(x, gamma, beta, running_mean, running_var, train);
    }
    void params(const std::string& prefix, std::vector<NamedTensor>& out);
    // Running stats ride along in checkpoints as plain tensors.
    void buffers(const std::string& prefix, std::vector<NamedTensor>& out);
    void load_buffers(const std::string& prefix, const std::map<std::string, Tensor>& src);
};

struct LinearLayer {
    Tensor weight;  // [in,out]
    Tensor bias;    // [out]

    static LinearLayer make(int64_t in_features, int64_t out_features, std::mt19937_64& rng);
    // Final prediction layers start at zero so untrained scores sit at
    // sigmoid(0) and deltas at 0.
    static LinearLayer zeros(int64_t in_features, int64_t out_features);
    Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
    void params(const std::string& prefix, std::vector<NamedTensor>& out);
};

// Conv + BN + ReLU block used throughout the backbones. BN is optional.
struct ConvBlock {
    Conv3dLayer conv;
    BatchNorm3d bn;
    bool use_bn = true;

    static ConvBlock make(int64_t cin, int64_t cout, const ConvSpec& spec, bool use_bn,
                          std::mt19937_64& rng);
    Tensor forward(const Tensor& x, bool train) {
        Tensor y = conv.forward(x);
        if (use_bn) y = bn.forward(y, train);
        return relu(y);
    }
    void params(const std::string& prefix, std::vector<NamedTensor>& out);
    void buffers(const std::string& prefix, std::vector<NamedTensor>& out);
    void load_buffers(const std::string& prefix, const std::map<std::string, Tensor>& src);
};

}  // namespace nforge
