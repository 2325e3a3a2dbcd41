#include "nn.hpp"

#include <cmath>
#include <stdexcept>

namespace nforge {

Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 std::vector<Scalar>& running_mean, std::vector<Scalar>& running_var,
                 bool train, Scalar momentum, Scalar eps) {
    if (input.shape().rank() != 5)
        throw std::invalid_argument("batchnorm: input must be [N,C,D,H,W]");
    int64_t N = input.shape()[0], C = input.shape()[1];
    int64_t spatial = input.shape()[2] * input.shape()[3] * input.shape()[4];
    if (gamma.shape()[0] != C || beta.shape()[0] != C)
        throw std::invalid_argument("batchnorm: scale/shift channel mismatch");
    if (static_cast<int64_t>(running_mean.size()) != C)
        throw std::invalid_argument("batchnorm: running stats channel mismatch");

    const auto& in = input.values();
    int64_t per_ch = N * spatial;

    std::vector<Scalar> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
    if (train) {
        for (int64_t c = 0; c < C; ++c) {
            Scalar s = 0.0;
            for (int64_t n = 0; n < N; ++n) {
                const Scalar* row = in.data() + (n * C + c) * spatial;
                for (int64_t i = 0; i < spatial; ++i) s += row[i];
            }
            Scalar m = s / static_cast<Scalar>(per_ch);
            Scalar v = 0.0;
            for (int64_t n = 0; n < N; ++n) {
                const Scalar* row = in.data() + (n * C + c) * spatial;
                for (int64_t i = 0; i < spatial; ++i) {
                    Scalar d = row[i] - m;
                    v += d * d;
                }
            }
            v /= static_cast<Scalar>(per_ch);
            mean[static_cast<size_t>(c)] = m;
            var[static_cast<size_t>(c)] = v;
            running_mean[static_cast<size_t>(c)] =
                (1.0 - momentum) * running_mean[static_cast<size_t>(c)] + momentum * m;
            running_var[static_cast<size_t>(c)] =
                (1.0 - momentum) * running_var[static_cast<size_t>(c)] + momentum * v;
        }
    } else {
        mean.assign(running_mean.begin(), running_mean.end());
        var.assign(running_var.begin(), running_var.end());
    }

    std::vector<Scalar> inv_std(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c)
        inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);

    std::vector<Scalar> xhat(in.size());
    std::vector<Scalar> out(in.size());
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const Scalar* row = in.data() + (n * C + c) * spatial;
            Scalar* xh = xhat.data() + (n * C + c) * spatial;
            Scalar* o = out.data() + (n * C + c) * spatial;
            Scalar m = mean[static_cast<size_t>(c)], is = inv_std[static_cast<size_t>(c)];
            Scalar g = gamma.values()[static_cast<size_t>(c)],
                   b = beta.values()[static_cast<size_t>(c)];
            for (int64_t i = 0; i < spatial; ++i) {
                xh[i] = (row[i] - m) * is;
                o[i] = g * xh[i] + b;
            }
        }

    auto in_node = input.node();
    auto g_node = gamma.node();
    auto b_node = beta.node();
    return Tensor::from_op(
        input.shape(), std::move(out), {input, gamma, beta},
        [in_node, g_node, b_node, xhat = std::move(xhat), inv_std = std::move(inv_std), N, C,
         spatial, train](detail::TensorData& self) {
            const auto& go = self.grad;
            int64_t per_ch = N * spatial;
            bool want_in = in_node->requires_grad || in_node->on_tape();
            std::vector<Scalar>* gin = want_in ? &in_node->ensure_grad() : nullptr;
            auto& gg = g_node->ensure_grad();
            auto& gb = b_node->ensure_grad();
            for (int64_t c = 0; c < C; ++c) {
                Scalar sum_go = 0.0, sum_go_xhat = 0.0;
                for (int64_t n = 0; n < N; ++n) {
                    const Scalar* grow = go.data() + (n * C + c) * spatial;
                    const Scalar* xh = xhat.data() + (n * C + c) * spatial;
                    for (int64_t i = 0; i < spatial; ++i) {
                        sum_go += grow[i];
                        sum_go_xhat += grow[i] * xh[i];
                    }
                }
                gb[static_cast<size_t>(c)] += sum_go;
                gg[static_cast<size_t>(c)] += sum_go_xhat;
                if (!gin) continue;
                Scalar g = g_node->values[static_cast<size_t>(c)];
                Scalar is = inv_std[static_cast<size_t>(c)];
                if (train) {
                    // d/dx of batch-statistics normalization.
                    Scalar inv_m = 1.0 / static_cast<Scalar>(per_ch);
                    for (int64_t n = 0; n < N; ++n) {
                        const Scalar* grow = go.data() + (n * C + c) * spatial;
                        const Scalar* xh = xhat.data() + (n * C + c) * spatial;
                        Scalar* gi = gin->data() + (n * C + c) * spatial;
                        for (int64_t i = 0; i < spatial; ++i)
                            gi[i] += g * is *
                                     (grow[i] - inv_m * sum_go - xh[i] * inv_m * sum_go_xhat);
                    }
                } else {
                    for (int64_t n = 0; n < N; ++n) {
                        const Scalar* grow = go.data() + (n * C + c) * spatial;
                        Scalar* gi = gin->data() + (n * C + c) * spatial;
                        for (int64_t i = 0; i < spatial; ++i) gi[i] += g * is * grow[i];
                    }
                }
            }
        });
}

Tensor kaiming_conv_weight(int64_t cout, int64_t cin, const std::array<int64_t, 3>& kernel,
                           std::mt19937_64& rng) {
    int64_t fan_in = cin * kernel[0] * kernel[1] * kernel[2];
    Scalar stddev = std::sqrt(2.0 / static_cast<Scalar>(fan_in));
    return Tensor::randn(Shape{cout, cin, kernel[0], kernel[1], kernel[2]}, rng, stddev, true);
}

Tensor kaiming_fc_weight(int64_t in_features, int64_t out_features, std::mt19937_64& rng) {
    Scalar stddev = std::sqrt(2.0 / static_cast<Scalar>(in_features));
    return Tensor::randn(Shape{in_features, out_features}, rng, stddev, true);
}

Conv3dLayer Conv3dLayer::make(int64_t cin, int64_t cout, const ConvSpec& spec,
                              std::mt19937_64& rng) {
    Conv3dLayer l;
    l.spec = spec;
    l.weight = kaiming_conv_weight(cout, cin, spec.kernel, rng);
    l.bias = Tensor(Shape{cout}, 0.0, true);
    return l;
}

void Conv3dLayer::params(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

BatchNorm3d BatchNorm3d::make(int64_t channels) {
    BatchNorm3d bn;
    bn.gamma = Tensor(Shape{channels}, 1.0, true);
    bn.beta = Tensor(Shape{channels}, 0.0, true);
    bn.running_mean.assign(static_cast<size_t>(channels), 0.0);
    bn.running_var.assign(static_cast<size_t>(channels), 1.0);
    return bn;
}

void BatchNorm3d::params(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".weight", gamma});
    out.push_back({prefix + ".bias", beta});
}

void BatchNorm3d::buffers(const std::string& prefix, std::vector<NamedTensor>& out) {
    int64_t c = gamma.shape()[0];
    out.push_back({prefix + ".running_mean", Tensor(Shape{c}, running_mean)});
    out.push_back({prefix + ".running_var", Tensor(Shape{c}, running_var)});
}

void BatchNorm3d::load_buffers(const std::string& prefix,
                               const std::map<std::string, Tensor>& src) {
    auto it = src.find(prefix + ".running_mean");
    if (it != src.end()) running_mean = it->second.values();
    it = src.find(prefix + ".running_var");
    if (it != src.end()) running_var = it->second.values();
}

LinearLayer LinearLayer::make(int64_t in_features, int64_t out_features, std::mt19937_64& rng) {
    LinearLayer l;
    l.weight = kaiming_fc_weight(in_features, out_features, rng);
    l.bias = Tensor(Shape{out_features}, 0.0, true);
    return l;
}

LinearLayer LinearLayer::zeros(int64_t in_features, int64_t out_features) {
    LinearLayer l;
    l.weight = Tensor(Shape{in_features, out_features}, 0.0, true);
    l.bias = Tensor(Shape{out_features}, 0.0, true);
    return l;
}

void LinearLayer::params(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

ConvBlock ConvBlock::make(int64_t cin, int64_t cout, const ConvSpec& spec, bool use_bn,
                          std::mt19937_64& rng) {
    ConvBlock b;
    b.conv = Conv3dLayer::make(cin, cout, spec, rng);
    b.use_bn = use_bn;
    b.bn = BatchNorm3d::make(cout);
    return b;
}

void ConvBlock::params(const std::string& prefix, std::vector<NamedTensor>& out) {
    conv.params(prefix + ".conv", out);
    if (use_bn) bn.params(prefix + ".bn", out);
}

void ConvBlock::buffers(const std::string& prefix, std::vector<NamedTensor>& out) {
    if (use_bn) bn.buffers(prefix + ".bn", out);
}

void ConvBlock::load_buffers(const std::string& prefix,
                             const std::map<std::string, Tensor>& src) {
    if (use_bn) bn.load_buffers(prefix + ".bn", src);
}

}  // namespace nforge
