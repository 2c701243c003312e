#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "evhar/nn.hpp"
#include "evhar/tensor.hpp"

// The clip classifier: five conv3d -> batchnorm3d -> relu -> maxpool(1,2,2)
// blocks with widths 16..256 (scaled by channel_multiplier), optional
// squeeze-excitation channel attention, then global average pool, dropout
// and a linear head.

namespace evhar {

struct ModelConfig {
    std::vector<int> channels{16, 32, 64, 128, 256};
    int input_channels = 1;
    int num_classes = 6;
    int clip_length = 10;
    int input_height = 128;
    int input_width = 128;
    double dropout_rate = 0.5;
    bool attention_enabled = false;
    double channel_multiplier = 1.0;

    // Block widths after applying the multiplier (rounded, floor 1).
    std::vector<int> scaled_channels() const;
    void validate() const;

    std::map<std::string, std::string> to_kv() const;
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

template <typename T>
struct ParamTensor {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool decay = false;      // decoupled weight decay applies
    bool learnable = true;   // running stats are carried but not trained
};

template <typename T>
struct ModelParams {
    ModelConfig config;
    std::vector<ParamTensor<T>> tensors;  // fixed declaration order

    ParamTensor<T>& at(const std::string& name) {
        for (auto& p : tensors)
            if (p.name == name) return p;
        throw Error("unknown parameter: " + name);
    }
    const ParamTensor<T>& at(const std::string& name) const {
        return const_cast<ModelParams*>(this)->at(name);
    }

    int64_t learnable_count() const {
        int64_t n = 0;
        for (const auto& p : tensors)
            if (p.learnable) n += p.value.size();
        return n;
    }

    void zero_grads() {
        for (auto& p : tensors) p.grad.fill(T(0));
    }
};

constexpr double kBatchNormMomentum = 0.1;
constexpr double kBatchNormEpsilon = 1e-5;
constexpr int kAttentionReduction = 8;

// ------------------------------------------------------------------ build

template <typename T>
ModelParams<T> build_model(const ModelConfig& config, uint64_t seed) {
    config.validate();
    ModelParams<T> params;
    params.config = config;
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));

    auto add = [&params](const std::string& name, std::vector<int64_t> shape, bool decay,
                         bool learnable, T fill = T(0)) -> ParamTensor<T>& {
        ParamTensor<T> p;
        p.name = name;
        p.value = Tensor<T>(shape, fill);
        p.grad = Tensor<T>(std::move(shape));
        p.decay = decay;
        p.learnable = learnable;
        params.tensors.push_back(std::move(p));
        return params.tensors.back();
    };

    const std::vector<int> widths = config.scaled_channels();
    int64_t c_prev = config.input_channels;
    for (size_t i = 0; i < widths.size(); ++i) {
        const std::string b = std::to_string(i + 1);
        const int64_t c = widths[i];
        auto& conv_w = add("conv" + b + ".weight", {c, c_prev, 3, 3, 3}, true, true);
        nn::kaiming_uniform(conv_w.value, c_prev * 27, rng);
        add("conv" + b + ".bias", {c}, false, true);
        add("bn" + b + ".gamma", {c}, false, true, T(1));
        add("bn" + b + ".beta", {c}, false, true);
        add("bn" + b + ".running_mean", {c}, false, false);
        add("bn" + b + ".running_var", {c}, false, false, T(1));
        c_prev = c;
    }
    if (config.attention_enabled) {
        const int64_t hidden = std::max<int64_t>(1, c_prev / kAttentionReduction);
        auto& w1 = add("attn.fc1.weight", {hidden, c_prev}, true, true);
        nn::kaiming_uniform(w1.value, c_prev, rng);
        add("attn.fc1.bias", {hidden}, false, true);
        auto& w2 = add("attn.fc2.weight", {c_prev, hidden}, true, true);
        nn::kaiming_uniform(w2.value, hidden, rng);
        add("attn.fc2.bias", {c_prev}, false, true);
    }
    auto& head_w = add("head.weight", {config.num_classes, c_prev}, true, true);
    nn::kaiming_uniform(head_w.value, c_prev, rng);
    add("head.bias", {config.num_classes}, false, true);
    return params;
}

// ------------------------------------------------------------- attention

template <typename T>
struct AttentionCache {
    Tensor<T> features;
    Tensor<T> gate;  // (B, C)
    nn::GapCache<T> squeeze;
    nn::LinearCache<T> fc1, fc2;
    nn::ReluCache<T> relu;
};

template <typename T>
struct AttentionGrads {
    Tensor<T> features, w1, b1, w2, b2;
};

// Squeeze-excitation channel gate: global average over (T,H,W), two-layer
// bottleneck with ReLU then a logistic gate, channelwise rescale.
template <typename T>
Tensor<T> self_attention_forward(const Tensor<T>& features, const Tensor<T>& w1,
                                 const Tensor<T>& b1, const Tensor<T>& w2, const Tensor<T>& b2,
                                 std::type_identity_t<AttentionCache<T>*> cache) {
    nn::conv_detail::check_5d(features.shape(), "attention features");
    AttentionCache<T> local;
    AttentionCache<T>& c = cache ? *cache : local;
    const Tensor<T> squeezed = nn::global_avg_pool_forward(features, &c.squeeze);
    const Tensor<T> z1 = nn::linear_forward(squeezed, w1, b1, &c.fc1);
    const Tensor<T> a1 = nn::relu_forward(z1, &c.relu);
    const Tensor<T> z2 = nn::linear_forward(a1, w2, b2, &c.fc2);

    const int64_t b = features.dim(0), ch = features.dim(1);
    const int64_t plane = features.dim(2) * features.dim(3) * features.dim(4);
    c.gate = Tensor<T>({b, ch});
    for (int64_t i = 0; i < b * ch; ++i) {
        const double z = static_cast<double>(z2[i]);
        c.gate[i] = static_cast<T>(z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                          : std::exp(z) / (1.0 + std::exp(z)));
    }
    Tensor<T> out(features.shape());
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t i = 0; i < b * ch; ++i) {
        const T g = c.gate[i];
        const T* f = features.data() + i * plane;
        T* o = out.data() + i * plane;
        for (int64_t j = 0; j < plane; ++j) o[j] = f[j] * g;
    }
    if (cache) cache->features = features;
    return out;
}

template <typename T>
AttentionGrads<T> self_attention_backward(const AttentionCache<T>& cache,
                                          const Tensor<T>& grad_out) {
    const Tensor<T>& f = cache.features;
    if (grad_out.shape() != f.shape()) throw ShapeError("attention grad_out shape mismatch");
    const int64_t b = f.dim(0), ch = f.dim(1), plane = f.dim(2) * f.dim(3) * f.dim(4);

    AttentionGrads<T> grads;
    grads.features = Tensor<T>(f.shape());
    Tensor<T> grad_gate({b, ch});
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t i = 0; i < b * ch; ++i) {
        const T g = cache.gate[i];
        const T* go = grad_out.data() + i * plane;
        const T* fv = f.data() + i * plane;
        T* gf = grads.features.data() + i * plane;
        double dg = 0;
        for (int64_t j = 0; j < plane; ++j) {
            gf[j] = go[j] * g;
            dg += static_cast<double>(go[j]) * static_cast<double>(fv[j]);
        }
        grad_gate[i] = static_cast<T>(dg) * g * (T(1) - g);  // through the logistic
    }

    const nn::LinearGrads<T> g2 = nn::linear_backward(cache.fc2, grad_gate);
    const Tensor<T> gz1 = nn::relu_backward(cache.relu, g2.input);
    const nn::LinearGrads<T> g1 = nn::linear_backward(cache.fc1, gz1);
    const Tensor<T> gsq = nn::global_avg_pool_backward(cache.squeeze, g1.input);
    for (int64_t i = 0; i < grads.features.size(); ++i) grads.features[i] += gsq[i];

    grads.w1 = g1.weights;
    grads.b1 = g1.bias;
    grads.w2 = g2.weights;
    grads.b2 = g2.bias;
    return grads;
}

// --------------------------------------------------------------- forward

template <typename T>
struct ForwardTrace {
    nn::Mode mode = nn::Mode::eval;
    std::vector<nn::Conv3dCache<T>> conv;
    std::vector<nn::BatchNorm3dCache<T>> bn;
    std::vector<nn::ReluCache<T>> relu;
    std::vector<nn::MaxPool3dCache<T>> pool;
    std::optional<AttentionCache<T>> attention;
    Tensor<T> prepool;  // features entering global average pooling
    nn::GapCache<T> gap;
    nn::DropoutCache<T> dropout;
    nn::LinearCache<T> head;
};

template <typename T>
Tensor<T> model_forward(ModelParams<T>& params, const Tensor<T>& clips, nn::Mode mode,
                        uint64_t dropout_seed, std::type_identity_t<ForwardTrace<T>*> trace) {
    const ModelConfig& cfg = params.config;
    nn::conv_detail::check_5d(clips.shape(), "model input");
    if (clips.dim(1) != cfg.input_channels || clips.dim(2) != cfg.clip_length ||
        clips.dim(3) != cfg.input_height || clips.dim(4) != cfg.input_width)
        throw ShapeError("model input shape does not match config");

    ForwardTrace<T> local;
    ForwardTrace<T>& tr = trace ? *trace : local;
    tr.mode = mode;
    const size_t n_blocks = cfg.channels.size();
    tr.conv.resize(n_blocks);
    tr.bn.resize(n_blocks);
    tr.relu.resize(n_blocks);
    tr.pool.resize(n_blocks);

    const bool want_cache = trace != nullptr;
    Tensor<T> x = clips;
    for (size_t i = 0; i < n_blocks; ++i) {
        const std::string b = std::to_string(i + 1);
        x = nn::conv3d_forward(x, params.at("conv" + b + ".weight").value,
                               params.at("conv" + b + ".bias").value,
                               want_cache ? &tr.conv[i] : nullptr);
        x = nn::batchnorm3d_forward(x, params.at("bn" + b + ".gamma").value,
                                    params.at("bn" + b + ".beta").value,
                                    params.at("bn" + b + ".running_mean").value,
                                    params.at("bn" + b + ".running_var").value, mode,
                                    kBatchNormMomentum, kBatchNormEpsilon,
                                    want_cache ? &tr.bn[i] : nullptr);
        x = nn::relu_forward(x, want_cache ? &tr.relu[i] : nullptr);
        x = nn::maxpool3d_forward(x, want_cache ? &tr.pool[i] : nullptr);
    }
    if (cfg.attention_enabled) {
        if (want_cache) tr.attention.emplace();
        x = self_attention_forward(x, params.at("attn.fc1.weight").value,
                                   params.at("attn.fc1.bias").value,
                                   params.at("attn.fc2.weight").value,
                                   params.at("attn.fc2.bias").value,
                                   want_cache ? &*tr.attention : nullptr);
    }
    if (want_cache) tr.prepool = x;
    x = nn::global_avg_pool_forward(x, want_cache ? &tr.gap : nullptr);
    Rng drop_rng(mix_seed(dropout_seed, 0x64726f70ULL));
    x = nn::dropout_forward(x, cfg.dropout_rate, mode, drop_rng, want_cache ? &tr.dropout : nullptr);
    x = nn::linear_forward(x, params.at("head.weight").value, params.at("head.bias").value,
                           want_cache ? &tr.head : nullptr);
    return x;
}

// Accumulates parameter gradients into the .grad slots and returns the
// gradient with respect to the input clips. Training passes
// need_input_grad = false to skip the (unused) data gradient.
template <typename T>
Tensor<T> model_backward(ModelParams<T>& params, ForwardTrace<T>& trace,
                         const Tensor<T>& grad_logits, bool need_input_grad = true) {
    const ModelConfig& cfg = params.config;
    auto add_grad = [&params](const std::string& name, const Tensor<T>& g) {
        Tensor<T>& dst = params.at(name).grad;
        for (int64_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    };

    nn::LinearGrads<T> hg = nn::linear_backward(trace.head, grad_logits);
    add_grad("head.weight", hg.weights);
    add_grad("head.bias", hg.bias);
    Tensor<T> g = nn::dropout_backward(trace.dropout, hg.input);
    g = nn::global_avg_pool_backward(trace.gap, g);

    if (cfg.attention_enabled) {
        AttentionGrads<T> ag = self_attention_backward(*trace.attention, g);
        add_grad("attn.fc1.weight", ag.w1);
        add_grad("attn.fc1.bias", ag.b1);
        add_grad("attn.fc2.weight", ag.w2);
        add_grad("attn.fc2.bias", ag.b2);
        g = std::move(ag.features);
    }

    for (size_t i = cfg.channels.size(); i-- > 0;) {
        const std::string b = std::to_string(i + 1);
        g = nn::maxpool3d_backward(trace.pool[i], g);
        g = nn::relu_backward(trace.relu[i], g);
        nn::BatchNorm3dGrads<T> bg = nn::batchnorm3d_backward(trace.bn[i], g);
        add_grad("bn" + b + ".gamma", bg.gamma);
        add_grad("bn" + b + ".beta", bg.beta);
        nn::Conv3dGrads<T> cg =
            nn::conv3d_backward(trace.conv[i], bg.input, i > 0 || need_input_grad);
        add_grad("conv" + b + ".weight", cg.weights);
        add_grad("conv" + b + ".bias", cg.bias);
        g = std::move(cg.input);
    }
    return g;
}

// ------------------------------------------------------------ checkpoint

// EVHARCKPT v1: magic, version u32, length-prefixed UTF-8 key=value lines
// (config, caller metadata, metric.<name> entries), parameter blobs in
// declaration order as little-endian IEEE-754, trailing CRC-32.
struct Checkpoint {
    ModelParams<float> params;
    std::map<std::string, std::string> meta;
    std::map<std::string, double> metrics;
};

void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     const std::map<std::string, std::string>& meta = {},
                     const std::map<std::string, double>& metrics = {});
Checkpoint load_checkpoint(const std::string& path);
// Shape guard: refuses checkpoints whose architecture differs from `params`.
void load_checkpoint_into(const std::string& path, ModelParams<float>& params);

uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

}  // namespace evhar
