#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "psp/autograd.hpp"
#include "psp/errors.hpp"
#include "psp/rng.hpp"
#include "psp/tensor.hpp"

namespace psp {

enum class LayerKind { dense, conv2d, maxpool, flatten };

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

/// One layer of a feed-forward stack. Only the fields for the chosen kind
/// are meaningful.
struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    int in = 0, out = 0;                              // dense
    int cin = 0, cout = 0, kh = 0, kw = 0;            // conv2d
    int stride = 1, padding = 0;                      // conv2d
    int window = 0, pool_stride = 0;                  // maxpool
    Activation act = Activation::identity;
    bool has_bias = true;
    std::string name;

    static LayerSpec dense_layer(int in, int out, Activation act, bool has_bias = true) {
        LayerSpec s;
        s.kind = LayerKind::dense;
        s.in = in;
        s.out = out;
        s.act = act;
        s.has_bias = has_bias;
        return s;
    }
    static LayerSpec conv_layer(int cin, int cout, int kh, int kw, Activation act,
                                int stride = 1, int padding = 0) {
        LayerSpec s;
        s.kind = LayerKind::conv2d;
        s.cin = cin;
        s.cout = cout;
        s.kh = kh;
        s.kw = kw;
        s.stride = stride;
        s.padding = padding;
        s.act = act;
        return s;
    }
    static LayerSpec maxpool_layer(int window, int stride) {
        LayerSpec s;
        s.kind = LayerKind::maxpool;
        s.window = window;
        s.pool_stride = stride;
        return s;
    }
    static LayerSpec flatten_layer() {
        LayerSpec s;
        s.kind = LayerKind::flatten;
        return s;
    }

    bool parameterized() const {
        return kind == LayerKind::dense || kind == LayerKind::conv2d;
    }
};

/// Feed-forward stack plus its parameters. Parameter order is stable:
/// for each parameterized layer in network order, weights then bias.
template <typename T>
struct Network {
    std::vector<LayerSpec> layers;
    std::vector<int> input_shape;         // sample shape without the batch axis
    std::vector<Parameter<T>> params;
    std::vector<int> first_param;         // index into params per layer, -1 if none

    Network() = default;

    Network(std::vector<LayerSpec> specs, std::vector<int> in_shape)
        : layers(std::move(specs)), input_shape(std::move(in_shape)) {
        int n_conv = 0, n_fc = 0, n_pool = 0;
        for (auto& l : layers) {
            if (l.name.empty()) {
                switch (l.kind) {
                    case LayerKind::conv2d: l.name = "conv" + std::to_string(++n_conv); break;
                    case LayerKind::dense: l.name = "fc" + std::to_string(++n_fc); break;
                    case LayerKind::maxpool: l.name = "pool" + std::to_string(++n_pool); break;
                    case LayerKind::flatten: l.name = "flatten"; break;
                }
            }
        }
        first_param.assign(layers.size(), -1);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerSpec& l = layers[i];
            if (!l.parameterized()) continue;
            first_param[i] = static_cast<int>(params.size());
            if (l.kind == LayerKind::dense) {
                params.emplace_back(l.name + ".w", Tensor<T>({l.out, l.in}));
                if (l.has_bias) params.emplace_back(l.name + ".b", Tensor<T>({l.out}));
            } else {
                params.emplace_back(l.name + ".w", Tensor<T>({l.cout, l.cin, l.kh, l.kw}));
                params.emplace_back(l.name + ".b", Tensor<T>({l.cout}));
            }
        }
    }

    bool dense_only() const {
        for (const auto& l : layers) {
            if (l.kind == LayerKind::conv2d || l.kind == LayerKind::maxpool) return false;
        }
        return true;
    }

    Parameter<T>& weight_of(std::size_t layer) {
        return params[static_cast<std::size_t>(first_param[layer])];
    }
    Parameter<T>& bias_of(std::size_t layer) {
        return params[static_cast<std::size_t>(first_param[layer]) + 1];
    }
};

/// Balanced uniform init: weights ~ U(-a, a) with a = sqrt(6/(fan_in+fan_out)),
/// biases zero. One seeded stream, filled in parameter order.
template <typename T>
void init_params(Network<T>& net, std::uint64_t seed) {
    std::mt19937_64 g(mix_seed(seed, 0x1a17));
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        if (!l.parameterized()) continue;
        T fan_in, fan_out;
        if (l.kind == LayerKind::dense) {
            fan_in = static_cast<T>(l.in);
            fan_out = static_cast<T>(l.out);
        } else {
            fan_in = static_cast<T>(l.cin * l.kh * l.kw);
            fan_out = static_cast<T>(l.cout * l.kh * l.kw);
        }
        const T a = std::sqrt(T(6) / (fan_in + fan_out));
        Parameter<T>& w = net.weight_of(i);
        for (std::size_t j = 0; j < w.value.size(); ++j) w.value[j] = uniform(g, -a, a);
        if (l.kind == LayerKind::dense ? l.has_bias : true) {
            Parameter<T>& b = net.bias_of(i);
            std::fill(b.value.vec().begin(), b.value.vec().end(), T(0));
        }
    }
    zero_grads(net.params);
}

/// Per-layer capture of one forward pass. z ids are set only for
/// parameterized layers (pooling and flatten have no affine potential).
template <typename T>
struct LayerTrace {
    std::string name;
    LayerKind kind;
    Activation act;
    typename Tape<T>::ValueId z = -1;
    typename Tape<T>::ValueId y = -1;
};

template <typename T>
struct ForwardRecord {
    Tape<T>* tape = nullptr;
    typename Tape<T>::ValueId input = -1;
    typename Tape<T>::ValueId logits = -1;
    std::vector<LayerTrace<T>> traces;

    const Tensor<T>& z_value(std::size_t layer) const {
        return tape->value(traces[layer].z);
    }
    std::size_t z_count() const {
        std::size_t n = 0;
        for (const auto& t : traces) n += t.z >= 0;
        return n;
    }
};

/// Runs the batch through every layer, recording each post-synaptic
/// potential z (the affine output before the activation) and activation y
/// on the tape.
template <typename T>
ForwardRecord<T> forward_record(Network<T>& net, Tape<T>& tape,
                                typename Tape<T>::ValueId batch) {
    using ValueId = typename Tape<T>::ValueId;
    const Tensor<T>& bt = tape.value(batch);
    {
        std::vector<int> sample(bt.shape().begin() + 1, bt.shape().end());
        if (bt.rank() < 2 || sample != net.input_shape) {
            throw ConfigError("batch shape " + bt.shape_str() + " does not match input shape " +
                              Tensor<T>::shape_string(net.input_shape) + " plus batch axis");
        }
    }
    ForwardRecord<T> rec;
    rec.tape = &tape;
    rec.input = batch;
    ValueId cur = batch;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        LayerTrace<T> trace;
        trace.name = l.name;
        trace.kind = l.kind;
        trace.act = l.act;
        switch (l.kind) {
            case LayerKind::dense: {
                ValueId w = tape.parameter(net.weight_of(i));
                ValueId b = l.has_bias ? tape.parameter(net.bias_of(i)) : ValueId(-1);
                trace.z = tape.dense(cur, w, b);
                break;
            }
            case LayerKind::conv2d: {
                ValueId w = tape.parameter(net.weight_of(i));
                ValueId b = tape.parameter(net.bias_of(i));
                trace.z = tape.conv2d(cur, w, b, l.stride, l.padding);
                break;
            }
            case LayerKind::maxpool:
                trace.y = tape.maxpool2d(cur, l.window, l.pool_stride);
                break;
            case LayerKind::flatten:
                trace.y = tape.flatten(cur);
                break;
        }
        if (l.parameterized()) {
            trace.y = l.act == Activation::identity ? trace.z : tape.activation(trace.z, l.act);
        }
        cur = trace.y;
        rec.traces.push_back(std::move(trace));
    }
    rec.logits = cur;
    return rec;
}

/// Convenience overload that also pushes the batch constant.
template <typename T>
ForwardRecord<T> forward_record(Network<T>& net, Tape<T>& tape, const Tensor<T>& batch) {
    return forward_record(net, tape, tape.constant(batch));
}

/// Argmax class per row; ties resolve to the lowest class index.
template <typename T>
int argmax_row(const T* row, int classes) {
    int best = 0;
    for (int j = 1; j < classes; ++j) {
        if (row[j] > row[best]) best = j;
    }
    return best;
}

/// Misclassification percentage over a full dataset, evaluated in chunks.
template <typename T>
double predict_error(Network<T>& net, const Tensor<T>& images, const std::vector<int>& labels,
                     int chunk = 200) {
    const int n = images.extent(0);
    if (n == 0 || labels.empty()) throw DataError("predict_error: empty dataset");
    if (static_cast<int>(labels.size()) != n) {
        throw DataError("predict_error: " + std::to_string(n) + " images vs " +
                        std::to_string(labels.size()) + " labels");
    }
    const std::size_t sample = images.size() / static_cast<std::size_t>(n);
    std::size_t wrong = 0;
    for (int at = 0; at < n; at += chunk) {
        const int b = at + chunk <= n ? chunk : n - at;
        std::vector<int> shape = images.shape();
        shape[0] = b;
        std::vector<T> slab(images.data() + static_cast<std::size_t>(at) * sample,
                            images.data() + static_cast<std::size_t>(at + b) * sample);
        Tape<T> tape;
        ForwardRecord<T> rec = forward_record(net, tape, Tensor<T>(shape, std::move(slab)));
        const Tensor<T>& logits = tape.value(rec.logits);
        const int classes = logits.extent(1);
        for (int i = 0; i < b; ++i) {
            const int pred =
                argmax_row(logits.data() + static_cast<std::size_t>(i) * classes, classes);
            wrong += pred != labels[static_cast<std::size_t>(at + i)];
        }
    }
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(n);
}

/// The 2-conv/2-fc stack with layer names conv1, conv2, fc1, fc2:
/// 1x28x28 -> conv 5x5 (20 ch) -> pool 2 -> conv 5x5 (50 ch) -> pool 2 ->
/// flatten -> 800x500 -> 500x10 logits. ReLU on hidden layers.
template <typename T>
Network<T> build_lenet5() {
    std::vector<LayerSpec> layers = {
        LayerSpec::conv_layer(1, 20, 5, 5, Activation::relu),
        LayerSpec::maxpool_layer(2, 2),
        LayerSpec::conv_layer(20, 50, 5, 5, Activation::relu),
        LayerSpec::maxpool_layer(2, 2),
        LayerSpec::flatten_layer(),
        LayerSpec::dense_layer(800, 500, Activation::relu),
        LayerSpec::dense_layer(500, 10, Activation::identity),
    };
    return Network<T>(std::move(layers), {1, 28, 28});
}

/// Fully connected stack; hidden layers relu, output identity logits.
template <typename T>
Network<T> build_mlp(const std::vector<int>& sizes) {
    if (sizes.size() < 2) throw ConfigError("mlp needs at least input and output sizes");
    std::vector<LayerSpec> layers;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        const bool last = i + 2 == sizes.size();
        layers.push_back(LayerSpec::dense_layer(sizes[i], sizes[i + 1],
                                                last ? Activation::identity : Activation::relu));
    }
    return Network<T>(std::move(layers), {sizes[0]});
}

}  // namespace psp
