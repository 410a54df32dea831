#pragma once

#include <string>
#include <vector>

#include "psp/autograd.hpp"
#include "psp/errors.hpp"
#include "psp/network.hpp"
#include "psp/tensor.hpp"

namespace psp {

enum class RegVariant { none, l2, psp };

inline const char* to_string(RegVariant v) {
    switch (v) {
        case RegVariant::none: return "none";
        case RegVariant::l2: return "l2";
        case RegVariant::psp: return "psp";
    }
    return "?";
}

inline RegVariant reg_variant_from_string(const std::string& s) {
    if (s == "none") return RegVariant::none;
    if (s == "l2") return RegVariant::l2;
    if (s == "psp") return RegVariant::psp;
    throw ConfigError("unknown regularizer: " + s);
}

template <typename T>
struct RegularizerKind {
    RegVariant variant = RegVariant::none;
    T lambda = T(0);

    void validate() const {
        if (variant != RegVariant::none && !(lambda > T(0) && lambda < T(1))) {
            throw ConfigError(std::string("regularizer ") + to_string(variant) +
                              " needs lambda in (0,1)");
        }
    }
};

/// ½ Σ θ² over every weight and bias.
template <typename T>
T l2_penalty(const std::vector<Parameter<T>>& params) {
    T s = T(0);
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p.value.size(); ++i) s += p.value[i] * p.value[i];
    }
    return s / T(2);
}

/// Same quantity as a tape node, for gradient tests against the analytic θ.
template <typename T>
typename Tape<T>::ValueId l2_penalty_node(std::vector<Parameter<T>>& params, Tape<T>& tape) {
    std::vector<typename Tape<T>::ValueId> terms;
    terms.reserve(params.size());
    for (auto& p : params) {
        terms.push_back(tape.half_sum_squares(tape.parameter(p)));
    }
    return tape.add_n(terms);
}

/// ½ Σ z² over every recorded post-synaptic potential, averaged over the
/// batch axis. Conv feature maps contribute one term per channel and
/// spatial position.
template <typename T>
T psp_penalty(const ForwardRecord<T>& rec) {
    if (rec.z_count() == 0) {
        throw ContractError("psp_penalty: record holds no post-synaptic potentials");
    }
    T total = T(0);
    for (const auto& trace : rec.traces) {
        if (trace.z < 0) continue;
        const Tensor<T>& z = rec.tape->value(trace.z);
        T s = T(0);
        for (std::size_t i = 0; i < z.size(); ++i) s += z[i] * z[i];
        total += s / (T(2) * static_cast<T>(z.extent(0)));
    }
    return total;
}

/// The penalty as a differentiable node on the record's own tape.
template <typename T>
typename Tape<T>::ValueId psp_penalty_node(const ForwardRecord<T>& rec) {
    if (rec.z_count() == 0) {
        throw ContractError("psp_penalty: record holds no post-synaptic potentials");
    }
    Tape<T>& tape = *rec.tape;
    std::vector<typename Tape<T>::ValueId> terms;
    for (const auto& trace : rec.traces) {
        if (trace.z >= 0) terms.push_back(tape.half_sum_squares_batchmean(trace.z));
    }
    return tape.add_n(terms);
}

/// Mean of z² over all recorded entries and batch samples.
template <typename T>
T mean_z_squared(const ForwardRecord<T>& rec) {
    if (rec.z_count() == 0) {
        throw ContractError("mean_z_squared: record holds no post-synaptic potentials");
    }
    T total = T(0);
    std::size_t count = 0;
    for (const auto& trace : rec.traces) {
        if (trace.z < 0) continue;
        const Tensor<T>& z = rec.tape->value(trace.z);
        for (std::size_t i = 0; i < z.size(); ++i) total += z[i] * z[i];
        count += z.size();
    }
    return total / static_cast<T>(count);
}

/// Multiplicative shrink θ ← θ − λθ, in place. Written as the subtraction
/// so it is bit-identical to a gradient step of λ·θ at momentum 0.
template <typename T>
void weight_decay_step(std::vector<Parameter<T>>& params, T lambda) {
    if (!(lambda > T(0) && lambda < T(1))) {
        throw ConfigError("weight decay needs lambda in (0,1)");
    }
    for (auto& p : params) {
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            p.value[i] -= lambda * p.value[i];
        }
    }
}

namespace detail {

template <typename T>
void require_dense_only(const Network<T>& net) {
    for (const auto& l : net.layers) {
        if (l.kind != LayerKind::dense) {
            throw UnsupportedTopologyError(
                std::string("closed-form potential gradient supports dense layers only, found ") +
                to_string(l.kind) + " layer '" + l.name + "'");
        }
    }
}

}  // namespace detail

/// Closed-form gradient of the batch-averaged ½Σz² penalty, independent of
/// the tape. For each layer l the total is z_l·∂z_l/∂θ plus every deeper
/// layer's z_p·∂z_p/∂θ, the deeper potentials reached through the
/// accumulated Jacobian J(p←l) = W_p·diag(φ'(z_{p−1}))·J(p−1←l), with
/// ∂z/∂θ = 1 for a bias and y_{l−1,j} for a weight. Returned gradients are
/// aligned with net.params.
template <typename T>
std::vector<Tensor<T>> manual_psp_grad(Network<T>& net, const Tensor<T>& batch) {
    detail::require_dense_only(net);
    if (batch.rank() != 2 ||
        std::vector<int>(batch.shape().begin() + 1, batch.shape().end()) != net.input_shape) {
        throw ConfigError("batch shape " + batch.shape_str() + " does not match input shape " +
                          Tensor<T>::shape_string(net.input_shape) + " plus batch axis");
    }
    const int B = batch.extent(0);
    const std::size_t L = net.layers.size();

    // plain forward, batch at a time
    std::vector<Tensor<T>> zs(L), ys(L);
    {
        const Tensor<T>* prev = &batch;
        for (std::size_t l = 0; l < L; ++l) {
            const LayerSpec& spec = net.layers[l];
            const Tensor<T>& w = net.weight_of(l).value;
            Tensor<T> z({B, spec.out});
            for (int s = 0; s < B; ++s) {
                const T* yin = prev->data() + static_cast<std::size_t>(s) * spec.in;
                T* zrow = z.data() + static_cast<std::size_t>(s) * spec.out;
                for (int k = 0; k < spec.out; ++k) {
                    T acc = T(0);
                    const T* wrow = w.data() + static_cast<std::size_t>(k) * spec.in;
                    for (int j = 0; j < spec.in; ++j) acc += wrow[j] * yin[j];
                    zrow[k] = acc;
                }
            }
            if (spec.has_bias) {
                const Tensor<T>& b = net.bias_of(l).value;
                for (int s = 0; s < B; ++s) {
                    T* zrow = z.data() + static_cast<std::size_t>(s) * spec.out;
                    for (int k = 0; k < spec.out; ++k) zrow[k] += b[static_cast<std::size_t>(k)];
                }
            }
            zs[l] = z;
            ys[l] = apply_activation(z, spec.act);
            prev = &ys[l];
        }
    }

    std::vector<Tensor<T>> grads;
    grads.reserve(net.params.size());
    for (const auto& p : net.params) grads.emplace_back(p.value.shape());

    for (int s = 0; s < B; ++s) {
        for (std::size_t l = 0; l < L; ++l) {
            const int kl = net.layers[l].out;
            // a = Σ_{p≥l} J(p←l)^T z_p for this sample, starting from J = I
            std::vector<T> a(zs[l].data() + static_cast<std::size_t>(s) * kl,
                             zs[l].data() + static_cast<std::size_t>(s + 1) * kl);
            Tensor<T> jac({kl, kl});
            for (int i = 0; i < kl; ++i) jac(i, i) = T(1);
            for (std::size_t p = l + 1; p < L; ++p) {
                const int kin = net.layers[p].in;
                const int kout = net.layers[p].out;
                // scale row r of J by φ'(z_{p−1,r}), then left-multiply W_p
                const Tensor<T>& zprev = zs[p - 1];
                const Tensor<T>& yprev = ys[p - 1];
                for (int r = 0; r < kin; ++r) {
                    const T d = activation_deriv_from(net.layers[p - 1].act,
                                                      zprev(s, r), yprev(s, r));
                    T* row = jac.data() + static_cast<std::size_t>(r) * kl;
                    for (int c = 0; c < kl; ++c) row[c] *= d;
                }
                jac = matmul(net.weight_of(p).value, jac);
                const T* zp = zs[p].data() + static_cast<std::size_t>(s) * kout;
                for (int c = 0; c < kl; ++c) {
                    T acc = T(0);
                    for (int r = 0; r < kout; ++r) acc += jac(r, c) * zp[r];
                    a[static_cast<std::size_t>(c)] += acc;
                }
            }
            const int base = net.first_param[l];
            Tensor<T>& dw = grads[static_cast<std::size_t>(base)];
            const int in = net.layers[l].in;
            const T* yin = l == 0 ? batch.data() + static_cast<std::size_t>(s) * in
                                  : ys[l - 1].data() + static_cast<std::size_t>(s) * in;
            for (int k = 0; k < kl; ++k) {
                T* dwrow = dw.data() + static_cast<std::size_t>(k) * in;
                const T ak = a[static_cast<std::size_t>(k)];
                for (int j = 0; j < in; ++j) dwrow[j] += ak * yin[j];
            }
            if (net.layers[l].has_bias) {
                Tensor<T>& db = grads[static_cast<std::size_t>(base) + 1];
                for (int k = 0; k < kl; ++k) db[static_cast<std::size_t>(k)] += a[static_cast<std::size_t>(k)];
            }
        }
    }
    for (auto& g : grads) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] /= static_cast<T>(B);
    }
    return grads;
}

/// The same gradient under the two simplifications that collapse it to
/// weight decay: ∂z/∂θ treated as 1 and all cross-parameter contributions
/// dropped, leaving exactly θ per parameter.
template <typename T>
std::vector<Tensor<T>> manual_psp_grad_decoupled(Network<T>& net, const Tensor<T>&) {
    detail::require_dense_only(net);
    std::vector<Tensor<T>> grads;
    grads.reserve(net.params.size());
    for (const auto& p : net.params) grads.push_back(p.value);
    return grads;
}

}  // namespace psp
