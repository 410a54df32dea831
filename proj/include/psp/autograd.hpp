#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "psp/errors.hpp"
#include "psp/tensor.hpp"

namespace psp {

/// A trainable tensor together with its gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

/// Sets every gradient to exact zero. Idempotent.
template <typename T>
void zero_grads(std::vector<Parameter<T>>& params) {
    for (auto& p : params) {
        std::fill(p.grad.vec().begin(), p.grad.vec().end(), T(0));
    }
}

/// Reverse-mode tape. Operations are recorded in execution order, so the
/// node list is topologically sorted by construction and replayed in
/// reverse. A tape is rebuilt for every forward pass; gradients accumulate
/// additively into Parameter::grad and callers zero them between steps.
template <typename T>
class Tape {
public:
    using ValueId = int;

    ValueId constant(Tensor<T> v) { return push(std::move(v), nullptr); }

    ValueId parameter(Parameter<T>& p) {
        ValueId id = push(p.value, nullptr);
        nodes_.back().param = &p;
        return id;
    }

    const Tensor<T>& value(ValueId id) const {
        return nodes_[static_cast<std::size_t>(id)].out;
    }

    std::size_t node_count() const { return nodes_.size(); }

    /// General rank-2 product; test-scale only, the training path uses dense().
    ValueId matmul(ValueId a, ValueId b) {
        Tensor<T> out = psp::matmul(value(a), value(b));
        return push(std::move(out), [a, b](Tape& t, const Tensor<T>& g, const Node&) {
            const Tensor<T>& av = t.value(a);
            const Tensor<T>& bv = t.value(b);
            const int m = av.extent(0), k = av.extent(1), n = bv.extent(1);
            Tensor<T>& da = t.grad_buffer(a);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const T gij = g(i, j);
                    for (int p = 0; p < k; ++p) da(i, p) += gij * bv(p, j);
                }
            Tensor<T>& db = t.grad_buffer(b);
            detail::gemm_tn(av.data(), g.data(), db.data(), k, m, n, true);
        });
    }

    /// Affine layer on a rows-are-samples matrix: z = x * w^T + bias.
    /// w is [out x in]; pass bias = -1 for a bias-free layer.
    ValueId dense(ValueId x, ValueId w, ValueId bias) {
        const Tensor<T>& xv = value(x);
        const Tensor<T>& wv = value(w);
        if (xv.rank() != 2 || wv.rank() != 2 || xv.extent(1) != wv.extent(1)) {
            throw DimensionError("dense shape mismatch: input " + xv.shape_str() +
                                 " vs weight " + wv.shape_str());
        }
        const int b = xv.extent(0), in = xv.extent(1), out = wv.extent(0);
        std::vector<T> wt(static_cast<std::size_t>(in) * out);
        detail::transpose(wv.data(), wt.data(), out, in);
        Tensor<T> z({b, out});
        detail::gemm_nn(xv.data(), wt.data(), z.data(), b, in, out, false);
        if (bias >= 0) {
            const Tensor<T>& bv = value(bias);
            if (bv.size() != static_cast<std::size_t>(out)) {
                throw DimensionError("dense bias size " + std::to_string(bv.size()) +
                                     " vs " + std::to_string(out) + " outputs");
            }
            for (int i = 0; i < b; ++i) {
                T* row = z.data() + static_cast<std::size_t>(i) * out;
                for (int j = 0; j < out; ++j) row[j] += bv[static_cast<std::size_t>(j)];
            }
        }
        return push(std::move(z), [x, w, bias](Tape& t, const Tensor<T>& g, const Node&) {
            const Tensor<T>& xv = t.value(x);
            const Tensor<T>& wv = t.value(w);
            const int b = xv.extent(0), in = xv.extent(1), out = wv.extent(0);
            detail::gemm_nn(g.data(), wv.data(), t.grad_buffer(x).data(), b, out, in, true);
            detail::gemm_tn(g.data(), xv.data(), t.grad_buffer(w).data(), out, b, in, true);
            if (bias >= 0) {
                Tensor<T>& db = t.grad_buffer(bias);
                for (int i = 0; i < b; ++i) {
                    const T* row = g.data() + static_cast<std::size_t>(i) * out;
                    for (int j = 0; j < out; ++j) db[static_cast<std::size_t>(j)] += row[j];
                }
            }
        });
    }

    /// Batched cross-correlation on [batch x cin x h x w] input.
    ValueId conv2d(ValueId x, ValueId kernels, ValueId bias, int stride, int padding) {
        auto cols = std::make_shared<std::vector<T>>();
        Tensor<T> out = detail::conv2d_batched(value(x), value(kernels), value(bias), stride,
                                               padding, cols.get());
        return push(std::move(out), [x, kernels, bias, stride, padding, cols](
                                        Tape& t, const Tensor<T>& g, const Node&) {
            const Tensor<T>& xv = t.value(x);
            const Tensor<T>& kv = t.value(kernels);
            const int batch = xv.extent(0), cin = xv.extent(1);
            const int h = xv.extent(2), w = xv.extent(3);
            const int cout = kv.extent(0), kh = kv.extent(2), kw = kv.extent(3);
            const int oh = g.extent(2), ow = g.extent(3);
            const int kdim = cin * kh * kw;
            const std::size_t opl = static_cast<std::size_t>(oh) * ow;
            const std::size_t positions = static_cast<std::size_t>(batch) * opl;

            // regroup [batch x cout x oh x ow] into [cout x batch*oh*ow]
            std::vector<T> gout(static_cast<std::size_t>(cout) * positions);
            for (int c = 0; c < cout; ++c) {
                T* dst = gout.data() + static_cast<std::size_t>(c) * positions;
                for (int bi = 0; bi < batch; ++bi) {
                    const T* src = g.data() + (static_cast<std::size_t>(bi) * cout + c) * opl;
                    std::copy(src, src + opl, dst + static_cast<std::size_t>(bi) * opl);
                }
            }
            {
                Tensor<T>& db = t.grad_buffer(bias);
                for (int c = 0; c < cout; ++c) {
                    const T* row = gout.data() + static_cast<std::size_t>(c) * positions;
                    T s = T(0);
                    for (std::size_t p = 0; p < positions; ++p) s += row[p];
                    db[static_cast<std::size_t>(c)] += s;
                }
            }
            {
                // dK^T = cols * gout^T, transposed back into kernel layout
                std::vector<T> gout_t(positions * cout);
                detail::transpose(gout.data(), gout_t.data(), cout,
                                  static_cast<int>(positions));
                std::vector<T> dkt(static_cast<std::size_t>(kdim) * cout);
                detail::gemm_nn(cols->data(), gout_t.data(), dkt.data(), kdim,
                                static_cast<int>(positions), cout, false);
                Tensor<T>& dk = t.grad_buffer(kernels);
                for (int r = 0; r < kdim; ++r)
                    for (int c = 0; c < cout; ++c)
                        dk[static_cast<std::size_t>(c) * kdim + r] +=
                            dkt[static_cast<std::size_t>(r) * cout + c];
            }
            {
                std::vector<T> dcols(static_cast<std::size_t>(kdim) * positions);
                detail::gemm_tn(kv.data(), gout.data(), dcols.data(), kdim, cout,
                                static_cast<int>(positions), false);
                detail::col2im_add(dcols.data(), batch, cin, h, w, kh, kw, stride, padding,
                                   oh, ow, t.grad_buffer(x).data());
            }
        });
    }

    ValueId maxpool2d(ValueId x, int window, int stride) {
        auto [out, argmax] = detail::maxpool2d_batched(value(x), window, stride);
        auto idx = std::make_shared<std::vector<int>>(std::move(argmax));
        return push(std::move(out), [x, idx](Tape& t, const Tensor<T>& g, const Node&) {
            Tensor<T>& dx = t.grad_buffer(x);
            for (std::size_t o = 0; o < g.size(); ++o) {
                dx[static_cast<std::size_t>((*idx)[o])] += g[o];
            }
        });
    }

    /// Collapse all trailing axes: [b x ...] -> [b x prod].
    ValueId flatten(ValueId x) {
        const Tensor<T>& xv = value(x);
        if (xv.rank() < 2) {
            throw DimensionError("flatten needs rank >= 2, got " + xv.shape_str());
        }
        int prod = 1;
        for (int i = 1; i < xv.rank(); ++i) prod *= xv.extent(i);
        Tensor<T> out = xv.reshaped({xv.extent(0), prod});
        return push(std::move(out), [x](Tape& t, const Tensor<T>& g, const Node&) {
            Tensor<T>& dx = t.grad_buffer(x);
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        });
    }

    ValueId activation(ValueId x, Activation kind) {
        Tensor<T> out = psp::apply_activation(value(x), kind);
        return push(std::move(out), [x, kind](Tape& t, const Tensor<T>& g, const Node& self) {
            Tensor<T>& dx = t.grad_buffer(x);
            const Tensor<T>& zv = t.value(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                dx[i] += g[i] * activation_deriv_from(kind, zv[i], self.out[i]);
            }
        });
    }

    /// Mean over the batch of -log softmax(logits)[label]. Numerically
    /// stable: shifts by the row max before exponentiating.
    ValueId cross_entropy(ValueId logits, const std::vector<int>& labels) {
        const Tensor<T>& lv = value(logits);
        if (lv.rank() != 2) {
            throw DimensionError("cross_entropy logits must be rank 2, got " + lv.shape_str());
        }
        const int b = lv.extent(0), classes = lv.extent(1);
        if (static_cast<int>(labels.size()) != b) {
            throw DimensionError("cross_entropy batch mismatch: " + std::to_string(b) +
                                 " logit rows vs " + std::to_string(labels.size()) + " labels");
        }
        auto probs = std::make_shared<Tensor<T>>(std::vector<int>{b, classes});
        auto labs = std::make_shared<std::vector<int>>(labels);
        T total = T(0);
        for (int i = 0; i < b; ++i) {
            const int lab = labels[static_cast<std::size_t>(i)];
            if (lab < 0 || lab >= classes) {
                throw DataError("label " + std::to_string(lab) + " outside [0," +
                                std::to_string(classes) + ") at row " + std::to_string(i));
            }
            const T* row = lv.data() + static_cast<std::size_t>(i) * classes;
            T m = row[0];
            for (int j = 1; j < classes; ++j) m = row[j] > m ? row[j] : m;
            T sum = T(0);
            for (int j = 0; j < classes; ++j) sum += std::exp(row[j] - m);
            T* prow = probs->data() + static_cast<std::size_t>(i) * classes;
            for (int j = 0; j < classes; ++j) prow[j] = std::exp(row[j] - m) / sum;
            total += m + std::log(sum) - row[lab];
        }
        Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(b));
        return push(std::move(out),
                    [logits, probs, labs](Tape& t, const Tensor<T>& g, const Node&) {
            Tensor<T>& dl = t.grad_buffer(logits);
            const int b = dl.extent(0), classes = dl.extent(1);
            const T scale = g[0] / static_cast<T>(b);
            for (int i = 0; i < b; ++i) {
                const T* prow = probs->data() + static_cast<std::size_t>(i) * classes;
                T* drow = dl.data() + static_cast<std::size_t>(i) * classes;
                for (int j = 0; j < classes; ++j) drow[j] += scale * prow[j];
                drow[(*labs)[static_cast<std::size_t>(i)]] -= scale;
            }
        });
    }

    /// Scalar ½ Σ x².
    ValueId half_sum_squares(ValueId x) {
        const Tensor<T>& xv = value(x);
        T s = T(0);
        for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * xv[i];
        return push(Tensor<T>::scalar(s / T(2)),
                    [x](Tape& t, const Tensor<T>& g, const Node&) {
            Tensor<T>& dx = t.grad_buffer(x);
            const Tensor<T>& xv = t.value(x);
            for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += g[0] * xv[i];
        });
    }

    /// Scalar ½ Σ x² / batch, the batch being the leading axis.
    ValueId half_sum_squares_batchmean(ValueId x) {
        const Tensor<T>& xv = value(x);
        const T b = static_cast<T>(xv.extent(0));
        T s = T(0);
        for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * xv[i];
        return push(Tensor<T>::scalar(s / (T(2) * b)),
                    [x, b](Tape& t, const Tensor<T>& g, const Node&) {
            Tensor<T>& dx = t.grad_buffer(x);
            const Tensor<T>& xv = t.value(x);
            const T scale = g[0] / b;
            for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += scale * xv[i];
        });
    }

    /// Elementwise sum of two same-shape values.
    ValueId add(ValueId a, ValueId b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        if (!av.same_shape(bv)) {
            throw DimensionError("add shape mismatch: " + av.shape_str() + " vs " +
                                 bv.shape_str());
        }
        Tensor<T> out = av;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
        return push(std::move(out), [a, b](Tape& t, const Tensor<T>& g, const Node&) {
            Tensor<T>& da = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
            Tensor<T>& db = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
        });
    }

    ValueId add_n(const std::vector<ValueId>& xs) {
        if (xs.empty()) throw ContractError("add_n needs at least one input");
        ValueId acc = xs[0];
        for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
        return acc;
    }

    ValueId scale(ValueId x, T c) {
        Tensor<T> out = value(x);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
        return push(std::move(out), [x, c](Tape& t, const Tensor<T>& g, const Node&) {
            Tensor<T>& dx = t.grad_buffer(x);
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += c * g[i];
        });
    }

    /// Walks the tape backwards from a scalar objective. Every reached
    /// Parameter leaf gets its contribution added into Parameter::grad.
    /// Node gradients stay readable through grad_at() until the next call.
    void backward(ValueId objective) {
        if (objective < 0 || static_cast<std::size_t>(objective) >= nodes_.size()) {
            throw ContractError("backward: objective is not a node of this tape");
        }
        if (value(objective).size() != 1) {
            throw ContractError("backward objective must be scalar, got shape " +
                                value(objective).shape_str());
        }
        grads_.assign(nodes_.size(), Tensor<T>());
        grads_[static_cast<std::size_t>(objective)] = Tensor<T>::scalar(T(1));
        for (int i = objective; i >= 0; --i) {
            Node& node = nodes_[static_cast<std::size_t>(i)];
            const Tensor<T>& g = grads_[static_cast<std::size_t>(i)];
            if (g.empty()) continue;
            if (node.param != nullptr) {
                Tensor<T>& pg = node.param->grad;
                for (std::size_t j = 0; j < g.size(); ++j) pg[j] += g[j];
            }
            if (node.back) node.back(*this, g, node);
        }
    }

    /// Gradient a node received in the last backward(). Empty if unreached.
    const Tensor<T>& grad_at(ValueId id) const {
        static const Tensor<T> none;
        if (static_cast<std::size_t>(id) < grads_.size()) {
            return grads_[static_cast<std::size_t>(id)];
        }
        return none;
    }

private:
    struct Node {
        Tensor<T> out;
        std::function<void(Tape&, const Tensor<T>&, const Node&)> back;
        Parameter<T>* param = nullptr;
    };

    ValueId push(Tensor<T> out, std::function<void(Tape&, const Tensor<T>&, const Node&)> back) {
        Node node;
        node.out = std::move(out);
        node.back = std::move(back);
        nodes_.push_back(std::move(node));
        return static_cast<ValueId>(nodes_.size()) - 1;
    }

    // Zero-initialized on first touch during backward. Constants get buffers
    // too; the cost is small and keeps the backward rules uniform.
    Tensor<T>& grad_buffer(ValueId id) {
        Tensor<T>& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty()) g = Tensor<T>(value(id).shape());
        return g;
    }

    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;
};

/// Central-difference gradient (f(θ+ε) − f(θ−ε)) / 2ε of a scalar objective,
/// one probe per scalar parameter. The objective must re-read the parameter
/// values on every evaluation.
template <typename T>
std::vector<Tensor<T>> finite_diff_grad(const std::function<T()>& objective,
                                        std::vector<Parameter<T>*> params,
                                        T epsilon = T(1e-4)) {
    if (!(epsilon > T(0))) throw ContractError("finite_diff_grad: epsilon must be > 0");
    std::vector<Tensor<T>> grads;
    grads.reserve(params.size());
    for (Parameter<T>* p : params) {
        Tensor<T> g(p->value.shape());
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const T saved = p->value[i];
            p->value[i] = saved + epsilon;
            const T up = objective();
            p->value[i] = saved - epsilon;
            const T down = objective();
            p->value[i] = saved;
            g[i] = (up - down) / (T(2) * epsilon);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

}  // namespace psp
