#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "psp/errors.hpp"

namespace psp {

/// Dense n-dimensional array, flat row-major storage. The scalar type is
/// float or double; double is the mode every verification path runs in.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), T(0)) {}

    Tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_size(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }
    T& operator()(int i, int j) { return data_[idx2(i, j)]; }
    const T& operator()(int i, int j) const { return data_[idx2(i, j)]; }
    T& operator()(int i, int j, int k) { return data_[idx3(i, j, k)]; }
    const T& operator()(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
    T& operator()(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
    const T& operator()(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    Tensor reshaped(std::vector<int> new_shape) const {
        Tensor out(std::move(new_shape), data_);
        return out;
    }

    std::string shape_str() const { return shape_string(shape_); }

    static std::string shape_string(const std::vector<int>& s) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) os << "x";
            os << s[i];
        }
        os << "]";
        return os.str();
    }

private:
    static std::size_t checked_size(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int e : shape) {
            if (e <= 0) {
                throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
            }
            n *= static_cast<std::size_t>(e);
        }
        return shape.empty() ? 0 : n;
    }

    std::size_t idx2(int i, int j) const {
        return static_cast<std::size_t>(i) * shape_[1] + j;
    }
    std::size_t idx3(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
    }
    std::size_t idx4(int i, int j, int k, int l) const {
        return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

enum class Activation { identity, relu, tanh, sigmoid };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    throw ConfigError("unknown activation: " + s);
}

namespace detail {

// Register tile of the gemm kernels. Every C element is accumulated in
// ascending k regardless of tile position, so a given input always produces
// the same bits run to run.
inline constexpr int kGemmRowTile = 4;
inline constexpr int kGemmColTile = 16;

// One register tile: C[i0..i0+3][j0..j0+15] (+)= Apack^T * B, Apack a
// contiguous [k x 4] row block of A. The contiguous pack is what lets the
// compiler keep the whole accumulator tile in vector registers.
template <typename T>
void gemm_tile4x16(const T* __restrict apack, const T* __restrict b, T* __restrict c, int i0,
                   int j0, int k, int n, bool accumulate) {
    constexpr int JT = kGemmColTile;
    T c0[JT], c1[JT], c2[JT], c3[JT];
    T* crow0 = c + static_cast<std::size_t>(i0) * n + j0;
    T* crow1 = crow0 + n;
    T* crow2 = crow1 + n;
    T* crow3 = crow2 + n;
    for (int jj = 0; jj < JT; ++jj) {
        c0[jj] = accumulate ? crow0[jj] : T(0);
        c1[jj] = accumulate ? crow1[jj] : T(0);
        c2[jj] = accumulate ? crow2[jj] : T(0);
        c3[jj] = accumulate ? crow3[jj] : T(0);
    }
    for (int p = 0; p < k; ++p) {
        const T* __restrict ap = apack + static_cast<std::size_t>(p) * 4;
        const T* __restrict bseg = b + static_cast<std::size_t>(p) * n + j0;
        const T a0 = ap[0], a1 = ap[1], a2 = ap[2], a3 = ap[3];
        for (int jj = 0; jj < JT; ++jj) {
            c0[jj] += a0 * bseg[jj];
            c1[jj] += a1 * bseg[jj];
            c2[jj] += a2 * bseg[jj];
            c3[jj] += a3 * bseg[jj];
        }
    }
    for (int jj = 0; jj < JT; ++jj) {
        crow0[jj] = c0[jj];
        crow1[jj] = c1[jj];
        crow2[jj] = c2[jj];
        crow3[jj] = c3[jj];
    }
}

// One output row over a column range, plain ikj. Handles every ragged edge;
// still vectorizes over the contiguous j segment.
template <typename T>
void gemm_row_edge(const T* __restrict a, std::size_t astride, const T* __restrict b,
                   T* __restrict crow, int k, int n, int jbegin, int jend, bool accumulate) {
    if (!accumulate) {
        std::fill(crow + jbegin, crow + jend, T(0));
    }
    for (int p = 0; p < k; ++p) {
        const T aip = a[static_cast<std::size_t>(p) * astride];
        const T* __restrict brow = b + static_cast<std::size_t>(p) * n;
        for (int j = jbegin; j < jend; ++j) crow[j] += aip * brow[j];
    }
}

// Shared tiled main loop: j panels outermost so one B slab stays cached
// while every packed row block streams past it. Per-element accumulation is
// ascending in k in all paths, so results are identical run to run.
template <typename T>
void gemm_tiled(const std::vector<T>& apack, const T* __restrict b, T* __restrict c, int m4,
                int k, int n, bool accumulate) {
    constexpr int IT = kGemmRowTile;
    constexpr int JT = kGemmColTile;
    const int n16 = n - n % JT;
    const std::size_t tile_len = static_cast<std::size_t>(k) * IT;
    for (int j0 = 0; j0 < n16; j0 += JT) {
        for (int i0 = 0; i0 < m4; i0 += IT) {
            gemm_tile4x16(apack.data() + static_cast<std::size_t>(i0 / IT) * tile_len, b, c,
                          i0, j0, k, n, accumulate);
        }
    }
}

// C[m x n] = A[m x k] * B[k x n], or += when accumulate is set.
template <typename T>
void gemm_nn(const T* __restrict a, const T* __restrict b, T* __restrict c, int m, int k, int n,
             bool accumulate) {
    constexpr int IT = kGemmRowTile;
    constexpr int JT = kGemmColTile;
    const int m4 = m - m % IT;
    const int n16 = n - n % JT;
    std::vector<T> apack(static_cast<std::size_t>(m4) * k);
    for (int i0 = 0; i0 < m4; i0 += IT) {
        const T* arow = a + static_cast<std::size_t>(i0) * k;
        T* tile = apack.data() + static_cast<std::size_t>(i0) * k;
        for (int p = 0; p < k; ++p) {
            T* dst = tile + static_cast<std::size_t>(p) * IT;
            dst[0] = arow[p];
            dst[1] = arow[p + k];
            dst[2] = arow[p + 2 * k];
            dst[3] = arow[p + 3 * k];
        }
    }
    gemm_tiled(apack, b, c, m4, k, n, accumulate);
    for (int i = 0; i < m4 && n16 < n; ++i) {
        gemm_row_edge(a + static_cast<std::size_t>(i) * k, 1, b,
                      c + static_cast<std::size_t>(i) * n, k, n, n16, n, accumulate);
    }
    for (int i = m4; i < m; ++i) {
        gemm_row_edge(a + static_cast<std::size_t>(i) * k, 1, b,
                      c + static_cast<std::size_t>(i) * n, k, n, 0, n, accumulate);
    }
}

// C[m x n] = A^T * B with A stored [k x m], B stored [k x n].
template <typename T>
void gemm_tn(const T* __restrict a, const T* __restrict b, T* __restrict c, int m, int k, int n,
             bool accumulate) {
    constexpr int IT = kGemmRowTile;
    constexpr int JT = kGemmColTile;
    const int m4 = m - m % IT;
    const int n16 = n - n % JT;
    std::vector<T> apack(static_cast<std::size_t>(m4) * k);
    for (int i0 = 0; i0 < m4; i0 += IT) {
        T* tile = apack.data() + static_cast<std::size_t>(i0) * k;
        for (int p = 0; p < k; ++p) {
            const T* src = a + static_cast<std::size_t>(p) * m + i0;
            T* dst = tile + static_cast<std::size_t>(p) * IT;
            dst[0] = src[0];
            dst[1] = src[1];
            dst[2] = src[2];
            dst[3] = src[3];
        }
    }
    gemm_tiled(apack, b, c, m4, k, n, accumulate);
    for (int i = 0; i < m4 && n16 < n; ++i) {
        gemm_row_edge(a + static_cast<std::size_t>(i), static_cast<std::size_t>(m), b,
                      c + static_cast<std::size_t>(i) * n, k, n, n16, n, accumulate);
    }
    for (int i = m4; i < m; ++i) {
        gemm_row_edge(a + static_cast<std::size_t>(i), static_cast<std::size_t>(m), b,
                      c + static_cast<std::size_t>(i) * n, k, n, 0, n, accumulate);
    }
}

template <typename T>
void transpose(const T* a, T* at, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            at[static_cast<std::size_t>(j) * rows + i] = a[static_cast<std::size_t>(i) * cols + j];
        }
    }
}

inline int conv_out_extent(int in, int kernel, int stride, int padding, const char* axis) {
    const int span = in + 2 * padding - kernel;
    if (span < 0) {
        throw ConfigError(std::string("kernel larger than padded input along ") + axis);
    }
    if (span % stride != 0) {
        throw ConfigError(std::string("non-integral convolution output extent along ") + axis +
                          ": (" + std::to_string(in) + "+2*" + std::to_string(padding) + "-" +
                          std::to_string(kernel) + ") not divisible by stride " +
                          std::to_string(stride));
    }
    return span / stride + 1;
}

// Patch matrix for a whole batch: out is [cin*kh*kw x batch*oh*ow] row-major.
// Out-of-image taps (padding) contribute zeros.
template <typename T>
void im2col(const T* x, int batch, int cin, int h, int w, int kh, int kw, int stride,
            int padding, int oh, int ow, T* out) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t img = static_cast<std::size_t>(cin) * plane;
    const std::size_t positions = static_cast<std::size_t>(batch) * oh * ow;
    std::size_t r = 0;
    for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++r) {
                T* dst = out + r * positions;
                for (int b = 0; b < batch; ++b) {
                    const T* src = x + static_cast<std::size_t>(b) * img + ci * plane;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - padding + ky;
                        T* drow = dst + (static_cast<std::size_t>(b) * oh + oy) * ow;
                        if (iy < 0 || iy >= h) {
                            std::fill(drow, drow + ow, T(0));
                            continue;
                        }
                        const T* srow = src + static_cast<std::size_t>(iy) * w;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - padding + kx;
                            drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of a patch-matrix gradient back onto the input layout.
template <typename T>
void col2im_add(const T* cols, int batch, int cin, int h, int w, int kh, int kw, int stride,
                int padding, int oh, int ow, T* dx) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t img = static_cast<std::size_t>(cin) * plane;
    const std::size_t positions = static_cast<std::size_t>(batch) * oh * ow;
    std::size_t r = 0;
    for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++r) {
                const T* src = cols + r * positions;
                for (int b = 0; b < batch; ++b) {
                    T* dst = dx + static_cast<std::size_t>(b) * img + ci * plane;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= h) continue;
                        const T* srow = src + (static_cast<std::size_t>(b) * oh + oy) * ow;
                        T* drow = dst + static_cast<std::size_t>(iy) * w;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - padding + kx;
                            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

// Forward convolution on a [batch x cin x h x w] block via im2col + gemm.
// When cols_out is non-null the patch matrix is kept for the backward pass.
template <typename T>
Tensor<T> conv2d_batched(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias,
                         int stride, int padding, std::vector<T>* cols_out = nullptr) {
    if (x.rank() != 4) throw DimensionError("conv2d input must be rank 4, got " + x.shape_str());
    if (kernels.rank() != 4) {
        throw DimensionError("conv2d kernels must be rank 4, got " + kernels.shape_str());
    }
    if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
    if (padding < 0) throw ConfigError("conv2d padding must be >= 0");
    const int batch = x.extent(0), cin = x.extent(1), h = x.extent(2), w = x.extent(3);
    const int cout = kernels.extent(0), kh = kernels.extent(2), kw = kernels.extent(3);
    if (kernels.extent(1) != cin) {
        throw DimensionError("conv2d channel mismatch: input " + x.shape_str() + " vs kernels " +
                             kernels.shape_str());
    }
    if (bias.size() != static_cast<std::size_t>(cout)) {
        throw DimensionError("conv2d bias length " + std::to_string(bias.size()) +
                             " != output channels " + std::to_string(cout));
    }
    const int oh = conv_out_extent(h, kh, stride, padding, "height");
    const int ow = conv_out_extent(w, kw, stride, padding, "width");

    const int kdim = cin * kh * kw;
    const std::size_t positions = static_cast<std::size_t>(batch) * oh * ow;
    std::vector<T> local_cols;
    std::vector<T>& cols = cols_out ? *cols_out : local_cols;
    cols.assign(static_cast<std::size_t>(kdim) * positions, T(0));
    im2col(x.data(), batch, cin, h, w, kh, kw, stride, padding, oh, ow, cols.data());

    // kernels flat row-major is exactly [cout x kdim]
    std::vector<T> out_cp(static_cast<std::size_t>(cout) * positions);
    gemm_nn(kernels.data(), cols.data(), out_cp.data(), cout, kdim,
            static_cast<int>(positions), false);

    Tensor<T> out({batch, cout, oh, ow});
    const std::size_t opl = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < cout; ++c) {
        const T bc = bias[static_cast<std::size_t>(c)];
        const T* src = out_cp.data() + static_cast<std::size_t>(c) * positions;
        for (int b = 0; b < batch; ++b) {
            T* dst = out.data() + (static_cast<std::size_t>(b) * cout + c) * opl;
            const T* s = src + static_cast<std::size_t>(b) * opl;
            for (std::size_t p = 0; p < opl; ++p) dst[p] = s[p] + bc;
        }
    }
    return out;
}

template <typename T>
std::pair<Tensor<T>, std::vector<int>> maxpool2d_batched(const Tensor<T>& x, int window,
                                                         int stride) {
    if (x.rank() != 4) throw DimensionError("maxpool input must be rank 4, got " + x.shape_str());
    if (window < 1 || stride < 1) throw ConfigError("maxpool window and stride must be >= 1");
    const int batch = x.extent(0), ch = x.extent(1), h = x.extent(2), w = x.extent(3);
    if (window > h || window > w) {
        throw ConfigError("maxpool window " + std::to_string(window) +
                          " exceeds spatial extent " + std::to_string(h) + "x" +
                          std::to_string(w));
    }
    const int oh = (h - window) / stride + 1;
    const int ow = (w - window) / stride + 1;
    Tensor<T> out({batch, ch, oh, ow});
    std::vector<int> argmax(out.size());
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::size_t o = 0;
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < ch; ++c) {
            const T* src = x.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox, ++o) {
                    const int y0 = oy * stride, x0 = ox * stride;
                    T best = src[static_cast<std::size_t>(y0) * w + x0];
                    int best_at = y0 * w + x0;
                    for (int dy = 0; dy < window; ++dy) {
                        const T* row = src + static_cast<std::size_t>(y0 + dy) * w;
                        for (int dx = 0; dx < window; ++dx) {
                            // strict > keeps the first maximal element in row-major order
                            if (row[x0 + dx] > best) {
                                best = row[x0 + dx];
                                best_at = (y0 + dy) * w + x0 + dx;
                            }
                        }
                    }
                    out[o] = best;
                    argmax[o] = static_cast<int>((static_cast<std::size_t>(b) * ch + c) * plane) +
                                best_at;
                }
            }
        }
    }
    return {std::move(out), std::move(argmax)};
}

}  // namespace detail

/// Standard matrix product of two rank-2 tensors.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
        throw DimensionError("matmul shape mismatch: " + a.shape_str() + " x " + b.shape_str());
    }
    Tensor<T> c({a.extent(0), b.extent(1)});
    detail::gemm_nn(a.data(), b.data(), c.data(), a.extent(0), a.extent(1), b.extent(1), false);
    return c;
}

/// Cross-correlation of one [cin x h x w] image with [cout x cin x kh x kw]
/// kernels plus a per-channel bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 int stride, int padding) {
    if (input.rank() != 3) {
        throw DimensionError("conv2d input must be rank 3 [c x h x w], got " + input.shape_str());
    }
    Tensor<T> x4 = input.reshaped({1, input.extent(0), input.extent(1), input.extent(2)});
    Tensor<T> out = detail::conv2d_batched(x4, kernels, bias, stride, padding);
    return out.reshaped({out.extent(1), out.extent(2), out.extent(3)});
}

/// Per-window maximum over a [c x h x w] image; the second member maps each
/// output element to the flat input index that produced it.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> maxpool2d(const Tensor<T>& input, int window, int stride) {
    if (input.rank() != 3) {
        throw DimensionError("maxpool input must be rank 3 [c x h x w], got " + input.shape_str());
    }
    Tensor<T> x4 = input.reshaped({1, input.extent(0), input.extent(1), input.extent(2)});
    auto [out, argmax] = detail::maxpool2d_batched(x4, window, stride);
    return {out.reshaped({out.extent(1), out.extent(2), out.extent(3)}), std::move(argmax)};
}

/// Elementwise activation.
template <typename T>
Tensor<T> apply_activation(const Tensor<T>& z, Activation kind) {
    Tensor<T> y = z;
    T* d = y.data();
    const std::size_t n = y.size();
    switch (kind) {
        case Activation::identity:
            break;
        case Activation::relu:
            for (std::size_t i = 0; i < n; ++i) d[i] = d[i] > T(0) ? d[i] : T(0);
            break;
        case Activation::tanh:
            for (std::size_t i = 0; i < n; ++i) d[i] = std::tanh(d[i]);
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < n; ++i) d[i] = T(1) / (T(1) + std::exp(-d[i]));
            break;
    }
    return y;
}

/// Derivative of the activation at z, expressed through the already computed
/// output y (cheaper for tanh/sigmoid). relu uses subgradient 0 at z == 0.
template <typename T>
inline T activation_deriv_from(Activation kind, T z, T y) {
    switch (kind) {
        case Activation::identity: return T(1);
        case Activation::relu: return z > T(0) ? T(1) : T(0);
        case Activation::tanh: return T(1) - y * y;
        case Activation::sigmoid: return y * (T(1) - y);
    }
    return T(1);
}

}  // namespace psp
