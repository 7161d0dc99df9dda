#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "blindscope/rng.hpp"

namespace blindscope::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense NCHW activation block.
template <typename T>
struct Tensor4 {
    std::size_t n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor4() = default;
    Tensor4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_)
        : n(n_), c(c_), h(h_), w(w_), v(n_ * c_ * h_ * w_, T(0)) {}

    std::size_t size() const { return v.size(); }
    T& at(std::size_t i, std::size_t j, std::size_t y, std::size_t x) { return v[((i * c + j) * h + y) * w + x]; }
    const T& at(std::size_t i, std::size_t j, std::size_t y, std::size_t x) const {
        return v[((i * c + j) * h + y) * w + x];
    }
};

template <typename T>
struct ParamRef {
    std::string name;
    std::vector<T>* value = nullptr;
    std::vector<T>* grad = nullptr;  // null for buffers (running statistics)
};

namespace detail {

template <typename T>
inline void fill_normal(std::vector<T>& dst, double stddev, Rng rng) {
    for (auto& x : dst) x = static_cast<T>(rng.normal() * stddev);
}

} // namespace detail

// 3x3 / 1x1 convolution, no bias (always followed by a normalization layer).
// Weights live as a (out_c, in_c*k*k) row-major matrix; forward lowers the
// input to columns once per call and runs a single GEMM per batch.
template <typename T>
struct Conv2d {
    std::size_t in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0;
    std::vector<T> w, gw;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t pad_)
        : in_c(in), out_c(out), k(kernel), stride(stride_), pad(pad_),
          w(out * in * kernel * kernel, T(0)), gw(w.size(), T(0)) {}

    void init(const Rng& rng) {
        const double fan_in = static_cast<double>(in_c * k * k);
        detail::fill_normal(w, std::sqrt(2.0 / fan_in), rng);
    }

    std::size_t out_dim(std::size_t d) const { return (d + 2 * pad - k) / stride + 1; }

    struct Cache {
        Mat<T> col;  // (in_c*k*k, n*oh*ow)
        std::size_t n = 0, in_h = 0, in_w = 0;
    };

    void im2col(const Tensor4<T>& x, Mat<T>& col) const {
        const std::size_t oh = out_dim(x.h), ow = out_dim(x.w);
        col.resize(static_cast<Eigen::Index>(in_c * k * k), static_cast<Eigen::Index>(x.n * oh * ow));
        const auto ih = static_cast<std::ptrdiff_t>(x.h);
        const auto iw = static_cast<std::ptrdiff_t>(x.w);
        Eigen::Index j = 0;
        for (std::size_t i = 0; i < x.n; ++i)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox, ++j) {
                    T* dst = col.data() + static_cast<std::size_t>(j) * in_c * k * k;
                    const auto y0 = static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(pad);
                    const auto x0 = static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(pad);
                    for (std::size_t ci = 0; ci < in_c; ++ci)
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(ky);
                            for (std::size_t kx = 0; kx < k; ++kx, ++dst) {
                                const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(kx);
                                *dst = (iy >= 0 && iy < ih && ix >= 0 && ix < iw)
                                           ? x.at(i, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix))
                                           : T(0);
                            }
                        }
                }
    }

    Tensor4<T> forward(const Tensor4<T>& x, Cache* cache) const {
        if (x.c != in_c) throw std::invalid_argument("Conv2d: channel mismatch");
        Mat<T> local;
        Mat<T>& col = cache ? cache->col : local;
        im2col(x, col);
        if (cache) {
            cache->n = x.n;
            cache->in_h = x.h;
            cache->in_w = x.w;
        }
        const std::size_t oh = out_dim(x.h), ow = out_dim(x.w);
        Eigen::Map<const RowMat<T>> wm(w.data(), static_cast<Eigen::Index>(out_c),
                                       static_cast<Eigen::Index>(in_c * k * k));
        Mat<T> ym = wm * col;  // (out_c, n*oh*ow)
        Tensor4<T> y(x.n, out_c, oh, ow);
        for (std::size_t i = 0; i < x.n; ++i)
            for (std::size_t p = 0; p < oh * ow; ++p) {
                const Eigen::Index j = static_cast<Eigen::Index>(i * oh * ow + p);
                for (std::size_t co = 0; co < out_c; ++co)
                    y.v[(i * out_c + co) * oh * ow + p] = ym(static_cast<Eigen::Index>(co), j);
            }
        return y;
    }

    Tensor4<T> backward(const Cache& cache, const Tensor4<T>& dy) {
        const std::size_t oh = dy.h, ow = dy.w;
        Mat<T> dym(static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(dy.n * oh * ow));
        for (std::size_t i = 0; i < dy.n; ++i)
            for (std::size_t p = 0; p < oh * ow; ++p) {
                const Eigen::Index j = static_cast<Eigen::Index>(i * oh * ow + p);
                for (std::size_t co = 0; co < out_c; ++co)
                    dym(static_cast<Eigen::Index>(co), j) = dy.v[(i * out_c + co) * oh * ow + p];
            }

        Eigen::Map<RowMat<T>> gwm(gw.data(), static_cast<Eigen::Index>(out_c),
                                  static_cast<Eigen::Index>(in_c * k * k));
        gwm.noalias() += dym * cache.col.transpose();

        Eigen::Map<const RowMat<T>> wm(w.data(), static_cast<Eigen::Index>(out_c),
                                       static_cast<Eigen::Index>(in_c * k * k));
        Mat<T> dcol = wm.transpose() * dym;  // (in_c*k*k, n*oh*ow)

        Tensor4<T> dx(cache.n, in_c, cache.in_h, cache.in_w);
        const auto ih = static_cast<std::ptrdiff_t>(cache.in_h);
        const auto iw = static_cast<std::ptrdiff_t>(cache.in_w);
        Eigen::Index j = 0;
        for (std::size_t i = 0; i < cache.n; ++i)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox, ++j) {
                    const T* src = dcol.data() + static_cast<std::size_t>(j) * in_c * k * k;
                    const auto y0 = static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(pad);
                    const auto x0 = static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(pad);
                    for (std::size_t ci = 0; ci < in_c; ++ci)
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(ky);
                            for (std::size_t kx = 0; kx < k; ++kx, ++src) {
                                const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(kx);
                                if (iy >= 0 && iy < ih && ix >= 0 && ix < iw)
                                    dx.at(i, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) += *src;
                            }
                        }
                }
        return dx;
    }
};

// Per-channel normalization. Training uses batch statistics and maintains
// running ones for inference; affine_only skips statistics entirely, which
// makes outputs independent of batch composition.
template <typename T>
struct BatchNorm2d {
    std::size_t c = 0;
    bool affine_only = false;
    T momentum = T(0.1);
    T eps = T(1e-5);
    std::vector<T> gamma, beta, ggamma, gbeta;
    std::vector<T> run_mean, run_var;

    BatchNorm2d() = default;
    explicit BatchNorm2d(std::size_t channels, bool affine_only_)
        : c(channels), affine_only(affine_only_), gamma(channels, T(1)), beta(channels, T(0)),
          ggamma(channels, T(0)), gbeta(channels, T(0)), run_mean(channels, T(0)), run_var(channels, T(1)) {}

    struct Cache {
        std::vector<T> xhat;     // normalized input (raw input when affine_only)
        std::vector<T> inv_std;  // per channel
        std::size_t n = 0, h = 0, w = 0;
    };

    Tensor4<T> forward_train(const Tensor4<T>& x, Cache& cache) {
        if (x.c != c) throw std::invalid_argument("BatchNorm2d: channel mismatch");
        cache.n = x.n;
        cache.h = x.h;
        cache.w = x.w;
        Tensor4<T> y(x.n, x.c, x.h, x.w);
        const std::size_t plane = x.h * x.w;
        if (affine_only) {
            cache.xhat = x.v;
            for (std::size_t i = 0; i < x.n; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const T g = gamma[j], b = beta[j];
                    const std::size_t base = (i * c + j) * plane;
                    for (std::size_t p = 0; p < plane; ++p) y.v[base + p] = g * x.v[base + p] + b;
                }
            return y;
        }
        const auto m = static_cast<T>(x.n * plane);
        cache.xhat.resize(x.size());
        cache.inv_std.assign(c, T(0));
        for (std::size_t j = 0; j < c; ++j) {
            T sum = T(0), sq = T(0);
            for (std::size_t i = 0; i < x.n; ++i) {
                const std::size_t base = (i * c + j) * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    const T v = x.v[base + p];
                    sum += v;
                    sq += v * v;
                }
            }
            const T mean = sum / m;
            const T var = sq / m - mean * mean;  // biased, as used by the normalization itself
            const T inv = T(1) / std::sqrt(var + eps);
            cache.inv_std[j] = inv;
            run_mean[j] = (T(1) - momentum) * run_mean[j] + momentum * mean;
            run_var[j] = (T(1) - momentum) * run_var[j] + momentum * var;
            const T g = gamma[j], b = beta[j];
            for (std::size_t i = 0; i < x.n; ++i) {
                const std::size_t base = (i * c + j) * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    const T xh = (x.v[base + p] - mean) * inv;
                    cache.xhat[base + p] = xh;
                    y.v[base + p] = g * xh + b;
                }
            }
        }
        return y;
    }

    Tensor4<T> forward_eval(const Tensor4<T>& x) const {
        if (x.c != c) throw std::invalid_argument("BatchNorm2d: channel mismatch");
        Tensor4<T> y(x.n, x.c, x.h, x.w);
        const std::size_t plane = x.h * x.w;
        for (std::size_t j = 0; j < c; ++j) {
            const T g = gamma[j], b = beta[j];
            T mean = T(0), inv = T(1);
            if (!affine_only) {
                mean = run_mean[j];
                inv = T(1) / std::sqrt(run_var[j] + eps);
            }
            for (std::size_t i = 0; i < x.n; ++i) {
                const std::size_t base = (i * c + j) * plane;
                for (std::size_t p = 0; p < plane; ++p) y.v[base + p] = g * (x.v[base + p] - mean) * inv + b;
            }
        }
        return y;
    }

    Tensor4<T> backward(const Cache& cache, const Tensor4<T>& dy) {
        Tensor4<T> dx(cache.n, c, cache.h, cache.w);
        const std::size_t plane = cache.h * cache.w;
        const auto m = static_cast<T>(cache.n * plane);
        for (std::size_t j = 0; j < c; ++j) {
            T s1 = T(0), s2 = T(0);
            for (std::size_t i = 0; i < cache.n; ++i) {
                const std::size_t base = (i * c + j) * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    s1 += dy.v[base + p];
                    s2 += dy.v[base + p] * cache.xhat[base + p];
                }
            }
            gbeta[j] += s1;
            ggamma[j] += s2;
            const T g = gamma[j];
            if (affine_only) {
                for (std::size_t i = 0; i < cache.n; ++i) {
                    const std::size_t base = (i * c + j) * plane;
                    for (std::size_t p = 0; p < plane; ++p) dx.v[base + p] = g * dy.v[base + p];
                }
            } else {
                const T inv = cache.inv_std[j];
                for (std::size_t i = 0; i < cache.n; ++i) {
                    const std::size_t base = (i * c + j) * plane;
                    for (std::size_t p = 0; p < plane; ++p)
                        dx.v[base + p] =
                            g * inv * (dy.v[base + p] - s1 / m - cache.xhat[base + p] * s2 / m);
                }
            }
        }
        return dx;
    }
};

template <typename T>
struct Relu {
    struct Cache {
        std::vector<unsigned char> mask;
    };

    Tensor4<T> forward(const Tensor4<T>& x, Cache* cache) const {
        Tensor4<T> y = x;
        if (cache) cache->mask.assign(x.size(), 0);
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (y.v[i] > T(0)) {
                if (cache) cache->mask[i] = 1;
            } else {
                y.v[i] = T(0);
            }
        }
        return y;
    }

    // In-place variant used after the residual add.
    void forward_inplace(Tensor4<T>& x, Cache* cache) const {
        if (cache) cache->mask.assign(x.size(), 0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x.v[i] > T(0)) {
                if (cache) cache->mask[i] = 1;
            } else {
                x.v[i] = T(0);
            }
        }
    }

    Tensor4<T> backward(const Cache& cache, const Tensor4<T>& dy) const {
        Tensor4<T> dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (!cache.mask[i]) dx.v[i] = T(0);
        return dx;
    }
};

// 2x2, stride 2. Ties go to the first (scan-order) element.
template <typename T>
struct MaxPool2 {
    struct Cache {
        std::vector<std::uint32_t> argmax;  // flat input index per output element
        std::size_t n = 0, c = 0, in_h = 0, in_w = 0;
    };

    Tensor4<T> forward(const Tensor4<T>& x, Cache* cache) const {
        const std::size_t oh = x.h / 2, ow = x.w / 2;
        Tensor4<T> y(x.n, x.c, oh, ow);
        if (cache) {
            cache->argmax.assign(y.size(), 0);
            cache->n = x.n;
            cache->c = x.c;
            cache->in_h = x.h;
            cache->in_w = x.w;
        }
        std::size_t o = 0;
        for (std::size_t i = 0; i < x.n; ++i)
            for (std::size_t j = 0; j < x.c; ++j)
                for (std::size_t oy = 0; oy < oh; ++oy)
                    for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
                        std::size_t best_idx = ((i * x.c + j) * x.h + 2 * oy) * x.w + 2 * ox;
                        T best = x.v[best_idx];
                        for (std::size_t dy_ = 0; dy_ < 2; ++dy_)
                            for (std::size_t dx_ = 0; dx_ < 2; ++dx_) {
                                const std::size_t idx = ((i * x.c + j) * x.h + 2 * oy + dy_) * x.w + 2 * ox + dx_;
                                if (x.v[idx] > best) {
                                    best = x.v[idx];
                                    best_idx = idx;
                                }
                            }
                        y.v[o] = best;
                        if (cache) cache->argmax[o] = static_cast<std::uint32_t>(best_idx);
                    }
        return y;
    }

    Tensor4<T> backward(const Cache& cache, const Tensor4<T>& dy) const {
        Tensor4<T> dx(cache.n, cache.c, cache.in_h, cache.in_w);
        for (std::size_t o = 0; o < dy.size(); ++o) dx.v[cache.argmax[o]] += dy.v[o];
        return dx;
    }
};

// Global average pool to (n, c).
template <typename T>
struct GlobalAvgPool {
    struct Cache {
        std::size_t h = 0, w = 0;
    };

    Mat<T> forward(const Tensor4<T>& x, Cache* cache) const {
        if (cache) {
            cache->h = x.h;
            cache->w = x.w;
        }
        Mat<T> y(static_cast<Eigen::Index>(x.n), static_cast<Eigen::Index>(x.c));
        const std::size_t plane = x.h * x.w;
        for (std::size_t i = 0; i < x.n; ++i)
            for (std::size_t j = 0; j < x.c; ++j) {
                T sum = T(0);
                const std::size_t base = (i * x.c + j) * plane;
                for (std::size_t p = 0; p < plane; ++p) sum += x.v[base + p];
                y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sum / static_cast<T>(plane);
            }
        return y;
    }

    Tensor4<T> backward(const Cache& cache, std::size_t channels, const Mat<T>& dy) const {
        const auto n = static_cast<std::size_t>(dy.rows());
        Tensor4<T> dx(n, channels, cache.h, cache.w);
        const std::size_t plane = cache.h * cache.w;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < channels; ++j) {
                const T g = dy(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) / static_cast<T>(plane);
                const std::size_t base = (i * channels + j) * plane;
                for (std::size_t p = 0; p < plane; ++p) dx.v[base + p] = g;
            }
        return dx;
    }
};

template <typename T>
struct Linear {
    std::size_t in = 0, out = 0;
    std::vector<T> w, b, gw, gb;  // w row-major (out, in)

    Linear() = default;
    Linear(std::size_t in_, std::size_t out_)
        : in(in_), out(out_), w(in_ * out_, T(0)), b(out_, T(0)), gw(w.size(), T(0)), gb(out_, T(0)) {}

    void init(const Rng& rng) { detail::fill_normal(w, std::sqrt(2.0 / static_cast<double>(in)), rng); }

    struct Cache {
        Mat<T> x;
    };

    Mat<T> forward(const Mat<T>& x, Cache* cache) const {
        if (static_cast<std::size_t>(x.cols()) != in) throw std::invalid_argument("Linear: width mismatch");
        if (cache) cache->x = x;
        Eigen::Map<const RowMat<T>> wm(w.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
        Mat<T> y = x * wm.transpose();
        for (Eigen::Index i = 0; i < y.rows(); ++i)
            for (Eigen::Index j = 0; j < y.cols(); ++j) y(i, j) += b[static_cast<std::size_t>(j)];
        return y;
    }

    Mat<T> backward(const Cache& cache, const Mat<T>& dy) {
        Eigen::Map<RowMat<T>> gwm(gw.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
        gwm.noalias() += dy.transpose() * cache.x;
        for (Eigen::Index j = 0; j < dy.cols(); ++j) gb[static_cast<std::size_t>(j)] += dy.col(j).sum();
        Eigen::Map<const RowMat<T>> wm(w.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
        return dy * wm;
    }
};

// Softmax rows, stabilized by the row max.
template <typename T>
inline Mat<T> softmax_rows(const Mat<T>& logits) {
    Mat<T> p = logits;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const T m = p.row(i).maxCoeff();
        T sum = T(0);
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            p(i, j) = std::exp(p(i, j) - m);
            sum += p(i, j);
        }
        p.row(i) /= sum;
    }
    return p;
}

// Mean cross-entropy over the batch; writes d(loss)/d(logits) into dlogits.
template <typename T>
inline T cross_entropy(const Mat<T>& logits, std::span<const int> labels, Mat<T>* dlogits) {
    const auto n = static_cast<std::size_t>(logits.rows());
    if (labels.size() != n) throw std::invalid_argument("cross_entropy: label count mismatch");
    const auto k = static_cast<int>(logits.cols());
    T loss = T(0);
    Mat<T> p = logits;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k) throw std::invalid_argument("cross_entropy: label out of range");
        const T m = p.row(i).maxCoeff();
        T sum = T(0);
        for (Eigen::Index j = 0; j < p.cols(); ++j) sum += std::exp(p(i, j) - m);
        const T lse = m + std::log(sum);
        loss += lse - p(i, y);
        if (dlogits)
            for (Eigen::Index j = 0; j < p.cols(); ++j)
                p(i, j) = std::exp(p(i, j) - lse) - (j == y ? T(1) : T(0));
    }
    if (dlogits) *dlogits = p / static_cast<T>(n);
    return loss / static_cast<T>(n);
}

// Adaptive-moment optimizer with bias correction.
template <typename T>
struct Adam {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t t = 0;
    std::vector<std::vector<T>> m, v;

    void step(std::vector<ParamRef<T>>& params) {
        if (m.empty()) {
            m.resize(params.size());
            v.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m[i].assign(params[i].value->size(), T(0));
                v[i].assign(params[i].value->size(), T(0));
            }
        }
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& val = *params[i].value;
            auto& g = *params[i].grad;
            for (std::size_t j = 0; j < val.size(); ++j) {
                m[i][j] = static_cast<T>(beta1 * m[i][j] + (1.0 - beta1) * g[j]);
                v[i][j] = static_cast<T>(beta2 * v[i][j] + (1.0 - beta2) * g[j] * g[j]);
                const double mhat = m[i][j] / c1;
                const double vhat = v[i][j] / c2;
                val[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

// conv-norm-relu-conv-norm with an identity or projected shortcut.
template <typename T>
struct ResidualBlock {
    Conv2d<T> conv1, conv2;
    BatchNorm2d<T> bn1, bn2;
    bool has_proj = false;
    Conv2d<T> proj;
    BatchNorm2d<T> proj_bn;
    Relu<T> relu;

    ResidualBlock() = default;
    ResidualBlock(std::size_t in_c, std::size_t out_c, std::size_t stride, bool affine_only)
        : conv1(in_c, out_c, 3, stride, 1), conv2(out_c, out_c, 3, 1, 1), bn1(out_c, affine_only),
          bn2(out_c, affine_only), has_proj(stride != 1 || in_c != out_c) {
        if (has_proj) {
            proj = Conv2d<T>(in_c, out_c, 1, stride, 0);
            proj_bn = BatchNorm2d<T>(out_c, affine_only);
        }
    }

    struct Cache {
        typename Conv2d<T>::Cache c1, c2, cp;
        typename BatchNorm2d<T>::Cache b1, b2, bp;
        typename Relu<T>::Cache r1, r2;
    };

    Tensor4<T> forward_train(const Tensor4<T>& x, Cache& cache) {
        Tensor4<T> h = conv1.forward(x, &cache.c1);
        h = bn1.forward_train(h, cache.b1);
        relu.forward_inplace(h, &cache.r1);
        h = conv2.forward(h, &cache.c2);
        h = bn2.forward_train(h, cache.b2);
        Tensor4<T> sc = has_proj ? proj_bn.forward_train(proj.forward(x, &cache.cp), cache.bp) : x;
        for (std::size_t i = 0; i < h.size(); ++i) h.v[i] += sc.v[i];
        relu.forward_inplace(h, &cache.r2);
        return h;
    }

    Tensor4<T> forward_eval(const Tensor4<T>& x) const {
        Tensor4<T> h = conv1.forward(x, nullptr);
        h = bn1.forward_eval(h);
        relu.forward_inplace(h, nullptr);
        h = conv2.forward(h, nullptr);
        h = bn2.forward_eval(h);
        Tensor4<T> sc = has_proj ? proj_bn.forward_eval(proj.forward(x, nullptr)) : x;
        for (std::size_t i = 0; i < h.size(); ++i) h.v[i] += sc.v[i];
        relu.forward_inplace(h, nullptr);
        return h;
    }

    Tensor4<T> backward(Cache& cache, const Tensor4<T>& dy) {
        const Tensor4<T> g = relu.backward(cache.r2, dy);
        Tensor4<T> dmain = bn2.backward(cache.b2, g);
        dmain = conv2.backward(cache.c2, dmain);
        dmain = relu.backward(cache.r1, dmain);
        dmain = bn1.backward(cache.b1, dmain);
        Tensor4<T> dx = conv1.backward(cache.c1, dmain);
        if (has_proj) {
            Tensor4<T> dsc = proj_bn.backward(cache.bp, g);
            dsc = proj.backward(cache.cp, dsc);
            for (std::size_t i = 0; i < dx.size(); ++i) dx.v[i] += dsc.v[i];
        } else {
            for (std::size_t i = 0; i < dx.size(); ++i) dx.v[i] += g.v[i];
        }
        return dx;
    }

    template <typename Self, typename F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + ".conv1.w", self.conv1.w, self.conv1.gw);
        f(prefix + ".bn1.gamma", self.bn1.gamma, self.bn1.ggamma);
        f(prefix + ".bn1.beta", self.bn1.beta, self.bn1.gbeta);
        f(prefix + ".conv2.w", self.conv2.w, self.conv2.gw);
        f(prefix + ".bn2.gamma", self.bn2.gamma, self.bn2.ggamma);
        f(prefix + ".bn2.beta", self.bn2.beta, self.bn2.gbeta);
        if (self.has_proj) {
            f(prefix + ".proj.w", self.proj.w, self.proj.gw);
            f(prefix + ".proj_bn.gamma", self.proj_bn.gamma, self.proj_bn.ggamma);
            f(prefix + ".proj_bn.beta", self.proj_bn.beta, self.proj_bn.gbeta);
        }
    }

    template <typename Self, typename F>
    static void visit_buffers(Self& self, const std::string& prefix, F&& f) {
        f(prefix + ".bn1.run_mean", self.bn1.run_mean);
        f(prefix + ".bn1.run_var", self.bn1.run_var);
        f(prefix + ".bn2.run_mean", self.bn2.run_mean);
        f(prefix + ".bn2.run_var", self.bn2.run_var);
        if (self.has_proj) {
            f(prefix + ".proj_bn.run_mean", self.proj_bn.run_mean);
            f(prefix + ".proj_bn.run_var", self.proj_bn.run_var);
        }
    }
};

} // namespace blindscope::nn
