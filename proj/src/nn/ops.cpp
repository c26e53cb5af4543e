#include "rsic/nn/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace rsic::nn::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

void require(bool cond, const std::string& what) {
    if (!cond) throw ShapeError(what);
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

Tensor unary(const Tensor& x, auto&& f) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return out;
}

}  // namespace

Var add(Var a, Var b) {
    require(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    Tensor out = a.value();
    out += b.value();
    return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& dy) {
        if (g.requires_grad(a)) g.grad(a) += dy;
        if (g.requires_grad(b)) g.grad(b) += dy;
    });
}

Var add_broadcast(Var x, Var row) {
    const Tensor& xv = x.value();
    const Tensor& rv = row.value();
    require(rv.size() > 0 && xv.size() % rv.size() == 0, "add_broadcast: incompatible shapes");
    const Shape& xs = xv.shape();
    const Shape& rs = rv.shape();
    require(rs.size() <= xs.size() && std::equal(rs.rbegin(), rs.rend(), xs.rbegin()),
            "add_broadcast: " + shape_string(rs) + " is not a suffix of " + shape_string(xs));
    Tensor out = xv;
    const std::size_t n = rv.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += rv[i % n];
    return x.graph().record(std::move(out), {x, row}, [x, row, n](Graph& g, const Tensor& dy) {
        if (g.requires_grad(x)) g.grad(x) += dy;
        if (g.requires_grad(row)) {
            Tensor& gr = g.grad(row);
            for (std::size_t i = 0; i < dy.size(); ++i) gr[i % n] += dy[i];
        }
    });
}

Var scale(Var x, double factor) {
    Tensor out = unary(x.value(), [factor](double v) { return v * factor; });
    return x.graph().record(std::move(out), {x}, [x, factor](Graph& g, const Tensor& dy) {
        Tensor& gx = g.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i] * factor;
    });
}

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return x.graph().record(std::move(out), {x}, [x](Graph& g, const Tensor& dy) {
        Tensor& gx = g.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i];
    });
}

Var linear(Var x, Var w, Var b) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    require(wv.rank() == 2, "linear: weight must be rank 2");
    const std::size_t in = wv.dim(0), out_dim = wv.dim(1);
    require(last_dim(xv.shape()) == in, "linear: input width " + std::to_string(last_dim(xv.shape())) +
                                            " does not match weight " + shape_string(wv.shape()));
    const std::size_t n = xv.size() / in;
    Shape out_shape = xv.shape();
    out_shape.back() = out_dim;
    Tensor out(out_shape);
    MatMap y(out.data(), n, out_dim);
    y.noalias() = ConstMatMap(xv.data(), n, in) * ConstMatMap(wv.data(), in, out_dim);
    if (b.valid()) {
        require(b.value().size() == out_dim, "linear: bias size mismatch");
        y.rowwise() += ConstVecMap(b.value().data(), out_dim).transpose();
    }
    std::vector<Var> inputs{x, w};
    if (b.valid()) inputs.push_back(b);
    return x.graph().record(std::move(out), inputs, [x, w, b, n, in, out_dim](Graph& g, const Tensor& dy) {
        ConstMatMap gy(dy.data(), n, out_dim);
        if (g.requires_grad(x)) {
            MatMap(g.grad(x).data(), n, in).noalias() += gy * ConstMatMap(w.value().data(), in, out_dim).transpose();
        }
        if (g.requires_grad(w)) {
            MatMap(g.grad(w).data(), in, out_dim).noalias() += ConstMatMap(x.value().data(), n, in).transpose() * gy;
        }
        if (b.valid() && g.requires_grad(b)) {
            VecMap(g.grad(b).data(), out_dim) += gy.colwise().sum().transpose();
        }
    });
}

Var matmul_transposed(Var x, Var table) {
    const Tensor& xv = x.value();
    const Tensor& tv = table.value();
    require(tv.rank() == 2 && last_dim(xv.shape()) == tv.dim(1), "matmul_transposed: width mismatch");
    const std::size_t d = tv.dim(1), vocab = tv.dim(0), n = xv.size() / d;
    Shape out_shape = xv.shape();
    out_shape.back() = vocab;
    Tensor out(out_shape);
    MatMap(out.data(), n, vocab).noalias() = ConstMatMap(xv.data(), n, d) * ConstMatMap(tv.data(), vocab, d).transpose();
    return x.graph().record(std::move(out), {x, table}, [x, table, n, d, vocab](Graph& g, const Tensor& dy) {
        ConstMatMap gy(dy.data(), n, vocab);
        if (g.requires_grad(x)) {
            MatMap(g.grad(x).data(), n, d).noalias() += gy * ConstMatMap(table.value().data(), vocab, d);
        }
        if (g.requires_grad(table)) {
            MatMap(g.grad(table).data(), vocab, d).noalias() += gy.transpose() * ConstMatMap(x.value().data(), n, d);
        }
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = x.value();
    const std::size_t d = last_dim(xv.shape());
    require(gamma.value().size() == d && beta.value().size() == d, "layer_norm: affine size mismatch");
    const std::size_t n = xv.size() / d;
    Tensor out(xv.shape());
    Tensor normalized(xv.shape());
    std::vector<double> inv_std(n);
    const double* gm = gamma.value().data();
    const double* bt = beta.value().data();
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mu) * inv_std[r];
            normalized[r * d + j] = xh;
            out[r * d + j] = xh * gm[j] + bt[j];
        }
    }
    return x.graph().record(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, d, n, normalized = std::move(normalized), inv_std = std::move(inv_std)](Graph& g,
                                                                                                 const Tensor& dy) {
            const double* gm = gamma.value().data();
            if (g.requires_grad(gamma) || g.requires_grad(beta)) {
                Tensor& gg = g.grad(gamma);
                Tensor& gb = g.grad(beta);
                for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += dy[r * d + j] * normalized[r * d + j];
                        gb[j] += dy[r * d + j];
                    }
                }
            }
            if (!g.requires_grad(x)) return;
            Tensor& gx = g.grad(x);
            std::vector<double> gxh(d);
            for (std::size_t r = 0; r < n; ++r) {
                double mean_g = 0.0, mean_gx = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    gxh[j] = dy[r * d + j] * gm[j];
                    mean_g += gxh[j];
                    mean_gx += gxh[j] * normalized[r * d + j];
                }
                mean_g /= static_cast<double>(d);
                mean_gx /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    gx[r * d + j] += inv_std[r] * (gxh[j] - mean_g - normalized[r * d + j] * mean_gx);
                }
            }
        });
}

Var gelu(Var x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
    constexpr double a = 0.044715;
    Tensor out = unary(x.value(), [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); });
    return x.graph().record(std::move(out), {x}, [x](Graph& g, const Tensor& dy) {
        const Tensor& xv = x.value();
        Tensor& gx = g.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            const double v = xv[i];
            const double t = std::tanh(c * (v + a * v * v * v));
            const double dt = (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
            gx[i] += dy[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
        }
    });
}

Var relu(Var x) {
    Tensor out = unary(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
    return x.graph().record(std::move(out), {x}, [x](Graph& g, const Tensor& dy) {
        const Tensor& xv = x.value();
        Tensor& gx = g.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            if (xv[i] > 0.0) gx[i] += dy[i];
        }
    });
}

Var hardswish(Var x) {
    Tensor out = unary(x.value(), [](double v) { return v * std::clamp(v + 3.0, 0.0, 6.0) / 6.0; });
    return x.graph().record(std::move(out), {x}, [x](Graph& g, const Tensor& dy) {
        const Tensor& xv = x.value();
        Tensor& gx = g.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            const double v = xv[i];
            const double d = v <= -3.0 ? 0.0 : (v >= 3.0 ? 1.0 : (2.0 * v + 3.0) / 6.0);
            gx[i] += dy[i] * d;
        }
    });
}

Var softmax(Var x) {
    const Tensor& xv = x.value();
    const std::size_t d = last_dim(xv.shape());
    const std::size_t n = xv.size() / d;
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = xv.data() + r * d;
        double* o = out.data() + r * d;
        const double mx = *std::max_element(row, row + d);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) sum += (o[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < d; ++j) o[j] /= sum;
    }
    Tensor probs = out;
    return x.graph().record(std::move(out), {x}, [x, d, n, probs = std::move(probs)](Graph& g, const Tensor& dy) {
        Tensor& gx = g.grad(x);
        for (std::size_t r = 0; r < n; ++r) {
            double inner = 0.0;
            for (std::size_t j = 0; j < d; ++j) inner += dy[r * d + j] * probs[r * d + j];
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += probs[r * d + j] * (dy[r * d + j] - inner);
        }
    });
}

Var attention(Var q, Var k, Var v, std::size_t heads, bool causal, Tensor* probs_out) {
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    require(qv.rank() == 3 && kv.rank() == 3 && vv.rank() == 3, "attention: inputs must be rank 3");
    const std::size_t batch = qv.dim(0), tq = qv.dim(1), d = qv.dim(2), tk = kv.dim(1);
    require(kv.dim(0) == batch && vv.dim(0) == batch && kv.dim(2) == d && vv.dim(2) == d && vv.dim(1) == tk,
            "attention: q/k/v shapes disagree");
    require(heads > 0 && d % heads == 0, "attention: width not divisible by heads");
    require(!causal || tq <= tk, "attention: causal mask needs tq <= tk");
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor out({batch, tq, d});
    Tensor probs({batch, heads, tq, tk});
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            ConstStridedMap qh(qv.data() + b * tq * d + h * dh, tq, dh, stride);
            ConstStridedMap kh(kv.data() + b * tk * d + h * dh, tk, dh, stride);
            ConstStridedMap vh(vv.data() + b * tk * d + h * dh, tk, dh, stride);
            MatMap p(probs.data() + ((b * heads + h) * tq) * tk, tq, tk);
            p.noalias() = (qh * kh.transpose()) * inv_sqrt;
            for (std::size_t i = 0; i < tq; ++i) {
                // A causal query at row i may see keys 0..i (+ offset when tk > tq).
                const std::size_t visible = causal ? i + 1 + (tk - tq) : tk;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, p(i, j));
                double sum = 0.0;
                for (std::size_t j = 0; j < visible; ++j) sum += (p(i, j) = std::exp(p(i, j) - mx));
                for (std::size_t j = 0; j < visible; ++j) p(i, j) /= sum;
                for (std::size_t j = visible; j < tk; ++j) p(i, j) = 0.0;
            }
            StridedMap oh(out.data() + b * tq * d + h * dh, tq, dh, stride);
            oh.noalias() = p * vh;
        }
    }
    if (probs_out) *probs_out = probs;
    return q.graph().record(
        std::move(out), {q, k, v},
        [q, k, v, batch, heads, tq, tk, d, dh, inv_sqrt, probs = std::move(probs)](Graph& g, const Tensor& dy) {
            const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
            const bool need_q = g.requires_grad(q), need_k = g.requires_grad(k), need_v = g.requires_grad(v);
            double* gq = need_q ? g.grad(q).data() : nullptr;
            double* gk = need_k ? g.grad(k).data() : nullptr;
            double* gv = need_v ? g.grad(v).data() : nullptr;
            RowMat dp(tq, tk), ds(tq, tk);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    ConstStridedMap qh(q.value().data() + b * tq * d + h * dh, tq, dh, stride);
                    ConstStridedMap kh(k.value().data() + b * tk * d + h * dh, tk, dh, stride);
                    ConstStridedMap vh(v.value().data() + b * tk * d + h * dh, tk, dh, stride);
                    ConstStridedMap go(dy.data() + b * tq * d + h * dh, tq, dh, stride);
                    ConstMatMap p(probs.data() + ((b * heads + h) * tq) * tk, tq, tk);
                    if (need_v) {
                        StridedMap(gv + b * tk * d + h * dh, tk, dh, stride).noalias() += p.transpose() * go;
                    }
                    if (!need_q && !need_k) continue;
                    dp.noalias() = go * vh.transpose();
                    for (std::size_t i = 0; i < tq; ++i) {
                        const double inner = p.row(i).dot(dp.row(i));
                        for (std::size_t j = 0; j < tk; ++j) ds(i, j) = p(i, j) * (dp(i, j) - inner) * inv_sqrt;
                    }
                    if (need_q) StridedMap(gq + b * tq * d + h * dh, tq, dh, stride).noalias() += ds * kh;
                    if (need_k) StridedMap(gk + b * tk * d + h * dh, tk, dh, stride).noalias() += ds.transpose() * qh;
                }
            }
        });
}

Var embedding(Var table, std::span<const std::int32_t> ids, const Shape& index_shape) {
    const Tensor& tv = table.value();
    require(tv.rank() == 2, "embedding: table must be rank 2");
    require(shape_size(index_shape) == ids.size(), "embedding: index shape does not match id count");
    const std::size_t rows = tv.dim(0), d = tv.dim(1);
    Shape out_shape = index_shape;
    out_shape.push_back(d);
    Tensor out(out_shape);
    std::vector<std::int32_t> idx(ids.begin(), ids.end());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= rows) {
            throw ShapeError("embedding: id " + std::to_string(idx[i]) + " outside table of " + std::to_string(rows));
        }
        std::copy_n(tv.data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
    }
    return table.graph().record(std::move(out), {table}, [table, d, idx = std::move(idx)](Graph& g, const Tensor& dy) {
        Tensor& gt = g.grad(table);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            double* row = gt.data() + static_cast<std::size_t>(idx[i]) * d;
            for (std::size_t j = 0; j < d; ++j) row[j] += dy[i * d + j];
        }
    });
}

Var cross_entropy(Var logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask) {
    const Tensor& lv = logits.value();
    const std::size_t vocab = last_dim(lv.shape());
    const std::size_t n = lv.size() / vocab;
    require(targets.size() == n && mask.size() == n, "cross_entropy: target/mask count mismatch");
    std::size_t count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    if (count == 0) throw std::invalid_argument("cross_entropy: every position is masked out");
    Tensor probs(lv.shape());
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (!mask[r]) continue;
        const auto t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) throw ShapeError("cross_entropy: target id out of range");
        const double* row = lv.data() + r * vocab;
        double* p = probs.data() + r * vocab;
        const double mx = *std::max_element(row, row + vocab);
        double sum = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) sum += (p[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < vocab; ++j) p[j] /= sum;
        total += (mx + std::log(sum)) - row[t];
    }
    const double denom = static_cast<double>(count);
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    std::vector<std::uint8_t> msk(mask.begin(), mask.end());
    return logits.graph().record(
        Tensor::scalar(total / denom), {logits},
        [logits, vocab, n, denom, probs = std::move(probs), tgt = std::move(tgt), msk = std::move(msk)](
            Graph& g, const Tensor& dy) {
            Tensor& gl = g.grad(logits);
            const double s = dy[0] / denom;
            for (std::size_t r = 0; r < n; ++r) {
                if (!msk[r]) continue;
                for (std::size_t j = 0; j < vocab; ++j) gl[r * vocab + j] += s * probs[r * vocab + j];
                gl[r * vocab + static_cast<std::size_t>(tgt[r])] -= s;
            }
        });
}

namespace {

struct ConvGeometry {
    std::size_t batch, height, width, cin, kh, kw, cg, cout, stride, padding, groups, ho, wo;

    std::size_t patch() const { return kh * kw * cg; }
    std::size_t rows() const { return batch * ho * wo; }
};

// Visits every (output row, patch slot, input offset) triple of one channel group.
template <typename Fn>
void for_each_tap(const ConvGeometry& c, std::size_t grp, Fn&& fn) {
    const std::size_t patch = c.patch();
    for (std::size_t n = 0; n < c.batch; ++n)
        for (std::size_t oy = 0; oy < c.ho; ++oy)
            for (std::size_t ox = 0; ox < c.wo; ++ox) {
                const std::size_t row = (n * c.ho + oy) * c.wo + ox;
                for (std::size_t ky = 0; ky < c.kh; ++ky) {
                    const long iy = static_cast<long>(oy * c.stride + ky) - static_cast<long>(c.padding);
                    if (iy < 0 || iy >= static_cast<long>(c.height)) continue;
                    for (std::size_t kx = 0; kx < c.kw; ++kx) {
                        const long ix = static_cast<long>(ox * c.stride + kx) - static_cast<long>(c.padding);
                        if (ix < 0 || ix >= static_cast<long>(c.width)) continue;
                        const std::size_t in_off =
                            ((n * c.height + static_cast<std::size_t>(iy)) * c.width + static_cast<std::size_t>(ix)) * c.cin +
                            grp * c.cg;
                        fn(row * patch + (ky * c.kw + kx) * c.cg, in_off);
                    }
                }
            }
}

void im2col(const ConvGeometry& c, const double* x, std::size_t grp, RowMat& cols) {
    cols.setZero(static_cast<Eigen::Index>(c.rows()), static_cast<Eigen::Index>(c.patch()));
    double* dst = cols.data();
    for_each_tap(c, grp, [&](std::size_t col_off, std::size_t in_off) { std::copy_n(x + in_off, c.cg, dst + col_off); });
}

}  // namespace

Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t padding, std::size_t groups) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    require(xv.rank() == 4 && wv.rank() == 4, "conv2d: expects NHWC input and (kh, kw, cin, cout) weight");
    ConvGeometry c{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(1), wv.dim(2), wv.dim(3),
                   stride,    padding,   groups,    0,         0};
    require(groups > 0 && c.cin == c.cg * groups && c.cout % groups == 0,
            "conv2d: channel/group mismatch, input " + shape_string(xv.shape()) + " weight " + shape_string(wv.shape()));
    require(stride > 0 && c.height + 2 * padding >= c.kh && c.width + 2 * padding >= c.kw,
            "conv2d: kernel larger than input");
    c.ho = (c.height + 2 * padding - c.kh) / stride + 1;
    c.wo = (c.width + 2 * padding - c.kw) / stride + 1;
    const std::size_t og = c.cout / groups;

    Tensor out({c.batch, c.ho, c.wo, c.cout});
    MatMap y(out.data(), c.rows(), c.cout);
    ConstMatMap wm(wv.data(), c.patch(), c.cout);
    RowMat cols;
    for (std::size_t grp = 0; grp < groups; ++grp) {
        im2col(c, xv.data(), grp, cols);
        y.middleCols(grp * og, og).noalias() = cols * wm.middleCols(grp * og, og);
    }
    if (b.valid()) {
        require(b.value().size() == c.cout, "conv2d: bias size mismatch");
        y.rowwise() += ConstVecMap(b.value().data(), c.cout).transpose();
    }

    std::vector<Var> inputs{x, w};
    if (b.valid()) inputs.push_back(b);
    return x.graph().record(std::move(out), inputs, [x, w, b, c, og](Graph& g, const Tensor& dy) {
        ConstMatMap gy(dy.data(), c.rows(), c.cout);
        ConstMatMap wm(w.value().data(), c.patch(), c.cout);
        if (b.valid() && g.requires_grad(b)) VecMap(g.grad(b).data(), c.cout) += gy.colwise().sum().transpose();
        const bool need_w = g.requires_grad(w), need_x = g.requires_grad(x);
        RowMat cols, dcols;
        for (std::size_t grp = 0; grp < c.groups; ++grp) {
            if (need_w) {
                im2col(c, x.value().data(), grp, cols);
                MatMap(g.grad(w).data(), c.patch(), c.cout).middleCols(grp * og, og).noalias() +=
                    cols.transpose() * gy.middleCols(grp * og, og);
            }
            if (need_x) {
                dcols.noalias() = gy.middleCols(grp * og, og) * wm.middleCols(grp * og, og).transpose();
                double* gx = g.grad(x).data();
                const double* src = dcols.data();
                for_each_tap(c, grp, [&](std::size_t col_off, std::size_t in_off) {
                    for (std::size_t ch = 0; ch < c.cg; ++ch) gx[in_off + ch] += src[col_off + ch];
                });
            }
        }
    });
}

Var adaptive_avg_pool2d(Var x, std::size_t out_h, std::size_t out_w) {
    const Tensor& xv = x.value();
    require(xv.rank() == 4, "adaptive_avg_pool2d: expects NHWC input");
    require(out_h > 0 && out_w > 0, "adaptive_avg_pool2d: empty output grid");
    const std::size_t batch = xv.dim(0), height = xv.dim(1), width = xv.dim(2), ch = xv.dim(3);
    struct Bin {
        std::size_t y0, y1, x0, x1;
    };
    std::vector<Bin> bins;
    bins.reserve(out_h * out_w);
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            bins.push_back({oy * height / out_h, ((oy + 1) * height + out_h - 1) / out_h, ox * width / out_w,
                            ((ox + 1) * width + out_w - 1) / out_w});
        }
    }
    Tensor out({batch, out_h, out_w, ch});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t bi = 0; bi < bins.size(); ++bi) {
            const Bin& bin = bins[bi];
            const double area = static_cast<double>((bin.y1 - bin.y0) * (bin.x1 - bin.x0));
            double* dst = out.data() + (n * bins.size() + bi) * ch;
            for (std::size_t y = bin.y0; y < bin.y1; ++y)
                for (std::size_t xx = bin.x0; xx < bin.x1; ++xx) {
                    const double* src = xv.data() + ((n * height + y) * width + xx) * ch;
                    for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c];
                }
            for (std::size_t c = 0; c < ch; ++c) dst[c] /= area;
        }
    }
    return x.graph().record(std::move(out), {x}, [x, bins, batch, height, width, ch](Graph& g, const Tensor& dy) {
        Tensor& gx = g.grad(x);
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t bi = 0; bi < bins.size(); ++bi) {
                const Bin& bin = bins[bi];
                const double area = static_cast<double>((bin.y1 - bin.y0) * (bin.x1 - bin.x0));
                const double* src = dy.data() + (n * bins.size() + bi) * ch;
                for (std::size_t y = bin.y0; y < bin.y1; ++y)
                    for (std::size_t xx = bin.x0; xx < bin.x1; ++xx) {
                        double* dst = gx.data() + ((n * height + y) * width + xx) * ch;
                        for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c] / area;
                    }
            }
        }
    });
}

Var concat_last(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_last: nothing to concatenate");
    Shape base = parts.front().shape();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        Shape s = p.shape();
        require(s.size() == base.size() && std::equal(s.begin(), s.end() - 1, base.begin()),
                "concat_last: leading dimensions differ");
        widths.push_back(s.back());
        total += s.back();
    }
    const std::size_t rows = parts.front().value().size() / widths.front();
    Shape out_shape = base;
    out_shape.back() = total;
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r) std::copy_n(pv.data() + r * widths[k], widths[k], out.data() + r * total + offset);
        offset += widths[k];
    }
    return parts.front().graph().record(std::move(out), parts, [parts, widths, rows, total](Graph& g, const Tensor& dy) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            if (g.requires_grad(parts[k])) {
                Tensor& gp = g.grad(parts[k]);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < widths[k]; ++j) gp[r * widths[k] + j] += dy[r * total + offset + j];
            }
            offset += widths[k];
        }
    });
}

Var weighted_patch_sum(Var enc, Var weights) {
    const Tensor& ev = enc.value();
    require(ev.rank() == 3 && weights.value().size() == ev.dim(1), "weighted_patch_sum: weights must match patches");
    const std::size_t batch = ev.dim(0), patches = ev.dim(1), d = ev.dim(2);
    Tensor out({batch, d});
    const double* w = weights.value().data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t p = 0; p < patches; ++p)
            for (std::size_t j = 0; j < d; ++j) out[b * d + j] += w[p] * ev[(b * patches + p) * d + j];
    return enc.graph().record(std::move(out), {enc, weights}, [enc, weights, batch, patches, d](Graph& g, const Tensor& dy) {
        const double* w = weights.value().data();
        const Tensor& ev = enc.value();
        if (g.requires_grad(enc)) {
            Tensor& ge = g.grad(enc);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t p = 0; p < patches; ++p)
                    for (std::size_t j = 0; j < d; ++j) ge[(b * patches + p) * d + j] += w[p] * dy[b * d + j];
        }
        if (g.requires_grad(weights)) {
            Tensor& gw = g.grad(weights);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t p = 0; p < patches; ++p)
                    for (std::size_t j = 0; j < d; ++j) gw[p] += ev[(b * patches + p) * d + j] * dy[b * d + j];
        }
    });
}

Var dot(Var x, const Tensor& w) {
    require(x.value().size() == w.size(), "dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += x.value()[i] * w[i];
    return x.graph().record(Tensor::scalar(s), {x}, [x, w](Graph& g, const Tensor& dy) {
        Tensor& gx = g.grad(x);
        for (std::size_t i = 0; i < w.size(); ++i) gx[i] += dy[0] * w[i];
    });
}

Var mean(Var x) {
    const Tensor& xv = x.value();
    require(xv.size() > 0, "mean: empty tensor");
    double s = 0.0;
    for (double v : xv.values()) s += v;
    const double n = static_cast<double>(xv.size());
    return x.graph().record(Tensor::scalar(s / n), {x}, [x, n](Graph& g, const Tensor& dy) {
        Tensor& gx = g.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dy[0] / n;
    });
}

}  // namespace rsic::nn::ops
