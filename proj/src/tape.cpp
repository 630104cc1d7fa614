#include "distillkit/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "distillkit/kernels.hpp"

namespace dk {

Var Tape::push(Mat value, std::function<void()> back) {
    Node n;
    n.grad = Mat(value.rows, value.cols);
    n.val = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Mat& value) { return push(value); }
Var Tape::leaf(Mat&& value) { return push(std::move(value)); }

void Tape::backward(Var loss) {
    if (val(loss).size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    nodes_[loss.id].grad.a[0] = 1.0;
    for (int i = loss.id; i >= 0; --i)
        if (nodes_[i].back) nodes_[i].back();
}

static void check_same(const Mat& a, const Mat& b, const char* op) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// Helper: finalize an op node by attaching its backward closure.
#define DK_ATTACH(out_var, ...)                       \
    do {                                              \
        int io = (out_var).id;                        \
        nodes_[io].back = [this, io, __VA_ARGS__]

#define DK_END(out_var) \
    ;                   \
    }                   \
    while (0)           \
        ;               \
    return out_var

Var Tape::add(Var a, Var b) {
    check_same(val(a), val(b), "add");
    Mat out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out.a[i] += val(b).a[i];
    Var o = push(std::move(out));
    int io = o.id, ia = a.id, ib = b.id;
    nodes_[io].back = [this, io, ia, ib] {
        const Mat& g = nodes_[io].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            nodes_[ia].grad.a[i] += g.a[i];
            nodes_[ib].grad.a[i] += g.a[i];
        }
    };
    return o;
}

Var Tape::sub(Var a, Var b) {
    check_same(val(a), val(b), "sub");
    Mat out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out.a[i] -= val(b).a[i];
    Var o = push(std::move(out));
    int io = o.id, ia = a.id, ib = b.id;
    nodes_[io].back = [this, io, ia, ib] {
        const Mat& g = nodes_[io].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            nodes_[ia].grad.a[i] += g.a[i];
            nodes_[ib].grad.a[i] -= g.a[i];
        }
    };
    return o;
}

Var Tape::mul(Var a, Var b) {
    check_same(val(a), val(b), "mul");
    Mat out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out.a[i] *= val(b).a[i];
    Var o = push(std::move(out));
    int io = o.id, ia = a.id, ib = b.id;
    nodes_[io].back = [this, io, ia, ib] {
        const Mat& g = nodes_[io].grad;
        const Mat& va = nodes_[ia].val;
        const Mat& vb = nodes_[ib].val;
        for (size_t i = 0; i < g.size(); ++i) {
            nodes_[ia].grad.a[i] += g.a[i] * vb.a[i];
            nodes_[ib].grad.a[i] += g.a[i] * va.a[i];
        }
    };
    return o;
}

Var Tape::div(Var a, Var b) {
    check_same(val(a), val(b), "div");
    Mat out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out.a[i] /= val(b).a[i];
    Var o = push(std::move(out));
    int io = o.id, ia = a.id, ib = b.id;
    nodes_[io].back = [this, io, ia, ib] {
        const Mat& g = nodes_[io].grad;
        const Mat& va = nodes_[ia].val;
        const Mat& vb = nodes_[ib].val;
        for (size_t i = 0; i < g.size(); ++i) {
            double inv = 1.0 / vb.a[i];
            nodes_[ia].grad.a[i] += g.a[i] * inv;
            nodes_[ib].grad.a[i] -= g.a[i] * va.a[i] * inv * inv;
        }
    };
    return o;
}

Var Tape::scale(Var a, double c) {
    Mat out = val(a);
    for (double& x : out.a) x *= c;
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia, c] {
        const Mat& g = nodes_[io].grad;
        for (size_t i = 0; i < g.size(); ++i) nodes_[ia].grad.a[i] += c * g.a[i];
    };
    return o;
}

Var Tape::add_scalar(Var a, double c) {
    Mat out = val(a);
    for (double& x : out.a) x += c;
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        for (size_t i = 0; i < g.size(); ++i) nodes_[ia].grad.a[i] += g.a[i];
    };
    return o;
}

Var Tape::exp(Var a) {
    Mat out = val(a);
    for (double& x : out.a) x = std::exp(x);
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        const Mat& y = nodes_[io].val;
        for (size_t i = 0; i < g.size(); ++i) nodes_[ia].grad.a[i] += g.a[i] * y.a[i];
    };
    return o;
}

Var Tape::log(Var a) {
    Mat out = val(a);
    for (double& x : out.a) x = std::log(x);
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        const Mat& x = nodes_[ia].val;
        for (size_t i = 0; i < g.size(); ++i) nodes_[ia].grad.a[i] += g.a[i] / x.a[i];
    };
    return o;
}

Var Tape::sqrt(Var a) {
    Mat out = val(a);
    for (double& x : out.a) x = std::sqrt(x);
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        const Mat& y = nodes_[io].val;
        for (size_t i = 0; i < g.size(); ++i)
            nodes_[ia].grad.a[i] += g.a[i] * 0.5 / std::max(y.a[i], 1e-12);
    };
    return o;
}

Var Tape::tanh(Var a) {
    Mat out = val(a);
    for (double& x : out.a) x = std::tanh(x);
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        const Mat& y = nodes_[io].val;
        for (size_t i = 0; i < g.size(); ++i) nodes_[ia].grad.a[i] += g.a[i] * (1.0 - y.a[i] * y.a[i]);
    };
    return o;
}

Var Tape::relu(Var a) {
    Mat out = val(a);
    for (double& x : out.a) x = x > 0.0 ? x : 0.0;
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        const Mat& x = nodes_[ia].val;
        for (size_t i = 0; i < g.size(); ++i)
            if (x.a[i] > 0.0) nodes_[ia].grad.a[i] += g.a[i];
    };
    return o;
}

Var Tape::matmul(Var a, Var b) {
    Mat out(val(a).rows, val(b).cols);
    kernels::gemm(val(a), val(b), out);
    Var o = push(std::move(out));
    int io = o.id, ia = a.id, ib = b.id;
    nodes_[io].back = [this, io, ia, ib] {
        // dA += G * B^T ; dB += A^T * G
        kernels::gemm_a_bt(nodes_[io].grad, nodes_[ib].val, nodes_[ia].grad);
        kernels::gemm_at_b(nodes_[ia].val, nodes_[io].grad, nodes_[ib].grad);
    };
    return o;
}

Var Tape::transpose(Var a) {
    const Mat& x = val(a);
    Mat out(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out(j, i) = x(i, j);
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        Mat& ga = nodes_[ia].grad;
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) ga(j, i) += g(i, j);
    };
    return o;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    int cols = val(parts[0]).cols, rows = 0;
    for (Var p : parts) {
        if (val(p).cols != cols) throw std::invalid_argument("concat_rows: column mismatch");
        rows += val(p).rows;
    }
    Mat out(rows, cols);
    int r = 0;
    std::vector<int> ids;
    std::vector<int> offsets;
    for (Var p : parts) {
        const Mat& x = val(p);
        std::copy(x.a.begin(), x.a.end(), out.a.begin() + static_cast<size_t>(r) * cols);
        ids.push_back(p.id);
        offsets.push_back(r);
        r += x.rows;
    }
    Var o = push(std::move(out));
    int io = o.id;
    nodes_[io].back = [this, io, ids, offsets, cols] {
        const Mat& g = nodes_[io].grad;
        for (size_t k = 0; k < ids.size(); ++k) {
            Mat& gp = nodes_[ids[k]].grad;
            const double* src = &g.a[static_cast<size_t>(offsets[k]) * cols];
            for (size_t i = 0; i < gp.size(); ++i) gp.a[i] += src[i];
        }
    };
    return o;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    int rows = val(parts[0]).rows, cols = 0;
    for (Var p : parts) {
        if (val(p).rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += val(p).cols;
    }
    Mat out(rows, cols);
    std::vector<int> ids, offsets;
    int c = 0;
    for (Var p : parts) {
        const Mat& x = val(p);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < x.cols; ++j) out(i, c + j) = x(i, j);
        ids.push_back(p.id);
        offsets.push_back(c);
        c += x.cols;
    }
    Var o = push(std::move(out));
    int io = o.id;
    nodes_[io].back = [this, io, ids, offsets] {
        const Mat& g = nodes_[io].grad;
        for (size_t k = 0; k < ids.size(); ++k) {
            Mat& gp = nodes_[ids[k]].grad;
            for (int i = 0; i < gp.rows; ++i)
                for (int j = 0; j < gp.cols; ++j) gp(i, j) += g(i, offsets[k] + j);
        }
    };
    return o;
}

Var Tape::slice_rows(Var a, int i0, int n) {
    const Mat& x = val(a);
    if (i0 < 0 || i0 + n > x.rows) throw std::invalid_argument("slice_rows: out of range");
    Mat out(n, x.cols);
    std::copy(x.a.begin() + static_cast<size_t>(i0) * x.cols,
              x.a.begin() + static_cast<size_t>(i0 + n) * x.cols, out.a.begin());
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia, i0] {
        const Mat& g = nodes_[io].grad;
        Mat& ga = nodes_[ia].grad;
        double* dst = &ga.a[static_cast<size_t>(i0) * ga.cols];
        for (size_t i = 0; i < g.size(); ++i) dst[i] += g.a[i];
    };
    return o;
}

Var Tape::slice_cols(Var a, int j0, int n) {
    const Mat& x = val(a);
    if (j0 < 0 || j0 + n > x.cols) throw std::invalid_argument("slice_cols: out of range");
    Mat out(x.rows, n);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < n; ++j) out(i, j) = x(i, j0 + j);
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia, j0] {
        const Mat& g = nodes_[io].grad;
        Mat& ga = nodes_[ia].grad;
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) ga(i, j0 + j) += g(i, j);
    };
    return o;
}

Var Tape::broadcast_row(Var a, int rows) {
    const Mat& x = val(a);
    if (x.rows != 1) throw std::invalid_argument("broadcast_row: input must be 1xC");
    Mat out(rows, x.cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < x.cols; ++j) out(i, j) = x(0, j);
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        Mat& ga = nodes_[ia].grad;
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) ga(0, j) += g(i, j);
    };
    return o;
}

Var Tape::broadcast_col(Var a, int cols) {
    const Mat& x = val(a);
    if (x.cols != 1) throw std::invalid_argument("broadcast_col: input must be Bx1");
    Mat out(x.rows, cols);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < cols; ++j) out(i, j) = x(i, 0);
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        Mat& ga = nodes_[ia].grad;
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) ga(i, 0) += g(i, j);
    };
    return o;
}

Var Tape::gather_rows(Var table, const std::vector<int>& ids) {
    const Mat& t = val(table);
    for (int id : ids)
        if (id < 0 || id >= t.rows) throw std::invalid_argument("gather_rows: id out of range");
    Mat out(static_cast<int>(ids.size()), t.cols);
    for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < t.cols; ++j) out(static_cast<int>(i), j) = t(ids[i], j);
    Var o = push(std::move(out));
    int io = o.id, it = table.id;
    nodes_[io].back = [this, io, it, ids] {
        const Mat& g = nodes_[io].grad;
        Mat& gt = nodes_[it].grad;
        for (size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < g.cols; ++j) gt(ids[i], j) += g(static_cast<int>(i), j);
    };
    return o;
}

Var Tape::take_diag(Var a) {
    const Mat& x = val(a);
    if (x.rows != x.cols) throw std::invalid_argument("take_diag: square matrix required");
    Mat out(x.rows, 1);
    for (int i = 0; i < x.rows; ++i) out(i, 0) = x(i, i);
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        Mat& ga = nodes_[ia].grad;
        for (int i = 0; i < g.rows; ++i) ga(i, i) += g(i, 0);
    };
    return o;
}

Var Tape::sum_all(Var a) {
    double s = 0.0;
    for (double x : val(a).a) s += x;
    Var o = push(Mat(1, 1, {s}));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        double g = nodes_[io].grad.a[0];
        for (double& x : nodes_[ia].grad.a) x += g;
    };
    return o;
}

Var Tape::mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(val(a).size())); }

Var Tape::sum_rows(Var a) {
    const Mat& x = val(a);
    Mat out(x.rows, 1);
    for (int i = 0; i < x.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < x.cols; ++j) s += x(i, j);
        out(i, 0) = s;
    }
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        Mat& ga = nodes_[ia].grad;
        for (int i = 0; i < ga.rows; ++i)
            for (int j = 0; j < ga.cols; ++j) ga(i, j) += g(i, 0);
    };
    return o;
}

Var Tape::mean_rows(Var a) {
    const Mat& x = val(a);
    Mat out(1, x.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out(0, j) += x(i, j);
    for (double& v : out.a) v /= x.rows;
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        Mat& ga = nodes_[ia].grad;
        double inv = 1.0 / ga.rows;
        for (int i = 0; i < ga.rows; ++i)
            for (int j = 0; j < ga.cols; ++j) ga(i, j) += g(0, j) * inv;
    };
    return o;
}

Var Tape::softmax_rows(Var a) {
    Mat out = val(a);
    kernels::softmax_rows(out);
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        const Mat& y = nodes_[io].val;
        Mat& ga = nodes_[ia].grad;
        for (int i = 0; i < g.rows; ++i) {
            double dotv = 0.0;
            for (int j = 0; j < g.cols; ++j) dotv += g(i, j) * y(i, j);
            for (int j = 0; j < g.cols; ++j) ga(i, j) += y(i, j) * (g(i, j) - dotv);
        }
    };
    return o;
}

Var Tape::log_softmax_rows(Var a) {
    const Mat& x = val(a);
    Mat out = x;
    for (int i = 0; i < x.rows; ++i) {
        double mx = x(i, 0);
        for (int j = 1; j < x.cols; ++j) mx = std::max(mx, x(i, j));
        double s = 0.0;
        for (int j = 0; j < x.cols; ++j) s += std::exp(x(i, j) - mx);
        double lse = mx + std::log(s);
        for (int j = 0; j < x.cols; ++j) out(i, j) = x(i, j) - lse;
    }
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        const Mat& y = nodes_[io].val;  // log-probs
        Mat& ga = nodes_[ia].grad;
        for (int i = 0; i < g.rows; ++i) {
            double gs = 0.0;
            for (int j = 0; j < g.cols; ++j) gs += g(i, j);
            for (int j = 0; j < g.cols; ++j) ga(i, j) += g(i, j) - std::exp(y(i, j)) * gs;
        }
    };
    return o;
}

Var Tape::logsumexp_rows(Var a) {
    const Mat& x = val(a);
    Mat out(x.rows, 1);
    for (int i = 0; i < x.rows; ++i) {
        double mx = x(i, 0);
        for (int j = 1; j < x.cols; ++j) mx = std::max(mx, x(i, j));
        double s = 0.0;
        for (int j = 0; j < x.cols; ++j) s += std::exp(x(i, j) - mx);
        out(i, 0) = mx + std::log(s);
    }
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia] {
        const Mat& g = nodes_[io].grad;
        const Mat& y = nodes_[io].val;
        const Mat& x = nodes_[ia].val;
        Mat& ga = nodes_[ia].grad;
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j) ga(i, j) += g(i, 0) * std::exp(x(i, j) - y(i, 0));
    };
    return o;
}

Var Tape::layer_norm_rows(Var a, double eps) {
    const Mat& x = val(a);
    Mat out(x.rows, x.cols);
    Mat inv_sigma(x.rows, 1);
    for (int i = 0; i < x.rows; ++i) {
        double mu = 0.0;
        for (int j = 0; j < x.cols; ++j) mu += x(i, j);
        mu /= x.cols;
        double var = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            double d = x(i, j) - mu;
            var += d * d;
        }
        var /= x.cols;
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma(i, 0) = is;
        for (int j = 0; j < x.cols; ++j) out(i, j) = (x(i, j) - mu) * is;
    }
    Var o = push(std::move(out));
    int io = o.id, ia = a.id;
    nodes_[io].back = [this, io, ia, inv_sigma] {
        const Mat& g = nodes_[io].grad;
        const Mat& y = nodes_[io].val;  // normalized values
        Mat& ga = nodes_[ia].grad;
        int C = g.cols;
        for (int i = 0; i < g.rows; ++i) {
            double gmean = 0.0, gymean = 0.0;
            for (int j = 0; j < C; ++j) {
                gmean += g(i, j);
                gymean += g(i, j) * y(i, j);
            }
            gmean /= C;
            gymean /= C;
            double is = inv_sigma(i, 0);
            for (int j = 0; j < C; ++j)
                ga(i, j) += is * (g(i, j) - gmean - y(i, j) * gymean);
        }
    };
    return o;
}

Var Tape::alpha_mix_log(Var a, Var b, double alpha) {
    check_same(val(a), val(b), "alpha_mix_log");
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha_mix_log: alpha outside [0,1]");
    if (alpha == 0.0) return add(b, scale(a, 0.0));  // keep both parents for shape symmetry
    if (alpha == 1.0) return add(a, scale(b, 0.0));
    const Mat& xa = val(a);
    const Mat& xb = val(b);
    Mat out(xa.rows, xa.cols);
    double la = std::log(alpha), lb = std::log1p(-alpha);
    for (size_t i = 0; i < out.size(); ++i) {
        double u = la + xa.a[i], v = lb + xb.a[i];
        double mx = std::max(u, v);
        out.a[i] = mx + std::log(std::exp(u - mx) + std::exp(v - mx));
    }
    Var o = push(std::move(out));
    int io = o.id, ia = a.id, ib = b.id;
    nodes_[io].back = [this, io, ia, ib, la, lb] {
        const Mat& g = nodes_[io].grad;
        const Mat& y = nodes_[io].val;
        const Mat& xa = nodes_[ia].val;
        const Mat& xb = nodes_[ib].val;
        for (size_t i = 0; i < g.size(); ++i) {
            nodes_[ia].grad.a[i] += g.a[i] * std::exp(la + xa.a[i] - y.a[i]);
            nodes_[ib].grad.a[i] += g.a[i] * std::exp(lb + xb.a[i] - y.a[i]);
        }
    };
    return o;
}

}  // namespace dk
