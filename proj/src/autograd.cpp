#include "mimlite/autograd.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

namespace mimlite::ag {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_next_id = 1;

void check(bool ok, const char* msg) {
    if (!ok) throw std::logic_error(std::string("autograd: ") + msg);
}

Var make_node(Mat v, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->id = g_next_id++;
    bool needs = false;
    if (g_grad_enabled)
        for (const auto& p : parents)
            if (p->requires_grad) needs = true;
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return n;
}

void accum(const Var& p, const Mat& g) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    p->grad += g;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var constant(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->id = g_next_id++;
    return n;
}

Var param(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->id = g_next_id++;
    return n;
}

double item(const Var& v) {
    check(v->value.size() == 1, "item() requires a 1x1 value");
    return v->value(0, 0);
}

// --- elementwise / linear ----------------------------------------------------

Var add(const Var& a, const Var& b) {
    check(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
          "add: shape mismatch");
    return make_node(a->value + b->value, {a, b}, [a, b](Node& n) {
        accum(a, n.grad);
        accum(b, n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
          "sub: shape mismatch");
    return make_node(a->value - b->value, {a, b}, [a, b](Node& n) {
        accum(a, n.grad);
        accum(b, -n.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    check(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
          "mul: shape mismatch");
    return make_node(a->value.cwiseProduct(b->value), {a, b}, [a, b](Node& n) {
        accum(a, n.grad.cwiseProduct(b->value));
        accum(b, n.grad.cwiseProduct(a->value));
    });
}

Var scale(const Var& a, double s) {
    return make_node(a->value * s, {a}, [a, s](Node& n) { accum(a, n.grad * s); });
}

Var matmul(const Var& a, const Var& b) {
    check(a->value.cols() == b->value.rows(), "matmul: inner dimension mismatch");
    return make_node(a->value * b->value, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) accum(a, n.grad * b->value.transpose());
        if (b->requires_grad) accum(b, a->value.transpose() * n.grad);
    });
}

Var add_rowvec(const Var& x, const Var& bias) {
    check(bias->value.rows() == 1 && bias->value.cols() == x->value.cols(),
          "add_rowvec: bias must be 1 x cols(x)");
    Mat v = x->value;
    v.rowwise() += RowVec(bias->value.row(0));
    return make_node(std::move(v), {x, bias}, [x, bias](Node& n) {
        accum(x, n.grad);
        if (bias->requires_grad) accum(bias, n.grad.colwise().sum());
    });
}

Var gelu(const Var& x) {
    const Mat& v = x->value;
    Mat y(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i)
        y(i) = 0.5 * v(i) * (1.0 + std::erf(v(i) * M_SQRT1_2));
    return make_node(std::move(y), {x}, [x](Node& n) {
        const Mat& v = x->value;
        Mat dx(v.rows(), v.cols());
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(v(i) * M_SQRT1_2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v(i) * v(i));
            dx(i) = n.grad(i) * (cdf + v(i) * pdf);
        }
        accum(x, dx);
    });
}

Var softmax_rows(const Var& x) {
    Mat y = x->value;
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        RowVec row = y.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp();
        y.row(r) = row / row.sum();
    }
    auto out = make_node(std::move(y), {x}, nullptr);
    if (out->requires_grad) {
        Var self_parent = x;
        out->backward_fn = [self_parent](Node& n) {
            // dx = y .* (g - rowwise dot(g, y))
            Mat dx(n.value.rows(), n.value.cols());
            for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
                const double dot = n.grad.row(r).dot(n.value.row(r));
                dx.row(r) =
                    (n.value.row(r).array() * (n.grad.row(r).array() - dot)).matrix();
            }
            accum(self_parent, dx);
        };
    }
    return out;
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Mat& v = x->value;
    const Eigen::Index d = v.cols();
    check(gamma->value.rows() == 1 && gamma->value.cols() == d, "layer_norm: gamma shape");
    check(beta->value.rows() == 1 && beta->value.cols() == d, "layer_norm: beta shape");
    Mat xhat(v.rows(), d);
    Vec inv_std(v.rows());
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        const double mean = v.row(r).mean();
        RowVec centered = v.row(r).array() - mean;
        const double var = centered.squaredNorm() / static_cast<double>(d);
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = centered * inv_std(r);
    }
    Mat y = xhat;
    y.array().rowwise() *= gamma->value.row(0).array();
    y.rowwise() += RowVec(beta->value.row(0));
    return make_node(std::move(y), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std](Node& n) {
                         const Eigen::Index d = xhat.cols();
                         if (gamma->requires_grad)
                             accum(gamma, n.grad.cwiseProduct(xhat).colwise().sum());
                         if (beta->requires_grad) accum(beta, n.grad.colwise().sum());
                         if (!x->requires_grad) return;
                         Mat dx(xhat.rows(), d);
                         for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                             RowVec dxhat =
                                 n.grad.row(r).cwiseProduct(gamma->value.row(0));
                             const double s1 = dxhat.sum();
                             const double s2 = dxhat.dot(xhat.row(r));
                             dx.row(r) = ((inv_std(r) / static_cast<double>(d)) *
                                          (static_cast<double>(d) * dxhat.array() - s1 -
                                           xhat.row(r).array() * s2))
                                             .matrix();
                         }
                         accum(x, dx);
                     });
}

// --- shape ops -----------------------------------------------------------------

Var slice_cols(const Var& x, int first, int count) {
    check(first >= 0 && count >= 0 && first + count <= x->value.cols(), "slice_cols: range");
    return make_node(x->value.middleCols(first, count), {x}, [x, first, count](Node& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        x->grad.middleCols(first, count) += n.grad;
    });
}

Var slice_rows(const Var& x, int first, int count) {
    check(first >= 0 && count >= 0 && first + count <= x->value.rows(), "slice_rows: range");
    return make_node(x->value.middleRows(first, count), {x}, [x, first, count](Node& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        x->grad.middleRows(first, count) += n.grad;
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    check(!xs.empty(), "concat_cols: empty input");
    Eigen::Index rows = xs[0]->value.rows(), cols = 0;
    for (const auto& x : xs) {
        check(x->value.rows() == rows, "concat_cols: row mismatch");
        cols += x->value.cols();
    }
    Mat v(rows, cols);
    Eigen::Index at = 0;
    for (const auto& x : xs) {
        v.middleCols(at, x->value.cols()) = x->value;
        at += x->value.cols();
    }
    std::vector<Var> parents = xs;
    return make_node(std::move(v), std::move(parents), [xs](Node& n) {
        Eigen::Index at = 0;
        for (const auto& x : xs) {
            accum(x, n.grad.middleCols(at, x->value.cols()));
            at += x->value.cols();
        }
    });
}

Var concat_rows(const std::vector<Var>& xs) {
    check(!xs.empty(), "concat_rows: empty input");
    Eigen::Index cols = xs[0]->value.cols(), rows = 0;
    for (const auto& x : xs) {
        check(x->value.cols() == cols, "concat_rows: column mismatch");
        rows += x->value.rows();
    }
    Mat v(rows, cols);
    Eigen::Index at = 0;
    for (const auto& x : xs) {
        v.middleRows(at, x->value.rows()) = x->value;
        at += x->value.rows();
    }
    std::vector<Var> parents = xs;
    return make_node(std::move(v), std::move(parents), [xs](Node& n) {
        Eigen::Index at = 0;
        for (const auto& x : xs) {
            accum(x, n.grad.middleRows(at, x->value.rows()));
            at += x->value.rows();
        }
    });
}

Var gather_rows(const Var& x, std::vector<int> idx) {
    Mat v(static_cast<Eigen::Index>(idx.size()), x->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        check(idx[i] >= 0 && idx[i] < x->value.rows(), "gather_rows: index out of range");
        v.row(static_cast<Eigen::Index>(i)) = x->value.row(idx[i]);
    }
    return make_node(std::move(v), {x}, [x, idx = std::move(idx)](Node& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            x->grad.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    });
}

Var scatter_rows(const Var& x, const Var& fill, std::vector<int> idx, int out_rows) {
    check(static_cast<int>(idx.size()) == x->value.rows(), "scatter_rows: idx size");
    check(fill->value.rows() == 1 && fill->value.cols() == x->value.cols(),
          "scatter_rows: fill must be 1 x cols(x)");
    Mat v = fill->value.row(0).replicate(out_rows, 1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        check(idx[i] >= 0 && idx[i] < out_rows, "scatter_rows: index out of range");
        v.row(idx[i]) = x->value.row(static_cast<Eigen::Index>(i));
    }
    return make_node(std::move(v), {x, fill},
                     [x, fill, idx = std::move(idx), out_rows](Node& n) {
                         if (x->requires_grad) {
                             x->ensure_grad();
                             for (std::size_t i = 0; i < idx.size(); ++i)
                                 x->grad.row(static_cast<Eigen::Index>(i)) += n.grad.row(idx[i]);
                         }
                         if (fill->requires_grad) {
                             std::vector<bool> taken(static_cast<std::size_t>(out_rows), false);
                             for (int j : idx) taken[static_cast<std::size_t>(j)] = true;
                             RowVec g = RowVec::Zero(n.grad.cols());
                             for (int r = 0; r < out_rows; ++r)
                                 if (!taken[static_cast<std::size_t>(r)]) g += n.grad.row(r);
                             accum(fill, g);
                         }
                     });
}

// --- batched ops ------------------------------------------------------------------

Var bmm_nt(const Var& a, const Var& b, int rows_a, int rows_b) {
    check(rows_a > 0 && rows_b > 0, "bmm_nt: block rows must be positive");
    check(a->value.rows() % rows_a == 0, "bmm_nt: a rows not divisible by block size");
    check(b->value.rows() % rows_b == 0, "bmm_nt: b rows not divisible by block size");
    const Eigen::Index nblocks = a->value.rows() / rows_a;
    check(b->value.rows() / rows_b == nblocks, "bmm_nt: block count mismatch");
    check(a->value.cols() == b->value.cols(), "bmm_nt: inner dimension mismatch");
    Mat v(a->value.rows(), rows_b);
    for (Eigen::Index i = 0; i < nblocks; ++i)
        v.middleRows(i * rows_a, rows_a).noalias() =
            a->value.middleRows(i * rows_a, rows_a) *
            b->value.middleRows(i * rows_b, rows_b).transpose();
    return make_node(std::move(v), {a, b}, [a, b, rows_a, rows_b, nblocks](Node& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (Eigen::Index i = 0; i < nblocks; ++i)
                a->grad.middleRows(i * rows_a, rows_a).noalias() +=
                    n.grad.middleRows(i * rows_a, rows_a) *
                    b->value.middleRows(i * rows_b, rows_b);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (Eigen::Index i = 0; i < nblocks; ++i)
                b->grad.middleRows(i * rows_b, rows_b).noalias() +=
                    n.grad.middleRows(i * rows_a, rows_a).transpose() *
                    a->value.middleRows(i * rows_a, rows_a);
        }
    });
}

Var bmm_nn(const Var& a, const Var& b, int rows_a, int rows_b) {
    check(rows_a > 0 && rows_b > 0, "bmm_nn: block rows must be positive");
    check(a->value.rows() % rows_a == 0, "bmm_nn: a rows not divisible by block size");
    check(b->value.rows() % rows_b == 0, "bmm_nn: b rows not divisible by block size");
    const Eigen::Index nblocks = a->value.rows() / rows_a;
    check(b->value.rows() / rows_b == nblocks, "bmm_nn: block count mismatch");
    check(a->value.cols() == rows_b, "bmm_nn: a cols must equal b block rows");
    Mat v(a->value.rows(), b->value.cols());
    for (Eigen::Index i = 0; i < nblocks; ++i)
        v.middleRows(i * rows_a, rows_a).noalias() =
            a->value.middleRows(i * rows_a, rows_a) * b->value.middleRows(i * rows_b, rows_b);
    return make_node(std::move(v), {a, b}, [a, b, rows_a, rows_b, nblocks](Node& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (Eigen::Index i = 0; i < nblocks; ++i)
                a->grad.middleRows(i * rows_a, rows_a).noalias() +=
                    n.grad.middleRows(i * rows_a, rows_a) *
                    b->value.middleRows(i * rows_b, rows_b).transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (Eigen::Index i = 0; i < nblocks; ++i)
                b->grad.middleRows(i * rows_b, rows_b).noalias() +=
                    a->value.middleRows(i * rows_a, rows_a).transpose() *
                    n.grad.middleRows(i * rows_a, rows_a);
        }
    });
}

Var mean_rows_blocks(const Var& x, int rows_per_block) {
    check(rows_per_block > 0 && x->value.rows() % rows_per_block == 0,
          "mean_rows_blocks: rows not divisible by block size");
    const Eigen::Index nblocks = x->value.rows() / rows_per_block;
    Mat v(nblocks, x->value.cols());
    for (Eigen::Index i = 0; i < nblocks; ++i)
        v.row(i) = x->value.middleRows(i * rows_per_block, rows_per_block).colwise().mean();
    return make_node(std::move(v), {x}, [x, rows_per_block, nblocks](Node& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const double inv = 1.0 / static_cast<double>(rows_per_block);
        for (Eigen::Index i = 0; i < nblocks; ++i)
            x->grad.middleRows(i * rows_per_block, rows_per_block).rowwise() +=
                RowVec(n.grad.row(i) * inv);
    });
}

Var head_mix(const Var& s, const Var& m, int rows) {
    check(rows > 0 && s->value.rows() % rows == 0, "head_mix: rows not divisible");
    const Eigen::Index hs = s->value.rows() / rows;
    check(m->value.cols() == hs, "head_mix: mixer cols must equal source head count");
    const Eigen::Index ht = m->value.rows();
    Mat v = Mat::Zero(ht * rows, s->value.cols());
    for (Eigen::Index t = 0; t < ht; ++t)
        for (Eigen::Index j = 0; j < hs; ++j)
            v.middleRows(t * rows, rows).noalias() +=
                m->value(t, j) * s->value.middleRows(j * rows, rows);
    return make_node(std::move(v), {s, m}, [s, m, rows, hs, ht](Node& n) {
        if (s->requires_grad) {
            s->ensure_grad();
            for (Eigen::Index j = 0; j < hs; ++j)
                for (Eigen::Index t = 0; t < ht; ++t)
                    s->grad.middleRows(j * rows, rows).noalias() +=
                        m->value(t, j) * n.grad.middleRows(t * rows, rows);
        }
        if (m->requires_grad) {
            m->ensure_grad();
            for (Eigen::Index t = 0; t < ht; ++t)
                for (Eigen::Index j = 0; j < hs; ++j)
                    m->grad(t, j) += n.grad.middleRows(t * rows, rows)
                                         .cwiseProduct(s->value.middleRows(j * rows, rows))
                                         .sum();
        }
    });
}

// --- reductions / losses -------------------------------------------------------------

Var mean_all(const Var& x) {
    Mat v(1, 1);
    v(0, 0) = x->value.mean();
    return make_node(std::move(v), {x}, [x](Node& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        x->grad.array() += n.grad(0, 0) / static_cast<double>(x->value.size());
    });
}

Var mse(const Var& a, const Var& b) {
    Var d = sub(a, b);
    return mean_all(mul(d, d));
}

Var cross_entropy_probs(const Var& logits, const Mat& target_probs) {
    check(logits->value.rows() == target_probs.rows() &&
              logits->value.cols() == target_probs.cols(),
          "cross_entropy_probs: shape mismatch");
    const Eigen::Index n_rows = logits->value.rows();
    Mat soft(logits->value.rows(), logits->value.cols());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < n_rows; ++r) {
        RowVec row = logits->value.row(r);
        const double mx = row.maxCoeff();
        RowVec shifted = row.array() - mx;
        const double lse = std::log(shifted.array().exp().sum());
        RowVec logp = shifted.array() - lse;
        soft.row(r) = logp.array().exp();
        loss -= target_probs.row(r).dot(logp);
    }
    Mat v(1, 1);
    v(0, 0) = loss / static_cast<double>(n_rows);
    return make_node(std::move(v), {logits}, [logits, soft, target_probs, n_rows](Node& n) {
        accum(logits, (n.grad(0, 0) / static_cast<double>(n_rows)) * (soft - target_probs));
    });
}

// --- backward ---------------------------------------------------------------------------

void backward(const Var& root) {
    check(root != nullptr, "backward: null root");
    check(root->value.size() == 1, "backward: root must be scalar");
    check(root->requires_grad, "backward: root does not require grad");

    // Iterative post-order DFS over the subgraph that requires gradients.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients are per-call scratch; leaf gradients persist.
    for (Node* n : order) {
        if (!n->is_leaf()) {
            n->ensure_grad();
            n->grad.setZero();
        } else {
            n->ensure_grad();
        }
    }
    root->grad(0, 0) += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
    if (root->is_leaf()) return;
}

void zero_grad(const std::vector<Var>& params) {
    for (const auto& p : params) {
        p->ensure_grad();
        p->grad.setZero();
    }
}

}  // namespace mimlite::ag
