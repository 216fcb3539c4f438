#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mimlite/util.hpp"

// Reverse-mode automatic differentiation over dense double matrices.
//
// Every differentiable quantity is a `Var`, a shared pointer to a tape node
// holding the value, the accumulated gradient, and a closure that pushes the
// node's gradient to its parents.  Graphs are built eagerly by the op
// functions below and released when the last Var referencing them goes out of
// scope.  Batches are represented as vertically stacked per-example blocks;
// the bmm_* ops apply an independent matrix product per block.
namespace mimlite::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Mat value;
    Mat grad;  // allocated on first backward pass through this node
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;  // null for leaves/constants
    std::uint64_t id = 0;                    // creation order

    bool is_leaf() const { return !backward_fn; }
    void ensure_grad() {
        if (grad.rows() != value.rows() || grad.cols() != value.cols())
            grad = Mat::Zero(value.rows(), value.cols());
    }
};

// --- graph mode -------------------------------------------------------------

bool grad_enabled();

// Disables gradient tracking while alive (e.g. evaluation, frozen teachers).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// --- leaves -----------------------------------------------------------------

Var constant(Mat v);
Var param(Mat v);  // leaf with requires_grad = true

inline const Mat& value(const Var& v) { return v->value; }
double item(const Var& v);  // value of a 1x1 Var

// --- elementwise / linear ops -------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var add_rowvec(const Var& x, const Var& bias);  // bias: 1 x cols, broadcast over rows
Var gelu(const Var& x);                         // exact erf form
Var softmax_rows(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

// --- shape ops ----------------------------------------------------------------

Var slice_cols(const Var& x, int first, int count);
Var slice_rows(const Var& x, int first, int count);
Var concat_cols(const std::vector<Var>& xs);
Var concat_rows(const std::vector<Var>& xs);

// out(i, :) = x(idx[i], :)
Var gather_rows(const Var& x, std::vector<int> idx);

// out has `out_rows` rows, every row initialised to `fill` (1 x cols, typically a
// learnable token), then out(idx[i], :) = x(i, :).  Requires idx.size() == x.rows().
Var scatter_rows(const Var& x, const Var& fill, std::vector<int> idx, int out_rows);

// --- batched (block-stacked) ops ------------------------------------------------

// a: (B*rows_a) x k, b: (B*rows_b) x k  ->  (B*rows_a) x rows_b, block i = A_i * B_i^T
Var bmm_nt(const Var& a, const Var& b, int rows_a, int rows_b);

// a: (B*rows_a) x rows_b, b: (B*rows_b) x c  ->  (B*rows_a) x c, block i = A_i * B_i
Var bmm_nn(const Var& a, const Var& b, int rows_a, int rows_b);

// Mean over each block of `rows_per_block` consecutive rows (global average pooling).
Var mean_rows_blocks(const Var& x, int rows_per_block);

// s: (hs*rows) x c stacked per-head blocks, m: ht x hs mixing weights
// -> (ht*rows) x c with out-block t = sum_s m(t, s) * S_s
Var head_mix(const Var& s, const Var& m, int rows);

// --- reductions / losses --------------------------------------------------------

Var mean_all(const Var& x);                  // 1x1
Var mse(const Var& a, const Var& b);         // mean squared difference, 1x1
// Mean over rows of cross-entropy between softmax(logits) and dense target rows
// (rows of `target_probs` must sum to 1; dense form supports label smoothing and
// example mixing).
Var cross_entropy_probs(const Var& logits, const Mat& target_probs);

// --- backward --------------------------------------------------------------------

// Accumulates d(root)/d(leaf) into the .grad of every reachable leaf.  Gradients
// of interior nodes are reset at the start of each call; leaf gradients accumulate
// across calls until explicitly zeroed (optimizer responsibility).
void backward(const Var& root);

void zero_grad(const std::vector<Var>& params);

}  // namespace mimlite::ag
