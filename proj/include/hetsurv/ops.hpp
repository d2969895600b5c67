#pragma once

#include <cstdint>
#include <vector>

#include "hetsurv/autograd.hpp"
#include "hetsurv/rng.hpp"

namespace hetsurv::ag {

// -------------------------------------------------------------------------
// Linear algebra
// -------------------------------------------------------------------------

// [m x k] * [k x n]; inner dimensions must agree.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);  // 2-D only
Var add(const Var& a, const Var& b);
// x [m x n] + row vector b [n] broadcast over rows.
Var add_rowvec(const Var& x, const Var& b);
Var scale(const Var& x, double c);

// out = x*w + b. The building block behind every MLP here.
Var dense_forward(const Var& x, const Var& w, const Var& b);

// Symmetric-normalized graph convolution: out = D^(-1/2)(A+I)D^(-1/2) * x * w.
// The adjacency is data, not a differentiable input.
Tensor gcn_normalize_adj(const Tensor& adj);
Var gcn_forward(const Tensor& adj, const Var& x, const Var& w);
// Same but with a pre-normalized adjacency (saves recomputing per layer).
Var gcn_forward_normalized(const Tensor& adj_hat, const Var& x, const Var& w);

// -------------------------------------------------------------------------
// Pointwise and normalization
// -------------------------------------------------------------------------

Var sigmoid(const Var& x);
Var vtanh(const Var& x);
// slope is a scalar parameter tensor [1]; receives gradient.
Var prelu(const Var& x, const Var& slope);
// Last-axis normalization with population variance and epsilon guard.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Inverted dropout; identity when !training or rate == 0. rate must be < 1.
Var dropout(const Var& x, double rate, bool training, Rng& rng);
Var softmax_vec(const Var& x);  // rank-1

// -------------------------------------------------------------------------
// Shape plumbing
// -------------------------------------------------------------------------

Var reshape(const Var& x, std::vector<int> shape);
Var stack_rows(const std::vector<Var>& rows);     // K vectors [C] -> [K x C]
Var stack_scalars(const std::vector<Var>& xs);    // K scalars -> [K]
Var take_row(const Var& x, int row);              // [M x C] -> [C]
Var sum_all(const Var& x);
Var mean_all(const Var& x);

// -------------------------------------------------------------------------
// Grid / submanifold operations. Grids are [h x w x c]; `visible` has h*w
// entries. Outputs at masked cells are exactly zero and masked inputs are
// never read.
// -------------------------------------------------------------------------

Var sparse_conv3x3(const Var& x, const std::vector<std::uint8_t>& visible, const Var& kernel,
                   const Var& bias);
Var sparse_dwconv3x3(const Var& x, const std::vector<std::uint8_t>& visible, const Var& kernel,
                     const Var& bias);
// Collects visible cells into a [V x c] matrix (row order = cell scan order).
Var gather_visible(const Var& grid, const std::vector<std::uint8_t>& visible);
// Inverse of gather_visible; masked cells become zero.
Var scatter_visible(const Var& rows, const std::vector<std::uint8_t>& visible, int h, int w);
// Dense grid with masked cells replaced by a learned token [c].
Var fill_masked(const Var& grid, const std::vector<std::uint8_t>& visible, const Var& token);

// Global response normalization pieces, on gathered [V x c] rows.
Var grn_aggregate(const Var& rows);                    // per-channel L2 -> [c]
Var grn_normalize(const Var& og, double eps = 1e-6);   // og / (sum + eps)
// Standard form: gamma*(x*n*c) + beta + x; literal form: x*n.
Var grn_calibrate(const Var& rows, const Var& n, const Var& gamma, const Var& beta, bool literal);
Var col_mean(const Var& rows);  // [V x c] -> [c]

// -------------------------------------------------------------------------
// Losses
// -------------------------------------------------------------------------

// Scaled cosine error between adjacency target and reconstruction, column-wise
// (1-cos)^tau averaged over columns with nonzero target norm. Throws StatError
// when the target has no nonzero column.
Var sce_loss(const Tensor& target, const Var& a_prime, double tau);

// Mean squared error over masked cells (and channels); zero when no cell is
// masked. Gradient flows into both reconstruction and target when required.
Var masked_mse(const Var& recon, const Var& target, const std::vector<std::uint8_t>& visible);

// Cox partial-likelihood loss with scores entering the hazard as exp(-H):
// sum over events i of H_i + log sum_{j: t_j >= t_i} exp(-H_j). Risk sets
// include ties; censored patients contribute through risk sets only.
Var cox_loss(const Var& scores, const std::vector<double>& times, const std::vector<int>& events);

// sum_i weights[i] * scalars[i]; weights is a rank-1 Var of matching length.
Var dot_weighted(const Var& weights, const std::vector<Var>& scalars);
// sum_i weights[i] * mats[i] with identically shaped matrices.
Var blend_rows(const Var& weights, const std::vector<Var>& mats);
// Fixed-coefficient linear combination of scalar Vars.
Var affine_sum(const std::vector<Var>& scalars, const std::vector<double>& coeffs);

}  // namespace hetsurv::ag
