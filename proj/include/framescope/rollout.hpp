#pragma once

#include <vector>

#include <Eigen/Dense>

#include "framescope/errors.hpp"
#include "framescope/layout.hpp"

namespace framescope {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Lower-triangular mask for an autoregressive model: position i may attend
// keys 0..i.
BoolMatrix plain_causal_mask(int n);

// Per-layer attention after head averaging. Every layer is N x N,
// nonnegative, row-stochastic over unmasked positions, exactly zero at masked
// positions. All math is carried in 64-bit floats; attention captured from a
// reduced-precision model is upcast at the adapter boundary.
struct AttentionStack {
    std::vector<Eigen::MatrixXd> layers;
    BoolMatrix causal_mask;
    bool heads_reduced = true;

    int size() const { return static_cast<int>(causal_mask.rows()); }
    int depth() const { return static_cast<int>(layers.size()); }

    // Throws StackShapeError when the invariants above fail.
    void validate(double row_sum_tol = 1e-6) const;
};

// Same capture before head reduction: layers[l][h] is the attention of head h
// at layer l.
struct HeadAttentionStack {
    std::vector<std::vector<Eigen::MatrixXd>> layers;
    BoolMatrix causal_mask;

    int size() const { return static_cast<int>(causal_mask.rows()); }
    int depth() const { return static_cast<int>(layers.size()); }
    int heads() const { return layers.empty() ? 0 : static_cast<int>(layers[0].size()); }
};

// sizes[j] = number of key positions token j may attend under the causal
// mask; j + 1 for a plain causal mask. Used to counteract the early-token
// mass accumulation of the cumulative product: columns are scaled by their
// key's visibility before rows are renormalized.
struct ReceptiveField {
    Eigen::VectorXd sizes;

    static ReceptiveField from_mask(const BoolMatrix& mask);
};

struct RolloutOptions {
    bool keep_intermediates = false;
    // Layer range [layer_begin, layer_end); layer_end < 0 means all layers.
    int layer_begin = 0;
    int layer_end = -1;
};

struct RolloutResult {
    Eigen::MatrixXd final;                  // R^(L), row-stochastic
    std::vector<Eigen::MatrixXd> per_layer; // R^(1..L) when requested
};

// Element-wise mean over heads. Throws StackShapeError on shape mismatch.
Eigen::MatrixXd head_reduce(const std::vector<Eigen::MatrixXd>& heads);

// Mean over heads applied layer by layer.
AttentionStack reduce_heads(const HeadAttentionStack& stack);

// A = 0.5 * W + 0.5 * I. Throws StackShapeError for non-square input.
Eigen::MatrixXd adjust_residual(const Eigen::MatrixXd& w);

// B = row_normalize(A * diag(S)). Rows whose post-scaling sum falls below
// 1e-12 raise DegenerateRowError instead of being silently renormalized.
Eigen::MatrixXd rf_normalize(const Eigen::MatrixXd& a, const ReceptiveField& rf);

// Cumulative product R^(l) = rf_normalize(adjust_residual(W^(l))) * R^(l-1)
// with R^(0) = I, over the configured layer range.
RolloutResult rollout(const AttentionStack& stack, const RolloutOptions& options = {});

}  // namespace framescope
