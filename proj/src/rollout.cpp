#include "framescope/rollout.hpp"

#include <cmath>
#include <string>

namespace framescope {

namespace {
constexpr double kDegenerateRowSum = 1e-12;
}

BoolMatrix plain_causal_mask(int n) {
    BoolMatrix mask(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) mask(i, j) = j <= i;
    return mask;
}

void AttentionStack::validate(double row_sum_tol) const {
    const int n = size();
    if (causal_mask.rows() != causal_mask.cols()) {
        throw StackShapeError("causal mask must be square");
    }
    if (layers.empty()) {
        throw StackShapeError("attention stack has no layers");
    }
    for (size_t l = 0; l < layers.size(); ++l) {
        const auto& w = layers[l];
        if (w.rows() != n || w.cols() != n) {
            throw StackShapeError("layer " + std::to_string(l) + " is " +
                                  std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                                  ", expected " + std::to_string(n) + "x" + std::to_string(n));
        }
        for (int i = 0; i < n; ++i) {
            double row_sum = 0.0;
            for (int j = 0; j < n; ++j) {
                const double v = w(i, j);
                if (!causal_mask(i, j)) {
                    if (v != 0.0) {
                        throw StackShapeError("layer " + std::to_string(l) +
                                              " has nonzero mass at masked position (" +
                                              std::to_string(i) + "," + std::to_string(j) + ")");
                    }
                    continue;
                }
                if (v < 0.0 || !std::isfinite(v)) {
                    throw StackShapeError("layer " + std::to_string(l) +
                                          " has negative or non-finite entry at (" +
                                          std::to_string(i) + "," + std::to_string(j) + ")");
                }
                row_sum += v;
            }
            if (std::abs(row_sum - 1.0) > row_sum_tol) {
                throw StackShapeError("layer " + std::to_string(l) + " row " + std::to_string(i) +
                                      " sums to " + std::to_string(row_sum));
            }
        }
    }
}

ReceptiveField ReceptiveField::from_mask(const BoolMatrix& mask) {
    const int n = static_cast<int>(mask.rows());
    ReceptiveField rf;
    rf.sizes.resize(n);
    for (int j = 0; j < n; ++j) {
        int count = 0;
        for (int k = 0; k < n; ++k) count += mask(j, k) ? 1 : 0;
        if (count < 1) {
            throw StackShapeError("mask row " + std::to_string(j) + " attends no positions");
        }
        rf.sizes(j) = static_cast<double>(count);
    }
    return rf;
}

Eigen::MatrixXd head_reduce(const std::vector<Eigen::MatrixXd>& heads) {
    if (heads.empty()) {
        throw StackShapeError("head_reduce: no heads");
    }
    const auto rows = heads[0].rows();
    const auto cols = heads[0].cols();
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(rows, cols);
    for (const auto& h : heads) {
        if (h.rows() != rows || h.cols() != cols) {
            throw StackShapeError("head_reduce: head shape mismatch");
        }
        mean += h;
    }
    mean /= static_cast<double>(heads.size());
    return mean;
}

AttentionStack reduce_heads(const HeadAttentionStack& stack) {
    AttentionStack out;
    out.causal_mask = stack.causal_mask;
    out.heads_reduced = true;
    out.layers.reserve(stack.layers.size());
    for (const auto& heads : stack.layers) out.layers.push_back(head_reduce(heads));
    return out;
}

Eigen::MatrixXd adjust_residual(const Eigen::MatrixXd& w) {
    if (w.rows() != w.cols()) {
        throw StackShapeError("adjust_residual: matrix is not square");
    }
    Eigen::MatrixXd a = 0.5 * w;
    a.diagonal().array() += 0.5;
    return a;
}

Eigen::MatrixXd rf_normalize(const Eigen::MatrixXd& a, const ReceptiveField& rf) {
    if (a.rows() != a.cols() || a.cols() != rf.sizes.size()) {
        throw StackShapeError("rf_normalize: shape mismatch between matrix and receptive field");
    }
    Eigen::MatrixXd b = a * rf.sizes.asDiagonal();
    for (int i = 0; i < b.rows(); ++i) {
        const double row_sum = b.row(i).sum();
        if (row_sum < kDegenerateRowSum) {
            throw DegenerateRowError(
                "rf_normalize: row " + std::to_string(i) + " sums to " + std::to_string(row_sum),
                -1, i);
        }
        b.row(i) /= row_sum;
    }
    return b;
}

RolloutResult rollout(const AttentionStack& stack, const RolloutOptions& options) {
    stack.validate();
    if (!stack.heads_reduced) {
        throw StackShapeError("rollout: heads must be reduced first");
    }
    const int n = stack.size();
    const int depth = stack.depth();
    const int begin = options.layer_begin;
    const int end = options.layer_end < 0 ? depth : options.layer_end;
    if (begin < 0 || end > depth || begin >= end) {
        throw StackShapeError("rollout: invalid layer range [" + std::to_string(begin) + ", " +
                              std::to_string(end) + ") for depth " + std::to_string(depth));
    }

    const ReceptiveField rf = ReceptiveField::from_mask(stack.causal_mask);

    RolloutResult result;
    Eigen::MatrixXd r = Eigen::MatrixXd::Identity(n, n);
    for (int l = begin; l < end; ++l) {
        Eigen::MatrixXd b;
        try {
            b = rf_normalize(adjust_residual(stack.layers[static_cast<size_t>(l)]), rf);
        } catch (const DegenerateRowError& e) {
            throw DegenerateRowError(std::string(e.what()) + " (layer " + std::to_string(l) + ")",
                                     l, e.row);
        }
        r = b * r;
        if (options.keep_intermediates) result.per_layer.push_back(r);
    }
    result.final = std::move(r);
    return result;
}

}  // namespace framescope
