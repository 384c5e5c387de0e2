#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "framescope/adapter.hpp"
#include "framescope/layout.hpp"
#include "framescope/metrics.hpp"

namespace framescope {

enum class SteerKind { ve, box };

// One intervention run: multiply visual (or in-box) attention per row by m,
// renormalizing the complement. Edits happen post-softmax on every head and
// layer, for query rows after the image span.
struct SteeringSpec {
    SteerKind kind = SteerKind::ve;
    double multiplier = 1.0;
    TokenLayout layout;
    std::optional<BoxRegion> box;  // required for kind == box
    double clamp_eps = 1e-4;

    void validate() const;
};

struct RowEditFlags {
    bool changed = false;
    bool warned = false;  // no complement to rebalance against
};

// Scale image entries by min(m, (1 - eps)/s) and rescale non-image entries so
// the row still sums to 1. Within-image proportions are untouched. A row with
// no non-image mass is returned unchanged with the warning flag set.
RowEditFlags apply_ve_row(Eigen::Ref<Eigen::RowVectorXd> row, const TokenLayout& layout, double m,
                          double clamp_eps);

// Scale in-box entries by min(m, (s - eps)/b) and rescale out-box image
// entries so total image mass stays fixed; non-image entries are untouched.
// A row with no out-box mass is returned unchanged with the warning flag set.
RowEditFlags apply_box_row(Eigen::Ref<Eigen::RowVectorXd> row, const TokenLayout& layout,
                           const BoxRegion& box, double m, double clamp_eps);

// Ratio of the open-ended statistic to the constrained one: VE_open/VE_cons
// for ve, Box_open/Box_cons for box. Throws ZeroVisualMassError on a zero
// denominator.
double compute_multiplier(const VisualStats& open_stats, const VisualStats& cons_stats,
                          SteerKind kind);

// Adapter hook implementing the spec; applies to every row the adapter passes
// in (the adapter restricts to rows after the image span).
RowTransform make_row_transform(const SteeringSpec& spec);

struct SteeredResult {
    std::string prediction;
    VisualStats stats;      // rollout stats of the steered pass
    TokenLayout layout;     // layout of the steered pass (with output span)
};

// Re-runs generation for `item` with the intervention installed and measures
// the steered pass with the standard rollout metrics.
SteeredResult steered_generate(ModelAdapter& adapter, const QAItem& item,
                               const SteeringSpec& spec, int max_new_tokens = 8);

// Spearman's rank correlation with average ranks for ties. Fewer than 3
// points raises InsufficientSampleError; a constant series is reported as 0
// with the tie flag set.
double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys,
                    bool* tie_flag = nullptr);

struct SweepPoint {
    double multiplier = 0.0;
    double accuracy = 0.0;
    double mean_ve = 0.0;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    double accuracy_rho = 0.0;
    bool rho_tie_flag = false;
};

// Runs steered generation per multiplier across the dataset; accuracy uses
// the consistency matcher against each item's gold answer.
SweepResult multiplier_sweep(ModelAdapter& adapter, const std::vector<QAItem>& dataset,
                             SteerKind kind, const std::vector<double>& multipliers,
                             const std::optional<BoxRegion>& box = std::nullopt,
                             int max_new_tokens = 8);

}  // namespace framescope
