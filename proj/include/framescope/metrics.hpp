#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "framescope/layout.hpp"
#include "framescope/rollout.hpp"

namespace framescope {

// Visual-engagement summary for one sample. box_attention and sink_attention
// are only meaningful when a box / sink set was supplied.
struct VisualStats {
    double visual_energy = 0.0;
    double box_attention = 0.0;
    double sink_attention = 0.0;
    double entropy = 0.0;
};

struct LayerSeries {
    std::vector<VisualStats> layers;  // one entry per rollout intermediate
};

// Mean over output rows of R[row, image columns]: a length-P vector whose sum
// is the visual energy. Throws EmptyQueryError when output_span is empty.
Eigen::VectorXd visual_distribution(const Eigen::MatrixXd& r, const TokenLayout& layout);

// Fraction of rollout mass output queries place on image keys, averaged per
// output token so the value lives in [0, 1].
double visual_energy(const Eigen::MatrixXd& r, const TokenLayout& layout);

// A patch belongs to the box iff at least half of its pixel area intersects
// the bbox; when no patch qualifies, the patch containing the bbox center is
// used. Throws GeometryError when the bbox falls outside the image.
BoxRegion map_bbox_to_patches(const PixelBox& bbox, const TokenLayout& layout);

// In-box visual mass over total visual mass, averaged over output rows.
// Throws ZeroVisualMassError when the image receives no mass at all.
double box_attention(const Eigen::MatrixXd& r, const TokenLayout& layout,
                     const BoxRegion& region);

// Same ratio for an arbitrary set of visual-token offsets.
double sink_attention(const Eigen::MatrixXd& r, const TokenLayout& layout,
                      const std::vector<int>& sink_offsets);

// Offsets whose per-token visual mass exceeds mean + z_threshold * stddev
// across the sample's image tokens. Population stddev; may be empty.
std::vector<int> detect_sinks(const Eigen::MatrixXd& r, const TokenLayout& layout,
                              double z_threshold = 3.0);

// Shannon entropy in nats of the output-row-averaged visual distribution,
// normalized to sum 1. Zero-probability terms contribute zero.
double attention_entropy(const Eigen::MatrixXd& r, const TokenLayout& layout);

// Quartiles by linear interpolation on the sorted order statistics:
// q(p) = x[(n-1)p], fractional positions interpolated. [1..5] gives
// Q1 = 2, Q3 = 4.
struct Quartiles {
    double q1 = 0.0;
    double q3 = 0.0;
};
Quartiles quartiles(std::vector<double> values);

// Coefficient of quartile variation (Q3 - Q1) / (Q3 + Q1). Needs at least 4
// values; Q3 + Q1 = 0 raises DegenerateQuartileError.
double cqv(const std::vector<double>& values);

// One sample's full metric set. `region` and `sinks` are optional; sinks
// default to detect_sinks when not supplied.
VisualStats compute_stats(const Eigen::MatrixXd& r, const TokenLayout& layout,
                          const std::optional<BoxRegion>& region = std::nullopt,
                          const std::optional<std::vector<int>>& sinks = std::nullopt);

// Per-layer trajectory computed from rollout intermediates.
LayerSeries compute_layer_series(const RolloutResult& result, const TokenLayout& layout,
                                 const std::optional<BoxRegion>& region = std::nullopt);

// -- framing sweep -----------------------------------------------------------

enum class VariationAxis { question, instruction };

// One group of per-sample stats: on the question axis the label is the
// framing ("open", "yesno", "mcq"); on the instruction axis it names the
// instruction variant.
struct StatsGroup {
    VariationAxis axis = VariationAxis::question;
    std::string label;
    std::vector<VisualStats> samples;
};

struct GroupSummary {
    VariationAxis axis = VariationAxis::question;
    std::string label;
    int count = 0;
    double mean_ve = 0.0;
    double mean_box = 0.0;
    double mean_sink = 0.0;
    double mean_entropy = 0.0;
};

struct AxisDispersion {
    bool computed = false;  // true when the axis had >= 4 pooled values
    double cqv_ve = 0.0;
    double cqv_box = 0.0;
};

struct FramingSweepSummary {
    std::vector<GroupSummary> groups;
    AxisDispersion question_axis;
    AxisDispersion instruction_axis;
};

// Per-group summaries plus pooled CQV per variation axis. With two or more
// question-axis groups, the group labels must be exactly {open, yesno, mcq};
// a missing framing raises GroupingError. A single group degenerates to that
// group's summary.
FramingSweepSummary framing_sweep(const std::vector<StatsGroup>& groups);

}  // namespace framescope
