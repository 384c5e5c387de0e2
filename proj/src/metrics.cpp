#include "framescope/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "framescope/errors.hpp"

namespace framescope {

namespace {

// Per-output-row image mass plus the row-averaged distribution over image
// tokens; shared by the ratio metrics.
struct VisualSlice {
    Eigen::VectorXd mean_dist;  // length P, sums to visual energy
    double energy = 0.0;
};

VisualSlice visual_slice(const Eigen::MatrixXd& r, const TokenLayout& layout) {
    if (layout.output_span.empty()) {
        throw EmptyQueryError("no output rows to query");
    }
    const int p = layout.image_span.size();
    const int n_out = layout.output_span.size();
    VisualSlice slice;
    slice.mean_dist = Eigen::VectorXd::Zero(p);
    for (int row = layout.output_span.begin; row < layout.output_span.end; ++row) {
        slice.mean_dist += r.row(row).segment(layout.image_span.begin, p).transpose();
    }
    slice.mean_dist /= static_cast<double>(n_out);
    slice.energy = slice.mean_dist.sum();
    return slice;
}

}  // namespace

Eigen::VectorXd visual_distribution(const Eigen::MatrixXd& r, const TokenLayout& layout) {
    return visual_slice(r, layout).mean_dist;
}

double visual_energy(const Eigen::MatrixXd& r, const TokenLayout& layout) {
    return visual_slice(r, layout).energy;
}

BoxRegion map_bbox_to_patches(const PixelBox& bbox, const TokenLayout& layout) {
    const double iw = layout.image_width;
    const double ih = layout.image_height;
    if (bbox.w <= 0 || bbox.h <= 0 || bbox.x < 0 || bbox.y < 0 || bbox.x + bbox.w > iw ||
        bbox.y + bbox.h > ih) {
        throw GeometryError("bbox outside image bounds");
    }
    const int rows = layout.grid.rows;
    const int cols = layout.grid.cols;
    if (rows <= 0 || cols <= 0) {
        throw GeometryError("layout has no patch grid");
    }

    const double cell_w = iw / cols;
    const double cell_h = ih / rows;

    BoxRegion region;
    region.bbox = bbox;
    for (int gr = 0; gr < rows; ++gr) {
        for (int gc = 0; gc < cols; ++gc) {
            const double px0 = gc * cell_w;
            const double py0 = gr * cell_h;
            const double ox = std::max(0.0, std::min(px0 + cell_w, bbox.x + bbox.w) -
                                                std::max(px0, bbox.x));
            const double oy = std::max(0.0, std::min(py0 + cell_h, bbox.y + bbox.h) -
                                                std::max(py0, bbox.y));
            if (ox * oy >= 0.5 * cell_w * cell_h) {
                region.patch_indices.push_back(gr * cols + gc);
            }
        }
    }
    if (region.patch_indices.empty()) {
        const double cx = bbox.x + bbox.w / 2;
        const double cy = bbox.y + bbox.h / 2;
        const int gc = std::min(cols - 1, static_cast<int>(cx / cell_w));
        const int gr = std::min(rows - 1, static_cast<int>(cy / cell_h));
        region.patch_indices.push_back(gr * cols + gc);
    }
    return region;
}

namespace {

double subset_ratio(const Eigen::MatrixXd& r, const TokenLayout& layout,
                    const std::vector<int>& offsets) {
    const VisualSlice slice = visual_slice(r, layout);
    if (slice.energy <= 0.0) {
        throw ZeroVisualMassError("image tokens receive no rollout mass");
    }
    const int p = layout.image_span.size();
    double in_mass = 0.0;
    for (int off : offsets) {
        if (off < 0 || off >= p) {
            throw GeometryError("visual-token offset " + std::to_string(off) +
                                " outside image span");
        }
        in_mass += slice.mean_dist(off);
    }
    return in_mass / slice.energy;
}

}  // namespace

double box_attention(const Eigen::MatrixXd& r, const TokenLayout& layout,
                     const BoxRegion& region) {
    return subset_ratio(r, layout, region.patch_indices);
}

double sink_attention(const Eigen::MatrixXd& r, const TokenLayout& layout,
                      const std::vector<int>& sink_offsets) {
    return subset_ratio(r, layout, sink_offsets);
}

std::vector<int> detect_sinks(const Eigen::MatrixXd& r, const TokenLayout& layout,
                              double z_threshold) {
    const VisualSlice slice = visual_slice(r, layout);
    const int p = layout.image_span.size();
    if (p == 0) return {};
    const double mean = slice.mean_dist.mean();
    const double var = (slice.mean_dist.array() - mean).square().mean();
    const double cutoff = mean + z_threshold * std::sqrt(var);
    std::vector<int> sinks;
    for (int i = 0; i < p; ++i) {
        if (slice.mean_dist(i) > cutoff) sinks.push_back(i);
    }
    return sinks;
}

double attention_entropy(const Eigen::MatrixXd& r, const TokenLayout& layout) {
    const VisualSlice slice = visual_slice(r, layout);
    if (slice.energy <= 0.0) {
        throw ZeroVisualMassError("image tokens receive no rollout mass");
    }
    double h = 0.0;
    for (int i = 0; i < slice.mean_dist.size(); ++i) {
        const double pi = slice.mean_dist(i) / slice.energy;
        if (pi > 0.0) h -= pi * std::log(pi);
    }
    return h;
}

Quartiles quartiles(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    auto at = [&](double pos) {
        const auto lo = static_cast<size_t>(std::floor(pos));
        const auto hi = static_cast<size_t>(std::ceil(pos));
        const double frac = pos - static_cast<double>(lo);
        return values[lo] + frac * (values[hi] - values[lo]);
    };
    Quartiles q;
    q.q1 = at(0.25 * static_cast<double>(n - 1));
    q.q3 = at(0.75 * static_cast<double>(n - 1));
    return q;
}

double cqv(const std::vector<double>& values) {
    if (values.size() < 4) {
        throw InsufficientSampleError("cqv needs at least 4 values, got " +
                                      std::to_string(values.size()));
    }
    const Quartiles q = quartiles(values);
    const double denom = q.q3 + q.q1;
    if (denom == 0.0) {
        throw DegenerateQuartileError("Q3 + Q1 = 0");
    }
    return (q.q3 - q.q1) / denom;
}

VisualStats compute_stats(const Eigen::MatrixXd& r, const TokenLayout& layout,
                          const std::optional<BoxRegion>& region,
                          const std::optional<std::vector<int>>& sinks) {
    VisualStats stats;
    stats.visual_energy = visual_energy(r, layout);
    stats.entropy = attention_entropy(r, layout);
    if (region) stats.box_attention = box_attention(r, layout, *region);
    const std::vector<int> sink_set = sinks ? *sinks : detect_sinks(r, layout);
    stats.sink_attention = sink_set.empty() ? 0.0 : sink_attention(r, layout, sink_set);
    return stats;
}

LayerSeries compute_layer_series(const RolloutResult& result, const TokenLayout& layout,
                                 const std::optional<BoxRegion>& region) {
    LayerSeries series;
    series.layers.reserve(result.per_layer.size());
    for (const auto& r : result.per_layer) {
        series.layers.push_back(compute_stats(r, layout, region));
    }
    return series;
}

namespace {

double safe_cqv(const std::vector<double>& values) {
    // Axis dispersion tolerates constant-zero pools (no spread, CQV 0).
    try {
        return cqv(values);
    } catch (const DegenerateQuartileError&) {
        return 0.0;
    }
}

}  // namespace

FramingSweepSummary framing_sweep(const std::vector<StatsGroup>& groups) {
    if (groups.empty()) {
        throw GroupingError("framing_sweep: no groups");
    }

    FramingSweepSummary summary;
    std::set<std::string> question_labels;
    std::vector<double> q_ve, q_box, i_ve, i_box;

    for (const auto& g : groups) {
        if (g.samples.empty()) {
            throw GroupingError("framing_sweep: group '" + g.label + "' is empty");
        }
        GroupSummary gs;
        gs.axis = g.axis;
        gs.label = g.label;
        gs.count = static_cast<int>(g.samples.size());
        for (const auto& s : g.samples) {
            gs.mean_ve += s.visual_energy;
            gs.mean_box += s.box_attention;
            gs.mean_sink += s.sink_attention;
            gs.mean_entropy += s.entropy;
            if (g.axis == VariationAxis::question) {
                q_ve.push_back(s.visual_energy);
                q_box.push_back(s.box_attention);
            } else {
                i_ve.push_back(s.visual_energy);
                i_box.push_back(s.box_attention);
            }
        }
        gs.mean_ve /= gs.count;
        gs.mean_box /= gs.count;
        gs.mean_sink /= gs.count;
        gs.mean_entropy /= gs.count;
        summary.groups.push_back(std::move(gs));
        if (g.axis == VariationAxis::question) question_labels.insert(g.label);
    }

    if (question_labels.size() > 1) {
        const std::set<std::string> expected = {"open", "yesno", "mcq"};
        if (question_labels != expected) {
            throw GroupingError("framing_sweep: question axis needs groups open/yesno/mcq");
        }
    }

    if (q_ve.size() >= 4) {
        summary.question_axis.computed = true;
        summary.question_axis.cqv_ve = safe_cqv(q_ve);
        summary.question_axis.cqv_box = safe_cqv(q_box);
    }
    if (i_ve.size() >= 4) {
        summary.instruction_axis.computed = true;
        summary.instruction_axis.cqv_ve = safe_cqv(i_ve);
        summary.instruction_axis.cqv_box = safe_cqv(i_box);
    }
    return summary;
}

}  // namespace framescope
