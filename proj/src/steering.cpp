#include "framescope/steering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "framescope/consistency.hpp"
#include "framescope/errors.hpp"

namespace framescope {

void SteeringSpec::validate() const {
    if (multiplier <= 0.0) {
        throw Error("steering multiplier must be positive");
    }
    if (clamp_eps <= 0.0) {
        throw Error("clamp_eps must be positive");
    }
    if (kind == SteerKind::box && !box) {
        throw Error("box steering needs a box region");
    }
}

RowEditFlags apply_ve_row(Eigen::Ref<Eigen::RowVectorXd> row, const TokenLayout& layout, double m,
                          double clamp_eps) {
    RowEditFlags flags;
    if (m == 1.0) return flags;  // exact no-op, bit-identical row
    const auto& img = layout.image_span;
    const double s = row.segment(img.begin, img.size()).sum();
    if (s <= 0.0) return flags;  // nothing to scale up
    const double non_image = 1.0 - s;
    if (non_image <= 0.0) {
        flags.warned = true;  // row is all image; no mass to trade
        return flags;
    }
    const double eff = std::min(m, (1.0 - clamp_eps) / s);
    if (eff == 1.0) return flags;
    const double non_image_scale = (1.0 - eff * s) / non_image;
    for (int j = 0; j < row.size(); ++j) {
        row(j) *= img.contains(j) ? eff : non_image_scale;
    }
    flags.changed = true;
    return flags;
}

RowEditFlags apply_box_row(Eigen::Ref<Eigen::RowVectorXd> row, const TokenLayout& layout,
                           const BoxRegion& box, double m, double clamp_eps) {
    RowEditFlags flags;
    if (m == 1.0) return flags;  // exact no-op, bit-identical row
    const auto& img = layout.image_span;
    std::vector<bool> in_box(static_cast<size_t>(img.size()), false);
    for (int off : box.patch_indices) in_box[static_cast<size_t>(off)] = true;

    double b = 0.0, s = 0.0;
    for (int off = 0; off < img.size(); ++off) {
        const double v = row(img.begin + off);
        s += v;
        if (in_box[static_cast<size_t>(off)]) b += v;
    }
    const double o = s - b;
    if (o <= 0.0) {
        flags.warned = true;  // nothing to transfer from
        return flags;
    }
    if (b <= 0.0) return flags;  // no in-box mass to scale
    const double eff = std::min(m, (s - clamp_eps) / b);
    if (eff == 1.0) return flags;
    const double out_scale = (s - eff * b) / o;
    for (int off = 0; off < img.size(); ++off) {
        row(img.begin + off) *= in_box[static_cast<size_t>(off)] ? eff : out_scale;
    }
    flags.changed = true;
    return flags;
}

double compute_multiplier(const VisualStats& open_stats, const VisualStats& cons_stats,
                          SteerKind kind) {
    const double num =
        kind == SteerKind::ve ? open_stats.visual_energy : open_stats.box_attention;
    const double den =
        kind == SteerKind::ve ? cons_stats.visual_energy : cons_stats.box_attention;
    if (den <= 0.0) {
        throw ZeroVisualMassError("constrained statistic is zero; cannot form a ratio");
    }
    return num / den;
}

RowTransform make_row_transform(const SteeringSpec& spec) {
    spec.validate();
    if (spec.kind == SteerKind::ve) {
        return [spec](Eigen::Ref<Eigen::RowVectorXd> row, int, int, int) {
            apply_ve_row(row, spec.layout, spec.multiplier, spec.clamp_eps);
        };
    }
    return [spec](Eigen::Ref<Eigen::RowVectorXd> row, int, int, int) {
        apply_box_row(row, spec.layout, *spec.box, spec.multiplier, spec.clamp_eps);
    };
}

SteeredResult steered_generate(ModelAdapter& adapter, const QAItem& item,
                               const SteeringSpec& spec, int max_new_tokens) {
    adapter.require({Capability::tokenize_with_layout, Capability::forward_hooked});
    spec.validate();

    const TokenizedItem tokens = adapter.tokenize_with_layout(item);
    const RowTransform hook = make_row_transform(spec);
    GenerateResult gen = adapter.generate_hooked(tokens, max_new_tokens, hook, true);
    if (!gen.attention) {
        throw CapabilityError("adapter '" + adapter.name() +
                              "' did not capture attention during hooked generation");
    }

    SteeredResult result;
    result.prediction = gen.text;
    result.layout = gen.layout;
    const AttentionStack reduced = reduce_heads(*gen.attention);
    const RolloutResult roll = rollout(reduced);
    std::optional<BoxRegion> region = spec.box;
    if (!region && item.bbox) region = map_bbox_to_patches(*item.bbox, gen.layout);
    result.stats = compute_stats(roll.final, gen.layout, region);
    return result;
}

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys,
                    bool* tie_flag) {
    if (xs.size() != ys.size()) {
        throw Error("spearman_rho: series length mismatch");
    }
    if (xs.size() < 3) {
        throw InsufficientSampleError("spearman_rho needs at least 3 points");
    }
    if (tie_flag) *tie_flag = false;

    auto ranks = [](const std::vector<double>& v) {
        const size_t n = v.size();
        std::vector<size_t> idx(n);
        std::iota(idx.begin(), idx.end(), size_t{0});
        std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n, 0.0);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };

    const std::vector<double> rx = ranks(xs);
    const std::vector<double> ry = ranks(ys);
    const double n = static_cast<double>(xs.size());
    const double mean = (n + 1.0) / 2.0;
    double cov = 0.0, var_x = 0.0, var_y = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        cov += (rx[i] - mean) * (ry[i] - mean);
        var_x += (rx[i] - mean) * (rx[i] - mean);
        var_y += (ry[i] - mean) * (ry[i] - mean);
    }
    if (var_x == 0.0 || var_y == 0.0) {
        if (tie_flag) *tie_flag = true;
        return 0.0;  // undefined for a constant series
    }
    return cov / std::sqrt(var_x * var_y);
}

SweepResult multiplier_sweep(ModelAdapter& adapter, const std::vector<QAItem>& dataset,
                             SteerKind kind, const std::vector<double>& multipliers,
                             const std::optional<BoxRegion>& box, int max_new_tokens) {
    if (multipliers.size() < 3) {
        throw InsufficientSampleError("multiplier sweep needs at least 3 multipliers");
    }
    SweepResult result;
    std::vector<double> accuracy_series;
    for (double m : multipliers) {
        SweepPoint point;
        point.multiplier = m;
        int correct = 0;
        double ve_sum = 0.0;
        for (const auto& item : dataset) {
            SteeringSpec spec;
            spec.kind = kind;
            spec.multiplier = m;
            spec.layout = adapter.tokenize_with_layout(item).layout;
            spec.box = box;
            if (kind == SteerKind::box && !spec.box && item.bbox) {
                spec.box = map_bbox_to_patches(*item.bbox, spec.layout);
            }
            const SteeredResult steered = steered_generate(adapter, item, spec, max_new_tokens);
            const std::string gold =
                item.framing == Framing::mcq ? item.answer_letter() : item.answer;
            if (match_answer(steered.prediction, gold, item.framing).matched) ++correct;
            ve_sum += steered.stats.visual_energy;
        }
        point.accuracy = dataset.empty() ? 0.0 : static_cast<double>(correct) / dataset.size();
        point.mean_ve = dataset.empty() ? 0.0 : ve_sum / dataset.size();
        accuracy_series.push_back(point.accuracy);
        result.points.push_back(point);
    }
    result.accuracy_rho =
        spearman_rho(std::vector<double>(multipliers.begin(), multipliers.end()), accuracy_series,
                     &result.rho_tie_flag);
    return result;
}

}  // namespace framescope
