#include "framescope/plot.hpp"

#include <algorithm>
#include <numeric>

#include "framescope/errors.hpp"
#include "framescope/metrics.hpp"

namespace framescope {

PlotMeta plot_attention(const Eigen::MatrixXd& r, const TokenLayout& layout,
                        const ImageRgb& base, const std::filesystem::path& out_path, double vmin,
                        double vmax) {
    if (base.width != layout.image_width || base.height != layout.image_height) {
        throw GeometryError("base image is " + std::to_string(base.width) + "x" +
                            std::to_string(base.height) + ", layout expects " +
                            std::to_string(layout.image_width) + "x" +
                            std::to_string(layout.image_height));
    }
    const Eigen::VectorXd dist = visual_distribution(r, layout);
    const int rows = layout.grid.rows;
    const int cols = layout.grid.cols;

    PlotMeta meta;
    if (vmax > vmin) {
        meta.vmin = vmin;
        meta.vmax = vmax;
    } else {
        meta.vmin = dist.minCoeff();
        meta.vmax = dist.maxCoeff();
        if (meta.vmax <= meta.vmin) meta.vmax = meta.vmin + 1e-12;
    }

    ImageRgb canvas = base;
    const double cell_w = static_cast<double>(base.width) / cols;
    const double cell_h = static_cast<double>(base.height) / rows;
    for (int gr = 0; gr < rows; ++gr) {
        for (int gc = 0; gc < cols; ++gc) {
            const double v = dist(gr * cols + gc);
            const double t = (v - meta.vmin) / (meta.vmax - meta.vmin);
            std::uint8_t cr, cg, cb;
            heat_color(t, cr, cg, cb);
            canvas.blend_rect(static_cast<int>(gc * cell_w), static_cast<int>(gr * cell_h),
                              static_cast<int>(cell_w + 1), static_cast<int>(cell_h + 1), cr, cg,
                              cb, 0.55);
        }
    }

    // top 3 patches, ties resolved toward lower indices
    std::vector<int> order(static_cast<size_t>(dist.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist(a) > dist(b); });
    const int top_n = std::min<int>(3, static_cast<int>(order.size()));
    for (int k = 0; k < top_n; ++k) {
        const int idx = order[static_cast<size_t>(k)];
        meta.top_patches.push_back(idx);
        const int gr = idx / cols;
        const int gc = idx % cols;
        canvas.outline_rect(static_cast<int>(gc * cell_w), static_cast<int>(gr * cell_h),
                            static_cast<int>(cell_w), static_cast<int>(cell_h), 220, 20, 20, 2);
    }

    write_png(canvas, out_path);
    return meta;
}

void plot_bar_chart(const std::vector<std::pair<std::string, double>>& bars,
                    const std::filesystem::path& out_path) {
    if (bars.empty()) {
        throw Error("plot_bar_chart: nothing to draw");
    }
    const int bar_w = 48;
    const int gap = 16;
    const int chart_h = 220;
    const int base_y = 240;
    const int width = gap + static_cast<int>(bars.size()) * (bar_w + gap);
    ImageRgb img(std::max(width, 160), 260);

    double max_v = 0.0;
    for (const auto& [label, v] : bars) max_v = std::max(max_v, v);
    if (max_v <= 0.0) max_v = 1.0;

    int x = gap;
    for (size_t i = 0; i < bars.size(); ++i) {
        const double frac = bars[i].second / max_v;
        const int h = static_cast<int>(frac * chart_h);
        std::uint8_t r, g, b;
        heat_color(0.25 + 0.5 * (static_cast<double>(i) / std::max<size_t>(1, bars.size() - 1)),
                   r, g, b);
        img.fill_rect(x, base_y - h, bar_w, h, r, g, b);
        img.outline_rect(x, base_y - h, bar_w, h, 40, 40, 40, 1);
        x += bar_w + gap;
    }
    img.outline_rect(0, 0, img.width, img.height, 0, 0, 0, 1);
    write_png(img, out_path);
}

}  // namespace framescope
