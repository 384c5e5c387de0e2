#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "framescope/image.hpp"
#include "framescope/layout.hpp"

namespace framescope {

struct PlotMeta {
    double vmin = 0.0;
    double vmax = 0.0;
    std::vector<int> top_patches;  // grid offsets of the outlined cells
};

// Output-row-averaged visual attention reshaped onto the patch grid, blended
// over the base image; the top 3 patches are outlined in red (ties fall back
// to lowest index). vmin/vmax pin the colormap so a comparison set shares one
// scale; pass vmax <= vmin to scale to this sample alone.
PlotMeta plot_attention(const Eigen::MatrixXd& r, const TokenLayout& layout,
                        const ImageRgb& base, const std::filesystem::path& out_path,
                        double vmin = 0.0, double vmax = 0.0);

// Simple labeled bar chart (one bar per entry, value in [0, 1]).
void plot_bar_chart(const std::vector<std::pair<std::string, double>>& bars,
                    const std::filesystem::path& out_path);

}  // namespace framescope
