#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "framescope/consistency.hpp"
#include "framescope/dump.hpp"
#include "framescope/metrics.hpp"
#include "framescope/reframe.hpp"
#include "framescope/rollout.hpp"
#include "framescope/rng.hpp"
#include "framescope/steering.hpp"
#include "framescope/toy.hpp"
#include "framescope/tuner.hpp"

namespace py = pybind11;
using namespace framescope;

namespace {

AttentionStack stack_from_layers(const std::vector<Eigen::MatrixXd>& layers) {
    AttentionStack stack;
    if (layers.empty()) throw StackShapeError("no layers");
    stack.causal_mask = plain_causal_mask(static_cast<int>(layers[0].rows()));
    stack.layers = layers;
    return stack;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Framing-vs-visual-attention toolkit: rollout, metrics, steering, tuning";

    py::register_exception<Error>(m, "FramescopeError");

    py::class_<Span>(m, "Span")
        .def(py::init<>())
        .def(py::init([](int begin, int end) { return Span{begin, end}; }))
        .def_readwrite("begin", &Span::begin)
        .def_readwrite("end", &Span::end)
        .def("__len__", &Span::size)
        .def("__repr__", [](const Span& s) {
            return "Span(" + std::to_string(s.begin) + ", " + std::to_string(s.end) + ")";
        });

    py::class_<TokenLayout>(m, "TokenLayout")
        .def(py::init<>())
        .def_readwrite("image_span", &TokenLayout::image_span)
        .def_readwrite("question_span", &TokenLayout::question_span)
        .def_readwrite("instruction_span", &TokenLayout::instruction_span)
        .def_readwrite("soft_span", &TokenLayout::soft_span)
        .def_readwrite("output_span", &TokenLayout::output_span)
        .def_property(
            "grid",
            [](const TokenLayout& l) { return std::make_pair(l.grid.rows, l.grid.cols); },
            [](TokenLayout& l, std::pair<int, int> rc) {
                l.grid = {rc.first, rc.second};
            })
        .def_readwrite("image_width", &TokenLayout::image_width)
        .def_readwrite("image_height", &TokenLayout::image_height)
        .def("validate", &TokenLayout::validate, py::arg("n"));

    py::class_<BoxRegion>(m, "BoxRegion")
        .def(py::init<>())
        .def_readonly("patch_indices", &BoxRegion::patch_indices);

    py::class_<VisualStats>(m, "VisualStats")
        .def(py::init<>())
        .def_readwrite("visual_energy", &VisualStats::visual_energy)
        .def_readwrite("box_attention", &VisualStats::box_attention)
        .def_readwrite("sink_attention", &VisualStats::sink_attention)
        .def_readwrite("entropy", &VisualStats::entropy)
        .def("__repr__", [](const VisualStats& s) {
            return "VisualStats(ve=" + std::to_string(s.visual_energy) +
                   ", box=" + std::to_string(s.box_attention) +
                   ", sink=" + std::to_string(s.sink_attention) +
                   ", entropy=" + std::to_string(s.entropy) + ")";
        });

    // rollout
    m.def("head_reduce", &head_reduce, py::arg("heads"),
          "Element-wise mean over per-head attention matrices");
    m.def("adjust_residual", &adjust_residual, py::arg("w"), "0.5 * W + 0.5 * I");
    m.def(
        "rf_normalize",
        [](const Eigen::MatrixXd& a, const Eigen::VectorXd& sizes) {
            ReceptiveField rf;
            rf.sizes = sizes;
            return rf_normalize(a, rf);
        },
        py::arg("a"), py::arg("receptive_sizes"));
    m.def(
        "rollout",
        [](const std::vector<Eigen::MatrixXd>& layers, bool keep_intermediates, int layer_begin,
           int layer_end) {
            RolloutOptions options;
            options.keep_intermediates = keep_intermediates;
            options.layer_begin = layer_begin;
            options.layer_end = layer_end;
            const RolloutResult result = rollout(stack_from_layers(layers), options);
            py::dict out;
            out["final"] = result.final;
            out["per_layer"] = result.per_layer;
            return out;
        },
        py::arg("layers"), py::arg("keep_intermediates") = false, py::arg("layer_begin") = 0,
        py::arg("layer_end") = -1,
        "Causally-corrected attention rollout over a causal stack (heads reduced)");

    // metrics
    m.def("visual_energy", &visual_energy, py::arg("r"), py::arg("layout"));
    m.def("visual_distribution", &visual_distribution, py::arg("r"), py::arg("layout"));
    m.def(
        "map_bbox_to_patches",
        [](double x, double y, double w, double h, const TokenLayout& layout) {
            return map_bbox_to_patches({x, y, w, h}, layout);
        },
        py::arg("x"), py::arg("y"), py::arg("w"), py::arg("h"), py::arg("layout"));
    m.def("box_attention", &box_attention, py::arg("r"), py::arg("layout"), py::arg("region"));
    m.def(
        "sink_attention",
        [](const Eigen::MatrixXd& r, const TokenLayout& layout, const std::vector<int>& sinks) {
            return sink_attention(r, layout, sinks);
        },
        py::arg("r"), py::arg("layout"), py::arg("sinks"));
    m.def("detect_sinks", &detect_sinks, py::arg("r"), py::arg("layout"),
          py::arg("z_threshold") = 3.0);
    m.def("attention_entropy", &attention_entropy, py::arg("r"), py::arg("layout"));
    m.def("cqv", &cqv, py::arg("values"));
    m.def("compute_stats", &compute_stats, py::arg("r"), py::arg("layout"),
          py::arg("region") = std::nullopt, py::arg("sinks") = std::nullopt);

    // steering
    m.def(
        "apply_ve_row",
        [](Eigen::RowVectorXd row, const TokenLayout& layout, double m_, double clamp_eps) {
            apply_ve_row(row, layout, m_, clamp_eps);
            return row;
        },
        py::arg("row"), py::arg("layout"), py::arg("multiplier"), py::arg("clamp_eps") = 1e-4,
        "Returns the edited copy of the row");
    m.def(
        "apply_box_row",
        [](Eigen::RowVectorXd row, const TokenLayout& layout, const BoxRegion& box, double m_,
           double clamp_eps) {
            apply_box_row(row, layout, box, m_, clamp_eps);
            return row;
        },
        py::arg("row"), py::arg("layout"), py::arg("box"), py::arg("multiplier"),
        py::arg("clamp_eps") = 1e-4);
    m.def(
        "spearman_rho",
        [](const std::vector<double>& xs, const std::vector<double>& ys) {
            bool tie = false;
            const double rho = spearman_rho(xs, ys, &tie);
            return std::make_pair(rho, tie);
        },
        py::arg("xs"), py::arg("ys"), "Returns (rho, tie_flag)");

    // consistency
    m.def(
        "match_answer",
        [](const std::string& prediction, const std::string& gold, const std::string& framing) {
            const MatchResult r = match_answer(prediction, gold, framing_from_string(framing));
            return std::make_pair(r.matched, r.rule);
        },
        py::arg("prediction"), py::arg("gold"), py::arg("framing"),
        "Returns (matched, rule)");

    // reframe helpers
    m.def(
        "parse_reframe_response",
        [](const std::string& text, const std::string& direction) {
            const ReframeDirection dir = direction == "open"
                                             ? ReframeDirection::open_to_yn_mcq
                                             : ReframeDirection::yn_to_open_mcq;
            const ReframeFields fields = parse_reframe_response(text, dir);
            py::dict out;
            auto pack = [](const QAItem& item) {
                py::dict d;
                d["question"] = item.question;
                d["answer"] = item.answer;
                d["options"] = item.options;
                return d;
            };
            if (fields.open) out["open"] = pack(*fields.open);
            if (fields.yesno) out["yesno"] = pack(*fields.yesno);
            if (fields.mcq) out["mcq"] = pack(*fields.mcq);
            return out;
        },
        py::arg("text"), py::arg("direction"),
        "direction: 'open' (open->yn/mcq) or 'yn' (yn->open/mcq)");

    // tuner pieces with library-level value
    m.def(
        "lr_at",
        [](int step, int total_steps, double lr_peak, double warmup_frac) {
            TrainConfig config;
            config.lr_peak = lr_peak;
            config.warmup_frac = warmup_frac;
            return lr_at(step, total_steps, config);
        },
        py::arg("step"), py::arg("total_steps"), py::arg("lr_peak") = 2e-4,
        py::arg("warmup_frac") = 0.05);
    m.def(
        "alignment_loss",
        [](double ve_open, const Eigen::VectorXd& dist_open, double ve_cons,
           const Eigen::VectorXd& dist_cons, double kl_eps) {
            PassSummary a, b;
            a.visual_energy = ve_open;
            a.visual_dist = dist_open;
            b.visual_energy = ve_cons;
            b.visual_dist = dist_cons;
            return alignment_loss(a, b, kl_eps);
        },
        py::arg("ve_open"), py::arg("dist_open"), py::arg("ve_cons"), py::arg("dist_cons"),
        py::arg("kl_eps") = 1e-8);

    // dumps
    m.def(
        "load_dump",
        [](const std::filesystem::path& dir) {
            const LoadedDump d = load_dump(dir);
            py::dict out;
            py::list layers;
            for (const auto& layer : d.stack.layers) {
                py::list heads;
                for (const auto& h : layer) heads.append(h);
                layers.append(heads);
            }
            out["layers"] = layers;
            out["layout"] = d.layout;
            out["model_id"] = d.meta.model_id;
            out["framing"] = d.meta.framing;
            out["prompt"] = d.meta.prompt;
            return out;
        },
        py::arg("dir"));
    m.def(
        "save_dump",
        [](const std::vector<std::vector<Eigen::MatrixXd>>& layers, const TokenLayout& layout,
           const std::filesystem::path& dir, const std::string& model_id,
           const std::string& framing, const std::string& prompt) {
            HeadAttentionStack stack;
            if (layers.empty() || layers[0].empty()) throw StackShapeError("no layers");
            stack.causal_mask = plain_causal_mask(static_cast<int>(layers[0][0].rows()));
            stack.layers = layers;
            DumpMeta meta;
            meta.model_id = model_id;
            meta.framing = framing;
            meta.prompt = prompt;
            save_dump(stack, layout, meta, dir);
        },
        py::arg("layers"), py::arg("layout"), py::arg("dir"), py::arg("model_id") = "external",
        py::arg("framing") = "", py::arg("prompt") = "");

    // toy fixtures for demos and smoke tests
    m.def(
        "planted_stack",
        [](const std::string& image_ref, const std::string& framing) {
            PlantedConfig config;
            const HeadAttentionStack stack =
                planted_stack(config, image_ref, framing_from_string(framing), true);
            py::list layers;
            for (const auto& layer : stack.layers) {
                py::list heads;
                for (const auto& h : layer) heads.append(h);
                layers.append(heads);
            }
            py::dict out;
            out["layers"] = layers;
            out["layout"] = planted_layout(config, true);
            return out;
        },
        py::arg("image_ref"), py::arg("framing"),
        "Deterministic synthetic per-head stack with a planted constrained-framing deficit");

    m.attr("__version__") = "0.1.0";
}
