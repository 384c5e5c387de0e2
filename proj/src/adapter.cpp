#include "framescope/adapter.hpp"

namespace framescope {

std::string to_string(Capability c) {
    switch (c) {
        case Capability::tokenize_with_layout: return "tokenize_with_layout";
        case Capability::forward_capture: return "forward_capture";
        case Capability::forward_hooked: return "forward_hooked";
        case Capability::generate: return "generate";
        case Capability::score_option: return "score_option";
        case Capability::embed: return "embed";
        case Capability::inject_soft: return "inject_soft";
    }
    return "?";
}

void ModelAdapter::require(std::initializer_list<Capability> caps) const {
    for (Capability c : caps) {
        if (!supports(c)) unsupported(c);
    }
}

void ModelAdapter::unsupported(Capability c) const {
    throw CapabilityError("adapter '" + name() + "' does not support " + to_string(c));
}

TokenizedItem ModelAdapter::tokenize_with_layout(const QAItem&) {
    unsupported(Capability::tokenize_with_layout);
}
CaptureResult ModelAdapter::forward_capture(const TokenizedItem&) {
    unsupported(Capability::forward_capture);
}
GenerateResult ModelAdapter::generate(const TokenizedItem&, int, bool) {
    unsupported(Capability::generate);
}
GenerateResult ModelAdapter::generate_hooked(const TokenizedItem&, int, const RowTransform&,
                                             bool) {
    unsupported(Capability::forward_hooked);
}
double ModelAdapter::score_option(const TokenizedItem&, const std::string&) {
    unsupported(Capability::score_option);
}
Eigen::MatrixXd ModelAdapter::embed(const TokenizedItem&) {
    unsupported(Capability::embed);
}

}  // namespace framescope
