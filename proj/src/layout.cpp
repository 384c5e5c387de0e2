#include "framescope/layout.hpp"

#include <algorithm>
#include <string>

#include "framescope/errors.hpp"

namespace framescope {

namespace {

void check_span(const Span& s, int n, const char* name) {
    if (s.begin < 0 || s.end > n || s.begin > s.end) {
        throw GeometryError(std::string(name) + " span [" + std::to_string(s.begin) + ", " +
                            std::to_string(s.end) + ") is not inside [0, " + std::to_string(n) +
                            ")");
    }
}

bool overlaps(const Span& a, const Span& b) {
    if (a.empty() || b.empty()) return false;
    return a.begin < b.end && b.begin < a.end;
}

Span shift_span(const Span& s, int at, int count) {
    Span out = s;
    if (s.begin >= at) out.begin += count;
    if (s.end > at || (s.end == at && s.begin >= at)) out.end += count;
    return out;
}

}  // namespace

void TokenLayout::validate(int n) const {
    check_span(image_span, n, "image");
    check_span(question_span, n, "question");
    check_span(instruction_span, n, "instruction");
    check_span(soft_span, n, "soft");
    check_span(output_span, n, "output");

    const Span* spans[] = {&image_span, &question_span, &instruction_span, &soft_span,
                           &output_span};
    const char* names[] = {"image", "question", "instruction", "soft", "output"};
    for (int i = 0; i < 5; ++i) {
        for (int j = i + 1; j < 5; ++j) {
            if (overlaps(*spans[i], *spans[j])) {
                throw GeometryError(std::string(names[i]) + " span overlaps " + names[j] +
                                    " span");
            }
        }
    }
    if (grid.cells() != image_span.size()) {
        throw GeometryError("grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                            " does not cover " + std::to_string(image_span.size()) +
                            " image tokens");
    }
    if (!output_span.empty() && !image_span.empty() && output_span.begin < image_span.end) {
        throw GeometryError("output span must come after the image span");
    }
}

TokenLayout TokenLayout::shifted_for_insertion(int at, int count) const {
    TokenLayout out = *this;
    out.image_span = shift_span(image_span, at, count);
    out.question_span = shift_span(question_span, at, count);
    out.instruction_span = shift_span(instruction_span, at, count);
    out.soft_span = shift_span(soft_span, at, count);
    out.output_span = shift_span(output_span, at, count);
    return out;
}

}  // namespace framescope
