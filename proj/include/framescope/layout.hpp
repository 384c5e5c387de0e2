#pragma once

#include <string>
#include <vector>

namespace framescope {

// Half-open index range [begin, end) into a token sequence.
struct Span {
    int begin = 0;
    int end = 0;

    int size() const { return end - begin; }
    bool empty() const { return end <= begin; }
    bool contains(int i) const { return i >= begin && i < end; }

    bool operator==(const Span&) const = default;
};

struct GridShape {
    int rows = 0;
    int cols = 0;

    int cells() const { return rows * cols; }
    bool operator==(const GridShape&) const = default;
};

// Axis-aligned rectangle in image pixels, (x, y) is the top-left corner.
struct PixelBox {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    bool operator==(const PixelBox&) const = default;
};

// Index spans partitioning one token sequence. All spans are positions in the
// same sequence; soft_span is empty unless learnable tokens were inserted.
// output_span holds the query rows used by the visual metrics: generated
// tokens when sampling, gold-answer positions under teacher forcing.
struct TokenLayout {
    Span image_span;
    Span question_span;
    Span instruction_span;
    Span soft_span;
    Span output_span;
    GridShape grid;
    int image_width = 0;   // pixels
    int image_height = 0;  // pixels

    // Throws GeometryError unless spans are disjoint, inside [0, n), the grid
    // matches the image span, and output rows come after the image.
    void validate(int n) const;

    // Layout after inserting `count` tokens at position `at`: every span
    // boundary at or beyond `at` shifts right. soft_span is not touched here;
    // the caller records it.
    TokenLayout shifted_for_insertion(int at, int count) const;

    bool operator==(const TokenLayout&) const = default;
};

// A bounding box resolved to the visual-token grid. patch_indices are offsets
// within image_span (0 = first visual token).
struct BoxRegion {
    PixelBox bbox;
    std::vector<int> patch_indices;
};

}  // namespace framescope
