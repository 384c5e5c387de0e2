#pragma once

#include <optional>
#include <string>
#include <vector>

#include "framescope/errors.hpp"
#include "framescope/layout.hpp"

namespace framescope {

enum class Framing { open, yesno, mcq };

std::string to_string(Framing f);
Framing framing_from_string(const std::string& s);

// One VQA item in a single framing. For mcq, `answer` holds the correct
// option's text; the letter is derived from its position in `options`.
struct QAItem {
    std::string id;
    std::string image_ref;
    Framing framing = Framing::open;
    std::string question;
    std::string answer;
    std::string full_answer;                  // sentence-level answer when available
    std::vector<std::string> options;         // exactly 4 for mcq, empty otherwise
    std::vector<std::string> origin_options;  // kept when mcq was stripped to open
    std::string scene_graph;
    std::optional<PixelBox> bbox;
    std::string task_label;  // optional category for per-task breakdowns

    // Throws FramingError when the framing-specific invariants fail
    // (mcq: 4 options with the answer among them; yesno: answer in {yes, no}).
    void validate() const;

    // 0-based index of `answer` within `options`; mcq only.
    int answer_index() const;
    // "A".."D" for mcq.
    std::string answer_letter() const;
};

// One semantic query rendered in all three framings.
struct FramingTriplet {
    QAItem open;
    QAItem yesno;
    QAItem mcq;
    std::string source_id;
    std::string provenance;  // which direction generated which, e.g. "open->yn,mcq"

    void validate() const;  // framing tags match slots, shared image_ref
};

}  // namespace framescope
