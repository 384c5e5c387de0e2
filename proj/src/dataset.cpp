#include "framescope/dataset.hpp"

#include <algorithm>
#include <cctype>

namespace framescope {

std::string to_string(Framing f) {
    switch (f) {
        case Framing::open: return "open";
        case Framing::yesno: return "yesno";
        case Framing::mcq: return "mcq";
    }
    return "open";
}

Framing framing_from_string(const std::string& s) {
    if (s == "open" || s == "open_ended") return Framing::open;
    if (s == "yesno" || s == "yes_no" || s == "yn") return Framing::yesno;
    if (s == "mcq") return Framing::mcq;
    throw FramingError("unknown framing '" + s + "'");
}

namespace {
std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}
}  // namespace

void QAItem::validate() const {
    if (framing == Framing::mcq) {
        if (options.size() != 4) {
            throw FramingError("mcq item '" + id + "' has " + std::to_string(options.size()) +
                               " options, expected 4");
        }
        if (std::find(options.begin(), options.end(), answer) == options.end()) {
            throw FramingError("mcq item '" + id + "' answer not among options");
        }
    } else if (framing == Framing::yesno) {
        const std::string a = lower(answer);
        if (a != "yes" && a != "no") {
            throw FramingError("yesno item '" + id + "' answer must be yes or no");
        }
    }
}

int QAItem::answer_index() const {
    if (framing != Framing::mcq) {
        throw FramingError("answer_index on non-mcq item '" + id + "'");
    }
    const auto it = std::find(options.begin(), options.end(), answer);
    if (it == options.end()) {
        throw FramingError("mcq item '" + id + "' answer not among options");
    }
    return static_cast<int>(it - options.begin());
}

std::string QAItem::answer_letter() const {
    return std::string(1, static_cast<char>('A' + answer_index()));
}

void FramingTriplet::validate() const {
    if (open.framing != Framing::open || yesno.framing != Framing::yesno ||
        mcq.framing != Framing::mcq) {
        throw FramingError("triplet '" + source_id + "' has mismatched framing tags");
    }
    if (open.image_ref != yesno.image_ref || open.image_ref != mcq.image_ref) {
        throw FramingError("triplet '" + source_id + "' items do not share an image");
    }
    open.validate();
    yesno.validate();
    mcq.validate();
}

}  // namespace framescope
