#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "framescope/dataset.hpp"
#include "framescope/errors.hpp"
#include "framescope/layout.hpp"
#include "framescope/rollout.hpp"

namespace framescope {

// Optional, queryable capabilities of a model backend. Every higher-level
// operation declares what it needs up front and fails with CapabilityError
// before doing any work.
enum class Capability {
    tokenize_with_layout,
    forward_capture,
    forward_hooked,
    generate,
    score_option,
    embed,
    inject_soft,
};

std::string to_string(Capability c);

struct TokenizedItem {
    std::vector<int> ids;  // image positions hold the adapter's image sentinel
    TokenLayout layout;
    std::string image_ref;
    Framing framing = Framing::open;
};

struct CaptureResult {
    Eigen::MatrixXd logits;  // one row per position
    HeadAttentionStack attention;
};

struct GenerateResult {
    std::string text;
    std::vector<int> ids;  // prompt + generated tokens
    TokenLayout layout;    // output_span covers the generated tokens
    std::optional<HeadAttentionStack> attention;  // final-pass capture when requested
};

// Pure per-row attention edit, applied post-softmax. Receives the row, the
// query position, the layer and the head; must leave the row a valid
// distribution.
using RowTransform =
    std::function<void(Eigen::Ref<Eigen::RowVectorXd> row, int query, int layer, int head)>;

// Thin boundary to a concrete model family. Capture is upcast to 64-bit at
// this boundary. The core test suite only relies on the toy backends; real
// models plug in behind the same surface.
class ModelAdapter {
public:
    virtual ~ModelAdapter() = default;

    virtual std::string name() const = 0;
    virtual bool supports(Capability c) const = 0;

    // Throws CapabilityError unless every listed capability is supported.
    void require(std::initializer_list<Capability> caps) const;

    virtual TokenizedItem tokenize_with_layout(const QAItem& item);
    virtual CaptureResult forward_capture(const TokenizedItem& item);
    virtual GenerateResult generate(const TokenizedItem& item, int max_new_tokens,
                                    bool capture_attention);
    // Generation with per-row attention edits on every head and layer for
    // query positions after the image span.
    virtual GenerateResult generate_hooked(const TokenizedItem& item, int max_new_tokens,
                                           const RowTransform& hook, bool capture_attention);
    // Mean per-token log-likelihood of `option` as the continuation of the
    // item's prompt.
    virtual double score_option(const TokenizedItem& item, const std::string& option);
    // Embedded input sequence (image projection + token embeddings).
    virtual Eigen::MatrixXd embed(const TokenizedItem& item);

protected:
    [[noreturn]] void unsupported(Capability c) const;
};

}  // namespace framescope
