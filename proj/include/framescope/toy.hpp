#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "framescope/adapter.hpp"
#include "framescope/rng.hpp"
#include "framescope/tuner.hpp"

namespace framescope {

// -- synthetic stack generators ----------------------------------------------

// Random row-stochastic causal stack (heads reduced) for fuzzing.
AttentionStack random_causal_stack(Rng& rng, int n, int layers);

// Same before head reduction.
HeadAttentionStack random_head_stack(Rng& rng, int n, int layers, int heads);

// Uniform-over-prefix rows, handy for closed-form checks.
AttentionStack uniform_causal_stack(int n, int layers);

// -- planted fixture -----------------------------------------------------------

// Deterministic synthetic attention with a plantable framing-dependent
// deficit: constrained framings carry `constrained_scale` times the open
// pass's per-row image mass, renormalized against the complement, per head
// and layer. Inverse of the VE intervention by construction.
struct PlantedConfig {
    int layers = 4;
    int heads = 2;
    int grid_rows = 8;
    int grid_cols = 8;
    int image_px = 64;
    int n_question = 6;
    int n_instruction = 4;
    int n_output = 3;
    double base_image_mass = 0.35;
    double constrained_scale = 0.5;
    // generate() answers with the gold text iff the measured (possibly
    // steered) rollout VE clears this bar.
    double answer_ve_threshold = 0.22;
    std::uint64_t seed = 99;
};

TokenLayout planted_layout(const PlantedConfig& config, bool with_output);
HeadAttentionStack planted_stack(const PlantedConfig& config, const std::string& image_ref,
                                 Framing framing, bool with_output);

// Adapter over the planted generator: capture, generation and hooked
// generation, no real tokens. The "prediction" is the gold answer whenever
// the measured visual energy of the (hooked) pass clears the planted
// threshold, which gives steering something real to recover.
class PlantedAdapter : public ModelAdapter {
public:
    explicit PlantedAdapter(const PlantedConfig& config = {});

    std::string name() const override { return "planted"; }
    bool supports(Capability c) const override;
    TokenizedItem tokenize_with_layout(const QAItem& item) override;
    CaptureResult forward_capture(const TokenizedItem& item) override;
    GenerateResult generate(const TokenizedItem& item, int max_new_tokens,
                            bool capture_attention) override;
    GenerateResult generate_hooked(const TokenizedItem& item, int max_new_tokens,
                                   const RowTransform& hook, bool capture_attention) override;

    const PlantedConfig& config() const { return config_; }
    // Items sharing one semantic query across the three framings.
    static std::vector<FramingTriplet> make_triplets(int count, std::uint64_t seed = 5);

private:
    GenerateResult run(const TokenizedItem& item, const RowTransform* hook,
                       bool capture_attention);
    PlantedConfig config_;
};

// -- toy VLM ---------------------------------------------------------------------

// Miniature causal transformer: 4 layers, 2 heads, hidden 16, vocabulary 64,
// an 8x8 synthetic image projected to 64 visual tokens. Weights are seeded;
// identical outputs per seed. The planted visual bias lowers attention
// logits on image keys for constrained framings so there is a real deficit
// for steering and tuning to work against.
struct ToyVlmConfig {
    int layers = 4;
    int heads = 2;
    int hidden = 16;
    int vocab = 64;
    int grid_rows = 8;
    int grid_cols = 8;
    int image_px = 64;
    int max_seq = 160;
    std::uint64_t seed = 1234;
    double visual_bias_yesno = -1.5;
    double visual_bias_mcq = -1.5;
};

class ToyVlm : public ModelAdapter, public TrainableVlm {
public:
    explicit ToyVlm(const ToyVlmConfig& config = {});

    // ModelAdapter
    std::string name() const override { return "toy"; }
    bool supports(Capability) const override { return true; }
    TokenizedItem tokenize_with_layout(const QAItem& item) override;
    CaptureResult forward_capture(const TokenizedItem& item) override;
    GenerateResult generate(const TokenizedItem& item, int max_new_tokens,
                            bool capture_attention) override;
    GenerateResult generate_hooked(const TokenizedItem& item, int max_new_tokens,
                                   const RowTransform& hook, bool capture_attention) override;
    double score_option(const TokenizedItem& item, const std::string& option) override;
    Eigen::MatrixXd embed(const TokenizedItem& item) override;

    // TrainableVlm
    int hidden_dim() const override { return config_.hidden; }
    Eigen::RowVectorXd mean_input_embedding() const override;
    std::uint64_t parameter_hash() const override;
    void prepare_dataset(const std::vector<TrainSample>& dataset) override;
    DiffPass forward_diff(autograd::Tape& tape, const QAItem& item, autograd::Var soft,
                          PositionPolicy policy) override;
    PassSummary forward_teacher_forced(const QAItem& item) override;
    double gold_confidence(const QAItem& item) override;

    const ToyVlmConfig& config() const { return config_; }

    std::vector<int> tokenize_text(const std::string& text);
    std::string detokenize(const std::vector<int>& ids) const;

private:
    struct LayerWeights {
        Eigen::MatrixXd wq, wk, wv, wo;  // hidden x hidden
        Eigen::RowVectorXd g1, g2;       // rms gains
        Eigen::MatrixXd w1, w2;          // hidden x 2*hidden, 2*hidden x hidden
    };

    struct PlainForward {
        Eigen::MatrixXd logits;
        HeadAttentionStack attention;
    };

    // Embedded rows for the tokenized prompt (+ extra text ids appended),
    // positional encoding included.
    Eigen::MatrixXd embed_rows(const TokenizedItem& item, const std::vector<int>& extra) const;
    Eigen::MatrixXd patch_features(const std::string& image_ref) const;
    Eigen::MatrixXd visual_bias_matrix(Framing framing, int n, const Span& image) const;
    PlainForward forward_plain(const Eigen::MatrixXd& x0, Framing framing, const Span& image,
                               const RowTransform* hook, bool capture) const;
    int word_id(const std::string& word);

    ToyVlmConfig config_;
    Eigen::MatrixXd embedding_;   // vocab x hidden
    Eigen::MatrixXd positional_;  // max_seq x hidden
    Eigen::MatrixXd patch_proj_;  // 5 x hidden (rgb + grid x, y)
    Eigen::RowVectorXd g_final_;
    std::vector<LayerWeights> layers_;
    std::map<std::string, int> word_table_;
};

}  // namespace framescope
