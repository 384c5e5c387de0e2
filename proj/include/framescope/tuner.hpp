#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "framescope/autograd.hpp"
#include "framescope/dataset.hpp"
#include "framescope/layout.hpp"

namespace framescope {

enum class PositionPolicy { prefix, infix, postfix };
enum class WeightingMode { confidence, equal };

std::string to_string(PositionPolicy p);
PositionPolicy position_policy_from_string(const std::string& s);
std::string to_string(WeightingMode w);
WeightingMode weighting_from_string(const std::string& s);

// The only trainable state: K embedding vectors per constrained framing.
struct SoftPromptSet {
    int k = 8;
    int dim = 0;
    PositionPolicy position = PositionPolicy::infix;
    bool shared = false;  // when true, yesno and mcq use the same vectors
    Eigen::MatrixXd yesno;  // K x dim
    Eigen::MatrixXd mcq;    // K x dim

    // Small Gaussian (sigma = 0.02) around the mean input-embedding vector.
    static SoftPromptSet init(int k, int dim, PositionPolicy position,
                              const Eigen::RowVectorXd& mean_embedding, std::uint64_t seed,
                              bool shared = false);

    const Eigen::MatrixXd& for_framing(Framing f) const;
    Eigen::MatrixXd& for_framing(Framing f);
};

struct TrainConfig {
    double lr_peak = 2e-4;
    double warmup_frac = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    int batch = 1;
    int grad_accum = 16;
    int epochs = 1;
    int sample_count = 10000;  // cap on training samples drawn from the dataset
    double lambda_attn = 5.0;
    double ce_weight = 1.0;  // 0 disables the CE terms (ablation)
    int k = 8;
    PositionPolicy position = PositionPolicy::infix;
    bool share_prompts = false;
    int max_image_side = 728;  // px, longest side, aspect preserved
    WeightingMode weighting = WeightingMode::confidence;
    double kl_eps = 1e-8;
    std::uint64_t seed = 7;
    double holdout_frac = 0.1;
    int eval_every = 8;           // optimizer updates between holdout evals
    int early_stop_patience = 3;  // evals without improvement before stopping
    double max_skip_frac = 0.01;  // abort when more micro steps are skipped

    void validate() const;
    std::uint64_t hash() const;  // pins checkpoints to their config
};

// Inserts the framing's soft vectors at the position-policy boundary and
// shifts the layout. Open-ended sequences pass through untouched by callers
// (they never have soft vectors). Returns the new sequence and layout.
struct SoftInsertion {
    Eigen::MatrixXd sequence;
    TokenLayout layout;
    int insert_at = 0;
};
SoftInsertion insert_soft_tokens(const Eigen::MatrixXd& sequence, const TokenLayout& layout,
                                 const SoftPromptSet& prompts, Framing framing);

// Where the soft block goes for a given policy.
int soft_insertion_point(const TokenLayout& layout, PositionPolicy policy);

// -- alignment loss ----------------------------------------------------------

// Plain-number view of one pass, used as the (gradient-detached) target.
struct PassSummary {
    double ce = 0.0;
    double visual_energy = 0.0;
    Eigen::VectorXd visual_dist;  // normalized, sums to 1
    TokenLayout layout;
};

// Differentiable view of one pass.
struct DiffPass {
    autograd::Var ce = nullptr;
    autograd::Var visual_energy = nullptr;  // 1 x 1
    autograd::Var visual_dist = nullptr;    // 1 x P, normalized
    TokenLayout layout;

    PassSummary summary() const;
};

// (VE_open - VE_cons)^2 + KL(P_open || P_cons). Distributions are smoothed by
// kl_eps and renormalized before the logs, which keeps the KL term
// nonnegative. Open-pass quantities enter as constants.
double alignment_loss(const PassSummary& open_pass, const PassSummary& cons_pass, double kl_eps);
autograd::Var alignment_loss(autograd::Tape& tape, const PassSummary& open_pass,
                             const DiffPass& cons_pass, double kl_eps);

// -- model surface the tuner trains against -----------------------------------

struct TrainSample {
    FramingTriplet triplet;
    double weight = 1.0;  // confidence weight, filled during training
};

// Training needs a differentiable forward; analysis adapters stay inference
// only. The toy backend implements both surfaces.
class TrainableVlm {
public:
    virtual ~TrainableVlm() = default;

    virtual int hidden_dim() const = 0;
    virtual Eigen::RowVectorXd mean_input_embedding() const = 0;
    // Hash over all frozen weights; must be identical before and after train.
    virtual std::uint64_t parameter_hash() const = 0;

    // Called once before the loop, in dataset order. Lets stateful
    // tokenizers build their tables independently of step order, which keeps
    // resumed runs equivalent to uninterrupted ones.
    virtual void prepare_dataset(const std::vector<TrainSample>&) {}

    // Teacher-forced differentiable pass over prompt + gold answer. `soft` is
    // a K x dim tape parameter or nullptr for the open pass.
    virtual DiffPass forward_diff(autograd::Tape& tape, const QAItem& item, autograd::Var soft,
                                  PositionPolicy policy) = 0;
    // Same pass without the tape.
    virtual PassSummary forward_teacher_forced(const QAItem& item) = 0;
    // Mean probability assigned to the gold tokens, frozen pass, no soft
    // tokens. Throws EmptyGoldError on an empty answer.
    virtual double gold_confidence(const QAItem& item) = 0;
};

// -- training loop -------------------------------------------------------------

struct StepLosses {
    double ce_open = 0.0;
    double ce_yn = 0.0;
    double ce_mcq = 0.0;
    double align_yn = 0.0;
    double align_mcq = 0.0;
    double weight = 1.0;
    double total = 0.0;
    bool skipped = false;  // non-finite loss; gradients untouched
};

// One micro step: three teacher-forced passes, total loss
// ce_weight * (CE_open + CE_yn + CE_mcq)
//   + lambda_attn * w * (align(open, yn) + align(open, mcq)),
// gradients accumulated into grad_yn / grad_mcq only.
StepLosses train_step(TrainableVlm& model, const TrainSample& sample,
                      const SoftPromptSet& prompts, const TrainConfig& config,
                      Eigen::MatrixXd& grad_yn, Eigen::MatrixXd& grad_mcq);

// Linear warmup to lr_peak over ceil(warmup_frac * total), then cosine to
// zero. Throws ScheduleError when step > total_steps.
double lr_at(int step, int total_steps, const TrainConfig& config);

struct StepRecord {
    int micro_step = 0;
    int update = 0;
    double lr = 0.0;
    StepLosses losses;
};

struct EvalRecordPoint {
    int update = 0;
    double holdout_alignment = 0.0;
};

struct TrainResult {
    SoftPromptSet prompts;
    std::vector<StepRecord> log;
    std::vector<EvalRecordPoint> evals;
    int micro_steps = 0;
    int updates = 0;
    int skipped = 0;
    bool early_stopped = false;
};

// Full loop: deterministic shuffle, gradient accumulation, AdamW on the
// prompt vectors, cosine schedule, holdout evals with plateau early stopping,
// checkpoint each eval, resumable from a checkpoint file.
TrainResult train(TrainableVlm& model, const std::vector<TrainSample>& dataset,
                  const TrainConfig& config, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_from = std::nullopt);

// Checkpoint IO (prompt vectors + optimizer state + step + config hash).
struct AdamState {
    Eigen::MatrixXd m_yn, v_yn, m_mcq, v_mcq;
    int t = 0;
};

struct Checkpoint {
    int format_version = 1;
    std::uint64_t config_hash = 0;
    int micro_step = 0;
    int update = 0;
    SoftPromptSet prompts;
    AdamState adam;
    double best_holdout = 0.0;
    int evals_since_best = 0;
    int evals_done = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

double confidence_weight(TrainableVlm& model, const QAItem& open_item);

}  // namespace framescope
