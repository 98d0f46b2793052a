#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "anchorpheno/anchor.hpp"
#include "anchorpheno/cohort.hpp"
#include "anchorpheno/vocab.hpp"

namespace anchorpheno {

// Architecture and optimizer settings in one place. Desk-scale defaults;
// full_scale() restores the published geometry.
struct TransformerConfig {
    int vocab_size = 0;  // set when the model is initialized against a vocabulary
    int max_len = 64;
    int d_model = 48;
    int n_layers = 2;
    int n_heads = 4;
    int intermediate_size = 96;
    double hidden_dropout = 0.2;
    double attention_dropout = 0.22;
    double init_range = 0.02;
    double ln_eps = 1e-12;

    double learning_rate = 1e-4;
    double warmup_proportion = 0.1;
    double weight_decay = 0.001;
    int batch_size = 64;
    int n_epochs = 15;
    uint64_t seed = 0;

    static TransformerConfig full_scale();
    void validate() const;  // throws std::invalid_argument
};

struct TensorSpec {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index offset = 0;
    bool decay = true;  // false for biases and layer-norm parameters

    Eigen::Index size() const { return rows * cols; }
};

// Flat-vector parameter layout; gradients and optimizer moments share it.
struct ParamLayout {
    std::vector<TensorSpec> tensors;
    Eigen::Index total = 0;

    static ParamLayout build(const TransformerConfig& config);
    const TensorSpec& find(const std::string& name) const;  // throws on unknown name
};

struct TransformerModel {
    TransformerConfig config;
    ParamLayout layout;
    Eigen::VectorXd params;
    uint64_t vocab_hash = 0;

    // zero_head keeps the classification head at 0 so the untrained model
    // scores 0.5 everywhere; pass false to randomize it (gradient audits).
    static TransformerModel init(const TransformerConfig& config, uint64_t seed,
                                 uint64_t vocab_hash, bool zero_head = true);

    Eigen::Map<Eigen::MatrixXd> tensor(const std::string& name);
    Eigen::Map<const Eigen::MatrixXd> tensor(const std::string& name) const;
};

// Scaled dot-product attention over one head. mask has one entry per key row
// of K/V: 0 keeps the key, a large negative value removes it. Rows of the
// returned probability matrix sum to 1 (max-subtracted softmax).
Eigen::MatrixXd attention_probs(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& K,
                                const Eigen::VectorXd& mask);
Eigen::MatrixXd attention(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& K,
                          const Eigen::MatrixXd& V, const Eigen::VectorXd& mask);

std::vector<int> anchor_token_ids(const Vocabulary& vocab, const AnchorSpec& anchor);

// Additive key mask for one sequence: -1e4 at [PAD] positions and at every
// position holding one of anchor_ids, 0 elsewhere. The same vector is applied
// in every layer and head.
Eigen::VectorXd build_anchor_mask(const EncodedSequence& seq, const std::vector<int>& anchor_ids);
Eigen::VectorXd build_pad_mask(const EncodedSequence& seq);

// Deterministic eval-mode forward to the [CLS] logit.
double forward_logit(const TransformerModel& model, const EncodedSequence& seq,
                     const Eigen::VectorXd& mask);

// Mean BCE-with-logits loss over the batch and its gradient in the flat
// parameter space. Eval mode (no dropout); used by the finite-difference audit
// and exposed for tests.
double loss_and_gradient(const TransformerModel& model,
                         const std::vector<EncodedSequence>& seqs,
                         const std::vector<Eigen::VectorXd>& masks,
                         const std::vector<double>& targets, Eigen::VectorXd* grad);

struct GradCheckResult {
    double max_rel_err = 0.0;
    int n_checked = 0;
    std::string worst_tensor;
    Eigen::Index worst_index = -1;
};

// Central finite differences against the analytic gradient on `per_tensor`
// sampled entries of every tensor (all entries when a tensor is smaller).
// Relative error denominator: max(|analytic|, |numeric|, 1e-8).
GradCheckResult gradient_check(const TransformerModel& model, const EncodedSequence& seq,
                               const Eigen::VectorXd& mask, double target, double eps = 1e-4,
                               int per_tensor = 10, uint64_t seed = 2024);

struct TrainResult {
    TransformerModel model;          // best-validation-AP checkpoint
    std::vector<double> train_loss;  // per-epoch mean batch loss
    std::vector<double> valid_ap;
    int best_epoch = -1;
    double best_valid_ap = 0.0;
};

// Mini-batch training with Adam moments, decoupled weight decay (skipped for
// biases and layer norms), linear warmup then linear decay, and global
// gradient-norm clipping. Checkpoints the epoch with the best validation
// average precision.
TrainResult train_transformer(const std::vector<PatientRecord>& records,
                              const AnchorLabel& labels, const Vocabulary& vocab,
                              const AnchorSpec& anchor, const TransformerConfig& config,
                              const std::vector<size_t>& train_idx,
                              const std::vector<size_t>& valid_idx);

// sigmoid([CLS] logit) per record, input order preserved.
std::vector<double> predict_transformer(const TransformerModel& model,
                                        const std::vector<PatientRecord>& records,
                                        const Vocabulary& vocab, const AnchorSpec& anchor);

std::string save_transformer(const TransformerModel& model);
// Verifies the stored vocabulary hash when a vocabulary is supplied.
TransformerModel load_transformer(const std::string& text, const Vocabulary* vocab = nullptr);

}  // namespace anchorpheno
