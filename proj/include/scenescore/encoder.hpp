#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "scenescore/corpus.hpp"
#include "scenescore/mat.hpp"
#include "scenescore/rng.hpp"

namespace scenescore {

/// Word-level tokenizer: lowercase, strip non-alphanumeric characters,
/// split on whitespace. Words absent from the vocabulary map to [UNK].
struct TokenizerRules {
    bool lowercase = true;
    bool strip_punctuation = true;
    int min_frequency = 1;
    std::unordered_map<std::string, int> vocab;  // includes the specials
    std::vector<std::string> id_to_token;

    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;

    int vocab_size() const { return static_cast<int>(id_to_token.size()); }
    bool has_vocab() const { return !id_to_token.empty(); }
    int id_of(const std::string& token) const;
};

/// Normalized word stream with no vocabulary mapping applied.
std::vector<std::string> normalize_words(const TokenizerRules& rules,
                                         std::string_view text);

/// Normalized tokens with out-of-vocabulary words replaced by "[UNK]"
/// (only when the rules carry a vocabulary).
std::vector<std::string> tokenize(const TokenizerRules& rules,
                                  std::string_view text);

/// Builds a vocabulary over the caption corpus: specials at ids 0-3, then
/// all words with frequency >= min_frequency in lexicographic order.
TokenizerRules build_tokenizer(std::span<const CaptionDocument> docs,
                               int min_frequency = 1,
                               bool lowercase = true,
                               bool strip_punctuation = true);

/// Token ids framed as [CLS] s1 [SEP] s2 [SEP] ... s5 [SEP], truncated to
/// max length (final position forced to [SEP]) and padded with [PAD].
/// content marks word positions only: specials and padding excluded.
struct SequenceLayout {
    std::vector<int> ids;
    std::vector<uint8_t> content;
    int real_length = 0;  // prefix length before padding

    int content_count() const {
        int n = 0;
        for (uint8_t c : content) n += c;
        return n;
    }
};

SequenceLayout build_sequence(const TokenizerRules& rules,
                              const CaptionDocument& doc,
                              int max_seq_length = 128);

struct EncoderConfig {
    int hidden = 64;
    int max_seq_length = 128;
    // init scales; token embeddings are deliberately wide so small
    // fine-tuning steps still separate token directions
    double embed_init_std = 6.0;
    double pos_init_std = 0.02;
    double out_proj_init_std = 0.02;
};

/// Parameter groups that receive no updates during training. Embedding and
/// positional tables are frozen by default.
struct FreezeMask {
    bool embedding = true;
    bool positional = true;
    bool wq = false;
    bool wk = false;
    bool wv = false;
    bool wo = false;
};

/// Embedding table + one single-head scaled-dot-product mixing layer with a
/// residual connection: H = X + (softmax(XWq (XWk)^T / sqrt(h)) XWv) Wo,
/// where X = embedding + positional and [PAD] keys are masked out.
struct ContextualEncoder {
    EncoderConfig cfg;
    Mat embedding;   // V x h
    Mat positional;  // max_seq_length x h
    Mat wq, wk, wv, wo;  // h x h each
    FreezeMask freeze;
};

ContextualEncoder init_encoder(const EncoderConfig& cfg, int vocab_size, Rng& rng);

/// Hidden representation, one row per (padded) sequence position.
Mat encode(const ContextualEncoder& enc, const SequenceLayout& seq);

/// Two-class softmax head; the class-1 probability is the token score.
struct RegressionHead {
    Mat w;  // h x 2
    Vec b;  // 2
};

/// Class-1 probability per row of H.
Vec token_probs(const Mat& hidden, const RegressionHead& head);

/// Mean probability over content positions. Throws DataError when the
/// content mask is empty.
double score_sequence(const Vec& probs, const std::vector<uint8_t>& content);

/// Affine map from score01 in [0, 1] to the [0, 10] perception scale.
inline double rescale(double score01) { return 10.0 * score01; }
inline double rescale_inverse(double score) { return score / 10.0; }

struct PerceptionModel {
    TokenizerRules tokenizer;
    ContextualEncoder encoder;
    std::array<RegressionHead, kNumDimensions> heads;
    // per-dimension target statistics from the training split
    std::array<double, kNumDimensions> target_min{};
    std::array<double, kNumDimensions> target_max{};
    std::array<double, kNumDimensions> target_mean{};
    std::array<double, kNumDimensions> target_std{};
};

struct TrainConfig {
    int batch_size = 32;
    double learning_rate = 2e-5;
    int epochs = 10;
    uint64_t seed = 7;
    FreezeMask freeze;
    EncoderConfig encoder;
    int min_frequency = 1;
    // Adam
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    // train only this dimension when >= 0 (default: all six jointly)
    int only_dimension = -1;
};

struct TrainResult {
    PerceptionModel model;
    Vec loss_trace;  // mean squared error per epoch
};

/// Fine-tunes the six heads (and unfrozen encoder groups) against min-max
/// normalized targets. Heads start at zero so all token probabilities begin
/// at 0.5. Throws NumericError on non-finite loss and DataError when a
/// dimension's training targets are constant.
TrainResult train_heads(const LabeledCorpus& train, const TrainConfig& cfg);

/// Forward scores for one document on the [0, 10] scale.
std::array<double, kNumDimensions> predict_scores(const PerceptionModel& model,
                                                  const CaptionDocument& doc);

std::vector<std::array<double, kNumDimensions>> predict(
    const PerceptionModel& model, std::span<const CaptionDocument> docs);

/// Analytic gradients of the batch MSE loss; shapes mirror the parameters.
/// Exposed so tests can compare against finite differences.
struct EncoderGradients {
    Mat embedding, positional, wq, wk, wv, wo;
    std::array<Mat, kNumDimensions> head_w;
    std::array<Vec, kNumDimensions> head_b;
    double loss = 0.0;
};

EncoderGradients head_loss_gradients(
    const PerceptionModel& model, std::span<const SequenceLayout> sequences,
    std::span<const std::array<double, kNumDimensions>> targets01,
    int only_dimension = -1);

/// Loss only (used by the finite-difference tests).
double head_loss(const PerceptionModel& model,
                 std::span<const SequenceLayout> sequences,
                 std::span<const std::array<double, kNumDimensions>> targets01,
                 int only_dimension = -1);

/// Hidden matrices computed offline by a larger encoder, stored as a PMTE
/// container plus a JSONL sidecar index ({tensor_ordinal, image_id,
/// token_strings}).
struct ImportedHidden {
    Mat hidden;                        // rows x h
    std::vector<std::string> tokens;   // one per row
    std::vector<uint8_t> content_mask() const;
};

std::map<std::string, ImportedHidden> import_external_hidden(
    const std::string& pmte_path, const std::string& index_path);

void export_external_hidden(const std::string& pmte_path,
                            const std::string& index_path,
                            const std::vector<std::pair<std::string, ImportedHidden>>& items);

/// Model persistence: PMTE weights + JSON manifest in a directory.
void save_model(const PerceptionModel& model, const std::string& dir);
PerceptionModel load_model(const std::string& dir);

}  // namespace scenescore
