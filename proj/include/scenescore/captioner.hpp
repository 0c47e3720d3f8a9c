#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "scenescore/mat.hpp"
#include "scenescore/rng.hpp"

namespace scenescore {

/// Caption-side vocabulary with reserved control tokens at fixed ids.
struct TokenVocabulary {
    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;

    static constexpr int kBegin = 0;
    static constexpr int kEnd = 1;
    static constexpr int kUnk = 2;
    static constexpr int kPad = 3;

    int size() const { return static_cast<int>(id_to_token.size()); }
    int id_or_unk(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? kUnk : it->second;
    }
};

/// [begin] [end] [UNK] [PAD] plus reference words in lexicographic order.
TokenVocabulary build_caption_vocab(
    std::span<const std::vector<std::string>> references);

/// Gate blocks stacked in the order input, forget, output, candidate.
struct LstmParams {
    int input_size = 0;
    int hidden_size = 0;
    Mat w_gates;  // 4H x input_size
    Mat u_gates;  // 4H x H
    Vec b_gates;  // 4H
};

struct OutputProjection {
    Mat w;  // H x V
    Vec b;  // V
};

struct LstmState {
    Vec h, c;
};

/// One LSTM cell update with sigmoid gates and tanh candidate/output.
LstmState lstm_step(const Vec& x, const LstmState& state, const LstmParams& params);

/// softmax(W_p^T h + b_p).
Vec step_distribution(const Vec& hidden, const OutputProjection& proj);

struct CaptionerModel {
    TokenVocabulary vocab;
    int embed_size = 0;
    int feature_size = 0;
    Mat embedding;     // V x E
    Mat feature_proj;  // E x feature_size, maps the image feature to x_{-1}
    LstmParams lstm;
    OutputProjection proj;
};

CaptionerModel init_captioner(const TokenVocabulary& vocab, int feature_size,
                              int embed_size, int hidden_size, Rng& rng);

/// Greedy decode: consume the projected feature, then [begin], then emit the
/// argmax token per step until [end] (excluded) or max_len tokens.
std::vector<int> decode_greedy(const CaptionerModel& model, const Vec& feature,
                               int max_len);
std::vector<std::string> decode_greedy_tokens(const CaptionerModel& model,
                                              const Vec& feature, int max_len);

/// Mean negative log-likelihood of the reference (with [end] appended) under
/// teacher forcing. Out-of-vocabulary reference words map to [UNK].
double teacher_forced_nll(const CaptionerModel& model, const Vec& feature,
                          std::span<const std::string> reference);

using CaptionPair = std::pair<Vec, std::vector<std::string>>;

struct CaptionTrainConfig {
    int epochs = 200;
    double learning_rate = 0.1;
    uint64_t seed = 7;
    int embed_size = 16;
    int hidden_size = 24;
    int batch_size = 0;  // 0 = full batch
    bool use_adam = false;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
};

struct CaptionTrainResult {
    CaptionerModel model;
    Vec loss_trace;  // mean teacher-forced NLL per epoch, pre-update
};

/// Gradient descent on the teacher-forced NLL. Plain full-batch descent by
/// default; Adam and minibatches are optional. Aborts with NumericError on a
/// non-finite loss.
CaptionTrainResult train_captioner(std::span<const CaptionPair> dataset,
                                   const CaptionTrainConfig& cfg);

/// Analytic gradients of the mean NLL over a batch (for the
/// finite-difference checks).
struct CaptionerGradients {
    Mat embedding, feature_proj, w_gates, u_gates, w_proj;
    Vec b_gates, b_proj;
    double loss = 0.0;
};

CaptionerGradients caption_loss_gradients(const CaptionerModel& model,
                                          std::span<const CaptionPair> batch);
double caption_loss(const CaptionerModel& model,
                    std::span<const CaptionPair> batch);

/// Weight persistence: PMTE container + JSON manifest with tensor names.
void save_captioner(const CaptionerModel& model, const std::string& dir);
CaptionerModel load_captioner(const std::string& dir);

}  // namespace scenescore
