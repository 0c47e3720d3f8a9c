#include "scenescore/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "scenescore/pmte.hpp"

namespace scenescore {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

int TokenizerRules::id_of(const std::string& token) const {
    auto it = vocab.find(token);
    return it == vocab.end() ? kUnk : it->second;
}

std::vector<std::string> normalize_words(const TokenizerRules& rules,
                                         std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    };
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
            continue;
        }
        if (rules.strip_punctuation && !std::isalnum(c)) continue;
        cur.push_back(rules.lowercase ? static_cast<char>(std::tolower(c))
                                      : static_cast<char>(c));
    }
    flush();
    return words;
}

std::vector<std::string> tokenize(const TokenizerRules& rules,
                                  std::string_view text) {
    std::vector<std::string> words = normalize_words(rules, text);
    if (!rules.has_vocab()) return words;
    for (std::string& w : words)
        if (!rules.vocab.count(w)) w = "[UNK]";
    return words;
}

TokenizerRules build_tokenizer(std::span<const CaptionDocument> docs,
                               int min_frequency, bool lowercase,
                               bool strip_punctuation) {
    TokenizerRules rules;
    rules.lowercase = lowercase;
    rules.strip_punctuation = strip_punctuation;
    rules.min_frequency = min_frequency;
    std::map<std::string, long> freq;  // ordered -> lexicographic vocab ids
    for (const CaptionDocument& doc : docs)
        for (const std::string& cap : doc.captions)
            for (const std::string& w : normalize_words(rules, cap)) freq[w]++;
    rules.id_to_token = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    for (const auto& [w, n] : freq)
        if (n >= min_frequency) rules.id_to_token.push_back(w);
    for (std::size_t i = 0; i < rules.id_to_token.size(); ++i)
        rules.vocab[rules.id_to_token[i]] = static_cast<int>(i);
    return rules;
}

SequenceLayout build_sequence(const TokenizerRules& rules,
                              const CaptionDocument& doc, int max_seq_length) {
    SequenceLayout seq;
    seq.ids.reserve(max_seq_length);
    seq.content.reserve(max_seq_length);
    auto push = [&](int id, bool is_content) {
        seq.ids.push_back(id);
        seq.content.push_back(is_content ? 1 : 0);
    };
    push(TokenizerRules::kCls, false);
    for (const std::string& cap : doc.captions) {
        for (const std::string& tok : tokenize(rules, cap))
            push(rules.id_of(tok), true);
        push(TokenizerRules::kSep, false);
    }
    if (static_cast<int>(seq.ids.size()) > max_seq_length) {
        seq.ids.resize(max_seq_length);
        seq.content.resize(max_seq_length);
        // truncation always keeps a closing [SEP]
        seq.ids[max_seq_length - 1] = TokenizerRules::kSep;
        seq.content[max_seq_length - 1] = 0;
    }
    seq.real_length = static_cast<int>(seq.ids.size());
    while (static_cast<int>(seq.ids.size()) < max_seq_length)
        push(TokenizerRules::kPad, false);
    return seq;
}

ContextualEncoder init_encoder(const EncoderConfig& cfg, int vocab_size,
                               Rng& rng) {
    ContextualEncoder enc;
    enc.cfg = cfg;
    int h = cfg.hidden;
    enc.embedding = Mat(vocab_size, h);
    for (double& v : enc.embedding.data()) v = rng.gaussian(0.0, cfg.embed_init_std);
    enc.positional = Mat(cfg.max_seq_length, h);
    for (double& v : enc.positional.data()) v = rng.gaussian(0.0, cfg.pos_init_std);
    double glorot = std::sqrt(6.0 / (2.0 * h));
    // query/key scaled down so attention logits start near zero despite the
    // wide embedding scale
    double qk = glorot / std::max(1.0, cfg.embed_init_std);
    enc.wq = Mat(h, h);
    enc.wk = Mat(h, h);
    enc.wv = Mat(h, h);
    enc.wo = Mat(h, h);
    for (double& v : enc.wq.data()) v = rng.uniform(-qk, qk);
    for (double& v : enc.wk.data()) v = rng.uniform(-qk, qk);
    for (double& v : enc.wv.data()) v = rng.uniform(-glorot, glorot);
    for (double& v : enc.wo.data()) v = rng.gaussian(0.0, cfg.out_proj_init_std);
    return enc;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Forward intermediates over the first `len` rows (the non-pad prefix when
/// called from training; all rows for the public encode()).
struct AttentionPass {
    Mat x;    // len x h, embedding + positional
    Mat q, k, v;
    Mat a;    // len x keys softmax weights
    Mat m;    // a * v
    Mat hidden;  // x + m * wo
    int keys = 0;
};

AttentionPass attention_forward(const ContextualEncoder& enc,
                                const SequenceLayout& seq, int rows) {
    const int h = enc.cfg.hidden;
    const int keys = seq.real_length;  // [PAD] positions are masked out
    AttentionPass p;
    p.keys = keys;
    p.x = Mat(rows, h);
    for (int j = 0; j < rows; ++j) {
        const double* e = enc.embedding.row(seq.ids[j]);
        const double* pos = enc.positional.row(j);
        double* xj = p.x.row(j);
        for (int i = 0; i < h; ++i) xj[i] = e[i] + pos[i];
    }
    p.q = matmul(p.x, enc.wq);
    p.k = matmul(p.x, enc.wk);
    p.v = matmul(p.x, enc.wv);
    const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));
    p.a = Mat(rows, keys);
    for (int j = 0; j < rows; ++j) {
        const double* qj = p.q.row(j);
        double* aj = p.a.row(j);
        double mx = -1e300;
        for (int t = 0; t < keys; ++t) {
            const double* kt = p.k.row(t);
            double s = 0.0;
            for (int i = 0; i < h; ++i) s += qj[i] * kt[i];
            aj[t] = s * inv_sqrt_h;
            mx = std::max(mx, aj[t]);
        }
        double z = 0.0;
        for (int t = 0; t < keys; ++t) {
            aj[t] = std::exp(aj[t] - mx);
            z += aj[t];
        }
        for (int t = 0; t < keys; ++t) aj[t] /= z;
    }
    p.m = Mat(rows, h);
    for (int j = 0; j < rows; ++j) {
        const double* aj = p.a.row(j);
        double* mj = p.m.row(j);
        for (int t = 0; t < keys; ++t) {
            double w = aj[t];
            const double* vt = p.v.row(t);
            for (int i = 0; i < h; ++i) mj[i] += w * vt[i];
        }
    }
    Mat mix = matmul(p.m, enc.wo);
    p.hidden = p.x;
    for (std::size_t i = 0; i < p.hidden.data().size(); ++i)
        p.hidden.data()[i] += mix.data()[i];
    return p;
}

double head_logit(const Mat& hidden, int row, const RegressionHead& head) {
    const double* hj = hidden.row(row);
    double u = head.b[1] - head.b[0];
    for (std::size_t i = 0; i < hidden.cols(); ++i)
        u += hj[i] * (head.w(i, 1) - head.w(i, 0));
    return u;
}

}  // namespace

Mat encode(const ContextualEncoder& enc, const SequenceLayout& seq) {
    if (static_cast<int>(seq.ids.size()) != enc.cfg.max_seq_length)
        throw DataError("encode: sequence length does not match the encoder");
    AttentionPass p = attention_forward(enc, seq, enc.cfg.max_seq_length);
    return std::move(p.hidden);
}

Vec token_probs(const Mat& hidden, const RegressionHead& head) {
    if (head.w.rows() != hidden.cols() || head.w.cols() != 2 || head.b.size() != 2)
        throw DataError("token_probs: head shape mismatch");
    Vec probs(hidden.rows());
    for (std::size_t j = 0; j < hidden.rows(); ++j)
        probs[j] = sigmoid(head_logit(hidden, static_cast<int>(j), head));
    return probs;
}

double score_sequence(const Vec& probs, const std::vector<uint8_t>& content) {
    double sum = 0.0;
    long n = 0;
    for (std::size_t j = 0; j < probs.size() && j < content.size(); ++j) {
        if (!content[j]) continue;
        sum += probs[j];
        ++n;
    }
    if (n == 0) throw DataError("score_sequence: no content tokens");
    return sum / static_cast<double>(n);
}

namespace {

struct DocForward {
    AttentionPass pass;
    std::array<double, kNumDimensions> score01{};
    Mat probs;  // rows x dims, only content rows used
};

DocForward doc_forward(const PerceptionModel& model, const SequenceLayout& seq,
                       int only_dimension) {
    DocForward f;
    f.pass = attention_forward(model.encoder, seq, seq.real_length);
    const int rows = seq.real_length;
    f.probs = Mat(rows, kNumDimensions);
    int m = 0;
    for (int j = 0; j < rows; ++j) m += seq.content[j];
    if (m == 0) throw DataError("training sequence has no content tokens");
    for (int d = 0; d < kNumDimensions; ++d) {
        if (only_dimension >= 0 && d != only_dimension) continue;
        double sum = 0.0;
        for (int j = 0; j < rows; ++j) {
            if (!seq.content[j]) continue;
            double p = sigmoid(head_logit(f.pass.hidden, j, model.heads[d]));
            f.probs(j, d) = p;
            sum += p;
        }
        f.score01[d] = sum / m;
    }
    return f;
}

std::vector<int> trained_dims(int only_dimension) {
    std::vector<int> dims;
    if (only_dimension >= 0) {
        dims.push_back(only_dimension);
    } else {
        for (int d = 0; d < kNumDimensions; ++d) dims.push_back(d);
    }
    return dims;
}

}  // namespace

double head_loss(const PerceptionModel& model,
                 std::span<const SequenceLayout> sequences,
                 std::span<const std::array<double, kNumDimensions>> targets01,
                 int only_dimension) {
    auto dims = trained_dims(only_dimension);
    double loss = 0.0;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        DocForward f = doc_forward(model, sequences[i], only_dimension);
        double doc_loss = 0.0;
        for (int d : dims) {
            double r = f.score01[d] - targets01[i][d];
            doc_loss += r * r;
        }
        loss += doc_loss / dims.size();
    }
    return loss / static_cast<double>(sequences.size());
}

EncoderGradients head_loss_gradients(
    const PerceptionModel& model, std::span<const SequenceLayout> sequences,
    std::span<const std::array<double, kNumDimensions>> targets01,
    int only_dimension) {
    const ContextualEncoder& enc = model.encoder;
    const int h = enc.cfg.hidden;
    EncoderGradients g;
    g.embedding = Mat(enc.embedding.rows(), h);
    g.positional = Mat(enc.positional.rows(), h);
    g.wq = Mat(h, h);
    g.wk = Mat(h, h);
    g.wv = Mat(h, h);
    g.wo = Mat(h, h);
    for (int d = 0; d < kNumDimensions; ++d) {
        g.head_w[d] = Mat(h, 2);
        g.head_b[d] = Vec(2, 0.0);
    }
    auto dims = trained_dims(only_dimension);
    const double inv_docs = 1.0 / static_cast<double>(sequences.size());
    const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));

    for (std::size_t doc = 0; doc < sequences.size(); ++doc) {
        const SequenceLayout& seq = sequences[doc];
        DocForward f = doc_forward(model, seq, only_dimension);
        const int rows = seq.real_length;
        int m = 0;
        for (int j = 0; j < rows; ++j) m += seq.content[j];

        double doc_loss = 0.0;
        Mat d_hidden(rows, h);
        for (int d : dims) {
            double resid = f.score01[d] - targets01[doc][d];
            doc_loss += resid * resid;
            double ds = 2.0 * resid / dims.size() * inv_docs / m;
            const RegressionHead& head = model.heads[d];
            for (int j = 0; j < rows; ++j) {
                if (!seq.content[j]) continue;
                double p = f.probs(j, d);
                double du = ds * p * (1.0 - p);
                const double* hj = f.pass.hidden.row(j);
                double* dhj = d_hidden.row(j);
                for (int i = 0; i < h; ++i) {
                    g.head_w[d](i, 1) += du * hj[i];
                    g.head_w[d](i, 0) -= du * hj[i];
                    dhj[i] += du * (head.w(i, 1) - head.w(i, 0));
                }
                g.head_b[d][1] += du;
                g.head_b[d][0] -= du;
            }
        }
        g.loss += doc_loss / dims.size() * inv_docs;

        // H = X + (A V) Wo
        const int keys = f.pass.keys;
        Mat d_x = d_hidden;  // residual path
        // Wo and M
        for (int j = 0; j < rows; ++j) {
            const double* mj = f.pass.m.row(j);
            const double* dhj = d_hidden.row(j);
            for (int i = 0; i < h; ++i)
                for (int c = 0; c < h; ++c) g.wo(i, c) += mj[i] * dhj[c];
        }
        Mat d_m(rows, h);
        for (int j = 0; j < rows; ++j) {
            const double* dhj = d_hidden.row(j);
            double* dmj = d_m.row(j);
            for (int i = 0; i < h; ++i) {
                double s = 0.0;
                for (int c = 0; c < h; ++c) s += dhj[c] * enc.wo(i, c);
                dmj[i] = s;
            }
        }
        // A and V
        Mat d_a(rows, keys);
        Mat d_v(keys, h);
        for (int j = 0; j < rows; ++j) {
            const double* dmj = d_m.row(j);
            const double* aj = f.pass.a.row(j);
            double* daj = d_a.row(j);
            for (int t = 0; t < keys; ++t) {
                const double* vt = f.pass.v.row(t);
                double s = 0.0;
                for (int i = 0; i < h; ++i) s += dmj[i] * vt[i];
                daj[t] = s;
                double w = aj[t];
                double* dvt = d_v.row(t);
                for (int i = 0; i < h; ++i) dvt[i] += w * dmj[i];
            }
        }
        // softmax backward, folding in the 1/sqrt(h) score scale
        Mat d_s(rows, keys);
        for (int j = 0; j < rows; ++j) {
            const double* aj = f.pass.a.row(j);
            const double* daj = d_a.row(j);
            double inner = 0.0;
            for (int t = 0; t < keys; ++t) inner += daj[t] * aj[t];
            double* dsj = d_s.row(j);
            for (int t = 0; t < keys; ++t)
                dsj[t] = (daj[t] - inner) * aj[t] * inv_sqrt_h;
        }
        Mat d_q(rows, h);
        Mat d_k(keys, h);
        for (int j = 0; j < rows; ++j) {
            const double* dsj = d_s.row(j);
            const double* qj = f.pass.q.row(j);
            double* dqj = d_q.row(j);
            for (int t = 0; t < keys; ++t) {
                double w = dsj[t];
                if (w == 0.0) continue;
                const double* kt = f.pass.k.row(t);
                double* dkt = d_k.row(t);
                for (int i = 0; i < h; ++i) {
                    dqj[i] += w * kt[i];
                    dkt[i] += w * qj[i];
                }
            }
        }
        // projections: dWq += X^T dQ etc., dX += dQ Wq^T + dK Wk^T + dV Wv^T
        auto accumulate_proj = [&](const Mat& d_out, const Mat& w_mat, Mat& d_w,
                                   int out_rows) {
            for (int j = 0; j < out_rows; ++j) {
                const double* xj = f.pass.x.row(j);
                const double* doj = d_out.row(j);
                for (int i = 0; i < h; ++i) {
                    double xv = xj[i];
                    if (xv != 0.0)
                        for (int c = 0; c < h; ++c) d_w(i, c) += xv * doj[c];
                }
                double* dxj = d_x.row(j);
                for (int i = 0; i < h; ++i) {
                    double s = 0.0;
                    for (int c = 0; c < h; ++c) s += doj[c] * w_mat(i, c);
                    dxj[i] += s;
                }
            }
        };
        accumulate_proj(d_q, enc.wq, g.wq, rows);
        accumulate_proj(d_k, enc.wk, g.wk, keys);
        accumulate_proj(d_v, enc.wv, g.wv, keys);
        // embedding + positional
        for (int j = 0; j < rows; ++j) {
            const double* dxj = d_x.row(j);
            double* de = g.embedding.row(seq.ids[j]);
            double* dp = g.positional.row(j);
            for (int i = 0; i < h; ++i) {
                de[i] += dxj[i];
                dp[i] += dxj[i];
            }
        }
    }
    return g;
}

namespace {

/// Adam state for one tensor.
struct AdamSlot {
    Vec m, v;
    void init(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
    }
    void step(std::vector<double>& params, const std::vector<double>& grads,
              const TrainConfig& cfg, long t) {
        double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
            double mh = m[i] / c1;
            double vh = v[i] / c2;
            params[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_eps);
        }
    }
};

}  // namespace

TrainResult train_heads(const LabeledCorpus& train, const TrainConfig& cfg) {
    if (train.entries.empty()) throw DataError("train_heads: empty training split");
    if (cfg.only_dimension >= kNumDimensions)
        throw DataError("train_heads: dimension index out of range");

    std::vector<CaptionDocument> docs;
    docs.reserve(train.size());
    for (const LabeledEntry& e : train.entries)
        docs.push_back({e.image_id, e.captions});

    TrainResult result;
    PerceptionModel& model = result.model;
    model.tokenizer = build_tokenizer(docs, cfg.min_frequency);

    Rng rng(cfg.seed);
    model.encoder = init_encoder(cfg.encoder, model.tokenizer.vocab_size(), rng);
    model.encoder.freeze = cfg.freeze;
    const int h = cfg.encoder.hidden;
    for (int d = 0; d < kNumDimensions; ++d) {
        model.heads[d].w = Mat(h, 2);  // zero start: every token scores 0.5
        model.heads[d].b = Vec(2, 0.0);
    }

    // target statistics and min-max normalization from the training split
    auto dims = trained_dims(cfg.only_dimension);
    for (int d = 0; d < kNumDimensions; ++d) {
        double lo = 1e300, hi = -1e300, sum = 0.0, sum2 = 0.0;
        for (const LabeledEntry& e : train.entries) {
            double q = e.scores[d];
            lo = std::min(lo, q);
            hi = std::max(hi, q);
            sum += q;
            sum2 += q * q;
        }
        double n = static_cast<double>(train.size());
        model.target_min[d] = lo;
        model.target_max[d] = hi;
        model.target_mean[d] = sum / n;
        double var = std::max(0.0, sum2 / n - model.target_mean[d] * model.target_mean[d]);
        model.target_std[d] = std::sqrt(var);
    }
    for (int d : dims)
        if (model.target_max[d] <= model.target_min[d])
            throw DataError("train_heads: degenerate target range for dimension '" +
                            std::string(to_string(all_dimensions()[d])) + "'");

    std::vector<SequenceLayout> sequences;
    sequences.reserve(train.size());
    for (const LabeledEntry& e : train.entries)
        sequences.push_back(build_sequence(model.tokenizer,
                                           {e.image_id, e.captions},
                                           cfg.encoder.max_seq_length));
    std::vector<std::array<double, kNumDimensions>> targets01(train.size());
    for (std::size_t i = 0; i < train.size(); ++i)
        for (int d = 0; d < kNumDimensions; ++d) {
            double range = model.target_max[d] - model.target_min[d];
            targets01[i][d] = range > 0.0
                ? (train.entries[i].scores[d] - model.target_min[d]) / range
                : 0.5;
        }

    // Adam slots for unfrozen groups; heads always train
    AdamSlot s_emb, s_pos, s_wq, s_wk, s_wv, s_wo;
    std::array<AdamSlot, kNumDimensions> s_hw, s_hb;
    const FreezeMask& fr = model.encoder.freeze;
    if (!fr.embedding) s_emb.init(model.encoder.embedding.data().size());
    if (!fr.positional) s_pos.init(model.encoder.positional.data().size());
    if (!fr.wq) s_wq.init(model.encoder.wq.data().size());
    if (!fr.wk) s_wk.init(model.encoder.wk.data().size());
    if (!fr.wv) s_wv.init(model.encoder.wv.data().size());
    if (!fr.wo) s_wo.init(model.encoder.wo.data().size());
    for (int d : dims) {
        s_hw[d].init(static_cast<std::size_t>(h) * 2);
        s_hb[d].init(2);
    }

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<SequenceLayout> batch_seqs;
            std::vector<std::array<double, kNumDimensions>> batch_targets;
            for (std::size_t i = start; i < end; ++i) {
                batch_seqs.push_back(sequences[order[i]]);
                batch_targets.push_back(targets01[order[i]]);
            }
            EncoderGradients g = head_loss_gradients(model, batch_seqs,
                                                     batch_targets,
                                                     cfg.only_dimension);
            if (!std::isfinite(g.loss))
                throw NumericError("train_heads: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(batches));
            epoch_loss += g.loss;
            ++batches;
            ++step;
            if (!fr.embedding)
                s_emb.step(model.encoder.embedding.data(), g.embedding.data(), cfg, step);
            if (!fr.positional)
                s_pos.step(model.encoder.positional.data(), g.positional.data(), cfg, step);
            if (!fr.wq) s_wq.step(model.encoder.wq.data(), g.wq.data(), cfg, step);
            if (!fr.wk) s_wk.step(model.encoder.wk.data(), g.wk.data(), cfg, step);
            if (!fr.wv) s_wv.step(model.encoder.wv.data(), g.wv.data(), cfg, step);
            if (!fr.wo) s_wo.step(model.encoder.wo.data(), g.wo.data(), cfg, step);
            for (int d : dims) {
                s_hw[d].step(model.heads[d].w.data(), g.head_w[d].data(), cfg, step);
                s_hb[d].step(model.heads[d].b, g.head_b[d], cfg, step);
            }
        }
        result.loss_trace.push_back(batches > 0 ? epoch_loss / batches : 0.0);
    }
    return result;
}

std::array<double, kNumDimensions> predict_scores(const PerceptionModel& model,
                                                  const CaptionDocument& doc) {
    SequenceLayout seq =
        build_sequence(model.tokenizer, doc, model.encoder.cfg.max_seq_length);
    AttentionPass pass = attention_forward(model.encoder, seq, seq.real_length);
    std::array<double, kNumDimensions> out{};
    int m = 0;
    for (int j = 0; j < seq.real_length; ++j) m += seq.content[j];
    if (m == 0) throw DataError("predict: document '" + doc.image_id +
                                "' has no content tokens");
    for (int d = 0; d < kNumDimensions; ++d) {
        double sum = 0.0;
        for (int j = 0; j < seq.real_length; ++j) {
            if (!seq.content[j]) continue;
            sum += sigmoid(head_logit(pass.hidden, j, model.heads[d]));
        }
        out[d] = rescale(sum / m);
    }
    return out;
}

std::vector<std::array<double, kNumDimensions>> predict(
    const PerceptionModel& model, std::span<const CaptionDocument> docs) {
    std::vector<std::array<double, kNumDimensions>> out;
    out.reserve(docs.size());
    for (const CaptionDocument& doc : docs) out.push_back(predict_scores(model, doc));
    return out;
}

std::vector<uint8_t> ImportedHidden::content_mask() const {
    std::vector<uint8_t> mask(tokens.size(), 1);
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] == "[CLS]" || tokens[i] == "[SEP]" || tokens[i] == "[PAD]")
            mask[i] = 0;
    return mask;
}

std::map<std::string, ImportedHidden> import_external_hidden(
    const std::string& pmte_path, const std::string& index_path) {
    std::vector<Tensor> tensors = read_pmte(pmte_path);
    std::ifstream in(index_path);
    if (!in) throw DataError("cannot open hidden-state index: " + index_path);
    std::map<std::string, ImportedHidden> out;
    std::string line;
    long line_no = 0;
    std::size_t seen = 0;
    std::size_t hidden_width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw DataError(index_path + " line " + std::to_string(line_no) +
                            ": invalid JSON (" + e.what() + ")");
        }
        auto ordinal = j.at("tensor_ordinal").get<std::size_t>();
        if (ordinal >= tensors.size())
            throw DataError(index_path + ": tensor_ordinal " +
                            std::to_string(ordinal) + " out of range");
        const Tensor& t = tensors[ordinal];
        if (t.shape.size() != 2)
            throw DataError(pmte_path + ": hidden tensors must be rank 2");
        ImportedHidden item;
        item.hidden = mat_from_tensor(t);
        item.tokens = j.at("token_strings").get<std::vector<std::string>>();
        if (item.tokens.size() != item.hidden.rows())
            throw DataError(index_path + ": token_strings length " +
                            std::to_string(item.tokens.size()) +
                            " does not match tensor rows " +
                            std::to_string(item.hidden.rows()));
        if (hidden_width == 0) hidden_width = item.hidden.cols();
        if (item.hidden.cols() != hidden_width)
            throw DataError(pmte_path + ": inconsistent hidden sizes across tensors");
        out[j.at("image_id").get<std::string>()] = std::move(item);
        ++seen;
    }
    if (seen != tensors.size())
        throw DataError(index_path + ": index covers " + std::to_string(seen) +
                        " of " + std::to_string(tensors.size()) + " tensors");
    return out;
}

void export_external_hidden(
    const std::string& pmte_path, const std::string& index_path,
    const std::vector<std::pair<std::string, ImportedHidden>>& items) {
    std::vector<Tensor> tensors;
    std::ofstream idx(index_path, std::ios::binary | std::ios::trunc);
    if (!idx) throw DataError("cannot open for writing: " + index_path);
    for (std::size_t i = 0; i < items.size(); ++i) {
        tensors.push_back(tensor_from_mat(items[i].second.hidden));
        ordered_json j;
        j["tensor_ordinal"] = i;
        j["image_id"] = items[i].first;
        j["token_strings"] = items[i].second.tokens;
        idx << j.dump() << '\n';
    }
    if (!idx) throw DataError("write failed: " + index_path);
    write_pmte(pmte_path, tensors);
}

namespace {

ordered_json freeze_to_json(const FreezeMask& f) {
    return ordered_json{{"embedding", f.embedding}, {"positional", f.positional},
                        {"wq", f.wq}, {"wk", f.wk}, {"wv", f.wv}, {"wo", f.wo}};
}

FreezeMask freeze_from_json(const ordered_json& j) {
    FreezeMask f;
    f.embedding = j.at("embedding").get<bool>();
    f.positional = j.at("positional").get<bool>();
    f.wq = j.at("wq").get<bool>();
    f.wk = j.at("wk").get<bool>();
    f.wv = j.at("wv").get<bool>();
    f.wo = j.at("wo").get<bool>();
    return f;
}

}  // namespace

void save_model(const PerceptionModel& model, const std::string& dir) {
    fs::create_directories(dir);
    std::vector<Tensor> tensors;
    std::vector<std::string> names;
    auto add_mat = [&](const std::string& name, const Mat& m) {
        names.push_back(name);
        tensors.push_back(tensor_from_mat(m));
    };
    auto add_vec = [&](const std::string& name, const Vec& v) {
        names.push_back(name);
        tensors.push_back(tensor_from_vec(v));
    };
    add_mat("embedding", model.encoder.embedding);
    add_mat("positional", model.encoder.positional);
    add_mat("wq", model.encoder.wq);
    add_mat("wk", model.encoder.wk);
    add_mat("wv", model.encoder.wv);
    add_mat("wo", model.encoder.wo);
    for (int d = 0; d < kNumDimensions; ++d) {
        std::string dim(to_string(all_dimensions()[d]));
        add_mat("head_w." + dim, model.heads[d].w);
        add_vec("head_b." + dim, model.heads[d].b);
    }
    write_pmte((fs::path(dir) / "model.pmte").string(), tensors);

    ordered_json manifest;
    manifest["format"] = "scenescore-model/v1";
    manifest["tokenizer"] = {
        {"lowercase", model.tokenizer.lowercase},
        {"strip_punctuation", model.tokenizer.strip_punctuation},
        {"min_frequency", model.tokenizer.min_frequency},
        {"tokens", model.tokenizer.id_to_token},
    };
    manifest["encoder"] = {
        {"hidden", model.encoder.cfg.hidden},
        {"max_seq_length", model.encoder.cfg.max_seq_length},
        {"embed_init_std", model.encoder.cfg.embed_init_std},
        {"pos_init_std", model.encoder.cfg.pos_init_std},
        {"out_proj_init_std", model.encoder.cfg.out_proj_init_std},
    };
    manifest["freeze"] = freeze_to_json(model.encoder.freeze);
    ordered_json targets;
    for (int d = 0; d < kNumDimensions; ++d) {
        targets[std::string(to_string(all_dimensions()[d]))] = {
            {"min", model.target_min[d]},
            {"max", model.target_max[d]},
            {"mean", model.target_mean[d]},
            {"std", model.target_std[d]},
        };
    }
    manifest["targets"] = targets;
    manifest["tensors"] = names;
    std::ofstream out(fs::path(dir) / "model.json",
                      std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write model manifest in " + dir);
    out << manifest.dump(2) << '\n';
}

PerceptionModel load_model(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "model.json");
    if (!in) throw DataError("missing model.json in " + dir);
    ordered_json manifest;
    try {
        in >> manifest;
    } catch (const std::exception& e) {
        throw DataError("invalid model manifest in " + dir + ": " + e.what());
    }
    if (manifest.value("format", "") != "scenescore-model/v1")
        throw DataError("unsupported model format in " + dir);

    PerceptionModel model;
    const auto& tk = manifest.at("tokenizer");
    model.tokenizer.lowercase = tk.at("lowercase").get<bool>();
    model.tokenizer.strip_punctuation = tk.at("strip_punctuation").get<bool>();
    model.tokenizer.min_frequency = tk.at("min_frequency").get<int>();
    model.tokenizer.id_to_token = tk.at("tokens").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < model.tokenizer.id_to_token.size(); ++i)
        model.tokenizer.vocab[model.tokenizer.id_to_token[i]] = static_cast<int>(i);

    const auto& ec = manifest.at("encoder");
    model.encoder.cfg.hidden = ec.at("hidden").get<int>();
    model.encoder.cfg.max_seq_length = ec.at("max_seq_length").get<int>();
    model.encoder.cfg.embed_init_std = ec.at("embed_init_std").get<double>();
    model.encoder.cfg.pos_init_std = ec.at("pos_init_std").get<double>();
    model.encoder.cfg.out_proj_init_std = ec.at("out_proj_init_std").get<double>();
    model.encoder.freeze = freeze_from_json(manifest.at("freeze"));

    auto names = manifest.at("tensors").get<std::vector<std::string>>();
    auto tensors = read_pmte((fs::path(dir) / "model.pmte").string());
    if (names.size() != tensors.size())
        throw DataError("model manifest lists " + std::to_string(names.size()) +
                        " tensors but the container holds " +
                        std::to_string(tensors.size()));
    std::map<std::string, const Tensor*> by_name;
    for (std::size_t i = 0; i < names.size(); ++i) by_name[names[i]] = &tensors[i];
    auto need = [&](const std::string& name) -> const Tensor& {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw DataError("model container is missing tensor '" + name + "'");
        return *it->second;
    };
    model.encoder.embedding = mat_from_tensor(need("embedding"));
    model.encoder.positional = mat_from_tensor(need("positional"));
    model.encoder.wq = mat_from_tensor(need("wq"));
    model.encoder.wk = mat_from_tensor(need("wk"));
    model.encoder.wv = mat_from_tensor(need("wv"));
    model.encoder.wo = mat_from_tensor(need("wo"));
    for (int d = 0; d < kNumDimensions; ++d) {
        std::string dim(to_string(all_dimensions()[d]));
        model.heads[d].w = mat_from_tensor(need("head_w." + dim));
        model.heads[d].b = vec_from_tensor(need("head_b." + dim));
        const auto& tj = manifest.at("targets").at(dim);
        model.target_min[d] = tj.at("min").get<double>();
        model.target_max[d] = tj.at("max").get<double>();
        model.target_mean[d] = tj.at("mean").get<double>();
        model.target_std[d] = tj.at("std").get<double>();
    }
    if (model.encoder.embedding.rows() != model.tokenizer.id_to_token.size())
        throw DataError("embedding rows do not match the stored vocabulary");
    return model;
}

}  // namespace scenescore
