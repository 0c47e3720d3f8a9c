#include "scenescore/captioner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "scenescore/common.hpp"
#include "scenescore/pmte.hpp"

namespace scenescore {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

TokenVocabulary build_caption_vocab(
    std::span<const std::vector<std::string>> references) {
    TokenVocabulary vocab;
    vocab.id_to_token = {"[begin]", "[end]", "[UNK]", "[PAD]"};
    std::set<std::string> words;
    for (const auto& ref : references)
        for (const std::string& w : ref) words.insert(w);
    for (const std::string& w : words) {
        if (std::find(vocab.id_to_token.begin(), vocab.id_to_token.end(), w) ==
            vocab.id_to_token.end())
            vocab.id_to_token.push_back(w);
    }
    for (std::size_t i = 0; i < vocab.id_to_token.size(); ++i)
        vocab.token_to_id[vocab.id_to_token[i]] = static_cast<int>(i);
    return vocab;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Cached intermediates of one cell update, enough to backpropagate.
struct StepCache {
    Vec x, h_prev, c_prev;
    Vec gi, gf, go, gg;  // post-activation gates
    Vec c, tanh_c, h;
};

StepCache lstm_forward(const Vec& x, const LstmState& state,
                       const LstmParams& p) {
    const int hs = p.hidden_size;
    if (static_cast<int>(x.size()) != p.input_size)
        throw DataError("lstm_step: input size mismatch");
    if (static_cast<int>(state.h.size()) != hs ||
        static_cast<int>(state.c.size()) != hs)
        throw DataError("lstm_step: state size mismatch");
    StepCache s;
    s.x = x;
    s.h_prev = state.h;
    s.c_prev = state.c;
    Vec z(4 * hs, 0.0);
    for (int r = 0; r < 4 * hs; ++r) {
        const double* wr = p.w_gates.row(r);
        const double* ur = p.u_gates.row(r);
        double acc = p.b_gates[r];
        for (int i = 0; i < p.input_size; ++i) acc += wr[i] * x[i];
        for (int i = 0; i < hs; ++i) acc += ur[i] * state.h[i];
        z[r] = acc;
    }
    s.gi.resize(hs);
    s.gf.resize(hs);
    s.go.resize(hs);
    s.gg.resize(hs);
    s.c.resize(hs);
    s.tanh_c.resize(hs);
    s.h.resize(hs);
    for (int i = 0; i < hs; ++i) {
        s.gi[i] = sigmoid(z[i]);
        s.gf[i] = sigmoid(z[hs + i]);
        s.go[i] = sigmoid(z[2 * hs + i]);
        s.gg[i] = std::tanh(z[3 * hs + i]);
        s.c[i] = s.gf[i] * state.c[i] + s.gi[i] * s.gg[i];
        s.tanh_c[i] = std::tanh(s.c[i]);
        s.h[i] = s.go[i] * s.tanh_c[i];
    }
    return s;
}

}  // namespace

LstmState lstm_step(const Vec& x, const LstmState& state,
                    const LstmParams& params) {
    StepCache s = lstm_forward(x, state, params);
    return {std::move(s.h), std::move(s.c)};
}

Vec step_distribution(const Vec& hidden, const OutputProjection& proj) {
    if (proj.w.rows() != hidden.size() || proj.b.size() != proj.w.cols())
        throw DataError("step_distribution: projection shape mismatch");
    Vec logits = matvec_t(proj.w, hidden);
    for (std::size_t v = 0; v < logits.size(); ++v) logits[v] += proj.b[v];
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) {
        l = std::exp(l - mx);
        z += l;
    }
    for (double& l : logits) l /= z;
    return logits;
}

CaptionerModel init_captioner(const TokenVocabulary& vocab, int feature_size,
                              int embed_size, int hidden_size, Rng& rng) {
    CaptionerModel m;
    m.vocab = vocab;
    m.embed_size = embed_size;
    m.feature_size = feature_size;
    // all weights uniform in [-0.1, 0.1]
    auto fill = [&](Mat& mat, std::size_t r, std::size_t c) {
        mat = Mat(r, c);
        for (double& v : mat.data()) v = rng.uniform(-0.1, 0.1);
    };
    fill(m.embedding, vocab.size(), embed_size);
    fill(m.feature_proj, embed_size, feature_size);
    m.lstm.input_size = embed_size;
    m.lstm.hidden_size = hidden_size;
    fill(m.lstm.w_gates, 4 * hidden_size, embed_size);
    fill(m.lstm.u_gates, 4 * hidden_size, hidden_size);
    m.lstm.b_gates.assign(4 * hidden_size, 0.0);
    for (double& v : m.lstm.b_gates) v = rng.uniform(-0.1, 0.1);
    fill(m.proj.w, hidden_size, vocab.size());
    m.proj.b.assign(vocab.size(), 0.0);
    for (double& v : m.proj.b) v = rng.uniform(-0.1, 0.1);
    return m;
}

namespace {

Vec embed_row(const CaptionerModel& m, int token) {
    const double* r = m.embedding.row(token);
    return Vec(r, r + m.embed_size);
}

Vec project_feature(const CaptionerModel& m, const Vec& feature) {
    if (static_cast<int>(feature.size()) != m.feature_size)
        throw DataError("captioner: feature size mismatch");
    return matvec(m.feature_proj, feature);
}

int argmax_token(const Vec& dist) {
    int best = 0;
    for (std::size_t v = 1; v < dist.size(); ++v)
        if (dist[v] > dist[best]) best = static_cast<int>(v);
    return best;
}

}  // namespace

std::vector<int> decode_greedy(const CaptionerModel& model, const Vec& feature,
                               int max_len) {
    if (max_len < 1) throw DataError("decode_greedy: max_len must be >= 1");
    const int hs = model.lstm.hidden_size;
    LstmState state{Vec(hs, 0.0), Vec(hs, 0.0)};
    state = lstm_step(project_feature(model, feature), state, model.lstm);
    Vec x = embed_row(model, TokenVocabulary::kBegin);
    std::vector<int> out;
    for (int t = 0; t < max_len; ++t) {
        state = lstm_step(x, state, model.lstm);
        Vec dist = step_distribution(state.h, model.proj);
        int tok = argmax_token(dist);
        if (tok == TokenVocabulary::kEnd) break;
        out.push_back(tok);
        x = embed_row(model, tok);
    }
    return out;
}

std::vector<std::string> decode_greedy_tokens(const CaptionerModel& model,
                                              const Vec& feature, int max_len) {
    std::vector<std::string> words;
    for (int id : decode_greedy(model, feature, max_len))
        words.push_back(model.vocab.id_to_token[id]);
    return words;
}

namespace {

std::vector<int> reference_ids(const CaptionerModel& model,
                               std::span<const std::string> reference) {
    std::vector<int> ids;
    ids.reserve(reference.size());
    for (const std::string& w : reference) ids.push_back(model.vocab.id_or_unk(w));
    return ids;
}

/// Per-pair forward pass under teacher forcing. Prediction step t consumes
/// x_t and is scored against targets = [w_1 ... w_T, [end]].
struct SequenceForward {
    std::vector<StepCache> steps;       // length T + 2 (feature, begin, w_1..w_T)
    std::vector<int> targets;           // length T + 1
    std::vector<Vec> distributions;     // one per target
    double nll = 0.0;
};

SequenceForward caption_forward(const CaptionerModel& model, const Vec& feature,
                                std::span<const std::string> reference) {
    if (reference.empty())
        throw DataError("teacher_forced_nll: empty reference caption");
    std::vector<int> ref = reference_ids(model, reference);
    SequenceForward f;
    f.targets = ref;
    f.targets.push_back(TokenVocabulary::kEnd);
    const int hs = model.lstm.hidden_size;
    LstmState state{Vec(hs, 0.0), Vec(hs, 0.0)};
    f.steps.push_back(lstm_forward(project_feature(model, feature), state, model.lstm));
    state = {f.steps.back().h, f.steps.back().c};
    std::vector<int> inputs = {TokenVocabulary::kBegin};
    inputs.insert(inputs.end(), ref.begin(), ref.end());
    double total = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        f.steps.push_back(lstm_forward(embed_row(model, inputs[t]), state, model.lstm));
        state = {f.steps.back().h, f.steps.back().c};
        Vec dist = step_distribution(state.h, model.proj);
        total += -std::log(std::max(dist[f.targets[t]], 1e-300));
        f.distributions.push_back(std::move(dist));
    }
    f.nll = total / static_cast<double>(f.targets.size());
    return f;
}

}  // namespace

double teacher_forced_nll(const CaptionerModel& model, const Vec& feature,
                          std::span<const std::string> reference) {
    return caption_forward(model, feature, reference).nll;
}

double caption_loss(const CaptionerModel& model,
                    std::span<const CaptionPair> batch) {
    double total = 0.0;
    for (const CaptionPair& pair : batch)
        total += teacher_forced_nll(model, pair.first, pair.second);
    return total / static_cast<double>(batch.size());
}

CaptionerGradients caption_loss_gradients(const CaptionerModel& model,
                                          std::span<const CaptionPair> batch) {
    const int hs = model.lstm.hidden_size;
    const int es = model.embed_size;
    CaptionerGradients g;
    g.embedding = Mat(model.embedding.rows(), es);
    g.feature_proj = Mat(es, model.feature_size);
    g.w_gates = Mat(4 * hs, es);
    g.u_gates = Mat(4 * hs, hs);
    g.b_gates.assign(4 * hs, 0.0);
    g.w_proj = Mat(hs, model.vocab.size());
    g.b_proj.assign(model.vocab.size(), 0.0);

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    for (const CaptionPair& pair : batch) {
        SequenceForward f = caption_forward(model, pair.first, pair.second);
        g.loss += f.nll * inv_batch;
        const std::size_t n_steps = f.steps.size();
        const double scale = inv_batch / static_cast<double>(f.targets.size());

        std::vector<Vec> d_h(n_steps, Vec(hs, 0.0));
        // emission gradients: steps 1..n_steps-1 predict targets 0..n-2
        for (std::size_t t = 0; t < f.targets.size(); ++t) {
            const Vec& dist = f.distributions[t];
            const Vec& h = f.steps[t + 1].h;
            for (std::size_t v = 0; v < dist.size(); ++v) {
                double dlogit = dist[v] * scale;
                if (static_cast<int>(v) == f.targets[t]) dlogit -= scale;
                if (dlogit == 0.0) continue;
                g.b_proj[v] += dlogit;
                for (int i = 0; i < hs; ++i) {
                    g.w_proj(i, v) += h[i] * dlogit;
                    d_h[t + 1][i] += model.proj.w(i, v) * dlogit;
                }
            }
        }
        // backprop through time
        Vec d_c(hs, 0.0);
        std::vector<int> inputs = {TokenVocabulary::kBegin};
        {
            std::vector<int> ref = reference_ids(model, pair.second);
            inputs.insert(inputs.end(), ref.begin(), ref.end());
        }
        for (std::size_t t = n_steps; t-- > 0;) {
            const StepCache& s = f.steps[t];
            Vec dz(4 * hs, 0.0);
            for (int i = 0; i < hs; ++i) {
                double dh = d_h[t][i];
                double d_o = dh * s.tanh_c[i];
                double dc_total = d_c[i] + dh * s.go[i] * (1.0 - s.tanh_c[i] * s.tanh_c[i]);
                double d_i = dc_total * s.gg[i];
                double d_f = dc_total * s.c_prev[i];
                double d_g = dc_total * s.gi[i];
                d_c[i] = dc_total * s.gf[i];
                dz[i] = d_i * s.gi[i] * (1.0 - s.gi[i]);
                dz[hs + i] = d_f * s.gf[i] * (1.0 - s.gf[i]);
                dz[2 * hs + i] = d_o * s.go[i] * (1.0 - s.go[i]);
                dz[3 * hs + i] = d_g * (1.0 - s.gg[i] * s.gg[i]);
            }
            Vec d_x(es, 0.0);
            for (int r = 0; r < 4 * hs; ++r) {
                double dzr = dz[r];
                if (dzr == 0.0) continue;
                g.b_gates[r] += dzr;
                const double* wr = model.lstm.w_gates.row(r);
                const double* ur = model.lstm.u_gates.row(r);
                double* gwr = g.w_gates.row(r);
                double* gur = g.u_gates.row(r);
                for (int i = 0; i < es; ++i) {
                    gwr[i] += dzr * s.x[i];
                    d_x[i] += dzr * wr[i];
                }
                for (int i = 0; i < hs; ++i) {
                    gur[i] += dzr * s.h_prev[i];
                    if (t > 0) d_h[t - 1][i] += dzr * ur[i];
                }
            }
            if (t == 0) {
                // x_{-1} = feature_proj * feature
                for (int i = 0; i < es; ++i)
                    for (int j = 0; j < model.feature_size; ++j)
                        g.feature_proj(i, j) += d_x[i] * pair.first[j];
            } else {
                double* row = g.embedding.row(inputs[t - 1]);
                for (int i = 0; i < es; ++i) row[i] += d_x[i];
            }
        }
    }
    return g;
}

CaptionTrainResult train_captioner(std::span<const CaptionPair> dataset,
                                   const CaptionTrainConfig& cfg) {
    if (dataset.empty()) throw DataError("train_captioner: empty dataset");
    std::vector<std::vector<std::string>> refs;
    refs.reserve(dataset.size());
    for (const CaptionPair& p : dataset) refs.push_back(p.second);
    TokenVocabulary vocab = build_caption_vocab(refs);

    Rng rng(cfg.seed);
    CaptionTrainResult result;
    result.model = init_captioner(vocab, static_cast<int>(dataset[0].first.size()),
                                  cfg.embed_size, cfg.hidden_size, rng);
    CaptionerModel& model = result.model;

    struct Slot {
        Vec m, v;
    };
    auto make_slot = [](std::size_t n) { return Slot{Vec(n, 0.0), Vec(n, 0.0)}; };
    Slot s_emb = make_slot(model.embedding.data().size());
    Slot s_fp = make_slot(model.feature_proj.data().size());
    Slot s_w = make_slot(model.lstm.w_gates.data().size());
    Slot s_u = make_slot(model.lstm.u_gates.data().size());
    Slot s_b = make_slot(model.lstm.b_gates.size());
    Slot s_pw = make_slot(model.proj.w.data().size());
    Slot s_pb = make_slot(model.proj.b.size());
    long step = 0;
    auto apply = [&](std::vector<double>& params, const std::vector<double>& grads,
                     Slot& slot) {
        if (cfg.use_adam) {
            double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < params.size(); ++i) {
                slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * grads[i];
                slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
                params[i] -= cfg.learning_rate * (slot.m[i] / c1) /
                             (std::sqrt(slot.v[i] / c2) + cfg.adam_eps);
            }
        } else {
            for (std::size_t i = 0; i < params.size(); ++i)
                params[i] -= cfg.learning_rate * grads[i];
        }
    };

    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t batch = cfg.batch_size > 0 ? cfg.batch_size : dataset.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.batch_size > 0) rng.shuffle(order);
        double epoch_loss = 0.0;
        long n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            std::size_t end = std::min(order.size(), start + batch);
            std::vector<CaptionPair> chunk;
            for (std::size_t i = start; i < end; ++i)
                chunk.push_back(dataset[order[i]]);
            CaptionerGradients g = caption_loss_gradients(model, chunk);
            if (!std::isfinite(g.loss))
                throw NumericError("train_captioner: non-finite loss at epoch " +
                                   std::to_string(epoch));
            epoch_loss += g.loss;
            ++n_batches;
            ++step;
            apply(model.embedding.data(), g.embedding.data(), s_emb);
            apply(model.feature_proj.data(), g.feature_proj.data(), s_fp);
            apply(model.lstm.w_gates.data(), g.w_gates.data(), s_w);
            apply(model.lstm.u_gates.data(), g.u_gates.data(), s_u);
            apply(model.lstm.b_gates, g.b_gates, s_b);
            apply(model.proj.w.data(), g.w_proj.data(), s_pw);
            apply(model.proj.b, g.b_proj, s_pb);
        }
        result.loss_trace.push_back(epoch_loss / n_batches);
    }
    return result;
}

void save_captioner(const CaptionerModel& model, const std::string& dir) {
    fs::create_directories(dir);
    std::vector<Tensor> tensors;
    std::vector<std::string> names;
    auto add = [&](const std::string& name, Tensor t) {
        names.push_back(name);
        tensors.push_back(std::move(t));
    };
    add("embedding", tensor_from_mat(model.embedding));
    add("feature_proj", tensor_from_mat(model.feature_proj));
    add("lstm.w_gates", tensor_from_mat(model.lstm.w_gates));
    add("lstm.u_gates", tensor_from_mat(model.lstm.u_gates));
    add("lstm.b_gates", tensor_from_vec(model.lstm.b_gates));
    add("proj.w", tensor_from_mat(model.proj.w));
    add("proj.b", tensor_from_vec(model.proj.b));
    write_pmte((fs::path(dir) / "captioner.pmte").string(), tensors);

    ordered_json manifest;
    manifest["format"] = "scenescore-captioner/v1";
    manifest["vocab"] = model.vocab.id_to_token;
    manifest["embed_size"] = model.embed_size;
    manifest["feature_size"] = model.feature_size;
    manifest["hidden_size"] = model.lstm.hidden_size;
    ordered_json shapes;
    for (std::size_t i = 0; i < names.size(); ++i)
        shapes[names[i]] = tensors[i].shape;
    manifest["tensors"] = shapes;
    std::ofstream out(fs::path(dir) / "captioner.json",
                      std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write captioner manifest in " + dir);
    out << manifest.dump(2) << '\n';
}

CaptionerModel load_captioner(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "captioner.json");
    if (!in) throw DataError("missing captioner.json in " + dir);
    ordered_json manifest;
    try {
        in >> manifest;
    } catch (const std::exception& e) {
        throw DataError("invalid captioner manifest in " + dir + ": " + e.what());
    }
    if (manifest.value("format", "") != "scenescore-captioner/v1")
        throw DataError("unsupported captioner format in " + dir);
    CaptionerModel model;
    model.vocab.id_to_token = manifest.at("vocab").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < model.vocab.id_to_token.size(); ++i)
        model.vocab.token_to_id[model.vocab.id_to_token[i]] = static_cast<int>(i);
    model.embed_size = manifest.at("embed_size").get<int>();
    model.feature_size = manifest.at("feature_size").get<int>();
    auto tensors = read_pmte((fs::path(dir) / "captioner.pmte").string());
    if (tensors.size() != 7)
        throw DataError("captioner container must hold 7 tensors");
    model.embedding = mat_from_tensor(tensors[0]);
    model.feature_proj = mat_from_tensor(tensors[1]);
    model.lstm.w_gates = mat_from_tensor(tensors[2]);
    model.lstm.u_gates = mat_from_tensor(tensors[3]);
    model.lstm.b_gates = vec_from_tensor(tensors[4]);
    model.proj.w = mat_from_tensor(tensors[5]);
    model.proj.b = vec_from_tensor(tensors[6]);
    model.lstm.input_size = model.embed_size;
    model.lstm.hidden_size = manifest.at("hidden_size").get<int>();
    if (model.embedding.rows() != model.vocab.id_to_token.size())
        throw DataError("captioner embedding rows do not match the vocabulary");
    return model;
}

}  // namespace scenescore
