#include "scenescore/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "scenescore/baselines.hpp"
#include "scenescore/captioner.hpp"
#include "scenescore/eval.hpp"
#include "scenescore/pmte.hpp"
#include "scenescore/scenescape.hpp"
#include "scenescore/topics.hpp"

namespace scenescore {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

template <class T>
void take(const ordered_json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void check_known_keys(const ordered_json& j, const std::set<std::string>& known,
                      const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw UsageError("config: unknown key '" + it.key() + "' in " + where);
}

}  // namespace

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw UsageError("invalid config JSON in " + path + ": " + e.what());
    }
    check_known_keys(j, {"seed", "deterministic", "threads", "out_dir", "paths",
                         "train", "captioner", "topics", "cluster", "baseline",
                         "eval"},
                     "top level");
    take(j, "seed", cfg.seed);
    take(j, "deterministic", cfg.deterministic);
    take(j, "threads", cfg.threads);
    take(j, "out_dir", cfg.out_dir);
    if (j.contains("paths")) {
        const auto& p = j["paths"];
        check_known_keys(p, {"votes", "captions", "corpus", "model", "scores",
                             "embeddings", "embeddings_index", "labels", "pairs",
                             "features", "captioner", "migration", "hidden",
                             "hidden_index", "stopwords", "reports"},
                         "paths");
        take(p, "votes", cfg.votes_path);
        take(p, "captions", cfg.captions_path);
        take(p, "corpus", cfg.corpus_path);
        take(p, "model", cfg.model_dir);
        take(p, "scores", cfg.scores_path);
        take(p, "embeddings", cfg.embeddings_path);
        take(p, "embeddings_index", cfg.embeddings_index_path);
        take(p, "labels", cfg.labels_path);
        take(p, "pairs", cfg.pairs_path);
        take(p, "features", cfg.features_path);
        take(p, "captioner", cfg.captioner_dir);
        take(p, "migration", cfg.migration_path);
        take(p, "hidden", cfg.hidden_path);
        take(p, "hidden_index", cfg.hidden_index_path);
        take(p, "stopwords", cfg.stopwords_path);
        take(p, "reports", cfg.report_paths);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        check_known_keys(t, {"test_fraction", "batch_size", "learning_rate",
                             "epochs", "hidden", "max_seq_length", "min_frequency",
                             "unfreeze_embedding", "unfreeze_positional",
                             "only_dimension"},
                         "train");
        take(t, "test_fraction", cfg.test_fraction);
        take(t, "batch_size", cfg.batch_size);
        take(t, "learning_rate", cfg.learning_rate);
        take(t, "epochs", cfg.epochs);
        take(t, "hidden", cfg.hidden);
        take(t, "max_seq_length", cfg.max_seq_length);
        take(t, "min_frequency", cfg.min_frequency);
        take(t, "unfreeze_embedding", cfg.unfreeze_embedding);
        take(t, "unfreeze_positional", cfg.unfreeze_positional);
        take(t, "only_dimension", cfg.only_dimension);
    }
    if (j.contains("captioner")) {
        const auto& c = j["captioner"];
        check_known_keys(c, {"epochs", "learning_rate", "embed_size",
                             "hidden_size", "adam", "max_len", "group_five"},
                         "captioner");
        take(c, "epochs", cfg.cap_epochs);
        take(c, "learning_rate", cfg.cap_learning_rate);
        take(c, "embed_size", cfg.cap_embed_size);
        take(c, "hidden_size", cfg.cap_hidden_size);
        take(c, "adam", cfg.cap_adam);
        take(c, "max_len", cfg.cap_max_len);
        take(c, "group_five", cfg.caption_group_five);
    }
    if (j.contains("topics")) {
        const auto& t = j["topics"];
        check_known_keys(t, {"k", "alpha", "beta", "iterations", "min_frequency",
                             "top_words"},
                         "topics");
        take(t, "k", cfg.num_topics);
        take(t, "alpha", cfg.lda_alpha);
        take(t, "beta", cfg.lda_beta);
        take(t, "iterations", cfg.lda_iterations);
        take(t, "min_frequency", cfg.bow_min_frequency);
        take(t, "top_words", cfg.top_n_words);
    }
    if (j.contains("cluster")) {
        const auto& c = j["cluster"];
        check_known_keys(c, {"perplexity", "iterations", "min_cluster_size",
                             "min_samples", "raw"},
                         "cluster");
        take(c, "perplexity", cfg.perplexity);
        take(c, "iterations", cfg.tsne_iterations);
        take(c, "min_cluster_size", cfg.min_cluster_size);
        take(c, "min_samples", cfg.min_samples);
        take(c, "raw", cfg.cluster_raw);
    }
    if (j.contains("baseline")) {
        const auto& b = j["baseline"];
        check_known_keys(b, {"tree_max_depth", "tree_min_leaf", "forest_trees",
                             "forest_feature_fraction", "gbdt_stages",
                             "gbdt_learning_rate", "gbdt_depth"},
                         "baseline");
        take(b, "tree_max_depth", cfg.tree_max_depth);
        take(b, "tree_min_leaf", cfg.tree_min_leaf);
        take(b, "forest_trees", cfg.forest_trees);
        take(b, "forest_feature_fraction", cfg.forest_feature_fraction);
        take(b, "gbdt_stages", cfg.gbdt_stages);
        take(b, "gbdt_learning_rate", cfg.gbdt_learning_rate);
        take(b, "gbdt_depth", cfg.gbdt_depth);
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        check_known_keys(e, {"reference"}, "eval");
        take(e, "reference", cfg.reference_model);
    }
}

namespace {

ordered_json config_snapshot(const RunConfig& c) {
    ordered_json j;
    j["seed"] = c.seed;
    j["deterministic"] = c.deterministic;
    j["threads"] = c.threads;
    j["out_dir"] = c.out_dir;
    j["train"] = {{"test_fraction", c.test_fraction},
                  {"batch_size", c.batch_size},
                  {"learning_rate", c.learning_rate},
                  {"epochs", c.epochs},
                  {"hidden", c.hidden},
                  {"max_seq_length", c.max_seq_length},
                  {"min_frequency", c.min_frequency},
                  {"unfreeze_embedding", c.unfreeze_embedding},
                  {"unfreeze_positional", c.unfreeze_positional},
                  {"only_dimension", c.only_dimension}};
    j["captioner"] = {{"epochs", c.cap_epochs},
                      {"learning_rate", c.cap_learning_rate},
                      {"embed_size", c.cap_embed_size},
                      {"hidden_size", c.cap_hidden_size},
                      {"adam", c.cap_adam},
                      {"max_len", c.cap_max_len},
                      {"group_five", c.caption_group_five}};
    j["topics"] = {{"k", c.num_topics},
                   {"alpha", c.lda_alpha},
                   {"beta", c.lda_beta},
                   {"iterations", c.lda_iterations},
                   {"min_frequency", c.bow_min_frequency},
                   {"top_words", c.top_n_words}};
    j["cluster"] = {{"perplexity", c.perplexity},
                    {"iterations", c.tsne_iterations},
                    {"min_cluster_size", c.min_cluster_size},
                    {"min_samples", c.min_samples},
                    {"raw", c.cluster_raw}};
    j["baseline"] = {{"tree_max_depth", c.tree_max_depth},
                     {"tree_min_leaf", c.tree_min_leaf},
                     {"forest_trees", c.forest_trees},
                     {"forest_feature_fraction", c.forest_feature_fraction},
                     {"gbdt_stages", c.gbdt_stages},
                     {"gbdt_learning_rate", c.gbdt_learning_rate},
                     {"gbdt_depth", c.gbdt_depth}};
    j["eval"] = {{"reference", c.reference_model}};
    return j;
}

}  // namespace

void write_run_manifest(const RunConfig& cfg, const std::string& command,
                        const std::map<std::string, std::string>& inputs,
                        const std::vector<std::string>& outputs) {
    ordered_json j;
    j["command"] = command;
    j["version"] = "0.1.0";
    j["seed"] = cfg.seed;
    ordered_json in;
    for (const auto& [path, hash] : inputs) in[path] = hash;
    j["inputs"] = in;
    j["outputs"] = outputs;
    j["config"] = config_snapshot(cfg);
    fs::create_directories(cfg.out_dir);
    std::string name = command;
    std::replace(name.begin(), name.end(), '-', '_');
    fs::path path = fs::path(cfg.out_dir) / (name + ".manifest.json");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << j.dump(2) << '\n';
}

OutputGuard::~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (const std::string& f : files_) fs::remove_all(f, ec);
}

void OutputGuard::track(const std::string& path) { files_.push_back(path); }

std::string OutputGuard::track_in_dir(const std::string& name) const {
    return (fs::path(out_dir_) / name).string();
}

void OutputGuard::commit() { committed_ = true; }

namespace {

std::string primary_out(const RunConfig& cfg, const std::string& default_name) {
    if (!cfg.out.empty()) return cfg.out;
    return (fs::path(cfg.out_dir) / default_name).string();
}

void require(bool ok, const std::string& flag, const std::string& command) {
    if (!ok)
        throw UsageError("missing required input --" + flag + " for '" +
                         command + "'");
}

Mat embeddings_for_corpus(const PerceptionModel& model,
                          const std::vector<LabeledEntry>& entries) {
    Mat out(entries.size(), model.encoder.cfg.hidden);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        SequenceLayout seq = build_sequence(model.tokenizer,
                                            {entries[i].image_id, entries[i].captions},
                                            model.encoder.cfg.max_seq_length);
        Mat hidden = encode(model.encoder, seq);
        Vec emb = sentence_embed(hidden, seq.content);
        for (std::size_t c = 0; c < emb.size(); ++c) out(i, c) = emb[c];
    }
    return out;
}

/// Untrained model with the same tokenizer, init, and seed path as
/// cmd_train; gives baselines the frozen starting representation.
PerceptionModel init_model_for(const LabeledCorpus& train, const RunConfig& cfg) {
    std::vector<CaptionDocument> docs;
    for (const LabeledEntry& e : train.entries)
        docs.push_back({e.image_id, e.captions});
    PerceptionModel model;
    model.tokenizer = build_tokenizer(docs, cfg.min_frequency);
    EncoderConfig ec;
    ec.hidden = cfg.hidden;
    ec.max_seq_length = cfg.max_seq_length;
    Rng rng(module_seed(cfg.seed, SeedDomain::train));
    model.encoder = init_encoder(ec, model.tokenizer.vocab_size(), rng);
    for (int d = 0; d < kNumDimensions; ++d) {
        model.heads[d].w = Mat(ec.hidden, 2);
        model.heads[d].b = Vec(2, 0.0);
    }
    return model;
}

void write_embeddings(const std::string& pmte_path, const std::string& index_path,
                      const Mat& embeddings, const std::vector<std::string>& ids) {
    write_pmte(pmte_path, {tensor_from_mat(embeddings)});
    std::ofstream idx(index_path, std::ios::binary | std::ios::trunc);
    if (!idx) throw DataError("cannot open for writing: " + index_path);
    for (std::size_t i = 0; i < ids.size(); ++i)
        idx << ordered_json{{"row", i}, {"image_id", ids[i]}}.dump() << '\n';
    if (!idx) throw DataError("write failed: " + index_path);
}

std::pair<Mat, std::vector<std::string>> read_embeddings(
    const std::string& pmte_path, const std::string& index_path) {
    auto tensors = read_pmte(pmte_path);
    if (tensors.size() != 1 || tensors[0].shape.size() != 2)
        throw DataError(pmte_path + ": expected a single rank-2 tensor");
    Mat m = mat_from_tensor(tensors[0]);
    std::vector<std::string> ids(m.rows());
    std::ifstream in(index_path);
    if (!in) throw DataError("cannot open: " + index_path);
    std::string line;
    std::size_t seen = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line);
        auto row = j.at("row").get<std::size_t>();
        if (row >= ids.size())
            throw DataError(index_path + ": row index out of range");
        ids[row] = j.at("image_id").get<std::string>();
        ++seen;
    }
    if (seen != m.rows())
        throw DataError(index_path + ": index rows do not match the tensor");
    return {std::move(m), std::move(ids)};
}

DimensionSeries series_from(const LabeledCorpus& test,
                            const std::vector<std::array<double, kNumDimensions>>& preds) {
    DimensionSeries series;
    for (std::size_t i = 0; i < test.size(); ++i)
        for (int d = 0; d < kNumDimensions; ++d) {
            series[d].first.push_back(test.entries[i].scores[d]);
            series[d].second.push_back(preds[i][d]);
        }
    return series;
}

}  // namespace

PreparedCorpus prepare_split(const LabeledCorpus& corpus, double test_fraction,
                             uint64_t seed) {
    auto [train, test] = split(corpus, test_fraction, seed);
    std::vector<std::string> test_ids;
    for (const LabeledEntry& e : test.entries) test_ids.push_back(e.image_id);
    return {std::move(train), std::move(test), split_hash_of(test_ids)};
}

void cmd_ingest(RunConfig cfg) {
    require(!cfg.votes_path.empty(), "votes", "ingest");
    require(!cfg.captions_path.empty(), "captions", "ingest");
    OutputGuard guard(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    auto votes = load_votes(cfg.votes_path);
    auto captions = load_captions(cfg.captions_path);
    QScoreTable scores = score_votes(votes);
    LabeledCorpus corpus = join_dataset(scores, captions);
    std::string out = primary_out(cfg, "corpus.jsonl");
    guard.track(out);
    write_corpus_jsonl(out, corpus);
    write_run_manifest(cfg, "ingest",
                       {{cfg.votes_path, hash_file(cfg.votes_path)},
                        {cfg.captions_path, hash_file(cfg.captions_path)}},
                       {out});
    std::ostringstream note;
    note << "ingest: " << corpus.size() << " labeled images (dropped: "
         << corpus.drops.dropped_missing_captions << " without captions, "
         << corpus.drops.dropped_missing_scores << " without scores, "
         << corpus.drops.dropped_incomplete_scores << " with partial scores)";
    std::ofstream(fs::path(cfg.out_dir) / "ingest.log") << note.str() << '\n';
    guard.commit();
}

void cmd_score(RunConfig cfg) {
    require(!cfg.votes_path.empty(), "votes", "score");
    OutputGuard guard(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    auto votes = load_votes(cfg.votes_path);
    QScoreTable table = score_votes(votes);
    std::string out = primary_out(cfg, "scores.csv");
    guard.track(out);
    write_scores_csv(out, table);
    write_run_manifest(cfg, "score", {{cfg.votes_path, hash_file(cfg.votes_path)}},
                       {out});
    guard.commit();
}

void cmd_train_captioner(RunConfig cfg) {
    require(!cfg.pairs_path.empty(), "pairs", "train-captioner");
    OutputGuard guard(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    std::ifstream in(cfg.pairs_path);
    if (!in) throw DataError("cannot open: " + cfg.pairs_path);
    std::vector<CaptionPair> pairs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line);
        pairs.push_back({j.at("feature").get<Vec>(),
                         j.at("reference").get<std::vector<std::string>>()});
    }
    if (pairs.empty()) throw DataError(cfg.pairs_path + ": no training pairs");
    CaptionTrainConfig tc;
    tc.epochs = cfg.cap_epochs;
    tc.learning_rate = cfg.cap_learning_rate;
    tc.seed = module_seed(cfg.seed, SeedDomain::captioner);
    tc.embed_size = cfg.cap_embed_size;
    tc.hidden_size = cfg.cap_hidden_size;
    tc.use_adam = cfg.cap_adam;
    CaptionTrainResult result = train_captioner(pairs, tc);
    std::string dir = primary_out(cfg, "captioner");
    guard.track(dir);
    save_captioner(result.model, dir);
    std::string trace = (fs::path(cfg.out_dir) / "captioner_loss.csv").string();
    guard.track(trace);
    std::ofstream tr(trace, std::ios::binary | std::ios::trunc);
    tr << "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_trace.size(); ++e)
        tr << e << ',' << format_fixed6(result.loss_trace[e]) << '\n';
    write_run_manifest(cfg, "train-captioner",
                       {{cfg.pairs_path, hash_file(cfg.pairs_path)}},
                       {dir, trace});
    guard.commit();
}

void cmd_caption(RunConfig cfg) {
    require(!cfg.captioner_dir.empty(), "captioner", "caption");
    require(!cfg.features_path.empty(), "features", "caption");
    OutputGuard guard(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    CaptionerModel model = load_captioner(cfg.captioner_dir);
    std::ifstream in(cfg.features_path);
    if (!in) throw DataError("cannot open: " + cfg.features_path);
    std::vector<std::pair<std::string, Vec>> features;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line);
        features.push_back({j.at("image_id").get<std::string>(),
                            j.at("feature").get<Vec>()});
    }
    std::string out = primary_out(cfg, cfg.caption_group_five ? "captions.jsonl"
                                                              : "captions_flat.jsonl");
    guard.track(out);
    std::ofstream os(out, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + out);
    if (cfg.caption_group_five) {
        std::map<std::string, std::vector<std::string>> grouped;
        std::vector<std::string> id_order;
        for (const auto& [id, feat] : features) {
            if (!grouped.count(id)) id_order.push_back(id);
            auto words = decode_greedy_tokens(model, feat, cfg.cap_max_len);
            std::string caption;
            for (const std::string& w : words) {
                if (!caption.empty()) caption += ' ';
                caption += w;
            }
            if (caption.empty()) caption = "[UNK]";
            grouped[id].push_back(caption);
        }
        for (const std::string& id : id_order) {
            if (grouped[id].size() != 5)
                throw DataError("caption: image '" + id + "' has " +
                                std::to_string(grouped[id].size()) +
                                " feature rows; --group-five needs exactly 5");
            os << ordered_json{{"image_id", id}, {"captions", grouped[id]}}.dump()
               << '\n';
        }
    } else {
        for (const auto& [id, feat] : features) {
            auto words = decode_greedy_tokens(model, feat, cfg.cap_max_len);
            std::string caption;
            for (const std::string& w : words) {
                if (!caption.empty()) caption += ' ';
                caption += w;
            }
            os << ordered_json{{"image_id", id}, {"caption", caption}}.dump()
               << '\n';
        }
    }
    write_run_manifest(cfg, "caption",
                       {{cfg.features_path, hash_file(cfg.features_path)}},
                       {out});
    guard.commit();
}

void cmd_train(RunConfig cfg) {
    require(!cfg.corpus_path.empty(), "corpus", "train");
    OutputGuard guard(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    LabeledCorpus corpus = read_corpus_jsonl(cfg.corpus_path);
    PreparedCorpus prepared =
        prepare_split(corpus, cfg.test_fraction, module_seed(cfg.seed, SeedDomain::split));

    TrainConfig tc;
    tc.batch_size = cfg.batch_size;
    tc.learning_rate = cfg.learning_rate;
    tc.epochs = cfg.epochs;
    tc.seed = module_seed(cfg.seed, SeedDomain::train);
    tc.encoder.hidden = cfg.hidden;
    tc.encoder.max_seq_length = cfg.max_seq_length;
    tc.min_frequency = cfg.min_frequency;
    tc.freeze.embedding = !cfg.unfreeze_embedding;
    tc.freeze.positional = !cfg.unfreeze_positional;
    tc.only_dimension = cfg.only_dimension;
    TrainResult result = train_heads(prepared.train, tc);

    std::string model_dir = primary_out(cfg, "model");
    guard.track(model_dir);
    save_model(result.model, model_dir);

    std::string trace = (fs::path(cfg.out_dir) / "train_loss.csv").string();
    guard.track(trace);
    {
        std::ofstream tr(trace, std::ios::binary | std::ios::trunc);
        tr << "epoch,loss\n";
        for (std::size_t e = 0; e < result.loss_trace.size(); ++e)
            tr << e << ',' << format_fixed6(result.loss_trace[e]) << '\n';
    }

    // held-out metrics on the model as persisted (f32 weights)
    PerceptionModel reloaded = load_model(model_dir);
    std::vector<CaptionDocument> test_docs;
    for (const LabeledEntry& e : prepared.test.entries)
        test_docs.push_back({e.image_id, e.captions});
    auto preds = predict(reloaded, test_docs);
    MetricReport report = evaluate("token-head", prepared.split_hash,
                                   series_from(prepared.test, preds));
    std::string report_path = (fs::path(cfg.out_dir) / "report_token_head.json").string();
    guard.track(report_path);
    save_report_json(report, report_path);

    write_run_manifest(cfg, "train",
                       {{cfg.corpus_path, hash_file(cfg.corpus_path)}},
                       {model_dir, trace, report_path});
    guard.commit();
}

void cmd_predict(RunConfig cfg) {
    require(!cfg.model_dir.empty(), "model", "predict");
    require(!cfg.captions_path.empty(), "captions", "predict");
    OutputGuard guard(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    PerceptionModel model = load_model(cfg.model_dir);
    auto docs = load_captions(cfg.captions_path);
    std::string out = primary_out(cfg, "predictions.csv");
    guard.track(out);
    std::ofstream os(out, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + out);
    os << "image_id,dimension,score\n";
    for (const CaptionDocument& doc : docs) {
        auto scores = predict_scores(model, doc);
        for (Dimension d : all_dimensions())
            os << doc.image_id << ',' << to_string(d) << ','
               << format_fixed6(scores[static_cast<int>(d)]) << '\n';
    }
    write_run_manifest(cfg, "predict",
                       {{cfg.captions_path, hash_file(cfg.captions_path)}},
                       {out});
    guard.commit();
}

void cmd_embed(RunConfig cfg) {
    OutputGuard guard(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    std::string pmte_out = primary_out(cfg, "embeddings.pmte");
    std::string index_out = (fs::path(cfg.out_dir) / "embeddings.index.jsonl").string();
    std::map<std::string, std::string> inputs;

    Mat embeddings;
    std::vector<std::string> ids;
    if (!cfg.hidden_path.empty()) {
        // pool externally computed hidden states
        require(!cfg.hidden_index_path.empty(), "hidden-index", "embed");
        auto imported = import_external_hidden(cfg.hidden_path, cfg.hidden_index_path);
        embeddings = Mat(imported.size(),
                         imported.empty() ? 0 : imported.begin()->second.hidden.cols());
        std::size_t row = 0;
        for (const auto& [id, item] : imported) {
            Vec emb = sentence_embed(item.hidden, item.content_mask());
            for (std::size_t c = 0; c < emb.size(); ++c) embeddings(row, c) = emb[c];
            ids.push_back(id);
            ++row;
        }
        inputs[cfg.hidden_path] = hash_file(cfg.hidden_path);
        inputs[cfg.hidden_index_path] = hash_file(cfg.hidden_index_path);
    } else {
        require(!cfg.corpus_path.empty(), "corpus", "embed");
        require(!cfg.model_dir.empty(), "model", "embed");
        LabeledCorpus corpus = read_corpus_jsonl(cfg.corpus_path);
        PerceptionModel model = load_model(cfg.model_dir);
        embeddings = embeddings_for_corpus(model, corpus.entries);
        for (const LabeledEntry& e : corpus.entries) ids.push_back(e.image_id);
        inputs[cfg.corpus_path] = hash_file(cfg.corpus_path);
    }
    guard.track(pmte_out);
    guard.track(index_out);
    write_embeddings(pmte_out, index_out, embeddings, ids);
    write_run_manifest(cfg, "embed", inputs, {pmte_out, index_out});
    guard.commit();
}

void cmd_cluster(RunConfig cfg) {
    require(!cfg.embeddings_path.empty(), "embeddings", "cluster");
    require(!cfg.embeddings_index_path.empty(), "embeddings-index", "cluster");
    OutputGuard guard(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    auto [embeddings, ids] =
        read_embeddings(cfg.embeddings_path, cfg.embeddings_index_path);
    TsneConfig tc;
    tc.perplexity = cfg.perplexity;
    tc.iterations = cfg.tsne_iterations;
    tc.seed = module_seed(cfg.seed, SeedDomain::tsne);
    tc.threads = cfg.threads;
    TsneResult reduced = tsne(embeddings, tc);
    HdbscanConfig hc;
    hc.min_cluster_size = cfg.min_cluster_size;
    hc.min_samples = cfg.min_samples;
    hc.threads = cfg.threads;
    HdbscanResult clusters = hdbscan(cfg.cluster_raw ? embeddings : reduced.y, hc);
    std::string out = primary_out(cfg, "embedding2d.csv");
    guard.track(out);
    std::ofstream os(out, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + out);
    os << "image_id,x,y,cluster_label\n";
    for (std::size_t i = 0; i < ids.size(); ++i)
        os << ids[i] << ',' << format_fixed6(reduced.y(i, 0)) << ','
           << format_fixed6(reduced.y(i, 1)) << ',' << clusters.labels[i] << '\n';
    std::string summary = (fs::path(cfg.out_dir) / "cluster_summary.json").string();
    guard.track(summary);
    std::ofstream sj(summary, std::ios::binary | std::ios::trunc);
    sj << ordered_json{{"clusters", cluster_count(clusters.labels)},
                       {"noise", std::count(clusters.labels.begin(),
                                            clusters.labels.end(), -1)},
                       {"kl_initial", reduced.kl_initial},
                       {"kl_final", reduced.kl_final},
                       {"perplexity_used", reduced.perplexity_used}}
              .dump(2)
       << '\n';
    write_run_manifest(cfg, "cluster",
                       {{cfg.embeddings_path, hash_file(cfg.embeddings_path)},
                        {cfg.embeddings_index_path, hash_file(cfg.embeddings_index_path)}},
                       {out, summary});
    guard.commit();
}

namespace {

int cluster_count_from_labels_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line))
        throw DataError(path + ": empty labels file");
    // header image_id,x,y,cluster_label
    std::vector<int> labels;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto pos = line.rfind(',');
        if (pos == std::string::npos)
            throw DataError(path + ": malformed row '" + line + "'");
        try {
            labels.push_back(std::stoi(line.substr(pos + 1)));
        } catch (const std::exception&) {
            throw DataError(path + ": bad cluster label in row '" + line + "'");
        }
    }
    return cluster_count(labels);
}

}  // namespace

void cmd_topics(RunConfig cfg) {
    require(!cfg.captions_path.empty() || !cfg.corpus_path.empty(), "captions",
            "topics");
    OutputGuard guard(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    std::map<std::string, std::string> inputs;
    std::vector<CaptionDocument> docs;
    if (!cfg.captions_path.empty()) {
        docs = load_captions(cfg.captions_path);
        inputs[cfg.captions_path] = hash_file(cfg.captions_path);
    } else {
        LabeledCorpus corpus = read_corpus_jsonl(cfg.corpus_path);
        for (const LabeledEntry& e : corpus.entries)
            docs.push_back({e.image_id, e.captions});
        inputs[cfg.corpus_path] = hash_file(cfg.corpus_path);
    }
    int k = cfg.num_topics;
    if (!cfg.labels_path.empty()) {
        // wire K to the discovered cluster count
        k = cluster_count_from_labels_csv(cfg.labels_path);
        if (k < 2)
            throw DataError("topics: cluster labels yield K=" + std::to_string(k) +
                            "; need at least 2 clusters");
        inputs[cfg.labels_path] = hash_file(cfg.labels_path);
    }
    std::set<std::string> stopwords = cfg.stopwords_path.empty()
                                          ? default_stopwords()
                                          : load_stopwords(cfg.stopwords_path);
    if (!cfg.stopwords_path.empty())
        inputs[cfg.stopwords_path] = hash_file(cfg.stopwords_path);
    BowCorpus bow = build_bow(docs, stopwords, cfg.bow_min_frequency);
    TopicModel model = fit_lda(bow, k, cfg.lda_alpha, cfg.lda_beta,
                               cfg.lda_iterations, module_seed(cfg.seed, SeedDomain::lda));
    TopicSummary summary = top_words(model, bow, cfg.top_n_words);
    std::string summary_path = primary_out(cfg, "topics_summary.csv");
    guard.track(summary_path);
    write_topic_summary_csv(summary_path, summary);
    std::string tt_path = (fs::path(cfg.out_dir) / "topic_topic.csv").string();
    guard.track(tt_path);
    write_correlation_csv(tt_path, topic_topic_correlation(model, bow));
    std::vector<std::string> outputs{summary_path, tt_path};
    if (!cfg.scores_path.empty()) {
        QScoreTable scores = read_scores_csv(cfg.scores_path);
        inputs[cfg.scores_path] = hash_file(cfg.scores_path);
        std::string tp_path = (fs::path(cfg.out_dir) / "topic_perception.csv").string();
        guard.track(tp_path);
        write_correlation_csv(tp_path,
                              topic_perception_correlation(model, bow, scores));
        outputs.push_back(tp_path);
    }
    write_run_manifest(cfg, "topics", inputs, outputs);
    guard.commit();
}

void cmd_baseline(RunConfig cfg) {
    require(!cfg.corpus_path.empty(), "corpus", "baseline");
    OutputGuard guard(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    LabeledCorpus corpus = read_corpus_jsonl(cfg.corpus_path);
    PreparedCorpus prepared =
        prepare_split(corpus, cfg.test_fraction, module_seed(cfg.seed, SeedDomain::split));
    PerceptionModel frozen = init_model_for(prepared.train, cfg);
    Mat train_x = embeddings_for_corpus(frozen, prepared.train.entries);
    Mat test_x = embeddings_for_corpus(frozen, prepared.test.entries);

    struct Entry {
        std::string name;
        std::array<Vec, kNumDimensions> test_preds;
    };
    std::vector<Entry> entries{{"decision-tree", {}}, {"random-forest", {}},
                               {"gbdt", {}}};
    std::vector<std::string> outputs;

    for (int d = 0; d < kNumDimensions; ++d) {
        Vec y;
        for (const LabeledEntry& e : prepared.train.entries)
            y.push_back(e.scores[d]);
        TreeConfig tc{cfg.tree_max_depth, cfg.tree_min_leaf};
        RegressionTree tree = fit_tree(train_x, y, tc);
        ForestConfig fc;
        fc.n_trees = cfg.forest_trees;
        fc.feature_fraction = cfg.forest_feature_fraction;
        fc.max_depth = cfg.tree_max_depth;
        fc.min_leaf = cfg.tree_min_leaf;
        fc.seed = module_seed(cfg.seed, SeedDomain::train) + d;
        ForestModel forest = fit_forest(train_x, y, fc);
        GbdtConfig gc{cfg.gbdt_stages, cfg.gbdt_learning_rate, cfg.gbdt_depth,
                      cfg.tree_min_leaf};
        GbdtModel gbdt = fit_gbdt(train_x, y, gc);
        entries[0].test_preds[d] = predict_baseline(tree, test_x);
        entries[1].test_preds[d] = predict_baseline(forest, test_x);
        entries[2].test_preds[d] = predict_baseline(gbdt, test_x);
        std::string dim(to_string(all_dimensions()[d]));
        std::string tree_path =
            (fs::path(cfg.out_dir) / ("baseline_tree_" + dim + ".json")).string();
        guard.track(tree_path);
        save_tree_json(tree, tree_path);
        outputs.push_back(tree_path);
        std::string gbdt_path =
            (fs::path(cfg.out_dir) / ("baseline_gbdt_" + dim + ".json")).string();
        guard.track(gbdt_path);
        save_gbdt_json(gbdt, gbdt_path);
        outputs.push_back(gbdt_path);
        std::string forest_path =
            (fs::path(cfg.out_dir) / ("baseline_forest_" + dim + ".json")).string();
        guard.track(forest_path);
        save_forest_json(forest, forest_path);
        outputs.push_back(forest_path);
    }
    for (const Entry& e : entries) {
        DimensionSeries series;
        for (int d = 0; d < kNumDimensions; ++d) {
            for (const LabeledEntry& t : prepared.test.entries)
                series[d].first.push_back(t.scores[d]);
            series[d].second = e.test_preds[d];
        }
        MetricReport report = evaluate(e.name, prepared.split_hash, series);
        std::string name = e.name;
        std::replace(name.begin(), name.end(), '-', '_');
        std::string path =
            (fs::path(cfg.out_dir) / ("report_" + name + ".json")).string();
        guard.track(path);
        save_report_json(report, path);
        outputs.push_back(path);
    }
    write_run_manifest(cfg, "baseline",
                       {{cfg.corpus_path, hash_file(cfg.corpus_path)}}, outputs);
    guard.commit();
}

void cmd_eval(RunConfig cfg) {
    if (cfg.report_paths.size() < 2)
        throw UsageError("eval: pass at least two --report files");
    OutputGuard guard(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    std::vector<MetricReport> reports;
    std::map<std::string, std::string> inputs;
    for (const std::string& path : cfg.report_paths) {
        reports.push_back(load_report_json(path));
        inputs[path] = hash_file(path);
    }
    ComparisonTable table = compare(reports);
    std::string csv_path = primary_out(cfg, "comparison.csv");
    std::string txt_path = (fs::path(cfg.out_dir) / "comparison.txt").string();
    guard.track(csv_path);
    guard.track(txt_path);
    {
        std::ofstream os(csv_path, std::ios::binary | std::ios::trunc);
        os << render_comparison_csv(table);
    }
    {
        std::ofstream os(txt_path, std::ios::binary | std::ios::trunc);
        os << render_comparison_text(table);
    }
    std::vector<std::string> outputs{csv_path, txt_path};
    bool have_reference = false;
    for (const MetricReport& r : reports)
        if (r.model_name == cfg.reference_model) have_reference = true;
    if (have_reference) {
        double pct = improvement(table, cfg.reference_model);
        std::string imp_path = (fs::path(cfg.out_dir) / "improvement.txt").string();
        guard.track(imp_path);
        std::ofstream os(imp_path, std::ios::binary | std::ios::trunc);
        os << cfg.reference_model << " mean relative MSE reduction vs best "
           << "other model per dimension: " << format_fixed6(pct) << "%\n";
        outputs.push_back(imp_path);
    }
    write_run_manifest(cfg, "eval", inputs, outputs);
    guard.commit();
}

void cmd_migrate(RunConfig cfg) {
    require(!cfg.model_dir.empty(), "model", "migrate");
    require(!cfg.migration_path.empty(), "migration", "migrate");
    OutputGuard guard(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    PerceptionModel model = load_model(cfg.model_dir);
    MigrationSet set = load_migration_set(cfg.migration_path);
    MigrationResult result = migrate(model, set);
    std::string scatter_path = primary_out(cfg, "migration_scatter.csv");
    guard.track(scatter_path);
    write_scatter_csv(scatter_path, result.scatter);
    std::string report_path = (fs::path(cfg.out_dir) / "migration_report.json").string();
    guard.track(report_path);
    ordered_json j;
    j["pooled_r2"] = result.pooled_r2;
    ordered_json dims;
    for (int d = 0; d < kNumDimensions; ++d)
        dims[std::string(to_string(all_dimensions()[d]))] = result.r2_per_dimension[d];
    j["r2_per_dimension"] = dims;
    j["locations"] = set.locations.size();
    std::ofstream os(report_path, std::ios::binary | std::ios::trunc);
    os << j.dump(2) << '\n';
    write_run_manifest(cfg, "migrate",
                       {{cfg.migration_path, hash_file(cfg.migration_path)}},
                       {scatter_path, report_path});
    guard.commit();
}

}  // namespace scenescore
