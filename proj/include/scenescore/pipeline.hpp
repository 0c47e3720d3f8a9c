#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "scenescore/corpus.hpp"
#include "scenescore/encoder.hpp"

namespace scenescore {

/// Per-module seed fan-out: one global seed, XORed with a fixed constant per
/// module, keeps every stage independently reproducible.
enum class SeedDomain : uint64_t {
    split = 0x53504c4954ull,       // "SPLIT"
    train = 0x545241494eull,       // "TRAIN"
    captioner = 0x43415054ull,     // "CAPT"
    lda = 0x4c4441ull,             // "LDA"
    tsne = 0x54534e45ull,          // "TSNE"
    qscore = 0x5153ull,            // "QS"
};

inline uint64_t module_seed(uint64_t global_seed, SeedDomain domain) {
    return global_seed ^ static_cast<uint64_t>(domain);
}

/// Effective settings for one CLI invocation. Defaults here are the
/// project-wide defaults; a JSON config file overrides them and explicit
/// flags override the file.
struct RunConfig {
    // global
    uint64_t seed = 7;
    bool deterministic = true;
    int threads = 1;
    std::string out_dir = ".";
    std::string out;  // primary artifact override (command-specific)

    // inputs
    std::string votes_path;
    std::string captions_path;
    std::string corpus_path;
    std::string model_dir;
    std::string scores_path;
    std::string embeddings_path;
    std::string embeddings_index_path;
    std::string labels_path;
    std::string pairs_path;
    std::string features_path;
    std::string captioner_dir;
    std::string migration_path;
    std::string hidden_path;
    std::string hidden_index_path;
    std::string stopwords_path;
    std::vector<std::string> report_paths;

    // train
    double test_fraction = 0.1;
    int batch_size = 32;
    double learning_rate = 2e-5;
    int epochs = 20;
    int hidden = 64;
    int max_seq_length = 128;
    int min_frequency = 1;
    bool unfreeze_embedding = false;
    bool unfreeze_positional = false;
    int only_dimension = -1;

    // captioner
    int cap_epochs = 400;
    double cap_learning_rate = 0.02;
    int cap_embed_size = 16;
    int cap_hidden_size = 24;
    bool cap_adam = true;
    int cap_max_len = 16;
    bool caption_group_five = false;

    // topics
    int num_topics = 9;
    double lda_alpha = -1.0;  // <= 0 -> 50/K
    double lda_beta = 0.01;
    int lda_iterations = 1000;
    int bow_min_frequency = 1;
    int top_n_words = 5;

    // cluster
    double perplexity = 30.0;
    int tsne_iterations = 1000;
    int min_cluster_size = 15;
    int min_samples = 10;
    bool cluster_raw = false;

    // baseline
    int tree_max_depth = 12;
    int tree_min_leaf = 5;
    int forest_trees = 100;
    double forest_feature_fraction = 1.0;
    int gbdt_stages = 100;
    double gbdt_learning_rate = 0.1;
    int gbdt_depth = 3;

    // eval
    std::string reference_model = "token-head";
};

/// Applies a JSON config file ({"seed": ..., "train": {...}, ...}) onto the
/// defaults. Unknown keys raise UsageError.
void apply_config_file(RunConfig& cfg, const std::string& path);

/// Writes <out_dir>/<command>.manifest.json describing the run: command,
/// effective config, seed, input hashes, output names. No timestamps, so
/// reruns are byte-identical.
void write_run_manifest(const RunConfig& cfg, const std::string& command,
                        const std::map<std::string, std::string>& inputs,
                        const std::vector<std::string>& outputs);

/// Removes tracked files when a command fails part-way.
class OutputGuard {
public:
    ~OutputGuard();
    void track(const std::string& path);
    std::string track_in_dir(const std::string& name) const;
    void commit();
    const std::vector<std::string>& files() const { return files_; }

    explicit OutputGuard(std::string out_dir) : out_dir_(std::move(out_dir)) {}

private:
    std::string out_dir_;
    std::vector<std::string> files_;
    bool committed_ = false;
};

// command implementations (throw DataError/NumericError/UsageError)
void cmd_ingest(RunConfig cfg);
void cmd_score(RunConfig cfg);
void cmd_train_captioner(RunConfig cfg);
void cmd_caption(RunConfig cfg);
void cmd_train(RunConfig cfg);
void cmd_predict(RunConfig cfg);
void cmd_embed(RunConfig cfg);
void cmd_cluster(RunConfig cfg);
void cmd_topics(RunConfig cfg);
void cmd_baseline(RunConfig cfg);
void cmd_eval(RunConfig cfg);
void cmd_migrate(RunConfig cfg);

/// Shared by train and baseline: same tokenizer, same seeded encoder init,
/// same split, so the baseline features are exactly the head's frozen
/// starting representation.
struct PreparedCorpus {
    LabeledCorpus train;
    LabeledCorpus test;
    std::string split_hash;
};
PreparedCorpus prepare_split(const LabeledCorpus& corpus, double test_fraction,
                             uint64_t seed);

}  // namespace scenescore
