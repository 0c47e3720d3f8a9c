// scenescore: crowd-vote scoring, caption regression, topic mining, and
// cluster analysis for street-scene perception data.

#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scenescore/common.hpp"
#include "scenescore/pipeline.hpp"

namespace {

using scenescore::RunConfig;

/// One subcommand: options bind to fields of `parsed`; when --config is
/// given the file is applied first and explicitly-passed flags replay on
/// top, so precedence is flag > file > default.
struct Command {
    CLI::App* app = nullptr;
    RunConfig parsed;
    std::string config_path;
    std::function<void(RunConfig)> run;

    struct Binding {
        CLI::Option* option;
        std::function<void(RunConfig&, const RunConfig&)> copy;
    };
    std::vector<Binding> bindings;

    template <class T>
    CLI::Option* opt(const std::string& flag, T RunConfig::*field,
                     const std::string& help) {
        CLI::Option* o = app->add_option(flag, parsed.*field, help);
        bindings.push_back({o, [field](RunConfig& dst, const RunConfig& src) {
                                dst.*field = src.*field;
                            }});
        return o;
    }

    CLI::Option* flag(const std::string& name, bool RunConfig::*field,
                      const std::string& help) {
        CLI::Option* o = app->add_flag(name, parsed.*field, help);
        bindings.push_back({o, [field](RunConfig& dst, const RunConfig& src) {
                                dst.*field = src.*field;
                            }});
        return o;
    }

    RunConfig effective() const {
        if (config_path.empty()) return parsed;
        RunConfig cfg;
        scenescore::apply_config_file(cfg, config_path);
        for (const Binding& b : bindings)
            if (b.option->count() > 0) b.copy(cfg, parsed);
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"street-scene perception pipeline"};
    app.require_subcommand(1);
    std::vector<std::unique_ptr<Command>> commands;

    auto make = [&](const std::string& name, const std::string& help,
                    void (*fn)(RunConfig)) -> Command& {
        auto cmd = std::make_unique<Command>();
        cmd->app = app.add_subcommand(name, help);
        cmd->run = fn;
        cmd->app->add_option("--config", cmd->config_path,
                             "JSON config file (explicit flags override it)");
        cmd->opt("--seed", &RunConfig::seed, "global seed (per-module seeds fan out from it)");
        cmd->opt("--threads", &RunConfig::threads, "module-internal parallelism where safe");
        cmd->flag("--deterministic,!--no-deterministic", &RunConfig::deterministic,
                  "fixed reduction order (default: on)");
        cmd->opt("--out-dir", &RunConfig::out_dir, "output directory");
        cmd->opt("--out", &RunConfig::out, "primary artifact path override");
        Command* raw = cmd.get();
        cmd->app->callback([raw]() { raw->run(raw->effective()); });
        commands.push_back(std::move(cmd));
        return *commands.back();
    };

    {
        Command& c = make("ingest", "join votes and captions into a labeled corpus",
                          scenescore::cmd_ingest);
        c.opt("--votes", &RunConfig::votes_path, "votes.csv");
        c.opt("--captions", &RunConfig::captions_path, "captions.jsonl");
    }
    {
        Command& c = make("score", "convert pairwise votes into per-image q-scores",
                          scenescore::cmd_score);
        c.opt("--votes", &RunConfig::votes_path, "votes.csv");
    }
    {
        Command& c = make("train-captioner", "train the toy caption decoder",
                          scenescore::cmd_train_captioner);
        c.opt("--pairs", &RunConfig::pairs_path,
              "JSONL training pairs {feature, reference}");
        c.opt("--epochs", &RunConfig::cap_epochs, "training epochs");
        c.opt("--learning-rate", &RunConfig::cap_learning_rate, "step size");
        c.opt("--embed-size", &RunConfig::cap_embed_size, "token embedding width");
        c.opt("--hidden-size", &RunConfig::cap_hidden_size, "LSTM hidden width");
        c.flag("--adam,!--sgd", &RunConfig::cap_adam, "optimizer (default adam)");
    }
    {
        Command& c = make("caption", "greedy-decode captions from image features",
                          scenescore::cmd_caption);
        c.opt("--captioner", &RunConfig::captioner_dir, "trained captioner directory");
        c.opt("--features", &RunConfig::features_path,
              "JSONL features {image_id, feature}");
        c.opt("--max-len", &RunConfig::cap_max_len, "decode length cap");
        c.flag("--group-five", &RunConfig::caption_group_five,
               "emit captions.jsonl with five captions per image");
    }
    {
        Command& c = make("train", "fine-tune the perception heads",
                          scenescore::cmd_train);
        c.opt("--corpus", &RunConfig::corpus_path, "labeled corpus JSONL");
        c.opt("--test-fraction", &RunConfig::test_fraction, "held-out fraction");
        c.opt("--batch-size", &RunConfig::batch_size, "minibatch size");
        c.opt("--learning-rate", &RunConfig::learning_rate, "Adam step size");
        c.opt("--epochs", &RunConfig::epochs, "training epochs");
        c.opt("--hidden", &RunConfig::hidden, "encoder hidden size");
        c.opt("--max-seq-length", &RunConfig::max_seq_length, "sequence length cap");
        c.opt("--min-frequency", &RunConfig::min_frequency, "vocabulary threshold");
        c.flag("--unfreeze-embedding", &RunConfig::unfreeze_embedding,
               "also train the embedding table");
        c.flag("--unfreeze-positional", &RunConfig::unfreeze_positional,
               "also train the positional table");
        c.opt("--dimension", &RunConfig::only_dimension,
              "train a single dimension (0-5; default all six jointly)");
    }
    {
        Command& c = make("predict", "score caption documents with a trained model",
                          scenescore::cmd_predict);
        c.opt("--model", &RunConfig::model_dir, "model directory");
        c.opt("--captions", &RunConfig::captions_path, "captions.jsonl");
    }
    {
        Command& c = make("embed", "pool per-image sentence embeddings",
                          scenescore::cmd_embed);
        c.opt("--corpus", &RunConfig::corpus_path, "labeled corpus JSONL");
        c.opt("--model", &RunConfig::model_dir, "model directory");
        c.opt("--hidden", &RunConfig::hidden_path,
              "externally computed hidden states (PMTE)");
        c.opt("--hidden-index", &RunConfig::hidden_index_path,
              "sidecar index for --hidden");
    }
    {
        Command& c = make("cluster", "t-SNE to 2-D plus HDBSCAN labels",
                          scenescore::cmd_cluster);
        c.opt("--embeddings", &RunConfig::embeddings_path, "embeddings.pmte");
        c.opt("--embeddings-index", &RunConfig::embeddings_index_path,
              "embeddings.index.jsonl");
        c.opt("--perplexity", &RunConfig::perplexity, "t-SNE perplexity");
        c.opt("--iterations", &RunConfig::tsne_iterations, "t-SNE iterations");
        c.opt("--min-cluster-size", &RunConfig::min_cluster_size, "HDBSCAN limit");
        c.opt("--min-samples", &RunConfig::min_samples, "HDBSCAN core size");
        c.flag("--raw", &RunConfig::cluster_raw,
               "cluster raw embeddings instead of the 2-D reduction");
    }
    {
        Command& c = make("topics", "mine latent topics from captions",
                          scenescore::cmd_topics);
        c.opt("--captions", &RunConfig::captions_path, "captions.jsonl");
        c.opt("--corpus", &RunConfig::corpus_path, "labeled corpus JSONL (alternative)");
        c.opt("--scores", &RunConfig::scores_path,
              "scores.csv for topic-perception correlations");
        c.opt("--labels", &RunConfig::labels_path,
              "embedding2d.csv; sets K to the discovered cluster count");
        c.opt("--k", &RunConfig::num_topics, "number of topics");
        c.opt("--alpha", &RunConfig::lda_alpha, "Dirichlet alpha (<=0: 50/K)");
        c.opt("--beta", &RunConfig::lda_beta, "Dirichlet beta");
        c.opt("--iterations", &RunConfig::lda_iterations, "Gibbs sweeps");
        c.opt("--min-frequency", &RunConfig::bow_min_frequency, "vocabulary threshold");
        c.opt("--top-words", &RunConfig::top_n_words, "summary words per topic");
        c.opt("--stopwords", &RunConfig::stopwords_path,
              "stopword list file (default: built-in English list)");
    }
    {
        Command& c = make("baseline", "tree-ensemble baselines on frozen embeddings",
                          scenescore::cmd_baseline);
        c.opt("--corpus", &RunConfig::corpus_path, "labeled corpus JSONL");
        c.opt("--test-fraction", &RunConfig::test_fraction, "held-out fraction");
        c.opt("--hidden", &RunConfig::hidden, "encoder hidden size");
        c.opt("--max-seq-length", &RunConfig::max_seq_length, "sequence length cap");
        c.opt("--min-frequency", &RunConfig::min_frequency, "vocabulary threshold");
        c.opt("--tree-max-depth", &RunConfig::tree_max_depth, "CART depth cap");
        c.opt("--tree-min-leaf", &RunConfig::tree_min_leaf, "CART leaf minimum");
        c.opt("--forest-trees", &RunConfig::forest_trees, "forest size");
        c.opt("--forest-feature-fraction", &RunConfig::forest_feature_fraction,
              "per-split feature fraction");
        c.opt("--gbdt-stages", &RunConfig::gbdt_stages, "boosting stages");
        c.opt("--gbdt-learning-rate", &RunConfig::gbdt_learning_rate, "shrinkage");
        c.opt("--gbdt-depth", &RunConfig::gbdt_depth, "stage tree depth");
    }
    {
        Command& c = make("eval", "compare metric reports on one test split",
                          scenescore::cmd_eval);
        c.opt("--report", &RunConfig::report_paths,
              "metric report JSON (repeatable)");
        c.opt("--reference", &RunConfig::reference_model,
              "model name for the improvement summary");
    }
    {
        Command& c = make("migrate", "apply a model to new locations with manual ratings",
                          scenescore::cmd_migrate);
        c.opt("--model", &RunConfig::model_dir, "model directory");
        c.opt("--migration", &RunConfig::migration_path,
              "migration JSONL (header declares the rating scale)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;  // usage error
    } catch (const scenescore::UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const scenescore::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const scenescore::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
