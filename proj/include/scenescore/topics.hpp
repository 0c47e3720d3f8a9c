#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include "scenescore/corpus.hpp"
#include "scenescore/mat.hpp"
#include "scenescore/rng.hpp"

namespace scenescore {

/// Bag-of-words view of the caption corpus. Vocabulary ids are assigned in
/// lexicographic order; a document concatenates an image's five captions.
struct BowCorpus {
    std::vector<std::string> vocab;
    std::vector<std::vector<int>> docs;  // token id streams
    std::vector<std::string> doc_ids;
    long dropped_empty = 0;

    int vocab_size() const { return static_cast<int>(vocab.size()); }
    std::size_t size() const { return docs.size(); }
};

const std::set<std::string>& default_stopwords();
std::set<std::string> load_stopwords(const std::string& path);

BowCorpus build_bow(std::span<const CaptionDocument> docs,
                    const std::set<std::string>& stopwords,
                    int min_frequency = 1);

/// Collapsed Gibbs state. The count identities
///   sum_w n_kw[k][w] == n_k[k]        for every topic k
///   sum_k n_dk[d][k] == len(doc d)    for every document d
/// hold after initialization and after every sweep.
struct TopicModel {
    int num_topics = 0;
    double alpha = 0.0;
    double beta = 0.0;
    uint64_t seed = 0;
    std::vector<std::vector<int>> assignments;   // per doc, per position
    std::vector<std::vector<long>> n_kw;         // K x V
    std::vector<std::vector<long>> n_dk;         // D x K
    std::vector<long> n_k;                       // K
};

TopicModel init_lda(const BowCorpus& corpus, int num_topics, double alpha,
                    double beta, uint64_t seed, Rng& rng);

/// One full Gibbs sweep: every token's topic resampled from
/// p(z = k) proportional to (n_dk + alpha)(n_kw + beta)/(n_k + V beta)
/// with the token's own count removed.
void lda_sweep(TopicModel& model, const BowCorpus& corpus, Rng& rng);

/// alpha defaults to 50/K and beta to 0.01 when passed as <= 0.
TopicModel fit_lda(const BowCorpus& corpus, int num_topics = 9,
                   double alpha = -1.0, double beta = 0.01,
                   int iterations = 1000, uint64_t seed = 0);

bool counts_consistent(const TopicModel& model, const BowCorpus& corpus);

/// phi[k][w] = (n_kw + beta) / (n_k + V beta); rows sum to 1.
Mat phi(const TopicModel& model);

/// theta[d][k] = (n_dk + alpha) / (len_d + K alpha); rows sum to 1.
Mat theta(const TopicModel& model, const BowCorpus& corpus);

struct TopicSummary {
    struct Entry {
        std::string word;
        double probability;
    };
    std::vector<std::vector<Entry>> topics;  // K rows of n entries each
};

/// Top-n words per topic by phi, ties broken lexicographically.
TopicSummary top_words(const TopicModel& model, const BowCorpus& corpus, int n = 5);

/// Correlation matrix plus degeneracy flags for constant columns.
struct CorrelationResult {
    Mat values;
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::vector<uint8_t> row_degenerate;
    std::vector<uint8_t> col_degenerate;
};

/// Pearson correlation between theta columns across documents (K x K,
/// unit diagonal). Requires at least 3 documents.
CorrelationResult topic_topic_correlation(const TopicModel& model,
                                          const BowCorpus& corpus);

/// Pearson correlation between theta columns and per-dimension q-scores
/// over the documents joined by image id (K x 6). Constant columns are
/// reported as 0 with the degeneracy flag set.
CorrelationResult topic_perception_correlation(const TopicModel& model,
                                               const BowCorpus& corpus,
                                               const QScoreTable& scores);

void write_topic_summary_csv(const std::string& path, const TopicSummary& summary);
void write_correlation_csv(const std::string& path, const CorrelationResult& corr);

}  // namespace scenescore
