#include "scenescore/topics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "scenescore/encoder.hpp"

namespace scenescore {

const std::set<std::string>& default_stopwords() {
    // mirror of data/stopwords_en.txt; keep the two in sync
    static const std::set<std::string> words = {
        "a", "about", "above", "after", "again", "against", "all", "am", "an",
        "and", "any", "are", "as", "at", "be", "because", "been", "before",
        "being", "below", "between", "both", "but", "by", "can", "did", "do",
        "does", "doing", "down", "during", "each", "few", "for", "from",
        "further", "had", "has", "have", "having", "he", "her", "here", "hers",
        "herself", "him", "himself", "his", "how", "i", "if", "in", "into",
        "is", "it", "its", "itself", "just", "me", "more", "most", "my",
        "myself", "no", "nor", "not", "now", "of", "off", "on", "once", "only",
        "or", "other", "our", "ours", "ourselves", "out", "over", "own", "s",
        "same", "she", "should", "so", "some", "such", "t", "than", "that",
        "the", "their", "theirs", "them", "themselves", "then", "there",
        "these", "they", "this", "those", "through", "to", "too", "under",
        "until", "up", "very", "was", "we", "were", "what", "when", "where",
        "which", "while", "who", "whom", "why", "will", "with", "you", "your",
        "yours", "yourself", "yourselves"};
    return words;
}

std::set<std::string> load_stopwords(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open stopword list: " + path);
    std::set<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
            line.pop_back();
        if (!line.empty() && line[0] != '#') words.insert(line);
    }
    return words;
}

BowCorpus build_bow(std::span<const CaptionDocument> docs,
                    const std::set<std::string>& stopwords, int min_frequency) {
    TokenizerRules rules;  // vocabulary-free normalization
    std::map<std::string, long> freq;
    std::vector<std::vector<std::string>> doc_words;
    doc_words.reserve(docs.size());
    for (const CaptionDocument& doc : docs) {
        std::vector<std::string> words;
        for (const std::string& cap : doc.captions)
            for (std::string& w : normalize_words(rules, cap))
                if (!stopwords.count(w)) words.push_back(std::move(w));
        for (const std::string& w : words) freq[w]++;
        doc_words.push_back(std::move(words));
    }
    BowCorpus corpus;
    std::map<std::string, int> ids;
    for (const auto& [w, n] : freq) {
        if (n < min_frequency) continue;
        ids[w] = static_cast<int>(corpus.vocab.size());
        corpus.vocab.push_back(w);
    }
    for (std::size_t i = 0; i < docs.size(); ++i) {
        std::vector<int> stream;
        for (const std::string& w : doc_words[i]) {
            auto it = ids.find(w);
            if (it != ids.end()) stream.push_back(it->second);
        }
        if (stream.empty()) {
            corpus.dropped_empty++;
            continue;
        }
        corpus.docs.push_back(std::move(stream));
        corpus.doc_ids.push_back(docs[i].image_id);
    }
    if (corpus.docs.empty())
        throw DataError("build_bow: corpus is empty after filtering");
    return corpus;
}

TopicModel init_lda(const BowCorpus& corpus, int num_topics, double alpha,
                    double beta, uint64_t seed, Rng& rng) {
    if (num_topics < 2) throw DataError("fit_lda: need at least 2 topics");
    if (corpus.docs.empty()) throw DataError("fit_lda: empty corpus");
    TopicModel m;
    m.num_topics = num_topics;
    m.alpha = alpha;
    m.beta = beta;
    m.seed = seed;
    const int V = corpus.vocab_size();
    m.n_kw.assign(num_topics, std::vector<long>(V, 0));
    m.n_dk.assign(corpus.size(), std::vector<long>(num_topics, 0));
    m.n_k.assign(num_topics, 0);
    m.assignments.resize(corpus.size());
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        const auto& doc = corpus.docs[d];
        m.assignments[d].resize(doc.size());
        for (std::size_t i = 0; i < doc.size(); ++i) {
            int k = static_cast<int>(rng.below(num_topics));
            m.assignments[d][i] = k;
            m.n_kw[k][doc[i]]++;
            m.n_dk[d][k]++;
            m.n_k[k]++;
        }
    }
    return m;
}

void lda_sweep(TopicModel& m, const BowCorpus& corpus, Rng& rng) {
    const int K = m.num_topics;
    const double vbeta = corpus.vocab_size() * m.beta;
    std::vector<double> weights(K);
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        const auto& doc = corpus.docs[d];
        auto& z = m.assignments[d];
        auto& ndk = m.n_dk[d];
        for (std::size_t i = 0; i < doc.size(); ++i) {
            const int w = doc[i];
            const int old_k = z[i];
            m.n_kw[old_k][w]--;
            ndk[old_k]--;
            m.n_k[old_k]--;
            double total = 0.0;
            for (int k = 0; k < K; ++k) {
                double p = (ndk[k] + m.alpha) * (m.n_kw[k][w] + m.beta) /
                           (m.n_k[k] + vbeta);
                total += p;
                weights[k] = total;
            }
            double u = rng.uniform() * total;
            int new_k = K - 1;
            for (int k = 0; k < K; ++k) {
                if (u < weights[k]) {
                    new_k = k;
                    break;
                }
            }
            z[i] = new_k;
            m.n_kw[new_k][w]++;
            ndk[new_k]++;
            m.n_k[new_k]++;
        }
    }
}

TopicModel fit_lda(const BowCorpus& corpus, int num_topics, double alpha,
                   double beta, int iterations, uint64_t seed) {
    if (alpha <= 0.0) alpha = 50.0 / num_topics;
    if (beta <= 0.0) beta = 0.01;
    Rng rng(seed);
    TopicModel m = init_lda(corpus, num_topics, alpha, beta, seed, rng);
    for (int it = 0; it < iterations; ++it) lda_sweep(m, corpus, rng);
    return m;
}

bool counts_consistent(const TopicModel& m, const BowCorpus& corpus) {
    for (int k = 0; k < m.num_topics; ++k) {
        long sum = 0;
        for (long c : m.n_kw[k]) {
            if (c < 0) return false;
            sum += c;
        }
        if (sum != m.n_k[k]) return false;
    }
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        long sum = 0;
        for (long c : m.n_dk[d]) {
            if (c < 0) return false;
            sum += c;
        }
        if (sum != static_cast<long>(corpus.docs[d].size())) return false;
    }
    long total = 0;
    for (long c : m.n_k) total += c;
    long expected = 0;
    for (const auto& doc : corpus.docs) expected += static_cast<long>(doc.size());
    return total == expected;
}

Mat phi(const TopicModel& m) {
    const int V = m.n_kw.empty() ? 0 : static_cast<int>(m.n_kw[0].size());
    Mat out(m.num_topics, V);
    for (int k = 0; k < m.num_topics; ++k) {
        double denom = m.n_k[k] + V * m.beta;
        for (int w = 0; w < V; ++w) out(k, w) = (m.n_kw[k][w] + m.beta) / denom;
    }
    return out;
}

Mat theta(const TopicModel& m, const BowCorpus& corpus) {
    Mat out(corpus.size(), m.num_topics);
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        double denom = static_cast<double>(corpus.docs[d].size()) +
                       m.num_topics * m.alpha;
        for (int k = 0; k < m.num_topics; ++k)
            out(d, k) = (m.n_dk[d][k] + m.alpha) / denom;
    }
    return out;
}

TopicSummary top_words(const TopicModel& m, const BowCorpus& corpus, int n) {
    if (n > corpus.vocab_size())
        throw DataError("top_words: n exceeds the vocabulary size");
    Mat probs = phi(m);
    TopicSummary summary;
    summary.topics.resize(m.num_topics);
    for (int k = 0; k < m.num_topics; ++k) {
        std::vector<int> order(corpus.vocab_size());
        for (int w = 0; w < corpus.vocab_size(); ++w) order[w] = w;
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (probs(k, a) != probs(k, b)) return probs(k, a) > probs(k, b);
            return corpus.vocab[a] < corpus.vocab[b];
        });
        for (int r = 0; r < n; ++r)
            summary.topics[k].push_back({corpus.vocab[order[r]], probs(k, order[r])});
    }
    return summary;
}

namespace {

/// Pearson correlation; returns false when either side has zero variance.
bool pearson_pair(const Vec& a, const Vec& b, double& out) {
    const std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) {
        out = 0.0;
        return false;
    }
    out = sab / std::sqrt(saa * sbb);
    return true;
}

}  // namespace

CorrelationResult topic_topic_correlation(const TopicModel& m,
                                          const BowCorpus& corpus) {
    if (corpus.size() < 3)
        throw DataError("topic_topic_correlation: need at least 3 documents");
    Mat th = theta(m, corpus);
    const int K = m.num_topics;
    std::vector<Vec> cols(K, Vec(corpus.size()));
    for (int k = 0; k < K; ++k)
        for (std::size_t d = 0; d < corpus.size(); ++d) cols[k][d] = th(d, k);
    CorrelationResult res;
    res.values = Mat(K, K);
    res.row_degenerate.assign(K, 0);
    res.col_degenerate.assign(K, 0);
    for (int k = 0; k < K; ++k) {
        res.row_labels.push_back("topic_" + std::to_string(k));
        res.col_labels.push_back("topic_" + std::to_string(k));
    }
    for (int a = 0; a < K; ++a) {
        res.values(a, a) = 1.0;
        for (int b = a + 1; b < K; ++b) {
            double r = 0.0;
            if (!pearson_pair(cols[a], cols[b], r)) {
                res.row_degenerate[a] = res.col_degenerate[b] = 1;
            }
            res.values(a, b) = r;
            res.values(b, a) = r;
        }
    }
    return res;
}

CorrelationResult topic_perception_correlation(const TopicModel& m,
                                               const BowCorpus& corpus,
                                               const QScoreTable& scores) {
    Mat th = theta(m, corpus);
    // documents with a full six-dimension score row
    std::vector<std::size_t> keep;
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        bool complete = true;
        for (Dimension dim : all_dimensions())
            if (!scores.at(dim).count(corpus.doc_ids[d])) {
                complete = false;
                break;
            }
        if (complete) keep.push_back(d);
    }
    if (keep.empty())
        throw DataError("topic_perception_correlation: no document joins to the score table");
    const int K = m.num_topics;
    CorrelationResult res;
    res.values = Mat(K, kNumDimensions);
    res.row_degenerate.assign(K, 0);
    res.col_degenerate.assign(kNumDimensions, 0);
    for (int k = 0; k < K; ++k)
        res.row_labels.push_back("topic_" + std::to_string(k));
    for (Dimension dim : all_dimensions())
        res.col_labels.push_back(std::string(to_string(dim)));
    for (int k = 0; k < K; ++k) {
        Vec col(keep.size());
        for (std::size_t i = 0; i < keep.size(); ++i) col[i] = th(keep[i], k);
        for (int dim = 0; dim < kNumDimensions; ++dim) {
            Vec q(keep.size());
            for (std::size_t i = 0; i < keep.size(); ++i)
                q[i] = scores.by_dimension[dim].at(corpus.doc_ids[keep[i]]);
            double r = 0.0;
            if (!pearson_pair(col, q, r)) {
                res.row_degenerate[k] = 1;
                res.col_degenerate[dim] = 1;
            }
            res.values(k, dim) = r;
        }
    }
    return res;
}

void write_topic_summary_csv(const std::string& path, const TopicSummary& summary) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "topic_id,rank,word,probability\n";
    for (std::size_t k = 0; k < summary.topics.size(); ++k)
        for (std::size_t r = 0; r < summary.topics[k].size(); ++r)
            out << k << ',' << (r + 1) << ',' << summary.topics[k][r].word << ','
                << format_fixed6(summary.topics[k][r].probability) << '\n';
    if (!out) throw DataError("write failed: " + path);
}

void write_correlation_csv(const std::string& path, const CorrelationResult& corr) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "";
    for (const std::string& c : corr.col_labels) out << ',' << c;
    out << '\n';
    for (std::size_t r = 0; r < corr.values.rows(); ++r) {
        out << corr.row_labels[r];
        for (std::size_t c = 0; c < corr.values.cols(); ++c)
            out << ',' << format_fixed6(corr.values(r, c));
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace scenescore
