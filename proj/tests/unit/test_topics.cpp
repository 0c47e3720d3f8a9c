#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "scenescore/topics.hpp"

using namespace scenescore;

namespace {

CaptionDocument doc5(const std::string& id, const std::string& text) {
    return {id, {text, text, text, text, text}};
}

/// corpus whose five captions repeat one word list per doc
std::vector<CaptionDocument> docs_from_words(
    const std::vector<std::vector<std::string>>& word_lists) {
    std::vector<CaptionDocument> docs;
    for (std::size_t i = 0; i < word_lists.size(); ++i) {
        std::string text;
        for (const auto& w : word_lists[i]) {
            if (!text.empty()) text += ' ';
            text += w;
        }
        docs.push_back(doc5("img" + std::to_string(i), text));
    }
    return docs;
}

}  // namespace

TEST_CASE("build_bow vocabulary and counts") {
    auto docs = docs_from_words({{"road", "tree"}, {"road", "car"}});
    BowCorpus bow = build_bow(docs, {}, 1);
    CHECK(bow.vocab == std::vector<std::string>{"car", "road", "tree"});
    CHECK(bow.size() == 2);
    // each caption repeats 5x
    CHECK(bow.docs[0].size() == 10);

    // stopwords never reach the vocabulary
    auto with_stop = docs_from_words({{"the", "road"}, {"the", "tree"}});
    BowCorpus filtered = build_bow(with_stop, default_stopwords(), 1);
    for (const auto& w : filtered.vocab) CHECK(w != "the");

    // empty corpus after filtering errors
    auto only_stop = docs_from_words({{"the", "a", "of"}});
    CHECK_THROWS_AS(build_bow(only_stop, default_stopwords(), 1), DataError);
}

TEST_CASE("build_bow token totals match a recount") {
    auto docs = docs_from_words(
        {{"road", "tree", "the"}, {"car", "of", "car"}, {"tree", "road"}});
    BowCorpus bow = build_bow(docs, default_stopwords(), 1);
    long total = 0;
    for (const auto& d : bow.docs) total += long(d.size());
    // pre-filter: 5 * (3 + 3 + 2) = 40 tokens; removed: 5 * (1 + 1) = 10
    CHECK(total == 30);
}

TEST_CASE("lda: one-document one-word corpus smoothing arithmetic") {
    auto docs = std::vector<CaptionDocument>{
        {"solo", {"word", "word", "word", "word", "word"}}};
    BowCorpus bow = build_bow(docs, {}, 1);
    REQUIRE(bow.vocab_size() == 1);
    TopicModel m = fit_lda(bow, 2, 0.5, 0.01, 10, 3);
    Mat p = phi(m);
    // with V = 1 every topic's single-word probability is exactly 1
    CHECK(p(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(counts_consistent(m, bow));
}

TEST_CASE("lda: zero iterations equals the seeded initialization") {
    auto docs = docs_from_words({{"a1", "b2"}, {"c3", "d4"}, {"a1", "c3"}});
    BowCorpus bow = build_bow(docs, {}, 1);
    TopicModel a = fit_lda(bow, 3, 1.0, 0.01, 0, 99);
    Rng rng(99);
    TopicModel b = init_lda(bow, 3, 1.0, 0.01, 99, rng);
    CHECK(a.assignments == b.assignments);
    CHECK(a.n_k == b.n_k);
}

TEST_CASE("lda determinism and per-sweep count conservation") {
    auto docs = docs_from_words({{"w0", "w1", "w2"}, {"w3", "w4"}, {"w0", "w4"},
                                 {"w2", "w3", "w5"}});
    BowCorpus bow = build_bow(docs, {}, 1);
    Rng r1(5), r2(5);
    TopicModel a = init_lda(bow, 3, 1.0, 0.01, 5, r1);
    TopicModel b = init_lda(bow, 3, 1.0, 0.01, 5, r2);
    for (int sweep = 0; sweep < 25; ++sweep) {
        lda_sweep(a, bow, r1);
        lda_sweep(b, bow, r2);
        REQUIRE(counts_consistent(a, bow));
        CHECK(a.assignments == b.assignments);
    }
}

TEST_CASE("lda recovers three disjoint-vocabulary topics") {
    Rng rng(7);
    std::vector<std::vector<std::string>> word_lists;
    std::vector<std::vector<std::string>> topic_words(3);
    for (int t = 0; t < 3; ++t)
        for (int w = 0; w < 8; ++w)
            topic_words[t].push_back("t" + std::to_string(t) + "w" + std::to_string(w));
    for (int d = 0; d < 120; ++d) {
        int t = int(rng.below(3));
        std::vector<std::string> words;
        for (int i = 0; i < 6; ++i)
            words.push_back(topic_words[t][rng.below(8)]);
        word_lists.push_back(words);
    }
    BowCorpus bow = build_bow(docs_from_words(word_lists), {}, 1);
    TopicModel m = fit_lda(bow, 3, 50.0 / 3.0, 0.01, 200, 11);
    TopicSummary summary = top_words(m, bow, 5);
    // each fitted topic's top-5 words should come from one generator
    std::vector<int> claimed;
    for (int k = 0; k < 3; ++k) {
        std::array<int, 3> hits{0, 0, 0};
        for (const auto& e : summary.topics[k])
            for (int t = 0; t < 3; ++t)
                if (e.word.rfind("t" + std::to_string(t) + "w", 0) == 0) hits[t]++;
        int best = int(std::max_element(hits.begin(), hits.end()) - hits.begin());
        CHECK(hits[best] >= 4);
        claimed.push_back(best);
    }
    std::sort(claimed.begin(), claimed.end());
    CHECK(claimed == std::vector<int>{0, 1, 2});  // a permutation, not collapse
}

TEST_CASE("phi and theta rows sum to one") {
    auto docs = docs_from_words({{"x", "y", "z"}, {"y", "z"}, {"x", "x"}});
    BowCorpus bow = build_bow(docs, {}, 1);
    TopicModel m = fit_lda(bow, 4, 2.0, 0.05, 30, 21);
    Mat p = phi(m);
    for (std::size_t k = 0; k < p.rows(); ++k) {
        double s = 0.0;
        for (std::size_t w = 0; w < p.cols(); ++w) s += p(k, w);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
    Mat th = theta(m, bow);
    for (std::size_t d = 0; d < th.rows(); ++d) {
        double s = 0.0;
        for (std::size_t k = 0; k < th.cols(); ++k) s += th(d, k);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("top_words ordering, ties, and errors") {
    // construct a model directly: K=1 corpus of one repeated word plus a
    // rarer one
    auto docs = docs_from_words({{"alpha", "alpha", "alpha", "beta"}});
    BowCorpus bow = build_bow(docs, {}, 1);
    TopicModel m;
    m.num_topics = 1;
    m.alpha = 1.0;
    m.beta = 0.01;
    m.n_kw = {{15, 5}};  // ids are lexicographic: alpha=15, beta=5
    m.n_dk = {{20}};
    m.n_k = {20};
    m.assignments = {std::vector<int>(20, 0)};
    TopicSummary s = top_words(m, bow, 2);
    CHECK(s.topics[0][0].word == "alpha");
    double expect = (15.0 + 0.01) / (20.0 + 2 * 0.01);
    CHECK(s.topics[0][0].probability == doctest::Approx(expect).epsilon(1e-12));
    // 1 - (V-1)*beta/(n + V*beta) with all mass on one word
    TopicModel solo;
    solo.num_topics = 1;
    solo.beta = 0.01;
    solo.n_kw = {{20, 0}};
    solo.n_dk = {{20}};
    solo.n_k = {20};
    TopicSummary s2 = top_words(solo, bow, 1);
    CHECK(s2.topics[0][0].probability ==
          doctest::Approx(1.0 - 1 * 0.01 / (20.0 + 2 * 0.01)).epsilon(1e-9));

    // ties break lexicographically
    TopicModel tie;
    tie.num_topics = 1;
    tie.beta = 0.01;
    tie.n_kw = {{7, 7}};
    tie.n_dk = {{14}};
    tie.n_k = {14};
    TopicSummary s3 = top_words(tie, bow, 2);
    CHECK(s3.topics[0][0].word == "alpha");
    CHECK(s3.topics[0][1].word == "beta");

    CHECK_THROWS_AS(top_words(m, bow, 3), DataError);  // n > V

    // top-1 equals an argmax recomputation
    Mat p = phi(m);
    int argmax = 0;
    for (int w = 1; w < bow.vocab_size(); ++w)
        if (p(0, w) > p(0, argmax)) argmax = w;
    CHECK(s.topics[0][0].word == bow.vocab[argmax]);
}

namespace {

/// TopicModel with prescribed document-topic counts (for correlation tests).
TopicModel model_with_ndk(const std::vector<std::vector<long>>& ndk, double alpha) {
    TopicModel m;
    m.num_topics = int(ndk[0].size());
    m.alpha = alpha;
    m.beta = 0.01;
    m.n_dk = ndk;
    m.n_kw.assign(m.num_topics, std::vector<long>(2, 0));
    m.n_k.assign(m.num_topics, 0);
    return m;
}

BowCorpus corpus_with_lengths(const std::vector<long>& lengths) {
    std::vector<std::vector<std::string>> lists;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        // bow repeats each caption 5x, so ask for length/5 words
        std::vector<std::string> words;
        for (long w = 0; w < lengths[i] / 5; ++w)
            words.push_back(w % 2 == 0 ? "alpha" : "beta");
        lists.push_back(words);
    }
    return build_bow(docs_from_words(lists), {}, 1);
}

double pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / b.size();
    double saa = 0, sbb = 0, sab = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("topic correlations") {
    // 4 docs, 3 topics, doc length 10 each
    BowCorpus bow = corpus_with_lengths({10, 10, 10, 10});
    TopicModel m = model_with_ndk(
        {{6, 2, 2}, {2, 6, 2}, {1, 1, 8}, {5, 4, 1}}, 0.5);
    CorrelationResult tt = topic_topic_correlation(m, bow);
    for (int k = 0; k < 3; ++k) CHECK(tt.values(k, k) == 1.0);
    // oracle check against theta columns
    Mat th = theta(m, bow);
    std::vector<double> c0(4), c1(4);
    for (int d = 0; d < 4; ++d) {
        c0[d] = th(d, 0);
        c1[d] = th(d, 1);
    }
    CHECK(tt.values(0, 1) ==
          doctest::Approx(pearson_oracle(c0, c1)).epsilon(1e-12));
    CHECK(tt.values(0, 1) == tt.values(1, 0));

    // identical columns correlate at exactly 1
    TopicModel twin = model_with_ndk(
        {{3, 3, 4}, {5, 5, 0}, {1, 1, 8}, {2, 2, 6}}, 0.5);
    CorrelationResult tt2 = topic_topic_correlation(twin, bow);
    CHECK(tt2.values(0, 1) == doctest::Approx(1.0).epsilon(1e-12));

    // fewer than 3 documents errors
    BowCorpus tiny = corpus_with_lengths({10, 10});
    TopicModel m2 = model_with_ndk({{5, 5, 0}, {2, 2, 6}}, 0.5);
    CHECK_THROWS_AS(topic_topic_correlation(m2, tiny), DataError);
}

TEST_CASE("topic-perception correlations") {
    BowCorpus bow = corpus_with_lengths({10, 10, 10, 10});
    TopicModel m = model_with_ndk(
        {{6, 2, 2}, {2, 6, 2}, {1, 1, 8}, {5, 4, 1}}, 0.5);
    QScoreTable scores;
    Mat th = theta(m, bow);
    for (std::size_t d = 0; d < bow.size(); ++d)
        for (int dim = 0; dim < kNumDimensions; ++dim)
            scores.by_dimension[dim][bow.doc_ids[d]] =
                dim == 0 ? 2.0 + 4.0 * th(d, 0)  // affine in theta column 0
                         : 5.0;                  // constant
    CorrelationResult tp = topic_perception_correlation(m, bow, scores);
    CHECK(tp.values(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    // constant scores: reported as 0 with the degeneracy flag
    CHECK(tp.values(0, 1) == 0.0);
    CHECK(tp.col_degenerate[1] == 1);
    CHECK(tp.col_degenerate[0] == 0);

    // oracle on a non-trivial pair
    std::vector<double> c2(4), q0(4);
    for (int d = 0; d < 4; ++d) {
        c2[d] = th(d, 2);
        q0[d] = scores.by_dimension[0][bow.doc_ids[d]];
    }
    CHECK(tp.values(2, 0) ==
          doctest::Approx(pearson_oracle(c2, q0)).epsilon(1e-12));

    // empty join errors
    QScoreTable unrelated;
    for (int dim = 0; dim < kNumDimensions; ++dim)
        unrelated.by_dimension[dim]["nobody"] = 5.0;
    CHECK_THROWS_AS(topic_perception_correlation(m, bow, unrelated), DataError);
}

TEST_CASE("topic summary csv format") {
    auto docs = docs_from_words({{"road", "car"}, {"road", "tree"}});
    BowCorpus bow = build_bow(docs, {}, 1);
    TopicModel m = fit_lda(bow, 2, 1.0, 0.01, 20, 2);
    TopicSummary s = top_words(m, bow, 2);
    const std::string path = "topics_tmp.csv";
    write_topic_summary_csv(path, s);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "topic_id,rank,word,probability");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 4);  // 2 topics x 2 words
    std::remove(path.c_str());
}
