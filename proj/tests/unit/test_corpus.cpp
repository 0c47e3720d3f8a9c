#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "scenescore/corpus.hpp"
#include "scenescore/rng.hpp"

using namespace scenescore;

namespace {

VoteRecord vote(const std::string& l, const std::string& r, Dimension d,
                VoteOutcome o) {
    return {l, r, d, o};
}

/// Independent q-score oracle: separate bookkeeping, same decided formula,
/// lexicographic accumulation order.
std::map<std::string, double> brute_force_q(const std::vector<VoteRecord>& votes,
                                            Dimension dim) {
    struct Rec {
        long w = 0, l = 0, t = 0;
        std::set<std::string> beat, lost;
    };
    std::map<std::string, Rec> recs;
    for (const auto& v : votes) {
        if (v.dimension != dim) continue;
        if (v.outcome == VoteOutcome::tie) {
            recs[v.left_id].t++;
            recs[v.right_id].t++;
        } else {
            const std::string& win =
                v.outcome == VoteOutcome::left ? v.left_id : v.right_id;
            const std::string& lose =
                v.outcome == VoteOutcome::left ? v.right_id : v.left_id;
            recs[win].w++;
            recs[lose].l++;
            recs[win].beat.insert(lose);
            recs[lose].lost.insert(win);
        }
    }
    auto wr = [&](const std::string& id) {
        const Rec& r = recs.at(id);
        return double(r.w) / double(r.w + r.l + r.t);
    };
    auto lr = [&](const std::string& id) {
        const Rec& r = recs.at(id);
        return double(r.l) / double(r.w + r.l + r.t);
    };
    std::map<std::string, double> out;
    for (const auto& [id, r] : recs) {
        double mb = 0.0;
        if (!r.beat.empty()) {
            double s = 0.0;
            for (const auto& j : r.beat) s += wr(j);
            mb = s / double(r.beat.size());
        }
        double mbb = 0.0;
        if (!r.lost.empty()) {
            double s = 0.0;
            for (const auto& k : r.lost) s += lr(k);
            mbb = s / double(r.lost.size());
        }
        out[id] = std::clamp((10.0 / 3.0) * (wr(id) + mb - mbb + 1.0), 0.0, 10.0);
    }
    return out;
}

std::vector<VoteRecord> random_votes(Rng& rng, int n_images, int n_votes,
                                     bool allow_ties = true) {
    std::vector<VoteRecord> votes;
    for (int i = 0; i < n_votes; ++i) {
        int a = int(rng.below(n_images));
        int b = int(rng.below(n_images - 1));
        if (b >= a) b++;
        auto dim = all_dimensions()[rng.below(6)];
        int o = int(rng.below(allow_ties ? 3 : 2));
        votes.push_back(vote("img" + std::to_string(a), "img" + std::to_string(b),
                             dim, static_cast<VoteOutcome>(o)));
    }
    return votes;
}

}  // namespace

TEST_CASE("votes csv parsing") {
    auto v = parse_votes_csv("left_id,right_id,dimension,outcome\na,b,safe,left\n", "t");
    REQUIRE(v.size() == 1);
    CHECK(v[0].left_id == "a");
    CHECK(v[0].right_id == "b");
    CHECK(v[0].dimension == Dimension::safe);
    CHECK(v[0].outcome == VoteOutcome::left);

    CHECK(parse_votes_csv("left_id,right_id,dimension,outcome\n", "t").empty());

    CHECK_THROWS_WITH_AS(parse_votes_csv("left_id,right_id,dimension,outcome\na,a,safe,left\n", "t"),
                         doctest::Contains("line 2"), DataError);
    CHECK_THROWS_AS(parse_votes_csv("left_id,right_id,dimension,outcome\na,b,nope,left\n", "t"),
                    DataError);
    CHECK_THROWS_AS(parse_votes_csv("left_id,right_id,dimension,outcome\na,b,safe\n", "t"),
                    DataError);
    CHECK_THROWS_AS(parse_votes_csv("bad,header\n", "t"), DataError);
    // row order preserved
    auto many = parse_votes_csv(
        "left_id,right_id,dimension,outcome\na,b,safe,left\nc,d,boring,tie\n", "t");
    REQUIRE(many.size() == 2);
    CHECK(many[1].left_id == "c");
    CHECK(many[1].outcome == VoteOutcome::tie);
}

TEST_CASE("tally basics") {
    std::vector<VoteRecord> votes{vote("a", "b", Dimension::safe, VoteOutcome::left)};
    WinLossTally t = tally(votes, Dimension::safe);
    CHECK(t.entries.at("a").wins == 1);
    CHECK(t.entries.at("a").losses == 0);
    CHECK(t.entries.at("b").losses == 1);
    CHECK(t.entries.at("a").beaten == std::set<std::string>{"b"});
    CHECK(t.entries.at("b").beaten_by == std::set<std::string>{"a"});

    std::vector<VoteRecord> ties{vote("a", "b", Dimension::safe, VoteOutcome::tie)};
    WinLossTally tt = tally(ties, Dimension::safe);
    CHECK(tt.entries.at("a").ties == 1);
    CHECK(tt.entries.at("b").ties == 1);
    CHECK(tt.entries.at("a").beaten.empty());
    CHECK(tt.entries.at("b").beaten.empty());

    // other dimensions ignored
    WinLossTally other = tally(votes, Dimension::lively);
    CHECK(other.entries.empty());
}

TEST_CASE("tally matches brute-force recount on random votes") {
    Rng rng(11);
    auto votes = random_votes(rng, 4, 10);
    for (Dimension d : all_dimensions()) {
        WinLossTally t = tally(votes, d);
        // independent recount
        std::map<std::string, std::array<long, 3>> counts;
        for (const auto& v : votes) {
            if (v.dimension != d) continue;
            if (v.outcome == VoteOutcome::tie) {
                counts[v.left_id][2]++;
                counts[v.right_id][2]++;
            } else if (v.outcome == VoteOutcome::left) {
                counts[v.left_id][0]++;
                counts[v.right_id][1]++;
            } else {
                counts[v.right_id][0]++;
                counts[v.left_id][1]++;
            }
        }
        CHECK(t.entries.size() == counts.size());
        for (const auto& [id, c] : counts) {
            CHECK(t.entries.at(id).wins == c[0]);
            CHECK(t.entries.at(id).losses == c[1]);
            CHECK(t.entries.at(id).ties == c[2]);
        }
    }
}

TEST_CASE("tally conservation") {
    Rng rng(23);
    auto votes = random_votes(rng, 8, 200);
    for (Dimension d : all_dimensions()) {
        WinLossTally t = tally(votes, d);
        long wins = 0, losses = 0, ties = 0, decided = 0, tied = 0;
        for (const auto& v : votes) {
            if (v.dimension != d) continue;
            (v.outcome == VoteOutcome::tie ? tied : decided)++;
        }
        for (const auto& [id, e] : t.entries) {
            wins += e.wins;
            losses += e.losses;
            ties += e.ties;
        }
        CHECK(wins == decided);
        CHECK(losses == decided);
        CHECK(ties == 2 * tied);
    }
}

TEST_CASE("q_score forced examples") {
    // a beat b and c; neither opponent ever won
    std::vector<VoteRecord> votes{vote("a", "b", Dimension::safe, VoteOutcome::left),
                                  vote("a", "c", Dimension::safe, VoteOutcome::left)};
    auto q = q_score(tally(votes, Dimension::safe));
    CHECK(q.at("a") == doctest::Approx(20.0 / 3.0).epsilon(1e-12));

    std::vector<VoteRecord> ties{vote("a", "b", Dimension::safe, VoteOutcome::tie),
                                 vote("a", "b", Dimension::safe, VoteOutcome::tie)};
    auto qt = q_score(tally(ties, Dimension::safe));
    CHECK(qt.at("a") == doctest::Approx(10.0 / 3.0).epsilon(1e-12));
    CHECK(qt.at("b") == doctest::Approx(10.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("q_score equals brute force exactly on a 6-image tournament") {
    Rng rng(7);
    auto votes = random_votes(rng, 6, 60);
    for (Dimension d : all_dimensions()) {
        WinLossTally t = tally(votes, d);
        if (t.entries.empty()) continue;
        auto q = q_score(t);
        auto oracle = brute_force_q(votes, d);
        REQUIRE(q.size() == oracle.size());
        for (const auto& [id, value] : oracle) {
            // bitwise agreement: identical formula, identical order
            CHECK(q.at(id) == value);
        }
    }
}

TEST_CASE("q range over random vote sets") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        auto votes = random_votes(rng, 6, 80);
        QScoreTable table = score_votes(votes);
        for (int d = 0; d < kNumDimensions; ++d)
            for (const auto& [id, q] : table.by_dimension[d]) {
                CHECK(q >= 0.0);
                CHECK(q <= 10.0);
            }
    }
}

TEST_CASE("q monotonicity: one more win against a known opponent") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto votes = random_votes(rng, 6, 40, false);
        WinLossTally t = tally(votes, Dimension::beautiful);
        if (t.entries.empty()) continue;
        // pick an image with a non-empty beaten set
        for (const auto& [id, e] : t.entries) {
            if (e.beaten.empty()) continue;
            double before = q_score(t).at(id);
            WinLossTally mod = t;
            mod.entries[id].wins++;
            // beaten set unchanged: the opponent is already in it
            double after = q_score(mod).at(id);
            CHECK(after >= before - 1e-12);
            break;
        }
    }
}

TEST_CASE("q_score requires comparisons") {
    WinLossTally t;
    t.entries["lonely"] = TallyEntry{};
    CHECK_THROWS_AS(q_score(t), DataError);
}

TEST_CASE("captions jsonl parsing") {
    std::string good =
        R"({"image_id":"a","captions":["c1","c2","c3","c4","c5"]})" "\n";
    auto docs = parse_captions_jsonl(good, "t");
    REQUIRE(docs.size() == 1);
    CHECK(docs[0].image_id == "a");
    CHECK(docs[0].captions[4] == "c5");

    std::string four =
        R"({"image_id":"a","captions":["c1","c2","c3","c4"]})" "\n";
    CHECK_THROWS_WITH_AS(parse_captions_jsonl(four, "t"),
                         doctest::Contains("a"), DataError);
    std::string empty_cap =
        R"({"image_id":"a","captions":["c1","","c3","c4","c5"]})" "\n";
    CHECK_THROWS_AS(parse_captions_jsonl(empty_cap, "t"), DataError);

    std::string three_lines = good +
        R"({"image_id":"b","captions":["x","x","x","x","x"]})" "\n" +
        R"({"image_id":"c","captions":["y","y","y","y","y"]})" "\n";
    auto multi = parse_captions_jsonl(three_lines, "t");
    REQUIRE(multi.size() == 3);
    CHECK(multi[0].image_id == "a");
    CHECK(multi[1].image_id == "b");
    CHECK(multi[2].image_id == "c");
}

namespace {

CaptionDocument doc_of(const std::string& id) {
    return {id, {"a road", "a tree", "a car", "a house", "a fence"}};
}

QScoreTable full_scores(const std::vector<std::string>& ids) {
    QScoreTable t;
    for (const auto& id : ids)
        for (int d = 0; d < kNumDimensions; ++d)
            t.by_dimension[d][id] = 5.0 + d;
    return t;
}

}  // namespace

TEST_CASE("join_dataset") {
    auto scores = full_scores({"a", "b", "c"});
    std::vector<CaptionDocument> docs{doc_of("a"), doc_of("b"), doc_of("c")};
    LabeledCorpus corpus = join_dataset(scores, docs);
    CHECK(corpus.size() == 3);
    CHECK(corpus.drops.dropped_incomplete_scores == 0);
    CHECK(corpus.entries[0].scores[3] == 8.0);

    // missing one dimension -> dropped and counted
    scores.by_dimension[static_cast<int>(Dimension::boring)].erase("b");
    LabeledCorpus partial = join_dataset(scores, docs);
    CHECK(partial.size() == 2);
    CHECK(partial.drops.dropped_incomplete_scores == 1);

    QScoreTable empty;
    CHECK_THROWS_AS(join_dataset(empty, docs), DataError);

    // join idempotence: same inputs -> identical corpus
    LabeledCorpus again = join_dataset(scores, docs);
    REQUIRE(again.size() == partial.size());
    for (std::size_t i = 0; i < again.size(); ++i) {
        CHECK(again.entries[i].image_id == partial.entries[i].image_id);
        CHECK(again.entries[i].scores == partial.entries[i].scores);
    }
}

TEST_CASE("join matches set-intersection oracle on random overlap") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::string> scored_ids, caption_ids;
        for (int i = 0; i < 20; ++i) {
            std::string id = "img" + std::to_string(i);
            if (rng.uniform() < 0.6) scored_ids.push_back(id);
            if (rng.uniform() < 0.6) caption_ids.push_back(id);
        }
        auto scores = full_scores(scored_ids);
        std::vector<CaptionDocument> docs;
        for (const auto& id : caption_ids) docs.push_back(doc_of(id));
        std::set<std::string> expect(scored_ids.begin(), scored_ids.end());
        long n = 0;
        for (const auto& id : caption_ids) n += expect.count(id);
        if (n == 0) {
            CHECK_THROWS_AS(join_dataset(scores, docs), DataError);
        } else {
            CHECK(join_dataset(scores, docs).size() == std::size_t(n));
        }
    }
}

TEST_CASE("split basics") {
    auto scores = full_scores({});
    LabeledCorpus corpus;
    for (int i = 0; i < 10; ++i) {
        LabeledEntry e;
        e.image_id = "img" + std::to_string(i);
        e.captions = doc_of(e.image_id).captions;
        corpus.entries.push_back(e);
    }
    auto [train, test] = split(corpus, 0.1, 42);
    CHECK(test.size() == 1);
    CHECK(train.size() == 9);

    auto [train2, test2] = split(corpus, 0.1, 42);
    CHECK(test2.entries[0].image_id == test.entries[0].image_id);

    LabeledCorpus tiny;
    tiny.entries.push_back(corpus.entries[0]);
    CHECK_THROWS_AS(split(tiny, 0.1, 1), DataError);
    CHECK_THROWS_AS(split(corpus, 0.0, 1), DataError);
    CHECK_THROWS_AS(split(corpus, 1.0, 1), DataError);
}

TEST_CASE("split partition properties over random corpora") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        int n = 2 + int(rng.below(40));
        LabeledCorpus corpus;
        for (int i = 0; i < n; ++i) {
            LabeledEntry e;
            e.image_id = "img" + std::to_string(i);
            e.captions = doc_of(e.image_id).captions;
            corpus.entries.push_back(e);
        }
        double f = 0.05 + 0.9 * rng.uniform();
        auto [train, test] = split(corpus, f, rng.raw());
        CHECK(train.size() + test.size() == std::size_t(n));
        CHECK(test.size() == std::size_t(std::llround(f * n)));
        std::set<std::string> seen;
        for (const auto& e : train.entries) seen.insert(e.image_id);
        for (const auto& e : test.entries) {
            CHECK(!seen.count(e.image_id));  // disjoint
            seen.insert(e.image_id);
        }
        CHECK(seen.size() == std::size_t(n));  // exhaustive
    }
}

TEST_CASE("scores csv round trip and format") {
    std::vector<VoteRecord> votes{vote("a", "b", Dimension::safe, VoteOutcome::left),
                                  vote("a", "b", Dimension::lively, VoteOutcome::tie)};
    QScoreTable table = score_votes(votes);
    std::string path = "test_scores_tmp.csv";
    write_scores_csv(path, table);
    QScoreTable back = read_scores_csv(path);
    for (int d = 0; d < kNumDimensions; ++d)
        for (const auto& [id, q] : table.by_dimension[d])
            CHECK(back.by_dimension[d].at(id) ==
                  doctest::Approx(q).epsilon(1e-6));
    std::remove(path.c_str());
}

TEST_CASE("corpus jsonl round trip") {
    auto scores = full_scores({"a", "b"});
    LabeledCorpus corpus = join_dataset(scores, {doc_of("a"), doc_of("b")});
    std::string path = "test_corpus_tmp.jsonl";
    write_corpus_jsonl(path, corpus);
    LabeledCorpus back = read_corpus_jsonl(path);
    REQUIRE(back.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CHECK(back.entries[i].image_id == corpus.entries[i].image_id);
        CHECK(back.entries[i].captions == corpus.entries[i].captions);
        CHECK(back.entries[i].scores == corpus.entries[i].scores);
    }
    std::remove(path.c_str());
}
