#include "scenescore/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "scenescore/rng.hpp"

namespace scenescore {

using ordered_json = nlohmann::ordered_json;

const std::array<Dimension, kNumDimensions>& all_dimensions() {
    static const std::array<Dimension, kNumDimensions> dims = {
        Dimension::beautiful, Dimension::safe,   Dimension::wealthy,
        Dimension::depressing, Dimension::boring, Dimension::lively};
    return dims;
}

std::string_view to_string(Dimension d) {
    switch (d) {
        case Dimension::beautiful: return "beautiful";
        case Dimension::safe: return "safe";
        case Dimension::wealthy: return "wealthy";
        case Dimension::depressing: return "depressing";
        case Dimension::boring: return "boring";
        case Dimension::lively: return "lively";
    }
    return "?";
}

std::optional<Dimension> dimension_from(std::string_view s) {
    for (Dimension d : all_dimensions())
        if (to_string(d) == s) return d;
    return std::nullopt;
}

std::vector<std::string> QScoreTable::complete_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, q] : by_dimension[0]) {
        bool complete = true;
        for (int d = 1; d < kNumDimensions; ++d)
            if (!by_dimension[d].count(id)) { complete = false; break; }
        if (complete) ids.push_back(id);
    }
    return ids;
}

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_csv_row(std::string_view line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

std::optional<VoteOutcome> outcome_from(std::string_view s) {
    if (s == "left") return VoteOutcome::left;
    if (s == "right") return VoteOutcome::right;
    if (s == "tie") return VoteOutcome::tie;
    return std::nullopt;
}

}  // namespace

std::vector<VoteRecord> parse_votes_csv(std::string_view text, const std::string& origin) {
    std::vector<VoteRecord> votes;
    std::size_t pos = 0;
    long line_no = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = (eol == std::string_view::npos)
                                    ? text.substr(pos)
                                    : text.substr(pos, eol - pos);
        pos = (eol == std::string_view::npos) ? text.size() + 1 : eol + 1;
        ++line_no;
        if (line.empty() || line == "\r") {
            if (line_no == 1)
                throw DataError(origin + ": missing header line");
            continue;
        }
        auto fields = split_csv_row(line);
        if (line_no == 1) {
            if (fields != std::vector<std::string>{"left_id", "right_id", "dimension", "outcome"})
                throw DataError(origin + ": header must be left_id,right_id,dimension,outcome");
            continue;
        }
        auto fail = [&](const std::string& why) {
            throw DataError(origin + " line " + std::to_string(line_no) + ": " + why);
        };
        if (fields.size() != 4) fail("expected 4 columns, got " + std::to_string(fields.size()));
        if (fields[0].empty() || fields[1].empty()) fail("empty image id");
        if (fields[0] == fields[1]) fail("left_id equals right_id");
        auto dim = dimension_from(fields[2]);
        if (!dim) fail("unknown dimension '" + fields[2] + "'");
        auto out = outcome_from(fields[3]);
        if (!out) fail("unknown outcome '" + fields[3] + "'");
        votes.push_back({fields[0], fields[1], *dim, *out});
    }
    return votes;
}

std::vector<VoteRecord> load_votes(const std::string& path) {
    return parse_votes_csv(read_text_file(path), path);
}

WinLossTally tally(std::span<const VoteRecord> votes, Dimension dimension) {
    WinLossTally t;
    t.dimension = dimension;
    for (const VoteRecord& v : votes) {
        if (v.dimension != dimension) continue;
        TallyEntry& left = t.entries[v.left_id];
        TallyEntry& right = t.entries[v.right_id];
        switch (v.outcome) {
            case VoteOutcome::left:
                left.wins++;
                right.losses++;
                left.beaten.insert(v.right_id);
                right.beaten_by.insert(v.left_id);
                break;
            case VoteOutcome::right:
                right.wins++;
                left.losses++;
                right.beaten.insert(v.left_id);
                left.beaten_by.insert(v.right_id);
                break;
            case VoteOutcome::tie:
                left.ties++;
                right.ties++;
                break;
        }
    }
    return t;
}

std::map<std::string, double> q_score(const WinLossTally& tallies) {
    std::map<std::string, double> q;
    auto win_ratio = [&](const std::string& id) {
        const TallyEntry& e = tallies.entries.at(id);
        return static_cast<double>(e.wins) / static_cast<double>(e.total());
    };
    auto loss_ratio = [&](const std::string& id) {
        const TallyEntry& e = tallies.entries.at(id);
        return static_cast<double>(e.losses) / static_cast<double>(e.total());
    };
    for (const auto& [id, e] : tallies.entries) {
        if (e.total() < 1)
            throw DataError("q_score: image '" + id + "' has no comparisons");
        double w = win_ratio(id);
        // std::set iterates in lexicographic order, which pins the
        // floating-point accumulation order.
        double mean_beaten = 0.0;
        if (!e.beaten.empty()) {
            double s = 0.0;
            for (const std::string& j : e.beaten) s += win_ratio(j);
            mean_beaten = s / static_cast<double>(e.beaten.size());
        }
        double mean_beaten_by = 0.0;
        if (!e.beaten_by.empty()) {
            double s = 0.0;
            for (const std::string& k : e.beaten_by) s += loss_ratio(k);
            mean_beaten_by = s / static_cast<double>(e.beaten_by.size());
        }
        double v = (10.0 / 3.0) * (w + mean_beaten - mean_beaten_by + 1.0);
        q[id] = std::clamp(v, 0.0, 10.0);
    }
    return q;
}

QScoreTable score_votes(std::span<const VoteRecord> votes) {
    QScoreTable table;
    for (Dimension d : all_dimensions()) {
        WinLossTally t = tally(votes, d);
        if (!t.entries.empty()) table.at(d) = q_score(t);
    }
    return table;
}

std::vector<CaptionDocument> parse_captions_jsonl(std::string_view text, const std::string& origin) {
    std::vector<CaptionDocument> docs;
    std::size_t pos = 0;
    long line_no = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = (eol == std::string_view::npos)
                                    ? text.substr(pos)
                                    : text.substr(pos, eol - pos);
        pos = (eol == std::string_view::npos) ? text.size() : eol + 1;
        ++line_no;
        if (line.empty() || line == "\r") continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw DataError(origin + " line " + std::to_string(line_no) +
                            ": invalid JSON (" + e.what() + ")");
        }
        if (!j.contains("image_id") || !j["image_id"].is_string())
            throw DataError(origin + " line " + std::to_string(line_no) +
                            ": missing string image_id");
        CaptionDocument doc;
        doc.image_id = j["image_id"].get<std::string>();
        if (!j.contains("captions") || !j["captions"].is_array() ||
            j["captions"].size() != 5)
            throw DataError(origin + ": image '" + doc.image_id +
                            "' must have exactly 5 captions");
        for (int i = 0; i < 5; ++i) {
            if (!j["captions"][i].is_string() ||
                j["captions"][i].get<std::string>().empty())
                throw DataError(origin + ": image '" + doc.image_id +
                                "' has an empty caption");
            doc.captions[i] = j["captions"][i].get<std::string>();
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

std::vector<CaptionDocument> load_captions(const std::string& path) {
    return parse_captions_jsonl(read_text_file(path), path);
}

LabeledCorpus join_dataset(const QScoreTable& scores,
                           std::span<const CaptionDocument> captions) {
    LabeledCorpus corpus;
    std::set<std::string> captioned;
    for (const CaptionDocument& doc : captions) {
        captioned.insert(doc.image_id);
        int have = 0;
        LabeledEntry entry;
        entry.image_id = doc.image_id;
        entry.captions = doc.captions;
        for (Dimension d : all_dimensions()) {
            const auto& m = scores.at(d);
            auto it = m.find(doc.image_id);
            if (it == m.end()) continue;
            entry.scores[static_cast<int>(d)] = it->second;
            ++have;
        }
        if (have == kNumDimensions) {
            corpus.entries.push_back(std::move(entry));
        } else if (have == 0) {
            corpus.drops.dropped_missing_scores++;
        } else {
            corpus.drops.dropped_incomplete_scores++;
        }
    }
    std::set<std::string> scored;
    for (int d = 0; d < kNumDimensions; ++d)
        for (const auto& [id, q] : scores.by_dimension[d]) scored.insert(id);
    for (const std::string& id : scored)
        if (!captioned.count(id)) corpus.drops.dropped_missing_captions++;
    if (corpus.entries.empty())
        throw DataError("join_dataset: no image has both captions and all six scores");
    return corpus;
}

std::pair<LabeledCorpus, LabeledCorpus> split(const LabeledCorpus& corpus,
                                              double test_fraction,
                                              uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw DataError("split: test_fraction must lie strictly between 0 and 1");
    if (corpus.size() < 2)
        throw DataError("split: corpus must contain at least 2 entries");
    std::size_t n = corpus.size();
    auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<bool> in_test(n, false);
    for (std::size_t i = 0; i < n_test; ++i) in_test[order[i]] = true;
    LabeledCorpus train, test;
    for (std::size_t i = 0; i < n; ++i)
        (in_test[i] ? test : train).entries.push_back(corpus.entries[i]);
    return {std::move(train), std::move(test)};
}

void write_scores_csv(const std::string& path, const QScoreTable& table) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "image_id,dimension,q_score\n";
    // rows grouped by image id, dimensions in canonical order
    std::set<std::string> ids;
    for (int d = 0; d < kNumDimensions; ++d)
        for (const auto& [id, q] : table.by_dimension[d]) ids.insert(id);
    for (const std::string& id : ids) {
        for (Dimension d : all_dimensions()) {
            auto it = table.at(d).find(id);
            if (it == table.at(d).end()) continue;
            out << id << ',' << to_string(d) << ',' << format_fixed6(it->second)
                << '\n';
        }
    }
    if (!out) throw DataError("write failed: " + path);
}

QScoreTable read_scores_csv(const std::string& path) {
    std::string text = read_text_file(path);
    QScoreTable table;
    std::size_t pos = 0;
    long line_no = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = (eol == std::string::npos)
                                    ? std::string_view(text).substr(pos)
                                    : std::string_view(text).substr(pos, eol - pos);
        pos = (eol == std::string::npos) ? text.size() : eol + 1;
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_row(line);
        if (line_no == 1) {
            if (fields != std::vector<std::string>{"image_id", "dimension", "q_score"})
                throw DataError(path + ": header must be image_id,dimension,q_score");
            continue;
        }
        if (fields.size() != 3)
            throw DataError(path + " line " + std::to_string(line_no) + ": expected 3 columns");
        auto dim = dimension_from(fields[1]);
        if (!dim)
            throw DataError(path + " line " + std::to_string(line_no) +
                            ": unknown dimension '" + fields[1] + "'");
        try {
            table.at(*dim)[fields[0]] = std::stod(fields[2]);
        } catch (const std::exception&) {
            throw DataError(path + " line " + std::to_string(line_no) +
                            ": bad q_score value '" + fields[2] + "'");
        }
    }
    return table;
}

void write_corpus_jsonl(const std::string& path, const LabeledCorpus& corpus) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const LabeledEntry& e : corpus.entries) {
        ordered_json j;
        j["image_id"] = e.image_id;
        j["captions"] = e.captions;
        ordered_json s;
        for (Dimension d : all_dimensions())
            s[std::string(to_string(d))] = e.scores[static_cast<int>(d)];
        j["scores"] = s;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

LabeledCorpus read_corpus_jsonl(const std::string& path) {
    std::string text = read_text_file(path);
    LabeledCorpus corpus;
    std::size_t pos = 0;
    long line_no = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = (eol == std::string::npos)
                                    ? std::string_view(text).substr(pos)
                                    : std::string_view(text).substr(pos, eol - pos);
        pos = (eol == std::string::npos) ? text.size() : eol + 1;
        ++line_no;
        if (line.empty() || line == "\r") continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw DataError(path + " line " + std::to_string(line_no) +
                            ": invalid JSON (" + e.what() + ")");
        }
        LabeledEntry entry;
        entry.image_id = j.at("image_id").get<std::string>();
        auto caps = j.at("captions");
        if (!caps.is_array() || caps.size() != 5)
            throw DataError(path + ": image '" + entry.image_id +
                            "' must have exactly 5 captions");
        for (int i = 0; i < 5; ++i) entry.captions[i] = caps[i].get<std::string>();
        for (Dimension d : all_dimensions()) {
            const std::string key(to_string(d));
            if (!j.at("scores").contains(key))
                throw DataError(path + ": image '" + entry.image_id +
                                "' is missing score '" + key + "'");
            entry.scores[static_cast<int>(d)] = j["scores"][key].get<double>();
        }
        corpus.entries.push_back(std::move(entry));
    }
    return corpus;
}

}  // namespace scenescore
