#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scenescore/common.hpp"

namespace scenescore {

/// The six perceptual dimensions, in canonical report order.
enum class Dimension { beautiful = 0, safe, wealthy, depressing, boring, lively };

inline constexpr int kNumDimensions = 6;

const std::array<Dimension, kNumDimensions>& all_dimensions();
std::string_view to_string(Dimension d);
std::optional<Dimension> dimension_from(std::string_view s);

enum class VoteOutcome { left, right, tie };

struct ImageRecord {
    std::string image_id;
    double latitude = 0.0;
    double longitude = 0.0;
    std::optional<std::string> city;
};

struct VoteRecord {
    std::string left_id;
    std::string right_id;
    Dimension dimension = Dimension::beautiful;
    VoteOutcome outcome = VoteOutcome::left;
};

/// Win/loss bookkeeping for one image within one dimension. beaten and
/// beaten_by hold distinct opponent ids; duplicate votes against the same
/// opponent still increment the counters each time.
struct TallyEntry {
    long wins = 0;
    long losses = 0;
    long ties = 0;
    std::set<std::string> beaten;
    std::set<std::string> beaten_by;

    long total() const { return wins + losses + ties; }
};

struct WinLossTally {
    Dimension dimension = Dimension::beautiful;
    std::map<std::string, TallyEntry> entries;
};

/// (dimension, image_id) -> q score in [0, 10].
struct QScoreTable {
    std::array<std::map<std::string, double>, kNumDimensions> by_dimension;

    std::map<std::string, double>& at(Dimension d) {
        return by_dimension[static_cast<int>(d)];
    }
    const std::map<std::string, double>& at(Dimension d) const {
        return by_dimension[static_cast<int>(d)];
    }
    /// Image ids that carry a score in every dimension.
    std::vector<std::string> complete_ids() const;
};

struct CaptionDocument {
    std::string image_id;
    std::array<std::string, 5> captions;
};

struct LabeledEntry {
    std::string image_id;
    std::array<std::string, 5> captions;
    std::array<double, kNumDimensions> scores{};
};

struct JoinDiagnostics {
    long dropped_missing_captions = 0;  // scored images without captions
    long dropped_missing_scores = 0;    // captioned images with no scores at all
    long dropped_incomplete_scores = 0; // captioned images missing >= 1 dimension
};

struct LabeledCorpus {
    std::vector<LabeledEntry> entries;
    JoinDiagnostics drops;

    std::size_t size() const { return entries.size(); }
};

/// Parses votes.csv (header exactly left_id,right_id,dimension,outcome).
/// Reports the 1-based line number for any malformed row.
std::vector<VoteRecord> load_votes(const std::string& path);
std::vector<VoteRecord> parse_votes_csv(std::string_view text, const std::string& origin);

/// Counts wins/losses/ties for one dimension; votes of other dimensions are
/// ignored. A tie increments `ties` on both sides and touches no sets.
WinLossTally tally(std::span<const VoteRecord> votes, Dimension dimension);

/// Q-score conversion for one dimension's tally:
///   W_i = w_i / t_i,   L_i = l_i / t_i,
///   Q_i = (10/3) * (W_i + mean_{j in beaten} W_j - mean_{k in beaten_by} L_k + 1)
/// with empty means treated as 0 and the result clamped to [0, 10].
/// Means are accumulated in lexicographic opponent order so the computation
/// is bit-reproducible.
std::map<std::string, double> q_score(const WinLossTally& tallies);

/// Tally + q_score across all six dimensions.
QScoreTable score_votes(std::span<const VoteRecord> votes);

/// Parses captions.jsonl: one object per line, keys image_id and captions
/// (exactly five non-empty strings).
std::vector<CaptionDocument> load_captions(const std::string& path);
std::vector<CaptionDocument> parse_captions_jsonl(std::string_view text, const std::string& origin);

/// Inner join on image_id, requiring all six dimensions. Entries keep the
/// caption input order. Throws DataError if the result is empty.
LabeledCorpus join_dataset(const QScoreTable& scores,
                           std::span<const CaptionDocument> captions);

/// Deterministic split: |test| = round(test_fraction * N). Both halves keep
/// the original corpus order.
std::pair<LabeledCorpus, LabeledCorpus> split(const LabeledCorpus& corpus,
                                              double test_fraction,
                                              uint64_t seed);

void write_scores_csv(const std::string& path, const QScoreTable& table);
QScoreTable read_scores_csv(const std::string& path);

/// Labeled corpus JSONL persistence ({image_id, captions, scores}).
void write_corpus_jsonl(const std::string& path, const LabeledCorpus& corpus);
LabeledCorpus read_corpus_jsonl(const std::string& path);

}  // namespace scenescore
