#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scenescore/corpus.hpp"
#include "scenescore/encoder.hpp"

namespace scenescore {

/// Mean squared error. Throws DataError on empty or mismatched input.
double mse(std::span<const double> y, std::span<const double> yhat);

/// Mean absolute error.
double mae(std::span<const double> y, std::span<const double> yhat);

/// 1 - SS_res / SS_tot. Throws NumericError when var(y) is zero.
double r2(std::span<const double> y, std::span<const double> yhat);

/// Pearson correlation; returns 0 with no error when either side is
/// constant (callers that must fail use r2 instead).
double pearson(std::span<const double> y, std::span<const double> yhat);

struct DimensionMetrics {
    double mse = 0.0;
    double r2 = 0.0;
    double mae = 0.0;
    double pearson = 0.0;
    long n = 0;
};

struct MetricReport {
    std::string model_name;
    std::string split_hash;
    std::array<DimensionMetrics, kNumDimensions> per_dimension;
};

/// Aligned (target, prediction) pairs per dimension.
using DimensionSeries = std::array<std::pair<Vec, Vec>, kNumDimensions>;

MetricReport evaluate(const std::string& model_name,
                      const std::string& split_hash,
                      const DimensionSeries& series);

/// Hash of the evaluation split: FNV-1a over the sorted image ids.
std::string split_hash_of(std::span<const std::string> test_ids);

struct ComparisonTable {
    std::vector<MetricReport> reports;
    std::string split_hash;
};

/// Validates that every report shares one split hash. Order-preserving.
ComparisonTable compare(std::span<const MetricReport> reports);

/// Mean over dimensions of the relative MSE reduction of `reference`
/// against the best (lowest-MSE) other model per dimension, in percent.
double improvement(const ComparisonTable& table, const std::string& reference);

std::string render_comparison_csv(const ComparisonTable& table);
std::string render_comparison_text(const ComparisonTable& table);

void save_report_json(const MetricReport& report, const std::string& path);
MetricReport load_report_json(const std::string& path);

struct MigrationLocation {
    std::string location_id;
    double latitude = 0.0;
    double longitude = 0.0;
    std::array<std::string, 5> captions;
    std::array<double, kNumDimensions> ratings{};  // mean manual rating
    int rater_count = 1;
};

struct MigrationSet {
    double scale_min = 0.0;  // declared rating scale
    double scale_max = 0.0;
    std::vector<MigrationLocation> locations;
};

/// JSONL with a leading header object declaring the rating scale, e.g.
/// {"rating_scale": [1, 5]}, then one location object per line.
MigrationSet load_migration_set(const std::string& path);
void save_migration_set(const MigrationSet& set, const std::string& path);

struct ScatterRow {
    std::string location_id;
    Dimension dimension = Dimension::beautiful;
    double predicted = 0.0;
    double manual_rescaled = 0.0;
};

struct MigrationResult {
    std::array<double, kNumDimensions> r2_per_dimension{};
    double pooled_r2 = 0.0;
    std::vector<ScatterRow> scatter;
};

/// Predicts all six scores per location, rescales the manual means onto
/// [0, 10] via the declared rating scale, and reports pooled plus
/// per-dimension R^2. Constant manual ratings raise NumericError.
MigrationResult migrate(const PerceptionModel& model, const MigrationSet& set);

void write_scatter_csv(const std::string& path, std::span<const ScatterRow> rows);

}  // namespace scenescore
