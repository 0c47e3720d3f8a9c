#include "scenescore/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace scenescore {

using ordered_json = nlohmann::ordered_json;

namespace {

void check_pair(std::span<const double> y, std::span<const double> yhat,
                const char* who) {
    if (y.size() != yhat.size())
        throw DataError(std::string(who) + ": length mismatch");
    if (y.empty()) throw DataError(std::string(who) + ": empty input");
}

}  // namespace

double mse(std::span<const double> y, std::span<const double> yhat) {
    check_pair(y, yhat, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double r = y[i] - yhat[i];
        s += r * r;
    }
    return s / static_cast<double>(y.size());
}

double mae(std::span<const double> y, std::span<const double> yhat) {
    check_pair(y, yhat, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - yhat[i]);
    return s / static_cast<double>(y.size());
}

double r2(std::span<const double> y, std::span<const double> yhat) {
    check_pair(y, yhat, "r2");
    if (y.size() < 2) throw DataError("r2: need at least 2 observations");
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double ss_tot = 0.0, ss_res = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double d = y[i] - mean;
        ss_tot += d * d;
        double r = y[i] - yhat[i];
        ss_res += r * r;
    }
    if (ss_tot <= 0.0)
        throw NumericError("r2: degenerate (zero variance in targets)");
    return 1.0 - ss_res / ss_tot;
}

double pearson(std::span<const double> y, std::span<const double> yhat) {
    check_pair(y, yhat, "pearson");
    double my = 0.0, mh = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        my += y[i];
        mh += yhat[i];
    }
    my /= static_cast<double>(y.size());
    mh /= static_cast<double>(y.size());
    double syy = 0.0, shh = 0.0, syh = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double a = y[i] - my, b = yhat[i] - mh;
        syy += a * a;
        shh += b * b;
        syh += a * b;
    }
    if (syy <= 0.0 || shh <= 0.0) return 0.0;
    return syh / std::sqrt(syy * shh);
}

MetricReport evaluate(const std::string& model_name,
                      const std::string& split_hash,
                      const DimensionSeries& series) {
    MetricReport report;
    report.model_name = model_name;
    report.split_hash = split_hash;
    for (int d = 0; d < kNumDimensions; ++d) {
        const auto& [y, yhat] = series[d];
        if (y.empty()) throw DataError("evaluate: empty series for dimension " +
                                       std::string(to_string(all_dimensions()[d])));
        DimensionMetrics m;
        m.mse = mse(y, yhat);
        m.mae = mae(y, yhat);
        m.r2 = r2(y, yhat);
        m.pearson = pearson(y, yhat);
        m.n = static_cast<long>(y.size());
        report.per_dimension[d] = m;
    }
    return report;
}

std::string split_hash_of(std::span<const std::string> test_ids) {
    std::vector<std::string> sorted(test_ids.begin(), test_ids.end());
    std::sort(sorted.begin(), sorted.end());
    std::string joined;
    for (const std::string& id : sorted) {
        joined += id;
        joined += '\n';
    }
    return "fnv1a:" + fnv1a64_hex(joined);
}

ComparisonTable compare(std::span<const MetricReport> reports) {
    if (reports.size() < 2)
        throw DataError("compare: need at least 2 reports");
    ComparisonTable table;
    table.split_hash = reports[0].split_hash;
    for (const MetricReport& r : reports) {
        if (r.split_hash != table.split_hash)
            throw DataError("compare: split hash mismatch between '" +
                            reports[0].model_name + "' and '" + r.model_name +
                            "' (models were evaluated on different test sets)");
        table.reports.push_back(r);
    }
    return table;
}

double improvement(const ComparisonTable& table, const std::string& reference) {
    const MetricReport* ref = nullptr;
    for (const MetricReport& r : table.reports)
        if (r.model_name == reference) ref = &r;
    if (!ref) throw DataError("improvement: reference model '" + reference +
                              "' is not in the table");
    double total = 0.0;
    for (int d = 0; d < kNumDimensions; ++d) {
        double best_other = 1e300;
        for (const MetricReport& r : table.reports) {
            if (r.model_name == reference) continue;
            best_other = std::min(best_other, r.per_dimension[d].mse);
        }
        if (best_other <= 0.0)
            throw NumericError("improvement: baseline MSE is zero");
        total += (best_other - ref->per_dimension[d].mse) / best_other;
    }
    return 100.0 * total / kNumDimensions;
}

std::string render_comparison_csv(const ComparisonTable& table) {
    std::ostringstream out;
    out << "model";
    for (Dimension d : all_dimensions())
        out << ',' << to_string(d) << "_mse," << to_string(d) << "_r2";
    out << '\n';
    for (const MetricReport& r : table.reports) {
        out << r.model_name;
        for (int d = 0; d < kNumDimensions; ++d)
            out << ',' << format_fixed6(r.per_dimension[d].mse) << ','
                << format_fixed6(r.per_dimension[d].r2);
        out << '\n';
    }
    return out.str();
}

std::string render_comparison_text(const ComparisonTable& table) {
    // aligned table; the best MSE (lowest) and best R2 (highest) per
    // dimension carry a '*'
    std::ostringstream out;
    std::size_t name_width = 5;
    for (const MetricReport& r : table.reports)
        name_width = std::max(name_width, r.model_name.size());
    auto pad = [](std::string s, std::size_t w) {
        while (s.size() < w) s += ' ';
        return s;
    };
    out << pad("model", name_width);
    for (Dimension d : all_dimensions()) {
        std::string dim(to_string(d));
        out << "  " << pad(dim + " MSE", 12) << ' ' << pad(dim + " R2", 12);
    }
    out << '\n';
    std::array<double, kNumDimensions> best_mse;
    std::array<double, kNumDimensions> best_r2;
    for (int d = 0; d < kNumDimensions; ++d) {
        best_mse[d] = 1e300;
        best_r2[d] = -1e300;
        for (const MetricReport& r : table.reports) {
            best_mse[d] = std::min(best_mse[d], r.per_dimension[d].mse);
            best_r2[d] = std::max(best_r2[d], r.per_dimension[d].r2);
        }
    }
    for (const MetricReport& r : table.reports) {
        out << pad(r.model_name, name_width);
        for (int d = 0; d < kNumDimensions; ++d) {
            const DimensionMetrics& m = r.per_dimension[d];
            std::string mse_cell = format_fixed6(m.mse);
            if (m.mse == best_mse[d]) mse_cell += '*';
            std::string r2_cell = format_fixed6(m.r2);
            if (m.r2 == best_r2[d]) r2_cell += '*';
            out << "  " << pad(mse_cell, 12) << ' ' << pad(r2_cell, 12);
        }
        out << '\n';
    }
    out << "* best value in column\n";
    out << "note: the gbdt row stands in for histogram-based boosting "
           "systems; improvement = mean over dimensions of relative MSE "
           "reduction against the best other model per dimension\n";
    return out.str();
}

void save_report_json(const MetricReport& report, const std::string& path) {
    ordered_json j;
    j["model"] = report.model_name;
    j["split_hash"] = report.split_hash;
    ordered_json dims;
    for (int d = 0; d < kNumDimensions; ++d) {
        const DimensionMetrics& m = report.per_dimension[d];
        dims[std::string(to_string(all_dimensions()[d]))] = {
            {"mse", m.mse}, {"r2", m.r2}, {"mae", m.mae},
            {"pearson", m.pearson}, {"n", m.n}};
    }
    j["per_dimension"] = dims;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw DataError("write failed: " + path);
}

MetricReport load_report_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("invalid report JSON in " + path + ": " + e.what());
    }
    MetricReport report;
    report.model_name = j.at("model").get<std::string>();
    report.split_hash = j.at("split_hash").get<std::string>();
    for (int d = 0; d < kNumDimensions; ++d) {
        const auto& m = j.at("per_dimension").at(std::string(to_string(all_dimensions()[d])));
        report.per_dimension[d] = {m.at("mse").get<double>(), m.at("r2").get<double>(),
                                   m.at("mae").get<double>(), m.at("pearson").get<double>(),
                                   m.at("n").get<long>()};
    }
    return report;
}

MigrationSet load_migration_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open migration set: " + path);
    MigrationSet set;
    std::string line;
    long line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw DataError(path + " line " + std::to_string(line_no) +
                            ": invalid JSON (" + e.what() + ")");
        }
        if (!have_header) {
            if (!j.contains("rating_scale") || !j["rating_scale"].is_array() ||
                j["rating_scale"].size() != 2)
                throw DataError(path + ": first line must declare the rating "
                                "scale, e.g. {\"rating_scale\": [1, 5]}");
            set.scale_min = j["rating_scale"][0].get<double>();
            set.scale_max = j["rating_scale"][1].get<double>();
            if (!(set.scale_max > set.scale_min))
                throw DataError(path + ": rating scale must have max > min");
            have_header = true;
            continue;
        }
        MigrationLocation loc;
        loc.location_id = j.at("location_id").get<std::string>();
        loc.latitude = j.value("latitude", 0.0);
        loc.longitude = j.value("longitude", 0.0);
        auto caps = j.at("captions");
        if (!caps.is_array() || caps.size() != 5)
            throw DataError(path + ": location '" + loc.location_id +
                            "' must have exactly 5 captions");
        for (int i = 0; i < 5; ++i) loc.captions[i] = caps[i].get<std::string>();
        for (Dimension d : all_dimensions()) {
            std::string key(to_string(d));
            if (!j.at("ratings").contains(key))
                throw DataError(path + ": location '" + loc.location_id +
                                "' is missing rating '" + key + "'");
            loc.ratings[static_cast<int>(d)] = j["ratings"][key].get<double>();
        }
        loc.rater_count = j.value("rater_count", 1);
        if (loc.rater_count < 1)
            throw DataError(path + ": location '" + loc.location_id +
                            "' must have rater_count >= 1");
        set.locations.push_back(std::move(loc));
    }
    if (!have_header) throw DataError(path + ": missing rating-scale header line");
    if (set.locations.empty()) throw DataError(path + ": no locations");
    return set;
}

void save_migration_set(const MigrationSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << ordered_json{{"rating_scale", {set.scale_min, set.scale_max}}}.dump()
        << '\n';
    for (const MigrationLocation& loc : set.locations) {
        ordered_json j;
        j["location_id"] = loc.location_id;
        j["latitude"] = loc.latitude;
        j["longitude"] = loc.longitude;
        j["captions"] = loc.captions;
        ordered_json ratings;
        for (Dimension d : all_dimensions())
            ratings[std::string(to_string(d))] = loc.ratings[static_cast<int>(d)];
        j["ratings"] = ratings;
        j["rater_count"] = loc.rater_count;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

MigrationResult migrate(const PerceptionModel& model, const MigrationSet& set) {
    if (set.locations.empty()) throw DataError("migrate: empty migration set");
    MigrationResult result;
    const double scale_range = set.scale_max - set.scale_min;
    std::array<Vec, kNumDimensions> manual, predicted;
    Vec pooled_manual, pooled_predicted;
    for (const MigrationLocation& loc : set.locations) {
        auto scores = predict_scores(model, {loc.location_id, loc.captions});
        for (int d = 0; d < kNumDimensions; ++d) {
            double rescaled =
                (loc.ratings[d] - set.scale_min) / scale_range * 10.0;
            manual[d].push_back(rescaled);
            predicted[d].push_back(scores[d]);
            pooled_manual.push_back(rescaled);
            pooled_predicted.push_back(scores[d]);
            result.scatter.push_back({loc.location_id, all_dimensions()[d],
                                      scores[d], rescaled});
        }
    }
    for (int d = 0; d < kNumDimensions; ++d)
        result.r2_per_dimension[d] = r2(manual[d], predicted[d]);
    result.pooled_r2 = r2(pooled_manual, pooled_predicted);
    return result;
}

void write_scatter_csv(const std::string& path, std::span<const ScatterRow> rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "location_id,dimension,predicted,manual\n";
    for (const ScatterRow& r : rows)
        out << r.location_id << ',' << to_string(r.dimension) << ','
            << format_fixed6(r.predicted) << ',' << format_fixed6(r.manual_rescaled)
            << '\n';
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace scenescore
