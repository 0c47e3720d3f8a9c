#include "scenescore/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "scenescore/common.hpp"
#include "scenescore/rng.hpp"

namespace scenescore {

using ordered_json = nlohmann::ordered_json;

namespace {

struct SplitChoice {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

constexpr double kMinGain = 1e-12;  // guards against float-noise splits

/// Best variance-reduction split over the given rows. Candidate thresholds
/// are the training values themselves; the left branch takes x <= t.
SplitChoice best_split(const Mat& x, const Vec& y,
                       const std::vector<int>& rows,
                       const std::vector<int>& features, int min_leaf) {
    SplitChoice best;
    const int n = static_cast<int>(rows.size());
    double total_sum = 0.0, total_sum2 = 0.0;
    for (int r : rows) {
        total_sum += y[r];
        total_sum2 += y[r] * y[r];
    }
    const double parent_sse = total_sum2 - total_sum * total_sum / n;

    std::vector<std::pair<double, double>> vals(n);  // (feature value, target)
    for (int f : features) {
        for (int i = 0; i < n; ++i) vals[i] = {x(rows[i], f), y[rows[i]]};
        std::sort(vals.begin(), vals.end());
        double left_sum = 0.0, left_sum2 = 0.0;
        for (int i = 0; i + 1 < n; ++i) {
            left_sum += vals[i].second;
            left_sum2 += vals[i].second * vals[i].second;
            if (vals[i].first == vals[i + 1].first) continue;  // not a boundary
            int nl = i + 1, nr = n - nl;
            if (nl < min_leaf || nr < min_leaf) continue;
            double right_sum = total_sum - left_sum;
            double right_sum2 = total_sum2 - left_sum2;
            double sse = (left_sum2 - left_sum * left_sum / nl) +
                         (right_sum2 - right_sum * right_sum / nr);
            double gain = parent_sse - sse;
            // features and thresholds scan in ascending order, so replacing
            // only on a strictly larger gain realizes the tie rule (lowest
            // feature index, then lowest threshold)
            if (gain > kMinGain && (!best.found || gain > best.gain)) {
                best.found = true;
                best.feature = f;
                best.threshold = vals[i].first;
                best.gain = gain;
            }
        }
    }
    return best;
}

struct TreeBuilder {
    const Mat& x;
    const Vec& y;
    TreeConfig cfg;
    Rng* rng = nullptr;              // feature subsampling when set
    double feature_fraction = 1.0;
    RegressionTree tree;

    std::vector<int> pick_features() {
        const int width = static_cast<int>(x.cols());
        std::vector<int> all(width);
        std::iota(all.begin(), all.end(), 0);
        if (!rng || feature_fraction >= 1.0) return all;
        int k = std::max(1, static_cast<int>(std::ceil(feature_fraction * width)));
        rng->shuffle(all);
        all.resize(k);
        std::sort(all.begin(), all.end());
        return all;
    }

    int build(const std::vector<int>& rows, int depth) {
        double mean = 0.0;
        for (int r : rows) mean += y[r];
        mean /= static_cast<double>(rows.size());
        int id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        tree.nodes[id].value = mean;
        bool depth_ok = cfg.max_depth <= 0 || depth < cfg.max_depth;
        if (!depth_ok || static_cast<int>(rows.size()) < 2 * cfg.min_leaf)
            return id;
        SplitChoice split = best_split(x, y, rows, pick_features(), cfg.min_leaf);
        if (!split.found) return id;
        std::vector<int> left_rows, right_rows;
        for (int r : rows)
            (x(r, split.feature) <= split.threshold ? left_rows : right_rows)
                .push_back(r);
        tree.nodes[id].feature = split.feature;
        tree.nodes[id].threshold = split.threshold;
        int left = build(left_rows, depth + 1);
        int right = build(right_rows, depth + 1);
        tree.nodes[id].left = left;
        tree.nodes[id].right = right;
        return id;
    }
};

RegressionTree fit_tree_impl(const Mat& x, const Vec& y,
                             const std::vector<int>& rows, const TreeConfig& cfg,
                             Rng* rng, double feature_fraction) {
    if (rows.empty()) throw DataError("fit_tree: empty training data");
    TreeBuilder builder{x, y, cfg, rng, feature_fraction, {}};
    builder.tree.n_features = static_cast<int>(x.cols());
    builder.build(rows, 0);
    return std::move(builder.tree);
}

}  // namespace

double RegressionTree::predict_row(std::span<const double> row) const {
    int id = 0;
    while (!nodes[id].is_leaf())
        id = row[nodes[id].feature] <= nodes[id].threshold ? nodes[id].left
                                                           : nodes[id].right;
    return nodes[id].value;
}

RegressionTree fit_tree(const Mat& features, const Vec& targets,
                        const TreeConfig& cfg) {
    if (features.rows() == 0 || features.rows() != targets.size())
        throw DataError("fit_tree: features and targets must align and be non-empty");
    std::vector<int> rows(features.rows());
    std::iota(rows.begin(), rows.end(), 0);
    return fit_tree_impl(features, targets, rows, cfg, nullptr, 1.0);
}

double ForestModel::predict_row(std::span<const double> row) const {
    double sum = 0.0;
    for (const RegressionTree& t : trees) sum += t.predict_row(row);
    return sum / static_cast<double>(trees.size());
}

ForestModel fit_forest(const Mat& features, const Vec& targets,
                       const ForestConfig& cfg) {
    if (cfg.n_trees < 1) throw DataError("fit_forest: n_trees must be >= 1");
    if (features.rows() == 0 || features.rows() != targets.size())
        throw DataError("fit_forest: features and targets must align and be non-empty");
    ForestModel model;
    model.n_features = static_cast<int>(features.cols());
    TreeConfig tree_cfg{cfg.max_depth, cfg.min_leaf};
    const int n = static_cast<int>(features.rows());
    for (int t = 0; t < cfg.n_trees; ++t) {
        Rng rng(cfg.seed + 0x9e3779b97f4a7c15ull * static_cast<uint64_t>(t + 1));
        std::vector<int> rows(n);
        if (cfg.bootstrap) {
            for (int i = 0; i < n; ++i) rows[i] = static_cast<int>(rng.below(n));
            std::sort(rows.begin(), rows.end());
        } else {
            std::iota(rows.begin(), rows.end(), 0);
        }
        model.trees.push_back(fit_tree_impl(features, targets, rows, tree_cfg,
                                            cfg.feature_fraction < 1.0 ? &rng : nullptr,
                                            cfg.feature_fraction));
    }
    return model;
}

double GbdtModel::predict_row(std::span<const double> row) const {
    double sum = initial;
    for (const RegressionTree& t : stages)
        sum += learning_rate * t.predict_row(row);
    return sum;
}

GbdtModel fit_gbdt(const Mat& features, const Vec& targets,
                   const GbdtConfig& cfg) {
    if (cfg.n_stages < 1) throw DataError("fit_gbdt: n_stages must be >= 1");
    if (features.rows() == 0 || features.rows() != targets.size())
        throw DataError("fit_gbdt: features and targets must align and be non-empty");
    GbdtModel model;
    model.n_features = static_cast<int>(features.cols());
    model.learning_rate = cfg.learning_rate;
    const int n = static_cast<int>(features.rows());
    model.initial = std::accumulate(targets.begin(), targets.end(), 0.0) / n;
    Vec residual(n);
    Vec predicted(n, model.initial);
    TreeConfig tree_cfg{cfg.max_depth, cfg.min_leaf};
    std::vector<int> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    for (int stage = 0; stage < cfg.n_stages; ++stage) {
        for (int i = 0; i < n; ++i) residual[i] = targets[i] - predicted[i];
        RegressionTree tree = fit_tree_impl(features, residual, rows, tree_cfg,
                                            nullptr, 1.0);
        double sse = 0.0;
        for (int i = 0; i < n; ++i) {
            predicted[i] += cfg.learning_rate * tree.predict_row(
                std::span<const double>(features.row(i), features.cols()));
            double r = targets[i] - predicted[i];
            sse += r * r;
        }
        model.training_mse.push_back(sse / n);
        model.stages.push_back(std::move(tree));
    }
    return model;
}

namespace {

template <class Model>
Vec predict_rows(const Model& model, const Mat& features) {
    if (static_cast<int>(features.cols()) != model.n_features)
        throw DataError("predict_baseline: feature width " +
                        std::to_string(features.cols()) +
                        " does not match training width " +
                        std::to_string(model.n_features));
    Vec out(features.rows());
    for (std::size_t i = 0; i < features.rows(); ++i)
        out[i] = model.predict_row(
            std::span<const double>(features.row(i), features.cols()));
    return out;
}

ordered_json tree_json(const RegressionTree& tree) {
    ordered_json nodes = ordered_json::array();
    for (const TreeNode& n : tree.nodes) {
        if (n.is_leaf()) {
            nodes.push_back({{"value", n.value}});
        } else {
            nodes.push_back({{"feature", n.feature},
                             {"threshold", n.threshold},
                             {"left", n.left},
                             {"right", n.right},
                             {"value", n.value}});
        }
    }
    return ordered_json{{"n_features", tree.n_features}, {"nodes", nodes}};
}

RegressionTree tree_from(const ordered_json& j) {
    RegressionTree tree;
    tree.n_features = j.at("n_features").get<int>();
    for (const auto& nj : j.at("nodes")) {
        TreeNode n;
        n.value = nj.at("value").get<double>();
        if (nj.contains("feature")) {
            n.feature = nj.at("feature").get<int>();
            n.threshold = nj.at("threshold").get<double>();
            n.left = nj.at("left").get<int>();
            n.right = nj.at("right").get<int>();
        }
        tree.nodes.push_back(n);
    }
    if (tree.nodes.empty()) throw DataError("tree JSON holds no nodes");
    return tree;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << text;
    if (!out) throw DataError("write failed: " + path);
}

ordered_json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    try {
        ordered_json j;
        in >> j;
        return j;
    } catch (const std::exception& e) {
        throw DataError("invalid JSON in " + path + ": " + e.what());
    }
}

}  // namespace

Vec predict_baseline(const RegressionTree& model, const Mat& features) {
    return predict_rows(model, features);
}
Vec predict_baseline(const ForestModel& model, const Mat& features) {
    return predict_rows(model, features);
}
Vec predict_baseline(const GbdtModel& model, const Mat& features) {
    return predict_rows(model, features);
}

std::string tree_to_json(const RegressionTree& tree) {
    return tree_json(tree).dump(2);
}

RegressionTree tree_from_json(const std::string& text) {
    try {
        return tree_from(ordered_json::parse(text));
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError(std::string("invalid tree JSON: ") + e.what());
    }
}

void save_tree_json(const RegressionTree& tree, const std::string& path) {
    write_text(path, tree_to_json(tree) + "\n");
}

RegressionTree load_tree_json(const std::string& path) {
    return tree_from(read_json_file(path));
}

void save_forest_json(const ForestModel& model, const std::string& path) {
    ordered_json trees = ordered_json::array();
    for (const RegressionTree& t : model.trees) trees.push_back(tree_json(t));
    ordered_json j{{"kind", "forest"}, {"n_features", model.n_features}, {"trees", trees}};
    write_text(path, j.dump(2) + "\n");
}

ForestModel load_forest_json(const std::string& path) {
    ordered_json j = read_json_file(path);
    if (j.value("kind", "") != "forest") throw DataError(path + ": not a forest model");
    ForestModel model;
    model.n_features = j.at("n_features").get<int>();
    for (const auto& tj : j.at("trees")) model.trees.push_back(tree_from(tj));
    if (model.trees.empty()) throw DataError(path + ": forest holds no trees");
    return model;
}

void save_gbdt_json(const GbdtModel& model, const std::string& path) {
    ordered_json stages = ordered_json::array();
    for (const RegressionTree& t : model.stages) stages.push_back(tree_json(t));
    ordered_json j{{"kind", "gbdt"},
                   {"n_features", model.n_features},
                   {"initial", model.initial},
                   {"learning_rate", model.learning_rate},
                   {"stages", stages}};
    write_text(path, j.dump(2) + "\n");
}

GbdtModel load_gbdt_json(const std::string& path) {
    ordered_json j = read_json_file(path);
    if (j.value("kind", "") != "gbdt") throw DataError(path + ": not a gbdt model");
    GbdtModel model;
    model.n_features = j.at("n_features").get<int>();
    model.initial = j.at("initial").get<double>();
    model.learning_rate = j.at("learning_rate").get<double>();
    for (const auto& tj : j.at("stages")) model.stages.push_back(tree_from(tj));
    return model;
}

}  // namespace scenescore
