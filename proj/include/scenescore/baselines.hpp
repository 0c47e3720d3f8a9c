#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scenescore/mat.hpp"

namespace scenescore {

struct TreeConfig {
    int max_depth = 12;       // <= 0 means unlimited
    int min_leaf = 5;
};

struct TreeNode {
    int feature = -1;         // -1 marks a leaf
    double threshold = 0.0;   // go left when x[feature] <= threshold
    int left = -1, right = -1;
    double value = 0.0;       // leaf mean

    bool is_leaf() const { return feature < 0; }
};

/// CART regression tree: greedy variance-reduction splits, thresholds taken
/// from training values, ties broken by lowest feature index then lowest
/// threshold.
struct RegressionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    int n_features = 0;

    double predict_row(std::span<const double> row) const;
};

RegressionTree fit_tree(const Mat& features, const Vec& targets,
                        const TreeConfig& cfg = {});

struct ForestConfig {
    int n_trees = 100;
    double feature_fraction = 1.0;
    bool bootstrap = true;
    int max_depth = 12;
    int min_leaf = 5;
    uint64_t seed = 0;
};

/// Bagged trees; the prediction is the exact mean of the member trees.
struct ForestModel {
    std::vector<RegressionTree> trees;
    int n_features = 0;

    double predict_row(std::span<const double> row) const;
};

ForestModel fit_forest(const Mat& features, const Vec& targets,
                       const ForestConfig& cfg = {});

struct GbdtConfig {
    int n_stages = 100;
    double learning_rate = 0.1;
    int max_depth = 3;
    int min_leaf = 5;
};

/// Least-squares boosting: stage m fits a depth-limited tree to the current
/// residuals. Prediction = initial constant + learning_rate * sum of stages.
struct GbdtModel {
    double initial = 0.0;
    double learning_rate = 0.1;
    std::vector<RegressionTree> stages;
    int n_features = 0;
    Vec training_mse;  // after each stage; non-increasing

    double predict_row(std::span<const double> row) const;
};

GbdtModel fit_gbdt(const Mat& features, const Vec& targets,
                   const GbdtConfig& cfg = {});

/// Batch prediction; throws DataError when the feature width differs from
/// training.
Vec predict_baseline(const RegressionTree& model, const Mat& features);
Vec predict_baseline(const ForestModel& model, const Mat& features);
Vec predict_baseline(const GbdtModel& model, const Mat& features);

/// JSON persistence (node arrays with feature, threshold, children, value).
std::string tree_to_json(const RegressionTree& tree);
RegressionTree tree_from_json(const std::string& text);
void save_forest_json(const ForestModel& model, const std::string& path);
ForestModel load_forest_json(const std::string& path);
void save_gbdt_json(const GbdtModel& model, const std::string& path);
GbdtModel load_gbdt_json(const std::string& path);
void save_tree_json(const RegressionTree& tree, const std::string& path);
RegressionTree load_tree_json(const std::string& path);

}  // namespace scenescore
