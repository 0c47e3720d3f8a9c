#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scenescore/mat.hpp"

namespace scenescore {

/// Mean of the hidden rows at content positions.
Vec sentence_embed(const Mat& hidden, const std::vector<uint8_t>& content);

struct TsneConfig {
    double perplexity = 30.0;
    int iterations = 1000;
    uint64_t seed = 0;
    double learning_rate = 200.0;
    double early_exaggeration = 12.0;
    int exaggeration_iters = 250;
    double momentum_early = 0.5;
    double momentum_late = 0.8;
    int momentum_switch = 250;
    int threads = 1;
};

struct TsneResult {
    Mat y;  // N x 2
    double kl_initial = 0.0;  // without exaggeration, at the random init
    double kl_final = 0.0;    // without exaggeration, at the last iterate
    double perplexity_used = 0.0;
    bool perplexity_reduced = false;
};

/// Exact (quadratic) t-SNE. Per-point bandwidths are calibrated by bisection
/// to the target perplexity within 1e-4 (at most 50 steps). When
/// N < 3 * perplexity the perplexity is reduced to floor((N - 1) / 3).
/// Deterministic given the seed. Throws on non-finite input.
TsneResult tsne(const Mat& x, const TsneConfig& cfg = {});

/// Symmetrized affinity matrix P (sums to 1); exposed for the invariants.
Mat tsne_affinities(const Mat& x, double perplexity);

/// Conditional affinity row for point i (sums to 1, p_ii = 0).
Vec tsne_conditional_row(const Mat& x, std::size_t i, double perplexity);

struct HdbscanConfig {
    int min_cluster_size = 15;
    int min_samples = 10;
    int threads = 1;
};

struct MstEdge {
    int a = 0, b = 0;
    double weight = 0.0;
};

struct HdbscanResult {
    std::vector<int> labels;           // -1 = noise, else 0..C-1
    std::vector<double> core_distances;
    std::vector<MstEdge> mst;          // over mutual-reachability distances
};

/// Density clustering: core distances at min_samples, mutual-reachability
/// MST, single-linkage hierarchy, condensation at min_cluster_size, and
/// excess-of-mass cluster extraction. The root is never selected, so a
/// structureless cloud comes back as all noise.
HdbscanResult hdbscan(const Mat& x, const HdbscanConfig& cfg = {});

int cluster_count(std::span<const int> labels);

}  // namespace scenescore
