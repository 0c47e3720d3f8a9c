#include "scenescore/scenescape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <thread>

#include "scenescore/common.hpp"
#include "scenescore/rng.hpp"

namespace scenescore {

Vec sentence_embed(const Mat& hidden, const std::vector<uint8_t>& content) {
    Vec out(hidden.cols(), 0.0);
    long n = 0;
    for (std::size_t j = 0; j < hidden.rows() && j < content.size(); ++j) {
        if (!content[j]) continue;
        const double* row = hidden.row(j);
        for (std::size_t i = 0; i < hidden.cols(); ++i) out[i] += row[i];
        ++n;
    }
    if (n == 0) throw DataError("sentence_embed: no content positions");
    for (double& v : out) v /= static_cast<double>(n);
    return out;
}

namespace {

void parallel_rows(std::size_t n, int threads, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (threads <= 1 || n < 64) {
        fn(0, n);
        return;
    }
    int used = std::min<std::size_t>(threads, n);
    std::vector<std::thread> pool;
    std::size_t chunk = (n + used - 1) / used;
    for (int t = 0; t < used; ++t) {
        std::size_t lo = t * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back(fn, lo, hi);
    }
    for (auto& th : pool) th.join();
}

Mat squared_distances(const Mat& x, int threads) {
    const std::size_t n = x.rows();
    Mat d(n, n);
    parallel_rows(n, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const double* xi = x.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double* xj = x.row(j);
                double s = 0.0;
                for (std::size_t c = 0; c < x.cols(); ++c) {
                    double diff = xi[c] - xj[c];
                    s += diff * diff;
                }
                d(i, j) = s;
            }
        }
    });
    return d;
}

/// Row of conditional affinities for one point, bandwidth calibrated by
/// bisection so that exp(H) matches the target perplexity within 1e-4.
Vec conditional_row(const Mat& sqd, std::size_t i, double perplexity) {
    const std::size_t n = sqd.rows();
    Vec p(n, 0.0);
    double beta = 1.0;
    double beta_min = -std::numeric_limits<double>::infinity();
    double beta_max = std::numeric_limits<double>::infinity();
    const double log_target = std::log(perplexity);
    for (int step = 0; step < 50; ++step) {
        double sum = 0.0, weighted = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) {
                p[j] = 0.0;
                continue;
            }
            p[j] = std::exp(-beta * sqd(i, j));
            sum += p[j];
            weighted += sqd(i, j) * p[j];
        }
        double entropy;
        if (sum <= 0.0) {
            entropy = 0.0;
        } else {
            entropy = std::log(sum) + beta * weighted / sum;
            for (std::size_t j = 0; j < n; ++j) p[j] /= sum;
        }
        if (std::abs(std::exp(entropy) - perplexity) < 1e-4) break;
        if (entropy > log_target) {
            beta_min = beta;
            beta = std::isinf(beta_max) ? beta * 2.0 : (beta + beta_max) / 2.0;
        } else {
            beta_max = beta;
            beta = std::isinf(beta_min) ? beta / 2.0 : (beta + beta_min) / 2.0;
        }
    }
    return p;
}

double kl_divergence(const Mat& p, const Mat& y) {
    const std::size_t n = p.rows();
    double z = 0.0;
    Mat num(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double dx = y(i, 0) - y(j, 0);
            double dy = y(i, 1) - y(j, 1);
            double q = 1.0 / (1.0 + dx * dx + dy * dy);
            num(i, j) = q;
            num(j, i) = q;
            z += 2.0 * q;
        }
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double pij = p(i, j);
            if (pij <= 0.0) continue;
            double qij = std::max(num(i, j) / z, 1e-12);
            kl += pij * std::log(pij / qij);
        }
    return kl;
}

}  // namespace

Vec tsne_conditional_row(const Mat& x, std::size_t i, double perplexity) {
    Mat sqd = squared_distances(x, 1);
    return conditional_row(sqd, i, perplexity);
}

Mat tsne_affinities(const Mat& x, double perplexity) {
    const std::size_t n = x.rows();
    Mat sqd = squared_distances(x, 1);
    Mat cond(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec row = conditional_row(sqd, i, perplexity);
        for (std::size_t j = 0; j < n; ++j) cond(i, j) = row[j];
    }
    Mat p(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            p(i, j) = (cond(i, j) + cond(j, i)) / (2.0 * n);
    return p;
}

TsneResult tsne(const Mat& x, const TsneConfig& cfg) {
    const std::size_t n = x.rows();
    if (n < 4) throw DataError("tsne: need at least 4 points");
    if (!x.all_finite()) throw DataError("tsne: non-finite input");
    TsneResult result;
    double perplexity = cfg.perplexity;
    if (static_cast<double>(n) < 3.0 * perplexity) {
        perplexity = std::floor((static_cast<double>(n) - 1.0) / 3.0);
        result.perplexity_reduced = true;
        if (perplexity < 1.0) throw DataError("tsne: too few points for any perplexity");
    }
    result.perplexity_used = perplexity;

    Mat sqd = squared_distances(x, cfg.threads);
    Mat cond(n, n);
    parallel_rows(n, cfg.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            Vec row = conditional_row(sqd, i, perplexity);
            for (std::size_t j = 0; j < n; ++j) cond(i, j) = row[j];
        }
    });
    Mat p(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            p(i, j) = (cond(i, j) + cond(j, i)) / (2.0 * n);

    Rng rng(cfg.seed);
    Mat y(n, 2);
    for (double& v : y.data()) v = rng.gaussian(0.0, 1e-4);
    result.kl_initial = kl_divergence(p, y);

    Mat velocity(n, 2);
    Mat grad(n, 2);
    Mat qnum(n, n);
    for (int it = 0; it < cfg.iterations; ++it) {
        const bool exaggerated = it < cfg.exaggeration_iters;
        const double p_scale = exaggerated ? cfg.early_exaggeration : 1.0;
        const double momentum =
            it < cfg.momentum_switch ? cfg.momentum_early : cfg.momentum_late;
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double dx = y(i, 0) - y(j, 0);
                double dy = y(i, 1) - y(j, 1);
                double q = 1.0 / (1.0 + dx * dx + dy * dy);
                qnum(i, j) = q;
                qnum(j, i) = q;
                z += 2.0 * q;
            }
        }
        parallel_rows(n, cfg.threads, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                double gx = 0.0, gy = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) continue;
                    double q = qnum(i, j);
                    double coeff = (p_scale * p(i, j) - q / z) * q;
                    gx += coeff * (y(i, 0) - y(j, 0));
                    gy += coeff * (y(i, 1) - y(j, 1));
                }
                grad(i, 0) = 4.0 * gx;
                grad(i, 1) = 4.0 * gy;
            }
        });
        double mean_x = 0.0, mean_y = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            velocity(i, 0) = momentum * velocity(i, 0) - cfg.learning_rate * grad(i, 0);
            velocity(i, 1) = momentum * velocity(i, 1) - cfg.learning_rate * grad(i, 1);
            y(i, 0) += velocity(i, 0);
            y(i, 1) += velocity(i, 1);
            mean_x += y(i, 0);
            mean_y += y(i, 1);
        }
        mean_x /= n;
        mean_y /= n;
        for (std::size_t i = 0; i < n; ++i) {
            y(i, 0) -= mean_x;
            y(i, 1) -= mean_y;
        }
    }
    if (!y.all_finite()) throw NumericError("tsne: embedding diverged");
    result.kl_final = kl_divergence(p, y);
    result.y = std::move(y);
    return result;
}

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    }
};

struct DendroNode {
    int left = -1, right = -1;  // node ids (< N => leaf point)
    double distance = 0.0;
    int size = 0;
};

struct CondensedCluster {
    int parent = -1;
    double lambda_birth = 0.0;
    std::vector<int> children;                       // condensed cluster ids
    std::vector<std::pair<int, double>> points;      // (point, lambda at exit)
    double stability = 0.0;
};

}  // namespace

HdbscanResult hdbscan(const Mat& x, const HdbscanConfig& cfg) {
    const int n = static_cast<int>(x.rows());
    if (n <= cfg.min_cluster_size)
        throw DataError("hdbscan: need more points than min_cluster_size");
    if (cfg.min_samples < 1 || cfg.min_samples >= n)
        throw DataError("hdbscan: min_samples must lie in [1, N-1]");
    if (cfg.min_cluster_size < 2)
        throw DataError("hdbscan: min_cluster_size must be at least 2");
    if (!x.all_finite()) throw DataError("hdbscan: non-finite input");

    HdbscanResult result;
    result.core_distances.assign(n, 0.0);

    Mat dist(n, n);
    parallel_rows(n, cfg.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const double* xi = x.row(i);
            for (int j = 0; j < n; ++j) {
                if (static_cast<int>(i) == j) continue;
                const double* xj = x.row(j);
                double s = 0.0;
                for (std::size_t c = 0; c < x.cols(); ++c) {
                    double diff = xi[c] - xj[c];
                    s += diff * diff;
                }
                dist(i, j) = std::sqrt(s);
            }
        }
    });
    parallel_rows(n, cfg.threads, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> row(n - 1);
        for (std::size_t i = lo; i < hi; ++i) {
            int idx = 0;
            for (int j = 0; j < n; ++j)
                if (j != static_cast<int>(i)) row[idx++] = dist(i, j);
            std::nth_element(row.begin(), row.begin() + (cfg.min_samples - 1), row.end());
            result.core_distances[i] = row[cfg.min_samples - 1];
        }
    });

    auto mutual_reach = [&](int a, int b) {
        return std::max({result.core_distances[a], result.core_distances[b], dist(a, b)});
    };

    // Prim MST over the complete mutual-reachability graph
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<int> best_from(n, -1);
    std::vector<bool> in_tree(n, false);
    in_tree[0] = true;
    for (int j = 1; j < n; ++j) {
        best[j] = mutual_reach(0, j);
        best_from[j] = 0;
    }
    for (int added = 1; added < n; ++added) {
        int next = -1;
        for (int j = 0; j < n; ++j) {
            if (in_tree[j]) continue;
            if (next < 0 || best[j] < best[next]) next = j;
        }
        result.mst.push_back({best_from[next], next, best[next]});
        in_tree[next] = true;
        for (int j = 0; j < n; ++j) {
            if (in_tree[j]) continue;
            double w = mutual_reach(next, j);
            if (w < best[j]) {
                best[j] = w;
                best_from[j] = next;
            }
        }
    }

    // single-linkage dendrogram from ascending MST edges
    std::vector<MstEdge> edges = result.mst;
    std::sort(edges.begin(), edges.end(), [](const MstEdge& a, const MstEdge& b) {
        if (a.weight != b.weight) return a.weight < b.weight;
        if (std::min(a.a, a.b) != std::min(b.a, b.b))
            return std::min(a.a, a.b) < std::min(b.a, b.b);
        return std::max(a.a, a.b) < std::max(b.a, b.b);
    });
    std::vector<DendroNode> nodes(2 * n - 1);
    for (int i = 0; i < n; ++i) nodes[i].size = 1;
    std::vector<int> rep(2 * n - 1);  // component root -> current node id
    std::iota(rep.begin(), rep.end(), 0);
    UnionFind uf(n);
    int next_node = n;
    for (const MstEdge& e : edges) {
        int ra = uf.find(e.a);
        int rb = uf.find(e.b);
        DendroNode& node = nodes[next_node];
        node.left = rep[ra];
        node.right = rep[rb];
        node.distance = e.weight;
        node.size = nodes[node.left].size + nodes[node.right].size;
        uf.parent[ra] = rb;
        rep[uf.find(rb)] = next_node;
        ++next_node;
    }
    const int root_node = next_node - 1;

    // condense the hierarchy
    std::vector<CondensedCluster> clusters;
    clusters.push_back({-1, 0.0, {}, {}, 0.0});  // root cluster
    std::vector<int> point_cluster(n, 0);
    std::vector<double> point_lambda(n, std::numeric_limits<double>::infinity());

    struct Item {
        int node;
        int cluster;
    };
    std::vector<Item> stack{{root_node, 0}};
    auto emit_subtree = [&](int start, int cluster, double lambda) {
        std::vector<int> walk{start};
        while (!walk.empty()) {
            int v = walk.back();
            walk.pop_back();
            if (v < n) {
                clusters[cluster].points.push_back({v, lambda});
                point_cluster[v] = cluster;
                point_lambda[v] = lambda;
            } else {
                walk.push_back(nodes[v].left);
                walk.push_back(nodes[v].right);
            }
        }
    };
    while (!stack.empty()) {
        Item item = stack.back();
        stack.pop_back();
        int node_id = item.node;
        if (node_id < n) {
            // single point left in this cluster
            double lambda = clusters[item.cluster].lambda_birth;
            clusters[item.cluster].points.push_back({node_id, lambda});
            point_cluster[node_id] = item.cluster;
            point_lambda[node_id] = lambda;
            continue;
        }
        const DendroNode& node = nodes[node_id];
        double lambda = node.distance > 0.0 ? 1.0 / node.distance : 1e12;
        int ls = nodes[node.left].size;
        int rs = nodes[node.right].size;
        bool left_big = ls >= cfg.min_cluster_size;
        bool right_big = rs >= cfg.min_cluster_size;
        if (left_big && right_big) {
            for (int child_node : {node.left, node.right}) {
                int c = static_cast<int>(clusters.size());
                clusters.push_back({item.cluster, lambda, {}, {}, 0.0});
                clusters[item.cluster].children.push_back(c);
                stack.push_back({child_node, c});
            }
        } else if (left_big) {
            emit_subtree(node.right, item.cluster, lambda);
            stack.push_back({node.left, item.cluster});
        } else if (right_big) {
            emit_subtree(node.left, item.cluster, lambda);
            stack.push_back({node.right, item.cluster});
        } else {
            emit_subtree(node.left, item.cluster, lambda);
            emit_subtree(node.right, item.cluster, lambda);
        }
    }

    // subtree point counts, children first (clusters were appended in
    // discovery order, so reverse index order is a valid bottom-up order)
    std::vector<long> subtree_points(clusters.size(), 0);
    for (std::size_t c = clusters.size(); c-- > 0;) {
        subtree_points[c] = static_cast<long>(clusters[c].points.size());
        for (int child : clusters[c].children) subtree_points[c] += subtree_points[child];
    }

    // excess-of-mass stabilities
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        double birth = clusters[c].lambda_birth;
        double s = 0.0;
        for (const auto& [pt, lambda] : clusters[c].points) s += lambda - birth;
        for (int child : clusters[c].children)
            s += (clusters[child].lambda_birth - birth) *
                 static_cast<double>(subtree_points[child]);
        clusters[c].stability = s;
    }

    // selection, children first
    std::vector<double> propagated(clusters.size(), 0.0);
    std::vector<bool> selected(clusters.size(), false);
    for (std::size_t idx = clusters.size(); idx-- > 0;) {
        double child_sum = 0.0;
        for (int child : clusters[idx].children) child_sum += propagated[child];
        if (idx == 0) {
            propagated[0] = child_sum;  // the root is never selected
            continue;
        }
        if (clusters[idx].children.empty() || clusters[idx].stability >= child_sum) {
            selected[idx] = true;
            propagated[idx] = std::max(clusters[idx].stability, child_sum);
        } else {
            propagated[idx] = child_sum;
        }
    }
    // drop descendants of selected clusters, top-down
    std::vector<int> order{0};
    for (std::size_t q = 0; q < order.size(); ++q)
        for (int child : clusters[order[q]].children) order.push_back(child);
    std::vector<bool> under_selected(clusters.size(), false);
    for (int c : order) {
        if (under_selected[c]) selected[c] = false;
        if (selected[c] || under_selected[c])
            for (int child : clusters[c].children) under_selected[child] = true;
    }

    // labels: nearest selected ancestor in the condensed tree
    result.labels.assign(n, -1);
    std::vector<int> owner(clusters.size(), -1);
    for (int c : order) {
        if (selected[c])
            owner[c] = c;
        else if (clusters[c].parent >= 0)
            owner[c] = owner[clusters[c].parent];
    }
    std::vector<int> cluster_label(clusters.size(), -1);
    int next_label = 0;
    for (int pt = 0; pt < n; ++pt) {
        int c = owner[point_cluster[pt]];
        if (c < 0) continue;
        if (cluster_label[c] < 0) cluster_label[c] = next_label++;
        result.labels[pt] = cluster_label[c];
    }
    return result;
}

int cluster_count(std::span<const int> labels) {
    std::vector<int> seen;
    for (int l : labels)
        if (l >= 0 && std::find(seen.begin(), seen.end(), l) == seen.end())
            seen.push_back(l);
    return static_cast<int>(seen.size());
}

}  // namespace scenescore
