#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include "triage/detectors.hpp"

namespace triage {

namespace {

std::vector<std::size_t> draw_bootstrap(std::size_t n, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> out(n);
    for (auto& v : out) {
        v = pick(rng);
    }
    return out;
}

struct Split {
    int feature = -1;
    double threshold = 0.0;
    double score = -1.0;
};

class TreeBuilder {
public:
    TreeBuilder(const std::vector<double>& x, const std::vector<int>& y, std::size_t dim, const ForestConfig& cfg,
                int features_per_split)
        : x_(x), y_(y), dim_(dim), cfg_(cfg), k_(features_per_split) {}

    DecisionTree build(std::uint64_t tree_seed) {
        std::mt19937_64 rng(tree_seed);
        idx_ = draw_bootstrap(y_.size(), rng);
        DecisionTree tree;
        grow(tree, 0, idx_.size(), 0, rng);
        return tree;
    }

private:
    int grow(DecisionTree& tree, std::size_t begin, std::size_t end, int depth, std::mt19937_64& rng) {
        const int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        const auto n = end - begin;
        std::size_t pos = 0;
        for (auto i = begin; i < end; ++i) {
            pos += static_cast<std::size_t>(y_[idx_[i]]);
        }
        tree.nodes[node_id].samples = static_cast<int>(n);
        tree.nodes[node_id].value = static_cast<double>(pos) / static_cast<double>(n);

        const auto min_leaf = static_cast<std::size_t>(std::max(1, cfg_.min_samples_leaf));
        if (depth >= cfg_.max_depth || pos == 0 || pos == n || n < 2 * min_leaf) {
            return node_id;
        }
        const Split best = find_split(begin, end, pos, min_leaf, rng);
        if (best.feature < 0) {
            return node_id;
        }
        const auto f = static_cast<std::size_t>(best.feature);
        auto mid = std::stable_partition(idx_.begin() + static_cast<std::ptrdiff_t>(begin),
                                         idx_.begin() + static_cast<std::ptrdiff_t>(end),
                                         [&](std::size_t r) { return x_[r * dim_ + f] <= best.threshold; });
        const auto split_at = static_cast<std::size_t>(mid - idx_.begin());
        tree.nodes[node_id].feature = best.feature;
        tree.nodes[node_id].threshold = best.threshold;
        const int left = grow(tree, begin, split_at, depth + 1, rng);
        const int right = grow(tree, split_at, end, depth + 1, rng);
        tree.nodes[node_id].left = left;
        tree.nodes[node_id].right = right;
        return node_id;
    }

    Split find_split(std::size_t begin, std::size_t end, std::size_t pos, std::size_t min_leaf,
                     std::mt19937_64& rng) {
        // Sample k distinct candidate features, then scan them in index order so
        // that ties keep the lowest feature index and the lowest threshold.
        std::vector<int> features(dim_);
        std::iota(features.begin(), features.end(), 0);
        for (int i = 0; i < k_; ++i) {
            std::uniform_int_distribution<int> pick(i, static_cast<int>(dim_) - 1);
            std::swap(features[static_cast<std::size_t>(i)], features[static_cast<std::size_t>(pick(rng))]);
        }
        features.resize(static_cast<std::size_t>(k_));
        std::sort(features.begin(), features.end());

        const auto n = end - begin;
        const double total_pos = static_cast<double>(pos);
        const double total_neg = static_cast<double>(n - pos);
        Split best;
        buf_.resize(n);
        for (int f : features) {
            const auto fu = static_cast<std::size_t>(f);
            for (std::size_t i = 0; i < n; ++i) {
                const auto r = idx_[begin + i];
                buf_[i] = {x_[r * dim_ + fu], y_[r]};
            }
            std::sort(buf_.begin(), buf_.end());
            double lp = 0.0;
            for (std::size_t i = 0; i + 1 < n; ++i) {
                lp += buf_[i].second;
                if (buf_[i].first == buf_[i + 1].first) {
                    continue;
                }
                const auto nl = i + 1;
                const auto nr = n - nl;
                if (nl < min_leaf || nr < min_leaf) {
                    continue;
                }
                const double ln = static_cast<double>(nl) - lp;
                const double rp = total_pos - lp;
                const double rn = total_neg - ln;
                // maximizing this is minimizing the size-weighted Gini impurity
                const double score = (lp * lp + ln * ln) / static_cast<double>(nl) +
                                     (rp * rp + rn * rn) / static_cast<double>(nr);
                if (score > best.score * (1.0 + 1e-12) + 1e-300) {
                    double thr = 0.5 * (buf_[i].first + buf_[i + 1].first);
                    if (!(thr < buf_[i + 1].first)) {
                        thr = buf_[i].first;
                    }
                    best = {f, thr, score};
                }
            }
        }
        return best;
    }

    const std::vector<double>& x_;
    const std::vector<int>& y_;
    std::size_t dim_;
    const ForestConfig& cfg_;
    int k_;
    std::vector<std::size_t> idx_;
    std::vector<std::pair<double, int>> buf_;
};

}  // namespace

double DecisionTree::predict_one(std::span<const double> x) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
        const auto& node = nodes[static_cast<std::size_t>(i)];
        i = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
}

int DecisionTree::depth() const {
    std::vector<std::pair<int, int>> stack{{0, 0}};
    int deepest = 0;
    while (!stack.empty()) {
        auto [i, d] = stack.back();
        stack.pop_back();
        deepest = std::max(deepest, d);
        const auto& node = nodes[static_cast<std::size_t>(i)];
        if (node.feature >= 0) {
            stack.emplace_back(node.left, d + 1);
            stack.emplace_back(node.right, d + 1);
        }
    }
    return deepest;
}

double ForestModel::predict_one(std::span<const double> x) const {
    if (x.size() != n_features) {
        throw std::invalid_argument("forest: dimension mismatch");
    }
    double sum = 0.0;
    for (const auto& t : trees) {
        sum += t.predict_one(x);
    }
    return sum / static_cast<double>(trees.size());
}

std::vector<std::size_t> bootstrap_sample(std::size_t n, std::uint64_t tree_seed) {
    std::mt19937_64 rng(tree_seed);
    return draw_bootstrap(n, rng);
}

ForestModel train_forest(const AlertStream& stream, const ForestConfig& config) {
    if (stream.empty()) {
        throw std::invalid_argument("train_forest: empty stream");
    }
    const auto pos = stream.positives();
    if (pos == 0 || pos == stream.size()) {
        throw std::invalid_argument("train_forest: training data contains a single class");
    }
    if (config.n_trees < 1 || config.max_depth < 0 || config.min_samples_leaf < 1) {
        throw std::invalid_argument("train_forest: invalid configuration");
    }
    const auto d = stream.dim();
    int k = config.features_per_split > 0 ? config.features_per_split
                                          : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));
    k = std::clamp(k, 1, static_cast<int>(d));

    std::vector<double> x;
    std::vector<int> y;
    x.reserve(stream.size() * d);
    y.reserve(stream.size());
    for (const auto& a : stream.alerts()) {
        x.insert(x.end(), a.features.begin(), a.features.end());
        y.push_back(a.label);
    }

    ForestModel model;
    model.config = config;
    model.config.features_per_split = k;
    model.n_features = d;
    model.feature_names = stream.feature_names();
    model.trees.resize(static_cast<std::size_t>(config.n_trees));

    unsigned workers = config.threads > 0 ? static_cast<unsigned>(config.threads) : std::thread::hardware_concurrency();
    workers = std::clamp(workers, 1U, static_cast<unsigned>(config.n_trees));
    auto work = [&](unsigned w) {
        TreeBuilder builder(x, y, d, model.config, k);
        for (auto i = static_cast<std::size_t>(w); i < model.trees.size(); i += workers) {
            model.trees[i] = builder.build(config.seed + i);
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back(work, w);
        }
    }
    return model;
}

}  // namespace triage
