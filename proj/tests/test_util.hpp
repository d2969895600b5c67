#pragma once

#include <cmath>
#include <vector>

#include "hetsurv/rng.hpp"
#include "hetsurv/survival.hpp"
#include "hetsurv/tensor.hpp"

namespace testutil {

inline hetsurv::Tensor random_tensor(std::vector<int> shape, hetsurv::Rng& rng, double scale = 1.0) {
    hetsurv::Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

// Nudge every parameter off its initialization point. Zero-initialized biases
// park PReLU pre-activations exactly on the kink, where central differences
// straddle two slopes; gradient checks belong at a generic point.
inline void jitter_params(std::vector<hetsurv::ag::Parameter>& params, hetsurv::Rng& rng,
                          double scale = 0.05) {
    for (auto& p : params) {
        for (std::int64_t i = 0; i < p.value().size(); ++i) p.value()[i] += scale * rng.normal();
    }
}

// Random symmetric binary adjacency with zero diagonal.
inline hetsurv::Tensor random_adjacency(int n, double density, hetsurv::Rng& rng) {
    hetsurv::Tensor a({n, n});
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (rng.uniform() < density) {
                a.at(i, j) = 1.0;
                a.at(j, i) = 1.0;
            }
        }
    }
    return a;
}

// Independent oracle for the Cox partial likelihood: the literal double sum
// over events and risk sets, no log-sum-exp rearrangement.
inline double cox_double_sum(const std::vector<double>& scores,
                             const std::vector<hetsurv::SurvivalLabel>& labels) {
    double loss = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i].event) continue;
        double s = 0.0;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j].time >= labels[i].time) s += std::exp(-scores[j]);
        }
        loss += scores[i] + std::log(s);
    }
    return loss;
}

// O(n^2) pair-enumeration oracle for the concordance index, in the same
// doubled-integer arithmetic as the implementation so equality is exact.
inline double cindex_pairs(const std::vector<double>& risks,
                           const std::vector<hetsurv::SurvivalLabel>& labels) {
    long long num2 = 0, comparable = 0;
    for (std::size_t i = 0; i < risks.size(); ++i) {
        if (!labels[i].event) continue;
        for (std::size_t j = 0; j < risks.size(); ++j) {
            if (labels[i].time >= labels[j].time) continue;
            ++comparable;
            if (risks[i] > risks[j]) num2 += 2;
            else if (risks[i] == risks[j]) num2 += 1;
        }
    }
    return static_cast<double>(num2) / (2.0 * static_cast<double>(comparable));
}

// Brute-force typed-walk reachability for meta-path adjacencies.
inline hetsurv::Tensor walk_enumeration(const hetsurv::HetGraph& g,
                                        const std::vector<std::string>& relation_ids) {
    const int n = g.node_count();
    hetsurv::Tensor out({n, n});
    for (int u = 0; u < n; ++u) {
        std::vector<char> frontier(static_cast<std::size_t>(n), 0);
        frontier[static_cast<std::size_t>(u)] = 1;
        for (const auto& rel : relation_ids) {
            const hetsurv::Tensor& adj = g.relation(rel);
            std::vector<char> next(static_cast<std::size_t>(n), 0);
            for (int a = 0; a < n; ++a) {
                if (!frontier[static_cast<std::size_t>(a)]) continue;
                for (int b = 0; b < n; ++b) {
                    if (adj.at(a, b) != 0.0) next[static_cast<std::size_t>(b)] = 1;
                }
            }
            frontier = std::move(next);
        }
        for (int v = 0; v < n; ++v) {
            if (v != u && frontier[static_cast<std::size_t>(v)]) out.at(u, v) = 1.0;
        }
    }
    return out;
}

}  // namespace testutil
