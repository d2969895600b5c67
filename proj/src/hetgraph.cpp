#include "hetsurv/hetgraph.hpp"

#include <algorithm>
#include <cmath>

#include "hetsurv/errors.hpp"
#include "hetsurv/kernels.hpp"

namespace hetsurv {

std::string to_string(NodeKind kind) {
    switch (kind) {
        case NodeKind::Patch: return "patch";
        case NodeKind::Gene: return "gene";
        case NodeKind::Clinical: return "clinical";
    }
    return "?";
}

std::string to_string(GeneGroup group) {
    switch (group) {
        case GeneGroup::TumorSuppressor: return "tumor_suppressor";
        case GeneGroup::Oncogene: return "oncogene";
        case GeneGroup::ProteinKinase: return "protein_kinase";
        case GeneGroup::CellDifferentiation: return "cell_differentiation";
        case GeneGroup::CytokineGrowth: return "cytokine_growth";
    }
    return "?";
}

GeneGroup gene_group_from_string(const std::string& s) {
    for (int g = 0; g < kGeneGroupCount; ++g) {
        if (to_string(static_cast<GeneGroup>(g)) == s) return static_cast<GeneGroup>(g);
    }
    throw SchemaError("unknown gene group label: " + s);
}

std::string NodeType::label() const {
    if (kind == NodeKind::Gene) {
        if (!group) throw SchemaError("gene node without group label");
        return "gene:" + to_string(*group);
    }
    return to_string(kind);
}

NodeType NodeType::from_label(const std::string& label) {
    if (label == "patch") return {NodeKind::Patch, std::nullopt};
    if (label == "clinical") return {NodeKind::Clinical, std::nullopt};
    if (label.rfind("gene:", 0) == 0) {
        return {NodeKind::Gene, gene_group_from_string(label.substr(5))};
    }
    throw SchemaError("unknown node type label: " + label);
}

const Tensor& HetGraph::relation(const std::string& id) const {
    auto it = relations.find(id);
    if (it == relations.end()) throw SchemaError("relation not present in graph: " + id);
    return it->second;
}

void HetGraph::validate() const {
    const int n = node_count();
    if (features.rows() != n) {
        throw DimensionError("graph features have " + std::to_string(features.rows()) + " rows for " +
                             std::to_string(n) + " nodes");
    }
    for (const auto& [id, adj] : relations) {
        if (adj.rank() != 2 || adj.dim(0) != n || adj.dim(1) != n) {
            throw DimensionError("relation " + id + " adjacency must be " + std::to_string(n) + "x" +
                                 std::to_string(n) + ", got " + adj.shape_str());
        }
        for (int i = 0; i < n; ++i) {
            if (adj.at(i, i) != 0.0) throw SchemaError("relation " + id + " has a nonzero diagonal entry");
            for (int j = 0; j < n; ++j) {
                const double v = adj.at(i, j);
                if (v != 0.0 && v != 1.0) throw SchemaError("relation " + id + " has non-binary entry");
                if (v != adj.at(j, i)) throw SchemaError("relation " + id + " is not symmetric");
            }
        }
    }
}

namespace {

void add_undirected_edge(Tensor& adj, int i, int j) {
    if (i == j) return;
    adj.at(i, j) = 1.0;
    adj.at(j, i) = 1.0;
}

}  // namespace

HetGraph build_pathology_graph(const Tensor& patch_features) {
    if (patch_features.rank() != 3) {
        throw DimensionError("pathology features must be [h x w x d], got " + patch_features.shape_str());
    }
    const int h = patch_features.dim(0), w = patch_features.dim(1), d = patch_features.dim(2);
    const int n = h * w;

    HetGraph g;
    g.grid_h = h;
    g.grid_w = w;
    g.node_types.assign(static_cast<std::size_t>(n), NodeType{NodeKind::Patch, std::nullopt});
    g.features = Tensor({n, d}, patch_features.values());
    g.schema.push_back({kRelAdjacent, NodeKind::Patch, NodeKind::Patch});

    Tensor adj({n, n});
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            for (int di = -1; di <= 1; ++di) {
                for (int dj = -1; dj <= 1; ++dj) {
                    if (di == 0 && dj == 0) continue;
                    const int ni = i + di, nj = j + dj;
                    if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
                    add_undirected_edge(adj, i * w + j, ni * w + nj);
                }
            }
        }
    }
    g.relations.emplace(kRelAdjacent, std::move(adj));
    return g;
}

HetGraph build_gene_graph(const Tensor& gene_features, const std::vector<GeneGroup>& groups) {
    if (gene_features.rank() != 2) {
        throw DimensionError("gene features must be [G x d], got " + gene_features.shape_str());
    }
    const int n = gene_features.dim(0);
    if (static_cast<int>(groups.size()) != n) {
        throw SchemaError("every gene needs a group label: " + std::to_string(groups.size()) + " labels for " +
                          std::to_string(n) + " genes");
    }

    HetGraph g;
    g.features = gene_features;
    g.node_types.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g.node_types.push_back({NodeKind::Gene, groups[static_cast<std::size_t>(i)]});
    g.schema.push_back({kRelSameGroup, NodeKind::Gene, NodeKind::Gene});
    g.schema.push_back({kRelCrossGroup, NodeKind::Gene, NodeKind::Gene});

    Tensor same({n, n});
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (groups[static_cast<std::size_t>(i)] == groups[static_cast<std::size_t>(j)]) {
                add_undirected_edge(same, i, j);
            }
        }
    }

    // Cross-group edges run between the highest-feature-norm member of each
    // nonempty group pair.
    std::vector<int> representative(kGeneGroupCount, -1);
    std::vector<double> best_norm(kGeneGroupCount, -1.0);
    for (int i = 0; i < n; ++i) {
        double norm = 0.0;
        for (int j = 0; j < gene_features.dim(1); ++j) {
            norm += gene_features.at(i, j) * gene_features.at(i, j);
        }
        const int gi = static_cast<int>(groups[static_cast<std::size_t>(i)]);
        if (norm > best_norm[static_cast<std::size_t>(gi)]) {
            best_norm[static_cast<std::size_t>(gi)] = norm;
            representative[static_cast<std::size_t>(gi)] = i;
        }
    }
    Tensor cross({n, n});
    for (int a = 0; a < kGeneGroupCount; ++a) {
        for (int b = a + 1; b < kGeneGroupCount; ++b) {
            const int ra = representative[static_cast<std::size_t>(a)];
            const int rb = representative[static_cast<std::size_t>(b)];
            if (ra >= 0 && rb >= 0) add_undirected_edge(cross, ra, rb);
        }
    }

    g.relations.emplace(kRelSameGroup, std::move(same));
    g.relations.emplace(kRelCrossGroup, std::move(cross));
    return g;
}

HetGraph build_clinical_graph(const std::vector<Tensor>& record_values) {
    if (record_values.empty()) throw DimensionError("clinical graph needs at least one field");
    const int n = static_cast<int>(record_values.size());
    int d = 0;
    for (const auto& field : record_values) {
        if (field.rank() != 1) throw DimensionError("clinical field values must be vectors");
        d = std::max(d, static_cast<int>(field.size()));
    }

    HetGraph g;
    g.node_types.assign(static_cast<std::size_t>(n), NodeType{NodeKind::Clinical, std::nullopt});
    g.features = Tensor({n, d});
    for (int i = 0; i < n; ++i) {
        const Tensor& field = record_values[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < field.size(); ++j) g.features.at(i, static_cast<int>(j)) = field[j];
    }
    g.schema.push_back({kRelComplete, NodeKind::Clinical, NodeKind::Clinical});

    Tensor adj({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) add_undirected_edge(adj, i, j);
    g.relations.emplace(kRelComplete, std::move(adj));
    return g;
}

Tensor zero_pad_features(const Tensor& x, int width) {
    if (x.rank() != 2) throw DimensionError("zero_pad_features expects [N x d], got " + x.shape_str());
    const int n = x.dim(0), d = x.dim(1);
    if (d > width) {
        throw DimensionError("cannot pad " + std::to_string(d) + " columns down to " + std::to_string(width));
    }
    if (d == width) return x;
    Tensor out({n, width});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j);
    return out;
}

Tensor metapath_adjacency(const HetGraph& g, const MetaPath& path) {
    if (path.relation_ids.empty()) throw SchemaError("meta-path must contain at least one relation");
    const int n = g.node_count();
    Tensor product = g.relation(path.relation_ids.front());
    Tensor next({n, n});
    for (std::size_t step = 1; step < path.relation_ids.size(); ++step) {
        const Tensor& rel = g.relation(path.relation_ids[step]);
        kernels::matmul(product.data(), rel.data(), next.data(), n, n, n);
        std::swap(product, next);
    }
    for (int i = 0; i < n; ++i) {
        product.at(i, i) = 0.0;
        for (int j = 0; j < n; ++j) {
            if (product.at(i, j) > 0.0) product.at(i, j) = 1.0;
        }
    }
    return product;
}

std::vector<MetaPath> default_metapaths(NodeKind kind) {
    switch (kind) {
        case NodeKind::Patch:
            return {{{kRelAdjacent}, "adjacent"}, {{kRelAdjacent, kRelAdjacent}, "adjacent2"}};
        case NodeKind::Gene:
            return {{{kRelSameGroup}, "same_group"}, {{kRelSameGroup, kRelCrossGroup}, "same_cross"}};
        case NodeKind::Clinical:
            return {{{kRelComplete}, "complete"}};
    }
    return {};
}

}  // namespace hetsurv
