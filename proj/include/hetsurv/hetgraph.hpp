#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hetsurv/rng.hpp"
#include "hetsurv/tensor.hpp"

namespace hetsurv {

enum class NodeKind { Patch, Gene, Clinical };

enum class GeneGroup {
    TumorSuppressor,
    Oncogene,
    ProteinKinase,
    CellDifferentiation,
    CytokineGrowth,
};

constexpr int kGeneGroupCount = 5;

std::string to_string(NodeKind kind);
std::string to_string(GeneGroup group);
GeneGroup gene_group_from_string(const std::string& s);  // throws SchemaError

// Node type label: kind plus, for genes only, the functional group.
struct NodeType {
    NodeKind kind = NodeKind::Patch;
    std::optional<GeneGroup> group;

    std::string label() const;
    static NodeType from_label(const std::string& label);  // throws SchemaError

    bool operator==(const NodeType& o) const { return kind == o.kind && group == o.group; }
};

struct RelationType {
    std::string id;
    NodeKind source = NodeKind::Patch;
    NodeKind target = NodeKind::Patch;
};

// One modality graph: typed nodes, one shared feature matrix, and a binary
// symmetric zero-diagonal adjacency per relation.
struct HetGraph {
    std::vector<NodeType> node_types;
    Tensor features;  // N x D
    std::vector<RelationType> schema;
    std::map<std::string, Tensor> relations;
    // Grid layout for patch graphs (nodes flattened row-major); 0 otherwise.
    int grid_h = 0;
    int grid_w = 0;

    int node_count() const { return static_cast<int>(node_types.size()); }
    bool has_relation(const std::string& id) const { return relations.count(id) > 0; }
    const Tensor& relation(const std::string& id) const;  // throws SchemaError

    // Structural checks on every adjacency: square, binary, symmetric,
    // zero diagonal, feature row count matching the node count.
    void validate() const;
};

// Ordered relation sequence; the unit FER masks and reconstructs.
struct MetaPath {
    std::vector<std::string> relation_ids;
    std::string name;
};

// Relation identifiers used by the builders.
inline constexpr const char* kRelAdjacent = "adjacent";
inline constexpr const char* kRelSameGroup = "same_group";
inline constexpr const char* kRelCrossGroup = "cross_group";
inline constexpr const char* kRelComplete = "complete";

// Patch grid graph: one node per cell, "adjacent" relation over the 8
// grid neighbors, features flattened row-major from [h x w x d].
HetGraph build_pathology_graph(const Tensor& patch_features);

// Gene graph: "same_group" cliques within each group plus one "cross_group"
// edge between the highest-feature-norm representatives of each group pair.
HetGraph build_gene_graph(const Tensor& gene_features, const std::vector<GeneGroup>& groups);

// Clinical graph: one node per record field, single complete relation.
// Field vectors may have different lengths; rows are padded to the longest.
HetGraph build_clinical_graph(const std::vector<Tensor>& record_values);

// Columns d..D-1 zero, first d columns unchanged; d > D is a dimension error.
Tensor zero_pad_features(const Tensor& x, int width);

// Binarized product of the path's relation adjacencies with zero diagonal:
// entry (u,v) = 1 iff a walk of the path's relation sequence joins u to v.
Tensor metapath_adjacency(const HetGraph& g, const MetaPath& path);

// Default meta-path set per node kind.
std::vector<MetaPath> default_metapaths(NodeKind kind);

}  // namespace hetsurv
