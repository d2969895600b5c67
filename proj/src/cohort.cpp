#include "hetsurv/cohort.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "hetsurv/errors.hpp"

namespace hetsurv {

using nlohmann::json;

char modality_letter(Modality m) {
    switch (m) {
        case Modality::Pathology: return 'P';
        case Modality::Genomic: return 'G';
        case Modality::Clinical: return 'C';
    }
    return '?';
}

std::string modality_name(Modality m) {
    switch (m) {
        case Modality::Pathology: return "pathology";
        case Modality::Genomic: return "genomic";
        case Modality::Clinical: return "clinical";
    }
    return "?";
}

NodeKind modality_node_kind(Modality m) {
    switch (m) {
        case Modality::Pathology: return NodeKind::Patch;
        case Modality::Genomic: return NodeKind::Gene;
        case Modality::Clinical: return NodeKind::Clinical;
    }
    return NodeKind::Patch;
}

int Scheme::arity() const { return (use[0] ? 1 : 0) + (use[1] ? 1 : 0) + (use[2] ? 1 : 0); }

std::vector<Modality> Scheme::modalities() const {
    std::vector<Modality> out;
    for (int i = 0; i < kModalityCount; ++i) {
        if (use[i]) out.push_back(static_cast<Modality>(i));
    }
    return out;
}

std::string Scheme::label() const {
    std::string s;
    for (Modality m : modalities()) s += modality_letter(m);
    return s;
}

Scheme Scheme::parse(const std::string& text) {
    Scheme s;
    for (char raw : text) {
        if (raw == '&' || raw == ' ') continue;
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
        switch (c) {
            case 'P': s.use[0] = true; break;
            case 'G': s.use[1] = true; break;
            case 'C': s.use[2] = true; break;
            default: throw ConfigError(std::string("invalid scheme letter '") + raw + "' in \"" + text + "\"");
        }
    }
    if (s.arity() == 0) throw ConfigError("scheme must name at least one modality: \"" + text + "\"");
    return s;
}

std::vector<Scheme> Scheme::all_seven() {
    std::vector<Scheme> out;
    for (const char* label : {"P", "G", "C", "PG", "PC", "GC", "PGC"}) out.push_back(parse(label));
    return out;
}

bool Scheme::operator==(const Scheme& o) const {
    return use[0] == o.use[0] && use[1] == o.use[1] && use[2] == o.use[2];
}

bool Scheme::operator<(const Scheme& o) const {
    if (arity() != o.arity()) return arity() < o.arity();
    return label() < o.label();
}

bool PatientRecord::has(Modality m) const {
    switch (m) {
        case Modality::Pathology: return pathology.has_value();
        case Modality::Genomic: return genomic.has_value();
        case Modality::Clinical: return clinical.has_value();
    }
    return false;
}

const HetGraph& PatientRecord::graph(Modality m) const {
    if (!has(m)) {
        throw MissingModalityError("patient " + id + " has no " + modality_name(m) + " modality");
    }
    switch (m) {
        case Modality::Pathology: return *pathology;
        case Modality::Genomic: return *genomic;
        case Modality::Clinical: return *clinical;
    }
    throw MissingModalityError("unreachable");
}

std::optional<HetGraph>& PatientRecord::slot(Modality m) {
    switch (m) {
        case Modality::Genomic: return genomic;
        case Modality::Clinical: return clinical;
        default: return pathology;
    }
}

// ---------------------------------------------------------------------------
// Synthetic cohort
// ---------------------------------------------------------------------------

namespace {

// Standard normal CDF, used to bucket the latent factor into one-hot fields.
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

Tensor signal_matrix(int rows, int d, int signal_dims, double z_unit, double signal, double noise,
                     Rng& rng) {
    Tensor t({rows, d});
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < d; ++j) {
            double v = noise * rng.normal();
            if (j < signal_dims) v += signal * z_unit;
            t.at(i, j) = v;
        }
    }
    return t;
}

}  // namespace

SyntheticCohort generate_synthetic_cohort(const CohortSpec& spec, std::uint64_t seed) {
    if (spec.n_patients < 2) throw ConfigError("synthetic cohort needs at least 2 patients");
    if (spec.censor_rate < 0.0 || spec.censor_rate >= 1.0) {
        throw ConfigError("censor_rate must lie in [0, 1), got " + std::to_string(spec.censor_rate));
    }
    if (spec.grid_h < 1 || spec.grid_w < 1 || spec.genes < 1 || spec.clinical_fields < 1 ||
        spec.feature_dim < 1) {
        throw ConfigError("degenerate cohort dimensions");
    }
    if (spec.signal_dims > spec.feature_dim) {
        throw ConfigError("signal_dims exceeds feature_dim");
    }

    const Rng base(seed);
    SyntheticCohort cohort;
    cohort.records.reserve(static_cast<std::size_t>(spec.n_patients));
    cohort.latent_risk.reserve(static_cast<std::size_t>(spec.n_patients));

    // Field widths for the clinical one-hot/scaled vectors, cycled.
    const int field_widths[] = {4, 1, 3, 5, 2, 3};

    for (int p = 0; p < spec.n_patients; ++p) {
        Rng rng = base.derive(static_cast<std::uint64_t>(p));
        const double z = rng.normal(0.0, spec.latent_scale);
        const double z_unit = z / spec.latent_scale;

        PatientRecord rec;
        {
            std::ostringstream os;
            os << "pt" << std::setw(4) << std::setfill('0') << p;
            rec.id = os.str();
        }

        // Pathology: patch grid with the signal planted in leading columns.
        {
            Tensor flat = signal_matrix(spec.grid_h * spec.grid_w, spec.feature_dim, spec.signal_dims,
                                        z_unit, spec.signal, spec.noise, rng);
            Tensor grid({spec.grid_h, spec.grid_w, spec.feature_dim}, flat.values());
            rec.pathology = build_pathology_graph(grid);
        }

        // Genomic: genes dealt round-robin over the five groups.
        {
            Tensor feats = signal_matrix(spec.genes, spec.feature_dim, spec.signal_dims, z_unit,
                                         spec.signal, spec.noise, rng);
            std::vector<GeneGroup> groups;
            groups.reserve(static_cast<std::size_t>(spec.genes));
            for (int i = 0; i < spec.genes; ++i) groups.push_back(static_cast<GeneGroup>(i % kGeneGroupCount));
            rec.genomic = build_gene_graph(feats, groups);
        }

        // Clinical: categorical fields one-hot on a noisy bucketing of z,
        // width-1 fields carry a scaled continuous value.
        {
            std::vector<Tensor> fields;
            fields.reserve(static_cast<std::size_t>(spec.clinical_fields));
            for (int f = 0; f < spec.clinical_fields; ++f) {
                const int width = field_widths[f % 6];
                Tensor field({width});
                if (width == 1) {
                    field[0] = spec.signal * z_unit + spec.noise * rng.normal();
                } else {
                    const double noisy = z_unit + 0.3 * spec.noise * rng.normal();
                    int bucket = static_cast<int>(normal_cdf(noisy) * width);
                    bucket = std::clamp(bucket, 0, width - 1);
                    field[bucket] = 1.0;
                }
                fields.push_back(std::move(field));
            }
            HetGraph g = build_clinical_graph(fields);
            g.features = zero_pad_features(g.features, std::min(g.features.cols(), spec.feature_dim));
            rec.clinical = std::move(g);
        }

        // Align all feature matrices to the shared width.
        rec.pathology->features = zero_pad_features(rec.pathology->features, spec.feature_dim);
        rec.genomic->features = zero_pad_features(rec.genomic->features, spec.feature_dim);
        rec.clinical->features = zero_pad_features(rec.clinical->features, spec.feature_dim);

        // Exponential survival with hazard exp(z); censoring time uniform on (0, t].
        double u = rng.uniform();
        if (u >= 1.0) u = std::nextafter(1.0, 0.0);
        const double t_event = -std::log1p(-u) / std::exp(z);
        if (rng.uniform() < spec.censor_rate) {
            rec.event = 0;
            rec.time = std::max(t_event * rng.uniform(), 1e-12);
        } else {
            rec.event = 1;
            rec.time = std::max(t_event, 1e-12);
        }

        cohort.latent_risk.push_back(z);
        cohort.records.push_back(std::move(rec));
    }
    return cohort;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json tensor_to_json(const Tensor& t) {
    // Nested arrays, row-major.
    if (t.rank() == 1) {
        json arr = json::array();
        for (std::int64_t i = 0; i < t.size(); ++i) arr.push_back(t[i]);
        return arr;
    }
    if (t.rank() == 2) {
        json rows = json::array();
        for (int i = 0; i < t.dim(0); ++i) {
            json row = json::array();
            for (int j = 0; j < t.dim(1); ++j) row.push_back(t.at(i, j));
            rows.push_back(std::move(row));
        }
        return rows;
    }
    throw IoError("tensor_to_json supports rank 1 and 2, got " + t.shape_str());
}

Tensor tensor_from_json(const json& j) {
    if (!j.is_array() || j.empty()) throw ParseError("expected non-empty array for tensor");
    if (j[0].is_array()) {
        const int rows = static_cast<int>(j.size());
        const int cols = static_cast<int>(j[0].size());
        Tensor t({rows, cols});
        for (int i = 0; i < rows; ++i) {
            if (!j[static_cast<std::size_t>(i)].is_array() ||
                static_cast<int>(j[static_cast<std::size_t>(i)].size()) != cols) {
                throw ParseError("ragged feature matrix");
            }
            for (int jj = 0; jj < cols; ++jj) {
                t.at(i, jj) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(jj)].get<double>();
            }
        }
        return t;
    }
    Tensor t({static_cast<int>(j.size())});
    for (std::size_t i = 0; i < j.size(); ++i) t[static_cast<std::int64_t>(i)] = j[i].get<double>();
    return t;
}

json graph_to_json(const HetGraph& g) {
    json out;
    json types = json::array();
    for (const auto& nt : g.node_types) types.push_back(nt.label());
    out["node_types"] = std::move(types);
    out["features"] = tensor_to_json(g.features);
    json rels = json::object();
    for (const auto& [id, adj] : g.relations) {
        json pairs = json::array();
        const int n = adj.dim(0);
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                if (adj.at(i, j) != 0.0) pairs.push_back(json::array({i, j}));
            }
        }
        rels[id] = std::move(pairs);
    }
    out["relations"] = std::move(rels);
    if (g.grid_h > 0) out["grid"] = json::array({g.grid_h, g.grid_w});
    return out;
}

HetGraph graph_from_json(const json& j, Modality m) {
    HetGraph g;
    if (!j.contains("node_types") || !j.contains("features") || !j.contains("relations")) {
        throw ParseError("modality object missing node_types/features/relations");
    }
    for (const auto& lbl : j.at("node_types")) g.node_types.push_back(NodeType::from_label(lbl.get<std::string>()));
    g.features = tensor_from_json(j.at("features"));
    const int n = g.node_count();
    if (g.features.rows() != n) throw ParseError("feature rows do not match node count");
    const NodeKind kind = modality_node_kind(m);
    for (const auto& [id, pairs] : j.at("relations").items()) {
        Tensor adj({n, n});
        for (const auto& pr : pairs) {
            if (!pr.is_array() || pr.size() != 2) throw ParseError("relation edge must be an [i,j] pair");
            const int a = pr[0].get<int>(), b = pr[1].get<int>();
            if (a < 0 || a >= n || b < 0 || b >= n) throw ParseError("edge endpoint out of range");
            adj.at(a, b) = 1.0;
            adj.at(b, a) = 1.0;
        }
        g.schema.push_back({id, kind, kind});
        g.relations.emplace(id, std::move(adj));
    }
    if (j.contains("grid")) {
        g.grid_h = j.at("grid")[0].get<int>();
        g.grid_w = j.at("grid")[1].get<int>();
        if (g.grid_h * g.grid_w != n) throw ParseError("grid layout does not match node count");
    }
    return g;
}

}  // namespace

std::string cohort_to_jsonl(const std::vector<PatientRecord>& records) {
    std::ostringstream os;
    os << json{{"format", kCohortFormat}}.dump() << "\n";
    for (const auto& rec : records) {
        json line;
        line["id"] = rec.id;
        line["time"] = rec.time;
        line["event"] = rec.event;
        if (rec.pathology) line["pathology"] = graph_to_json(*rec.pathology);
        if (rec.genomic) line["genomic"] = graph_to_json(*rec.genomic);
        if (rec.clinical) line["clinical"] = graph_to_json(*rec.clinical);
        os << line.dump() << "\n";
    }
    return os.str();
}

std::vector<PatientRecord> cohort_from_jsonl(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    std::vector<PatientRecord> records;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("cohort line " + std::to_string(line_no) + ": " + e.what());
        }
        if (line_no == 1) {
            if (!j.is_object() || j.value("format", "") != kCohortFormat) {
                throw ParseError("cohort line 1: missing required format key \"" + std::string(kCohortFormat) + "\"");
            }
            continue;
        }
        try {
            PatientRecord rec;
            rec.id = j.at("id").get<std::string>();
            rec.time = j.at("time").get<double>();
            rec.event = j.at("event").get<int>();
            if (rec.time <= 0.0) throw ParseError("non-positive survival time");
            if (rec.event != 0 && rec.event != 1) throw ParseError("event indicator must be 0 or 1");
            if (j.contains("pathology")) rec.pathology = graph_from_json(j.at("pathology"), Modality::Pathology);
            if (j.contains("genomic")) rec.genomic = graph_from_json(j.at("genomic"), Modality::Genomic);
            if (j.contains("clinical")) rec.clinical = graph_from_json(j.at("clinical"), Modality::Clinical);
            if (!rec.pathology && !rec.genomic && !rec.clinical) {
                throw ParseError("patient with no modality");
            }
            records.push_back(std::move(rec));
        } catch (const json::exception& e) {
            throw ParseError("cohort line " + std::to_string(line_no) + " (record " +
                             std::to_string(line_no - 1) + "): " + e.what());
        } catch (const ParseError& e) {
            throw ParseError("cohort line " + std::to_string(line_no) + " (record " +
                             std::to_string(line_no - 1) + "): " + e.what());
        }
    }
    if (line_no == 0) throw ParseError("empty cohort file");
    return records;
}

void write_cohort(const std::vector<PatientRecord>& records, const std::string& path) {
    const std::string payload = cohort_to_jsonl(records);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw IoError("cannot open for writing: " + tmp);
        os << payload;
        if (!os) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("atomic rename failed for " + path + ": " + ec.message());
}

std::vector<PatientRecord> read_cohort(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open cohort file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return cohort_from_jsonl(buf.str());
}

}  // namespace hetsurv
