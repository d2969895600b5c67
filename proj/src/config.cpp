#include "hetsurv/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "hetsurv/errors.hpp"

namespace hetsurv {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected integer, got \"" + v + "\"");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<std::uint64_t>(out);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected unsigned integer, got \"" + v + "\"");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected number, got \"" + v + "\"");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key " + key + ": expected true/false, got \"" + v + "\"");
}

std::vector<Scheme> parse_schemes(const std::string& v) {
    std::vector<Scheme> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(Scheme::parse(item));
    }
    if (out.empty()) throw ConfigError("schemes list is empty");
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t j = i + 1; j < out.size(); ++j) {
            if (out[i] == out[j]) throw ConfigError("duplicate scheme " + out[i].label());
        }
    }
    return out;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

CohortSpec Config::cohort_spec() const {
    CohortSpec spec;
    spec.n_patients = data_patients;
    spec.feature_dim = data_feature_dim;
    spec.grid_h = data_grid_h;
    spec.grid_w = data_grid_w;
    spec.genes = data_genes;
    spec.clinical_fields = data_clinical_fields;
    spec.censor_rate = data_censor_rate;
    spec.latent_scale = data_latent_scale;
    spec.signal = data_signal;
    spec.noise = data_noise;
    spec.signal_dims = data_signal_dims;
    return spec;
}

void Config::validate() const {
    const auto positive = [](const char* key, double v) {
        if (v <= 0) throw ConfigError(std::string("config key ") + key + " must be positive");
    };
    positive("data.patients", data_patients);
    positive("data.feature_dim", data_feature_dim);
    positive("data.grid_h", data_grid_h);
    positive("data.grid_w", data_grid_w);
    positive("data.genes", data_genes);
    positive("data.clinical_fields", data_clinical_fields);
    positive("data.latent_scale", data_latent_scale);
    positive("fer.tau", fer_tau);
    positive("fer.layers", fer_layers);
    positive("cmae.depth", cmae_depth);
    positive("train.batch", train_batch);
    positive("train.lr", train_lr);
    if (data_patients < 2) throw ConfigError("data.patients must be >= 2");
    if (data_censor_rate < 0.0 || data_censor_rate >= 1.0) {
        throw ConfigError("data.censor_rate must lie in [0, 1)");
    }
    if (data_signal_dims < 0 || data_signal_dims > data_feature_dim) {
        throw ConfigError("data.signal_dims must lie in [0, data.feature_dim]");
    }
    if (data_noise < 0.0) throw ConfigError("data.noise must be >= 0");
    if (fer_pe < 0.0 || fer_pe >= 1.0) throw ConfigError("fer.pe must lie in [0, 1)");
    if (cmae_mask_ratio < 0.0 || cmae_mask_ratio >= 1.0) {
        throw ConfigError("cmae.mask_ratio must lie in [0, 1)");
    }
    if (survival_alpha < 0.0 || survival_beta < 0.0) {
        throw ConfigError("survival.alpha and survival.beta must be >= 0");
    }
    if (survival_sign != "neg" && survival_sign != "pos") {
        throw ConfigError("survival.sign must be \"neg\" or \"pos\"");
    }
    if (train_epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (train_dropout < 0.0 || train_dropout >= 1.0) throw ConfigError("train.dropout must lie in [0, 1)");
    if (eval_folds < 2) throw ConfigError("eval.folds must be >= 2");
    if (eval_val_fraction < 0.0 || eval_val_fraction >= 1.0) {
        throw ConfigError("eval.val_fraction must lie in [0, 1)");
    }
    if (eval_mode != "cv" && eval_mode != "single") {
        throw ConfigError("eval.mode must be \"cv\" or \"single\"");
    }
    if (schemes.empty()) throw ConfigError("schemes list is empty");
}

bool Config::operator==(const Config& o) const { return serialize_config(*this) == serialize_config(o); }

void apply_config_entry(Config& config, const std::string& raw_key, const std::string& raw_value) {
    const std::string key = trim(raw_key);
    const std::string v = trim(raw_value);
    if (key == "data.patients") config.data_patients = parse_int(key, v);
    else if (key == "data.feature_dim") config.data_feature_dim = parse_int(key, v);
    else if (key == "data.grid_h") config.data_grid_h = parse_int(key, v);
    else if (key == "data.grid_w") config.data_grid_w = parse_int(key, v);
    else if (key == "data.genes") config.data_genes = parse_int(key, v);
    else if (key == "data.clinical_fields") config.data_clinical_fields = parse_int(key, v);
    else if (key == "data.censor_rate") config.data_censor_rate = parse_double(key, v);
    else if (key == "data.latent_scale") config.data_latent_scale = parse_double(key, v);
    else if (key == "data.signal") config.data_signal = parse_double(key, v);
    else if (key == "data.noise") config.data_noise = parse_double(key, v);
    else if (key == "data.signal_dims") config.data_signal_dims = parse_int(key, v);
    else if (key == "fer.pe") config.fer_pe = parse_double(key, v);
    else if (key == "fer.tau") config.fer_tau = parse_double(key, v);
    else if (key == "fer.layers") config.fer_layers = parse_int(key, v);
    else if (key == "cmae.mask_ratio") config.cmae_mask_ratio = parse_double(key, v);
    else if (key == "cmae.depth") config.cmae_depth = parse_int(key, v);
    else if (key == "cmae.grn.literal") config.cmae_grn_literal = parse_bool(key, v);
    else if (key == "survival.alpha") config.survival_alpha = parse_double(key, v);
    else if (key == "survival.beta") config.survival_beta = parse_double(key, v);
    else if (key == "survival.sign") config.survival_sign = v;
    else if (key == "train.batch") config.train_batch = parse_int(key, v);
    else if (key == "train.epochs") config.train_epochs = parse_int(key, v);
    else if (key == "train.lr") config.train_lr = parse_double(key, v);
    else if (key == "train.dropout") config.train_dropout = parse_double(key, v);
    else if (key == "train.seed") config.train_seed = parse_u64(key, v);
    else if (key == "eval.folds") config.eval_folds = parse_int(key, v);
    else if (key == "eval.val_fraction") config.eval_val_fraction = parse_double(key, v);
    else if (key == "eval.mode") config.eval_mode = v;
    else if (key == "eval.parallel_folds") config.eval_parallel_folds = parse_bool(key, v);
    else if (key == "schemes") config.schemes = parse_schemes(v);
    else throw ConfigError("unknown config key: " + key);
}

Config parse_config(const std::string& text) {
    Config config;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        apply_config_entry(config, line.substr(0, eq), line.substr(eq + 1));
    }
    config.validate();
    return config;
}

Config load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    try {
        return parse_config(buf.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string serialize_config(const Config& c) {
    std::ostringstream os;
    os << "cmae.depth = " << c.cmae_depth << "\n";
    os << "cmae.grn.literal = " << (c.cmae_grn_literal ? "true" : "false") << "\n";
    os << "cmae.mask_ratio = " << format_double(c.cmae_mask_ratio) << "\n";
    os << "data.censor_rate = " << format_double(c.data_censor_rate) << "\n";
    os << "data.clinical_fields = " << c.data_clinical_fields << "\n";
    os << "data.feature_dim = " << c.data_feature_dim << "\n";
    os << "data.genes = " << c.data_genes << "\n";
    os << "data.grid_h = " << c.data_grid_h << "\n";
    os << "data.grid_w = " << c.data_grid_w << "\n";
    os << "data.latent_scale = " << format_double(c.data_latent_scale) << "\n";
    os << "data.noise = " << format_double(c.data_noise) << "\n";
    os << "data.patients = " << c.data_patients << "\n";
    os << "data.signal = " << format_double(c.data_signal) << "\n";
    os << "data.signal_dims = " << c.data_signal_dims << "\n";
    os << "eval.folds = " << c.eval_folds << "\n";
    os << "eval.mode = " << c.eval_mode << "\n";
    os << "eval.parallel_folds = " << (c.eval_parallel_folds ? "true" : "false") << "\n";
    os << "eval.val_fraction = " << format_double(c.eval_val_fraction) << "\n";
    os << "fer.layers = " << c.fer_layers << "\n";
    os << "fer.pe = " << format_double(c.fer_pe) << "\n";
    os << "fer.tau = " << format_double(c.fer_tau) << "\n";
    std::string schemes;
    for (const auto& s : c.schemes) {
        if (!schemes.empty()) schemes += ",";
        schemes += s.label();
    }
    os << "schemes = " << schemes << "\n";
    os << "survival.alpha = " << format_double(c.survival_alpha) << "\n";
    os << "survival.beta = " << format_double(c.survival_beta) << "\n";
    os << "survival.sign = " << c.survival_sign << "\n";
    os << "train.batch = " << c.train_batch << "\n";
    os << "train.dropout = " << format_double(c.train_dropout) << "\n";
    os << "train.epochs = " << c.train_epochs << "\n";
    os << "train.lr = " << format_double(c.train_lr) << "\n";
    os << "train.seed = " << c.train_seed << "\n";
    return os.str();
}

void apply_paper_scale(Config& config) {
    config.train_batch = 128;
    config.train_epochs = 500;
    config.train_lr = 3e-4;
    config.train_dropout = 0.3;
}

std::uint64_t config_hash(const Config& config) {
    const std::string s = serialize_config(config);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace hetsurv
