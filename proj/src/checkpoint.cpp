#include "hetsurv/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hetsurv/errors.hpp"

namespace hetsurv {

using nlohmann::json;

std::string checkpoint_to_json(const Pipeline& pipeline, std::uint64_t seed) {
    json out;
    out["format"] = kCheckpointFormat;
    out["seed"] = seed;

    json cfg = json::object();
    std::istringstream is(serialize_config(pipeline.config()));
    std::string line;
    while (std::getline(is, line)) {
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        key.erase(key.find_last_not_of(' ') + 1);
        value.erase(0, value.find_first_not_of(' '));
        cfg[key] = value;
    }
    out["config"] = std::move(cfg);

    json params = json::object();
    for (const auto& p : pipeline.params()) {
        json entry;
        entry["shape"] = p.value().shape();
        entry["values"] = p.value().values();
        params[p.name()] = std::move(entry);
    }
    out["params"] = std::move(params);
    return out.dump();
}

void save_checkpoint(const Pipeline& pipeline, std::uint64_t seed, const std::string& path) {
    atomic_write_file(path, checkpoint_to_json(pipeline, seed) + "\n");
}

namespace {

json read_checkpoint_json(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ParseError("checkpoint " + path + ": " + e.what());
    }
    if (j.value("format", "") != kCheckpointFormat) {
        throw ParseError("checkpoint " + path + ": missing format key \"" + kCheckpointFormat + "\"");
    }
    return j;
}

Config config_from_echo(const json& cfg) {
    Config config;
    for (const auto& [key, value] : cfg.items()) {
        apply_config_entry(config, key, value.get<std::string>());
    }
    config.validate();
    return config;
}

}  // namespace

LoadedCheckpoint peek_checkpoint(const std::string& path) {
    const json j = read_checkpoint_json(path);
    LoadedCheckpoint out;
    out.seed = j.value("seed", 0ULL);
    out.config = config_from_echo(j.at("config"));
    return out;
}

LoadedCheckpoint load_checkpoint_into(Pipeline& pipeline, const std::string& path) {
    const json j = read_checkpoint_json(path);
    LoadedCheckpoint out;
    out.seed = j.value("seed", 0ULL);
    out.config = config_from_echo(j.at("config"));

    const json& params = j.at("params");
    for (auto& p : pipeline.params()) {
        auto it = params.find(p.name());
        if (it == params.end()) {
            throw CheckpointError("checkpoint " + path + " has no parameter \"" + p.name() + "\"");
        }
        const std::vector<int> shape = it->at("shape").get<std::vector<int>>();
        if (shape != p.value().shape()) {
            throw CheckpointError("checkpoint parameter " + p.name() + " has shape " + shape_str(shape) +
                                  " but the configured pipeline expects " + p.value().shape_str());
        }
        std::vector<double> values = it->at("values").get<std::vector<double>>();
        p.value() = Tensor(shape, std::move(values));
    }
    const std::size_t expected = pipeline.params().size();
    if (params.size() != expected) {
        throw CheckpointError("checkpoint holds " + std::to_string(params.size()) + " parameters, pipeline has " +
                              std::to_string(expected));
    }
    return out;
}

void atomic_write_file(const std::string& path, const std::string& payload) {
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

}  // namespace hetsurv
