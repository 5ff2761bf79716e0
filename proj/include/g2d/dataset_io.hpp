#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "g2d/checkpoint.hpp"
#include "g2d/datagen.hpp"
#include "g2d/errors.hpp"

namespace g2d {

// DatasetSpec <-> JSON. The same schema is used by the CLI's spec files and
// as the header line of exported dataset files.

inline nlohmann::json spec_to_json(const DatasetSpec& spec) {
    nlohmann::json j;
    j["task"] = spec.task == Task::Classify ? "classify" : "regress";
    if (spec.task == Task::Classify) j["num_classes"] = spec.num_classes;
    j["modalities"] = nlohmann::json::array();
    for (const ModalitySpec& m : spec.modalities) {
        j["modalities"].push_back({{"feature_dim", m.feature_dim},
                                   {"signal_strength", m.signal_strength},
                                   {"noise_scale", m.noise_scale}});
    }
    j["train_samples"] = spec.train_samples;
    j["val_samples"] = spec.val_samples;
    j["test_samples"] = spec.test_samples;
    j["seed"] = spec.seed;
    if (spec.task == Task::Regress) {
        j["latent_dim"] = spec.latent_dim;
        j["latent_scale"] = spec.latent_scale;
        j["link"] = spec.link == RegressionLink::Tanh ? "tanh" : "identity";
        j["target_noise"] = spec.target_noise;
    }
    return j;
}

inline DatasetSpec spec_from_json(const nlohmann::json& j) {
    DatasetSpec spec;
    try {
        const std::string task = j.at("task").get<std::string>();
        if (task == "classify") spec.task = Task::Classify;
        else if (task == "regress") spec.task = Task::Regress;
        else throw ConfigError("dataset spec: unknown task '" + task + "'");
        if (spec.task == Task::Classify) spec.num_classes = j.at("num_classes").get<int>();
        spec.modalities.clear();
        for (const auto& jm : j.at("modalities")) {
            ModalitySpec m;
            m.feature_dim = jm.at("feature_dim").get<std::size_t>();
            m.signal_strength = jm.at("signal_strength").get<double>();
            m.noise_scale = jm.at("noise_scale").get<double>();
            spec.modalities.push_back(m);
        }
        spec.train_samples = j.at("train_samples").get<std::size_t>();
        spec.val_samples = j.at("val_samples").get<std::size_t>();
        spec.test_samples = j.at("test_samples").get<std::size_t>();
        spec.seed = j.at("seed").get<std::uint64_t>();
        if (spec.task == Task::Regress) {
            spec.latent_dim = j.value("latent_dim", spec.latent_dim);
            spec.latent_scale = j.value("latent_scale", spec.latent_scale);
            const std::string link = j.value("link", std::string("tanh"));
            if (link == "tanh") spec.link = RegressionLink::Tanh;
            else if (link == "identity") spec.link = RegressionLink::Identity;
            else throw ConfigError("dataset spec: unknown link '" + link + "'");
            spec.target_noise = j.value("target_noise", spec.target_noise);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("dataset spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

// Columnar dataset file: a JSON spec header followed by one row per sample.
// Feature values are hex-encoded doubles, so load is bit-exact.
//
//   g2d-dataset v1
//   spec <single-line JSON>
//   split train <n>
//   <label|target> <present flags> <feature words, modality-major>
//   ...

namespace detail {

inline void write_split(std::ostream& os, const std::string& name, const Split& split,
                        Task task) {
    os << "split " << name << " " << split.size() << "\n";
    const std::size_t k = split.inputs.size();
    for (std::size_t i = 0; i < split.size(); ++i) {
        if (task == Task::Classify) os << split.labels[i];
        else os << double_to_hex(split.targets[i]);
        for (std::size_t m = 0; m < k; ++m) os << " " << int(split.present[m][i]);
        for (std::size_t m = 0; m < k; ++m) {
            for (std::size_t d = 0; d < split.inputs[m].cols(); ++d)
                os << " " << double_to_hex(split.inputs[m].at(i, d));
        }
        os << "\n";
    }
}

inline Split read_split(std::istream& is, const std::string& expected_name,
                        const DatasetSpec& spec) {
    std::string kw, name;
    std::size_t n = 0;
    is >> kw >> name >> n;
    if (kw != "split" || name != expected_name) {
        throw PipelineError("dataset file: expected split '" + expected_name + "'");
    }
    Split split;
    const std::size_t k = spec.num_modalities();
    for (std::size_t m = 0; m < k; ++m) {
        split.inputs.emplace_back(std::vector<std::size_t>{n, spec.modalities[m].feature_dim});
        split.present.emplace_back(n, std::uint8_t{1});
    }
    if (spec.task == Task::Classify) split.labels.resize(n);
    else split.targets.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (spec.task == Task::Classify) {
            is >> split.labels[i];
        } else {
            std::string hex;
            is >> hex;
            split.targets[i] = hex_to_double(hex);
        }
        for (std::size_t m = 0; m < k; ++m) {
            int p = 0;
            is >> p;
            split.present[m][i] = static_cast<std::uint8_t>(p);
        }
        for (std::size_t m = 0; m < k; ++m) {
            for (std::size_t d = 0; d < spec.modalities[m].feature_dim; ++d) {
                std::string hex;
                is >> hex;
                split.inputs[m].at(i, d) = hex_to_double(hex);
            }
        }
        if (!is) throw PipelineError("dataset file: truncated row in split " + expected_name);
    }
    return split;
}

} // namespace detail

inline std::string serialize_dataset(const MultimodalDataset& ds) {
    std::ostringstream os;
    os << "g2d-dataset v1\n";
    os << "spec " << spec_to_json(ds.spec).dump() << "\n";
    detail::write_split(os, "train", ds.train, ds.spec.task);
    detail::write_split(os, "val", ds.val, ds.spec.task);
    detail::write_split(os, "test", ds.test, ds.spec.task);
    return os.str();
}

inline MultimodalDataset parse_dataset(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "g2d-dataset v1") {
        throw PipelineError("dataset file: bad or missing header");
    }
    if (!std::getline(is, line) || line.rfind("spec ", 0) != 0) {
        throw PipelineError("dataset file: missing spec line");
    }
    MultimodalDataset ds;
    try {
        ds.spec = spec_from_json(nlohmann::json::parse(line.substr(5)));
    } catch (const nlohmann::json::exception& e) {
        throw PipelineError(std::string("dataset file: unparsable spec: ") + e.what());
    }
    ds.train = detail::read_split(is, "train", ds.spec);
    ds.val = detail::read_split(is, "val", ds.spec);
    ds.test = detail::read_split(is, "test", ds.spec);
    // Bayes estimates are a pure function of the spec; recompute rather than
    // store.
    ds.bayes_estimate = bayes_estimates(ds.spec);
    return ds;
}

inline void save_dataset(const std::string& path, const MultimodalDataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("dataset file: cannot open '" + path + "' for writing");
    out << serialize_dataset(ds);
}

inline MultimodalDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PipelineError("dataset file: cannot open '" + path + "'");
    return parse_dataset(in);
}

inline std::string dataset_hash(const MultimodalDataset& ds) {
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << fnv1a(serialize_dataset(ds));
    return os.str();
}

} // namespace g2d
