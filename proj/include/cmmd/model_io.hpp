#pragma once

#include <sstream>
#include <string>

#include "model.hpp"

namespace cmmd {

namespace model_io_detail {

inline std::string spec_to_string(const MlpSpec& spec) {
    std::ostringstream os;
    os << "widths=";
    for (std::size_t i = 0; i < spec.layer_widths.size(); ++i)
        os << (i ? "-" : "") << spec.layer_widths[i];
    os << ";act=" << to_string(spec.hidden_activation);
    os << ";dropout=" << spec.dropout_rate;
    os << ";heads=";
    for (std::size_t i = 0; i < spec.heads.size(); ++i)
        os << (i ? "," : "") << spec.heads[i].name << ":" << spec.heads[i].width;
    return os.str();
}

inline MlpSpec spec_from_string(const std::string& s) {
    MlpSpec spec;
    std::istringstream is(s);
    std::string field;
    while (std::getline(is, field, ';')) {
        auto eq = field.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("spec: malformed field " + field);
        std::string key = field.substr(0, eq);
        std::string val = field.substr(eq + 1);
        if (key == "widths") {
            std::istringstream ws(val);
            std::string w;
            while (std::getline(ws, w, '-')) spec.layer_widths.push_back(std::stoull(w));
        } else if (key == "act") {
            spec.hidden_activation = activation_from_string(val);
        } else if (key == "dropout") {
            spec.dropout_rate = std::stod(val);
        } else if (key == "heads") {
            std::istringstream hs(val);
            std::string h;
            while (std::getline(hs, h, ',')) {
                auto c = h.find(':');
                if (c == std::string::npos)
                    throw std::invalid_argument("spec: malformed head " + h);
                spec.heads.push_back({h.substr(0, c), std::stoull(h.substr(c + 1))});
            }
        } else {
            throw std::invalid_argument("spec: unknown field " + key);
        }
    }
    spec.validate();
    return spec;
}

} // namespace model_io_detail

// Canonical text manifest of the architecture; parameters are stored
// separately in the checkpoint body.
inline std::string model_manifest(const CmmdModel& model) {
    std::ostringstream os;
    os.precision(17);
    os << "latent_dim = " << model.latent_dim << "\n";
    os << "num_classes = " << model.num_classes << "\n";
    os << "classifier_mode = " << to_string(model.classifier_mode) << "\n";
    os << "prior_mode = " << to_string(model.prior_mode) << "\n";
    os << "classify_from = "
       << (model.classify_from == ClassifyFrom::prior ? "prior" : "posterior") << "\n";
    if (model.fixed_decoder_var)
        os << "fixed_decoder_var = " << *model.fixed_decoder_var << "\n";
    for (const auto& m : model.partition.observed)
        os << "observed = " << m.name << ":" << m.width << ":" << to_string(m.family)
           << "\n";
    for (const auto& m : model.partition.missing)
        os << "missing = " << m.name << ":" << m.width << ":" << to_string(m.family)
           << "\n";
    os << "encoder_spec = " << model_io_detail::spec_to_string(model.encoder_spec) << "\n";
    if (model.prior_mode == PriorMode::conditional)
        os << "prior_spec = " << model_io_detail::spec_to_string(model.prior_spec) << "\n";
    os << "classifier_spec = " << model_io_detail::spec_to_string(model.classifier_spec)
       << "\n";
    for (std::size_t i = 0; i < model.decoder_specs.size(); ++i)
        os << "decoder_spec/" << model.partition.missing[i].name << " = "
           << model_io_detail::spec_to_string(model.decoder_specs[i]) << "\n";
    return os.str();
}

inline CmmdModel model_from_manifest(const std::string& manifest) {
    CmmdModel model;
    std::istringstream is(manifest);
    std::string line;
    std::map<std::string, MlpSpec> decoder_specs;
    auto parse_modality = [](const std::string& v) {
        auto c1 = v.find(':');
        auto c2 = v.rfind(':');
        if (c1 == std::string::npos || c1 == c2)
            throw std::invalid_argument("manifest: malformed modality " + v);
        Modality m;
        m.name = v.substr(0, c1);
        m.width = std::stoull(v.substr(c1 + 1, c2 - c1 - 1));
        m.family = decoder_family_from_string(v.substr(c2 + 1));
        return m;
    };
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("manifest: malformed line " + line);
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t");
            auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key == "latent_dim") model.latent_dim = std::stoull(val);
        else if (key == "num_classes") model.num_classes = std::stoull(val);
        else if (key == "classifier_mode")
            model.classifier_mode = categorical_mode_from_string(val);
        else if (key == "prior_mode") model.prior_mode = prior_mode_from_string(val);
        else if (key == "classify_from")
            model.classify_from = val == "prior" ? ClassifyFrom::prior
                                                 : ClassifyFrom::posterior;
        else if (key == "fixed_decoder_var") model.fixed_decoder_var = std::stod(val);
        else if (key == "observed")
            model.partition.observed.push_back(parse_modality(val));
        else if (key == "missing")
            model.partition.missing.push_back(parse_modality(val));
        else if (key == "encoder_spec")
            model.encoder_spec = model_io_detail::spec_from_string(val);
        else if (key == "prior_spec")
            model.prior_spec = model_io_detail::spec_from_string(val);
        else if (key == "classifier_spec")
            model.classifier_spec = model_io_detail::spec_from_string(val);
        else if (key.rfind("decoder_spec/", 0) == 0)
            decoder_specs[key.substr(13)] = model_io_detail::spec_from_string(val);
        else
            throw std::invalid_argument("manifest: unknown key " + key);
    }
    for (const auto& m : model.partition.missing) {
        auto it = decoder_specs.find(m.name);
        if (it == decoder_specs.end())
            throw std::invalid_argument("manifest: missing decoder spec for " + m.name);
        model.decoder_specs.push_back(it->second);
    }
    model.validate();
    return model;
}

} // namespace cmmd
