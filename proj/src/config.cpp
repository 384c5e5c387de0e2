#include "framescope/config.hpp"

#include <fstream>

#include "framescope/errors.hpp"

namespace framescope {

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::map<std::string, std::string> kv;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos) {
                throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                                  ": expected key = value");
            }
            continue;
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty key");
        }
        kv[key] = value;
    }
    return kv;
}

void apply_train_config(const std::map<std::string, std::string>& kv, TrainConfig& config) {
    for (const auto& [key, value] : kv) {
        try {
            if (key == "lr_peak") config.lr_peak = std::stod(value);
            else if (key == "warmup_frac") config.warmup_frac = std::stod(value);
            else if (key == "beta1") config.beta1 = std::stod(value);
            else if (key == "beta2") config.beta2 = std::stod(value);
            else if (key == "adam_eps") config.adam_eps = std::stod(value);
            else if (key == "weight_decay") config.weight_decay = std::stod(value);
            else if (key == "batch") config.batch = std::stoi(value);
            else if (key == "grad_accum") config.grad_accum = std::stoi(value);
            else if (key == "epochs") config.epochs = std::stoi(value);
            else if (key == "sample_count") config.sample_count = std::stoi(value);
            else if (key == "lambda_attn") config.lambda_attn = std::stod(value);
            else if (key == "ce_weight") config.ce_weight = std::stod(value);
            else if (key == "k") config.k = std::stoi(value);
            else if (key == "position") config.position = position_policy_from_string(value);
            else if (key == "share_prompts") config.share_prompts = value == "true" || value == "1";
            else if (key == "max_image_side") config.max_image_side = std::stoi(value);
            else if (key == "weighting") config.weighting = weighting_from_string(value);
            else if (key == "kl_eps") config.kl_eps = std::stod(value);
            else if (key == "seed") config.seed = std::stoull(value);
            else if (key == "holdout_frac") config.holdout_frac = std::stod(value);
            else if (key == "eval_every") config.eval_every = std::stoi(value);
            else if (key == "early_stop_patience") config.early_stop_patience = std::stoi(value);
            else if (key == "max_skip_frac") config.max_skip_frac = std::stod(value);
            else throw ConfigError("unknown config key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad value for '" + key + "': " + value);
        } catch (const std::out_of_range&) {
            throw ConfigError("value out of range for '" + key + "': " + value);
        }
    }
    config.validate();
}

}  // namespace framescope
