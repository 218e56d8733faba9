#include "sed/config_json.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sed {

using nlohmann::json;

namespace {

template <typename T>
void get_to(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void apply_run_config_json(RunConfig& cfg, const std::string& json_text,
                           const std::string& origin) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw IoError(origin + ": " + e.what());
    }
    try {
        if (j.contains("encoder")) {
            const auto& e = j.at("encoder");
            if (e.contains("stage_widths")) {
                auto v = e.at("stage_widths").get<std::vector<int>>();
                if (v.size() != 4)
                    throw std::invalid_argument("encoder.stage_widths needs 4 entries");
                std::copy(v.begin(), v.end(), cfg.model.encoder.stage_widths.begin());
            }
            if (e.contains("stage_depths")) {
                auto v = e.at("stage_depths").get<std::vector<int>>();
                if (v.size() != 4)
                    throw std::invalid_argument("encoder.stage_depths needs 4 entries");
                std::copy(v.begin(), v.end(), cfg.model.encoder.stage_depths.begin());
            }
            get_to(e, "align_dim", cfg.model.encoder.align_dim);
            get_to(e, "encoder_lr_scale", cfg.model.encoder.encoder_lr_scale);
        }
        if (j.contains("fam")) {
            const auto& f = j.at("fam");
            get_to(f, "dw_kernel", cfg.model.gfd.fam.dw_kernel);
            get_to(f, "enable_spatial", cfg.model.gfd.fam.enable_spatial);
            get_to(f, "enable_class", cfg.model.gfd.fam.enable_class);
        }
        if (j.contains("decoder")) {
            const auto& d = j.at("decoder");
            get_to(d, "layers", cfg.model.gfd.layers);
            get_to(d, "dim", cfg.model.gfd.dim);
            get_to(d, "templates", cfg.model.templates);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            get_to(t, "lr", cfg.train.lr);
            get_to(t, "weight_decay", cfg.train.weight_decay);
            get_to(t, "iters", cfg.train.iters);
            get_to(t, "batch", cfg.train.batch);
            get_to(t, "crop", cfg.train.crop);
            get_to(t, "seed", cfg.train.seed);
            get_to(t, "aux_loss_weight", cfg.train.aux_loss_weight);
            get_to(t, "checkpoint_interval", cfg.train.checkpoint_interval);
            // "lambda" and encoder.encoder_lr_scale name the same knob; keep
            // them in lockstep and reject contradictory files.
            if (t.contains("lambda")) {
                cfg.train.lambda = t.at("lambda").get<double>();
                if (j.contains("encoder") && j.at("encoder").contains("encoder_lr_scale") &&
                    cfg.model.encoder.encoder_lr_scale != cfg.train.lambda)
                    throw std::invalid_argument(
                        "train.lambda and encoder.encoder_lr_scale disagree");
                cfg.model.encoder.encoder_lr_scale = cfg.train.lambda;
            } else {
                cfg.train.lambda = cfg.model.encoder.encoder_lr_scale;
            }
        } else {
            cfg.train.lambda = cfg.model.encoder.encoder_lr_scale;
        }
        if (j.contains("cer")) {
            const auto& c = j.at("cer");
            get_to(c, "enabled", cfg.cer.enabled);
            if (c.contains("k")) {
                const auto& k = c.at("k");
                if (k.is_string()) {
                    if (k.get<std::string>() != "all")
                        throw std::invalid_argument("cer.k must be an integer or \"all\"");
                    cfg.cer.k = 0;
                } else {
                    cfg.cer.k = k.get<int>();
                    if (cfg.cer.k < 1)
                        throw std::invalid_argument("cer.k must be >= 1 (or \"all\")");
                }
            }
        }
    } catch (const json::exception& e) {
        throw IoError(origin + ": " + e.what());
    }
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    RunConfig cfg;
    apply_run_config_json(cfg, buf.str(), path);
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["encoder"] = {
        {"stage_widths", cfg.model.encoder.stage_widths},
        {"stage_depths", cfg.model.encoder.stage_depths},
        {"align_dim", cfg.model.encoder.align_dim},
        {"encoder_lr_scale", cfg.model.encoder.encoder_lr_scale},
    };
    j["fam"] = {
        {"dw_kernel", cfg.model.gfd.fam.dw_kernel},
        {"enable_spatial", cfg.model.gfd.fam.enable_spatial},
        {"enable_class", cfg.model.gfd.fam.enable_class},
    };
    j["decoder"] = {
        {"layers", cfg.model.gfd.layers},
        {"dim", cfg.model.gfd.dim},
        {"templates", cfg.model.templates},
    };
    j["train"] = {
        {"lr", cfg.train.lr},
        {"weight_decay", cfg.train.weight_decay},
        {"lambda", cfg.train.lambda},
        {"iters", cfg.train.iters},
        {"batch", cfg.train.batch},
        {"crop", cfg.train.crop},
        {"seed", cfg.train.seed},
        {"aux_loss_weight", cfg.train.aux_loss_weight},
        {"checkpoint_interval", cfg.train.checkpoint_interval},
    };
    if (cfg.cer.is_all())
        j["cer"] = {{"enabled", cfg.cer.enabled}, {"k", "all"}};
    else
        j["cer"] = {{"enabled", cfg.cer.enabled}, {"k", cfg.cer.k}};
    return j.dump(2);
}

std::string bench_record_to_json(const BenchRecord& rec) {
    json j;
    j["image"] = rec.image;
    if (rec.k == 0)
        j["k"] = "all";
    else
        j["k"] = rec.k;
    j["times_ms"] = {
        {"encoder", rec.times.encoder_ms},
        {"cost_map", rec.times.cost_ms},
        {"decoder_layers", rec.times.layer_ms},
        {"output_head", rec.times.output_ms},
    };
    j["active_categories"] = rec.active;
    j["end_to_end_ms"] = rec.end_to_end_ms;
    if (rec.miou >= 0) j["miou"] = rec.miou;
    j["runs"] = rec.runs;
    j["warmup"] = rec.warmup;
    j["threads"] = rec.threads;
    return j.dump();
}

}  // namespace sed
