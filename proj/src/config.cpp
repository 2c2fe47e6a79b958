#include "mmt/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mmt {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw config_error(where + ": unknown key '" + it.key() + "'");
}

json model_to_json_obj(const ModelConfig& c) {
    json j;
    j["preset"] = c.preset;
    j["d_model"] = c.d_model;
    j["n_heads"] = c.n_heads;
    j["n_cross_blocks"] = c.n_cross_blocks;
    j["n_self_blocks"] = c.n_self_blocks;
    j["ff_dim_cross"] = c.ff_dim_cross;
    j["ff_dim_self"] = c.ff_dim_self;
    j["conv_kernel"] = c.conv_kernel;
    j["dropout"] = c.dropout;
    j["seq_len"] = c.seq_len;
    j["audio_feature_dim"] = c.audio_feature_dim;
    j["visual_feature_dim"] = c.visual_feature_dim;
    j["pe_on_source"] = c.pe_on_source;
    j["cross_modal"] = c.cross_modal;
    j["fusion"] = c.fusion;
    return j;
}

void model_apply_json(ModelConfig& c, const json& j, const std::string& where) {
    reject_unknown(j,
                   {"preset", "d_model", "n_heads", "n_cross_blocks", "n_self_blocks",
                    "ff_dim_cross", "ff_dim_self", "conv_kernel", "dropout", "seq_len",
                    "audio_feature_dim", "visual_feature_dim", "pe_on_source", "cross_modal",
                    "fusion"},
                   where);
    if (j.contains("preset")) c.preset = j["preset"].get<std::string>();
    if (j.contains("d_model")) c.d_model = j["d_model"].get<std::size_t>();
    if (j.contains("n_heads")) c.n_heads = j["n_heads"].get<std::size_t>();
    if (j.contains("n_cross_blocks")) c.n_cross_blocks = j["n_cross_blocks"].get<std::size_t>();
    if (j.contains("n_self_blocks")) c.n_self_blocks = j["n_self_blocks"].get<std::size_t>();
    if (j.contains("ff_dim_cross")) c.ff_dim_cross = j["ff_dim_cross"].get<std::size_t>();
    if (j.contains("ff_dim_self")) c.ff_dim_self = j["ff_dim_self"].get<std::size_t>();
    if (j.contains("conv_kernel")) c.conv_kernel = j["conv_kernel"].get<std::size_t>();
    if (j.contains("dropout")) c.dropout = j["dropout"].get<double>();
    if (j.contains("seq_len")) c.seq_len = j["seq_len"].get<std::size_t>();
    if (j.contains("audio_feature_dim"))
        c.audio_feature_dim = j["audio_feature_dim"].get<std::size_t>();
    if (j.contains("visual_feature_dim"))
        c.visual_feature_dim = j["visual_feature_dim"].get<std::size_t>();
    if (j.contains("pe_on_source")) c.pe_on_source = j["pe_on_source"].get<bool>();
    if (j.contains("cross_modal")) c.cross_modal = j["cross_modal"].get<bool>();
    if (j.contains("fusion")) c.fusion = j["fusion"].get<std::string>();
}

ModelConfig expand_preset(const std::string& name) {
    if (name == "tiny") return ModelConfig::tiny();
    if (name == "base") return ModelConfig::base();
    if (name == "large") return ModelConfig::large();
    if (name == "custom") return ModelConfig{};
    throw config_error("unknown preset '" + name + "' (expected tiny|base|large)");
}

json schedule_to_json(const TrainSchedule& s) {
    return {{"peak_lr", s.peak_lr},
            {"warmup_fraction", s.warmup_fraction},
            {"batch_size", s.batch_size},
            {"epochs", s.epochs},
            {"patience", s.patience}};
}

void schedule_apply_json(TrainSchedule& s, const json& j, const std::string& where) {
    reject_unknown(j, {"peak_lr", "warmup_fraction", "batch_size", "epochs", "patience"}, where);
    if (j.contains("peak_lr")) s.peak_lr = j["peak_lr"].get<double>();
    if (j.contains("warmup_fraction")) s.warmup_fraction = j["warmup_fraction"].get<double>();
    if (j.contains("batch_size")) s.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("epochs")) s.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("patience")) s.patience = j["patience"].get<std::size_t>();
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return model_to_json_obj(cfg).dump(2); }

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("model config: ") + e.what());
    }
    ModelConfig c = j.contains("preset") ? expand_preset(j["preset"].get<std::string>())
                                         : ModelConfig{};
    model_apply_json(c, j, "model config");
    c.validate();
    return c;
}

std::vector<std::string> model_config_diff(const ModelConfig& a, const ModelConfig& b) {
    const json ja = model_to_json_obj(a);
    const json jb = model_to_json_obj(b);
    std::vector<std::string> out;
    for (auto it = ja.begin(); it != ja.end(); ++it) {
        const auto& other = jb.at(it.key());
        if (it.value() != other)
            out.push_back(it.key() + ": " + it.value().dump() + " != " + other.dump());
    }
    return out;
}

std::string ExperimentConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["model"] = model_to_json_obj(model);
    j["pretrain"] = schedule_to_json(pretrain_schedule);
    j["finetune"] = schedule_to_json(finetune_schedule);
    j["finetune"]["use_mse"] = finetune_use_mse;
    j["finetune"]["freeze_backbone"] = freeze_backbone;
    j["masking"] = {{"chunk_len", masking.chunk_len},
                    {"ratio", masking.ratio},
                    {"per_frame_tags", masking.per_frame_tags}};
    return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("experiment config: ") + e.what());
    }
    reject_unknown(j, {"seed", "preset", "model", "pretrain", "finetune", "masking"},
                   "experiment config");
    ExperimentConfig c;
    // top-level preset seeds the model block before overrides
    if (j.contains("preset")) c.model = expand_preset(j["preset"].get<std::string>());
    if (j.contains("model")) {
        json jm = j["model"];
        if (jm.contains("preset")) {
            c.model = expand_preset(jm["preset"].get<std::string>());
        }
        model_apply_json(c.model, jm, "experiment config.model");
    }
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("pretrain"))
        schedule_apply_json(c.pretrain_schedule, j["pretrain"], "experiment config.pretrain");
    if (j.contains("finetune")) {
        json jf = j["finetune"];
        if (jf.contains("use_mse")) {
            c.finetune_use_mse = jf["use_mse"].get<bool>();
            jf.erase("use_mse");
        }
        if (jf.contains("freeze_backbone")) {
            c.freeze_backbone = jf["freeze_backbone"].get<bool>();
            jf.erase("freeze_backbone");
        }
        schedule_apply_json(c.finetune_schedule, jf, "experiment config.finetune");
    }
    if (j.contains("masking")) {
        const json& jm = j["masking"];
        reject_unknown(jm, {"chunk_len", "ratio", "per_frame_tags"}, "experiment config.masking");
        if (jm.contains("chunk_len")) c.masking.chunk_len = jm["chunk_len"].get<std::size_t>();
        if (jm.contains("ratio")) c.masking.ratio = jm["ratio"].get<double>();
        if (jm.contains("per_frame_tags"))
            c.masking.per_frame_tags = jm["per_frame_tags"].get<bool>();
    }
    c.model.validate();
    c.pretrain_schedule.validate();
    c.finetune_schedule.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_json(ss.str());
}

}  // namespace mmt
