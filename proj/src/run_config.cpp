#include "nearl/run_config.hpp"

#include <fstream>
#include <set>

#include "nearl/error.hpp"

namespace nearl {

using nlohmann::json;

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seeds are read through the size_t overload");

// Reads keys from one JSON object and rejects whatever was not asked for.
class Fields {
public:
    Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) fail(ErrorKind::config, where_ + " must be a JSON object");
    }

    bool has(const char* key) const { return j_.contains(key); }

    const json& raw(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void get(const char* key, std::size_t& out) {
        if (!has(key)) return;
        const json& v = raw(key);
        // Programmatically built JSON stores small literals as signed integers.
        const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
        if (!ok) type_error(key, "a non-negative integer");
        out = v.get<std::size_t>();
    }
    void get(const char* key, double& out) { read(key, out, &json::is_number, "a number"); }
    void get(const char* key, bool& out) { read(key, out, &json::is_boolean, "a boolean"); }
    void get(const char* key, std::string& out) { read(key, out, &json::is_string, "a string"); }
    void get(const char* key, std::vector<std::string>& out) {
        if (!has(key)) return;
        const json& v = raw(key);
        if (!v.is_array()) type_error(key, "an array of strings");
        out.clear();
        for (const auto& e : v) {
            if (!e.is_string()) type_error(key, "an array of strings");
            out.push_back(e.get<std::string>());
        }
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) fail(ErrorKind::config, "unknown key '" + key + "' in " + where_);
        }
    }

    [[noreturn]] void type_error(const char* key, const char* expected) const {
        fail(ErrorKind::config, where_ + "." + key + " must be " + expected);
    }

private:
    template <typename T>
    void read(const char* key, T& out, bool (json::*check)() const noexcept, const char* expected) {
        if (!has(key)) return;
        const json& v = raw(key);
        if (!(v.*check)()) type_error(key, expected);
        out = v.get<T>();
    }

    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative()) path = base / path;
    return std::filesystem::absolute(path).lexically_normal();
}

}  // namespace

ModelConfig parse_model_config(const json& j) {
    Fields f(j, "model");
    ModelConfig c = ModelConfig::toy();
    if (f.has("preset")) {
        const json& p = f.raw("preset");
        if (!p.is_string()) f.type_error("preset", "a string");
        const std::string name = p.get<std::string>();
        if (name == "toy") c = ModelConfig::toy();
        else if (name == "tiny") c = ModelConfig::tiny();
        else if (name == "clip_b16_audit" || name == "clip-b16") c = ModelConfig::clip_b16_audit();
        else fail(ErrorKind::config, "unknown model preset '" + name + "' (expected toy, tiny or clip_b16_audit)");
    }
    f.get("d_image", c.d_image);
    f.get("d_text", c.d_text);
    f.get("d_query", c.d_query);
    f.get("n_query", c.n_query);
    f.get("n_patches", c.n_patches);
    f.get("n_text_tokens", c.n_text_tokens);
    f.get("useformer_depth", c.useformer_depth);
    f.get("rank", c.rank);
    f.get("n_layers", c.n_layers);
    f.get("n_classes", c.n_classes);
    f.get("temperature", c.temperature);
    f.get("d_ffn_backbone", c.d_ffn_backbone);
    f.get("d_ffn_useformer", c.d_ffn_useformer);
    f.get("d_joint", c.d_joint);
    f.get("patch_dim", c.patch_dim);
    f.get("vocab_size", c.vocab_size);
    f.get("attention_heads", c.attention_heads);
    f.get("seed", c.seed);
    f.get("ortho_eps", c.ortho_eps);
    f.get("modality", c.modality);
    f.get("class_names", c.class_names);
    if (f.has("mode")) {
        std::string mode;
        f.get("mode", mode);
        c.mode = parse_ablation_mode(mode);
    }
    if (f.has("ortho_target")) {
        std::string target;
        f.get("ortho_target", target);
        c.ortho_target = parse_ortho_target(target);
    }
    if (f.has("layer_mask")) {
        const json& m = f.raw("layer_mask");
        if (m.is_null()) {
            c.layer_mask.reset();
        } else {
            if (!m.is_array()) f.type_error("layer_mask", "null or an array of layer indices");
            std::vector<std::size_t> layers;
            for (const auto& e : m) {
                if (!e.is_number_unsigned()) f.type_error("layer_mask", "null or an array of layer indices");
                layers.push_back(e.get<std::size_t>());
            }
            c.layer_mask = layers;
        }
    }
    f.finish();
    c.validate();
    return c;
}

TrainConfig parse_train_config(const json& j) {
    Fields f(j, "train");
    TrainConfig t;
    f.get("epochs", t.epochs);
    f.get("batch_size", t.batch_size);
    f.get("learning_rate", t.learning_rate);
    f.get("beta1", t.beta1);
    f.get("beta2", t.beta2);
    f.get("adam_eps", t.adam_eps);
    f.get("seed", t.seed);
    f.get("metrics_every", t.metrics_every);
    f.get("check_orthogonality", t.check_orthogonality);
    f.get("ortho_tolerance", t.ortho_tolerance);
    f.finish();
    t.validate();
    return t;
}

DatasetSpec parse_dataset_spec(const json& j) {
    Fields f(j, "data.spec");
    DatasetSpec s;
    f.get("n_classes", s.n_classes);
    f.get("n_train", s.n_train);
    f.get("n_val", s.n_val);
    f.get("n_test", s.n_test);
    f.get("n_patches", s.n_patches);
    f.get("patch_dim", s.patch_dim);
    f.get("signal_fraction", s.signal_fraction);
    f.get("noise_std", s.noise_std);
    f.get("class_separation", s.class_separation);
    f.get("seed", s.seed);
    f.finish();
    s.validate();
    return s;
}

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base_dir) {
    Fields f(doc, "config");
    RunConfig rc;
    if (f.has("model")) rc.model = parse_model_config(f.raw("model"));
    if (f.has("train")) rc.train = parse_train_config(f.raw("train"));
    if (f.has("data")) {
        Fields d(f.raw("data"), "data");
        if (d.has("path")) {
            std::string p;
            d.get("path", p);
            rc.data.path = resolve(base_dir, p);
        }
        if (d.has("spec")) rc.data.spec = parse_dataset_spec(d.raw("spec"));
        d.finish();
        if (!rc.data.path && !rc.data.spec) fail(ErrorKind::config, "data needs a path or a spec");
    }
    std::string out;
    f.get("output_dir", out);
    if (out.empty()) fail(ErrorKind::config, "output_dir is required");
    rc.output_dir = resolve(base_dir, out);
    if (f.has("checkpoint")) {
        std::string p;
        f.get("checkpoint", p);
        rc.checkpoint = resolve(base_dir, p);
    }
    if (f.has("suite")) {
        std::string s;
        f.get("suite", s);
        rc.suite = s;
    }
    f.get("command", rc.command);
    f.finish();
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::missing_file, "config file not found: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::config, "cannot parse " + path.string() + ": " + e.what());
    }
    return parse_run_config(doc, std::filesystem::absolute(path).parent_path());
}

json to_json(const ModelConfig& c) {
    json j;
    j["d_image"] = c.d_image;
    j["d_text"] = c.d_text;
    j["d_query"] = c.d_query;
    j["n_query"] = c.n_query;
    j["n_patches"] = c.n_patches;
    j["n_text_tokens"] = c.n_text_tokens;
    j["useformer_depth"] = c.useformer_depth;
    j["rank"] = c.rank;
    j["n_layers"] = c.n_layers;
    j["n_classes"] = c.n_classes;
    j["temperature"] = c.temperature;
    j["d_ffn_backbone"] = c.d_ffn_backbone;
    j["d_ffn_useformer"] = c.d_ffn_useformer;
    j["d_joint"] = c.d_joint;
    j["patch_dim"] = c.patch_dim;
    j["vocab_size"] = c.vocab_size;
    j["attention_heads"] = c.attention_heads;
    j["seed"] = c.seed;
    j["mode"] = std::string(to_string(c.mode));
    j["layer_mask"] = c.layer_mask ? json(*c.layer_mask) : json(nullptr);
    j["ortho_eps"] = c.ortho_eps;
    j["ortho_target"] = std::string(to_string(c.ortho_target));
    j["modality"] = c.modality;
    j["class_names"] = c.class_names;
    return j;
}

json to_json(const TrainConfig& t) {
    json j;
    j["epochs"] = t.epochs;
    j["batch_size"] = t.batch_size;
    j["learning_rate"] = t.learning_rate;
    j["beta1"] = t.beta1;
    j["beta2"] = t.beta2;
    j["adam_eps"] = t.adam_eps;
    j["seed"] = t.seed;
    j["metrics_every"] = t.metrics_every;
    j["check_orthogonality"] = t.check_orthogonality;
    j["ortho_tolerance"] = t.ortho_tolerance;
    return j;
}

json to_json(const DatasetSpec& s) {
    json j;
    j["n_classes"] = s.n_classes;
    j["n_train"] = s.n_train;
    j["n_val"] = s.n_val;
    j["n_test"] = s.n_test;
    j["n_patches"] = s.n_patches;
    j["patch_dim"] = s.patch_dim;
    j["signal_fraction"] = s.signal_fraction;
    j["noise_std"] = s.noise_std;
    j["class_separation"] = s.class_separation;
    j["seed"] = s.seed;
    return j;
}

json to_json(const RunConfig& rc) {
    json j;
    if (!rc.command.empty()) j["command"] = rc.command;
    j["model"] = to_json(rc.model);
    j["train"] = to_json(rc.train);
    json data = json::object();
    if (rc.data.path) data["path"] = rc.data.path->string();
    if (rc.data.spec) data["spec"] = to_json(*rc.data.spec);
    if (!data.empty()) j["data"] = data;
    j["output_dir"] = rc.output_dir.string();
    if (rc.checkpoint) j["checkpoint"] = rc.checkpoint->string();
    if (rc.suite) j["suite"] = *rc.suite;
    return j;
}

}  // namespace nearl
