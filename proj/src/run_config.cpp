#include "capcore/run_config.hpp"

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "capcore/errors.hpp"

namespace capcore {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

int64_t parse_i64(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": '" + value + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
        const uint64_t v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad unsigned integer for " + key + ": '" + value + "'");
    }
}

double parse_dbl(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + key + ": '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

std::string fmt_dbl(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Field {
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define CAPCORE_I64_FIELD(name)                                                        \
    Field{#name, [](RunConfig& c, const std::string& v) { c.name = parse_i64(#name, v); }, \
          [](const RunConfig& c) { return std::to_string(c.name); }}
#define CAPCORE_U64_FIELD(name)                                                        \
    Field{#name, [](RunConfig& c, const std::string& v) { c.name = parse_u64(#name, v); }, \
          [](const RunConfig& c) { return std::to_string(c.name); }}
#define CAPCORE_DBL_FIELD(name)                                                        \
    Field{#name, [](RunConfig& c, const std::string& v) { c.name = parse_dbl(#name, v); }, \
          [](const RunConfig& c) { return fmt_dbl(c.name); }}
#define CAPCORE_BOOL_FIELD(name)                                                       \
    Field{#name, [](RunConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }, \
          [](const RunConfig& c) { return c.name ? std::string("true") : std::string("false"); }}
#define CAPCORE_STR_FIELD(name)                                                        \
    Field{#name, [](RunConfig& c, const std::string& v) { c.name = v; },               \
          [](const RunConfig& c) { return c.name; }}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        CAPCORE_I64_FIELD(d_model),
        CAPCORE_I64_FIELD(n_heads),
        CAPCORE_I64_FIELD(n_encoder_layers),
        CAPCORE_I64_FIELD(n_decoder_layers),
        CAPCORE_I64_FIELD(d_ff),
        CAPCORE_I64_FIELD(max_visual_tokens),
        CAPCORE_I64_FIELD(max_text_len),
        CAPCORE_I64_FIELD(feature_dim),
        CAPCORE_I64_FIELD(vocab_cap),
        CAPCORE_I64_FIELD(min_freq),
        CAPCORE_I64_FIELD(input_size),
        CAPCORE_I64_FIELD(frames_per_video),
        CAPCORE_U64_FIELD(extractor_seed),
        CAPCORE_I64_FIELD(epochs),
        CAPCORE_I64_FIELD(batch_size),
        CAPCORE_DBL_FIELD(learning_rate),
        CAPCORE_DBL_FIELD(weight_decay),
        CAPCORE_I64_FIELD(accumulation_steps),
        CAPCORE_DBL_FIELD(clip_norm),
        CAPCORE_DBL_FIELD(lambda),
        CAPCORE_DBL_FIELD(loss_scale),
        CAPCORE_BOOL_FIELD(mean_loss),
        CAPCORE_I64_FIELD(keep_last),
        CAPCORE_STR_FIELD(strategy),
        CAPCORE_I64_FIELD(beam_width),
        CAPCORE_I64_FIELD(max_len),
        CAPCORE_BOOL_FIELD(bleu_smooth),
        CAPCORE_BOOL_FIELD(use_stemmer),
        CAPCORE_DBL_FIELD(rouge_beta),
        CAPCORE_BOOL_FIELD(with_cider),
        CAPCORE_U64_FIELD(seed),
        CAPCORE_DBL_FIELD(test_fraction),
        CAPCORE_STR_FIELD(manifest),
        CAPCORE_STR_FIELD(out),
        CAPCORE_STR_FIELD(checkpoint),
        CAPCORE_STR_FIELD(captions),
        CAPCORE_STR_FIELD(references),
        CAPCORE_STR_FIELD(plot_data),
        CAPCORE_BOOL_FIELD(keep_going),
        CAPCORE_BOOL_FIELD(force),
        CAPCORE_BOOL_FIELD(resume),
    };
    return table;
}

#undef CAPCORE_I64_FIELD
#undef CAPCORE_U64_FIELD
#undef CAPCORE_DBL_FIELD
#undef CAPCORE_BOOL_FIELD
#undef CAPCORE_STR_FIELD

const Field& field_for(const std::string& key) {
    for (const Field& f : fields()) {
        if (key == f.key) return f;
    }
    throw ConfigError("unknown config key: " + key);
}

} // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
    field_for(key).set(*this, value);
}

const std::vector<std::string>& RunConfig::key_order() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const Field& f : fields()) out.push_back(f.key);
        return out;
    }();
    return keys;
}

std::string RunConfig::value_of(const std::string& key) const {
    return field_for(key).get(*this);
}

std::string RunConfig::resolved_text() const {
    std::ostringstream os;
    os << "# resolved run configuration\n";
    for (const Field& f : fields()) os << f.key << " = " << f.get(*this) << '\n';
    return os.str();
}

ModelConfig RunConfig::model(int64_t vocab_size) const {
    ModelConfig mc;
    mc.d_model = d_model;
    mc.n_heads = n_heads;
    mc.n_encoder_layers = n_encoder_layers;
    mc.n_decoder_layers = n_decoder_layers;
    mc.d_ff = d_ff;
    mc.vocab_size = vocab_size;
    mc.max_visual_tokens = max_visual_tokens;
    mc.max_text_len = max_text_len;
    mc.feature_dim = feature_dim;
    return mc;
}

TrainConfig RunConfig::train() const {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = batch_size;
    tc.learning_rate = learning_rate;
    tc.weight_decay = weight_decay;
    tc.accumulation_steps = accumulation_steps;
    tc.clip_norm = clip_norm;
    tc.lambda = lambda;
    tc.loss_scale = loss_scale;
    tc.mean_loss = mean_loss;
    tc.seed = seed;
    return tc;
}

MetricOptions RunConfig::metric_options() const {
    MetricOptions mo;
    mo.bleu_smooth = bleu_smooth;
    mo.use_stemmer = use_stemmer;
    mo.rouge_beta = rouge_beta;
    mo.with_cider = with_cider;
    return mo;
}

ResNetMiniConfig RunConfig::extractor() const {
    ResNetMiniConfig ec;
    ec.input_size = input_size;
    ec.feature_dim = feature_dim;
    ec.weight_seed = extractor_seed;
    return ec;
}

RunConfig parse_config_file(const std::string& path, std::set<std::string>* provided) {
    RunConfig cfg;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        cfg.apply(key, trim(t.substr(eq + 1)));
        if (provided) provided->insert(key);
    }
    return cfg;
}

RunConfig resolve_run_config(const std::string& config_path,
                             const std::vector<std::pair<std::string, std::string>>& overrides,
                             std::set<std::string>* provided) {
    RunConfig cfg;
    if (!config_path.empty()) cfg = parse_config_file(config_path, provided);
    for (const std::string& key : RunConfig::key_order()) {
        std::string env_name = "CAPCORE_";
        for (char c : key) env_name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        if (const char* v = std::getenv(env_name.c_str())) {
            cfg.apply(key, v);
            if (provided) provided->insert(key);
        }
    }
    for (const auto& [key, value] : overrides) {
        cfg.apply(key, value);
        if (provided) provided->insert(key);
    }
    return cfg;
}

void write_resolved_config(const RunConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::string path = (std::filesystem::path(out_dir) / "config.resolved").string();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << cfg.resolved_text();
    if (!out) throw DataError("short write to " + path);
}

} // namespace capcore
