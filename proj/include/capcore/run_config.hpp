#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "capcore/metrics.hpp"
#include "capcore/model.hpp"
#include "capcore/train.hpp"
#include "capcore/vision.hpp"

namespace capcore {

// Fully resolved settings for one command. Sources merge with documented
// precedence: command-line flags over CAPCORE_<KEY> environment variables
// over the config file over built-in defaults. The resolved form is echoed
// into every output directory and is by itself enough to replay the command.
struct RunConfig {
    // model
    int64_t d_model = 64;
    int64_t n_heads = 4;
    int64_t n_encoder_layers = 2;
    int64_t n_decoder_layers = 2;
    int64_t d_ff = 0; // 0 means 4 * d_model
    int64_t max_visual_tokens = 8;
    int64_t max_text_len = 64;
    int64_t feature_dim = 2048;

    // vocabulary build
    int64_t vocab_cap = 10000;
    int64_t min_freq = 1;

    // feature extractor
    int64_t input_size = 224;
    int64_t frames_per_video = 4;
    uint64_t extractor_seed = 1234;

    // training
    int64_t epochs = 75;
    int64_t batch_size = 32;
    double learning_rate = 1e-5;
    double weight_decay = 0.01;
    int64_t accumulation_steps = 1;
    double clip_norm = 1.0;
    double lambda = 1e-4;
    double loss_scale = 1024.0;
    bool mean_loss = true;
    int64_t keep_last = 3;

    // generation
    std::string strategy = "greedy";
    int64_t beam_width = 3;
    int64_t max_len = 0; // 0 means max_text_len

    // metrics
    bool bleu_smooth = false;
    bool use_stemmer = true;
    double rouge_beta = 1.2;
    bool with_cider = true;

    // run inputs
    uint64_t seed = 1234;
    double test_fraction = 0.2;
    std::string manifest;
    std::string out;
    std::string checkpoint;
    std::string captions;
    std::string references;
    std::string plot_data;
    bool keep_going = false;
    bool force = false;
    bool resume = false;

    // Parses and assigns one key=value; unknown key or bad value throws
    // ConfigError.
    void apply(const std::string& key, const std::string& value);

    // Every key in canonical order, as written by resolved_text().
    static const std::vector<std::string>& key_order();

    std::string value_of(const std::string& key) const;
    std::string resolved_text() const;

    ModelConfig model(int64_t vocab_size) const;
    TrainConfig train() const;
    MetricOptions metric_options() const;
    ResNetMiniConfig extractor() const;
};

// key=value lines, '#' comments, blank lines ignored. Keys seen in the file
// are added to `provided` when given.
RunConfig parse_config_file(const std::string& path, std::set<std::string>* provided = nullptr);

// defaults <- config file <- CAPCORE_* environment <- flag overrides.
// `provided` collects every key that was set by any source, letting commands
// distinguish an explicit setting from a default.
RunConfig resolve_run_config(const std::string& config_path,
                             const std::vector<std::pair<std::string, std::string>>& overrides,
                             std::set<std::string>* provided = nullptr);

// Writes <out_dir>/config.resolved, creating the directory if needed.
void write_resolved_config(const RunConfig& cfg, const std::string& out_dir);

} // namespace capcore
