#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "capcore/tensor.hpp"

namespace capcore {

// Residual feature extractor: conv stem, three residual stages, global
// average pool, linear lift to feature_dim. Weights are drawn once from
// weight_seed, so a config fully determines the network; extractor tags
// let feature files be matched back to the config that produced them.
struct ResNetMiniConfig {
    std::vector<int64_t> stage_channels = {16, 32, 64};
    int64_t blocks_per_stage = 2;
    int64_t input_size = 224; // square, pixels
    int64_t feature_dim = 2048;
    double pixel_mean = 0.5;
    double pixel_std = 0.5;
    uint64_t weight_seed = 1234;

    void validate() const; // throws ConfigError
    std::string tag() const;
};

struct ConvBnParams {
    Tensor kernel; // [co x ci x kh x kw], biasless
    Tensor gain, bias, running_mean, running_var;
    int64_t stride = 1;
    int64_t pad = 1;
};

struct ResidualBlockParams {
    ConvBnParams conv1, conv2;
    bool has_projection = false;
    ConvBnParams projection; // 1x1, set when the block changes channels/stride
};

class ResNetMini {
public:
    explicit ResNetMini(ResNetMiniConfig cfg);

    // frame: [3 x input_size x input_size], already normalized. Returns [feature_dim].
    Tensor forward(const Tensor& frame) const;

    const ResNetMiniConfig& config() const { return cfg_; }
    std::vector<std::pair<std::string, Tensor>> named_params() const;

    // One residual block in isolation (exposed for gradient tests).
    static Tensor block_forward(const ResidualBlockParams& block, const Tensor& x);

private:
    ResNetMiniConfig cfg_;
    ConvBnParams stem_;
    std::vector<std::vector<ResidualBlockParams>> stages_;
    Tensor lift_w; // [c_last x feature_dim]
    Tensor lift_b; // [feature_dim]
};

struct VisualFeatureSet {
    std::string video_id;
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<float> values; // row-major, single precision end to end
    std::vector<uint32_t> frame_indices;
    std::string extractor_tag; // not persisted in the feature file; the
                               // extraction index manifest carries it

    void validate() const; // throws DataError
    Tensor to_tensor() const;
};

VisualFeatureSet extract_features(const ResNetMini& net, const std::vector<Tensor>& frames,
                                  const std::string& video_id,
                                  const std::vector<uint32_t>& frame_indices);

void write_features(const VisualFeatureSet& set, const std::string& path);
VisualFeatureSet read_features(const std::string& path);

enum class SamplePolicy { uniform, first_n };
std::vector<uint32_t> sample_frames(int64_t total, int64_t n, SamplePolicy policy);

// P6 raster, maxval up to 255; returns [3 x h x w] scaled to [0,1].
Tensor read_ppm(const std::string& path);
Tensor resize_bilinear(const Tensor& img, int64_t out_h, int64_t out_w);

// read_ppm + resize to the config extent + (v - pixel_mean) / pixel_std.
Tensor load_frame(const std::string& path, const ResNetMiniConfig& cfg);

} // namespace capcore
