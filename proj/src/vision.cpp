#include "capcore/vision.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "capcore/errors.hpp"
#include "capcore/ops.hpp"

namespace capcore {

void ResNetMiniConfig::validate() const {
    if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
    if (stage_channels.empty()) throw ConfigError("stage_channels must be non-empty");
    for (int64_t c : stage_channels) {
        if (c < 1) throw ConfigError("stage_channels must be strictly positive");
    }
    if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be >= 1");
    if (input_size < 32) throw ConfigError("input_size must be >= 32");
    if (!(pixel_std > 0.0)) throw ConfigError("pixel_std must be positive");
}

std::string ResNetMiniConfig::tag() const {
    std::ostringstream canon;
    canon << "channels=";
    for (size_t i = 0; i < stage_channels.size(); ++i) {
        if (i) canon << ',';
        canon << stage_channels[i];
    }
    canon << ";blocks=" << blocks_per_stage << ";input=" << input_size
          << ";dim=" << feature_dim << ";mean=" << pixel_mean << ";std=" << pixel_std
          << ";seed=" << weight_seed;
    // FNV-1a over the canonical text
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : canon.str()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

namespace {

ConvBnParams make_conv_bn(Rng& rng, int64_t ci, int64_t co, int64_t kh, int64_t kw,
                          int64_t stride, int64_t pad) {
    ConvBnParams p;
    const double stddev = std::sqrt(2.0 / static_cast<double>(ci * kh * kw));
    p.kernel = Tensor::randn({co, ci, kh, kw}, rng, stddev);
    p.gain = Tensor::full({co}, 1.0);
    p.bias = Tensor::zeros({co});
    p.running_mean = Tensor::zeros({co});
    p.running_var = Tensor::full({co}, 1.0);
    p.stride = stride;
    p.pad = pad;
    return p;
}

Tensor conv_bn(const ConvBnParams& p, const Tensor& x) {
    Tensor y = conv2d(x, p.kernel, p.stride, p.pad);
    return batch_norm2d(y, p.gain, p.bias, p.running_mean, p.running_var);
}

} // namespace

ResNetMini::ResNetMini(ResNetMiniConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.weight_seed);
    stem_ = make_conv_bn(rng, 3, cfg_.stage_channels[0], 3, 3, 2, 1);
    int64_t prev = cfg_.stage_channels[0];
    for (size_t s = 0; s < cfg_.stage_channels.size(); ++s) {
        const int64_t c = cfg_.stage_channels[s];
        std::vector<ResidualBlockParams> blocks;
        for (int64_t b = 0; b < cfg_.blocks_per_stage; ++b) {
            ResidualBlockParams blk;
            const bool downsample = s > 0 && b == 0;
            const int64_t stride = downsample ? 2 : 1;
            blk.conv1 = make_conv_bn(rng, prev, c, 3, 3, stride, 1);
            blk.conv2 = make_conv_bn(rng, c, c, 3, 3, 1, 1);
            if (prev != c || stride != 1) {
                blk.has_projection = true;
                blk.projection = make_conv_bn(rng, prev, c, 1, 1, stride, 0);
            }
            blocks.push_back(std::move(blk));
            prev = c;
        }
        stages_.push_back(std::move(blocks));
    }
    const int64_t c_last = cfg_.stage_channels.back();
    lift_w = Tensor::randn({c_last, cfg_.feature_dim}, rng,
                           std::sqrt(1.0 / static_cast<double>(c_last)));
    lift_b = Tensor::zeros({cfg_.feature_dim});
}

Tensor ResNetMini::block_forward(const ResidualBlockParams& block, const Tensor& x) {
    Tensor y = conv_bn(block.conv2, relu(conv_bn(block.conv1, x)));
    Tensor shortcut = block.has_projection ? conv_bn(block.projection, x) : x;
    return relu(add(y, shortcut));
}

Tensor ResNetMini::forward(const Tensor& frame) const {
    if (frame.rank() != 3 || frame.dim(0) != 3) {
        throw ShapeError("frame must be [3 x H x W], got " + shape_str(frame.shape()));
    }
    if (frame.dim(1) != cfg_.input_size || frame.dim(2) != cfg_.input_size) {
        throw ShapeError("frame extent " + shape_str(frame.shape()) + " does not match input_size " +
                         std::to_string(cfg_.input_size));
    }
    for (double v : frame.data()) {
        if (!std::isfinite(v)) throw NumericError("non-finite pixel in input frame");
    }
    Tensor h = relu(conv_bn(stem_, frame));
    for (const auto& stage : stages_) {
        for (const auto& blk : stage) h = block_forward(blk, h);
    }
    Tensor pooled = reshape(global_avg_pool(h), {1, cfg_.stage_channels.back()});
    Tensor feature = add_rowwise(matmul(pooled, lift_w), lift_b);
    return reshape(feature, {cfg_.feature_dim});
}

std::vector<std::pair<std::string, Tensor>> ResNetMini::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto push_conv_bn = [&out](const std::string& prefix, const ConvBnParams& p) {
        out.emplace_back(prefix + ".kernel", p.kernel);
        out.emplace_back(prefix + ".gain", p.gain);
        out.emplace_back(prefix + ".bias", p.bias);
    };
    push_conv_bn("stem", stem_);
    for (size_t s = 0; s < stages_.size(); ++s) {
        for (size_t b = 0; b < stages_[s].size(); ++b) {
            const std::string prefix =
                "stage" + std::to_string(s) + ".block" + std::to_string(b);
            push_conv_bn(prefix + ".conv1", stages_[s][b].conv1);
            push_conv_bn(prefix + ".conv2", stages_[s][b].conv2);
            if (stages_[s][b].has_projection) push_conv_bn(prefix + ".proj", stages_[s][b].projection);
        }
    }
    out.emplace_back("lift.weight", lift_w);
    out.emplace_back("lift.bias", lift_b);
    return out;
}

void VisualFeatureSet::validate() const {
    if (rows < 1) throw DataError("feature set must have at least one row");
    if (cols < 1) throw DataError("feature set must have at least one column");
    if (values.size() != static_cast<size_t>(rows * cols)) {
        throw DataError("feature payload size does not match rows x cols");
    }
    if (frame_indices.size() != static_cast<size_t>(rows)) {
        throw DataError("frame index count does not match rows");
    }
    for (size_t i = 1; i < frame_indices.size(); ++i) {
        if (frame_indices[i] <= frame_indices[i - 1]) {
            throw DataError("frame indices must be strictly ascending");
        }
    }
    for (float v : values) {
        if (!std::isfinite(v)) throw DataError("non-finite feature value");
    }
}

Tensor VisualFeatureSet::to_tensor() const {
    std::vector<double> wide(values.begin(), values.end());
    return Tensor::from_data({rows, cols}, std::move(wide));
}

VisualFeatureSet extract_features(const ResNetMini& net, const std::vector<Tensor>& frames,
                                  const std::string& video_id,
                                  const std::vector<uint32_t>& frame_indices) {
    if (frames.empty()) throw DataError("extract_features: no frames for video " + video_id);
    if (frames.size() != frame_indices.size()) {
        throw DataError("extract_features: frame/index count mismatch for video " + video_id);
    }
    VisualFeatureSet set;
    set.video_id = video_id;
    set.rows = static_cast<int64_t>(frames.size());
    set.cols = net.config().feature_dim;
    set.frame_indices = frame_indices;
    set.extractor_tag = net.config().tag();
    set.values.reserve(static_cast<size_t>(set.rows * set.cols));
    for (const Tensor& frame : frames) {
        Tensor f = net.forward(frame);
        for (double v : f.data()) set.values.push_back(static_cast<float>(v));
    }
    set.validate();
    return set;
}

namespace {

constexpr char kMagic[4] = {'M', 'M', 'V', 'C'};
constexpr uint32_t kVersion = 1;

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) { put_u32(buf, std::bit_cast<uint32_t>(v)); }

class ByteReader {
public:
    ByteReader(std::string data, std::string path)
        : data_(std::move(data)), path_(std::move(path)) {}

    void need(size_t n, const char* what) {
        if (pos_ + n > data_.size()) {
            throw DataError("truncated feature file " + path_ + " while reading " + what);
        }
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint16_t>(byte(0) | (byte(1) << 8));
        pos_ += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = byte(0) | (byte(1) << 8) | (byte(2) << 16) | (byte(3) << 24);
        pos_ += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    bool exhausted() const { return pos_ == data_.size(); }

private:
    uint32_t byte(size_t off) const { return static_cast<unsigned char>(data_[pos_ + off]); }
    std::string data_;
    std::string path_;
    size_t pos_ = 0;
};

} // namespace

void write_features(const VisualFeatureSet& set, const std::string& path) {
    set.validate();
    if (set.video_id.size() > 0xffff) throw DataError("video_id longer than 65535 bytes");
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<uint32_t>(set.rows));
    put_u32(buf, static_cast<uint32_t>(set.cols));
    put_u16(buf, static_cast<uint16_t>(set.video_id.size()));
    buf.append(set.video_id);
    for (uint32_t idx : set.frame_indices) put_u32(buf, idx);
    for (float v : set.values) put_f32(buf, v);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("short write to " + path);
}

VisualFeatureSet read_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open feature file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    ByteReader r(ss.str(), path);

    const std::string magic = r.bytes(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw DataError("bad magic in feature file " + path);
    }
    const uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw DataError("unsupported feature file version " + std::to_string(version) + " in " + path);
    }
    VisualFeatureSet set;
    set.rows = r.u32("row count");
    set.cols = r.u32("column count");
    const uint16_t id_len = r.u16("video id length");
    set.video_id = r.bytes(id_len, "video id");
    set.frame_indices.reserve(static_cast<size_t>(set.rows));
    for (int64_t i = 0; i < set.rows; ++i) set.frame_indices.push_back(r.u32("frame index"));
    set.values.reserve(static_cast<size_t>(set.rows * set.cols));
    for (int64_t i = 0; i < set.rows * set.cols; ++i) set.values.push_back(r.f32("payload"));
    if (!r.exhausted()) throw DataError("trailing bytes after payload in " + path);
    set.validate();
    return set;
}

std::vector<uint32_t> sample_frames(int64_t total, int64_t n, SamplePolicy policy) {
    if (n < 1) throw DataError("sample_frames: n must be >= 1");
    if (n > total) {
        throw DataError("sample_frames: requested " + std::to_string(n) + " of " +
                        std::to_string(total) + " frames");
    }
    std::vector<uint32_t> idx;
    idx.reserve(static_cast<size_t>(n));
    if (policy == SamplePolicy::first_n) {
        for (int64_t i = 0; i < n; ++i) idx.push_back(static_cast<uint32_t>(i));
        return idx;
    }
    if (n == 1) return {0};
    std::vector<int64_t> raw(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        raw[static_cast<size_t>(i)] = std::lround(
            static_cast<double>(i) * static_cast<double>(total - 1) / static_cast<double>(n - 1));
    }
    // repair any rounding collisions by shifting right; total >= n guarantees room
    for (int64_t i = 1; i < n; ++i) {
        if (raw[static_cast<size_t>(i)] <= raw[static_cast<size_t>(i - 1)]) {
            raw[static_cast<size_t>(i)] = raw[static_cast<size_t>(i - 1)] + 1;
        }
    }
    for (int64_t v : raw) {
        if (v >= total) throw DataError("sample_frames: index repair overflowed");
        idx.push_back(static_cast<uint32_t>(v));
    }
    return idx;
}

namespace {

// Next header token, skipping whitespace and '#' comment lines.
std::string ppm_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw DataError("truncated raster header in " + path);
    return tok;
}

} // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open raster file " + path);
    if (ppm_token(in, path) != "P6") throw DataError("not a P6 raster: " + path);
    const int64_t w = std::stoll(ppm_token(in, path));
    const int64_t h = std::stoll(ppm_token(in, path));
    const int64_t maxval = std::stoll(ppm_token(in, path));
    if (w < 1 || h < 1) throw DataError("bad raster extent in " + path);
    if (maxval < 1 || maxval > 255) {
        throw DataError("unsupported raster maxval " + std::to_string(maxval) + " in " + path);
    }
    // header ends with the single whitespace byte consumed by ppm_token
    std::vector<unsigned char> raw(static_cast<size_t>(w * h * 3));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw DataError("truncated raster payload in " + path);
    }
    Tensor img = Tensor::zeros({3, h, w});
    auto& d = img.mutable_data();
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                d[static_cast<size_t>(c * h * w + y * w + x)] =
                    static_cast<double>(raw[static_cast<size_t>((y * w + x) * 3 + c)]) /
                    static_cast<double>(maxval);
            }
        }
    }
    return img;
}

Tensor resize_bilinear(const Tensor& img, int64_t out_h, int64_t out_w) {
    if (img.rank() != 3) throw ShapeError("resize_bilinear expects [C x H x W]");
    if (out_h < 1 || out_w < 1) throw ShapeError("resize target must be positive");
    const int64_t c = img.dim(0), in_h = img.dim(1), in_w = img.dim(2);
    if (in_h == out_h && in_w == out_w) return img;
    Tensor out = Tensor::zeros({c, out_h, out_w});
    const auto& src = img.data();
    auto& dst = out.mutable_data();
    auto coord = [](int64_t i, int64_t in, int64_t outn) {
        if (outn == 1) return (static_cast<double>(in) - 1.0) / 2.0;
        return static_cast<double>(i) * (static_cast<double>(in) - 1.0) /
               (static_cast<double>(outn) - 1.0);
    };
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t y = 0; y < out_h; ++y) {
            const double fy = coord(y, in_h, out_h);
            const int64_t y0 = static_cast<int64_t>(fy);
            const int64_t y1 = std::min(y0 + 1, in_h - 1);
            const double wy = fy - static_cast<double>(y0);
            for (int64_t x = 0; x < out_w; ++x) {
                const double fx = coord(x, in_w, out_w);
                const int64_t x0 = static_cast<int64_t>(fx);
                const int64_t x1 = std::min(x0 + 1, in_w - 1);
                const double wx = fx - static_cast<double>(x0);
                auto px = [&](int64_t yy, int64_t xx) {
                    return src[static_cast<size_t>(ch * in_h * in_w + yy * in_w + xx)];
                };
                dst[static_cast<size_t>(ch * out_h * out_w + y * out_w + x)] =
                    (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) +
                    wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1));
            }
        }
    }
    return out;
}

Tensor load_frame(const std::string& path, const ResNetMiniConfig& cfg) {
    Tensor img = resize_bilinear(read_ppm(path), cfg.input_size, cfg.input_size);
    auto& d = img.mutable_data();
    for (double& v : d) v = (v - cfg.pixel_mean) / cfg.pixel_std;
    return img;
}

} // namespace capcore
