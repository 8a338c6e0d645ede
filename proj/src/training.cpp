#include "capcore/train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <numeric>
#include <sstream>

#include <zlib.h>

#include "capcore/ops.hpp"

namespace capcore {

void TrainConfig::validate() const {
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (accumulation_steps < 1) throw ConfigError("accumulation_steps must be at least 1");
    if (clip_norm <= 0.0) throw ConfigError("clip_norm must be positive");
    if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
    if (loss_scale <= 0.0) throw ConfigError("loss_scale must be positive");
}

OptimizerState OptimizerState::init(const ModelParams& params) {
    OptimizerState st;
    for (const auto& [name, t] : params.named()) {
        st.m.push_back(Tensor::zeros(t.shape()));
        st.v.push_back(Tensor::zeros(t.shape()));
    }
    return st;
}

std::vector<Tensor> penalized_params(const ModelParams& params) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : params.named()) {
        if (name.find(".ln") != std::string::npos) continue;
        out.push_back(t);
    }
    return out;
}

std::vector<Tensor> forward_batch(const Batch& batch, const ModelParams& params) {
    if (batch.size <= 0) throw DataError("empty batch");
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(batch.size));
    const int64_t n = batch.vis_len, dfeat = batch.feat_dim, t = batch.text_len;
    for (int64_t b = 0; b < batch.size; ++b) {
        std::vector<double> feat(static_cast<size_t>(n * dfeat));
        const auto& vis = batch.visual.data();
        std::copy(vis.begin() + b * n * dfeat, vis.begin() + (b + 1) * n * dfeat, feat.begin());
        std::vector<uint8_t> vmask(batch.visual_mask.begin() + b * n,
                                   batch.visual_mask.begin() + (b + 1) * n);
        std::vector<int> ids(batch.input_ids.begin() + b * t,
                             batch.input_ids.begin() + (b + 1) * t);
        Tensor mem = encode(embed_visual(Tensor::from_data({n, dfeat}, std::move(feat)), params),
                            params, vmask);
        out.push_back(decoder_forward(ids, mem, params, vmask));
    }
    return out;
}

Tensor compute_loss(const std::vector<Tensor>& logits, const Batch& batch,
                    const ModelParams& params, double lambda, bool mean_loss) {
    if (static_cast<int64_t>(logits.size()) != batch.size) {
        throw ShapeError("compute_loss: one logits tensor per batch row required");
    }
    const int64_t t = batch.text_len;
    int64_t tokens = 0;
    Tensor total;
    for (int64_t b = 0; b < batch.size; ++b) {
        std::vector<int> targets(batch.target_ids.begin() + b * t,
                                 batch.target_ids.begin() + (b + 1) * t);
        std::vector<uint8_t> mask(batch.loss_mask.begin() + b * t,
                                  batch.loss_mask.begin() + (b + 1) * t);
        for (uint8_t m : mask) tokens += m ? 1 : 0;
        Tensor part = nll_sum_rows(logits[static_cast<size_t>(b)], targets, mask);
        total = b == 0 ? part : add(total, part);
    }
    if (tokens == 0) throw DataError("compute_loss: every position is padded");
    Tensor loss = mean_loss ? scale(total, 1.0 / static_cast<double>(tokens)) : total;
    if (lambda != 0.0) {
        Tensor l2;
        bool first = true;
        for (const Tensor& w : penalized_params(params)) {
            Tensor s = sum_squares(w);
            l2 = first ? s : add(l2, s);
            first = false;
        }
        if (!first) loss = add(loss, scale(l2, lambda));
    }
    return loss;
}

Tensor model_loss(const Batch& batch, const ModelParams& params, double lambda, bool mean_loss) {
    return compute_loss(forward_batch(batch, params), batch, params, lambda, mean_loss);
}

double clip_gradients(std::vector<Tensor>& grads, double clip_norm) {
    if (clip_norm <= 0.0) throw ConfigError("clip_norm must be positive");
    double sq = 0.0;
    for (const Tensor& g : grads)
        for (double x : g.data()) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
        const double s = clip_norm / norm;
        for (Tensor& g : grads)
            for (double& x : g.mutable_data()) x *= s;
    }
    return norm;
}

bool all_finite(const std::vector<Tensor>& grads) {
    for (const Tensor& g : grads)
        for (double x : g.data())
            if (!std::isfinite(x)) return false;
    return true;
}

void adamw_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                OptimizerState& state, const TrainConfig& cfg) {
    if (params.size() != grads.size() || params.size() != state.m.size() ||
        params.size() != state.v.size()) {
        throw ShapeError("adamw_step: parameter, gradient, and moment counts differ");
    }
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    state.t += 1;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape() != grads[i].shape()) {
            throw ShapeError("adamw_step: gradient shape mismatch");
        }
        Tensor param = params[i]; // shares storage
        auto& theta = param.mutable_data();
        const auto& g = grads[i].data();
        auto& m = state.m[i].mutable_data();
        auto& v = state.v[i].mutable_data();
        for (size_t e = 0; e < theta.size(); ++e) {
            m[e] = kBeta1 * m[e] + (1.0 - kBeta1) * g[e];
            v[e] = kBeta2 * v[e] + (1.0 - kBeta2) * g[e] * g[e];
            const double m_hat = m[e] / bc1;
            const double v_hat = v[e] / bc2;
            const double old = theta[e];
            theta[e] = old - cfg.learning_rate * m_hat / std::sqrt(v_hat + kEps) -
                       cfg.learning_rate * cfg.weight_decay * old;
        }
    }
}

TrainState TrainState::init(const ModelParams& params, const TrainConfig& cfg) {
    TrainState st;
    st.opt = OptimizerState::init(params);
    st.loss_scale = cfg.loss_scale;
    st.rng = Rng(cfg.seed);
    return st;
}

EpochStats train_epoch(ModelParams& params, const std::vector<Batch>& batches,
                       const TrainConfig& cfg, TrainState& state, const TrainHooks& hooks) {
    cfg.validate();
    if (batches.empty()) throw DataError("train_epoch: no batches");
    params.set_requires_grad(true);
    params.zero_grad();

    std::vector<size_t> order(batches.size());
    std::iota(order.begin(), order.end(), size_t{0});
    state.rng.shuffle(order);

    std::vector<Tensor> plist;
    for (const auto& [name, t] : params.named()) plist.push_back(t);

    EpochStats stats;
    double loss_sum = 0.0;
    int64_t micro = 0;
    double norm_sum = 0.0;
    const size_t k = static_cast<size_t>(cfg.accumulation_steps);

    for (size_t begin = 0; begin < order.size(); begin += k) {
        const auto t0 = std::chrono::steady_clock::now();
        const size_t end = std::min(order.size(), begin + k);
        const size_t group = end - begin;
        double group_loss = 0.0;
        for (size_t i = begin; i < end; ++i) {
            GradTape tape;
            GradTape::Scope scope(tape);
            Tensor loss = model_loss(batches[order[i]], params, cfg.lambda, cfg.mean_loss);
            group_loss += loss.item();
            tape.backward(scale(loss, state.loss_scale / static_cast<double>(group)));
        }
        group_loss /= static_cast<double>(group);
        loss_sum += group_loss * static_cast<double>(group);
        micro += static_cast<int64_t>(group);

        std::vector<Tensor> grads;
        grads.reserve(plist.size());
        for (const Tensor& p : plist) {
            Tensor g = p.grad();
            for (double& x : g.mutable_data()) x /= state.loss_scale;
            grads.push_back(std::move(g));
        }
        if (hooks.mangle_grads) hooks.mangle_grads(grads);
        params.zero_grad();

        const auto wall = [&] {
            return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                             t0)
                .count();
        };
        if (!all_finite(grads)) {
            state.loss_scale /= 2.0;
            stats.skipped += 1;
            if (hooks.on_step) {
                hooks.on_step({state.global_step, state.epoch, group_loss, 0.0, state.loss_scale,
                               wall(), true});
            }
            continue;
        }
        const double norm = clip_gradients(grads, cfg.clip_norm);
        adamw_step(plist, grads, state.opt, cfg);
        state.global_step += 1;
        stats.updates += 1;
        norm_sum += norm;
        stats.max_grad_norm = std::max(stats.max_grad_norm, norm);
        if (hooks.on_step) {
            hooks.on_step({state.global_step, state.epoch, group_loss, norm, state.loss_scale,
                           wall(), false});
        }
    }
    stats.mean_loss = loss_sum / static_cast<double>(micro);
    if (stats.updates > 0) stats.mean_grad_norm = norm_sum / static_cast<double>(stats.updates);
    state.epoch += 1;
    return stats;
}

// ---------------------------------------------------------------------------
// Checkpoint file

namespace {

constexpr char kMagic[4] = {'M', 'M', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u8(std::string& buf, uint8_t v) { buf.push_back(static_cast<char>(v)); }

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) { put_u64(buf, std::bit_cast<uint64_t>(v)); }

void put_str16(std::string& buf, const std::string& s, const char* what) {
    if (s.size() > 0xffff) throw DataError(std::string(what) + " longer than 65535 bytes");
    put_u16(buf, static_cast<uint16_t>(s.size()));
    buf.append(s);
}

void put_tensor(std::string& buf, const std::string& name, const Tensor& t) {
    put_str16(buf, name, "tensor name");
    const Shape& sh = t.shape();
    if (sh.size() > 0xff) throw DataError("tensor rank too large for checkpoint");
    put_u8(buf, static_cast<uint8_t>(sh.size()));
    for (int64_t d : sh) {
        if (d < 0 || d > 0xffffffffLL) throw DataError("tensor dimension out of range");
        put_u32(buf, static_cast<uint32_t>(d));
    }
    for (double v : t.data()) put_f64(buf, v);
}

class ByteReader {
public:
    ByteReader(std::string data, std::string path)
        : data_(std::move(data)), path_(std::move(path)) {}

    void need(size_t n, const char* what) {
        if (pos_ + n > data_.size()) {
            throw DataError("truncated checkpoint " + path_ + " while reading " + what);
        }
    }
    uint8_t u8(const char* what) {
        need(1, what);
        uint8_t v = static_cast<uint8_t>(byte(0));
        pos_ += 1;
        return v;
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
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(byte(static_cast<size_t>(i))) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::string str16(const char* what) { return bytes(u16(what), what); }
    size_t pos() const { return pos_; }
    bool exhausted() const { return pos_ == data_.size(); }
    const std::string& data() const { return data_; }
    const std::string& path() const { return path_; }

private:
    uint32_t byte(size_t off) const { return static_cast<unsigned char>(data_[pos_ + off]); }
    std::string data_;
    std::string path_;
    size_t pos_ = 0;
};

std::pair<std::string, Tensor> read_tensor(ByteReader& r) {
    std::string name = r.str16("tensor name");
    const uint8_t rank = r.u8("tensor rank");
    Shape sh;
    int64_t numel = 1;
    for (uint8_t i = 0; i < rank; ++i) {
        const uint32_t d = r.u32("tensor dimension");
        sh.push_back(static_cast<int64_t>(d));
        numel *= static_cast<int64_t>(d);
        if (numel > (int64_t{1} << 40)) throw DataError("tensor payload too large in checkpoint");
    }
    r.need(static_cast<size_t>(numel) * 8, "tensor payload");
    std::vector<double> values(static_cast<size_t>(numel));
    for (double& v : values) v = r.f64("tensor payload");
    return {std::move(name), Tensor::from_data(std::move(sh), std::move(values))};
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string config_text(const Checkpoint& ck) {
    std::ostringstream os;
    os << "d_model=" << ck.config.d_model << '\n'
       << "n_heads=" << ck.config.n_heads << '\n'
       << "n_encoder_layers=" << ck.config.n_encoder_layers << '\n'
       << "n_decoder_layers=" << ck.config.n_decoder_layers << '\n'
       << "d_ff=" << ck.config.d_ff << '\n'
       << "vocab_size=" << ck.config.vocab_size << '\n'
       << "max_visual_tokens=" << ck.config.max_visual_tokens << '\n'
       << "max_text_len=" << ck.config.max_text_len << '\n'
       << "feature_dim=" << ck.config.feature_dim << '\n'
       << "epoch=" << ck.epoch << '\n'
       << "global_step=" << ck.global_step << '\n'
       << "loss_scale=" << fmt_double(ck.loss_scale) << '\n'
       << "rng=" << ck.rng_state << '\n';
    return os.str();
}

void parse_config_text(const std::string& text, Checkpoint& ck) {
    std::map<std::string, bool> seen;
    std::istringstream is(text);
    std::string line;
    const auto to_i64 = [](const std::string& s) { return static_cast<int64_t>(std::stoll(s)); };
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw DataError("malformed checkpoint config line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        seen[key] = true;
        if (key == "d_model") ck.config.d_model = to_i64(val);
        else if (key == "n_heads") ck.config.n_heads = to_i64(val);
        else if (key == "n_encoder_layers") ck.config.n_encoder_layers = to_i64(val);
        else if (key == "n_decoder_layers") ck.config.n_decoder_layers = to_i64(val);
        else if (key == "d_ff") ck.config.d_ff = to_i64(val);
        else if (key == "vocab_size") ck.config.vocab_size = to_i64(val);
        else if (key == "max_visual_tokens") ck.config.max_visual_tokens = to_i64(val);
        else if (key == "max_text_len") ck.config.max_text_len = to_i64(val);
        else if (key == "feature_dim") ck.config.feature_dim = to_i64(val);
        else if (key == "epoch") ck.epoch = to_i64(val);
        else if (key == "global_step") ck.global_step = to_i64(val);
        else if (key == "loss_scale") ck.loss_scale = std::stod(val);
        else if (key == "rng") ck.rng_state = val;
        else throw DataError("unknown checkpoint config key: " + key);
    }
    for (const char* key : {"d_model", "n_heads", "n_encoder_layers", "n_decoder_layers", "d_ff",
                            "vocab_size", "max_visual_tokens", "max_text_len", "feature_dim",
                            "epoch", "global_step", "loss_scale", "rng"}) {
        if (!seen[key]) throw DataError(std::string("checkpoint config missing key: ") + key);
    }
}

Tensor deep_copy(const Tensor& t) { return Tensor::from_data(t.shape(), t.data()); }

} // namespace

Checkpoint make_checkpoint(const ModelParams& params, const Vocabulary& vocab,
                           const TrainState& state) {
    Checkpoint ck;
    ck.config = params.cfg;
    ck.vocab = vocab.table();
    for (const auto& [name, t] : params.named()) ck.tensors.emplace_back(name, deep_copy(t));
    ck.has_optimizer = true;
    ck.opt_step = state.opt.t;
    size_t i = 0;
    for (const auto& [name, t] : params.named()) {
        ck.opt_tensors.emplace_back("m:" + name, deep_copy(state.opt.m[i]));
        ck.opt_tensors.emplace_back("v:" + name, deep_copy(state.opt.v[i]));
        ++i;
    }
    ck.epoch = state.epoch;
    ck.global_step = state.global_step;
    ck.loss_scale = state.loss_scale;
    ck.rng_state = state.rng.state();
    return ck;
}

ModelParams params_from_checkpoint(const Checkpoint& ck) {
    ck.config.validate();
    ModelParams p = ModelParams::init(ck.config, 0);
    auto named = p.named();
    if (named.size() != ck.tensors.size()) {
        throw DataError("checkpoint parameter count does not match its config");
    }
    std::map<std::string, Tensor> by_name(named.begin(), named.end());
    for (const auto& [name, t] : ck.tensors) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("unknown tensor in checkpoint: " + name);
        if (it->second.shape() != t.shape()) {
            throw DataError("checkpoint tensor " + name + " has a shape inconsistent with its config");
        }
        it->second.mutable_data() = t.data();
    }
    return p;
}

Vocabulary vocab_from_checkpoint(const Checkpoint& ck) { return Vocabulary::from_table(ck.vocab); }

TrainState state_from_checkpoint(const Checkpoint& ck, const ModelParams& params) {
    TrainState st;
    st.opt = OptimizerState::init(params);
    if (ck.has_optimizer) {
        auto named = params.named();
        if (ck.opt_tensors.size() != 2 * named.size()) {
            throw DataError("checkpoint optimizer block does not match its config");
        }
        std::map<std::string, size_t> index;
        for (size_t i = 0; i < named.size(); ++i) index[named[i].first] = i;
        for (const auto& [name, t] : ck.opt_tensors) {
            if (name.size() < 3 || name[1] != ':' || (name[0] != 'm' && name[0] != 'v')) {
                throw DataError("unknown optimizer tensor in checkpoint: " + name);
            }
            auto it = index.find(name.substr(2));
            if (it == index.end()) {
                throw DataError("unknown optimizer tensor in checkpoint: " + name);
            }
            Tensor dst = name[0] == 'm' ? st.opt.m[it->second] : st.opt.v[it->second];
            if (dst.shape() != t.shape()) {
                throw DataError("checkpoint tensor " + name + " has a shape inconsistent with its config");
            }
            dst.mutable_data() = t.data();
        }
        st.opt.t = ck.opt_step;
    }
    st.loss_scale = ck.loss_scale;
    st.epoch = ck.epoch;
    st.global_step = ck.global_step;
    st.rng.set_state(ck.rng_state);
    return st;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    const std::string cfg = config_text(ck);
    put_u32(buf, static_cast<uint32_t>(cfg.size()));
    buf.append(cfg);
    put_u32(buf, static_cast<uint32_t>(ck.vocab.size()));
    for (const std::string& tok : ck.vocab) put_str16(buf, tok, "vocabulary token");
    put_u32(buf, static_cast<uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) put_tensor(buf, name, t);
    put_u8(buf, ck.has_optimizer ? 1 : 0);
    if (ck.has_optimizer) {
        put_u64(buf, static_cast<uint64_t>(ck.opt_step));
        put_u32(buf, static_cast<uint32_t>(ck.opt_tensors.size()));
        for (const auto& [name, t] : ck.opt_tensors) put_tensor(buf, name, t);
    }
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    put_u32(buf, crc);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ByteReader r(std::move(data), path);

    if (r.bytes(4, "magic") != std::string(kMagic, 4)) {
        throw DataError("bad magic in checkpoint " + path);
    }
    const uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    }
    Checkpoint ck;
    const uint32_t cfg_len = r.u32("config length");
    parse_config_text(r.bytes(cfg_len, "config text"), ck);
    const uint32_t vocab_n = r.u32("vocabulary size");
    ck.vocab.reserve(vocab_n);
    for (uint32_t i = 0; i < vocab_n; ++i) ck.vocab.push_back(r.str16("vocabulary token"));
    const uint32_t tensor_n = r.u32("tensor count");
    ck.tensors.reserve(tensor_n);
    for (uint32_t i = 0; i < tensor_n; ++i) ck.tensors.push_back(read_tensor(r));
    ck.has_optimizer = r.u8("optimizer flag") != 0;
    if (ck.has_optimizer) {
        ck.opt_step = static_cast<int64_t>(r.u64("optimizer step"));
        const uint32_t opt_n = r.u32("optimizer tensor count");
        ck.opt_tensors.reserve(opt_n);
        for (uint32_t i = 0; i < opt_n; ++i) ck.opt_tensors.push_back(read_tensor(r));
    }
    const size_t body = r.pos();
    const uint32_t stored = r.u32("checksum");
    if (!r.exhausted()) throw DataError("trailing bytes after checkpoint payload in " + path);
    const uint32_t actual = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(r.data().data()), static_cast<uInt>(body)));
    if (stored != actual) throw DataError("checkpoint checksum mismatch in " + path);
    return ck;
}

} // namespace capcore
