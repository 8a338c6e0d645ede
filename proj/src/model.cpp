#include "capcore/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "capcore/errors.hpp"
#include "capcore/ops.hpp"

namespace capcore {

void ModelConfig::validate() const {
    if (d_model < 1) throw ConfigError("d_model must be >= 1");
    if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
    if (d_model % n_heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (n_encoder_layers < 0 || n_decoder_layers < 0) throw ConfigError("layer counts must be >= 0");
    if (d_ff < 0) throw ConfigError("d_ff must be >= 0 (0 selects 4*d_model)");
    if (vocab_size < 4) throw ConfigError("vocab_size must cover the 4 special tokens");
    if (max_visual_tokens < 1) throw ConfigError("max_visual_tokens must be >= 1");
    if (max_text_len < 2) throw ConfigError("max_text_len must be >= 2");
    if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
}

namespace {

constexpr double kInitStd = 0.02;

Tensor weight(Rng& rng, Shape shape) { return Tensor::randn(std::move(shape), rng, kInitStd); }

AttentionParams init_attention(Rng& rng, int64_t d) {
    return {weight(rng, {d, d}), weight(rng, {d, d}), weight(rng, {d, d}), weight(rng, {d, d})};
}

FeedForwardParams init_ff(Rng& rng, int64_t d, int64_t ff) {
    FeedForwardParams p;
    p.w1 = weight(rng, {d, ff});
    p.b1 = Tensor::zeros({ff});
    p.w2 = weight(rng, {ff, d});
    p.b2 = Tensor::zeros({d});
    return p;
}

LayerNormParams init_ln(int64_t d) { return {Tensor::full({d}, 1.0), Tensor::zeros({d})}; }

} // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    Rng rng(seed);
    const int64_t d = cfg.d_model, ff = cfg.ff_dim();
    p.w_p = weight(rng, {cfg.feature_dim, d});
    p.p_vis = weight(rng, {cfg.max_visual_tokens, d});
    p.p_text = weight(rng, {cfg.max_text_len, d});
    p.tok_embed = weight(rng, {cfg.vocab_size, d});
    for (int64_t i = 0; i < cfg.n_encoder_layers; ++i) {
        EncoderLayerParams layer;
        layer.ln1 = init_ln(d);
        layer.attn = init_attention(rng, d);
        layer.ln2 = init_ln(d);
        layer.ff = init_ff(rng, d, ff);
        p.encoder.push_back(std::move(layer));
    }
    for (int64_t i = 0; i < cfg.n_decoder_layers; ++i) {
        DecoderLayerParams layer;
        layer.ln1 = init_ln(d);
        layer.self_attn = init_attention(rng, d);
        layer.ln2 = init_ln(d);
        layer.cross_attn = init_attention(rng, d);
        layer.ln3 = init_ln(d);
        layer.ff = init_ff(rng, d, ff);
        p.decoder.push_back(std::move(layer));
    }
    p.w_o = weight(rng, {d, cfg.vocab_size});
    p.b_o = Tensor::zeros({cfg.vocab_size});
    return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto add_ln = [&out](const std::string& pre, const LayerNormParams& ln) {
        out.emplace_back(pre + ".gain", ln.gain);
        out.emplace_back(pre + ".bias", ln.bias);
    };
    auto add_attn = [&out](const std::string& pre, const AttentionParams& a) {
        out.emplace_back(pre + ".wq", a.wq);
        out.emplace_back(pre + ".wk", a.wk);
        out.emplace_back(pre + ".wv", a.wv);
        out.emplace_back(pre + ".wo", a.wo);
    };
    auto add_ff = [&out](const std::string& pre, const FeedForwardParams& f) {
        out.emplace_back(pre + ".w1", f.w1);
        out.emplace_back(pre + ".b1", f.b1);
        out.emplace_back(pre + ".w2", f.w2);
        out.emplace_back(pre + ".b2", f.b2);
    };
    out.emplace_back("w_p", w_p);
    out.emplace_back("p_vis", p_vis);
    out.emplace_back("p_text", p_text);
    out.emplace_back("tok_embed", tok_embed);
    for (size_t i = 0; i < encoder.size(); ++i) {
        const std::string pre = "enc" + std::to_string(i);
        add_ln(pre + ".ln1", encoder[i].ln1);
        add_attn(pre + ".attn", encoder[i].attn);
        add_ln(pre + ".ln2", encoder[i].ln2);
        add_ff(pre + ".ff", encoder[i].ff);
    }
    for (size_t i = 0; i < decoder.size(); ++i) {
        const std::string pre = "dec" + std::to_string(i);
        add_ln(pre + ".ln1", decoder[i].ln1);
        add_attn(pre + ".self", decoder[i].self_attn);
        add_ln(pre + ".ln2", decoder[i].ln2);
        add_attn(pre + ".cross", decoder[i].cross_attn);
        add_ln(pre + ".ln3", decoder[i].ln3);
        add_ff(pre + ".ff", decoder[i].ff);
    }
    out.emplace_back("head.w", w_o);
    out.emplace_back("head.b", b_o);
    return out;
}

void ModelParams::set_requires_grad(bool v) const {
    for (auto& [name, t] : named()) {
        Tensor handle = t;
        handle.set_requires_grad(v);
    }
}

void ModelParams::zero_grad() const {
    for (auto& [name, t] : named()) {
        Tensor handle = t;
        handle.zero_grad();
    }
}

int64_t ModelParams::param_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : named()) n += t.numel();
    return n;
}

uint64_t ModelParams::checksum() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : named()) {
        for (double v : t.data()) {
            uint64_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, sizeof(bits));
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 1099511628211ull;
            }
        }
    }
    return h;
}

int64_t param_count_formula(const ModelConfig& cfg) {
    const int64_t d = cfg.d_model, ff = cfg.ff_dim(), v = cfg.vocab_size;
    const int64_t embeddings =
        d * (cfg.feature_dim + cfg.max_visual_tokens + cfg.max_text_len + v);
    const int64_t enc_layer = 4 * d * d + 2 * d * ff + ff + 5 * d;
    const int64_t dec_layer = 8 * d * d + 2 * d * ff + ff + 7 * d;
    return embeddings + cfg.n_encoder_layers * enc_layer + cfg.n_decoder_layers * dec_layer +
           d * v + v;
}

Tensor embed_visual(const Tensor& features, const ModelParams& params) {
    if (features.rank() != 2) throw ShapeError("embed_visual expects [n x feature_dim]");
    if (features.dim(1) != params.cfg.feature_dim) {
        throw ShapeError("feature width " + std::to_string(features.dim(1)) +
                         " does not match configured feature_dim " +
                         std::to_string(params.cfg.feature_dim));
    }
    const int64_t n = features.dim(0);
    if (n < 1 || n > params.cfg.max_visual_tokens) {
        throw ShapeError("visual token count " + std::to_string(n) + " outside 1.." +
                         std::to_string(params.cfg.max_visual_tokens));
    }
    std::vector<int> rows(static_cast<size_t>(n));
    std::iota(rows.begin(), rows.end(), 0);
    return add(matmul(features, params.w_p), embedding_rows(params.p_vis, rows));
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const AttentionParams& p, int64_t n_heads,
                            const std::vector<uint8_t>* mask) {
    if (q_in.rank() != 2 || k_in.rank() != 2 || v_in.rank() != 2) {
        throw ShapeError("attention inputs must be rank 2");
    }
    const int64_t d = q_in.dim(1);
    if (k_in.dim(1) != d || v_in.dim(1) != d) throw ShapeError("attention width mismatch");
    if (k_in.dim(0) != v_in.dim(0)) throw ShapeError("key/value row count mismatch");
    if (n_heads < 1 || d % n_heads != 0) throw ConfigError("width not divisible by head count");
    const int64_t lq = q_in.dim(0), lk = k_in.dim(0), dk = d / n_heads;
    if (mask && mask->size() != static_cast<size_t>(lq * lk)) {
        throw ShapeError("attention mask extent mismatch");
    }
    const std::vector<uint8_t> allow_all(static_cast<size_t>(lq * lk), 1);
    const std::vector<uint8_t>& allow = mask ? *mask : allow_all;

    Tensor q = matmul(q_in, p.wq);
    Tensor k = matmul(k_in, p.wk);
    Tensor v = matmul(v_in, p.wv);
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(n_heads));
    for (int64_t h = 0; h < n_heads; ++h) {
        Tensor qh = slice_cols(q, h * dk, dk);
        Tensor kh = slice_cols(k, h * dk, dk);
        Tensor vh = slice_cols(v, h * dk, dk);
        Tensor weights = masked_softmax_rows(scale(matmul_nt(qh, kh), inv_scale), allow);
        heads.push_back(matmul(weights, vh));
    }
    Tensor mixed = n_heads == 1 ? heads[0] : concat_cols(heads);
    return matmul(mixed, p.wo);
}

namespace {

Tensor feed_forward(const FeedForwardParams& p, const Tensor& x) {
    Tensor h = gelu(add_rowwise(matmul(x, p.w1), p.b1));
    return add_rowwise(matmul(h, p.w2), p.b2);
}

Tensor pre_norm(const LayerNormParams& ln, const Tensor& x) {
    return layer_norm(x, ln.gain, ln.bias);
}

} // namespace

Tensor encode(const Tensor& e_v, const ModelParams& params,
              const std::vector<uint8_t>& key_mask) {
    if (e_v.rank() != 2 || e_v.dim(1) != params.cfg.d_model) {
        throw ShapeError("encoder input must be [n x d_model]");
    }
    const int64_t n = e_v.dim(0);
    if (key_mask.size() != static_cast<size_t>(n)) throw ShapeError("key mask extent mismatch");
    std::vector<uint8_t> allow(static_cast<size_t>(n * n));
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            allow[static_cast<size_t>(i * n + j)] = key_mask[static_cast<size_t>(j)];
        }
    }
    Tensor x = e_v;
    for (const EncoderLayerParams& layer : params.encoder) {
        Tensor h = pre_norm(layer.ln1, x);
        x = add(x, multi_head_attention(h, h, h, layer.attn, params.cfg.n_heads, &allow));
        x = add(x, feed_forward(layer.ff, pre_norm(layer.ln2, x)));
    }
    return x;
}

namespace {

Tensor embed_text(const std::vector<int>& ids, int64_t first_pos, const ModelParams& params) {
    const int64_t t = static_cast<int64_t>(ids.size());
    if (first_pos + t > params.cfg.max_text_len) {
        throw DataError("text position " + std::to_string(first_pos + t - 1) +
                        " exceeds max_text_len " + std::to_string(params.cfg.max_text_len));
    }
    for (int id : ids) {
        if (id < 0 || id >= static_cast<int>(params.cfg.vocab_size)) {
            throw DataError("token id " + std::to_string(id) + " outside the model vocabulary");
        }
    }
    std::vector<int> pos(static_cast<size_t>(t));
    std::iota(pos.begin(), pos.end(), static_cast<int>(first_pos));
    return add(embedding_rows(params.tok_embed, ids), embedding_rows(params.p_text, pos));
}

} // namespace

Tensor decoder_forward(const std::vector<int>& input_ids, const Tensor& memory,
                       const ModelParams& params, const std::vector<uint8_t>& memory_mask) {
    if (input_ids.empty()) throw ShapeError("decoder needs at least the begin token");
    if (memory.rank() != 2 || memory.dim(1) != params.cfg.d_model) {
        throw ShapeError("memory must be [n x d_model]");
    }
    const int64_t t = static_cast<int64_t>(input_ids.size());
    const int64_t n = memory.dim(0);
    if (memory_mask.size() != static_cast<size_t>(n)) throw ShapeError("memory mask extent mismatch");

    std::vector<uint8_t> causal(static_cast<size_t>(t * t), 0);
    for (int64_t i = 0; i < t; ++i) {
        for (int64_t j = 0; j <= i; ++j) causal[static_cast<size_t>(i * t + j)] = 1;
    }
    std::vector<uint8_t> cross(static_cast<size_t>(t * n));
    for (int64_t i = 0; i < t; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            cross[static_cast<size_t>(i * n + j)] = memory_mask[static_cast<size_t>(j)];
        }
    }

    Tensor x = embed_text(input_ids, 0, params);
    for (const DecoderLayerParams& layer : params.decoder) {
        Tensor h = pre_norm(layer.ln1, x);
        x = add(x, multi_head_attention(h, h, h, layer.self_attn, params.cfg.n_heads, &causal));
        Tensor c = pre_norm(layer.ln2, x);
        x = add(x, multi_head_attention(c, memory, memory, layer.cross_attn, params.cfg.n_heads,
                                        &cross));
        x = add(x, feed_forward(layer.ff, pre_norm(layer.ln3, x)));
    }
    return add_rowwise(matmul(x, params.w_o), params.b_o);
}

DecoderState make_decoder_state(const Tensor& memory, const ModelParams& params,
                                std::vector<uint8_t> memory_mask, int bos_id) {
    if (memory.rank() != 2 || memory.dim(1) != params.cfg.d_model) {
        throw ShapeError("memory must be [n x d_model]");
    }
    if (memory_mask.size() != static_cast<size_t>(memory.dim(0))) {
        throw ShapeError("memory mask extent mismatch");
    }
    DecoderState state;
    state.ids = {bos_id};
    state.memory = memory;
    state.memory_mask = std::move(memory_mask);
    for (const DecoderLayerParams& layer : params.decoder) {
        state.cross_k.push_back(matmul(memory, layer.cross_attn.wk));
        state.cross_v.push_back(matmul(memory, layer.cross_attn.wv));
    }
    state.self_k.assign(params.decoder.size(), {});
    state.self_v.assign(params.decoder.size(), {});
    return state;
}

Tensor decode_step(DecoderState& state, const ModelParams& params) {
    if (state.ids.empty()) throw ShapeError("decoder state has no begin token");
    if (state.processed >= state.ids.size()) {
        throw ShapeError("decode_step called with no pending token");
    }
    const int64_t d = params.cfg.d_model;
    const int64_t heads = params.cfg.n_heads;
    const int64_t dk = params.cfg.head_dim();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));

    Tensor logits;
    while (state.processed < state.ids.size()) {
        const int64_t t = static_cast<int64_t>(state.processed);
        Tensor x = embed_text({state.ids[state.processed]}, t, params);
        for (size_t li = 0; li < params.decoder.size(); ++li) {
            const DecoderLayerParams& layer = params.decoder[li];
            // masked self-attention over the cache (all cached keys are <= t,
            // so the strict causal mask is satisfied by construction)
            Tensor h = pre_norm(layer.ln1, x);
            Tensor q = matmul(h, layer.self_attn.wq);
            Tensor k_new = matmul(h, layer.self_attn.wk);
            Tensor v_new = matmul(h, layer.self_attn.wv);
            auto& ck = state.self_k[li];
            auto& cv = state.self_v[li];
            ck.insert(ck.end(), k_new.data().begin(), k_new.data().end());
            cv.insert(cv.end(), v_new.data().begin(), v_new.data().end());
            Tensor k_all = Tensor::from_data({t + 1, d}, ck);
            Tensor v_all = Tensor::from_data({t + 1, d}, cv);
            const std::vector<uint8_t> allow(static_cast<size_t>(t + 1), 1);
            std::vector<Tensor> outs;
            for (int64_t hd = 0; hd < heads; ++hd) {
                Tensor qh = slice_cols(q, hd * dk, dk);
                Tensor kh = slice_cols(k_all, hd * dk, dk);
                Tensor vh = slice_cols(v_all, hd * dk, dk);
                Tensor w = masked_softmax_rows(scale(matmul_nt(qh, kh), inv_scale), allow);
                outs.push_back(matmul(w, vh));
            }
            Tensor mixed = heads == 1 ? outs[0] : concat_cols(outs);
            x = add(x, matmul(mixed, layer.self_attn.wo));

            // cross-attention against the precomputed memory projections
            Tensor c = pre_norm(layer.ln2, x);
            Tensor qc = matmul(c, layer.cross_attn.wq);
            std::vector<uint8_t> cross_allow(state.memory_mask.begin(), state.memory_mask.end());
            std::vector<Tensor> couts;
            for (int64_t hd = 0; hd < heads; ++hd) {
                Tensor qh = slice_cols(qc, hd * dk, dk);
                Tensor kh = slice_cols(state.cross_k[li], hd * dk, dk);
                Tensor vh = slice_cols(state.cross_v[li], hd * dk, dk);
                Tensor w = masked_softmax_rows(scale(matmul_nt(qh, kh), inv_scale), cross_allow);
                couts.push_back(matmul(w, vh));
            }
            Tensor cmixed = heads == 1 ? couts[0] : concat_cols(couts);
            x = add(x, matmul(cmixed, layer.cross_attn.wo));

            x = add(x, feed_forward(layer.ff, pre_norm(layer.ln3, x)));
        }
        logits = add_rowwise(matmul(x, params.w_o), params.b_o);
        ++state.processed;
    }
    return reshape(logits, {params.cfg.vocab_size});
}

namespace {

std::vector<double> log_softmax(const Tensor& logits) {
    const auto& x = logits.data();
    double m = x[0];
    for (double v : x) m = std::max(m, v);
    double sum = 0;
    for (double v : x) sum += std::exp(v - m);
    const double lse = std::log(sum);
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] - m - lse;
    return out;
}

int argmax_lowest_id(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i) {
        if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
    }
    return best;
}

Tensor encode_features(const Tensor& features, const ModelParams& params,
                       std::vector<uint8_t>& mask_out) {
    Tensor e_v = embed_visual(features, params);
    mask_out.assign(static_cast<size_t>(e_v.dim(0)), 1);
    return encode(e_v, params, mask_out);
}

} // namespace

std::vector<int> generate_greedy(const Tensor& features, const ModelParams& params, int bos_id,
                                 int eos_id, int64_t max_len) {
    if (max_len < 2) throw ConfigError("max_len must allow at least begin and end tokens");
    if (max_len > params.cfg.max_text_len) {
        throw ConfigError("max_len exceeds the positional table (max_text_len)");
    }
    std::vector<uint8_t> mask;
    Tensor memory = encode_features(features, params, mask);
    DecoderState state = make_decoder_state(memory, params, mask, bos_id);
    while (static_cast<int64_t>(state.ids.size()) < max_len) {
        Tensor logits = decode_step(state, params);
        const int next = argmax_lowest_id(logits.data());
        state.ids.push_back(next);
        if (next == eos_id) break;
    }
    return state.ids;
}

std::vector<int> generate_beam(const Tensor& features, const ModelParams& params, int bos_id,
                               int eos_id, int64_t max_len, int64_t beam_width) {
    if (beam_width < 1) throw ConfigError("beam width must be >= 1");
    if (max_len < 2) throw ConfigError("max_len must allow at least begin and end tokens");
    if (max_len > params.cfg.max_text_len) {
        throw ConfigError("max_len exceeds the positional table (max_text_len)");
    }
    std::vector<uint8_t> mask;
    Tensor memory = encode_features(features, params, mask);

    struct Beam {
        DecoderState state;
        double logp = 0.0;
    };
    struct Done {
        std::vector<int> ids;
        double score = 0.0; // logp / generated token count
    };
    std::vector<Beam> live;
    live.push_back({make_decoder_state(memory, params, mask, bos_id), 0.0});
    std::vector<Done> done;
    auto finish = [&done](const std::vector<int>& ids, double logp) {
        const double gen = static_cast<double>(ids.size() - 1); // not counting bos
        done.push_back({ids, logp / gen});
    };

    while (!live.empty()) {
        struct Candidate {
            size_t parent;
            int token;
            double logp;
        };
        std::vector<Candidate> cands;
        for (size_t b = 0; b < live.size(); ++b) {
            Tensor logits = decode_step(live[b].state, params);
            std::vector<double> lp = log_softmax(logits);
            // top beam_width tokens of this parent, ordered by the raw logits
            // (ties to the lowest id) so width 1 picks exactly the greedy token
            const auto& raw = logits.data();
            std::vector<int> order(lp.size());
            std::iota(order.begin(), order.end(), 0);
            const size_t take = std::min(static_cast<size_t>(beam_width), lp.size());
            std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                              order.end(), [&raw](int a, int b2) {
                                  if (raw[static_cast<size_t>(a)] != raw[static_cast<size_t>(b2)]) {
                                      return raw[static_cast<size_t>(a)] > raw[static_cast<size_t>(b2)];
                                  }
                                  return a < b2;
                              });
            for (size_t i = 0; i < take; ++i) {
                cands.push_back({b, order[i], live[b].logp + lp[static_cast<size_t>(order[i])]});
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            if (a.logp != b.logp) return a.logp > b.logp;
            if (a.parent != b.parent) return a.parent < b.parent;
            return a.token < b.token;
        });
        std::vector<Beam> next_live;
        for (const Candidate& c : cands) {
            if (static_cast<int64_t>(next_live.size()) >= beam_width) break;
            Beam child{live[c.parent].state, c.logp}; // deep-copies the caches
            child.state.ids.push_back(c.token);
            if (c.token == eos_id || static_cast<int64_t>(child.state.ids.size()) >= max_len) {
                finish(child.state.ids, child.logp);
            } else {
                next_live.push_back(std::move(child));
            }
        }
        // once enough sequences have finished, later extensions cannot help:
        // per-token log-probs are <= 0, but length normalization can still
        // promote longer beams, so only stop when nothing is live
        live = std::move(next_live);
        if (static_cast<int64_t>(done.size()) >= beam_width && live.empty()) break;
    }

    const Done* best = nullptr;
    for (const Done& d : done) {
        if (!best || d.score > best->score) best = &d;
    }
    if (!best) throw NumericError("beam search finished without candidates");
    return best->ids;
}

} // namespace capcore
