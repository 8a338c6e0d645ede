#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "capcore/tensor.hpp"

namespace capcore {

// Visual encoder + text decoder with cross-attention. Blocks are pre-norm
// with a GELU feedforward and learned positional tables; the decoder applies
// a strict causal mask. Incremental decoding with key/value caches produces
// the same logits as the teacher-forced pass bit for bit: every position is
// computed by row-local arithmetic with ascending-index reductions, and
// masked-out scores contribute exactly zero.
struct ModelConfig {
    int64_t d_model = 64;
    int64_t n_heads = 4;
    int64_t n_encoder_layers = 2;
    int64_t n_decoder_layers = 2;
    int64_t d_ff = 0; // 0 means 4 * d_model
    int64_t vocab_size = 0;
    int64_t max_visual_tokens = 8;
    int64_t max_text_len = 64;
    int64_t feature_dim = 2048;

    int64_t ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
    int64_t head_dim() const { return d_model / n_heads; }
    void validate() const; // throws ConfigError
};

struct AttentionParams {
    Tensor wq, wk, wv, wo; // each [d x d], biasless
};

struct FeedForwardParams {
    Tensor w1, b1; // [d x ff], [ff]
    Tensor w2, b2; // [ff x d], [d]
};

struct LayerNormParams {
    Tensor gain, bias; // [d]
};

struct EncoderLayerParams {
    LayerNormParams ln1;
    AttentionParams attn;
    LayerNormParams ln2;
    FeedForwardParams ff;
};

struct DecoderLayerParams {
    LayerNormParams ln1;
    AttentionParams self_attn;
    LayerNormParams ln2;
    AttentionParams cross_attn;
    LayerNormParams ln3;
    FeedForwardParams ff;
};

struct ModelParams {
    ModelConfig cfg;
    Tensor w_p;       // [feature_dim x d]
    Tensor p_vis;     // [max_visual_tokens x d]
    Tensor p_text;    // [max_text_len x d]
    Tensor tok_embed; // [vocab_size x d]
    std::vector<EncoderLayerParams> encoder;
    std::vector<DecoderLayerParams> decoder;
    Tensor w_o; // [d x vocab_size]
    Tensor b_o; // [vocab_size]

    // Matrices and positional tables ~ N(0, 0.02), biases zero, norm gains
    // one, drawn in declaration order from the seed.
    static ModelParams init(const ModelConfig& cfg, uint64_t seed);

    std::vector<std::pair<std::string, Tensor>> named() const;
    void set_requires_grad(bool v) const;
    void zero_grad() const;
    int64_t param_count() const;
    uint64_t checksum() const; // over values in named() order
};

// Closed form for the census:
//   d*(D + N + T_max + V)                        embeddings and tables
// + L_enc * (4d^2 + 2*d*ff + ff + 5d)            per encoder layer
// + L_dec * (8d^2 + 2*d*ff + ff + 7d)            per decoder layer
// + d*V + V                                      output head
int64_t param_count_formula(const ModelConfig& cfg);

// features [n x feature_dim] with n <= max_visual_tokens -> [n x d]:
// row i = f_i o w_p + p_vis_i.
Tensor embed_visual(const Tensor& features, const ModelParams& params);

// mask (when given) has Lq*Lk entries, nonzero = allowed; a query row with
// no allowed key raises NumericError rather than emitting NaN.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const AttentionParams& p, int64_t n_heads,
                            const std::vector<uint8_t>* mask = nullptr);

// key_mask: one entry per visual token, nonzero = real row.
Tensor encode(const Tensor& e_v, const ModelParams& params,
              const std::vector<uint8_t>& key_mask);

// Teacher-forced pass over a whole prefix: [T x vocab_size] logits.
Tensor decoder_forward(const std::vector<int>& input_ids, const Tensor& memory,
                       const ModelParams& params, const std::vector<uint8_t>& memory_mask);

struct DecoderState {
    std::vector<int> ids;                 // generated so far, begins with bos
    Tensor memory;                        // [n x d], immutable during a decode
    std::vector<uint8_t> memory_mask;     // n entries
    std::vector<Tensor> cross_k, cross_v; // per decoder layer [n x d]
    std::vector<std::vector<double>> self_k, self_v; // per layer, processed*d values
    size_t processed = 0; // ids already folded into the caches
};

DecoderState make_decoder_state(const Tensor& memory, const ModelParams& params,
                                std::vector<uint8_t> memory_mask, int bos_id);

// Folds pending ids into the caches and returns next-token logits [vocab_size].
Tensor decode_step(DecoderState& state, const ModelParams& params);

// Both return token ids including the leading bos and (when reached) eos;
// max_len caps the total length and must fit the positional table.
std::vector<int> generate_greedy(const Tensor& features, const ModelParams& params,
                                 int bos_id, int eos_id, int64_t max_len);
std::vector<int> generate_beam(const Tensor& features, const ModelParams& params, int bos_id,
                               int eos_id, int64_t max_len, int64_t beam_width);

} // namespace capcore
