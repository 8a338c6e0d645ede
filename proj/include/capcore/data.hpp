#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "capcore/tensor.hpp"

namespace capcore {

// Lowercased word-level tokens; punctuation becomes standalone tokens,
// runs of whitespace collapse. Empty text gives an empty list.
std::vector<std::string> normalize_and_tokenize(const std::string& text);

class Vocabulary {
public:
    static constexpr int pad_id = 0;
    static constexpr int unk_id = 1;
    static constexpr int bos_id = 2;
    static constexpr int eos_id = 3;

    // Tokens with frequency >= min_freq ranked by (frequency desc, token asc),
    // truncated so the whole table (specials included) has at most cap entries.
    static Vocabulary build(const std::vector<std::vector<std::string>>& corpus, int min_freq,
                            int cap);

    // Rebuild from a persisted id->token table (specials must lead it).
    static Vocabulary from_table(std::vector<std::string> table);

    int id(const std::string& token) const; // unk_id when absent
    const std::string& token(int id) const; // throws DataError on unknown id
    bool contains(const std::string& token) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }
    const std::vector<std::string>& table() const { return id_to_token_; }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

// bos + token ids (OOV -> unk) + eos.
std::vector<int> encode(const std::string& text, const Vocabulary& vocab);
// Drops special ids, joins the rest with single spaces.
std::string decode(const std::vector<int>& ids, const Vocabulary& vocab);

struct CaptionRecord {
    std::string video_id;
    std::string features; // feature file path ("" when absent)
    std::string frames;   // frame directory ("" when absent)
    std::vector<std::string> captions;
    std::string action;
    std::string justification;

    bool has_pair() const { return !action.empty() && !justification.empty(); }
    void validate() const; // throws DataError
};

// "<action> because <justification>" when the pair is present, else the
// first caption.
std::string format_action_justification(const CaptionRecord& rec);

// Target texts this record trains on: the action-justification pair takes
// precedence; otherwise every caption (multi-reference expansion).
std::vector<std::string> training_texts(const CaptionRecord& rec);

// One record per line. Unknown fields are reported via `warnings` (and kept
// out of the record). Exactly one of features/frames per record.
std::vector<CaptionRecord> read_manifest(const std::string& path,
                                         std::vector<std::string>* warnings = nullptr);
void write_manifest(const std::vector<CaptionRecord>& records, const std::string& path);

struct SplitResult {
    std::vector<CaptionRecord> train;
    std::vector<CaptionRecord> test;
};

// Partition by video id: seeded shuffle of the distinct ids, first
// round(fraction * count) ids form the test side. No id spans both sides.
SplitResult split(const std::vector<CaptionRecord>& records, double test_fraction, uint64_t seed);

struct Batch {
    int64_t size = 0;     // examples
    int64_t vis_len = 0;  // visual tokens per example (padded)
    int64_t text_len = 0; // text positions per example (padded)
    int64_t feat_dim = 0;

    Tensor visual;                    // [size x vis_len x feat_dim], zero padded
    std::vector<uint8_t> visual_mask; // size*vis_len, 1 = real feature row
    std::vector<int> input_ids;       // size*text_len
    std::vector<int> target_ids;      // size*text_len, input shifted left, eos appended
    std::vector<uint8_t> loss_mask;   // size*text_len, 1 = position counted in the loss
    std::vector<std::string> video_ids;
};

// Expands multi-reference records into (video, single reference) examples,
// loads features from each record's feature file, pads to the longest in
// batch. Feature files must exist (run extraction first).
std::vector<Batch> make_batches(const std::vector<CaptionRecord>& records,
                                const Vocabulary& vocab, int64_t batch_size, int64_t max_len);

} // namespace capcore
