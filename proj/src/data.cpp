#include "capcore/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "capcore/errors.hpp"
#include "capcore/vision.hpp"

namespace capcore {

std::vector<std::string> normalize_and_tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            flush();
        } else if (c < 0x80 && std::ispunct(c)) {
            flush();
            tokens.emplace_back(1, static_cast<char>(c));
        } else {
            word.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return tokens;
}

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<unk>", "<bos>", "<eos>"};
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus, int min_freq,
                             int cap) {
    if (cap < 5) throw ConfigError("vocabulary cap must be at least 5 (4 specials + 1 token)");
    if (corpus.empty()) throw DataError("vocabulary corpus is empty");
    std::map<std::string, int64_t> freq;
    for (const auto& tokens : corpus) {
        for (const auto& t : tokens) ++freq[t];
    }
    std::vector<std::pair<std::string, int64_t>> ranked(freq.begin(), freq.end());
    std::erase_if(ranked, [min_freq](const auto& p) { return p.second < min_freq; });
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    v.id_to_token_ = kSpecials;
    for (const auto& [token, n] : ranked) {
        if (v.id_to_token_.size() >= static_cast<size_t>(cap)) break;
        v.id_to_token_.push_back(token);
    }
    for (size_t i = 0; i < v.id_to_token_.size(); ++i) {
        v.token_to_id_[v.id_to_token_[i]] = static_cast<int>(i);
    }
    return v;
}

Vocabulary Vocabulary::from_table(std::vector<std::string> table) {
    if (table.size() < kSpecials.size()) throw DataError("vocabulary table too small");
    for (size_t i = 0; i < kSpecials.size(); ++i) {
        if (table[i] != kSpecials[i]) {
            throw DataError("vocabulary table does not start with the special tokens");
        }
    }
    Vocabulary v;
    v.id_to_token_ = std::move(table);
    for (size_t i = 0; i < v.id_to_token_.size(); ++i) {
        auto [it, fresh] = v.token_to_id_.emplace(v.id_to_token_[i], static_cast<int>(i));
        if (!fresh) throw DataError("duplicate token in vocabulary table: " + v.id_to_token_[i]);
    }
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? unk_id : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) {
        throw DataError("token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(size()));
    }
    return id_to_token_[static_cast<size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.count(token) != 0;
}

std::vector<int> encode(const std::string& text, const Vocabulary& vocab) {
    std::vector<int> ids = {Vocabulary::bos_id};
    for (const auto& t : normalize_and_tokenize(text)) ids.push_back(vocab.id(t));
    ids.push_back(Vocabulary::eos_id);
    return ids;
}

std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        const std::string& tok = vocab.token(id); // validates the id
        if (id < static_cast<int>(kSpecials.size())) continue;
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

void CaptionRecord::validate() const {
    if (video_id.empty()) throw DataError("record without video_id");
    if (features.empty() == frames.empty()) {
        throw DataError("record " + video_id + " must carry exactly one of features/frames");
    }
    if (captions.empty()) throw DataError("record " + video_id + " has no captions");
    if (action.empty() != justification.empty()) {
        throw DataError("record " + video_id + " has action/justification without its partner");
    }
}

std::string format_action_justification(const CaptionRecord& rec) {
    if (rec.has_pair()) return rec.action + " because " + rec.justification;
    return rec.captions.front();
}

std::vector<std::string> training_texts(const CaptionRecord& rec) {
    if (rec.has_pair()) return {format_action_justification(rec)};
    return rec.captions;
}

std::vector<CaptionRecord> read_manifest(const std::string& path,
                                         std::vector<std::string>* warnings) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path);
    std::vector<CaptionRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": invalid record: " + e.what());
        }
        if (!j.is_object()) {
            throw DataError(path + ":" + std::to_string(lineno) + ": record is not an object");
        }
        CaptionRecord rec;
        for (const auto& [key, value] : j.items()) {
            try {
                if (key == "video_id") rec.video_id = value.get<std::string>();
                else if (key == "features") rec.features = value.get<std::string>();
                else if (key == "frames") rec.frames = value.get<std::string>();
                else if (key == "captions") rec.captions = value.get<std::vector<std::string>>();
                else if (key == "action") rec.action = value.get<std::string>();
                else if (key == "justification") rec.justification = value.get<std::string>();
                else if (warnings) {
                    warnings->push_back(path + ":" + std::to_string(lineno) +
                                        ": ignoring unknown field \"" + key + "\"");
                }
            } catch (const nlohmann::json::exception&) {
                throw DataError(path + ":" + std::to_string(lineno) + ": field \"" + key +
                                "\" has the wrong type");
            }
        }
        try {
            rec.validate();
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void write_manifest(const std::vector<CaptionRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open " + path + " for writing");
    for (const CaptionRecord& rec : records) {
        nlohmann::json j;
        j["video_id"] = rec.video_id;
        if (!rec.features.empty()) j["features"] = rec.features;
        if (!rec.frames.empty()) j["frames"] = rec.frames;
        j["captions"] = rec.captions;
        if (rec.has_pair()) {
            j["action"] = rec.action;
            j["justification"] = rec.justification;
        }
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("short write to " + path);
}

SplitResult split(const std::vector<CaptionRecord>& records, double test_fraction, uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ConfigError("test fraction must lie strictly between 0 and 1");
    }
    std::vector<std::string> ids;
    for (const CaptionRecord& rec : records) {
        if (std::find(ids.begin(), ids.end(), rec.video_id) == ids.end()) {
            ids.push_back(rec.video_id);
        }
    }
    if (ids.size() < 2) throw DataError("split needs at least 2 distinct videos");
    Rng rng(seed);
    rng.shuffle(ids);
    const auto test_n = static_cast<size_t>(
        std::lround(test_fraction * static_cast<double>(ids.size())));
    if (test_n == 0 || test_n == ids.size()) {
        throw DataError("split fraction " + std::to_string(test_fraction) + " leaves a side empty for " +
                        std::to_string(ids.size()) + " videos");
    }
    std::unordered_map<std::string, bool> is_test;
    for (size_t i = 0; i < ids.size(); ++i) is_test[ids[i]] = i < test_n;
    SplitResult out;
    for (const CaptionRecord& rec : records) {
        (is_test[rec.video_id] ? out.test : out.train).push_back(rec);
    }
    return out;
}

std::vector<Batch> make_batches(const std::vector<CaptionRecord>& records,
                                const Vocabulary& vocab, int64_t batch_size, int64_t max_len) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_len < 3) throw ConfigError("max_len must be >= 3 (bos + token + eos)");

    struct Example {
        const CaptionRecord* rec;
        std::vector<int> ids;
    };
    std::vector<Example> examples;
    for (const CaptionRecord& rec : records) {
        rec.validate();
        for (const std::string& text : training_texts(rec)) {
            std::vector<int> ids = encode(text, vocab);
            if (static_cast<int64_t>(ids.size()) > max_len) {
                ids.resize(static_cast<size_t>(max_len));
                ids.back() = Vocabulary::eos_id;
            }
            examples.push_back({&rec, std::move(ids)});
        }
    }

    std::map<std::string, VisualFeatureSet> cache;
    auto features_for = [&cache](const CaptionRecord& rec) -> const VisualFeatureSet& {
        if (rec.features.empty()) {
            throw DataError("record " + rec.video_id +
                            " has no feature file; extract features first");
        }
        auto it = cache.find(rec.features);
        if (it == cache.end()) {
            if (!std::filesystem::exists(rec.features)) {
                throw DataError("missing feature file for video " + rec.video_id + ": " +
                                rec.features);
            }
            it = cache.emplace(rec.features, read_features(rec.features)).first;
        }
        return it->second;
    };

    std::vector<Batch> batches;
    for (size_t start = 0; start < examples.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(examples.size(), start + static_cast<size_t>(batch_size));
        Batch b;
        b.size = static_cast<int64_t>(end - start);
        for (size_t i = start; i < end; ++i) {
            const VisualFeatureSet& fs = features_for(*examples[i].rec);
            if (b.feat_dim == 0) b.feat_dim = fs.cols;
            if (fs.cols != b.feat_dim) {
                throw DataError("feature width mismatch for video " + examples[i].rec->video_id);
            }
            b.vis_len = std::max(b.vis_len, fs.rows);
            b.text_len = std::max(b.text_len, static_cast<int64_t>(examples[i].ids.size()));
        }
        b.visual = Tensor::zeros({b.size, b.vis_len, b.feat_dim});
        b.visual_mask.assign(static_cast<size_t>(b.size * b.vis_len), 0);
        b.input_ids.assign(static_cast<size_t>(b.size * b.text_len), Vocabulary::pad_id);
        b.target_ids.assign(static_cast<size_t>(b.size * b.text_len), Vocabulary::pad_id);
        b.loss_mask.assign(static_cast<size_t>(b.size * b.text_len), 0);
        auto& vis = b.visual.mutable_data();
        for (size_t i = start; i < end; ++i) {
            const int64_t row = static_cast<int64_t>(i - start);
            const VisualFeatureSet& fs = features_for(*examples[i].rec);
            for (int64_t r = 0; r < fs.rows; ++r) {
                b.visual_mask[static_cast<size_t>(row * b.vis_len + r)] = 1;
                for (int64_t c = 0; c < b.feat_dim; ++c) {
                    vis[static_cast<size_t>((row * b.vis_len + r) * b.feat_dim + c)] =
                        static_cast<double>(fs.values[static_cast<size_t>(r * b.feat_dim + c)]);
                }
            }
            const std::vector<int>& ids = examples[i].ids;
            const int64_t len = static_cast<int64_t>(ids.size());
            const size_t base = static_cast<size_t>(row * b.text_len);
            for (int64_t t = 0; t < len; ++t) {
                b.input_ids[base + static_cast<size_t>(t)] = ids[static_cast<size_t>(t)];
            }
            // target: the padded input row shifted left by one, eos appended
            for (int64_t t = 0; t + 1 < b.text_len; ++t) {
                b.target_ids[base + static_cast<size_t>(t)] =
                    b.input_ids[base + static_cast<size_t>(t + 1)];
            }
            b.target_ids[base + static_cast<size_t>(b.text_len - 1)] = Vocabulary::eos_id;
            // count exactly the predictions of w1..wn,eos; the position whose
            // input is the closing eos (and every pad) stays out of the loss
            for (int64_t t = 0; t + 1 < len; ++t) {
                b.loss_mask[base + static_cast<size_t>(t)] = 1;
            }
            b.video_ids.push_back(examples[i].rec->video_id);
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

} // namespace capcore
