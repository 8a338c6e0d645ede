#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace capcore {

struct EvalPair {
    std::string video_id;
    std::vector<std::string> hypothesis;
    std::vector<std::vector<std::string>> references; // at least one
};

struct MetricOptions {
    bool bleu_smooth = false; // additive-1 smoothing of n-gram precisions
    bool use_stemmer = true;  // suffix stripping inside the unigram matcher
    double rouge_beta = 1.2;
    bool with_cider = true; // needs a corpus of at least two images
};

// Corpus BLEU-1..max_n from pooled n-gram counts with per-n-gram clipping at
// the maximum reference count. Brevity penalty uses the per-sentence closest
// reference length (ties to the shorter). Any zero precision zeroes the score
// unless smoothing is on. Empty hypotheses score zero and emit a warning.
std::vector<double> bleu(const std::vector<EvalPair>& pairs, int max_n = 4, bool smooth = false,
                         std::vector<std::string>* warnings = nullptr);

// Original formulation: per n in 1..4, cosine between TF-IDF n-gram vectors,
// averaged over references, times 10; the image score is the mean over n.
// IDF = ln(images / (1 + images containing the n-gram)), clamped at zero.
std::vector<double> cider_scores(const std::vector<EvalPair>& pairs); // per image
double cider(const std::vector<EvalPair>& pairs);                     // corpus mean

// Exact-then-stem greedy unigram alignment; P = m/|hyp|, R = m/|ref|,
// F = 10PR/(R+9P), fragmentation penalty 0.5*(chunks/m)^3. Best reference per
// pair, mean over the corpus.
double sentence_meteor(const std::vector<std::string>& hyp,
                       const std::vector<std::vector<std::string>>& refs, bool use_stemmer = true);
double meteor(const std::vector<EvalPair>& pairs, bool use_stemmer = true);

// Strips one of ing/es/ed/s (longest first) when at least two characters
// remain.
std::string meteor_stem(const std::string& word);

// LCS-based F measure: R = lcs/|ref|, P = lcs/|hyp|,
// F = (1+beta^2)PR/(R+beta^2*P). Best reference per pair, mean over the
// corpus.
double sentence_rouge_l(const std::vector<std::string>& hyp,
                        const std::vector<std::vector<std::string>>& refs, double beta = 1.2);
double rouge_l(const std::vector<EvalPair>& pairs, double beta = 1.2);

struct SentenceScores {
    std::string video_id;
    double bleu_4 = 0.0; // this sentence as its own corpus
    double meteor = 0.0;
    double rouge_l = 0.0;
    double cider = 0.0; // corpus IDF, this image's cosines
};

struct MetricReport {
    double bleu_1 = 0.0, bleu_2 = 0.0, bleu_3 = 0.0, bleu_4 = 0.0;
    double cider = 0.0;
    double meteor = 0.0;
    double rouge_l = 0.0;
    int64_t pair_count = 0;
    int64_t reference_count = 0;
    MetricOptions options;
    std::vector<SentenceScores> sentences;
    std::vector<std::string> warnings;
};

MetricReport evaluate_corpus(const std::vector<EvalPair>& pairs,
                             const MetricOptions& options = {});

// Header block with the variant flags and corpus sizes, then one line per
// metric. Machine mode emits key=value lines instead.
std::string format_report(const MetricReport& report, bool machine_readable = false);

} // namespace capcore
