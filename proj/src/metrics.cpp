#include "capcore/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "capcore/errors.hpp"

namespace capcore {

namespace {

std::string ngram_key(const std::vector<std::string>& toks, size_t i, int n) {
    std::string k = toks[i];
    for (int j = 1; j < n; ++j) {
        k.push_back('\x1f');
        k += toks[i + static_cast<size_t>(j)];
    }
    return k;
}

std::map<std::string, int64_t> ngram_counts(const std::vector<std::string>& toks, int n) {
    std::map<std::string, int64_t> c;
    for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i) {
        ++c[ngram_key(toks, i, n)];
    }
    return c;
}

void require_references(const std::vector<EvalPair>& pairs) {
    for (const EvalPair& p : pairs) {
        if (p.references.empty()) {
            throw DataError("pair '" + p.video_id + "' has no references");
        }
    }
}

int64_t closest_ref_len(size_t hyp_len, const std::vector<std::vector<std::string>>& refs) {
    int64_t best = static_cast<int64_t>(refs[0].size());
    int64_t best_diff = std::abs(best - static_cast<int64_t>(hyp_len));
    for (const auto& r : refs) {
        const int64_t len = static_cast<int64_t>(r.size());
        const int64_t diff = std::abs(len - static_cast<int64_t>(hyp_len));
        if (diff < best_diff || (diff == best_diff && len < best)) {
            best = len;
            best_diff = diff;
        }
    }
    return best;
}

} // namespace

std::vector<double> bleu(const std::vector<EvalPair>& pairs, int max_n, bool smooth,
                         std::vector<std::string>* warnings) {
    if (max_n < 1) throw ConfigError("bleu: max_n must be at least 1");
    if (pairs.empty()) throw DataError("bleu: empty corpus");
    require_references(pairs);

    int64_t c = 0, r = 0;
    std::vector<int64_t> match(static_cast<size_t>(max_n), 0);
    std::vector<int64_t> total(static_cast<size_t>(max_n), 0);
    for (const EvalPair& p : pairs) {
        if (p.hypothesis.empty() && warnings) {
            warnings->push_back("empty hypothesis for '" + p.video_id + "'");
        }
        c += static_cast<int64_t>(p.hypothesis.size());
        r += closest_ref_len(p.hypothesis.size(), p.references);
        for (int n = 1; n <= max_n; ++n) {
            const auto hyp_counts = ngram_counts(p.hypothesis, n);
            std::map<std::string, int64_t> ref_max;
            for (const auto& ref : p.references) {
                for (const auto& [g, cnt] : ngram_counts(ref, n)) {
                    ref_max[g] = std::max(ref_max[g], cnt);
                }
            }
            for (const auto& [g, cnt] : hyp_counts) {
                total[static_cast<size_t>(n - 1)] += cnt;
                const auto it = ref_max.find(g);
                if (it != ref_max.end()) {
                    match[static_cast<size_t>(n - 1)] += std::min(cnt, it->second);
                }
            }
        }
    }

    std::vector<double> out(static_cast<size_t>(max_n), 0.0);
    if (c == 0) return out;
    const double bp =
        c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
    for (int n = 1; n <= max_n; ++n) {
        double log_sum = 0.0;
        bool zero = false;
        for (int i = 0; i < n; ++i) {
            double m = static_cast<double>(match[static_cast<size_t>(i)]);
            double t = static_cast<double>(total[static_cast<size_t>(i)]);
            if (smooth) {
                m += 1.0;
                t += 1.0;
            }
            if (m <= 0.0 || t <= 0.0) {
                zero = true;
                break;
            }
            log_sum += std::log(m / t) / static_cast<double>(n);
        }
        out[static_cast<size_t>(n - 1)] = zero ? 0.0 : bp * std::exp(log_sum);
    }
    return out;
}

std::vector<double> cider_scores(const std::vector<EvalPair>& pairs) {
    if (pairs.size() < 2) {
        throw DataError(
            "CIDEr needs at least two images in the corpus; disable it for single-image runs");
    }
    require_references(pairs);
    const double n_img = static_cast<double>(pairs.size());

    std::array<std::map<std::string, int64_t>, 4> df;
    for (const EvalPair& p : pairs) {
        for (int n = 1; n <= 4; ++n) {
            std::set<std::string> seen;
            for (const auto& ref : p.references) {
                for (const auto& [g, cnt] : ngram_counts(ref, n)) seen.insert(g);
            }
            for (const auto& g : seen) ++df[static_cast<size_t>(n - 1)][g];
        }
    }
    const auto idf = [&](int n, const std::string& g) {
        const auto& m = df[static_cast<size_t>(n - 1)];
        const auto it = m.find(g);
        const double denom = 1.0 + (it == m.end() ? 0.0 : static_cast<double>(it->second));
        return std::max(0.0, std::log(n_img / denom));
    };
    const auto weighted = [&](const std::vector<std::string>& toks, int n) {
        std::map<std::string, double> v;
        for (const auto& [g, cnt] : ngram_counts(toks, n)) {
            v[g] = static_cast<double>(cnt) * idf(n, g);
        }
        return v;
    };

    std::vector<double> out;
    out.reserve(pairs.size());
    for (const EvalPair& p : pairs) {
        double per_n_sum = 0.0;
        for (int n = 1; n <= 4; ++n) {
            const auto hyp_vec = weighted(p.hypothesis, n);
            double norm_h = 0.0;
            for (const auto& [g, w] : hyp_vec) norm_h += w * w;
            norm_h = std::sqrt(norm_h);
            double cos_sum = 0.0;
            for (const auto& ref : p.references) {
                const auto ref_vec = weighted(ref, n);
                double norm_r = 0.0;
                for (const auto& [g, w] : ref_vec) norm_r += w * w;
                norm_r = std::sqrt(norm_r);
                if (norm_h == 0.0 || norm_r == 0.0) continue;
                double dot = 0.0;
                for (const auto& [g, w] : hyp_vec) {
                    const auto it = ref_vec.find(g);
                    if (it != ref_vec.end()) dot += w * it->second;
                }
                cos_sum += dot / (norm_h * norm_r);
            }
            per_n_sum += 10.0 * cos_sum / static_cast<double>(p.references.size());
        }
        out.push_back(per_n_sum / 4.0);
    }
    return out;
}

double cider(const std::vector<EvalPair>& pairs) {
    const auto scores = cider_scores(pairs);
    double sum = 0.0;
    for (double s : scores) sum += s;
    return sum / static_cast<double>(scores.size());
}

std::string meteor_stem(const std::string& word) {
    for (const char* suffix : {"ing", "es", "ed", "s"}) {
        const size_t n = std::char_traits<char>::length(suffix);
        if (word.size() >= n + 2 && word.compare(word.size() - n, n, suffix) == 0) {
            return word.substr(0, word.size() - n);
        }
    }
    return word;
}

namespace {

double meteor_against(const std::vector<std::string>& hyp, const std::vector<std::string>& ref,
                      bool use_stemmer) {
    const size_t hn = hyp.size(), rn = ref.size();
    if (hn == 0 || rn == 0) return 0.0;
    std::vector<int64_t> map_to(hn, -1);
    std::vector<bool> used(rn, false);
    for (size_t i = 0; i < hn; ++i) {
        for (size_t j = 0; j < rn; ++j) {
            if (!used[j] && hyp[i] == ref[j]) {
                map_to[i] = static_cast<int64_t>(j);
                used[j] = true;
                break;
            }
        }
    }
    if (use_stemmer) {
        for (size_t i = 0; i < hn; ++i) {
            if (map_to[i] >= 0) continue;
            for (size_t j = 0; j < rn; ++j) {
                if (!used[j] && meteor_stem(hyp[i]) == meteor_stem(ref[j])) {
                    map_to[i] = static_cast<int64_t>(j);
                    used[j] = true;
                    break;
                }
            }
        }
    }
    int64_t m = 0;
    for (int64_t j : map_to) m += j >= 0 ? 1 : 0;
    if (m == 0) return 0.0;

    int64_t chunks = 0;
    int64_t prev_i = -2, prev_j = -2;
    for (size_t i = 0; i < hn; ++i) {
        if (map_to[i] < 0) continue;
        if (static_cast<int64_t>(i) != prev_i + 1 || map_to[i] != prev_j + 1) ++chunks;
        prev_i = static_cast<int64_t>(i);
        prev_j = map_to[i];
    }

    const double p = static_cast<double>(m) / static_cast<double>(hn);
    const double r = static_cast<double>(m) / static_cast<double>(rn);
    const double f = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(chunks) / static_cast<double>(m);
    return f * (1.0 - 0.5 * frag * frag * frag);
}

} // namespace

double sentence_meteor(const std::vector<std::string>& hyp,
                       const std::vector<std::vector<std::string>>& refs, bool use_stemmer) {
    if (refs.empty()) throw DataError("sentence_meteor: no references");
    double best = 0.0;
    for (const auto& ref : refs) best = std::max(best, meteor_against(hyp, ref, use_stemmer));
    return best;
}

double meteor(const std::vector<EvalPair>& pairs, bool use_stemmer) {
    if (pairs.empty()) throw DataError("meteor: empty corpus");
    require_references(pairs);
    double sum = 0.0;
    for (const EvalPair& p : pairs) sum += sentence_meteor(p.hypothesis, p.references, use_stemmer);
    return sum / static_cast<double>(pairs.size());
}

namespace {

int64_t lcs_len(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<int64_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

} // namespace

double sentence_rouge_l(const std::vector<std::string>& hyp,
                        const std::vector<std::vector<std::string>>& refs, double beta) {
    if (beta <= 0.0) throw ConfigError("rouge_l: beta must be positive");
    if (refs.empty()) throw DataError("sentence_rouge_l: no references");
    double best = 0.0;
    for (const auto& ref : refs) {
        const int64_t l = lcs_len(hyp, ref);
        if (l == 0) continue;
        const double r = static_cast<double>(l) / static_cast<double>(ref.size());
        const double p = static_cast<double>(l) / static_cast<double>(hyp.size());
        const double b2 = beta * beta;
        best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
    }
    return best;
}

double rouge_l(const std::vector<EvalPair>& pairs, double beta) {
    if (pairs.empty()) throw DataError("rouge_l: empty corpus");
    require_references(pairs);
    double sum = 0.0;
    for (const EvalPair& p : pairs) sum += sentence_rouge_l(p.hypothesis, p.references, beta);
    return sum / static_cast<double>(pairs.size());
}

MetricReport evaluate_corpus(const std::vector<EvalPair>& pairs, const MetricOptions& options) {
    if (pairs.empty()) throw DataError("evaluate_corpus: empty corpus");
    require_references(pairs);
    MetricReport rep;
    rep.options = options;
    rep.pair_count = static_cast<int64_t>(pairs.size());
    for (const EvalPair& p : pairs) {
        rep.reference_count += static_cast<int64_t>(p.references.size());
    }
    const auto b = bleu(pairs, 4, options.bleu_smooth, &rep.warnings);
    rep.bleu_1 = b[0];
    rep.bleu_2 = b[1];
    rep.bleu_3 = b[2];
    rep.bleu_4 = b[3];
    rep.meteor = meteor(pairs, options.use_stemmer);
    rep.rouge_l = rouge_l(pairs, options.rouge_beta);
    std::vector<double> per_image;
    if (options.with_cider) {
        per_image = cider_scores(pairs);
        double sum = 0.0;
        for (double s : per_image) sum += s;
        rep.cider = sum / static_cast<double>(per_image.size());
    }
    for (size_t i = 0; i < pairs.size(); ++i) {
        SentenceScores s;
        s.video_id = pairs[i].video_id;
        s.bleu_4 = bleu({pairs[i]}, 4, options.bleu_smooth)[3];
        s.meteor = sentence_meteor(pairs[i].hypothesis, pairs[i].references, options.use_stemmer);
        s.rouge_l = sentence_rouge_l(pairs[i].hypothesis, pairs[i].references, options.rouge_beta);
        s.cider = per_image.empty() ? 0.0 : per_image[i];
        rep.sentences.push_back(std::move(s));
    }
    return rep;
}

std::string format_report(const MetricReport& report, bool machine_readable) {
    std::ostringstream os;
    if (machine_readable) {
        os << std::fixed << std::setprecision(12);
        os << "pairs=" << report.pair_count << '\n';
        os << "references=" << report.reference_count << '\n';
        os << "bleu_smoothing=" << (report.options.bleu_smooth ? 1 : 0) << '\n';
        os << "meteor_stemmer=" << (report.options.use_stemmer ? 1 : 0) << '\n';
        os << "rouge_beta=" << report.options.rouge_beta << '\n';
        os << "bleu_1=" << report.bleu_1 << '\n';
        os << "bleu_2=" << report.bleu_2 << '\n';
        os << "bleu_3=" << report.bleu_3 << '\n';
        os << "bleu_4=" << report.bleu_4 << '\n';
        os << "meteor=" << report.meteor << '\n';
        os << "rouge_l=" << report.rouge_l << '\n';
        if (report.options.with_cider) os << "cider=" << report.cider << '\n';
        return os.str();
    }
    os << "caption metrics over " << report.pair_count << " pairs ("
       << report.reference_count << " references)\n";
    os << "  bleu: pooled counts, " << (report.options.bleu_smooth ? "additive-1 smoothing" : "unsmoothed")
       << "\n";
    os << "  meteor: exact+stem matcher, stemmer "
       << (report.options.use_stemmer ? "on" : "off") << ", no synonym resource\n";
    os << "  rouge-l: beta " << report.options.rouge_beta << "\n";
    os << "  cider: "
       << (report.options.with_cider ? "original formulation, idf ln(N/(1+df)) clamped at zero"
                                     : "off")
       << "\n\n";
    os << std::fixed << std::setprecision(6);
    os << "BLEU-1   " << report.bleu_1 << '\n';
    os << "BLEU-2   " << report.bleu_2 << '\n';
    os << "BLEU-3   " << report.bleu_3 << '\n';
    os << "BLEU-4   " << report.bleu_4 << '\n';
    os << "METEOR   " << report.meteor << '\n';
    os << "ROUGE-L  " << report.rouge_l << '\n';
    if (report.options.with_cider) os << "CIDEr    " << report.cider << '\n';
    for (const std::string& w : report.warnings) os << "warning: " << w << '\n';
    return os.str();
}

} // namespace capcore
