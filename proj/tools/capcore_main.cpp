#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "capcore/data.hpp"
#include "capcore/errors.hpp"
#include "capcore/metrics.hpp"
#include "capcore/model.hpp"
#include "capcore/run_config.hpp"
#include "capcore/train.hpp"
#include "capcore/vision.hpp"

namespace fs = std::filesystem;
using namespace capcore;

namespace {

std::string fmt_dbl(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

void require_setting(const std::string& value, const std::string& flag,
                     const std::string& command) {
    if (value.empty()) {
        throw ConfigError(command + " requires " + flag);
    }
}

// Ties a CLI11 option to a RunConfig key; only options the user actually
// passed become overrides, preserving flags > env > file > defaults.
struct FlagMap {
    struct Entry {
        CLI::Option* opt;
        std::string key;
        std::function<std::string()> value;
    };
    std::vector<Entry> entries;

    std::vector<std::pair<std::string, std::string>> overrides() const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const Entry& e : entries) {
            if (e.opt->count() > 0) out.emplace_back(e.key, e.value());
        }
        return out;
    }
};

void reg_i64(CLI::App& app, FlagMap& fm, const std::string& flag, const std::string& key,
             const std::string& desc) {
    auto v = std::make_shared<int64_t>();
    CLI::Option* o = app.add_option(flag, *v, desc);
    fm.entries.push_back({o, key, [v] { return std::to_string(*v); }});
}

void reg_u64(CLI::App& app, FlagMap& fm, const std::string& flag, const std::string& key,
             const std::string& desc) {
    auto v = std::make_shared<uint64_t>();
    CLI::Option* o = app.add_option(flag, *v, desc);
    fm.entries.push_back({o, key, [v] { return std::to_string(*v); }});
}

void reg_dbl(CLI::App& app, FlagMap& fm, const std::string& flag, const std::string& key,
             const std::string& desc) {
    auto v = std::make_shared<double>();
    CLI::Option* o = app.add_option(flag, *v, desc);
    fm.entries.push_back({o, key, [v] { return fmt_dbl(*v); }});
}

void reg_str(CLI::App& app, FlagMap& fm, const std::string& flag, const std::string& key,
             const std::string& desc) {
    auto v = std::make_shared<std::string>();
    CLI::Option* o = app.add_option(flag, *v, desc);
    fm.entries.push_back({o, key, [v] { return *v; }});
}

void reg_bool(CLI::App& app, FlagMap& fm, const std::string& flag, const std::string& key,
              const std::string& desc) {
    auto v = std::make_shared<bool>();
    CLI::Option* o = app.add_flag(flag, *v, desc);
    fm.entries.push_back({o, key, [v] { return *v ? std::string("true") : std::string("false"); }});
}

std::vector<fs::path> list_ppm_frames(const std::string& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

int cmd_extract(const RunConfig& cfg, bool quiet) {
    require_setting(cfg.manifest, "--manifest", "extract");
    require_setting(cfg.out, "--out", "extract");
    const auto records = read_manifest(cfg.manifest);

    const fs::path index_path = fs::path(cfg.out) / "index.manifest";
    if (!cfg.force && fs::exists(index_path)) {
        throw ConfigError(index_path.string() + " already exists; pass --force to overwrite");
    }
    write_resolved_config(cfg, cfg.out);

    ResNetMiniConfig ec = cfg.extractor();
    ec.validate();
    if (cfg.frames_per_video < 1) throw ConfigError("frames_per_video must be >= 1");
    const ResNetMini net(ec);
    const std::string tag = ec.tag();

    const int64_t count = static_cast<int64_t>(records.size());
    std::vector<std::string> feature_paths(records.size());
    std::vector<std::string> failures(records.size());
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < count; ++i) {
        const CaptionRecord& rec = records[static_cast<size_t>(i)];
        try {
            if (rec.frames.empty()) {
                throw DataError("record " + rec.video_id + " has no frame directory");
            }
            const auto frame_files = list_ppm_frames(rec.frames);
            if (frame_files.empty()) {
                throw DataError("no .ppm frames in " + rec.frames);
            }
            const int64_t want = std::min<int64_t>(cfg.frames_per_video,
                                                   static_cast<int64_t>(frame_files.size()));
            const auto indices = sample_frames(static_cast<int64_t>(frame_files.size()), want,
                                               SamplePolicy::uniform);
            std::vector<Tensor> frames;
            frames.reserve(indices.size());
            for (uint32_t fi : indices) frames.push_back(load_frame(frame_files[fi].string(), ec));
            const VisualFeatureSet set = extract_features(net, frames, rec.video_id, indices);
            const std::string path = (fs::path(cfg.out) / (rec.video_id + ".mmvc")).string();
            write_features(set, path);
            feature_paths[static_cast<size_t>(i)] = path;
        } catch (const std::exception& e) {
            failures[static_cast<size_t>(i)] = e.what();
        }
    }

    std::ofstream index(index_path, std::ios::trunc);
    if (!index) throw DataError("cannot write " + index_path.string());
    int64_t failed = 0;
    for (size_t i = 0; i < records.size(); ++i) {
        const CaptionRecord& rec = records[i];
        if (!failures[i].empty()) {
            ++failed;
            std::cerr << "warning: " << rec.video_id << ": " << failures[i] << '\n';
            continue;
        }
        nlohmann::json j;
        j["video_id"] = rec.video_id;
        j["features"] = feature_paths[i];
        j["captions"] = rec.captions;
        if (rec.has_pair()) {
            j["action"] = rec.action;
            j["justification"] = rec.justification;
        }
        j["extractor_tag"] = tag;
        index << j.dump() << '\n';
        if (!quiet) std::cerr << "extracted " << rec.video_id << '\n';
    }
    if (!index) throw DataError("short write to " + index_path.string());
    index.close();

    if (failed > 0) {
        std::cerr << failed << " of " << count << " records failed\n";
        if (!cfg.keep_going) return 2;
    }
    if (!quiet) {
        std::cerr << "wrote " << (count - failed) << " feature files and " << index_path.string()
                  << '\n';
    }
    return 0;
}

int cmd_split(const RunConfig& cfg, bool quiet) {
    require_setting(cfg.manifest, "--manifest", "split");
    require_setting(cfg.out, "--out", "split");
    const auto records = read_manifest(cfg.manifest);
    const SplitResult result = split(records, cfg.test_fraction, cfg.seed);
    write_resolved_config(cfg, cfg.out);
    const std::string train_path = (fs::path(cfg.out) / "train.manifest").string();
    const std::string test_path = (fs::path(cfg.out) / "test.manifest").string();
    write_manifest(result.train, train_path);
    write_manifest(result.test, test_path);
    if (!quiet) {
        std::cerr << "split " << records.size() << " records into " << result.train.size()
                  << " train / " << result.test.size() << " test\n";
    }
    return 0;
}

std::map<int64_t, fs::path> list_checkpoints(const std::string& dir) {
    std::map<int64_t, fs::path> found;
    if (!fs::is_directory(dir)) return found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("ckpt-", 0) != 0 || entry.path().extension() != ".mmck") continue;
        const std::string digits = name.substr(5, name.size() - 5 - 5);
        try {
            size_t pos = 0;
            const int64_t epoch = std::stoll(digits, &pos);
            if (pos == digits.size()) found[epoch] = entry.path();
        } catch (const std::exception&) {
        }
    }
    return found;
}

int cmd_train(const RunConfig& cfg, bool quiet) {
    require_setting(cfg.manifest, "--manifest", "train");
    require_setting(cfg.out, "--out", "train");
    if (cfg.keep_last < 1) throw ConfigError("keep_last must be >= 1");
    const auto records = read_manifest(cfg.manifest);
    if (records.empty()) throw DataError("manifest " + cfg.manifest + " has no records");

    TrainConfig tc = cfg.train();
    tc.validate();
    write_resolved_config(cfg, cfg.out);

    Vocabulary vocab;
    ModelParams params;
    TrainState state;
    if (cfg.resume) {
        const auto checkpoints = list_checkpoints(cfg.out);
        if (checkpoints.empty()) {
            throw ConfigError("--resume given but no checkpoint found in " + cfg.out);
        }
        const fs::path latest = checkpoints.rbegin()->second;
        if (!quiet) std::cerr << "resuming from " << latest.string() << '\n';
        const Checkpoint ck = load_checkpoint(latest.string());
        params = params_from_checkpoint(ck);
        vocab = vocab_from_checkpoint(ck);
        state = state_from_checkpoint(ck, params);
    } else {
        std::vector<std::vector<std::string>> corpus;
        for (const CaptionRecord& rec : records) {
            for (const std::string& text : training_texts(rec)) {
                corpus.push_back(normalize_and_tokenize(text));
            }
        }
        vocab = Vocabulary::build(corpus, static_cast<int>(cfg.min_freq),
                                  static_cast<int>(cfg.vocab_cap));
        const ModelConfig mc = cfg.model(vocab.size());
        mc.validate();
        params = ModelParams::init(mc, cfg.seed);
        state = TrainState::init(params, tc);
    }

    const auto batches = make_batches(records, vocab, tc.batch_size, params.cfg.max_text_len);

    const std::string log_path = (fs::path(cfg.out) / "train.log").string();
    std::ofstream log(log_path, std::ios::app);
    if (!log) throw DataError("cannot open " + log_path + " for appending");

    TrainHooks hooks;
    hooks.on_step = [&log](const StepLog& s) {
        if (!std::isfinite(s.loss)) {
            throw NumericError("non-finite loss at step " + std::to_string(s.step) +
                               " (epoch " + std::to_string(s.epoch) + ")");
        }
        log << "step=" << s.step << " epoch=" << s.epoch << " loss=" << fmt_dbl(s.loss)
            << " grad_norm=" << fmt_dbl(s.grad_norm) << " loss_scale=" << fmt_dbl(s.loss_scale)
            << " wall_ms=" << fmt_dbl(s.wall_ms) << " skipped=" << (s.skipped ? 1 : 0) << '\n';
        log.flush();
    };

    while (state.epoch < tc.epochs) {
        const EpochStats stats = train_epoch(params, batches, tc, state, hooks);
        const std::string ck_path =
            (fs::path(cfg.out) / ("ckpt-" + std::to_string(state.epoch) + ".mmck")).string();
        save_checkpoint(ck_path, make_checkpoint(params, vocab, state));
        auto checkpoints = list_checkpoints(cfg.out);
        while (static_cast<int64_t>(checkpoints.size()) > cfg.keep_last) {
            fs::remove(checkpoints.begin()->second);
            checkpoints.erase(checkpoints.begin());
        }
        if (!quiet) {
            std::cerr << "epoch " << state.epoch << " mean_loss " << stats.mean_loss
                      << " updates " << stats.updates << " skipped " << stats.skipped << '\n';
        }
    }
    return 0;
}

int cmd_generate(const RunConfig& cfg, const std::set<std::string>& provided, bool quiet) {
    require_setting(cfg.checkpoint, "--checkpoint", "generate");
    require_setting(cfg.manifest, "--manifest", "generate");
    require_setting(cfg.out, "--out", "generate");
    if (cfg.strategy != "greedy" && cfg.strategy != "beam") {
        throw ConfigError("unknown strategy '" + cfg.strategy + "' (use greedy or beam)");
    }

    const Checkpoint ck = load_checkpoint(cfg.checkpoint);
    const ModelParams params = params_from_checkpoint(ck);
    const Vocabulary vocab = vocab_from_checkpoint(ck);
    if (vocab.size() != ck.config.vocab_size) {
        throw DataError("checkpoint vocabulary has " + std::to_string(vocab.size()) +
                        " entries but its config says " + std::to_string(ck.config.vocab_size));
    }
    const ModelConfig flag_view = cfg.model(ck.config.vocab_size);
    const std::vector<std::pair<std::string, int64_t>> dims = {
        {"d_model", flag_view.d_model},
        {"n_heads", flag_view.n_heads},
        {"n_encoder_layers", flag_view.n_encoder_layers},
        {"n_decoder_layers", flag_view.n_decoder_layers},
        {"d_ff", flag_view.d_ff},
        {"max_visual_tokens", flag_view.max_visual_tokens},
        {"max_text_len", flag_view.max_text_len},
        {"feature_dim", flag_view.feature_dim},
    };
    const std::vector<int64_t> ck_dims = {
        ck.config.d_model,           ck.config.n_heads,      ck.config.n_encoder_layers,
        ck.config.n_decoder_layers,  ck.config.d_ff,         ck.config.max_visual_tokens,
        ck.config.max_text_len,      ck.config.feature_dim,
    };
    for (size_t i = 0; i < dims.size(); ++i) {
        if (provided.count(dims[i].first) && dims[i].second != ck_dims[i]) {
            throw ConfigError(dims[i].first + " = " + std::to_string(dims[i].second) +
                              " conflicts with the checkpoint's " + std::to_string(ck_dims[i]));
        }
    }

    const int64_t max_len = cfg.max_len > 0 ? cfg.max_len : params.cfg.max_text_len;
    const auto records = read_manifest(cfg.manifest);

    write_resolved_config(cfg, cfg.out);
    const std::string out_path = (fs::path(cfg.out) / "captions.tsv").string();
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + out_path);

    std::set<std::string> done;
    for (const CaptionRecord& rec : records) {
        if (!done.insert(rec.video_id).second) continue;
        if (rec.features.empty()) {
            throw DataError("record " + rec.video_id +
                            " has no feature file; extract features first");
        }
        if (!fs::exists(rec.features)) {
            throw DataError("missing feature file for video " + rec.video_id + ": " +
                            rec.features);
        }
        const VisualFeatureSet set = read_features(rec.features);
        Tensor features = set.to_tensor();
        if (features.dim(0) > params.cfg.max_visual_tokens) {
            const auto keep = sample_frames(features.dim(0), params.cfg.max_visual_tokens,
                                            SamplePolicy::uniform);
            const int64_t cols = features.dim(1);
            Tensor reduced = Tensor::zeros({static_cast<int64_t>(keep.size()), cols});
            auto& dst = reduced.mutable_data();
            const auto& src = features.data();
            for (size_t r = 0; r < keep.size(); ++r) {
                for (int64_t c = 0; c < cols; ++c) {
                    dst[r * static_cast<size_t>(cols) + static_cast<size_t>(c)] =
                        src[static_cast<size_t>(keep[r]) * static_cast<size_t>(cols) +
                            static_cast<size_t>(c)];
                }
            }
            features = reduced;
        }
        const std::vector<int> ids =
            cfg.strategy == "beam"
                ? generate_beam(features, params, Vocabulary::bos_id, Vocabulary::eos_id,
                                max_len, cfg.beam_width)
                : generate_greedy(features, params, Vocabulary::bos_id, Vocabulary::eos_id,
                                  max_len);
        out << rec.video_id << '\t' << decode(ids, vocab) << '\n';
        if (!quiet) std::cerr << "captioned " << rec.video_id << '\n';
    }
    if (!out) throw DataError("short write to " + out_path);
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, bool quiet) {
    require_setting(cfg.captions, "--captions", "evaluate");
    require_setting(cfg.references, "--references", "evaluate");
    require_setting(cfg.out, "--out", "evaluate");

    const auto records = read_manifest(cfg.references);
    std::map<std::string, std::vector<std::vector<std::string>>> refs;
    for (const CaptionRecord& rec : records) {
        for (const std::string& text : training_texts(rec)) {
            refs[rec.video_id].push_back(normalize_and_tokenize(text));
        }
    }

    std::ifstream caps(cfg.captions);
    if (!caps) throw DataError("cannot open captions file " + cfg.captions);
    std::vector<EvalPair> pairs;
    std::vector<std::string> missing;
    std::set<std::string> missing_seen;
    std::string line;
    int lineno = 0;
    while (std::getline(caps, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(cfg.captions + ":" + std::to_string(lineno) +
                            ": expected video_id<TAB>caption");
        }
        EvalPair p;
        p.video_id = line.substr(0, tab);
        p.hypothesis = normalize_and_tokenize(line.substr(tab + 1));
        const auto it = refs.find(p.video_id);
        if (it == refs.end()) {
            if (missing_seen.insert(p.video_id).second) missing.push_back(p.video_id);
            continue;
        }
        p.references = it->second;
        pairs.push_back(std::move(p));
    }
    if (!missing.empty()) {
        std::string joined;
        for (const std::string& id : missing) {
            if (!joined.empty()) joined += ", ";
            joined += id;
        }
        throw DataError("captions reference videos missing from the manifest: " + joined);
    }

    const MetricReport report = evaluate_corpus(pairs, cfg.metric_options());
    write_resolved_config(cfg, cfg.out);
    const std::string human = format_report(report);
    std::cout << human;
    const std::string report_path = (fs::path(cfg.out) / "report.txt").string();
    std::ofstream rf(report_path, std::ios::trunc);
    if (!rf) throw DataError("cannot write " + report_path);
    rf << human;

    if (!cfg.plot_data.empty()) {
        const fs::path pp(cfg.plot_data);
        if (!pp.parent_path().empty()) fs::create_directories(pp.parent_path());
        std::ofstream plot(pp, std::ios::trunc);
        if (!plot) throw DataError("cannot write " + cfg.plot_data);
        plot.precision(12);
        plot << std::fixed;
        plot << "bleu_1," << report.bleu_1 << '\n';
        plot << "bleu_2," << report.bleu_2 << '\n';
        plot << "bleu_3," << report.bleu_3 << '\n';
        plot << "bleu_4," << report.bleu_4 << '\n';
        plot << "meteor," << report.meteor << '\n';
        plot << "rouge_l," << report.rouge_l << '\n';
        if (report.options.with_cider) plot << "cider," << report.cider << '\n';
    }
    if (!quiet) std::cerr << "wrote " << report_path << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale multimodal video captioning pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    bool quiet = false;
    app.add_option("--config", config_path, "config file (key = value lines)");
    app.add_flag("--quiet", quiet, "suppress progress messages");

    FlagMap fm;
    reg_u64(app, fm, "--seed", "seed", "seed for splits, init, and batch order");
    reg_str(app, fm, "--out", "out", "output directory");
    reg_str(app, fm, "--manifest", "manifest", "input manifest (one JSON record per line)");
    reg_str(app, fm, "--checkpoint", "checkpoint", "checkpoint file to load");
    reg_str(app, fm, "--captions", "captions", "captions file (video_id TAB caption)");
    reg_str(app, fm, "--references", "references", "reference manifest for evaluation");
    reg_str(app, fm, "--plot-data", "plot_data", "write key,value metric rows to this path");

    reg_i64(app, fm, "--d-model", "d_model", "model width");
    reg_i64(app, fm, "--heads", "n_heads", "attention heads");
    reg_i64(app, fm, "--encoder-layers", "n_encoder_layers", "encoder depth");
    reg_i64(app, fm, "--decoder-layers", "n_decoder_layers", "decoder depth");
    reg_i64(app, fm, "--d-ff", "d_ff", "feedforward width (0 = 4x d_model)");
    reg_i64(app, fm, "--max-visual-tokens", "max_visual_tokens", "visual position table size");
    reg_i64(app, fm, "--max-text-len", "max_text_len", "text position table size");
    reg_i64(app, fm, "--feature-dim", "feature_dim", "visual feature width");
    reg_i64(app, fm, "--vocab-cap", "vocab_cap", "vocabulary size cap");
    reg_i64(app, fm, "--min-freq", "min_freq", "vocabulary frequency threshold");

    reg_i64(app, fm, "--input-size", "input_size", "extractor input edge, pixels");
    reg_i64(app, fm, "--frames-per-video", "frames_per_video", "frames sampled per video");
    reg_u64(app, fm, "--extractor-seed", "extractor_seed", "extractor weight seed");

    reg_i64(app, fm, "--epochs", "epochs", "training epochs");
    reg_i64(app, fm, "--batch-size", "batch_size", "examples per micro-batch");
    reg_dbl(app, fm, "--learning-rate", "learning_rate", "AdamW learning rate");
    reg_dbl(app, fm, "--weight-decay", "weight_decay", "decoupled weight decay");
    reg_dbl(app, fm, "--clip-norm", "clip_norm", "global gradient norm ceiling");
    reg_dbl(app, fm, "--lambda", "lambda", "L2 penalty weight in the loss");
    reg_dbl(app, fm, "--loss-scale", "loss_scale", "initial loss scale");
    reg_bool(app, fm, "--mean-loss,!--sum-loss", "mean_loss", "average loss over tokens");
    reg_i64(app, fm, "--keep-last", "keep_last", "checkpoints retained");

    reg_str(app, fm, "--strategy", "strategy", "generation strategy: greedy or beam");
    reg_i64(app, fm, "--beam-width", "beam_width", "beam width for --strategy beam");
    reg_i64(app, fm, "--max-len", "max_len", "generation length cap (0 = max_text_len)");

    reg_bool(app, fm, "--bleu-smooth,!--no-bleu-smooth", "bleu_smooth", "additive-1 BLEU smoothing");
    reg_bool(app, fm, "--stemmer,!--no-stemmer", "use_stemmer", "suffix stemmer in the aligner");
    reg_dbl(app, fm, "--rouge-beta", "rouge_beta", "recall weight in the LCS F-measure");
    reg_bool(app, fm, "--cider,!--no-cider", "with_cider", "consensus metric (needs >= 2 videos)");

    reg_dbl(app, fm, "--test-fraction", "test_fraction", "held-out fraction for split");
    reg_bool(app, fm, "--keep-going", "keep_going", "extract: continue past failed records");
    reg_bool(app, fm, "--force", "force", "extract: overwrite existing outputs");
    reg_bool(app, fm, "--resume", "resume", "train: continue from the latest checkpoint");

    // accumulation reads an integer or "off" so ablations toggle it by name
    {
        auto v = std::make_shared<std::string>();
        CLI::Option* o =
            app.add_option("--accumulation", *v, "gradient accumulation steps, or 'off'");
        fm.entries.push_back(
            {o, "accumulation_steps", [v] { return *v == "off" ? std::string("1") : *v; }});
    }

    CLI::App* c_extract =
        app.add_subcommand("extract", "sample frames and write visual feature files");
    CLI::App* c_split = app.add_subcommand("split", "partition a manifest by video id");
    CLI::App* c_train = app.add_subcommand("train", "fit the captioner; checkpoints + loss log");
    CLI::App* c_generate = app.add_subcommand("generate", "decode captions from a checkpoint");
    CLI::App* c_evaluate = app.add_subcommand("evaluate", "score captions against references");
    for (CLI::App* sub : {c_extract, c_split, c_train, c_generate, c_evaluate}) {
        sub->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        std::set<std::string> provided;
        const RunConfig cfg = resolve_run_config(config_path, fm.overrides(), &provided);
        if (c_extract->parsed()) return cmd_extract(cfg, quiet);
        if (c_split->parsed()) return cmd_split(cfg, quiet);
        if (c_train->parsed()) return cmd_train(cfg, quiet);
        if (c_generate->parsed()) return cmd_generate(cfg, provided, quiet);
        if (c_evaluate->parsed()) return cmd_evaluate(cfg, quiet);
        throw ConfigError("no subcommand given");
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const Error& e) { // data and shape problems
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
