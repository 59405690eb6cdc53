#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include "pvp/checkpoint.hpp"
#include "pvp/config.hpp"
#include "pvp/corpus.hpp"
#include "pvp/error.hpp"
#include "pvp/interchange.hpp"
#include "pvp/io.hpp"
#include "pvp/llm.hpp"
#include "pvp/log.hpp"
#include "pvp/pipeline.hpp"
#include "pvp/text.hpp"

namespace pvp::cli {
namespace {

namespace fs = std::filesystem;

// Config-backed flags. Values are applied after the TOML file, so flags win.
struct ConfigFlags {
    struct Shortcut {
        CLI::Option* option = nullptr;
        std::string key;
        std::string value;
    };
    struct Switch {
        CLI::Option* option = nullptr;
        std::string key;
        std::string value;
        bool set = false;
    };

    std::string config_path;
    std::vector<std::string> sets;
    std::deque<Shortcut> shortcuts;
    std::deque<Switch> switches;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "TOML config file (nested tables or dotted keys)")
            ->check(CLI::ExistingFile);
        app->add_option("--set", sets, "Override any config key, KEY=VALUE (repeatable)");
        shortcut(app, "--seed", "seed", "Seed for all randomness");
        shortcut(app, "--threads", "threads", "Worker threads (results do not depend on it)");
    }

    void shortcut(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        auto& s = shortcuts.emplace_back();
        s.key = key;
        s.option = app->add_option(flag, s.value, help + " [" + key + "]");
    }

    void toggle(CLI::App* app, const std::string& flag, const std::string& key, const std::string& value,
                const std::string& help) {
        auto& s = switches.emplace_back();
        s.key = key;
        s.value = value;
        s.option = app->add_flag(flag, s.set, help + " [" + key + "=" + value + "]");
    }

    StageConfig resolve() const {
        std::vector<std::pair<std::string, std::string>> overrides;
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos || eq == 0) throw ParameterError("--set expects KEY=VALUE, got '" + kv + "'");
            overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
        }
        for (const auto& s : shortcuts) {
            if (s.option->count()) overrides.emplace_back(s.key, s.value);
        }
        for (const auto& s : switches) {
            if (s.set) overrides.emplace_back(s.key, s.value);
        }
        return load_config(config_path, overrides);
    }
};

void encoder_flags(ConfigFlags& f, CLI::App* app) {
    f.shortcut(app, "--embed-dim", "encoder.embed_dim", "Embedding dimension D");
    f.shortcut(app, "--patch-size", "encoder.patch_size", "Encoder patch size");
    f.shortcut(app, "--image-size", "encoder.image_size", "Default image extent");
    f.shortcut(app, "--encoder-seed", "encoder.seed", "Seed of the frozen encoder weights");
}

void write_manifest(const std::string& command, const std::vector<std::string>& args, const StageConfig& config,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                    const std::string& manifest_flag) {
    fs::path path = manifest_flag;
    if (path.empty()) {
        const auto first = std::find_if(outputs.begin(), outputs.end(), [](const auto& o) { return !o.empty(); });
        if (first == outputs.end()) return;
        path = *first + ".manifest.json";
    }
    RunManifest m;
    m.command = command;
    m.argv = args;
    m.config = config;
    for (const auto& in : inputs) {
        if (in.empty()) continue;
        if (fs::is_directory(in)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(in)) {
                if (e.is_regular_file()) files.push_back(e.path());
            }
            std::sort(files.begin(), files.end());
            for (const auto& f : files) m.add_input(f);
        } else {
            if (!fs::exists(in)) throw InputError("no such input file: " + in);
            m.add_input(in);
        }
    }
    for (const auto& o : outputs) {
        if (!o.empty()) m.outputs.push_back(o);
    }
    m.write(path);
}

FrozenEncoderPair encoders_for(const EncoderConfig& cfg, const SynonymDictionary& dict) {
    return FrozenEncoderPair(cfg, build_vocabulary(dict));
}

std::vector<fs::path> image_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw InputError("not an image directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("no .ppm images in " + dir.string());
    return files;
}

std::size_t class_index(const std::string& spec, const std::vector<std::string>& names) {
    if (auto it = std::find(names.begin(), names.end(), spec); it != names.end()) {
        return static_cast<std::size_t>(it - names.begin());
    }
    std::size_t idx = 0;
    const auto r = std::from_chars(spec.data(), spec.data() + spec.size(), idx);
    if (r.ec != std::errc{} || r.ptr != spec.data() + spec.size() || idx >= names.size()) {
        throw ParameterError("unknown class '" + spec + "'");
    }
    return idx;
}

std::string fixed(double v, int digits = 6) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

struct Command {
    CLI::App* app;
    std::function<int()> body;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pseudo-visual prompt co-learning for multi-label classification", "pvp"};
    app.require_subcommand(1, 1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    std::vector<Command> commands;
    std::string manifest;
    auto manifest_flag = [&](CLI::App* sub) {
        sub->add_option("--manifest", manifest, "Run manifest path (default: <first output>.manifest.json)");
    };
    std::deque<ConfigFlags> flag_sets;

    // gen-text
    {
        auto* sub = app.add_subcommand("gen-text", "Generate a filtered training corpus with an LLM");
        struct Args {
            std::string classes, out_path, llm = "mock", endpoint, model = "gpt-3.5-turbo", cache_dir;
            std::size_t count = 400, max_words = 25, max_attempts = 0, threads = 1;
            std::uint64_t seed = 0;
            double unlikely = 0.1, synonym_free = 0.2;
        };
        auto a = std::make_shared<Args>();
        sub->add_option("--classes", a->classes, "Synonym dictionary")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", a->out_path, "Output corpus (JSON lines)")->required();
        sub->add_option("--count", a->count, "Texts to keep")->capture_default_str();
        sub->add_option("--seed", a->seed, "Seed for class sampling and the mock LLM")->capture_default_str();
        sub->add_option("--llm", a->llm, "LLM backend")->check(CLI::IsMember({"mock", "http"}))->capture_default_str();
        sub->add_option("--endpoint", a->endpoint, "Chat-completion URL for --llm http");
        sub->add_option("--model", a->model, "Model name for --llm http")->capture_default_str();
        sub->add_option("--cache-dir", a->cache_dir, "Reply cache directory for --llm http");
        sub->add_option("--unlikely-rate", a->unlikely, "Mock: share of 'Unlikely' verdicts")->capture_default_str();
        sub->add_option("--synonym-free-rate", a->synonym_free, "Mock: share of sentences without class nouns")
            ->capture_default_str();
        sub->add_option("--max-words", a->max_words, "Drop texts longer than this")->capture_default_str();
        sub->add_option("--max-attempts", a->max_attempts, "Query budget (0: 20 x count)")->capture_default_str();
        sub->add_option("--threads", a->threads, "Parallel requests")->capture_default_str();
        manifest_flag(sub);
        commands.push_back({sub, [&, a] {
                                StageConfig cfg;
                                cfg.seed = a->seed;
                                write_manifest("gen-text", args, cfg, {a->classes}, {a->out_path}, manifest);
                                const auto dict = SynonymDictionary::load(a->classes);
                                std::unique_ptr<LlmClient> client;
                                if (a->llm == "mock") {
                                    auto mc = mock_config_for(dict, a->seed);
                                    mc.unlikely_rate = a->unlikely;
                                    mc.synonym_free_rate = a->synonym_free;
                                    client = std::make_unique<MockLlm>(mc);
                                } else {
                                    if (a->endpoint.empty()) throw ParameterError("--llm http needs --endpoint");
                                    HttpLlmConfig hc;
                                    hc.endpoint = a->endpoint;
                                    hc.model = a->model;
                                    hc.cache_dir = a->cache_dir;
                                    if (!a->cache_dir.empty()) fs::create_directories(a->cache_dir);
                                    client = std::make_unique<HttpLlm>(hc);
                                }
                                CorpusConfig cc{a->seed, a->max_words, a->max_attempts, a->threads};
                                const auto corpus = generate_corpus(a->count, *client, dict, cc);
                                write_corpus(corpus.texts, a->out_path);
                                const auto& st = corpus.stats;
                                out << "queried " << st.queried << " kept " << st.kept << " unlikely " << st.unlikely
                                    << " unmatched " << st.unmatched << " overlength " << st.overlength
                                    << " saturated " << st.saturated << " transport_failures "
                                    << st.transport_failures << "\n";
                                if (st.kept == 0 && st.transport_failures > 0) {
                                    throw TransportError("every LLM request failed");
                                }
                                if (st.kept == 0) throw InputError("no text survived filtering");
                                return kExitOk;
                            }});
    }

    // filter-text
    {
        auto* sub = app.add_subcommand("filter-text", "Noun-filter raw sentences (one per line) into a corpus");
        struct Args {
            std::string classes, in_path, out_path;
            std::size_t max_words = 25;
        };
        auto a = std::make_shared<Args>();
        sub->add_option("--classes", a->classes, "Synonym dictionary")->required()->check(CLI::ExistingFile);
        sub->add_option("--in", a->in_path, "Raw sentences, one per line")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", a->out_path, "Output corpus (JSON lines)")->required();
        sub->add_option("--max-words", a->max_words, "Drop texts longer than this")->capture_default_str();
        manifest_flag(sub);
        commands.push_back({sub, [&, a] {
                                write_manifest("filter-text", args, StageConfig{}, {a->classes, a->in_path}, {a->out_path},
                                               manifest);
                                const auto dict = SynonymDictionary::load(a->classes);
                                std::vector<FilteredText> kept;
                                std::size_t total = 0, unmatched = 0, overlength = 0, saturated = 0;
                                for (const auto& line : io::read_lines(a->in_path)) {
                                    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                                    ++total;
                                    if (text::split_words(line).size() > a->max_words) {
                                        ++overlength;
                                        continue;
                                    }
                                    auto f = noun_filter(line, dict);
                                    if (!f) {
                                        ++unmatched;
                                    } else if (f->labels.negative.empty()) {
                                        ++saturated;
                                    } else {
                                        kept.push_back(std::move(*f));
                                    }
                                }
                                write_corpus(kept, a->out_path);
                                out << "read " << total << " kept " << kept.size() << " unmatched " << unmatched
                                    << " overlength " << overlength << " saturated " << saturated << "\n";
                                return kExitOk;
                            }});
    }

    // train-stage1
    {
        auto* sub = app.add_subcommand("train-stage1", "Learn pseudo-visual prompts from the text corpus");
        struct Args {
            std::string classes, corpus_path, out_path, loss_log;
        };
        auto a = std::make_shared<Args>();
        auto& f = flag_sets.emplace_back();
        sub->add_option("--classes", a->classes, "Synonym dictionary")->required()->check(CLI::ExistingFile);
        sub->add_option("--corpus", a->corpus_path, "Training corpus (JSON lines)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", a->out_path, "Stage-1 checkpoint")->required();
        sub->add_option("--loss-log", a->loss_log, "Per-step loss CSV");
        f.attach(sub);
        f.shortcut(sub, "--epochs", "stage1.epochs", "Training epochs");
        f.shortcut(sub, "--lr", "stage1.lr", "Base learning rate (cosine decay)");
        f.shortcut(sub, "--batch-size", "batch_size", "Texts per step");
        f.shortcut(sub, "--margin", "loss.margin", "Ranking margin");
        f.shortcut(sub, "--prompt-size", "stage1.prompt_extent", "Prompt extent H = W (0: encoder image size)");
        f.toggle(sub, "--embedding-space", "stage1.embedding_space", "true", "Learn prompts directly in embedding space");
        encoder_flags(f, sub);
        manifest_flag(sub);
        commands.push_back({sub, [&, a] {
                                const auto cfg = f.resolve();
                                write_manifest("train-stage1", args, cfg, {f.config_path, a->classes, a->corpus_path}, {a->out_path, a->loss_log},
                                               manifest);
                                const auto dict = SynonymDictionary::load(a->classes);
                                const auto corpus = read_corpus(a->corpus_path, dict);
                                const auto enc = encoders_for(cfg.encoder, dict);
                                const auto r = train_stage1(corpus, dict.classes(), enc, cfg);
                                save_checkpoint(r.checkpoint, a->out_path);
                                if (!a->loss_log.empty()) write_loss_log(r.log, a->loss_log);
                                if (!r.epoch_loss.empty()) out << "final epoch loss " << fixed(r.epoch_loss.back()) << "\n";
                                if (r.diverged) throw DivergenceError(r.message);
                                return kExitOk;
                            }});
    }

    // train-stage2
    {
        auto* sub = app.add_subcommand("train-stage2", "Co-learn text prompts and the dual adapter");
        struct Args {
            std::string classes, corpus_path, init, out_path, loss_log;
        };
        auto a = std::make_shared<Args>();
        auto& f = flag_sets.emplace_back();
        sub->add_option("--classes", a->classes, "Synonym dictionary")->required()->check(CLI::ExistingFile);
        sub->add_option("--corpus", a->corpus_path, "Training corpus (JSON lines)")->required()->check(CLI::ExistingFile);
        sub->add_option("--init", a->init, "Stage-1 (or stage-2) checkpoint")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", a->out_path, "Stage-2 checkpoint")->required();
        sub->add_option("--loss-log", a->loss_log, "Per-step loss CSV");
        f.attach(sub);
        f.shortcut(sub, "--epochs", "stage2.epochs", "Training epochs");
        f.shortcut(sub, "--lr-text", "stage2.lr_text", "Learning rate of context vectors and adapters");
        f.shortcut(sub, "--lr-pvp", "stage2.lr_pvp", "Learning rate of the pseudo-visual prompts");
        f.shortcut(sub, "--lambda", "stage2.lambda", "Adapter residual ratio in [0, 1]");
        f.shortcut(sub, "--context-length", "stage2.context_length", "Context vectors M");
        f.shortcut(sub, "--batch-size", "batch_size", "Texts per step");
        f.shortcut(sub, "--margin", "loss.margin", "Ranking margin");
        f.shortcut(sub, "--tau", "loss.tau", "Contrastive temperature");
        f.shortcut(sub, "--gamma", "loss.gamma", "Weight of the visual-text term");
        f.shortcut(sub, "--eta", "loss.eta", "Weight of the visual term");
        f.shortcut(sub, "--nu", "loss.nu", "Weight of the text term");
        f.shortcut(sub, "--vtc-loss", "loss.vtc", "Visual-text term variant, RL or CE");
        f.shortcut(sub, "--visual-loss", "loss.visual", "Visual term variant, RL or CE");
        f.shortcut(sub, "--text-loss", "loss.text", "Text term variant, RL or CE");
        manifest_flag(sub);
        commands.push_back({sub, [&, a] {
                                const auto cfg = f.resolve();
                                write_manifest("train-stage2", args, cfg, {f.config_path, a->classes, a->corpus_path, a->init},
                                               {a->out_path, a->loss_log}, manifest);
                                const auto dict = SynonymDictionary::load(a->classes);
                                const auto corpus = read_corpus(a->corpus_path, dict);
                                auto start = load_checkpoint(a->init);
                                const auto enc = encoders_for(start.encoder, dict);
                                require_compatible(start, enc);
                                auto run_cfg = cfg;
                                run_cfg.encoder = start.encoder;
                                const auto r = train_stage2(corpus, enc, start, run_cfg);
                                save_checkpoint(r.checkpoint, a->out_path);
                                if (!a->loss_log.empty()) write_loss_log(r.log, a->loss_log);
                                if (!r.epoch_loss.empty()) out << "final epoch loss " << fixed(r.epoch_loss.back()) << "\n";
                                if (r.diverged) throw DivergenceError(r.message);
                                return kExitOk;
                            }});
    }

    // infer
    {
        auto* sub = app.add_subcommand("infer", "Score images (or image embeddings) against every class");
        struct Args {
            std::string classes, ckpt_path, images, embeddings, out_path, branch = "fused";
        };
        auto a = std::make_shared<Args>();
        auto& f = flag_sets.emplace_back();
        sub->add_option("--classes", a->classes, "Synonym dictionary")->required()->check(CLI::ExistingFile);
        sub->add_option("--ckpt", a->ckpt_path, "Trained checkpoint")->required()->check(CLI::ExistingFile);
        auto* img = sub->add_option("--images", a->images, "Directory of .ppm images, scored in name order");
        auto* emb = sub->add_option("--embeddings", a->embeddings, "Interchange file of unit image embeddings");
        img->excludes(emb);
        sub->add_option("--out", a->out_path, "Score CSV, one row per image")->required();
        sub->add_option("--branch", a->branch, "Which scores to write")
            ->check(CLI::IsMember({"fused", "visual", "text"}))
            ->capture_default_str();
        f.attach(sub);
        f.shortcut(sub, "--alpha", "infer.alpha", "Weight of the visual branch");
        f.toggle(sub, "--no-adapt-queries", "infer.adapt_queries", "false", "Score raw image embeddings");
        manifest_flag(sub);
        commands.push_back({sub, [&, a] {
                                if (a->images.empty() == a->embeddings.empty()) {
                                    throw ParameterError("give exactly one of --images or --embeddings");
                                }
                                const auto cfg = f.resolve();
                                write_manifest("infer", args, cfg, {f.config_path, a->classes, a->ckpt_path, a->images, a->embeddings}, {a->out_path},
                                               manifest);
                                const auto dict = SynonymDictionary::load(a->classes);
                                const auto ckpt = load_checkpoint(a->ckpt_path);
                                const auto enc = encoders_for(ckpt.encoder, dict);
                                BranchScores s;
                                if (!a->images.empty()) {
                                    std::vector<Tensor> imgs;
                                    for (const auto& p : image_files(a->images)) imgs.push_back(read_ppm(p));
                                    s = infer_branches(imgs, ckpt, enc, cfg.infer, cfg.threads);
                                } else {
                                    const auto batch = read_embeddings(a->embeddings);
                                    if (batch.role != EmbeddingRole::test_image) {
                                        log::warn("embedding file role is " + std::string(role_name(batch.role)) +
                                                  ", expected test_image");
                                    }
                                    s = score_embeddings(batch.values, ckpt, enc, cfg.infer);
                                }
                                const auto& m = a->branch == "fused" ? s.fused : a->branch == "visual" ? s.visual : s.text;
                                write_matrix_csv(m, a->out_path, ckpt.class_names);
                                out << "scored " << m.rows() << " images x " << m.cols() << " classes\n";
                                return kExitOk;
                            }});
    }

    // eval
    {
        auto* sub = app.add_subcommand("eval", "Mean average precision of a score matrix");
        struct Args {
            std::string scores, labels;
            bool strict = false;
        };
        auto a = std::make_shared<Args>();
        sub->add_option("--scores", a->scores, "Score CSV")->required()->check(CLI::ExistingFile);
        sub->add_option("--labels", a->labels, "Multi-hot label CSV")->required()->check(CLI::ExistingFile);
        sub->add_flag("--strict", a->strict, "Fail when a class has no positives instead of skipping it");
        manifest_flag(sub);
        commands.push_back({sub, [&, a] {
                                write_manifest("eval", args, StageConfig{}, {a->scores, a->labels}, {}, manifest);
                                const auto r = evaluate_map(read_matrix_csv(a->scores), read_labels_csv(a->labels),
                                                            a->strict ? MissingPositives::error : MissingPositives::skip);
                                for (std::size_t j = 0; j < r.ap.size(); ++j) {
                                    if (!std::isnan(r.ap[j])) out << "AP[" << j << "] " << fixed(r.ap[j]) << "\n";
                                }
                                out << "mAP " << fixed(r.map) << "\n";
                                return kExitOk;
                            }});
    }

    // ensemble
    {
        auto* sub = app.add_subcommand("ensemble", "Mix two score matrices after min-max normalisation");
        struct Args {
            std::string a, b, out_path;
            double weight = 0.5;
        };
        auto a = std::make_shared<Args>();
        sub->add_option("--a", a->a, "First score CSV")->required()->check(CLI::ExistingFile);
        sub->add_option("--b", a->b, "Second score CSV")->required()->check(CLI::ExistingFile);
        sub->add_option("--weight", a->weight, "Weight of --a in [0, 1]")->capture_default_str();
        sub->add_option("--out", a->out_path, "Output CSV")->required();
        manifest_flag(sub);
        commands.push_back({sub, [&, a] {
                                write_manifest("ensemble", args, StageConfig{}, {a->a, a->b}, {a->out_path}, manifest);
                                write_matrix_csv(ensemble_scores(read_matrix_csv(a->a), read_matrix_csv(a->b), a->weight),
                                                 a->out_path);
                                return kExitOk;
                            }});
    }

    // heatmap
    {
        auto* sub = app.add_subcommand("heatmap", "Patch-level correlation of one image with one class");
        struct Args {
            std::string classes, ckpt_path, image, cls, out_path, csv;
            std::size_t scale = 0;
        };
        auto a = std::make_shared<Args>();
        auto& f = flag_sets.emplace_back();
        sub->add_option("--classes", a->classes, "Synonym dictionary")->required()->check(CLI::ExistingFile);
        sub->add_option("--ckpt", a->ckpt_path, "Trained checkpoint")->required()->check(CLI::ExistingFile);
        sub->add_option("--image", a->image, "Input .ppm image")->required()->check(CLI::ExistingFile);
        sub->add_option("--class", a->cls, "Class name or index")->required();
        sub->add_option("--out", a->out_path, "Output .pgm")->required();
        sub->add_option("--csv", a->csv, "Also write the raw grid as CSV");
        sub->add_option("--scale", a->scale, "Pixels per cell (0: patch size)")->capture_default_str();
        f.attach(sub);
        f.shortcut(sub, "--alpha", "infer.alpha", "Weight of the visual class embedding");
        manifest_flag(sub);
        commands.push_back({sub, [&, a] {
                                const auto cfg = f.resolve();
                                write_manifest("heatmap", args, cfg, {f.config_path, a->classes, a->ckpt_path, a->image}, {a->out_path, a->csv},
                                               manifest);
                                const auto dict = SynonymDictionary::load(a->classes);
                                const auto ckpt = load_checkpoint(a->ckpt_path);
                                const auto enc = encoders_for(ckpt.encoder, dict);
                                const auto m = correlation_map(read_ppm(a->image), class_index(a->cls, ckpt.class_names), ckpt,
                                                               enc, cfg.infer.alpha);
                                write_pgm(m, a->out_path, a->scale ? a->scale : ckpt.encoder.patch_size);
                                if (!a->csv.empty()) write_grid_csv(m, a->csv);
                                return kExitOk;
                            }});
    }

    // sweep
    {
        auto* sub = app.add_subcommand("sweep", "Grid sweep over config keys on the synthetic benchmark");
        struct Args {
            std::string classes, corpus_path, out_path;
            std::vector<std::string> grid;
            std::size_t jobs = 1, corpus_count = 400, test_count = 160;
        };
        auto a = std::make_shared<Args>();
        auto& f = flag_sets.emplace_back();
        sub->add_option("--classes", a->classes, "Synonym dictionary")->required()->check(CLI::ExistingFile);
        sub->add_option("--corpus", a->corpus_path, "Training corpus (default: mock corpus from --seed)")
            ->check(CLI::ExistingFile);
        sub->add_option("--grid", a->grid, "Axis KEY=V1,V2 or K1:K2=A:B,C:D (repeatable)")->required();
        sub->add_option("--jobs", a->jobs, "Grid points run in parallel")->capture_default_str();
        sub->add_option("--corpus-count", a->corpus_count, "Mock corpus size")->capture_default_str();
        sub->add_option("--test-count", a->test_count, "Synthetic test images")->capture_default_str();
        sub->add_option("--out", a->out_path, "Result CSV")->required();
        f.attach(sub);
        manifest_flag(sub);
        commands.push_back({sub, [&, a] {
                                const auto cfg = f.resolve();
                                std::vector<SweepAxis> axes;
                                for (const auto& g : a->grid) axes.push_back(parse_sweep_axis(g));
                                write_manifest("sweep", args, cfg, {f.config_path, a->classes, a->corpus_path}, {a->out_path}, manifest);
                                const auto dict = SynonymDictionary::load(a->classes);
                                auto spec = a->corpus_path.empty() ? benchmark_spec(dict, a->corpus_count, a->test_count, cfg.seed)
                                                                : BenchmarkSpec{dict, read_corpus(a->corpus_path, dict), {}};
                                spec.test.count = a->test_count;
                                spec.test.seed = cfg.seed;
                                const auto rows = run_sweep(axes, cfg, spec, a->jobs);
                                write_sweep_csv(rows, a->out_path);
                                std::size_t failed = 0;
                                for (const auto& r : rows) failed += !r.error.empty();
                                out << "points " << rows.size() << " failed " << failed << "\n";
                                return kExitOk;
                            }});
    }

    // gradcheck
    {
        auto* sub = app.add_subcommand("gradcheck", "Finite-difference check of the stage-2 gradients");
        struct Args {
            std::uint64_t seed = 0;
            double eps = 1e-5, tolerance = 1e-4;
        };
        auto a = std::make_shared<Args>();
        sub->add_option("--seed", a->seed, "Seed of the random problem")->capture_default_str();
        sub->add_option("--eps", a->eps, "Central-difference step")->capture_default_str();
        sub->add_option("--tolerance", a->tolerance, "Largest accepted relative error")->capture_default_str();
        commands.push_back({sub, [&, a] {
                                const auto r = stage2_gradient_check(a->seed, a->eps);
                                out << "checked " << r.checked << " parameters\n";
                                out << "max relative error " << std::scientific << std::setprecision(3)
                                    << r.max_relative_error << std::defaultfloat << "\n";
                                if (r.max_relative_error > a->tolerance) {
                                    err << "gradient check failed: parameter " << r.worst_param << " element "
                                        << r.worst_element << " analytic " << r.analytic << " numeric " << r.numeric
                                        << "\n";
                                    return kExitRuntime;
                                }
                                return kExitOk;
                            }});
    }

    // export-synth
    {
        auto* sub = app.add_subcommand("export-synth", "Write the synthetic multi-label test set as .ppm images");
        struct Args {
            std::string classes, out_dir;
            std::size_t count = 160;
            double noise = 0.05;
            bool embeddings = false;
        };
        auto a = std::make_shared<Args>();
        auto& f = flag_sets.emplace_back();
        sub->add_option("--classes", a->classes, "Synonym dictionary")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", a->out_dir, "Output directory")->required();
        sub->add_option("--count", a->count, "Images")->capture_default_str();
        sub->add_option("--noise", a->noise, "Pixel noise standard deviation")->capture_default_str();
        sub->add_flag("--embeddings", a->embeddings, "Also write images.pvpe with exact image embeddings");
        f.attach(sub);
        encoder_flags(f, sub);
        manifest_flag(sub);
        commands.push_back({sub, [&, a] {
                                const auto cfg = f.resolve();
                                write_manifest("export-synth", args, cfg, {f.config_path, a->classes},
                                               {(fs::path(a->out_dir) / "labels.csv").string()}, manifest);
                                const auto dict = SynonymDictionary::load(a->classes);
                                const auto enc = encoders_for(cfg.encoder, dict);
                                SynthConfig sc;
                                sc.count = a->count;
                                sc.noise_std = a->noise;
                                sc.seed = cfg.seed;
                                const auto data = synth_dataset(dict.classes(), enc, sc);
                                fs::create_directories(a->out_dir);
                                for (std::size_t i = 0; i < data.images.size(); ++i) {
                                    std::ostringstream name;
                                    name << "img_" << std::setw(5) << std::setfill('0') << i << ".ppm";
                                    write_ppm(data.images[i], fs::path(a->out_dir) / name.str());
                                }
                                write_labels_csv(data.multi_hot(dict.size()), fs::path(a->out_dir) / "labels.csv",
                                                 dict.classes());
                                if (a->embeddings) {
                                    EmbeddingBatch b{EmbeddingRole::test_image, enc.encode_images(data.images, cfg.threads),
                                                     {}};
                                    write_embeddings(b, fs::path(a->out_dir) / "images.pvpe");
                                }
                                out << "wrote " << data.images.size() << " images to " << a->out_dir << "\n";
                                return kExitOk;
                            }});
    }

    std::vector<std::string> argv_store{"pvp"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        const auto selected = app.get_subcommands();
        err << (selected.empty() ? app.help() : selected.front()->help());
        return kExitInput;
    }

    const auto* selected = app.get_subcommands().front();
    const auto it = std::find_if(commands.begin(), commands.end(), [&](const Command& c) { return c.app == selected; });
    try {
        return it->body();
    } catch (const InputError& e) {
        err << "input error: " << e.what() << "\n";
    } catch (const ParameterError& e) {
        err << "parameter error: " << e.what() << "\n";
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << "\n";
    } catch (const IncompatibleError& e) {
        err << "incompatible input: " << e.what() << "\n";
    } catch (const ShapeError& e) {
        err << "shape error: " << e.what() << "\n";
    } catch (const std::exception& e) {
        err << "runtime failure: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitInput;
}

}  // namespace pvp::cli
