// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pvp/checkpoint.hpp"
#include "pvp/corpus.hpp"
#include "pvp/io.hpp"
#include "pvp/log.hpp"
#include "pvp/losses.hpp"
#include "pvp/model.hpp"
#include "pvp/pipeline.hpp"
#include "pvp/random.hpp"

using namespace pvp;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
    std::printf("%s  %s  (%s)\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

void run_criterion(const std::string& name, const std::function<bool(std::string&)>& body) {
    std::string detail;
    bool ok = false;
    try {
        ok = body(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    report(name, ok, detail);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

SynonymDictionary dictionary() { return SynonymDictionary::load(std::filesystem::path(PVP_DATA_DIR) / "classes8.txt"); }

// ---- oracles -------------------------------------------------------------

double ranking_oracle(const Tensor& s, const std::vector<std::vector<int>>& hot, double m) {
    double total = 0.0;
    for (std::size_t k = 0; k < s.rows(); ++k)
        for (std::size_t i = 0; i < s.cols(); ++i)
            for (std::size_t j = 0; j < s.cols(); ++j)
                if (hot[k][i] && !hot[k][j]) total += std::max(0.0, m - s.at(k, i) + s.at(k, j));
    return total / static_cast<double>(s.rows());
}

bool separated(const Tensor& s, const std::vector<std::vector<int>>& hot, double m) {
    for (std::size_t k = 0; k < s.rows(); ++k)
        for (std::size_t i = 0; i < s.cols(); ++i)
            for (std::size_t j = 0; j < s.cols(); ++j)
                if (hot[k][i] && !hot[k][j] && s.at(k, i) - s.at(k, j) < m) return false;
    return true;
}

// Brute-force AP: for each positive, precision over the items ranked at or above it.
double ap_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    const std::size_t n = s.size();
    auto above = [&](std::size_t k, std::size_t i) { return s[k] > s[i] || (s[k] == s[i] && k < i); };
    double sum = 0.0;
    int pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!y[i]) continue;
        ++pos;
        int rank = 0, hits = 0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == i || above(k, i)) {
                ++rank;
                hits += y[k];
            }
        }
        sum += static_cast<double>(hits) / rank;
    }
    return sum / pos;
}

struct Recorder final : LlmClient {
    explicit Recorder(const LlmClient& inner) : inner(inner) {}
    std::string complete(const LlmRequest& r) const override {
        auto reply = inner.complete(r);
        if (r.prompt.starts_with(judge_prefix)) {
            std::lock_guard lock(mu);
            (is_rational(reply) ? likely : unlikely).push_back(r.prompt);
        }
        return reply;
    }
    const LlmClient& inner;
    const std::string judge_prefix = build_judge_prompt("").substr(0, build_judge_prompt("").find('"'));
    mutable std::mutex mu;
    mutable std::vector<std::string> likely, unlikely;
};

struct Shared {
    SynonymDictionary dict = dictionary();
    std::map<std::uint64_t, BenchmarkSpec> specs;
    const BenchmarkSpec& spec(std::uint64_t seed) {
        auto it = specs.find(seed);
        if (it == specs.end()) it = specs.emplace(seed, benchmark_spec(dict, 400, 160, seed)).first;
        return it->second;
    }
};

// The encoders play the part of a fixed pretrained model, so only the
// training seed moves.
StageConfig seeded(std::uint64_t seed) {
    StageConfig c;
    c.seed = seed;
    return c;
}

}  // namespace

int main() {
    log::set_sink([](log::Level, std::string_view) {});
    Shared shared;

    run_criterion("gradient suite", [](std::string& d) {
        const auto t0 = Clock::now();
        double worst = 0.0;
        std::size_t checked = 0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto r = stage2_gradient_check(seed, 1e-5);
            worst = std::max(worst, r.max_relative_error);
            checked += r.checked;
        }
        const double t = seconds_since(t0);
        d = fmt("max rel err %.2e over %.0f coords, %.2f s", worst, static_cast<double>(checked), t);
        return worst <= 1e-4 && t < 10.0;
    });

    run_criterion("loss properties", [](std::string& d) {
        const double m = 0.25;
        int bad_nonneg = 0, bad_zero = 0, bad_shift = 0, bad_oracle = 0, zeros = 0, bad_sym = 0, bad_adapter = 0;
        for (std::uint64_t seed = 0; seed < 1000; ++seed) {
            CounterRng rng(seed, "acceptance.loss");
            const std::size_t b = 1 + rng.uniform_index(6), n = 2 + rng.uniform_index(6);
            Tensor s(Shape{b, n});
            std::vector<std::vector<int>> hot(b, std::vector<int>(n, 0));
            std::vector<LabelSets> labels;
            const bool make_separated = seed % 4 == 0;
            for (std::size_t k = 0; k < b; ++k) {
                std::vector<std::size_t> pos;
                const std::size_t count = 1 + rng.uniform_index(n - 1);
                while (pos.size() < count) {
                    const auto c = rng.uniform_index(n);
                    if (!hot[k][c]) {
                        hot[k][c] = 1;
                        pos.push_back(c);
                    }
                }
                std::sort(pos.begin(), pos.end());
                labels.push_back(LabelSets::from_positive(pos, n));
                for (std::size_t c = 0; c < n; ++c) {
                    const double u = 2.0 * rng.uniform() - 1.0;
                    s.at(k, c) = make_separated ? (hot[k][c] ? 1.0 + 0.1 * u : 0.5 + 0.1 * u) : u;
                }
            }
            const double l = ranking_loss(s, labels, m);
            if (l < 0.0) ++bad_nonneg;
            if (std::abs(l - ranking_oracle(s, hot, m)) > 1e-12) ++bad_oracle;
            if ((l == 0.0) != separated(s, hot, m)) ++bad_zero;
            zeros += l == 0.0;
            Tensor shifted = s;
            for (std::size_t k = 0; k < b; ++k) {
                const double c = 4.0 * rng.uniform() - 2.0;
                for (std::size_t j = 0; j < n; ++j) shifted.at(k, j) += c;
            }
            if (std::abs(ranking_loss(shifted, labels, m) - l) > 1e-12) ++bad_shift;

            const std::size_t nv = 2 + rng.uniform_index(6), dim = 8;
            Tensor u(Shape{nv, dim}), e(Shape{nv, dim});
            for (auto& v : u.data()) v = rng.normal();
            for (auto& v : e.data()) v = rng.normal();
            const double tau = seed % 2 ? 1.0 : 0.07;
            if (std::abs(contrastive_vtc(u, e, tau) - contrastive_vtc(e, u, tau)) > 1e-12) ++bad_sym;

            auto adapter = init_dual_adapter(dim, 0, 1.0, seed);
            adapter.normalize = false;
            for (auto side : {AdapterSide::image, AdapterSide::text}) {
                const auto out = adapter_apply(u, side, adapter);
                for (std::size_t i = 0; i < u.size(); ++i)
                    if (std::abs(out[i] - u[i]) > 1e-9) {
                        ++bad_adapter;
                        break;
                    }
            }
        }
        const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
        const double closed = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
        const double v = contrastive_vtc(eye, eye, 1.0);
        const bool ident = std::abs(v - 0.31326) <= 1e-5 && std::abs(v - closed) <= 1e-6;
        std::ostringstream os;
        os << "neg=" << bad_nonneg << " oracle=" << bad_oracle << " zero-iff=" << bad_zero << " (zeros " << zeros
           << ") shift=" << bad_shift << " sym=" << bad_sym << " adapter=" << bad_adapter << " N=2 value="
           << fmt("%.8f", v);
        d = os.str();
        return bad_nonneg + bad_oracle + bad_zero + bad_shift + bad_sym + bad_adapter == 0 && zeros > 0 && ident;
    });

    run_criterion("mAP oracle", [](std::string& d) {
        double worst = 0.0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            CounterRng rng(seed, "acceptance.map");
            const std::size_t items = 2 + rng.uniform_index(19), classes = 1 + rng.uniform_index(8);
            Tensor s(Shape{items, classes});
            std::vector<std::vector<int>> y(items, std::vector<int>(classes, 0));
            for (std::size_t i = 0; i < items; ++i)
                for (std::size_t c = 0; c < classes; ++c) {
                    // Coarse values so ties occur.
                    s.at(i, c) = std::round(rng.uniform() * 5.0) / 5.0;
                    y[i][c] = rng.uniform() < 0.4;
                }
            for (std::size_t c = 0; c < classes; ++c) y[rng.uniform_index(items)][c] = 1;
            const auto r = evaluate_map(s, y);
            double mean = 0.0;
            for (std::size_t c = 0; c < classes; ++c) {
                std::vector<double> col(items);
                std::vector<int> lab(items);
                for (std::size_t i = 0; i < items; ++i) {
                    col[i] = s.at(i, c);
                    lab[i] = y[i][c];
                }
                const double ap = ap_oracle(col, lab);
                worst = std::max(worst, std::abs(ap - r.ap[c]));
                mean += ap;
            }
            worst = std::max(worst, std::abs(mean / classes - r.map));
        }
        d = fmt("max |diff| %.3e over 100 instances", worst);
        return worst <= 1e-12;
    });

    run_criterion("end-to-end synthetic benchmark", [&](std::string& d) {
        const auto t0 = Clock::now();
        const auto& spec = shared.spec(0);
        const auto r = run_benchmark(spec, seeded(0));
        const double t = seconds_since(t0);
        const double best = std::max(r.visual.map, r.text.map);
        d = fmt("fused %.4f visual %.4f text %.4f, %.1f s", r.fused.map, r.visual.map, r.text.map, t);
        return spec.corpus.size() == 400 && r.fused.map >= 0.95 && r.fused.map >= best - 0.02 && t < 120.0;
    });

    run_criterion("two-stage ordering", [&](std::string& d) {
        bool ok = true;
        std::ostringstream os;
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            auto none = seeded(seed);
            none.stage1.epochs = 0;
            auto full = seeded(seed);
            full.stage1.epochs = 40;
            const auto& spec = shared.spec(seed);
            const double a = run_benchmark(spec, none).fused.map;
            const double b = run_benchmark(spec, full).fused.map;
            ok = ok && a <= b;
            os << "seed " << seed << ": " << fmt("%.4f <= %.4f", a, b) << (seed < 2 ? "; " : "");
        }
        d = os.str();
        return ok;
    });

    run_criterion("corpus pipeline", [&](std::string& d) {
        const auto& dict = shared.dict;
        auto cfg = mock_config_for(dict, 5);
        cfg.unlikely_rate = 0.1;
        cfg.synonym_free_rate = 0.2;
        const MockLlm mock(cfg);
        CorpusConfig cc;
        cc.seed = 5;
        cc.threads = 4;
        Recorder rec(mock);
        const auto a = generate_corpus(400, rec, dict, cc);
        cc.threads = 1;
        const auto b = generate_corpus(400, mock, dict, cc);

        bool nonempty = a.texts.size() == 400;
        for (const auto& t : a.texts) nonempty = nonempty && !t.labels.positive.empty();

        std::set<std::string> likely(rec.likely.begin(), rec.likely.end());
        bool discarded = rec.unlikely.size() == a.stats.unlikely && a.stats.unlikely > 0;
        for (const auto& t : a.texts) discarded = discarded && likely.count(build_judge_prompt(t.raw)) == 1;

        const auto dir = std::filesystem::temp_directory_path() / "pvp_acceptance_corpus";
        std::filesystem::create_directories(dir);
        write_corpus(a.texts, dir / "a.jsonl");
        write_corpus(b.texts, dir / "b.jsonl");
        const bool repro = io::read_file(dir / "a.jsonl") == io::read_file(dir / "b.jsonl");

        const auto small = SynonymDictionary::parse("bench\nperson\ncar\n");
        const auto f = noun_filter("A bench in a post office with a person sitting on it", small);
        const bool example = f && f->labels.positive == std::vector<std::size_t>{0, 1} &&
                             f->labels.negative == std::vector<std::size_t>{2};

        std::ostringstream os;
        os << a.texts.size() << " kept of " << a.stats.queried << ", " << a.stats.unlikely << " unlikely, "
           << a.stats.unmatched << " unmatched; non-empty c+ " << nonempty << ", unlikely discarded " << discarded
           << ", reproducible " << repro << ", example " << example;
        d = os.str();
        return nonempty && discarded && repro && example;
    });

    run_criterion("determinism", [&](std::string& d) {
        auto run_once = [&](const std::filesystem::path& dir) {
            std::filesystem::create_directories(dir);
            const auto spec = benchmark_spec(shared.dict, 400, 160, 7, 2);
            const auto r = run_benchmark(spec, seeded(7));
            io::write_file(dir / "stage1.bin", encode_checkpoint(r.stage1.checkpoint));
            io::write_file(dir / "stage2.bin", encode_checkpoint(r.stage2.checkpoint));
            write_matrix_csv(r.scores.fused, dir / "scores.csv");
            auto base = seeded(7);
            base.stage1.epochs = 5;
            base.stage2.epochs = 3;
            const std::vector<SweepAxis> axes{parse_sweep_axis("infer.alpha=0.2,0.8"),
                                              parse_sweep_axis("loss.margin=0.1,0.3")};
            write_sweep_csv(run_sweep(axes, base, spec, 3), dir / "sweep.csv");
        };
        const auto root = std::filesystem::temp_directory_path() / "pvp_acceptance_det";
        std::filesystem::remove_all(root);
        run_once(root / "a");
        run_once(root / "b");
        std::ostringstream os;
        bool ok = true;
        for (const char* f : {"stage1.bin", "stage2.bin", "scores.csv", "sweep.csv"}) {
            const bool same = io::read_file(root / "a" / f) == io::read_file(root / "b" / f);
            ok = ok && same;
            os << f << (same ? " identical" : " DIFFERS") << ' ';
        }
        d = os.str();
        return ok;
    });

    run_criterion("frozen encoders", [&](std::string& d) {
        const auto& spec = shared.spec(0);
        std::ostringstream os;
        bool ok = true;
        for (std::size_t batch : {1u, 4u, 32u}) {
            auto c = seeded(0);
            c.batch_size = batch;
            c.stage1.epochs = 2;
            c.stage2.epochs = 2;
            const FrozenEncoderPair enc(c.encoder, build_vocabulary(spec.dict));
            const auto before = enc.compute_digest();
            const auto s1 = train_stage1(spec.corpus, spec.dict.classes(), enc, c);
            bool square = true;
            std::size_t steps = 0;
            train_stage2(spec.corpus, enc, s1.checkpoint, c, [&](const StepInfo& info) {
                square = square && info.sim_rows == spec.dict.size() && info.sim_cols == spec.dict.size();
                ++steps;
            });
            const bool frozen = enc.compute_digest() == before;
            ok = ok && square && frozen && steps > 0;
            os << "B=" << batch << (frozen ? " digest same" : " digest CHANGED") << (square ? ", N×N" : ", not N×N")
               << "; ";
        }
        const auto r = run_benchmark(spec, seeded(0));
        ok = ok && r.digest_before == r.digest_after;
        os << "benchmark digest " << (r.digest_before == r.digest_after ? "same" : "CHANGED");
        d = os.str();
        return ok;
    });

    std::printf("%s: %d criterion(s) failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
