#include "pvp/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "pvp/error.hpp"
#include "pvp/io.hpp"
#include "pvp/llm.hpp"
#include "pvp/log.hpp"
#include "pvp/optim.hpp"
#include "pvp/random.hpp"

namespace pvp {
namespace {

std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

Tensor encode_corpus(std::span<const FilteredText> corpus, const FrozenEncoderPair& enc, std::size_t threads) {
    std::vector<std::vector<TokenId>> seqs;
    seqs.reserve(corpus.size());
    std::size_t unknown_total = 0;
    for (const auto& t : corpus) {
        std::size_t unknown = 0;
        seqs.push_back(enc.vocab().encode(t.raw, enc.config().max_text_length, &unknown));
        unknown_total += unknown;
    }
    if (unknown_total) log::warn(std::to_string(unknown_total) + " corpus tokens are outside the vocabulary");
    return enc.encode_texts(seqs, threads);
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> idx) {
    Tensor out(Shape{idx.size(), m.cols()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * m.cols()), m.cols(),
                    out.data().begin() + static_cast<std::ptrdiff_t>(i * m.cols()));
    }
    return out;
}

// V = ψ(P): one global image embedding per prompt, or unit rows in embedding space.
ad::Var visual_embeddings(ad::Tape& tape, const ad::Var& p, bool embedding_space, const FrozenEncoderPair& enc) {
    if (embedding_space) return ad::normalize_rows(p);
    std::vector<ad::Var> rows;
    const auto n = p.value().dim(0);
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) rows.push_back(enc.encode_image(tape, ad::select(p, i)).global);
    return ad::concat_rows(rows);
}

// I_i = φ([r_1..r_M; g_i]).
ad::Var prompt_embeddings(ad::Tape& tape, const ad::Var& context, const Tensor& names, const FrozenEncoderPair& enc) {
    std::vector<ad::Var> rows;
    rows.reserve(names.rows());
    for (std::size_t i = 0; i < names.rows(); ++i) {
        const std::vector<ad::Var> seq{context, tape.constant(names.row(i))};
        rows.push_back(enc.encode_text_embeddings(tape, ad::concat_rows(seq)));
    }
    return ad::concat_rows(rows);
}

Tensor plain_visual(const PseudoVisualPrompt& pvp, const FrozenEncoderPair& enc) {
    ad::Tape tape;
    return visual_embeddings(tape, tape.constant(pvp.values), pvp.embedding_space, enc).value();
}

Tensor plain_prompts(const TextPromptSet& prompts, const FrozenEncoderPair& enc) {
    ad::Tape tape;
    return prompt_embeddings(tape, tape.constant(prompts.context), prompts.class_names, enc).value();
}

Tensor unit_rows(const Tensor& m) {
    Tensor out = m;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = out.data().subspan(r * m.cols(), m.cols());
        const double n = l2_norm(row);
        if (n > 0.0) {
            for (auto& x : row) x /= n;
        }
    }
    return out;
}

Tensor cosine_scores(const Tensor& queries, const Tensor& classes) {
    const Tensor q = unit_rows(queries);
    const Tensor c = unit_rows(classes);
    Tensor out(Shape{q.rows(), c.rows()});
    for (std::size_t i = 0; i < q.rows(); ++i) {
        for (std::size_t j = 0; j < c.rows(); ++j) {
            out.at(i, j) = dot(q.data().subspan(i * q.cols(), q.cols()), c.data().subspan(j * c.cols(), c.cols()));
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t count, std::size_t batch, std::uint64_t seed,
                                              std::string_view stream, std::size_t epoch) {
    CounterRng rng(seed, substream(fnv1a64(stream), epoch));
    const auto order = shuffled_indices(count, rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < count; s += batch) {
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, s + batch)));
    }
    return out;
}

void require_corpus(std::span<const FilteredText> corpus, std::size_t classes) {
    if (corpus.empty()) throw InputError("training corpus is empty");
    for (const auto& t : corpus) check_labels(std::span(&t.labels, 1), classes);
}

Checkpoint base_checkpoint(int stage, const StageConfig& config, std::span<const std::string> names,
                           const FrozenEncoderPair& enc) {
    Checkpoint c;
    c.stage = stage;
    c.seed = config.seed;
    c.class_names.assign(names.begin(), names.end());
    c.encoder = enc.config();
    c.encoder_digest = enc.digest();
    c.hyperparameters = config_to_json(config);
    return c;
}

std::vector<Tensor*> adapter_tensors(AdapterWeights& w) { return {&w.w1, &w.b1, &w.w2, &w.b2}; }

}  // namespace

TrainResult train_stage1(std::span<const FilteredText> corpus, std::span<const std::string> class_names,
                         const FrozenEncoderPair& encoders, const StageConfig& config, const StepObserver& observe) {
    config.validate();
    const auto n = class_names.size();
    if (n < 2) throw ParameterError("at least two classes are required");
    require_corpus(corpus, n);
    if (config.encoder.embed_dim != encoders.dim()) throw ContractError("config and encoder dimensions differ");

    TrainResult result;
    result.checkpoint = base_checkpoint(1, config, class_names, encoders);
    auto& pvp = result.checkpoint.pvp;
    const auto extent = config.stage1.prompt_extent ? config.stage1.prompt_extent : encoders.config().image_size;
    pvp = config.stage1.embedding_space
              ? init_pvp_embedding(n, encoders.dim(), config.seed)
              : init_pvp(n, extent, extent, config.seed, encoders.config().patch_size);

    const Tensor h = encode_corpus(corpus, encoders, config.threads);
    const Schedule schedule(config.stage1.lr, std::max<std::size_t>(1, config.stage1.epochs));
    for (std::size_t epoch = 0; epoch < config.stage1.epochs && !result.diverged; ++epoch) {
        const double lr = schedule.lr(static_cast<double>(epoch));
        double epoch_sum = 0.0;
        std::size_t steps = 0;
        for (const auto& idx : batches(corpus.size(), config.batch_size, config.seed, "stage1.shuffle", epoch)) {
            std::vector<LabelSets> labels;
            for (auto i : idx) labels.push_back(corpus[i].labels);
            ad::Tape tape;
            const auto p = tape.parameter(pvp.values);
            const auto v = visual_embeddings(tape, p, pvp.embedding_space, encoders);
            const auto s = ad::matmul_nt(tape.constant(gather_rows(h, idx)), v);
            const auto loss = ranking_loss(s, labels, config.loss.margin);
            const double value = loss.value().item();
            if (!std::isfinite(value)) {
                result.diverged = true;
                result.message = "non-finite stage-1 loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(steps);
                break;
            }
            tape.backward(loss);
            Tensor next = pvp.values;
            sgd_step(next, tape.grad(p), lr);
            if (!next.all_finite()) {
                result.diverged = true;
                result.message = "non-finite prompt update at epoch " + std::to_string(epoch);
                break;
            }
            pvp.values = std::move(next);
            LossReport report{0.0, value, 0.0, value};
            result.log.push_back({epoch, steps, report, lr});
            if (observe) observe({epoch, steps, idx.size(), s.value().rows(), s.value().cols(), report, lr});
            epoch_sum += value;
            ++steps;
        }
        if (steps) result.epoch_loss.push_back(epoch_sum / static_cast<double>(steps));
    }
    if (result.diverged) log::warn(result.message + "; keeping the last finite state");
    return result;
}

TrainResult train_stage2(std::span<const FilteredText> corpus, const FrozenEncoderPair& encoders, const Checkpoint& init,
                         const StageConfig& config, const StepObserver& observe) {
    config.validate();
    require_compatible(init, encoders);
    const auto& names = init.class_names;
    const auto n = names.size();
    require_corpus(corpus, n);

    TrainResult result;
    result.checkpoint = base_checkpoint(2, config, names, encoders);
    if (init.hyperparameters.contains("stage1.epochs")) {
        result.checkpoint.hyperparameters["stage1.epochs"] = init.hyperparameters["stage1.epochs"];
    }
    auto& ckpt = result.checkpoint;
    ckpt.pvp = init.pvp;
    if (init.stage == 2 && init.prompts && init.adapter) {
        ckpt.prompts = init.prompts;
        ckpt.adapter = init.adapter;
        ckpt.adapter->lambda = config.stage2.lambda;
        ckpt.adapter->normalize = config.stage2.normalize;
    } else {
        ckpt.prompts = init_text_prompts(config.stage2.context_length, names, encoders, config.seed);
        ckpt.adapter = init_dual_adapter(encoders.dim(), config.stage2.adapter_hidden, config.stage2.lambda, config.seed);
        ckpt.adapter->normalize = config.stage2.normalize;
    }
    auto& prompts = *ckpt.prompts;
    auto& adapter = *ckpt.adapter;

    const Tensor h = encode_corpus(corpus, encoders, config.threads);
    const Schedule text_schedule(config.stage2.lr_text, std::max<std::size_t>(1, config.stage2.epochs));
    const Schedule pvp_schedule(config.stage2.lr_pvp, std::max<std::size_t>(1, config.stage2.epochs));
    for (std::size_t epoch = 0; epoch < config.stage2.epochs && !result.diverged; ++epoch) {
        const double lr_text = text_schedule.lr(static_cast<double>(epoch));
        const double lr_pvp = pvp_schedule.lr(static_cast<double>(epoch));
        double epoch_sum = 0.0;
        std::size_t steps = 0;
        for (const auto& idx : batches(corpus.size(), config.batch_size, config.seed, "stage2.shuffle", epoch)) {
            std::vector<LabelSets> labels;
            for (auto i : idx) labels.push_back(corpus[i].labels);
            ad::Tape tape;
            const auto p = tape.parameter(ckpt.pvp.values);
            const auto ctx = tape.parameter(prompts.context);
            const auto img = adapter_parameters(tape, adapter.image);
            const auto txt = adapter_parameters(tape, adapter.text);
            const auto v = visual_embeddings(tape, p, ckpt.pvp.embedding_space, encoders);
            const auto u = adapter_apply(v, img, adapter.lambda, adapter.normalize);
            const auto e = adapter_apply(prompt_embeddings(tape, ctx, prompts.class_names, encoders), txt,
                                         adapter.lambda, adapter.normalize);
            const auto g = adapter_apply(tape.constant(gather_rows(h, idx)), txt, adapter.lambda, adapter.normalize);
            const auto obj = stage2_objective(u, e, g, labels, config.loss);
            const double value = obj.total.value().item();
            if (!std::isfinite(value)) {
                result.diverged = true;
                result.message = "non-finite stage-2 loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(steps);
                break;
            }
            tape.backward(obj.total);

            Tensor next_pvp = ckpt.pvp.values;
            Tensor next_ctx = prompts.context;
            DualAdapter next_adapter = adapter;
            sgd_step(next_pvp, tape.grad(p), lr_pvp);
            sgd_step(next_ctx, tape.grad(ctx), lr_text);
            const AdapterVars* vars[] = {&img, &txt};
            AdapterWeights* sides[] = {&next_adapter.image, &next_adapter.text};
            bool finite = next_pvp.all_finite() && next_ctx.all_finite();
            for (int k = 0; k < 2; ++k) {
                const auto targets = adapter_tensors(*sides[k]);
                const ad::Var handles[] = {vars[k]->w1, vars[k]->b1, vars[k]->w2, vars[k]->b2};
                for (std::size_t j = 0; j < targets.size(); ++j) {
                    sgd_step(*targets[j], tape.grad(handles[j]), lr_text);
                    finite = finite && targets[j]->all_finite();
                }
            }
            if (!finite) {
                result.diverged = true;
                result.message = "non-finite stage-2 update at epoch " + std::to_string(epoch);
                break;
            }
            ckpt.pvp.values = std::move(next_pvp);
            prompts.context = std::move(next_ctx);
            adapter = std::move(next_adapter);

            result.log.push_back({epoch, steps, obj.report, lr_text});
            if (observe) observe({epoch, steps, idx.size(), n, n, obj.report, lr_text});
            epoch_sum += value;
            ++steps;
        }
        if (steps) result.epoch_loss.push_back(epoch_sum / static_cast<double>(steps));
    }
    if (result.diverged) log::warn(result.message + "; keeping the last finite state");
    return result;
}

void write_loss_log(std::span<const LossLogRow> rows, const std::filesystem::path& path) {
    std::string out = "epoch,step,l_vtc,l_visual,l_text,total,lr\n";
    for (const auto& r : rows) {
        out += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + fmt(r.report.l_vtc) + "," +
               fmt(r.report.l_visual) + "," + fmt(r.report.l_text) + "," + fmt(r.report.total) + "," + fmt(r.lr) + "\n";
    }
    io::write_file(path, out);
}

ClassEmbeddings class_embeddings(const Checkpoint& ckpt, const FrozenEncoderPair& encoders) {
    require_compatible(ckpt, encoders);
    ClassEmbeddings out;
    out.visual = plain_visual(ckpt.pvp, encoders);
    if (ckpt.stage == 2) {
        if (!ckpt.prompts || !ckpt.adapter) throw FormatError("stage-2 checkpoint lacks prompts or adapter", 0);
        out.visual = adapter_apply(out.visual, AdapterSide::image, *ckpt.adapter);
        out.text = adapter_apply(plain_prompts(*ckpt.prompts, encoders), AdapterSide::text, *ckpt.adapter);
    }
    return out;
}

BranchScores score_embeddings(const Tensor& image_embeddings, const Checkpoint& ckpt, const FrozenEncoderPair& encoders,
                              const StageConfig::Infer& options) {
    if (!(options.alpha >= 0.0 && options.alpha <= 1.0)) throw ParameterError("alpha must lie in [0, 1]");
    if (image_embeddings.rank() != 2 || image_embeddings.cols() != encoders.dim()) {
        throw ShapeError("image embeddings must be rows×" + std::to_string(encoders.dim()));
    }
    const auto cls = class_embeddings(ckpt, encoders);
    Tensor queries = image_embeddings;
    if (ckpt.stage == 2 && options.adapt_queries) queries = adapter_apply(queries, AdapterSide::image, *ckpt.adapter);

    BranchScores out;
    out.visual = cosine_scores(queries, cls.visual);
    if (!cls.text) {
        out.text = out.visual;
        out.fused = out.visual;
        return out;
    }
    out.text = cosine_scores(queries, *cls.text);
    out.fused = Tensor(out.visual.shape());
    for (std::size_t i = 0; i < out.fused.size(); ++i) {
        out.fused[i] = options.alpha * out.visual[i] + (1.0 - options.alpha) * out.text[i];
    }
    return out;
}

BranchScores infer_branches(std::span<const Tensor> images, const Checkpoint& ckpt, const FrozenEncoderPair& encoders,
                            const StageConfig::Infer& options, std::size_t threads) {
    if (images.empty()) throw InputError("no images to score");
    return score_embeddings(encoders.encode_images(images, threads), ckpt, encoders, options);
}

Tensor infer(std::span<const Tensor> images, const Checkpoint& ckpt, const FrozenEncoderPair& encoders,
             const StageConfig::Infer& options, std::size_t threads) {
    return infer_branches(images, ckpt, encoders, options, threads).fused;
}

MapResult evaluate_map(const Tensor& scores, const std::vector<std::vector<int>>& labels, MissingPositives policy) {
    if (scores.rank() != 2) throw ShapeError("scores must be a matrix");
    const auto rows = scores.rows();
    const auto cols = scores.cols();
    if (labels.size() != rows) throw ShapeError("labels have " + std::to_string(labels.size()) + " rows, scores " +
                                                std::to_string(rows));
    for (const auto& l : labels) {
        if (l.size() != cols) throw ShapeError("label row width differs from score width");
        for (int v : l) {
            if (v != 0 && v != 1) throw InputError("labels must be 0 or 1");
        }
    }
    if (!scores.all_finite()) throw InputError("scores contain non-finite values");

    MapResult out;
    out.ap.assign(cols, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    std::vector<std::size_t> order(rows);
    for (std::size_t j = 0; j < cols; ++j) {
        std::size_t positives = 0;
        for (std::size_t i = 0; i < rows; ++i) positives += labels[i][j];
        if (positives == 0) {
            if (policy == MissingPositives::error) throw InputError("class " + std::to_string(j) + " has no positives");
            log::warn("class " + std::to_string(j) + " has no positives; excluded from mAP");
            continue;
        }
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores.at(a, j) > scores.at(b, j); });
        double ap = 0.0;
        std::size_t hits = 0;
        for (std::size_t k = 0; k < rows; ++k) {
            if (labels[order[k]][j]) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(k + 1);
            }
        }
        out.ap[j] = ap / static_cast<double>(positives);
        sum += out.ap[j];
        ++out.classes_evaluated;
    }
    if (out.classes_evaluated == 0) throw InputError("no class has a positive example");
    out.map = sum / static_cast<double>(out.classes_evaluated);
    return out;
}

Tensor ensemble_scores(const Tensor& a, const Tensor& b, double w) {
    if (a.shape() != b.shape()) throw ShapeError("ensemble inputs differ in shape: " + shape_string(a.shape()) + " vs " +
                                                 shape_string(b.shape()));
    if (!(w >= 0.0 && w <= 1.0)) throw ParameterError("ensemble weight must lie in [0, 1]");
    auto minmax = [](const Tensor& t) {
        Tensor out = t;
        if (t.size() == 0) return out;
        const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
        const double range = *hi - *lo;
        for (auto& x : out.data()) x = range > 0.0 ? (x - *lo) / range : 0.0;
        return out;
    };
    const Tensor an = minmax(a);
    const Tensor bn = minmax(b);
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = w * an[i] + (1.0 - w) * bn[i];
    return out;
}

CorrelationMap correlation_map(const Tensor& image, std::size_t class_index, const Checkpoint& ckpt,
                               const FrozenEncoderPair& encoders, double alpha) {
    if (class_index >= ckpt.class_names.size()) {
        throw ParameterError("class index " + std::to_string(class_index) + " out of range");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in [0, 1]");
    const auto cls = class_embeddings(ckpt, encoders);
    const auto d = encoders.dim();
    Tensor target(Shape{1, d});
    const double a = cls.text ? alpha : 1.0;
    for (std::size_t k = 0; k < d; ++k) {
        target[k] = a * cls.visual.at(class_index, k) + (cls.text ? (1.0 - a) * cls.text->at(class_index, k) : 0.0);
    }
    const auto enc = encoders.encode_image(image);
    const auto side = image.dim(0) / encoders.config().patch_size;
    CorrelationMap out;
    out.class_index = class_index;
    out.grid = cosine_scores(enc.patches, target).reshaped(Shape{side, side});
    return out;
}

void write_pgm(const CorrelationMap& map, const std::filesystem::path& path, std::size_t scale) {
    if (scale == 0) throw ParameterError("scale must be positive");
    const auto h = map.grid.rows();
    const auto w = map.grid.cols();
    std::string out = "P5\n" + std::to_string(w * scale) + " " + std::to_string(h * scale) + "\n255\n";
    for (std::size_t y = 0; y < h * scale; ++y) {
        for (std::size_t x = 0; x < w * scale; ++x) {
            const double v = std::clamp(map.grid.at(y / scale, x / scale), -1.0, 1.0);
            out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0) * 127.5))));
        }
    }
    io::write_file(path, out);
}

void write_grid_csv(const CorrelationMap& map, const std::filesystem::path& path) {
    write_matrix_csv(map.grid, path);
}

void write_matrix_csv(const Tensor& m, const std::filesystem::path& path, std::span<const std::string> header) {
    if (m.rank() != 2) throw ShapeError("expected a matrix");
    std::string out;
    if (!header.empty()) {
        if (header.size() != m.cols()) throw ShapeError("header width differs from matrix width");
        for (std::size_t j = 0; j < header.size(); ++j) out += (j ? "," : "") + header[j];
        out += "\n";
    }
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) out += (j ? "," : "") + fmt(m.at(i, j));
        out += "\n";
    }
    io::write_file(path, out);
}

namespace {

std::optional<std::vector<double>> parse_csv_row(std::string_view line) {
    std::vector<double> out;
    std::size_t start = 0;
    while (true) {
        auto end = line.find(',', start);
        if (end == std::string_view::npos) end = line.size();
        auto cell = line.substr(start, end - start);
        while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
        while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
        double v = 0.0;
        const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (cell.empty() || r.ec != std::errc{} || r.ptr != cell.data() + cell.size()) return std::nullopt;
        out.push_back(v);
        if (end == line.size()) break;
        start = end + 1;
    }
    return out;
}

}  // namespace

Tensor read_matrix_csv(const std::filesystem::path& path) {
    const auto lines = io::read_lines(path);
    std::vector<double> data;
    std::size_t cols = 0;
    std::size_t rows = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty() || lines[i] == "\r") continue;
        auto row = parse_csv_row(lines[i]);
        if (!row) {
            if (rows == 0 && i == 0) continue;  // header
            throw InputError(path.string() + ":" + std::to_string(i + 1) + ": not a numeric row");
        }
        if (rows == 0) cols = row->size();
        if (row->size() != cols) throw InputError(path.string() + ":" + std::to_string(i + 1) + ": ragged row");
        data.insert(data.end(), row->begin(), row->end());
        ++rows;
    }
    if (rows == 0) throw InputError(path.string() + ": no numeric rows");
    return Tensor::matrix(rows, cols, std::move(data));
}

std::vector<std::vector<int>> read_labels_csv(const std::filesystem::path& path) {
    const Tensor m = read_matrix_csv(path);
    std::vector<std::vector<int>> out(m.rows(), std::vector<int>(m.cols()));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            const double v = m.at(i, j);
            if (v != 0.0 && v != 1.0) throw InputError(path.string() + ": labels must be 0 or 1");
            out[i][j] = static_cast<int>(v);
        }
    }
    return out;
}

void write_labels_csv(const std::vector<std::vector<int>>& labels, const std::filesystem::path& path,
                      std::span<const std::string> header) {
    const std::size_t cols = labels.empty() ? header.size() : labels.front().size();
    Tensor m(Shape{labels.size(), cols});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].size() != cols) throw ShapeError("ragged label rows");
        for (std::size_t j = 0; j < cols; ++j) m.at(i, j) = labels[i][j];
    }
    write_matrix_csv(m, path, header);
}

BenchmarkSpec benchmark_spec(const SynonymDictionary& dict, std::size_t corpus_count, std::size_t test_count,
                             std::uint64_t seed, std::size_t threads) {
    auto mc = mock_config_for(dict, seed);
    mc.unlikely_rate = 0.1;
    mc.synonym_free_rate = 0.2;
    const MockLlm llm(mc);
    CorpusConfig cc;
    cc.seed = seed;
    cc.threads = threads;
    auto corpus = generate_corpus(corpus_count, llm, dict, cc);
    if (corpus.stats.exhausted) throw InputError("mock corpus generation ran out of attempts");
    BenchmarkSpec spec{dict, std::move(corpus.texts), {}};
    spec.test.count = test_count;
    spec.test.seed = seed;
    return spec;
}

BenchmarkResult run_benchmark(const BenchmarkSpec& spec, const StageConfig& config) {
    config.validate();
    const FrozenEncoderPair encoders(config.encoder, build_vocabulary(spec.dict));
    const auto& names = spec.dict.classes();

    BenchmarkResult out;
    out.digest_before = encoders.compute_digest();
    out.stage1 = train_stage1(spec.corpus, names, encoders, config);
    out.stage2 = train_stage2(spec.corpus, encoders, out.stage1.checkpoint, config);

    const auto test = synth_dataset(names, encoders, spec.test);
    out.labels = test.multi_hot(names.size());
    out.scores = infer_branches(test.images, out.stage2.checkpoint, encoders, config.infer, config.threads);
    out.fused = evaluate_map(out.scores.fused, out.labels);
    out.visual = evaluate_map(out.scores.visual, out.labels);
    out.text = evaluate_map(out.scores.text, out.labels);
    out.digest_after = encoders.compute_digest();
    if (out.digest_after != out.digest_before) throw ContractError("frozen encoder weights changed during training");
    return out;
}

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto end = s.find(sep, start);
        out.emplace_back(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
        if (end == std::string_view::npos) break;
        start = end + 1;
    }
    return out;
}

}  // namespace

SweepAxis parse_sweep_axis(std::string_view spec) {
    const auto eq = spec.find('=');
    if (eq == std::string_view::npos || eq == 0 || eq + 1 == spec.size()) {
        throw ParameterError("sweep axis must look like key=v1,v2 or k1:k2=a:b,c:d; got '" + std::string(spec) + "'");
    }
    SweepAxis axis;
    axis.keys = split(spec.substr(0, eq), ':');
    StageConfig probe;
    for (const auto& k : axis.keys) setting_value(probe, k);  // rejects unknown keys
    for (const auto& point : split(spec.substr(eq + 1), ',')) {
        auto values = split(point, ':');
        if (values.size() != axis.keys.size()) {
            throw ParameterError("sweep point '" + point + "' needs " + std::to_string(axis.keys.size()) + " values");
        }
        for (std::size_t i = 0; i < values.size(); ++i) apply_setting(probe, axis.keys[i], values[i]);
        axis.points.push_back(std::move(values));
    }
    return axis;
}

std::vector<SweepRow> run_sweep(std::span<const SweepAxis> axes, const StageConfig& base, const BenchmarkSpec& spec,
                                std::size_t jobs) {
    std::size_t total = 1;
    for (const auto& a : axes) {
        if (a.points.empty()) throw ParameterError("sweep axis has no points");
        total *= a.points.size();
    }
    std::vector<SweepRow> rows(total);
    for (std::size_t idx = 0; idx < total; ++idx) {
        rows[idx].config = base;
        std::size_t rest = idx;
        std::size_t stride = total;
        for (const auto& a : axes) {
            stride /= a.points.size();
            const auto& point = a.points[rest / stride];
            rest %= stride;
            for (std::size_t k = 0; k < a.keys.size(); ++k) apply_setting(rows[idx].config, a.keys[k], point[k]);
        }
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < total; i = next++) {
            auto& row = rows[i];
            try {
                const auto r = run_benchmark(spec, row.config);
                row.map_fused = r.fused.map;
                row.map_visual = r.visual.map;
                row.map_text = r.text.map;
            } catch (const std::exception& e) {
                row.error = e.what();
                row.map_fused = row.map_visual = row.map_text = std::numeric_limits<double>::quiet_NaN();
                log::warn("sweep point " + std::to_string(i) + " failed: " + row.error);
            }
        }
    };
    const auto n = std::max<std::size_t>(1, std::min(jobs, total));
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    return rows;
}

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
    std::string out;
    for (const auto& k : config_keys()) out += k + ",";
    out += "map_fused,map_visual,map_text,error\n";
    for (const auto& r : rows) {
        for (const auto& k : config_keys()) out += setting_value(r.config, k) + ",";
        std::string err = r.error;
        std::replace(err.begin(), err.end(), '"', '\'');
        out += fmt(r.map_fused) + "," + fmt(r.map_visual) + "," + fmt(r.map_text) + ",\"" + err + "\"\n";
    }
    io::write_file(path, out);
}

}  // namespace pvp

namespace pvp {

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
    if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("image must be H×W×3");
    std::string out = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
    for (double v : image.data()) {
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5))));
    }
    io::write_file(path, out);
}

Tensor read_ppm(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const auto start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return bytes.substr(start, pos - start);
    };
    auto number = [&](const char* what) {
        const auto t = token();
        std::size_t v = 0;
        const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
        if (t.empty() || r.ec != std::errc{} || r.ptr != t.data() + t.size()) {
            throw FormatError(path.string() + ": bad PPM " + what, pos);
        }
        return v;
    };
    if (token() != "P6") throw FormatError(path.string() + ": not a binary PPM (P6)", 0);
    const auto w = number("width");
    const auto h = number("height");
    if (number("maxval") != 255) throw FormatError(path.string() + ": only maxval 255 is supported", pos);
    ++pos;  // single whitespace before the raster
    const auto count = w * h * 3;
    if (w == 0 || h == 0 || bytes.size() != pos + count) {
        throw FormatError(path.string() + ": raster size does not match the header", pos);
    }
    Tensor out(Shape{h, w, 3});
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / 127.5 - 1.0;
    }
    return out;
}

GradCheckReport stage2_gradient_check(std::uint64_t seed, double eps) {
    const std::vector<std::string> names{"dog", "cat", "car"};
    const std::vector<std::string> words{"dog", "cat", "car", "a", "photo", "of"};
    EncoderConfig ec;
    ec.embed_dim = 8;
    ec.patch_size = 4;
    ec.image_size = 8;
    ec.max_text_length = 16;
    ec.seed = seed;
    const FrozenEncoderPair enc(ec, Vocabulary(words));
    const std::size_t n = 3;
    const std::size_t d = 8;
    const std::size_t b = 4;

    // Larger than the training initialisation so that every term carries a
    // gradient well above finite-difference noise.
    auto draw = [&](Shape shape, double std, std::string_view name) {
        return gaussian_init(shape, 0.0, std, seed, fnv1a64(name));
    };
    const auto prompts = init_text_prompts(4, names, enc, seed);
    std::vector<Tensor> params{draw({n, 8, 8, 3}, 0.5, "gc.pvp"), draw({4, d}, 0.5, "gc.context")};
    for (const char* side : {"gc.image", "gc.text"}) {
        const std::string s(side);
        params.push_back(draw({d, 2}, 0.5, s + ".w1"));
        params.push_back(draw({2}, 0.5, s + ".b1"));
        params.push_back(draw({2, d}, 0.5, s + ".w2"));
        params.push_back(draw({d}, 0.5, s + ".b2"));
    }
    const Tensor h = unit_rows(draw({b, d}, 1.0, "gc.texts"));
    CounterRng rng(seed, "gc.labels");
    std::vector<LabelSets> labels;
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<std::size_t> pos{rng.uniform_index(n)};
        if (rng.uniform() < 0.5) pos.push_back(rng.uniform_index(n));
        auto l = LabelSets::from_positive(pos, n);
        if (l.negative.empty()) l = LabelSets::from_positive({0}, n);
        labels.push_back(l);
    }
    const LossConfig cfg;
    const double lambda = 0.5;

    const LossFn loss = [&](ad::Tape& tape, std::span<const ad::Var> v) {
        const AdapterVars img{v[2], v[3], v[4], v[5]};
        const AdapterVars txt{v[6], v[7], v[8], v[9]};
        const auto u = adapter_apply(visual_embeddings(tape, v[0], false, enc), img, lambda, true);
        const auto e = adapter_apply(prompt_embeddings(tape, v[1], prompts.class_names, enc), txt, lambda, true);
        const auto g = adapter_apply(tape.constant(h), txt, lambda, true);
        return stage2_objective(u, e, g, labels, cfg).total;
    };
    return finite_diff_report(loss, params, eps);
}

}  // namespace pvp
