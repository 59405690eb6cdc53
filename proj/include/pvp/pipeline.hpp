#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pvp/checkpoint.hpp"
#include "pvp/config.hpp"
#include "pvp/corpus.hpp"
#include "pvp/encoders.hpp"
#include "pvp/losses.hpp"
#include "pvp/optim.hpp"
#include "pvp/tensor.hpp"

namespace pvp {

struct LossLogRow {
    std::size_t epoch = 0;
    std::size_t step = 0;
    LossReport report;
    double lr = 0.0;
};

/// Per-step view handed to an optional observer.
struct StepInfo {
    std::size_t epoch = 0;
    std::size_t step = 0;
    std::size_t batch_rows = 0;
    std::size_t sim_rows = 0;  ///< rows of the similarity matrix the loss saw
    std::size_t sim_cols = 0;
    LossReport report;
    double lr = 0.0;
};
using StepObserver = std::function<void(const StepInfo&)>;

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossLogRow> log;
    std::vector<double> epoch_loss;  ///< mean total loss per epoch
    bool diverged = false;
    std::string message;
};

/// Stage 1: optimise the pseudo-visual prompts alone with the ranking loss on
/// S = H·Vᵀ. The learning rate follows the cosine schedule per epoch.
/// On a non-finite loss, training stops and the last good state is returned
/// with `diverged` set.
TrainResult train_stage1(std::span<const FilteredText> corpus, std::span<const std::string> class_names,
                         const FrozenEncoderPair& encoders, const StageConfig& config, const StepObserver& observe = {});

/// Stage 2: prompts, context vectors and the dual adapter are trained jointly,
/// starting from the pseudo-visual prompts of `init`. A stage-2 `init` also
/// resumes its context vectors and adapter.
TrainResult train_stage2(std::span<const FilteredText> corpus, const FrozenEncoderPair& encoders, const Checkpoint& init,
                         const StageConfig& config, const StepObserver& observe = {});

void write_loss_log(std::span<const LossLogRow> rows, const std::filesystem::path& path);

/// Adapted class embeddings u_j (and e_j for stage 2), N×D each.
struct ClassEmbeddings {
    Tensor visual;
    std::optional<Tensor> text;
};
ClassEmbeddings class_embeddings(const Checkpoint& ckpt, const FrozenEncoderPair& encoders);

struct BranchScores {
    Tensor fused;
    Tensor visual;
    Tensor text;  ///< equals `visual` for a stage-1 checkpoint
};

/// score_j = α·⟨f, u_j⟩ + (1−α)·⟨f, e_j⟩ with f the (adapted) global image
/// embedding. Stage-1 checkpoints score the visual branch alone (α = 1).
Tensor infer(std::span<const Tensor> images, const Checkpoint& ckpt, const FrozenEncoderPair& encoders,
             const StageConfig::Infer& options, std::size_t threads = 1);
BranchScores infer_branches(std::span<const Tensor> images, const Checkpoint& ckpt, const FrozenEncoderPair& encoders,
                            const StageConfig::Infer& options, std::size_t threads = 1);
/// Same as infer_branches for precomputed unit-norm image embeddings (rows×D).
BranchScores score_embeddings(const Tensor& image_embeddings, const Checkpoint& ckpt, const FrozenEncoderPair& encoders,
                              const StageConfig::Infer& options);

enum class MissingPositives { skip, error };

struct MapResult {
    double map = 0.0;
    std::vector<double> ap;  ///< NaN for classes without positives
    std::size_t classes_evaluated = 0;
};

/// Per class: rank items by descending score (ties by item index) and average
/// precision@k over the positive positions. mAP is the mean over classes with
/// at least one positive.
MapResult evaluate_map(const Tensor& scores, const std::vector<std::vector<int>>& labels,
                       MissingPositives policy = MissingPositives::skip);

/// w·A' + (1−w)·B' where A', B' are min-max normalised per matrix.
Tensor ensemble_scores(const Tensor& a, const Tensor& b, double w);

struct CorrelationMap {
    Tensor grid;  ///< (H/p)×(W/p) cosines
    std::size_t class_index = 0;
};

/// Per-patch cosine between the image's projected patch features and the
/// class's fused prompt embedding normalize(α·u_j + (1−α)·e_j).
CorrelationMap correlation_map(const Tensor& image, std::size_t class_index, const Checkpoint& ckpt,
                               const FrozenEncoderPair& encoders, double alpha = 0.5);
/// Binary P5 graymap, [-1, 1] → [0, 255], each cell drawn as a scale×scale block.
void write_pgm(const CorrelationMap& map, const std::filesystem::path& path, std::size_t scale = 1);
void write_grid_csv(const CorrelationMap& map, const std::filesystem::path& path);

/// Numeric CSV, optional header naming the columns.
void write_matrix_csv(const Tensor& m, const std::filesystem::path& path, std::span<const std::string> header = {});
/// Reads a numeric CSV, skipping a first line that does not parse as numbers.
Tensor read_matrix_csv(const std::filesystem::path& path);
std::vector<std::vector<int>> read_labels_csv(const std::filesystem::path& path);
void write_labels_csv(const std::vector<std::vector<int>>& labels, const std::filesystem::path& path,
                      std::span<const std::string> header = {});

/// Synthetic benchmark inputs. Encoders and test images are rebuilt from
/// each run's configuration, since encoder settings may be swept.
struct BenchmarkSpec {
    SynonymDictionary dict;
    std::vector<FilteredText> corpus;
    SynthConfig test;
};

struct BenchmarkResult {
    TrainResult stage1;
    TrainResult stage2;
    BranchScores scores;
    std::vector<std::vector<int>> labels;
    MapResult fused;
    MapResult visual;
    MapResult text;
    std::string digest_before;
    std::string digest_after;
};

/// Mock-LLM corpus of `corpus_count` kept texts (10% "unlikely" verdicts, 20%
/// synonym-free sentences) and a synthetic test set of `test_count` images.
BenchmarkSpec benchmark_spec(const SynonymDictionary& dict, std::size_t corpus_count, std::size_t test_count,
                             std::uint64_t seed, std::size_t threads = 1);

/// Builds the encoders, trains both stages and evaluates on synthetic images.
BenchmarkResult run_benchmark(const BenchmarkSpec& spec, const StageConfig& config);

/// One sweep dimension. Each point assigns one value to each key; several
/// keys let tuples such as (γ, η, ν) move together.
struct SweepAxis {
    std::vector<std::string> keys;
    std::vector<std::vector<std::string>> points;
};
/// "key=v1,v2" or "k1:k2:k3=a:b:c,d:e:f". ParameterError on malformed specs or unknown keys.
SweepAxis parse_sweep_axis(std::string_view spec);

struct SweepRow {
    StageConfig config;
    double map_fused = 0.0;
    double map_visual = 0.0;
    double map_text = 0.0;
    std::string error;
};

/// Cartesian product of the axes over `base`, first axis outermost. Points run
/// on up to `jobs` threads; each point is independent, so results do not depend
/// on `jobs`. A failing point is recorded and the sweep continues.
std::vector<SweepRow> run_sweep(std::span<const SweepAxis> axes, const StageConfig& base, const BenchmarkSpec& spec,
                                std::size_t jobs = 1);
void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path);

/// Binary P6 colour image, [-1, 1] → [0, 255].
void write_ppm(const Tensor& image, const std::filesystem::path& path);
/// Inverse of write_ppm up to 8-bit quantisation. FormatError on malformed files.
Tensor read_ppm(const std::filesystem::path& path);

/// Finite-difference check of the stage-2 total loss with respect to the
/// prompts, the context vectors and both adapters, on a small random problem
/// (N = 3 classes, D = 8, M = 4 context vectors, 8×8 prompts, B = 4 texts).
GradCheckReport stage2_gradient_check(std::uint64_t seed, double eps = 1e-5);

}  // namespace pvp
