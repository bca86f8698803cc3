#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dtvin/checkpoint.hpp"
#include "dtvin/dataset.hpp"
#include "dtvin/vinet.hpp"

namespace dtvin::trainer {

using gradcore::DiffGraph;
using gradcore::NdArray;
using gradcore::NodeId;
using mazeworld::Cell;

enum class LossVariant : std::uint8_t { AdaptiveHighway, FullHighway, SingleHighway, FinalOnly };
/// adaptive, full, single, final.
const char* loss_name(LossVariant v);
LossVariant parse_loss(const std::string& name);

enum class Normalization : std::uint8_t { ByK, ByKTimesD };
const char* normalization_name(Normalization n);
Normalization parse_normalization(const std::string& name);

/// How the path length l of a sample is estimated.
enum class LengthEstimate : std::uint8_t { Expert, Half, Double, Zero, Depth, NoisyGaussian, Manhattan };
const char* length_name(LengthEstimate e);
LengthEstimate parse_length(const std::string& name);

struct TrainSample {
    std::size_t maze = 0;
    Cell position;
    int label = 0;
    int length = 1;
};

/// positions: shuffled samples; mazes: whole mazes; grouped: mazes in shuffled order, their
/// shuffled samples concatenated and cut every `batch` samples.
enum class BatchUnit : std::uint8_t { Positions, Mazes, Grouped };
const char* batch_unit_name(BatchUnit u);
BatchUnit parse_batch_unit(const std::string& name);

struct TrainConfig {
    vinet::NetworkConfig network;
    double lr = 1e-3;
    std::size_t batch = 32;
    BatchUnit batch_unit = BatchUnit::Grouped;
    int epochs = 50;
    LossVariant loss = LossVariant::AdaptiveHighway;
    Normalization normalization = Normalization::ByK;
    LengthEstimate length = LengthEstimate::Expert;
    std::uint64_t seed = 0;
    double rms_alpha = 0.99;
    double rms_eps = 1e-8;
    std::size_t val_tasks = 200;
    /// Recorded layers contributing to the early-layer gradient telemetry.
    std::size_t telemetry_layers = 10;
    int workers = 1;
    /// Independent initialisations tried for `restart_epochs` each; the one with the highest
    /// validation SR at the end of that warm-up continues. 1 disables the search.
    int restarts = 1;
    int restart_epochs = 3;
};

/// Recorded layers (ascending) whose loss term is active for a sample with path length l.
/// When the variant selects none, the last recorded layer (n = N) is used.
std::vector<int> active_layers(std::span<const int> recorded, int length, LossVariant variant);

/// Brute-force count of active (sample, layer) pairs.
std::size_t count_terms(std::span<const int> recorded, std::span<const TrainSample> samples, LossVariant variant);

struct HighwayLoss {
    NodeId loss = 0;
    std::size_t terms = 0;
};

/// Cross-entropy terms of the samples (all on the planned maze) at their active layers, summed
/// and divided by K, or by K * |D| under ByKTimesD. Throws on an empty sample set.
HighwayLoss highway_loss(DiffGraph& graph, const vinet::PlanNodes& planned, std::span<const TrainSample> samples,
                         const vinet::ParamNodes& params, LossVariant variant, Normalization normalization);

/// Unnormalized sum of the active terms; `terms` receives the count.
NodeId highway_terms(DiffGraph& graph, const vinet::PlanNodes& planned, std::span<const TrainSample> samples,
                     const vinet::ParamNodes& params, LossVariant variant, std::size_t& terms);

/// Samples for every reachable start of every maze, lengths from `estimate`.
std::vector<TrainSample> make_samples(const mazeworld::Dataset& dataset, LengthEstimate estimate, int depth,
                                      std::uint64_t seed);
int estimate_length(LengthEstimate estimate, int expert, Cell pos, Cell goal, int depth, std::mt19937_64& rng);

struct RmsPropState {
    std::map<std::string, NdArray> square_avg;
    std::size_t rejected = 0;
};

/// s = a*s + (1-a)*g^2; theta -= lr*g/(sqrt(s)+eps). Returns false and leaves everything
/// untouched when any gradient is non-finite.
bool rmsprop_step(std::map<std::string, NdArray>& params, const std::map<std::string, NdArray>& grads, RmsPropState& state,
                  double lr, double alpha, double eps);

struct EpochMetrics {
    int epoch = 0;
    double mean_loss = 0.0;
    /// Mean over batches of the early-layer dLoss/dV L1 norm; max also kept.
    double grad_l1_early = 0.0;
    double grad_l1_early_max = 0.0;
    std::size_t nan_incidents = 0;
    std::size_t steps = 0;
    std::size_t rejected = 0;
    bool failed = false;
    std::optional<double> val_sr;
    double wall_seconds = 0.0;
};

struct BatchResult {
    double loss = 0.0;
    double grad_l1_early = 0.0;
    bool finite = true;
    std::size_t terms = 0;
    std::map<std::string, NdArray> grads;
};

/// Forward and backward over one batch; plans each distinct maze once.
BatchResult batch_gradient(const vinet::ModelParams& params, const mazeworld::Dataset& dataset,
                           std::span<const TrainSample> batch, const TrainConfig& config);

/// Batches for one epoch, each sorted by maze id.
std::vector<std::vector<TrainSample>> make_batches(std::span<const TrainSample> samples, const TrainConfig& config,
                                                   std::mt19937_64& rng);

EpochMetrics train_epoch(vinet::ModelParams& params, RmsPropState& state, const mazeworld::Dataset& dataset,
                         std::span<const TrainSample> samples, const TrainConfig& config, int epoch);

struct TrainPaths {
    std::filesystem::path checkpoint;  // best by validation SR
    std::filesystem::path log;         // JSON lines, one per epoch
    std::optional<std::filesystem::path> resume;
    std::string config_json = "{}";
};

struct TrainResult {
    vinet::ModelParams best;
    double best_val_sr = -1.0;
    int best_epoch = 0;
    std::vector<EpochMetrics> history;
};

/// Latest-state checkpoint written next to the best one.
std::filesystem::path last_checkpoint_path(const std::filesystem::path& best);

using EpochCallback = std::function<void(const EpochMetrics&)>;
using RestartCallback = std::function<void(int candidate, double val_sr)>;

TrainResult train(const TrainConfig& config, const mazeworld::Dataset& train_set, const mazeworld::Dataset& val_set,
                  const TrainPaths& paths, const EpochCallback& on_epoch = {}, const RestartCallback& on_restart = {});

struct GradcheckOptions {
    int size = 7;
    int depth = 5;
    int jump = 2;
    vinet::KernelVariant variant = vinet::KernelVariant::FullyDynamic;
    LossVariant loss = LossVariant::AdaptiveHighway;
    bool apply_softmax = true;
    std::uint64_t seed = 0;
    double eps = 1e-5;
    std::size_t max_coords = 64;
    bool corrupt = false;
};

/// Highway loss over every start of one random maze, checked against central differences.
gradcore::FdReport gradcheck(const GradcheckOptions& options);

}  // namespace dtvin::trainer
