#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dtvin/trainer.hpp"

using namespace dtvin::trainer;
namespace mw = dtvin::mazeworld;
namespace vn = dtvin::vinet;

namespace {

constexpr LossVariant kLosses[] = {LossVariant::AdaptiveHighway, LossVariant::FullHighway, LossVariant::SingleHighway,
                                   LossVariant::FinalOnly};
constexpr vn::KernelVariant kVariants[] = {vn::KernelVariant::FullyInvariant, vn::KernelVariant::LatentStateDynamic,
                                           vn::KernelVariant::ObservationDynamic, vn::KernelVariant::FullyDynamic};

std::vector<int> recorded_layers(int depth, int jump) {
    std::vector<int> out;
    for (int n = jump; n <= depth; n += jump) out.push_back(n);
    if (out.empty() || out.back() != depth) out.push_back(depth);
    return out;
}

// Indicator written directly from the loss definitions.
bool indicator(LossVariant v, int n, int l, const std::vector<int>& layers) {
    const int last = layers.back();
    bool any = false;
    for (int m : layers) {
        switch (v) {
            case LossVariant::AdaptiveHighway: any = any || m >= l; break;
            case LossVariant::FullHighway: any = true; break;
            case LossVariant::SingleHighway: any = any || m >= l; break;
            case LossVariant::FinalOnly: break;
        }
    }
    if (!any) return n == last;
    switch (v) {
        case LossVariant::AdaptiveHighway: return n >= l;
        case LossVariant::FullHighway: return true;
        case LossVariant::SingleHighway: {
            int first = last;
            for (int m : layers) {
                if (m >= l) {
                    first = m;
                    break;
                }
            }
            return n == first;
        }
        case LossVariant::FinalOnly: return n == last;
    }
    return false;
}

struct Fixture {
    vn::ModelParams params;
    mw::Dataset data;
};

Fixture toy(int m, int depth, int jump, std::size_t mazes, std::uint64_t seed, vn::KernelVariant v = vn::KernelVariant::FullyDynamic) {
    vn::NetworkConfig c;
    c.variant = v;
    c.size = m;
    c.depth = depth;
    c.jump = jump;
    mw::DatasetSpec spec{m, mazes, 1, 1, seed, mw::TransitionType::News, 0.0};
    return Fixture{vn::init_params(c, seed), mw::build_dataset(spec).train};
}

}  // namespace

TEST_CASE("active_layers: variant patterns and the l > N guard") {
    const auto layers = recorded_layers(10, 2);
    CHECK(active_layers(layers, 3, LossVariant::AdaptiveHighway) == std::vector<int>{4, 6, 8, 10});
    CHECK(active_layers(layers, 7, LossVariant::AdaptiveHighway) == std::vector<int>{8, 10});
    CHECK(active_layers(layers, 7, LossVariant::SingleHighway) == std::vector<int>{8});
    CHECK(active_layers(layers, 7, LossVariant::FullHighway) == layers);
    CHECK(active_layers(layers, 7, LossVariant::FinalOnly) == std::vector<int>{10});
    CHECK(active_layers(layers, 13, LossVariant::AdaptiveHighway) == std::vector<int>{10});
    CHECK(active_layers(layers, 13, LossVariant::SingleHighway) == std::vector<int>{10});
    CHECK(active_layers(layers, 0, LossVariant::AdaptiveHighway) == layers);
}

TEST_CASE("term counts equal brute-force enumeration") {
    std::mt19937_64 rng(1);
    for (int depth : {1, 7, 23, 50}) {
        for (int jump : {1, 3, 10, 50}) {
            const auto layers = recorded_layers(depth, jump);
            for (int trial = 0; trial < 30; ++trial) {
                std::vector<TrainSample> samples(1 + rng() % 40);
                for (auto& s : samples) s.length = static_cast<int>(rng() % 70);
                for (auto v : kLosses) {
                    std::size_t brute = 0;
                    for (const auto& s : samples) {
                        for (int n : layers) brute += indicator(v, n, s.length, layers) ? 1 : 0;
                    }
                    REQUIRE(count_terms(layers, samples, v) == brute);
                }
            }
        }
    }
}

TEST_CASE("adaptive active set never shrinks as l decreases") {
    const auto layers = recorded_layers(50, 10);
    for (int l = 60; l > 0; --l) {
        auto a = active_layers(layers, l, LossVariant::AdaptiveHighway);
        auto b = active_layers(layers, l - 1, LossVariant::AdaptiveHighway);
        CHECK(std::includes(b.begin(), b.end(), a.begin(), a.end()));
    }
}

TEST_CASE("highway_loss: single term, uniform policy, scalar term oracle") {
    auto f = toy(7, 10, 2, 1, 3);
    const auto& task = f.data.tasks[0];
    auto starts = task.start_cells();
    REQUIRE(starts.size() >= 2);

    {
        auto params = f.params;
        params.config.jump = 10;
        dtvin::gradcore::DiffGraph g;
        auto p = vn::add_params(g, params);
        auto planned = vn::plan(g, g.constant(vn::make_observation(task).stacked()), p, params.config);
        TrainSample s{0, starts[0], task.label(starts[0]), 10};
        auto loss = highway_loss(g, planned, std::span(&s, 1), p, LossVariant::AdaptiveHighway, Normalization::ByK);
        CHECK(loss.terms == 1);
        auto logits = vn::policy_logits(g.value(planned.recorded.back().second), s.position, params);
        double lse = 0.0;
        for (double z : logits) lse += std::exp(z);
        CHECK(g.value(loss.loss)[0] == doctest::Approx(std::log(lse) - logits[static_cast<std::size_t>(s.label)]).epsilon(1e-13));
    }

    auto uniform = f.params;
    uniform.at("policy.w").fill(0.0);
    uniform.at("policy.b").fill(0.0);
    for (auto v : kLosses) {
        for (auto norm : {Normalization::ByK}) {
            dtvin::gradcore::DiffGraph g;
            auto p = vn::add_params(g, uniform);
            auto planned = vn::plan(g, g.constant(vn::make_observation(task).stacked()), p, uniform.config);
            auto samples = make_samples(f.data, LengthEstimate::Expert, 10, 0);
            auto loss = highway_loss(g, planned, samples, p, v, norm);
            CHECK(g.value(loss.loss)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-14));
        }
    }

    dtvin::gradcore::DiffGraph g;
    auto p = vn::add_params(g, f.params);
    auto planned = vn::plan(g, g.constant(vn::make_observation(task).stacked()), p, f.params.config);
    std::vector<TrainSample> two = {{0, starts[0], task.label(starts[0]), 3}, {0, starts[1], task.label(starts[1]), 7}};
    auto loss = highway_loss(g, planned, two, p, LossVariant::AdaptiveHighway, Normalization::ByK);
    CHECK(loss.terms == 6);
    double sum = 0.0;
    const std::pair<std::size_t, int> terms[] = {{0, 4}, {0, 6}, {0, 8}, {0, 10}, {1, 8}, {1, 10}};
    for (auto [k, n] : terms) {
        const auto& value = g.value(planned.recorded[static_cast<std::size_t>(n / 2 - 1)].second);
        auto z = vn::policy_logits(value, two[k].position, f.params);
        double lse = 0.0;
        for (double x : z) lse += std::exp(x);
        sum += std::log(lse) - z[static_cast<std::size_t>(two[k].label)];
    }
    CHECK(g.value(loss.loss)[0] == doctest::Approx(sum / 6.0).epsilon(1e-13));
    auto literal = highway_loss(g, planned, two, p, LossVariant::AdaptiveHighway, Normalization::ByKTimesD);
    CHECK(g.value(literal.loss)[0] == doctest::Approx(sum / 12.0).epsilon(1e-13));

    CHECK_THROWS_AS(highway_loss(g, planned, std::span<const TrainSample>(), p, LossVariant::AdaptiveHighway, Normalization::ByK),
                    std::invalid_argument);
}

TEST_CASE("final-only loss with J = N is the standard mean cross-entropy") {
    auto f = toy(7, 6, 6, 1, 8);
    const auto& task = f.data.tasks[0];
    dtvin::gradcore::DiffGraph g;
    auto p = vn::add_params(g, f.params);
    auto planned = vn::plan(g, g.constant(vn::make_observation(task).stacked()), p, f.params.config);
    auto samples = make_samples(f.data, LengthEstimate::Expert, 6, 0);
    auto loss = highway_loss(g, planned, samples, p, LossVariant::FinalOnly, Normalization::ByK);
    const auto value = vn::plan_values(vn::make_observation(task), f.params).final_value();
    double sum = 0.0;
    for (const auto& s : samples) {
        auto z = vn::policy_logits(value, s.position, f.params);
        double lse = 0.0;
        for (double x : z) lse += std::exp(x);
        sum += std::log(lse) - z[static_cast<std::size_t>(s.label)];
    }
    CHECK(std::abs(g.value(loss.loss)[0] - sum / static_cast<double>(samples.size())) <= 1e-12);
}

TEST_CASE("rmsprop_step: zero gradient, hand-evaluated update, rejection") {
    std::map<std::string, NdArray> params = {{"x", NdArray::scalar(0.5)}};
    RmsPropState state;
    CHECK(rmsprop_step(params, {{"x", NdArray::scalar(0.0)}}, state, 1e-3, 0.99, 1e-8));
    CHECK(params["x"][0] == 0.5);

    RmsPropState s2;
    std::map<std::string, NdArray> p2 = {{"x", NdArray::scalar(0.0)}};
    CHECK(rmsprop_step(p2, {{"x", NdArray::scalar(1.0)}}, s2, 1e-3, 0.99, 1e-8));
    CHECK(s2.square_avg["x"][0] == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(p2["x"][0] == doctest::Approx(-1e-3 / (0.1 + 1e-8)).epsilon(1e-15));
    CHECK(p2["x"][0] == doctest::Approx(-1e-2).epsilon(1e-6));
    CHECK(rmsprop_step(p2, {{"x", NdArray::scalar(1.0)}}, s2, 1e-3, 0.99, 1e-8));
    CHECK(s2.square_avg["x"][0] == doctest::Approx(0.0199).epsilon(1e-15));

    const auto before = p2;
    CHECK_FALSE(rmsprop_step(p2, {{"x", NdArray::scalar(std::nan(""))}}, s2, 1e-3, 0.99, 1e-8));
    CHECK(p2 == before);
    CHECK(s2.rejected == 1);
}

TEST_CASE("gradients of every loss variant and kernel variant match finite differences") {
    for (auto v : kVariants) {
        for (auto loss : kLosses) {
            for (std::uint64_t seed = 0; seed < 3; ++seed) {
                GradcheckOptions o;
                o.variant = v;
                o.loss = loss;
                o.seed = seed;
                auto r = gradcheck(o);
                CHECK_MESSAGE(r.max_rel_error <= 1e-6, vn::variant_name(v), " ", loss_name(loss), " seed ", seed);
                CHECK(r.finite);
            }
        }
    }
    GradcheckOptions bad;
    bad.corrupt = true;
    CHECK(gradcheck(bad).max_rel_error > 1e-3);
    GradcheckOptions coarse;
    coarse.eps = 1e-1;
    CHECK(std::isfinite(gradcheck(coarse).max_rel_error));
}

TEST_CASE("batching: positions vs mazes, grouping and order invariance") {
    auto f = toy(7, 4, 2, 6, 2);
    auto samples = make_samples(f.data, LengthEstimate::Expert, 4, 0);
    TrainConfig c;
    c.network = f.params.config;
    c.batch = 5;
    c.batch_unit = BatchUnit::Positions;
    std::mt19937_64 rng(1);
    auto batches = make_batches(samples, c, rng);
    std::size_t total = 0;
    for (const auto& b : batches) {
        total += b.size();
        CHECK(b.size() <= 5);
        CHECK(std::is_sorted(b.begin(), b.end(), [](auto& x, auto& y) { return x.maze < y.maze; }));
    }
    CHECK(total == samples.size());

    c.batch = 4;
    c.batch_unit = BatchUnit::Mazes;
    auto mb = make_batches(samples, c, rng);
    CHECK(mb.size() == 2);
    CHECK(mb[0].size() + mb[1].size() == samples.size());

    // Loss does not depend on the order of samples on the same maze.
    std::vector<TrainSample> one_maze;
    for (const auto& s : samples) {
        if (s.maze == 0) one_maze.push_back(s);
    }
    auto a = batch_gradient(f.params, f.data, one_maze, c);
    std::reverse(one_maze.begin(), one_maze.end());
    auto b = batch_gradient(f.params, f.data, one_maze, c);
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
    CHECK(a.terms == b.terms);
}

TEST_CASE("train_epoch: frozen optimizer, determinism, worker invariance") {
    auto f = toy(7, 6, 2, 8, 5);
    auto samples = make_samples(f.data, LengthEstimate::Expert, 6, 0);
    TrainConfig c;
    c.network = f.params.config;
    c.batch = 3;
    c.batch_unit = BatchUnit::Mazes;

    c.lr = 0.0;
    auto frozen = f.params;
    RmsPropState s0;
    auto m0 = train_epoch(frozen, s0, f.data, samples, c, 1);
    CHECK(frozen.tensors == f.params.tensors);
    CHECK(m0.steps == 3);

    c.lr = 1e-3;
    auto run = [&](int workers) {
        auto p = f.params;
        RmsPropState s;
        auto cfg = c;
        cfg.workers = workers;
        for (int e = 1; e <= 2; ++e) train_epoch(p, s, f.data, samples, cfg, e);
        return p;
    };
    auto a = run(1);
    CHECK(a.tensors == run(1).tensors);
    CHECK(a.tensors == run(3).tensors);
    CHECK(a.tensors != f.params.tensors);
}

TEST_CASE("no-softmax planning explodes where softmax stays bounded") {
    auto f = toy(9, 60, 10, 4, 6);
    auto samples = make_samples(f.data, LengthEstimate::Expert, 60, 0);
    TrainConfig c;
    c.network = f.params.config;
    c.batch = 4;
    auto soft = batch_gradient(f.params, f.data, samples, c);
    CHECK(soft.finite);
    CHECK(soft.grad_l1_early < 1e3);
    auto raw = f.params;
    raw.config.apply_softmax = false;
    c.network.apply_softmax = false;
    auto hard = batch_gradient(raw, f.data, samples, c);
    CHECK((!hard.finite || hard.grad_l1_early > 1e6));
}

TEST_CASE("length estimates") {
    std::mt19937_64 rng(1);
    const Cell pos{1, 1}, goal{4, 6};
    CHECK(estimate_length(LengthEstimate::Expert, 12, pos, goal, 50, rng) == 12);
    CHECK(estimate_length(LengthEstimate::Half, 12, pos, goal, 50, rng) == 6);
    CHECK(estimate_length(LengthEstimate::Half, 1, pos, goal, 50, rng) == 1);
    CHECK(estimate_length(LengthEstimate::Double, 12, pos, goal, 50, rng) == 24);
    CHECK(estimate_length(LengthEstimate::Zero, 12, pos, goal, 50, rng) == 0);
    CHECK(estimate_length(LengthEstimate::Depth, 12, pos, goal, 50, rng) == 50);
    CHECK(estimate_length(LengthEstimate::Manhattan, 12, pos, goal, 50, rng) == 8);
    int zeros = 0;
    for (int k = 0; k < 2000; ++k) {
        const int l = estimate_length(LengthEstimate::NoisyGaussian, 12, pos, goal, 50, rng);
        CHECK(l >= 0);
        zeros += l == 0 ? 1 : 0;
    }
    // P(eps <= 0) for eps ~ N(1, 1) is about 0.159, plus rounding of tiny positive values.
    CHECK(zeros > 250);
    CHECK(zeros < 420);
    for (auto e : {LengthEstimate::Expert, LengthEstimate::NoisyGaussian, LengthEstimate::Manhattan}) {
        CHECK(parse_length(length_name(e)) == e);
    }
}

TEST_CASE("train: zero epochs, checkpoints, log, resume") {
    const auto dir = std::filesystem::temp_directory_path() / "dtvin_test_train";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    mw::DatasetSpec spec{7, 6, 3, 1, 12, mw::TransitionType::News, 0.0};
    auto data = mw::build_dataset(spec);
    TrainConfig c;
    c.network.size = 7;
    c.network.depth = 8;
    c.network.jump = 4;
    c.batch = 2;
    c.seed = 4;

    c.epochs = 0;
    TrainPaths zero{dir / "zero.ckpt", dir / "zero.log", std::nullopt, "{\"epochs\":0}"};
    train(c, data.train, data.val, zero);
    CHECK(vn::read_checkpoint(zero.checkpoint).model.tensors == vn::init_params(c.network, 4).tensors);

    c.epochs = 4;
    TrainPaths full{dir / "full.ckpt", dir / "full.log", std::nullopt, "{}"};
    auto r = train(c, data.train, data.val, full);
    CHECK(r.history.size() == 4);
    std::ifstream log(full.log);
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) ++lines;
    CHECK(lines == 4);
    CHECK(std::filesystem::exists(last_checkpoint_path(full.checkpoint)));
    CHECK(std::filesystem::exists(dir / "full.ckpt.json"));

    c.epochs = 2;
    TrainPaths half{dir / "half.ckpt", dir / "half.log", std::nullopt, "{}"};
    train(c, data.train, data.val, half);
    c.epochs = 4;
    half.resume = last_checkpoint_path(half.checkpoint);
    train(c, data.train, data.val, half);
    CHECK(mw::read_file_bytes(last_checkpoint_path(half.checkpoint)) == mw::read_file_bytes(last_checkpoint_path(full.checkpoint)));
    CHECK(mw::read_file_bytes(half.checkpoint) == mw::read_file_bytes(full.checkpoint));

    auto wrong = c;
    wrong.network.size = 9;
    CHECK_THROWS_AS(train(wrong, data.train, data.val, full), std::invalid_argument);
    std::filesystem::remove_all(dir);
}

TEST_CASE("train: restart search keeps the best warm-up candidate and resumes exactly") {
    const auto dir = std::filesystem::temp_directory_path() / "dtvin_test_restarts";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    mw::DatasetSpec spec{7, 8, 6, 1, 21, mw::TransitionType::News, 0.0};
    auto data = mw::build_dataset(spec);
    TrainConfig c;
    c.network.size = 7;
    c.network.depth = 8;
    c.network.jump = 4;
    c.batch = 4;
    c.seed = 2;
    c.lr = 1e-2;
    c.restarts = 3;
    c.restart_epochs = 2;
    c.epochs = 4;

    std::vector<double> warm;
    TrainPaths full{dir / "full.ckpt", dir / "full.log", std::nullopt, "{}"};
    auto r = train(c, data.train, data.val, full, {}, [&](int, double sr) { warm.push_back(sr); });
    REQUIRE(warm.size() == 3);
    REQUIRE(r.history.size() == 4);
    CHECK(*r.history[1].val_sr == *std::max_element(warm.begin(), warm.end()));
    CHECK(r.history[0].epoch == 1);
    CHECK(r.history[3].epoch == 4);

    c.epochs = 3;
    TrainPaths part{dir / "part.ckpt", dir / "part.log", std::nullopt, "{}"};
    train(c, data.train, data.val, part);
    c.epochs = 4;
    part.resume = last_checkpoint_path(part.checkpoint);
    train(c, data.train, data.val, part);
    CHECK(mw::read_file_bytes(last_checkpoint_path(part.checkpoint)) == mw::read_file_bytes(last_checkpoint_path(full.checkpoint)));

    c.restarts = 0;
    CHECK_THROWS_AS(train(c, data.train, data.val, full), std::invalid_argument);
    std::filesystem::remove_all(dir);
}

TEST_CASE("toy imitation run: loss falls below a tenth of its start") {
    auto f = toy(7, 20, 10, 20, 31);
    auto samples = make_samples(f.data, LengthEstimate::Expert, 20, 0);
    TrainConfig c;
    c.network = f.params.config;
    c.batch = 2;
    c.batch_unit = BatchUnit::Positions;
    c.lr = 1e-2;
    auto p = f.params;
    RmsPropState s;
    std::vector<double> losses;
    for (int e = 1; e <= 30; ++e) losses.push_back(train_epoch(p, s, f.data, samples, c, e).mean_loss);
    MESSAGE("toy loss " << losses.front() << " -> " << losses.back());
    std::vector<double> smooth;
    for (std::size_t k = 0; k + 5 <= losses.size(); k += 5) {
        double acc = 0.0;
        for (std::size_t i = k; i < k + 5; ++i) acc += losses[i];
        smooth.push_back(acc / 5.0);
    }
    for (std::size_t k = 1; k < smooth.size(); ++k) CHECK(smooth[k] < smooth[k - 1]);
    CHECK(losses.back() < 0.1 * losses.front());
}
