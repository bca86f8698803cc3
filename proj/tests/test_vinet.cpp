#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "dtvin/checkpoint.hpp"
#include "dtvin/tabular.hpp"

using namespace dtvin::vinet;
using dtvin::mazeworld::Cell;
using dtvin::mazeworld::MazeTask;
using dtvin::mazeworld::TransitionType;
namespace mw = dtvin::mazeworld;

namespace {

NdArray random_array(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    NdArray a(std::move(shape));
    for (double& x : a.storage()) x = u(rng);
    return a;
}

NetworkConfig small_config(KernelVariant variant, int m, int depth, int jump) {
    NetworkConfig c;
    c.variant = variant;
    c.size = m;
    c.depth = depth;
    c.jump = jump;
    return c;
}

constexpr KernelVariant kVariants[] = {KernelVariant::FullyInvariant, KernelVariant::LatentStateDynamic,
                                       KernelVariant::ObservationDynamic, KernelVariant::FullyDynamic};

}  // namespace

TEST_CASE("variant names round trip") {
    for (auto v : kVariants) CHECK(parse_variant(variant_name(v)) == v);
    CHECK_THROWS_AS(parse_variant("dynamic"), std::invalid_argument);
}

TEST_CASE("parameter shapes and counts per variant") {
    auto c = small_config(KernelVariant::FullyDynamic, 15, 10, 10);
    auto p = init_params(c, 1);
    CHECK(p.at("transition.w").size() == 4 * 9 * 9);
    CHECK(p.at("transition.w").shape() == Shape{36, 1, 3, 3});
    CHECK(p.at("policy.w").shape() == Shape{4, 9});

    c.variant = KernelVariant::FullyInvariant;
    CHECK(init_params(c, 1).at("transition.kernel").shape() == Shape{4, 3, 3});
    c.variant = KernelVariant::LatentStateDynamic;
    CHECK(init_params(c, 1).at("transition.kernel").shape() == Shape{15, 15, 4, 3, 3});

    // Initialization stays inside the fan-in bound and is seed deterministic.
    auto a = init_params(small_config(KernelVariant::FullyDynamic, 7, 3, 1), 5);
    auto b = init_params(small_config(KernelVariant::FullyDynamic, 7, 3, 1), 5);
    CHECK(a.tensors == b.tensors);
    CHECK(a.at("transition.w").abs_max() <= 1.0 / 3.0);
    CHECK(a.at("reward.w").abs_max() <= 1.0 / std::sqrt(2.0));

    auto bad = a;
    bad.tensors.erase("policy.b");
    CHECK_THROWS_AS(check_params(bad), std::invalid_argument);
}

TEST_CASE("reward_mapping: zero, selector and per-cell affine oracle") {
    std::mt19937_64 rng(3);
    auto map = random_array(Shape{5, 5}, rng, 0.0, 1.0);
    auto obs = make_observation(map, Cell{1, 3});
    auto params = init_params(small_config(KernelVariant::FullyDynamic, 5, 1, 1), 9);

    auto run = [&]() {
        DiffGraph g;
        auto p = add_params(g, params);
        return g.value(reward_mapping(g, g.constant(obs.stacked()), p));
    };

    const double b = params.at("reward.b")[0];
    params.at("reward.w").fill(0.0);
    const auto constant = run();
    for (double v : constant.data()) CHECK(v == b);

    params.at("reward.w")[1] = 1.0;
    params.at("reward.b")[0] = 0.0;
    CHECK(run() == obs.goal);

    params.at("reward.w")[0] = -0.37;
    params.at("reward.w")[1] = 2.5;
    params.at("reward.b")[0] = 0.11;
    auto r = run();
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
            CHECK(r.at(i, j) == doctest::Approx(-0.37 * map.at(i, j) + 2.5 * obs.goal.at(i, j) + 0.11).epsilon(1e-15));
        }
    }
}

TEST_CASE("transition_mapping: normalization, constant-map symmetry and conv oracle") {
    std::mt19937_64 rng(11);
    for (auto v : kVariants) {
        auto params = init_params(small_config(v, 6, 1, 1), 17);
        auto obs = make_observation(random_array(Shape{6, 6}, rng, 0.0, 1.0), Cell{2, 2});
        DiffGraph g;
        auto p = add_params(g, params);
        const auto& k = g.value(transition_mapping(g, g.constant(obs.stacked()), p, params.config));
        REQUIRE(k.size() % 9 == 0);
        for (std::size_t s = 0; s < k.size(); s += 9) {
            double sum = 0.0;
            for (std::size_t e = 0; e < 9; ++e) {
                CHECK(k[s + e] > 0.0);
                sum += k[s + e];
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
        }
    }

    auto params = init_params(small_config(KernelVariant::FullyDynamic, 5, 1, 1), 23);
    {
        DiffGraph g;
        auto p = add_params(g, params);
        auto obs = make_observation(NdArray(Shape{5, 5}, 1.0), Cell{0, 0});
        const auto& k = g.value(transition_mapping(g, g.constant(obs.stacked()), p, params.config));
        const std::size_t per_cell = 36;
        for (std::size_t i = 1; i < 4; ++i) {
            for (std::size_t j = 1; j < 4; ++j) {
                for (std::size_t e = 0; e < per_cell; ++e) {
                    CHECK(k[(i * 5 + j) * per_cell + e] == k[(1 * 5 + 1) * per_cell + e]);
                }
            }
        }
    }

    params.config.apply_softmax = false;
    NdArray map(Shape{5, 5}, 1.0);
    map.at(2, 2) = 0.0;
    auto obs = make_observation(map, Cell{0, 0});
    DiffGraph g;
    auto p = add_params(g, params);
    const auto& k = g.value(transition_mapping(g, g.constant(obs.stacked()), p, params.config));
    const auto& w = params.at("transition.w");
    const auto& b = params.at("transition.b");
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            for (int co = 0; co < 36; ++co) {
                double acc = b[static_cast<std::size_t>(co)];
                for (int dp = -1; dp <= 1; ++dp) {
                    for (int dq = -1; dq <= 1; ++dq) {
                        const int ii = i + dp, jj = j + dq;
                        if (ii < 0 || jj < 0 || ii >= 5 || jj >= 5) continue;
                        acc += w[static_cast<std::size_t>(co * 9 + (dp + 1) * 3 + dq + 1)] *
                               map.at(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
                    }
                }
                CHECK(k[static_cast<std::size_t>((i * 5 + j) * 36 + co)] == doctest::Approx(acc).epsilon(1e-14));
            }
        }
    }
    // Next to the obstacle the kernel differs from open space.
    bool differs = false;
    for (std::size_t e = 0; e < 36; ++e) differs = differs || k[(1 * 5 + 2) * 36 + e] != k[(0 * 5 + 0) * 36 + e];
    CHECK(differs);

    // Observation-dynamic is the spatial mean of the same pre-activation.
    params.config.variant = KernelVariant::ObservationDynamic;
    DiffGraph g2;
    auto p2 = add_params(g2, params);
    const auto& mean = g2.value(transition_mapping(g2, g2.constant(obs.stacked()), p2, params.config));
    REQUIRE(mean.shape() == Shape{4, 3, 3});
    for (std::size_t e = 0; e < 36; ++e) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 25; ++c) acc += k[c * 36 + e];
        CHECK(mean[e] == doctest::Approx(acc / 25.0).epsilon(1e-14));
    }
}

TEST_CASE("vi_step: zero case, convex-combination identity, one Bellman backup") {
    DiffGraph g;
    auto zero = g.constant(NdArray(Shape{5, 5}));
    auto uniform = g.constant(NdArray(Shape{4, 3, 3}, 1.0 / 9.0));
    CHECK(g.value(vi_step(g, zero, zero, uniform)).abs_max() == 0.0);

    auto c = g.constant(NdArray(Shape{5, 5}, 2.5));
    const auto& v = g.value(vi_step(g, zero, c, uniform));
    for (std::size_t i = 1; i < 4; ++i) {
        for (std::size_t j = 1; j < 4; ++j) CHECK(v.at(i, j) == doctest::Approx(2.5).epsilon(1e-14));
    }

    // One backup on a 5x5 maze against a tabular loop.
    auto grid = mw::MazeGrid(5, std::vector<std::uint8_t>{
                                     0, 0, 0, 0, 0,
                                     0, 1, 1, 1, 0,
                                     0, 1, 0, 1, 0,
                                     0, 1, 1, 1, 0,
                                     0, 0, 0, 0, 0,
                                 });
    auto task = mw::make_task(grid, Cell{1, 1}, TransitionType::News);
    std::mt19937_64 rng(4);
    auto prev = random_array(Shape{5, 5}, rng, -3.0, 0.0);
    auto next = g.value(vi_step(g, g.constant(oracle_reward(5)), g.constant(prev), g.constant(oracle_kernel(task))));
    auto mdp = maze_to_mdp(task);
    for (std::size_t s = 0; s < 25; ++s) {
        double best = -1e300;
        for (std::size_t a = 0; a < 4; ++a) {
            double q = 0.0;
            for (std::size_t s2 = 0; s2 < 25; ++s2) q += mdp.T(s, a, s2) * (mdp.R(s, a, s2) + prev[s2]);
            best = std::max(best, q);
        }
        if (s == grid.index(task.goal)) best = 0.0;
        CHECK(next[s] == doctest::Approx(best).epsilon(1e-14));
    }
}

TEST_CASE("plan: recorded layers and divergence detection") {
    DiffGraph g;
    auto r = g.constant(NdArray(Shape{4, 4}, -1.0));
    auto k = g.constant(NdArray(Shape{4, 3, 3}, 1.0 / 9.0));
    auto one = plan(g, r, k, 1, 1);
    REQUIRE(one.recorded.size() == 1);
    CHECK(one.recorded[0].first == 1);
    CHECK(g.value(one.recorded[0].second) == g.value(vi_step(g, r, g.constant(NdArray(Shape{4, 4})), k)));

    auto ten = plan(g, r, k, 10, 3);
    std::vector<int> layers;
    for (auto& [n, id] : ten.recorded) layers.push_back(n);
    CHECK(layers == std::vector<int>{3, 6, 9, 10});

    auto huge = g.constant(NdArray(Shape{4, 3, 3}, 1e200));
    try {
        plan(g, r, huge, 10, 1);
        FAIL("expected divergence");
    } catch (const NonFiniteValue& e) {
        CHECK(e.layer() == 2);
    }
}

TEST_CASE("policy_logits: zero map, selector, dot-product oracle") {
    auto params = init_params(small_config(KernelVariant::FullyDynamic, 5, 1, 1), 2);
    NdArray zero(Shape{5, 5});
    auto logits = policy_logits(zero, Cell{2, 2}, params);
    for (std::size_t a = 0; a < 4; ++a) CHECK(logits[a] == params.at("policy.b")[a]);

    std::mt19937_64 rng(8);
    auto map = random_array(Shape{5, 5}, rng);
    auto sel = params;
    sel.at("policy.w").fill(0.0);
    sel.at("policy.b").fill(0.0);
    sel.at("policy.w").at(0, 1) = 1.0;  // north cell of the patch
    CHECK(policy_logits(map, Cell{3, 2}, sel)[0] == map.at(2, 2));
    CHECK(policy_logits(map, Cell{0, 2}, sel)[0] == 0.0);

    for (Cell pos : {Cell{0, 0}, Cell{2, 3}, Cell{4, 4}}) {
        auto got = policy_logits(map, pos, params);
        DiffGraph g;
        auto p = add_params(g, params);
        const auto& graph_logits = g.value(policy_logits(g, g.constant(map), pos, p));
        for (std::size_t a = 0; a < 4; ++a) {
            double acc = params.at("policy.b")[a];
            for (int du = -1; du <= 1; ++du) {
                for (int dv = -1; dv <= 1; ++dv) {
                    const int r = pos.row + du, c = pos.col + dv;
                    if (r < 0 || c < 0 || r >= 5 || c >= 5) continue;
                    acc += params.at("policy.w").at(a, static_cast<std::size_t>((du + 1) * 3 + dv + 1)) *
                           map.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
                }
            }
            CHECK(got[a] == doctest::Approx(acc).epsilon(1e-14));
            CHECK(graph_logits[a] == got[a]);
        }
    }
}

TEST_CASE("tabular_value_iteration: base cases and hand recursion") {
    // 0 -> 1 -> 2, state 2 loops on itself with reward 1.
    auto chain = TabularMDP::zeros(3, 1, 0.5);
    chain.T(0, 0, 1) = 1.0;
    chain.T(1, 0, 2) = 1.0;
    chain.T(2, 0, 2) = 1.0;
    chain.R(2, 0, 2) = 1.0;
    auto v = tabular_value_iteration(chain, 3);
    REQUIRE(v.size() == 4);
    CHECK(v[0] == std::vector<double>{0.0, 0.0, 0.0});
    CHECK(v[3][0] == 0.25);
    CHECK(v[3][1] == 0.75);
    CHECK(v[3][2] == 1.75);

    // Terminal step reward 1 into an absorbing zero-reward state instead.
    auto term = TabularMDP::zeros(3, 1, 0.5);
    term.T(0, 0, 1) = 1.0;
    term.T(1, 0, 2) = 1.0;
    term.T(2, 0, 2) = 1.0;
    term.R(1, 0, 2) = 1.0;
    auto vt = tabular_value_iteration(term, 3);
    CHECK(vt[3] == std::vector<double>{0.5, 1.0, 0.0});

    std::mt19937_64 rng(6);
    auto mdp = TabularMDP::zeros(4, 3, 0.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t s = 0; s < 4; ++s) {
        for (std::size_t a = 0; a < 3; ++a) {
            double total = 0.0;
            for (std::size_t s2 = 0; s2 < 4; ++s2) total += mdp.T(s, a, s2) = u(rng) + 1.0;
            for (std::size_t s2 = 0; s2 < 4; ++s2) {
                mdp.T(s, a, s2) /= total;
                mdp.R(s, a, s2) = u(rng);
            }
        }
    }
    auto v0 = tabular_value_iteration(mdp, 0);
    CHECK(v0.size() == 1);
    auto vg = tabular_value_iteration(mdp, 4);
    for (std::size_t s = 0; s < 4; ++s) {
        double best = -1e300;
        for (std::size_t a = 0; a < 3; ++a) {
            double q = 0.0;
            for (std::size_t s2 = 0; s2 < 4; ++s2) q += mdp.T(s, a, s2) * mdp.R(s, a, s2);
            best = std::max(best, q);
        }
        for (int n = 1; n <= 4; ++n) CHECK(vg[static_cast<std::size_t>(n)][s] == doctest::Approx(best).epsilon(1e-14));
    }

    mdp.T(0, 0, 0) += 0.1;
    CHECK_THROWS_AS(tabular_value_iteration(mdp, 1), std::invalid_argument);
}

TEST_CASE("planner with hand-set kernels equals tabular value iteration") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        for (auto type : {TransitionType::News, TransitionType::Moore}) {
            const int m = seed % 2 == 0 ? 7 : 5;
            auto maze = mw::generate_maze(m, 100 + seed, seed % 3 == 0 ? 0.4 : 0.0);
            auto task = mw::make_task(maze.grid, maze.goal, type);
            auto tab = tabular_value_iteration(maze_to_mdp(task), 20);
            auto stack = plan_values(oracle_reward(m), oracle_kernel(task), 20, 1);
            REQUIRE(stack.layers.size() == 20);
            for (std::size_t n = 1; n <= 20; ++n) {
                const auto& vn = stack.values[n - 1];
                for (std::size_t s = 0; s < vn.size(); ++s) {
                    REQUIRE(std::abs(vn[s] - tab[n][s]) <= 1e-10);
                    const Cell c{static_cast<int>(s) / m, static_cast<int>(s) % m};
                    if (task.grid.is_road(c)) {
                        const double expect = -static_cast<double>(std::min<std::size_t>(n, task.distance(c)));
                        REQUIRE(vn[s] == expect);
                    }
                }
            }
        }
    }
}

TEST_CASE("fully dynamic planning is translation equivariant away from the border") {
    const int m = 15, depth = 3, margin = depth * 1 + 1;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(seed);
        auto params = init_params(small_config(KernelVariant::FullyDynamic, m, depth, 1), seed);
        std::bernoulli_distribution road(0.6);
        std::vector<int> pattern(36);
        for (int& x : pattern) x = road(rng);
        auto make = [&](int r0, int c0) {
            NdArray map(Shape{15, 15});
            for (int i = 0; i < 6; ++i) {
                for (int j = 0; j < 6; ++j) {
                    map.at(static_cast<std::size_t>(r0 + i), static_cast<std::size_t>(c0 + j)) = pattern[static_cast<std::size_t>(i * 6 + j)];
                }
            }
            return make_observation(map, Cell{r0 + 2, c0 + 3});
        };
        auto va = plan_values(make(3, 3), params).final_value();
        auto vb = plan_values(make(5, 4), params).final_value();
        int compared = 0;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) {
                const int bi = i + 2, bj = j + 1;
                auto inner = [&](int r, int c) { return std::min({r, c, m - 1 - r, m - 1 - c}) > margin; };
                if (!inner(i, j) || !inner(bi, bj)) continue;
                CHECK(std::abs(va.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) -
                               vb.at(static_cast<std::size_t>(bi), static_cast<std::size_t>(bj))) <= 1e-9);
                ++compared;
            }
        }
        CHECK(compared > 0);
    }
}

TEST_CASE("softmax kernels keep values within n times the reward bound") {
    for (auto v : kVariants) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto params = init_params(small_config(v, 9, 30, 1), seed);
            params.at("reward.b")[0] = 3.0;
            auto maze = mw::generate_maze(9, seed);
            auto obs = make_observation(mw::make_task(maze.grid, maze.goal, TransitionType::News));
            DiffGraph g;
            auto p = add_params(g, params);
            const double rmax = g.value(reward_mapping(g, g.constant(obs.stacked()), p)).abs_max();
            auto stack = plan_values(obs, params);
            for (std::size_t k = 0; k < stack.layers.size(); ++k) {
                CHECK(stack.values[k].abs_max() <= stack.layers[k] * rmax * (1.0 + 1e-12));
            }
        }
    }
}

TEST_CASE("end-to-end gradients match finite differences at M=7, N=5") {
    for (auto v : kVariants) {
        for (bool softmax : {true, false}) {
            for (std::uint64_t seed = 0; seed < 4; ++seed) {
                auto cfg = small_config(v, 7, 5, 2);
                cfg.apply_softmax = softmax;
                auto params = init_params(cfg, seed);
                auto maze = mw::generate_maze(7, seed, 0.3);
                auto task = mw::make_task(maze.grid, maze.goal, TransitionType::News);
                DiffGraph g;
                auto p = add_params(g, params);
                auto planned = plan(g, g.constant(make_observation(task).stacked()), p, cfg);
                std::vector<NodeId> terms;
                for (const Cell& c : task.start_cells()) {
                    for (auto& [n, id] : planned.recorded) {
                        terms.push_back(g.cross_entropy(policy_logits(g, id, c, p), static_cast<std::size_t>(task.label(c))));
                    }
                }
                auto loss = g.weighted_sum(terms, 1.0 / static_cast<double>(terms.size()));
                dtvin::gradcore::FdOptions opt;
                opt.seed = seed;
                auto report = finite_difference_check(g, loss, opt);
                CHECK(report.finite);
                CHECK_MESSAGE(report.max_rel_error <= 1e-6, variant_name(v), " softmax=", softmax, " worst ", report.worst_param);
                CHECK(report.checked > 0);
            }
        }
    }
}

TEST_CASE("checkpoint round trip is bit exact") {
    for (auto v : kVariants) {
        auto cfg = small_config(v, 7, 12, 4);
        cfg.apply_softmax = v != KernelVariant::ObservationDynamic;
        Checkpoint ck{init_params(cfg, 77), {}};
        ck.model.at("policy.b")[0] = -0.0;
        ck.model.at("policy.b")[1] = 1e-310;
        ck.extra["meta.epoch"] = NdArray::scalar(3.0);
        auto bytes = encode_checkpoint(ck);
        auto back = decode_checkpoint(bytes);
        CHECK(encode_checkpoint(back) == bytes);
        CHECK(back.model.config.variant == v);
        CHECK(back.model.config.apply_softmax == cfg.apply_softmax);
        CHECK(back.model.config.depth == 12);
        CHECK(back.model.config.jump == 4);
        CHECK(back.extra.at("meta.epoch")[0] == 3.0);
        CHECK(std::signbit(back.model.at("policy.b")[0]));
        CHECK(bytes[0] == 'D');
        CHECK(bytes[8] == static_cast<std::uint8_t>(v));

        auto cut = bytes;
        cut.resize(cut.size() - 3);
        CHECK_THROWS(decode_checkpoint(cut));
    }
}

TEST_CASE("expert parameters produce shortest-path greedy rollouts") {
    for (auto type : {TransitionType::News, TransitionType::Moore}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto maze = mw::generate_maze(15, seed, seed % 2 == 0 ? 0.0 : 0.3);
            auto task = mw::make_task(maze.grid, maze.goal, type);
            auto params = expert_params(15, type, 120);
            const auto value = plan_values(make_observation(task), params).final_value();
            const auto mv = mw::moves(type);
            for (const Cell& start : task.start_cells()) {
                Cell cur = start;
                int steps = 0;
                while (cur != task.goal && steps < 225) {
                    auto logits = policy_logits(value, cur, params);
                    const auto a = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
                    const Cell nb{cur.row + mv[a].drow, cur.col + mv[a].dcol};
                    if (task.grid.is_road(nb)) cur = nb;
                    ++steps;
                }
                REQUIRE(cur == task.goal);
                CHECK(steps == task.distance(start));
            }
        }
    }
}

TEST_CASE("oracle_check: passes by default, trivially at zero steps, fails under perturbation") {
    auto ok = oracle_check(7, 20, 3);
    CHECK(ok.passed);
    CHECK(ok.mazes == 20);
    CHECK(ok.max_abs_error <= 1e-10);
    CHECK(oracle_check(7, 0, 3).passed);
    CHECK(oracle_check(7, 20, 3, 4, TransitionType::Moore).passed);
    auto bad = oracle_check(7, 20, 3, 4, TransitionType::News, 0.25);
    CHECK_FALSE(bad.passed);
    CHECK(bad.max_abs_error > 1e-3);
}
