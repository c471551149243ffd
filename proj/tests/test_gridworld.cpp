#include <doctest.h>

#include <algorithm>
#include <array>
#include <map>
#include <queue>
#include <set>

#include "mindgrid/error.hpp"
#include "mindgrid/gridworld.hpp"

using namespace mindgrid;

namespace {

LakeEnv small_lake() {
    LakeEnv env;
    env.size = 3;
    env.agent = {1, 2};
    env.holes = {{1, 0}, {0, 1}};
    env.gift = {2, 1};
    return env;
}

// Mini-behavior layout from the reasoning-transcript fixture: agent at [2,7],
// printer at [3,8], 2x3 table block at x 5..7, y 6..7 on a 9x9 grid.
PrinterEnv fixture_printer() {
    PrinterEnv env;
    env.size = 9;
    env.agent = {2, 7};
    env.printer = Cell{3, 8};
    for (int x = 5; x <= 7; ++x) {
        for (int y = 6; y <= 7; ++y) {
            env.table.insert(Cell{x, y});
        }
    }
    return env;
}

int passage_count(const MazeEnv& env) {
    int bits = 0;
    for (uint8_t m : env.walls) {
        bits += __builtin_popcount(m);
    }
    return bits / 2; // each corridor sets a bit on both sides
}

bool maze_connected(const MazeEnv& env) {
    const int n = env.size;
    std::set<Cell> seen{Cell{0, 0}};
    std::queue<Cell> q;
    q.push({0, 0});
    while (!q.empty()) {
        Cell c = q.front();
        q.pop();
        struct D { int dx, dy; uint8_t bit; };
        for (D d : {D{0, -1, passage::up}, D{0, 1, passage::down}, D{-1, 0, passage::left}, D{1, 0, passage::right}}) {
            if ((env.mask_at(c) & d.bit) == 0) continue;
            Cell nc{c.x + d.dx, c.y + d.dy};
            if (nc.x < 0 || nc.y < 0 || nc.x >= n || nc.y >= n) continue;
            if (seen.insert(nc).second) q.push(nc);
        }
    }
    return static_cast<int>(seen.size()) == n * n;
}

// Independent optimal-distance oracle: BFS over safe cells.
std::map<Cell, int> safe_distances_to_gift(const LakeEnv& env) {
    std::map<Cell, int> dist;
    dist[env.gift] = 0;
    std::queue<Cell> q;
    q.push(env.gift);
    while (!q.empty()) {
        Cell c = q.front();
        q.pop();
        for (auto [dx, dy] : std::array<std::pair<int, int>, 4>{{{0, -1}, {0, 1}, {-1, 0}, {1, 0}}}) {
            Cell nc{c.x + dx, c.y + dy};
            if (nc.x < 0 || nc.y < 0 || nc.x >= env.size || nc.y >= env.size) continue;
            if (env.holes.count(nc) > 0 || dist.count(nc) > 0) continue;
            dist[nc] = dist[c] + 1;
            q.push(nc);
        }
    }
    return dist;
}

} // namespace

TEST_CASE("maze generation yields a spanning tree, deterministically") {
    GridSpec spec{Task::maze, 3, 42};
    MazeEnv env = generate_maze(spec);
    CHECK(env.walls.size() == 9);
    CHECK(passage_count(env) == 8);
    CHECK(maze_connected(env));

    MazeEnv again = generate_maze(spec);
    CHECK(env.walls == again.walls);
    CHECK(env.agent == again.agent);
    CHECK(env.destinations == again.destinations);

    for (uint64_t seed = 0; seed < 1000; ++seed) {
        for (int size : {3, 4, 5, 6}) {
            MazeEnv m = generate_maze({Task::maze, size, seed});
            REQUIRE(passage_count(m) == size * size - 1);
            REQUIRE(maze_connected(m));
        }
    }
}

TEST_CASE("maze destinations occupy four distinct cells off the start") {
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        MazeEnv env = generate_maze({Task::maze, 4, seed});
        REQUIRE(env.destinations.size() == 4);
        std::set<Cell> cells;
        for (const auto& [letter, cell] : env.destinations) {
            cells.insert(cell);
            REQUIRE(cell != env.path_history.front());
        }
        REQUIRE(cells.size() == 4);
    }
}

TEST_CASE("maze spec range is enforced") {
    CHECK_THROWS_AS((void)generate_maze({Task::maze, 2, 0}), Error);
    CHECK_THROWS_AS((void)generate_maze({Task::maze, 7, 0}), Error);
}

TEST_CASE("lake step moves, clamps at the boundary, and reports falls") {
    LakeEnv env = small_lake();

    auto [s1, fx1] = step(EnvState(env), {ActionKind::right});
    const auto& l1 = std::get<LakeEnv>(s1);
    CHECK(l1.agent == Cell{2, 2});
    CHECK(fx1.moved);
    CHECK_FALSE(fx1.fell);

    LakeEnv edge = env;
    edge.agent = {0, 2};
    auto [s2, fx2] = step(EnvState(edge), {ActionKind::left});
    CHECK(std::get<LakeEnv>(s2).agent == Cell{0, 2});
    CHECK_FALSE(fx2.moved);
    CHECK_FALSE(fx2.blocked);

    LakeEnv near_hole = env;
    near_hole.agent = {1, 1};
    auto [s3, fx3] = step(EnvState(near_hole), {ActionKind::up});
    CHECK(fx3.fell);
    CHECK(std::get<LakeEnv>(s3).agent == Cell{1, 0});
}

TEST_CASE("printer pick up removes the printer from the map") {
    PrinterEnv env = fixture_printer();
    env.agent = {3, 7};
    auto [s, fx] = step(EnvState(env), {ActionKind::pick_up});
    const auto& p = std::get<PrinterEnv>(s);
    CHECK(fx.picked);
    CHECK(p.carrying);
    CHECK_FALSE(p.printer.has_value());
}

TEST_CASE("printer pick up fails without adjacency") {
    PrinterEnv env = fixture_printer();
    auto [s, fx] = step(EnvState(env), {ActionKind::pick_up});
    CHECK_FALSE(fx.picked);
    CHECK_FALSE(std::get<PrinterEnv>(s).carrying);
}

TEST_CASE("printer cells and table cells block movement") {
    PrinterEnv env = fixture_printer();
    env.agent = {3, 7}; // printer is at (3,8)
    auto [s, fx] = step(EnvState(env), {ActionKind::down});
    CHECK(fx.blocked);
    CHECK(std::get<PrinterEnv>(s).agent == Cell{3, 7});

    env.agent = {4, 7}; // table at (5,7)
    auto [s2, fx2] = step(EnvState(env), {ActionKind::right});
    CHECK(fx2.blocked);
    CHECK(std::get<PrinterEnv>(s2).agent == Cell{4, 7});
}

TEST_CASE("lake outcomes: success, fall-with-ignored-tail, safe-no-reach") {
    LakeEnv env = small_lake();

    LakeEnv one_right = env;
    one_right.agent = {1, 1};
    CHECK(classify_outcome(EnvState(one_right), {{ActionKind::right}}).label == OutcomeLabel::fl_success);

    LakeEnv near_hole = env;
    near_hole.agent = {1, 1};
    Replay rep = replay_actions(EnvState(near_hole), {{ActionKind::up}, {ActionKind::right}});
    CHECK(rep.outcome.label == OutcomeLabel::fl_fell_in_hole);
    CHECK(rep.steps.size() == 1); // replay stops at the hole

    CHECK(classify_outcome(EnvState(env), {{ActionKind::down}}).label == OutcomeLabel::fl_safe_no_reach);
}

TEST_CASE("printer fixture transcript ends in success") {
    PrinterEnv env = fixture_printer();
    std::vector<Action> actions = {{ActionKind::up},   {ActionKind::up},   {ActionKind::right},
                                   {ActionKind::down}, {ActionKind::down}, {ActionKind::pick_up},
                                   {ActionKind::right}, {ActionKind::drop}, {ActionKind::toggle}};
    Replay rep = replay_actions(EnvState(env), actions);
    CHECK(rep.outcome.label == OutcomeLabel::mb_success);

    // picked, dropped, toggled appear in that order
    int picked_at = -1, dropped_at = -1, toggled_at = -1;
    for (std::size_t i = 0; i < rep.steps.size(); ++i) {
        if (rep.steps[i].effect.picked) picked_at = static_cast<int>(i);
        if (rep.steps[i].effect.dropped) dropped_at = static_cast<int>(i);
        if (rep.steps[i].effect.toggled) toggled_at = static_cast<int>(i);
    }
    CHECK(picked_at >= 0);
    CHECK(picked_at < dropped_at);
    CHECK(dropped_at < toggled_at);

    // The drop lands on the first adjacent table cell, and the toggle flips it on.
    const auto& final_env = std::get<PrinterEnv>(rep.steps.back().state_after);
    CHECK(final_env.printer == Cell{5, 7});
    CHECK(final_env.toggled);
}

TEST_CASE("printer outcomes cover the failure options") {
    PrinterEnv env = fixture_printer();

    PrinterEnv no_printer = env;
    no_printer.printer.reset();
    CHECK(classify_outcome(EnvState(no_printer), {{ActionKind::up}}).label ==
          OutcomeLabel::mb_missing_objects);

    PrinterEnv no_table = env;
    no_table.table.clear();
    CHECK(classify_outcome(EnvState(no_table), {{ActionKind::up}}).label ==
          OutcomeLabel::mb_missing_objects);

    // Pick up away from the printer fails immediately.
    CHECK(classify_outcome(EnvState(env), {{ActionKind::pick_up}}).label ==
          OutcomeLabel::mb_pick_up_error);

    // Drop while next to no table fails.
    PrinterEnv carrying = env;
    carrying.agent = {3, 7};
    std::vector<Action> acts = {{ActionKind::pick_up}, {ActionKind::drop}};
    CHECK(classify_outcome(EnvState(carrying), acts).label == OutcomeLabel::mb_drop_error);
}

TEST_CASE("maze replay of the gold path lands on the gold label") {
    for (uint64_t seed = 0; seed < 200; ++seed) {
        MazeEnv env = generate_maze({Task::maze, 5, seed});
        for (const auto& [letter, cell] : env.destinations) {
            std::vector<Action> path = solve_maze(env, cell);
            if (path.empty()) continue;
            Outcome out = classify_outcome(EnvState(env), path);
            REQUIRE(option_letter(out.label) == letter);
        }
    }
}

TEST_CASE("step is pure: replaying yields identical terminal states") {
    MazeEnv env = generate_maze({Task::maze, 4, 9});
    std::vector<Action> path = solve_maze(env, env.destinations.at('B'));
    if (!path.empty()) {
        Replay a = replay_actions(EnvState(env), path);
        Replay b = replay_actions(EnvState(env), path);
        REQUIRE(a.steps.size() == b.steps.size());
        const auto& ma = std::get<MazeEnv>(a.steps.back().state_after);
        const auto& mb = std::get<MazeEnv>(b.steps.back().state_after);
        CHECK(ma.agent == mb.agent);
        CHECK(ma.path_history == mb.path_history);
    }
}

TEST_CASE("q-learning reaches the gift on an open 3x3 lake") {
    LakeEnv env;
    env.size = 3;
    env.agent = {0, 0};
    env.gift = {2, 2};

    QTable q = qlearn_lake(env, 500, 7);
    QTable q2 = qlearn_lake(env, 500, 7);
    CHECK(q.q == q2.q); // determinism

    Cell pos = env.agent;
    bool reached = false;
    for (int t = 0; t < 20 && !reached; ++t) {
        pos = moved_cell(pos, q.greedy(pos), env.size);
        reached = pos == env.gift;
    }
    CHECK(reached);
}

TEST_CASE("q-learning greedy paths are optimal on a solvable lake") {
    LakeEnv env;
    env.size = 4;
    env.agent = {0, 0};
    env.gift = {3, 3};
    env.holes = {{1, 1}, {2, 3}, {3, 1}};

    QTable q = qlearn_lake(env, 4000, 11);
    auto dist = safe_distances_to_gift(env);
    // The greedy rollout from the start must follow an optimal safe path;
    // the BFS distance map is the independent oracle.
    const int optimal = dist.at(env.agent);
    Cell pos = env.agent;
    int steps = 0;
    while (pos != env.gift && steps <= optimal) {
        pos = moved_cell(pos, q.greedy(pos), env.size);
        ++steps;
        REQUIRE(env.holes.count(pos) == 0);
        REQUIRE(dist.at(pos) == optimal - steps);
    }
    REQUIRE(pos == env.gift);
    REQUIRE(steps == optimal);
}

TEST_CASE("q-learning on an unsolvable lake never reaches the gift") {
    LakeEnv env;
    env.size = 4;
    env.agent = {0, 0};
    env.gift = {3, 3};
    env.holes = {{2, 3}, {3, 2}, {2, 2}}; // gift enclosed

    QTable q = qlearn_lake(env, 1500, 3);
    Cell pos = env.agent;
    bool success = false;
    for (int t = 0; t < 64; ++t) {
        pos = moved_cell(pos, q.greedy(pos), env.size);
        if (env.holes.count(pos) > 0) break;
        if (pos == env.gift) {
            success = true;
            break;
        }
    }
    CHECK_FALSE(success);
    CHECK_THROWS_AS((void)qlearn_lake(env, 0, 3), Error);
}

TEST_CASE("layout mutation branches match the stated probabilities") {
    PrinterEnv env = fixture_printer();

    int moved_printer = 0, moved_table = 0, removed = 0;
    bool saw_low_seed_branch = false, saw_high_seed_branch = false;
    const int trials = 10000;
    for (int s = 0; s < trials; ++s) {
        PrinterEnv m = mutate_printer_layout(env, static_cast<uint64_t>(s));
        const bool printer_absent = !m.printer.has_value();
        const bool table_absent = m.table.empty();
        if (printer_absent || table_absent) {
            ++removed;
            CHECK(printer_absent != table_absent); // exactly one removed
            saw_high_seed_branch = true;
        } else if (m.printer != env.printer) {
            ++moved_printer;
            CHECK(m.table == env.table);
            saw_low_seed_branch = true;
        } else {
            CHECK(m.table != env.table);
            ++moved_table;
        }
        // Relocations never land on the agent or another entity.
        if (m.printer) {
            CHECK(*m.printer != m.agent);
            CHECK(m.table.count(*m.printer) == 0);
        }
        CHECK(m.table.count(m.agent) == 0);
    }
    CHECK(moved_printer / double(trials) == doctest::Approx(0.4).epsilon(0.05));
    CHECK(moved_table / double(trials) == doctest::Approx(0.4).epsilon(0.05));
    CHECK(removed / double(trials) == doctest::Approx(0.2).epsilon(0.1));
    CHECK(std::abs(moved_printer / double(trials) - 0.4) < 0.02);
    CHECK(std::abs(moved_table / double(trials) - 0.4) < 0.02);
    CHECK(std::abs(removed / double(trials) - 0.2) < 0.02);
    CHECK(saw_low_seed_branch);
    CHECK(saw_high_seed_branch);
}

TEST_CASE("fell-in-hole implies the shortest failing prefix ends on a hole") {
    Rng rng(123);
    for (int trial = 0; trial < 300; ++trial) {
        LakeEnv env;
        env.size = rng.range_int(3, 6);
        env.agent = {rng.range_int(0, env.size - 1), rng.range_int(0, env.size - 1)};
        do {
            env.gift = {rng.range_int(0, env.size - 1), rng.range_int(0, env.size - 1)};
        } while (env.gift == env.agent);
        for (int i = 0; i < env.size; ++i) {
            Cell h{rng.range_int(0, env.size - 1), rng.range_int(0, env.size - 1)};
            if (h != env.agent && h != env.gift) env.holes.insert(h);
        }
        std::vector<Action> actions;
        const ActionKind moves[4] = {ActionKind::up, ActionKind::down, ActionKind::left, ActionKind::right};
        for (int i = 0, n = rng.range_int(1, 12); i < n; ++i) {
            actions.push_back({moves[rng.below(4)]});
        }
        Replay rep = replay_actions(EnvState(env), actions);
        if (rep.outcome.label == OutcomeLabel::fl_fell_in_hole) {
            // The last executed step ends on a hole; no earlier step does.
            Cell pos = env.agent;
            for (std::size_t i = 0; i < rep.steps.size(); ++i) {
                pos = moved_cell(pos, rep.steps[i].action.kind, env.size);
                const bool on_hole = env.holes.count(pos) > 0;
                REQUIRE(on_hole == (i + 1 == rep.steps.size()));
            }
        }
    }
}

TEST_CASE("action strings and fingerprints are stable") {
    MazeEnv env = generate_maze({Task::maze, 3, 5});
    CHECK(wall_fingerprint(env) == wall_fingerprint(generate_maze({Task::maze, 3, 5})));
    CHECK(env_fingerprint(EnvState(env)) == env_fingerprint(EnvState(generate_maze({Task::maze, 3, 5}))));
    CHECK(action_string({{ActionKind::up}, {ActionKind::pick_up}, {ActionKind::drop}}) == "UPO");
}
