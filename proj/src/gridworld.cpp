#include "mindgrid/gridworld.hpp"

#include <algorithm>
#include <deque>

#include "mindgrid/error.hpp"

namespace mindgrid {

std::string task_name(Task t) {
    switch (t) {
    case Task::maze: return "maze";
    case Task::mini_behavior: return "minibehavior";
    case Task::frozen_lake: return "frozenlake";
    }
    return "?";
}

Task task_from_name(const std::string& name) {
    if (name == "maze") return Task::maze;
    if (name == "minibehavior") return Task::mini_behavior;
    if (name == "frozenlake") return Task::frozen_lake;
    fail(ErrorKind::invalid_argument, "unknown task: " + name);
}

void validate_spec(const GridSpec& spec) {
    const bool ok = (spec.task == Task::mini_behavior) ? (spec.size >= 5 && spec.size <= 10)
                                                       : (spec.size >= 3 && spec.size <= 6);
    require(ok, ErrorKind::invalid_spec,
            "grid size " + std::to_string(spec.size) + " out of range for " + task_name(spec.task));
}

std::string action_text(ActionKind a) {
    switch (a) {
    case ActionKind::up: return "Go up.";
    case ActionKind::down: return "Go down.";
    case ActionKind::left: return "Go left.";
    case ActionKind::right: return "Go right.";
    case ActionKind::pick_up: return "Pick up.";
    case ActionKind::drop: return "Drop.";
    case ActionKind::toggle: return "Toggle.";
    }
    return "?";
}

bool is_move(ActionKind a) {
    return a == ActionKind::up || a == ActionKind::down || a == ActionKind::left || a == ActionKind::right;
}

Task task_of(const EnvState& env) {
    if (std::holds_alternative<MazeEnv>(env)) return Task::maze;
    if (std::holds_alternative<PrinterEnv>(env)) return Task::mini_behavior;
    return Task::frozen_lake;
}

int grid_size_of(const EnvState& env) {
    return std::visit([](const auto& e) { return e.size; }, env);
}

char option_letter(OutcomeLabel label) {
    switch (label) {
    case OutcomeLabel::maze_a: return 'A';
    case OutcomeLabel::maze_b: return 'B';
    case OutcomeLabel::maze_c: return 'C';
    case OutcomeLabel::maze_d: return 'D';
    case OutcomeLabel::mb_success: return 'A';
    case OutcomeLabel::mb_drop_error: return 'B';
    case OutcomeLabel::mb_pick_up_error: return 'C';
    case OutcomeLabel::mb_missing_objects: return 'D';
    case OutcomeLabel::fl_success: return 'A';
    case OutcomeLabel::fl_fell_in_hole: return 'B';
    case OutcomeLabel::fl_safe_no_reach: return 'C';
    }
    return '?';
}

Cell clamp_cell(Cell c, int size) {
    c.x = std::clamp(c.x, 0, size - 1);
    c.y = std::clamp(c.y, 0, size - 1);
    return c;
}

Cell moved_cell(Cell c, ActionKind a, int size) {
    switch (a) {
    case ActionKind::up: c.y -= 1; break;
    case ActionKind::down: c.y += 1; break;
    case ActionKind::left: c.x -= 1; break;
    case ActionKind::right: c.x += 1; break;
    default: break;
    }
    return clamp_cell(c, size);
}

bool adjacent4(Cell a, Cell b) {
    return std::abs(a.x - b.x) + std::abs(a.y - b.y) == 1;
}

namespace {

struct Dir {
    int dx, dy;
    uint8_t bit;
    uint8_t opposite;
};

constexpr std::array<Dir, 4> dirs = {{
    {0, -1, passage::up, passage::down},
    {0, 1, passage::down, passage::up},
    {-1, 0, passage::left, passage::right},
    {1, 0, passage::right, passage::left},
}};

uint8_t passage_bit(ActionKind a) {
    switch (a) {
    case ActionKind::up: return passage::up;
    case ActionKind::down: return passage::down;
    case ActionKind::left: return passage::left;
    case ActionKind::right: return passage::right;
    default: return 0;
    }
}

Cell random_cell(Rng& rng, int size) {
    return Cell{rng.range_int(0, size - 1), rng.range_int(0, size - 1)};
}

} // namespace

MazeEnv generate_maze(const GridSpec& spec) {
    require(spec.task == Task::maze, ErrorKind::invalid_spec, "generate_maze needs a maze spec");
    validate_spec(spec);

    const int n = spec.size;
    MazeEnv env;
    env.size = n;
    env.walls.assign(static_cast<std::size_t>(n) * n, 0);

    Rng rng = Rng(spec.seed).split("maze_dfs");
    std::vector<bool> visited(static_cast<std::size_t>(n) * n, false);
    std::vector<Cell> stack;
    Cell first = random_cell(rng, n);
    visited[static_cast<std::size_t>(first.y) * n + first.x] = true;
    stack.push_back(first);

    while (!stack.empty()) {
        Cell cur = stack.back();
        std::array<int, 4> order = {0, 1, 2, 3};
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        bool advanced = false;
        for (int oi : order) {
            const Dir& d = dirs[static_cast<std::size_t>(oi)];
            Cell nxt{cur.x + d.dx, cur.y + d.dy};
            if (nxt.x < 0 || nxt.y < 0 || nxt.x >= n || nxt.y >= n) continue;
            std::size_t ni = static_cast<std::size_t>(nxt.y) * n + nxt.x;
            if (visited[ni]) continue;
            env.walls[static_cast<std::size_t>(cur.y) * n + cur.x] |= d.bit;
            env.walls[ni] |= d.opposite;
            visited[ni] = true;
            stack.push_back(nxt);
            advanced = true;
            break;
        }
        if (!advanced) {
            stack.pop_back();
        }
    }

    Rng place = Rng(spec.seed).split("maze_place");
    env.agent = random_cell(place, n);
    env.path_history = {env.agent};

    // Four distinct destination cells, none on the start.
    std::set<Cell> chosen;
    while (chosen.size() < 4) {
        Cell c = random_cell(place, n);
        if (c != env.agent) {
            chosen.insert(c);
        }
    }
    std::vector<Cell> cells(chosen.begin(), chosen.end());
    place.shuffle(cells);
    const char letters[4] = {'A', 'B', 'C', 'D'};
    for (int i = 0; i < 4; ++i) {
        env.destinations[letters[i]] = cells[static_cast<std::size_t>(i)];
    }
    return env;
}

namespace {

std::pair<MazeEnv, StepEffect> step_maze(MazeEnv env, Action action) {
    StepEffect fx;
    if (!is_move(action.kind)) {
        return {std::move(env), fx}; // not a maze action; no-op
    }
    const uint8_t bit = passage_bit(action.kind);
    if ((env.mask_at(env.agent) & bit) == 0) {
        fx.blocked = true;
        return {std::move(env), fx};
    }
    env.agent = moved_cell(env.agent, action.kind, env.size);
    env.path_history.push_back(env.agent);
    fx.moved = true;
    return {std::move(env), fx};
}

std::pair<PrinterEnv, StepEffect> step_printer(PrinterEnv env, Action action) {
    StepEffect fx;
    switch (action.kind) {
    case ActionKind::up:
    case ActionKind::down:
    case ActionKind::left:
    case ActionKind::right: {
        Cell target = moved_cell(env.agent, action.kind, env.size);
        if (target == env.agent) {
            break; // clamped at the boundary
        }
        const bool obstacle = env.table.count(target) > 0 || (env.printer && *env.printer == target);
        if (obstacle) {
            fx.blocked = true;
            break;
        }
        env.agent = target;
        fx.moved = true;
        break;
    }
    case ActionKind::pick_up:
        if (!env.carrying && env.printer && adjacent4(env.agent, *env.printer)) {
            env.printer.reset(); // removed from the map while carried
            env.carrying = true;
            fx.picked = true;
        }
        break;
    case ActionKind::drop: {
        if (!env.carrying) {
            break;
        }
        // First adjacent table cell in row-major order.
        std::optional<Cell> slot;
        for (const Cell& t : env.table) {
            if (adjacent4(env.agent, t) && (!slot || std::pair(t.y, t.x) < std::pair(slot->y, slot->x))) {
                slot = t;
            }
        }
        if (slot) {
            env.printer = *slot;
            env.carrying = false;
            fx.dropped = true;
        }
        break;
    }
    case ActionKind::toggle:
        if (env.printer_on_table() && adjacent4(env.agent, *env.printer)) {
            env.toggled = true;
            fx.toggled = true;
        }
        break;
    }
    return {std::move(env), fx};
}

std::pair<LakeEnv, StepEffect> step_lake(LakeEnv env, Action action) {
    StepEffect fx;
    if (!is_move(action.kind)) {
        return {std::move(env), fx};
    }
    Cell target = moved_cell(env.agent, action.kind, env.size);
    fx.moved = target != env.agent;
    env.agent = target;
    if (env.holes.count(env.agent) > 0) {
        fx.fell = true;
    } else if (env.agent == env.gift) {
        fx.reached = true;
    }
    return {std::move(env), fx};
}

} // namespace

std::pair<EnvState, StepEffect> step(const EnvState& env, Action action) {
    if (const auto* m = std::get_if<MazeEnv>(&env)) {
        auto [e, fx] = step_maze(*m, action);
        return {EnvState(std::move(e)), fx};
    }
    if (const auto* p = std::get_if<PrinterEnv>(&env)) {
        auto [e, fx] = step_printer(*p, action);
        return {EnvState(std::move(e)), fx};
    }
    auto [e, fx] = step_lake(std::get<LakeEnv>(env), action);
    return {EnvState(std::move(e)), fx};
}

Replay replay_actions(const EnvState& env0, const std::vector<Action>& actions) {
    require(!actions.empty(), ErrorKind::invalid_argument, "empty action sequence");
    Replay out;
    const Task task = task_of(env0);

    if (task == Task::mini_behavior) {
        const auto& p = std::get<PrinterEnv>(env0);
        if (!p.printer || p.table.empty()) {
            out.outcome = {OutcomeLabel::mb_missing_objects};
            return out;
        }
    }

    EnvState cur = env0;
    bool picked = false, dropped = false, toggled = false;
    for (const Action& a : actions) {
        auto [nxt, fx] = step(cur, a);
        out.steps.push_back({a, fx, nxt});
        cur = std::move(nxt);
        switch (task) {
        case Task::frozen_lake:
            if (fx.fell) {
                out.outcome = {OutcomeLabel::fl_fell_in_hole};
                return out;
            }
            if (fx.reached) {
                out.outcome = {OutcomeLabel::fl_success};
                return out;
            }
            break;
        case Task::mini_behavior:
            if (a.kind == ActionKind::pick_up && !fx.picked) {
                out.outcome = {OutcomeLabel::mb_pick_up_error};
                return out;
            }
            if (a.kind == ActionKind::drop && !fx.dropped) {
                out.outcome = {OutcomeLabel::mb_drop_error};
                return out;
            }
            picked |= fx.picked;
            dropped |= fx.dropped;
            toggled |= fx.toggled;
            break;
        case Task::maze:
            break;
        }
    }

    switch (task) {
    case Task::frozen_lake:
        out.outcome = {OutcomeLabel::fl_safe_no_reach};
        return out;
    case Task::mini_behavior:
        if (picked && dropped && toggled) {
            out.outcome = {OutcomeLabel::mb_success};
            return out;
        }
        fail(ErrorKind::no_matching_option, "mini_behavior replay ended without a classifiable outcome");
    case Task::maze: {
        const auto& m = std::get<MazeEnv>(cur);
        for (const auto& [letter, cell] : m.destinations) {
            if (cell == m.agent) {
                out.outcome = {static_cast<OutcomeLabel>(letter - 'A')};
                return out;
            }
        }
        fail(ErrorKind::no_matching_option, "maze replay ended on an unlabeled cell");
    }
    }
    fail(ErrorKind::no_matching_option, "unreachable");
}

Outcome classify_outcome(const EnvState& env0, const std::vector<Action>& actions) {
    return replay_actions(env0, actions).outcome;
}

ActionKind QTable::greedy(Cell c) const {
    const auto& row = q[static_cast<std::size_t>(c.y) * size + c.x];
    int best = 0;
    for (int a = 1; a < 4; ++a) {
        if (row[static_cast<std::size_t>(a)] > row[static_cast<std::size_t>(best)]) {
            best = a;
        }
    }
    constexpr ActionKind moves[4] = {ActionKind::up, ActionKind::down, ActionKind::left, ActionKind::right};
    return moves[best];
}

QTable qlearn_lake(const LakeEnv& env0, int episodes, uint64_t seed) {
    require(episodes > 0, ErrorKind::invalid_argument, "episodes must be positive");
    constexpr double alpha = 0.1, gamma = 0.95, epsilon = 0.2;
    constexpr ActionKind moves[4] = {ActionKind::up, ActionKind::down, ActionKind::left, ActionKind::right};

    QTable table;
    table.size = env0.size;
    table.q.assign(static_cast<std::size_t>(env0.size) * env0.size, {0.0, 0.0, 0.0, 0.0});

    Rng rng = Rng(seed).split("qlearn");
    const int max_steps = 4 * env0.size * env0.size;

    for (int ep = 0; ep < episodes; ++ep) {
        Cell s = env0.agent;
        for (int t = 0; t < max_steps; ++t) {
            std::size_t si = static_cast<std::size_t>(s.y) * env0.size + s.x;
            int a;
            if (rng.uniform01() < epsilon) {
                a = static_cast<int>(rng.below(4));
            } else {
                // Greedy with seeded random tie-breaking; without it the
                // all-zero initial table degenerates to a single action.
                const auto& row = table.q[si];
                double best = *std::max_element(row.begin(), row.end());
                std::array<int, 4> ties{};
                int tie_count = 0;
                for (int k = 0; k < 4; ++k) {
                    if (row[static_cast<std::size_t>(k)] == best) {
                        ties[static_cast<std::size_t>(tie_count++)] = k;
                    }
                }
                a = ties[static_cast<std::size_t>(rng.below(static_cast<uint64_t>(tie_count)))];
            }
            Cell ns = moved_cell(s, moves[a], env0.size);
            std::size_t ni = static_cast<std::size_t>(ns.y) * env0.size + ns.x;
            const bool hole = env0.holes.count(ns) > 0;
            const bool goal = !hole && ns == env0.gift;
            const double r = hole ? -1.0 : (goal ? 1.0 : 0.0);
            double target = r;
            if (!hole && !goal) {
                target += gamma * *std::max_element(table.q[ni].begin(), table.q[ni].end());
            }
            table.q[si][static_cast<std::size_t>(a)] += alpha * (target - table.q[si][static_cast<std::size_t>(a)]);
            if (hole || goal) {
                break;
            }
            s = ns;
        }
    }
    return table;
}

PrinterEnv mutate_printer_layout(const PrinterEnv& env, uint64_t seed) {
    Rng rng = Rng(seed).split("mutate_layout");
    PrinterEnv out = env;
    const double u = rng.uniform01();

    auto free_cells = [&](const PrinterEnv& e, bool for_printer) {
        std::vector<Cell> cells;
        for (int y = 0; y < e.size; ++y) {
            for (int x = 0; x < e.size; ++x) {
                Cell c{x, y};
                if (c == e.agent) continue;
                if (e.table.count(c) > 0) continue;
                if (e.printer && c == *e.printer) continue;
                (void)for_printer;
                cells.push_back(c);
            }
        }
        return cells;
    };

    if (u < 0.4) {
        // Relocate the printer.
        auto cells = free_cells(out, true);
        require(!cells.empty(), ErrorKind::infeasible, "no free cell to relocate the printer");
        out.printer = rng.pick(cells);
    } else if (u < 0.8) {
        // Relocate the table rectangle, keeping its dimensions.
        if (out.table.empty()) {
            fail(ErrorKind::infeasible, "no table to relocate");
        }
        int min_x = out.size, min_y = out.size, max_x = -1, max_y = -1;
        for (const Cell& c : out.table) {
            min_x = std::min(min_x, c.x);
            max_x = std::max(max_x, c.x);
            min_y = std::min(min_y, c.y);
            max_y = std::max(max_y, c.y);
        }
        const int w = max_x - min_x + 1, h = max_y - min_y + 1;
        std::vector<std::pair<int, int>> anchors;
        for (int y = 0; y + h <= out.size; ++y) {
            for (int x = 0; x + w <= out.size; ++x) {
                bool clash = false;
                for (int dy = 0; dy < h && !clash; ++dy) {
                    for (int dx = 0; dx < w && !clash; ++dx) {
                        Cell c{x + dx, y + dy};
                        clash = c == out.agent || (out.printer && c == *out.printer);
                    }
                }
                if (!clash && !(x == min_x && y == min_y)) {
                    anchors.push_back({x, y});
                }
            }
        }
        require(!anchors.empty(), ErrorKind::infeasible, "no free area to relocate the table");
        auto [ax, ay] = anchors[static_cast<std::size_t>(rng.below(anchors.size()))];
        out.table.clear();
        for (int dy = 0; dy < h; ++dy) {
            for (int dx = 0; dx < w; ++dx) {
                out.table.insert(Cell{ax + dx, ay + dy});
            }
        }
    } else {
        // Remove the printer or the table.
        if (rng.below(2) == 0) {
            out.printer.reset();
        } else {
            out.table.clear();
        }
    }
    return out;
}

std::vector<Action> solve_maze(const MazeEnv& env, Cell target) {
    const int n = env.size;
    std::vector<int> prev(static_cast<std::size_t>(n) * n, -1);
    std::vector<ActionKind> via(static_cast<std::size_t>(n) * n, ActionKind::up);
    std::deque<Cell> queue{env.agent};
    prev[static_cast<std::size_t>(env.agent.y) * n + env.agent.x] =
        static_cast<int>(env.agent.y) * n + env.agent.x;

    constexpr std::array<std::pair<ActionKind, uint8_t>, 4> moves = {{
        {ActionKind::up, passage::up},
        {ActionKind::down, passage::down},
        {ActionKind::left, passage::left},
        {ActionKind::right, passage::right},
    }};

    while (!queue.empty()) {
        Cell cur = queue.front();
        queue.pop_front();
        if (cur == target) break;
        for (auto [kind, bit] : moves) {
            if ((env.mask_at(cur) & bit) == 0) continue;
            Cell nxt = moved_cell(cur, kind, n);
            std::size_t ni = static_cast<std::size_t>(nxt.y) * n + nxt.x;
            if (prev[ni] != -1) continue;
            prev[ni] = static_cast<int>(cur.y) * n + cur.x;
            via[ni] = kind;
            queue.push_back(nxt);
        }
    }

    std::size_t ti = static_cast<std::size_t>(target.y) * n + target.x;
    require(prev[ti] != -1, ErrorKind::invalid_argument, "maze target unreachable");
    std::vector<Action> actions;
    Cell cur = target;
    while (cur != env.agent) {
        std::size_t ci = static_cast<std::size_t>(cur.y) * n + cur.x;
        actions.push_back({via[ci]});
        int pi = prev[ci];
        cur = Cell{pi % n, pi / n};
    }
    std::reverse(actions.begin(), actions.end());
    return actions;
}

uint64_t wall_fingerprint(const MazeEnv& env) {
    uint64_t h = fnv1a64_bytes(env.walls.data(), env.walls.size());
    return mix64(h ^ static_cast<uint64_t>(env.size));
}

namespace {

void hash_cell(uint64_t& h, Cell c) {
    h = mix64(h ^ (static_cast<uint64_t>(static_cast<uint32_t>(c.x)) << 32 | static_cast<uint32_t>(c.y)));
}

} // namespace

uint64_t env_fingerprint(const EnvState& env) {
    uint64_t h = 0x9d2c5680u;
    if (const auto* m = std::get_if<MazeEnv>(&env)) {
        h = mix64(h ^ wall_fingerprint(*m));
        hash_cell(h, m->agent);
        for (const auto& [letter, cell] : m->destinations) {
            h = mix64(h ^ static_cast<uint64_t>(letter));
            hash_cell(h, cell);
        }
    } else if (const auto* p = std::get_if<PrinterEnv>(&env)) {
        h = mix64(h ^ static_cast<uint64_t>(p->size));
        hash_cell(h, p->agent);
        h = mix64(h ^ static_cast<uint64_t>(p->carrying ? 7 : 3));
        if (p->printer) hash_cell(h, *p->printer);
        for (const Cell& c : p->table) hash_cell(h, c);
        h = mix64(h ^ static_cast<uint64_t>(p->toggled ? 11 : 5));
    } else {
        const auto& l = std::get<LakeEnv>(env);
        h = mix64(h ^ static_cast<uint64_t>(l.size));
        hash_cell(h, l.agent);
        hash_cell(h, l.gift);
        for (const Cell& c : l.holes) hash_cell(h, c);
    }
    return h;
}

std::string action_string(const std::vector<Action>& actions) {
    static constexpr char codes[] = {'U', 'D', 'L', 'R', 'P', 'O', 'T'};
    std::string s;
    s.reserve(actions.size());
    for (const Action& a : actions) {
        s.push_back(codes[static_cast<std::size_t>(a.kind)]);
    }
    return s;
}

} // namespace mindgrid
