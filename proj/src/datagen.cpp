#include "mindgrid/datagen.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mindgrid/error.hpp"

namespace mindgrid {

std::string variant_name(Variant v) {
    switch (v) {
    case Variant::direct: return "direct";
    case Variant::cot_layout: return "cot_layout";
    case Variant::cot_coords: return "cot_coords";
    case Variant::interleaved: return "interleaved";
    case Variant::visual_cot: return "visual_cot";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    for (Variant v : all_variants()) {
        if (variant_name(v) == name) return v;
    }
    fail(ErrorKind::invalid_argument, "unknown variant: " + name);
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v = {Variant::direct, Variant::cot_layout, Variant::cot_coords,
                                           Variant::interleaved, Variant::visual_cot};
    return v;
}

std::vector<int> default_sizes(Task task) {
    if (task == Task::mini_behavior) return {7, 8, 9, 10};
    return {3, 4, 5, 6};
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

uint64_t parse_hex64(const std::string& s) {
    return static_cast<uint64_t>(std::stoull(s, nullptr, 16));
}

namespace {

Example make_example(Task task, uint64_t seed, EnvState env0, std::vector<Action> actions) {
    Example ex;
    ex.task = task;
    ex.grid_size = grid_size_of(env0);
    ex.seed = seed;
    ex.env0 = env0;
    ex.actions = std::move(actions);
    Replay rep = replay_actions(env0, ex.actions);
    ex.gold = rep.outcome;
    ex.trace.reserve(rep.steps.size());
    for (ReplayStep& rs : rep.steps) {
        TileImage img = render(rs.state_after);
        ex.trace.push_back({rs.action, rs.effect, std::move(rs.state_after), std::move(img)});
    }
    ex.env_fp = env_fingerprint(env0);
    return ex;
}

long derive_budget(const DatagenConfig& cfg) {
    if (cfg.attempt_budget > 0) return cfg.attempt_budget;
    return 200L * (cfg.train_count + cfg.dev_count) + 10000;
}

std::pair<Split, Split> carve_splits(std::vector<Example> pool, const DatagenConfig& cfg,
                                     const char* what) {
    const long want = cfg.train_count + cfg.dev_count;
    if (static_cast<long>(pool.size()) < want) {
        throw ExhaustionError(std::string(what) + ": dedup exhausted the attempt budget (" +
                                  std::to_string(pool.size()) + " of " + std::to_string(want) + ")",
                              pool.size(), static_cast<std::size_t>(want));
    }
    Split train, dev;
    train.examples.assign(pool.begin(), pool.begin() + cfg.train_count);
    dev.examples.assign(pool.begin() + cfg.train_count, pool.begin() + want);
    return {std::move(train), std::move(dev)};
}

} // namespace

std::pair<Split, Split> build_maze_dataset(const DatagenConfig& cfg) {
    const std::vector<int> sizes = cfg.sizes.empty() ? default_sizes(Task::maze) : cfg.sizes;
    for (int s : sizes) validate_spec({Task::maze, s, 0});

    Rng root = Rng(cfg.seed).split("maze_dataset");
    std::set<std::pair<uint64_t, std::string>> seen; // (wall fingerprint, action string)
    std::vector<Example> pool;
    const long want = cfg.train_count + cfg.dev_count;
    const long budget = derive_budget(cfg);

    for (long attempt = 0; attempt < budget && static_cast<long>(pool.size()) < want; ++attempt) {
        Rng stream = root.split(static_cast<uint64_t>(attempt));
        const int size = sizes[stream.below(sizes.size())];
        const uint64_t env_seed = stream.next_u64();
        MazeEnv env = generate_maze({Task::maze, size, env_seed});

        const char gold = static_cast<char>('A' + stream.below(4));
        std::vector<Action> path = solve_maze(env, env.destinations.at(gold));
        if (path.empty() || static_cast<int>(path.size()) > cfg.max_maze_path) continue;
        // Repetitive-path removal: identical walls plus identical actions.
        if (!seen.insert({wall_fingerprint(env), action_string(path)}).second) continue;
        pool.push_back(make_example(Task::maze, env_seed, EnvState(env), std::move(path)));
    }
    return carve_splits(std::move(pool), cfg, "maze");
}

namespace {

std::optional<PrinterEnv> random_printer_layout(int size, Rng& rng) {
    PrinterEnv env;
    env.size = size;
    const int w = rng.range_int(2, 3);
    const int h = rng.range_int(2, 3);
    const int ax = rng.range_int(0, size - w);
    const int ay = rng.range_int(0, size - h);
    for (int dy = 0; dy < h; ++dy) {
        for (int dx = 0; dx < w; ++dx) {
            env.table.insert(Cell{ax + dx, ay + dy});
        }
    }
    std::vector<Cell> floor;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            if (env.table.count(Cell{x, y}) == 0) floor.push_back(Cell{x, y});
        }
    }
    if (floor.size() < 2) return std::nullopt;
    const std::size_t pi = rng.below(floor.size());
    env.printer = floor[pi];
    std::size_t aidx = rng.below(floor.size() - 1);
    if (aidx >= pi) ++aidx;
    env.agent = floor[aidx];
    return env;
}

// Shortest move sequence from `from` to any cell satisfying `goal`, walking
// around `obstacles`. Returns nullopt when unreachable.
std::optional<std::vector<Action>> bfs_to(const PrinterEnv& env, Cell from,
                                          const std::set<Cell>& obstacles, auto goal) {
    if (goal(from)) return std::vector<Action>{};
    const int n = env.size;
    std::vector<int> prev(static_cast<std::size_t>(n) * n, -1);
    std::vector<ActionKind> via(static_cast<std::size_t>(n) * n, ActionKind::up);
    std::vector<Cell> queue{from};
    prev[static_cast<std::size_t>(from.y) * n + from.x] = static_cast<int>(from.y) * n + from.x;
    constexpr ActionKind moves[4] = {ActionKind::up, ActionKind::down, ActionKind::left, ActionKind::right};
    for (std::size_t head = 0; head < queue.size(); ++head) {
        Cell cur = queue[head];
        for (ActionKind m : moves) {
            Cell nxt = moved_cell(cur, m, n);
            if (nxt == cur || obstacles.count(nxt) > 0) continue;
            std::size_t ni = static_cast<std::size_t>(nxt.y) * n + nxt.x;
            if (prev[ni] != -1) continue;
            prev[ni] = static_cast<int>(cur.y) * n + cur.x;
            via[ni] = m;
            if (goal(nxt)) {
                std::vector<Action> out;
                Cell c = nxt;
                while (c != from) {
                    std::size_t ci = static_cast<std::size_t>(c.y) * n + c.x;
                    out.push_back({via[ci]});
                    const int pi = prev[ci];
                    c = Cell{pi % n, pi / n};
                }
                std::reverse(out.begin(), out.end());
                return out;
            }
            queue.push_back(nxt);
        }
    }
    return std::nullopt;
}

std::optional<std::vector<Action>> plan_printer_task(const PrinterEnv& env) {
    std::set<Cell> obstacles = env.table;
    obstacles.insert(*env.printer);
    auto near_printer = [&](Cell c) { return adjacent4(c, *env.printer); };
    auto leg1 = bfs_to(env, env.agent, obstacles, near_printer);
    if (!leg1) return std::nullopt;

    Cell mid = env.agent;
    for (const Action& a : *leg1) mid = moved_cell(mid, a.kind, env.size);

    auto near_table = [&](Cell c) {
        for (const Cell& t : env.table) {
            if (adjacent4(c, t)) return true;
        }
        return false;
    };
    auto leg2 = bfs_to(env, mid, env.table, near_table);
    if (!leg2) return std::nullopt;

    std::vector<Action> actions = *leg1;
    actions.push_back({ActionKind::pick_up});
    actions.insert(actions.end(), leg2->begin(), leg2->end());
    actions.push_back({ActionKind::drop});
    actions.push_back({ActionKind::toggle});
    return actions;
}

} // namespace

std::pair<Split, Split> build_printer_dataset(const DatagenConfig& cfg) {
    const std::vector<int> sizes = cfg.sizes.empty() ? default_sizes(Task::mini_behavior) : cfg.sizes;
    for (int s : sizes) validate_spec({Task::mini_behavior, s, 0});

    Rng root = Rng(cfg.seed).split("printer_dataset");
    std::set<std::pair<uint64_t, std::string>> seen; // (layout fingerprint, action string)
    std::vector<Example> pool;
    const long want = cfg.train_count + cfg.dev_count;
    const long budget = derive_budget(cfg);

    for (long attempt = 0; attempt < budget && static_cast<long>(pool.size()) < want; ++attempt) {
        Rng stream = root.split(static_cast<uint64_t>(attempt));
        const uint64_t ex_seed = stream.next_u64();

        if (!pool.empty() && stream.chance(cfg.mutation_rate)) {
            // Re-seen pair: mutate the layout and re-derive the outcome by replay.
            const Example& base = pool[stream.below(pool.size())];
            PrinterEnv mutated;
            try {
                mutated = mutate_printer_layout(std::get<PrinterEnv>(base.env0), stream.next_u64());
            } catch (const Error&) {
                continue; // mutation infeasible on this layout
            }
            const uint64_t fp = env_fingerprint(EnvState(mutated));
            if (!seen.insert({fp, action_string(base.actions)}).second) continue;
            try {
                pool.push_back(make_example(Task::mini_behavior, ex_seed, EnvState(mutated), base.actions));
            } catch (const Error&) {
                seen.erase({fp, action_string(base.actions)});
            }
            continue;
        }

        const int size = sizes[stream.below(sizes.size())];
        auto env = random_printer_layout(size, stream);
        if (!env) continue;
        auto plan = plan_printer_task(*env);
        if (!plan) continue;
        const uint64_t fp = env_fingerprint(EnvState(*env));
        if (!seen.insert({fp, action_string(*plan)}).second) continue;
        pool.push_back(make_example(Task::mini_behavior, ex_seed, EnvState(*env), std::move(*plan)));
    }
    return carve_splits(std::move(pool), cfg, "minibehavior");
}

namespace {

// Per-size hole probabilities chosen so the mean number of key entities
// (holes + agent + gift) tracks the reference means 4.70 / 5.67 / 7.47 / 9.65
// for sizes 3..6 while still increasing strictly with size.
double hole_probability(int size) {
    switch (size) {
    case 3: return 0.39;
    case 4: return 0.26;
    case 5: return 0.24;
    default: return 0.23;
    }
}

LakeEnv random_lake(int size, Rng& rng) {
    LakeEnv env;
    env.size = size;
    env.agent = {rng.range_int(0, size - 1), rng.range_int(0, size - 1)};
    do {
        env.gift = {rng.range_int(0, size - 1), rng.range_int(0, size - 1)};
    } while (env.gift == env.agent);
    const double p = hole_probability(size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            Cell c{x, y};
            if (c == env.agent || c == env.gift) continue;
            if (rng.uniform01() < p) env.holes.insert(c);
        }
    }
    return env;
}

constexpr ActionKind kMoves[4] = {ActionKind::up, ActionKind::down, ActionKind::left, ActionKind::right};

std::vector<Action> rollout(const LakeEnv& env, const QTable& q, double eps, int cap, Rng& rng) {
    std::vector<Action> actions;
    Cell pos = env.agent;
    for (int t = 0; t < cap; ++t) {
        ActionKind a = rng.uniform01() < eps ? kMoves[rng.below(4)] : q.greedy(pos);
        actions.push_back({a});
        pos = moved_cell(pos, a, env.size);
        if (env.holes.count(pos) > 0 || pos == env.gift) break;
    }
    return actions;
}

} // namespace

std::pair<Split, Split> build_lake_dataset(const DatagenConfig& cfg) {
    const std::vector<int> sizes = cfg.sizes.empty() ? default_sizes(Task::frozen_lake) : cfg.sizes;
    for (int s : sizes) validate_spec({Task::frozen_lake, s, 0});

    Rng root = Rng(cfg.seed).split("lake_dataset");
    std::set<std::pair<uint64_t, std::string>> seen;
    const long budget = derive_budget(cfg);

    // Per-split label quotas: the reference option mix is ~44/35/21.
    auto quotas = [&](int n) {
        std::array<long, 3> q;
        q[0] = std::lround(cfg.lake_quota[0] * n);
        q[1] = std::lround(cfg.lake_quota[1] * n);
        q[2] = n - q[0] - q[1];
        return q;
    };
    std::array<long, 3> quota_train = quotas(cfg.train_count);
    std::array<long, 3> quota_dev = quotas(cfg.dev_count);
    std::array<long, 3> remaining = {quota_train[0] + quota_dev[0], quota_train[1] + quota_dev[1],
                                     quota_train[2] + quota_dev[2]};

    std::vector<Example> pool;
    const long want = cfg.train_count + cfg.dev_count;

    auto label_slot = [](OutcomeLabel l) {
        if (l == OutcomeLabel::fl_success) return 0;
        if (l == OutcomeLabel::fl_fell_in_hole) return 1;
        return 2;
    };

    for (long attempt = 0; attempt < budget && static_cast<long>(pool.size()) < want; ++attempt) {
        Rng stream = root.split(static_cast<uint64_t>(attempt));
        const int size = sizes[stream.below(sizes.size())];
        const uint64_t ex_seed = stream.next_u64();
        LakeEnv env = random_lake(size, stream);
        QTable q = qlearn_lake(env, cfg.qlearn_episodes, stream.next_u64());

        // Candidate trajectories: greedy, noisy, and truncated random walks
        // for extra path variance. Caps keep formatted examples inside the
        // default context.
        std::vector<std::vector<Action>> candidates;
        candidates.push_back(rollout(env, q, 0.0, 3 * size, stream));
        candidates.push_back(rollout(env, q, 0.35, 3 * size, stream));
        candidates.push_back(rollout(env, q, 0.35, stream.range_int(std::max(2, size - 1), 2 * size), stream));
        candidates.push_back(rollout(env, q, 1.0, stream.range_int(2, 2 * size), stream));

        for (std::vector<Action>& actions : candidates) {
            if (actions.empty() || static_cast<long>(pool.size()) >= want) continue;
            Outcome outcome = classify_outcome(EnvState(env), actions);
            if (outcome.label == OutcomeLabel::fl_fell_in_hole && stream.chance(0.5)) {
                // Keep the fall but append random actions; the replay ignores them.
                const int extra = stream.range_int(1, 4);
                for (int i = 0; i < extra; ++i) actions.push_back({kMoves[stream.below(4)]});
            }
            const int slot = label_slot(outcome.label);
            if (remaining[static_cast<std::size_t>(slot)] <= 0) continue;
            if (!seen.insert({env_fingerprint(EnvState(env)), action_string(actions)}).second) continue;
            remaining[static_cast<std::size_t>(slot)] -= 1;
            pool.push_back(make_example(Task::frozen_lake, ex_seed, EnvState(env), actions));
        }
    }

    if (static_cast<long>(pool.size()) < want) {
        throw ExhaustionError("frozenlake: quota unfilled after the attempt budget (" +
                                  std::to_string(pool.size()) + " of " + std::to_string(want) + ")",
                              pool.size(), static_cast<std::size_t>(want));
    }

    // Deal examples into splits so each split meets its own quota.
    Split train, dev;
    std::array<long, 3> train_left = quota_train;
    for (Example& ex : pool) {
        const int slot = label_slot(ex.gold.label);
        if (train_left[static_cast<std::size_t>(slot)] > 0 &&
            static_cast<long>(train.examples.size()) < cfg.train_count) {
            train_left[static_cast<std::size_t>(slot)] -= 1;
            train.examples.push_back(std::move(ex));
        } else {
            dev.examples.push_back(std::move(ex));
        }
    }
    require(static_cast<long>(train.examples.size()) == cfg.train_count &&
                static_cast<long>(dev.examples.size()) == cfg.dev_count,
            ErrorKind::exhaustion, "frozenlake: split deal mismatch");
    return {std::move(train), std::move(dev)};
}

std::pair<Split, Split> build_dataset(const DatagenConfig& cfg) {
    switch (cfg.task) {
    case Task::maze: return build_maze_dataset(cfg);
    case Task::mini_behavior: return build_printer_dataset(cfg);
    case Task::frozen_lake: return build_lake_dataset(cfg);
    }
    fail(ErrorKind::invalid_argument, "bad task");
}

SplitStats stats(const Split& split) {
    require(!split.examples.empty(), ErrorKind::invalid_argument, "empty split");
    SplitStats st;
    st.total = static_cast<int>(split.examples.size());
    double actions = 0.0, entities = 0.0;
    for (const Example& ex : split.examples) {
        st.option_counts[option_letter(ex.gold.label)] += 1;
        st.size_counts[ex.grid_size] += 1;
        actions += static_cast<double>(ex.actions.size());
        if (const auto* m = std::get_if<MazeEnv>(&ex.env0)) {
            entities += 1.0 + static_cast<double>(m->destinations.size());
        } else if (const auto* p = std::get_if<PrinterEnv>(&ex.env0)) {
            entities += 1.0 + (p->printer ? 1.0 : 0.0) + (p->table.empty() ? 0.0 : 1.0);
        } else {
            entities += 2.0 + static_cast<double>(std::get<LakeEnv>(ex.env0).holes.size());
        }
    }
    st.mean_action_length = actions / st.total;
    st.mean_entity_count = entities / st.total;
    return st;
}

std::string stats_json(const SplitStats& train, const SplitStats& dev) {
    auto one = [](const SplitStats& st) {
        nlohmann::ordered_json j;
        j["total"] = st.total;
        nlohmann::ordered_json opts;
        for (const auto& [letter, count] : st.option_counts) {
            opts[std::string(1, letter)] = count;
        }
        j["options"] = opts;
        nlohmann::ordered_json sizes;
        for (const auto& [size, count] : st.size_counts) {
            sizes[std::to_string(size)] = count;
        }
        j["grid_sizes"] = sizes;
        j["mean_action_length"] = st.mean_action_length;
        j["mean_entity_count"] = st.mean_entity_count;
        return j;
    };
    nlohmann::ordered_json j;
    j["train"] = one(train);
    j["dev"] = one(dev);
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Templates and formatting
// ---------------------------------------------------------------------------

namespace {

const char* kMazePrompt =
    "Task: Maze Navigation Simulation\n"
    "Determine the final destination (A, B, C or D) from the starting point (red point) following the "
    "action sequence. The definitions of the actions are as below.\n"
    "* Go up/left/down/right: move one grid space in the absolute up/left/down/right direction.\n";

const char* kPrinterPrompt =
    "Task: Mini-Behavior Installing the Printer\n"
    "Determine whether the agent (red triangle) can pick up the printer (printer symbol) on the floor "
    "and place it on the table (brown area) and toggle it on. If not, identify the failure reason. The "
    "definitions of the actions are as below.\n"
    "* Go up/left/down/right: move one grid space in the absolute up/left/down/right direction.\n"
    "* Pick up: pick up the printer from the any of the grid next to the agent. If there is no printer "
    "next to the agent, the action fails.\n"
    "* Drop: drop the printer to the table that is next to the agent. If there is no table next to the "
    "agent, the action fails.\n"
    "* Toggle: toggle the printer that is on the table and next to the agent.\n"
    "Return A, B, C or D.\n";

const char* kLakePrompt =
    "Task: FrozenLake\n"
    "Determine whether the agent (elf character) can safely reach the gift following the action sequence "
    "without falling into the holes. If not, identify the failure reason. The definitions of the actions "
    "are as below.\n"
    "* Go up/left/down/right: move one grid space in the absolute up/left/down/right direction.\n"
    "Return A, B or C.\n";

std::string coord(Cell c) {
    return "[" + std::to_string(c.x) + ", " + std::to_string(c.y) + "]";
}

std::string join_actions(const std::vector<Action>& actions) {
    std::string out;
    for (const Action& a : actions) {
        if (!out.empty()) out += " ";
        out += action_text(a.kind);
    }
    return out;
}

Cell agent_of(const EnvState& env) {
    return std::visit([](const auto& e) { return e.agent; }, env);
}

bool carrying_of(const EnvState& env) {
    if (const auto* p = std::get_if<PrinterEnv>(&env)) return p->carrying;
    return false;
}

std::string carrying_text(const EnvState& env) {
    return carrying_of(env) ? "Carrying objects: printer_0." : "Carrying objects: None.";
}

// Builds ids/mask/spans, merging adjacent text pieces into single spans.
struct SeqBuilder {
    const TokenVocab& vocab;
    const Codebook& cb;
    TokenSequence seq;
    int open_text_start = -1;

    SeqBuilder(const TokenVocab& v, const Codebook& c) : vocab(v), cb(c) {}

    void close_text() {
        if (open_text_start >= 0) {
            seq.spans.push_back({open_text_start, static_cast<int>(seq.ids.size()), Modality::text});
            open_text_start = -1;
        }
    }

    void push(int id, bool supervised) {
        if (open_text_start < 0) open_text_start = static_cast<int>(seq.ids.size());
        seq.ids.push_back(id);
        seq.loss_mask.push_back(supervised ? 1 : 0);
    }

    void text(const std::string& s, bool supervised) {
        for (int id : encode_text(s, vocab)) push(id, supervised);
    }

    void image(const TileImage& img, bool supervised) {
        close_text();
        const int start = static_cast<int>(seq.ids.size());
        seq.ids.push_back(TokenVocab::boi);
        seq.loss_mask.push_back(supervised ? 1 : 0);
        for (int entry : tokenize_image(img, cb)) {
            seq.ids.push_back(vocab.image_token(entry));
            seq.loss_mask.push_back(supervised ? 1 : 0);
        }
        seq.ids.push_back(TokenVocab::eoi);
        seq.loss_mask.push_back(supervised ? 1 : 0);
        seq.spans.push_back({start, static_cast<int>(seq.ids.size()), Modality::image});
    }

    TokenSequence finish() {
        close_text();
        return std::move(seq);
    }
};

std::string prompt_text_before_image(const Example& ex) {
    std::string out;
    switch (ex.task) {
    case Task::maze:
        out = kMazePrompt;
        out += "Full Action Sequence: " + join_actions(ex.actions) + "\n";
        out += "Initial maze:";
        return out;
    case Task::mini_behavior: {
        out = kPrinterPrompt;
        out += "Full Action Sequence: " + join_actions(ex.actions) + "\n";
        for (const std::string& line : option_lines(Task::mini_behavior)) out += line + "\n";
        out += "Initial State:";
        return out;
    }
    case Task::frozen_lake:
        out = kLakePrompt;
        out += "Full Action Sequence: " + join_actions(ex.actions) + "\n";
        for (const std::string& line : option_lines(Task::frozen_lake)) out += line + "\n";
        out += "Initial State:";
        return out;
    }
    fail(ErrorKind::invalid_argument, "bad task");
}

std::string layout_narration(const Example& ex) {
    switch (ex.task) {
    case Task::maze: {
        const auto& m = std::get<MazeEnv>(ex.env0);
        std::string out = "Destination Coordinates:";
        for (const auto& [letter, cell] : m.destinations) {
            out += " " + std::string(1, letter) + " Coordinate: " + coord(cell) + ".";
        }
        return out;
    }
    case Task::mini_behavior: {
        const auto& p = std::get<PrinterEnv>(ex.env0);
        std::string out = "Initial Environment Layout:";
        out += " Printer Initial Coordinate: ";
        out += p.printer ? coord(*p.printer) : std::string("None");
        out += ". Table Coordinates: ";
        if (p.table.empty()) {
            out += "None";
        } else {
            // Column-major listing, [x, y] pairs.
            std::vector<Cell> cells(p.table.begin(), p.table.end());
            std::sort(cells.begin(), cells.end(),
                      [](Cell a, Cell b) { return std::pair(a.x, a.y) < std::pair(b.x, b.y); });
            out += "[";
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i > 0) out += ", ";
                out += coord(cells[i]);
            }
            out += "]";
        }
        out += ".";
        return out;
    }
    case Task::frozen_lake: {
        const auto& l = std::get<LakeEnv>(ex.env0);
        std::string out = "Initial Environment Layout: Holes Coordinate: [";
        // Row-major listing.
        std::vector<Cell> holes(l.holes.begin(), l.holes.end());
        std::sort(holes.begin(), holes.end(),
                  [](Cell a, Cell b) { return std::pair(a.y, a.x) < std::pair(b.y, b.x); });
        for (std::size_t i = 0; i < holes.size(); ++i) {
            if (i > 0) out += ", ";
            out += coord(holes[i]);
        }
        out += "]. Gift Coordinate: " + coord(l.gift) + ".";
        return out;
    }
    }
    fail(ErrorKind::invalid_argument, "bad task");
}

std::string final_sentence(const Example& ex) {
    const char* stop = ex.task == Task::maze ? "Action sequence finished." : "Action sequence stopped.";
    return std::string(stop) + " The answer is " + std::string(1, option_letter(ex.gold.label)) + ".";
}

} // namespace

std::vector<std::string> option_lines(Task task) {
    switch (task) {
    case Task::maze:
        return {};
    case Task::mini_behavior:
        return {"A. Action Success.", "B. Action Failed: Drop Error.",
                "C. Action Failed: Pick Up Error.", "D. Missing Key Objects."};
    case Task::frozen_lake:
        return {"A. Action Success.", "B. Action Failed: Fall into the Hole.",
                "C. Action Failed: Agent Safe but Fail to Reach Destination."};
    }
    fail(ErrorKind::invalid_argument, "bad task");
}

const std::vector<std::string>& template_corpus() {
    static const std::vector<std::string> corpus = [] {
        std::vector<std::string> c;
        c.push_back(kMazePrompt);
        c.push_back(kPrinterPrompt);
        c.push_back(kLakePrompt);
        c.push_back("Full Action Sequence:");
        c.push_back("Initial maze: Initial State: Response:");
        for (ActionKind a : {ActionKind::up, ActionKind::down, ActionKind::left, ActionKind::right,
                             ActionKind::pick_up, ActionKind::drop, ActionKind::toggle}) {
            c.push_back(action_text(a));
        }
        for (Task t : {Task::mini_behavior, Task::frozen_lake}) {
            for (const std::string& line : option_lines(t)) c.push_back(line);
        }
        c.push_back("Destination Coordinates: A Coordinate: B Coordinate: C Coordinate: D Coordinate:");
        c.push_back("Initial Agent Coordinate: Agent Coordinate:");
        c.push_back("Initial Environment Layout: Printer Initial Coordinate: None. Table Coordinates:");
        c.push_back("Holes Coordinate: Gift Coordinate:");
        c.push_back("Carrying objects: None. Carrying objects: printer_0.");
        c.push_back("Action sequence finished. Action sequence stopped.");
        c.push_back("The answer is A. B. C. D.");
        std::string digits;
        for (int i = 0; i <= 15; ++i) digits += std::to_string(i) + " ";
        c.push_back(digits);
        c.push_back("[ ] , .");
        return c;
    }();
    return corpus;
}

TokenVocab default_vocab(const Codebook& cb) { return build_vocab(template_corpus(), cb); }

TokenSequence format_example(const Example& ex, Variant v, const TokenVocab& vocab, const Codebook& cb) {
    SeqBuilder b(vocab, cb);
    const bool with_images = v == Variant::interleaved || v == Variant::visual_cot;
    const bool supervise_images = v == Variant::visual_cot;

    // Prompt (identical across variants, never supervised).
    b.push(TokenVocab::bos, false);
    b.text(prompt_text_before_image(ex), false);
    b.image(render(ex.env0), false);
    if (ex.task == Task::mini_behavior) {
        b.text("Carrying objects: None.", false);
    }
    b.text("Response:", false);

    // Response.
    switch (v) {
    case Variant::direct:
        b.text("The answer is " + std::string(1, option_letter(ex.gold.label)) + ".", true);
        break;
    case Variant::cot_layout:
    case Variant::cot_coords: {
        if (v == Variant::cot_layout && ex.task == Task::maze) {
            b.text(layout_narration(ex), true);
        }
        b.text("Initial Agent Coordinate: " + coord(agent_of(ex.env0)) + ".", true);
        if (v == Variant::cot_layout && ex.task != Task::maze) {
            b.text(layout_narration(ex), true);
        }
        for (const TraceStep& step : ex.trace) {
            std::string line = action_text(step.action.kind) + " Agent Coordinate: " +
                               coord(agent_of(step.state_after)) + ".";
            if (ex.task == Task::mini_behavior) {
                line += " " + carrying_text(step.state_after);
            }
            b.text(line, true);
        }
        b.text(final_sentence(ex), true);
        break;
    }
    case Variant::interleaved:
    case Variant::visual_cot: {
        for (const TraceStep& step : ex.trace) {
            std::string line = action_text(step.action.kind);
            if (ex.task == Task::mini_behavior) {
                line += " " + carrying_text(step.state_after);
            }
            b.text(line, true);
            b.image(step.image, supervise_images);
        }
        b.text(final_sentence(ex), true);
        break;
    }
    }
    b.push(TokenVocab::eos, true);

    TokenSequence seq = b.finish();
    (void)with_images;
    seq.validate(vocab, ex.grid_size * ex.grid_size);
    return seq;
}

// ---------------------------------------------------------------------------
// Records and files
// ---------------------------------------------------------------------------

int DatasetRecord::prompt_length() const {
    for (std::size_t i = 0; i < loss_mask.size(); ++i) {
        if (loss_mask[i]) return static_cast<int>(i);
    }
    return static_cast<int>(loss_mask.size());
}

DatasetRecord to_record(const Example& ex, Variant v, const TokenSequence& seq) {
    DatasetRecord r;
    r.task = task_name(ex.task);
    r.grid_size = ex.grid_size;
    r.seed = hex64(ex.seed);
    r.variant = variant_name(v);
    r.token_ids = seq.ids;
    r.loss_mask = seq.loss_mask;
    r.spans = seq.spans;
    r.answer = std::string(1, option_letter(ex.gold.label));
    r.env_fingerprint = hex64(ex.env_fp);
    return r;
}

std::string record_json(const DatasetRecord& r) {
    nlohmann::ordered_json j;
    j["task"] = r.task;
    j["grid_size"] = r.grid_size;
    j["seed"] = r.seed;
    j["variant"] = r.variant;
    j["token_ids"] = r.token_ids;
    j["loss_mask"] = r.loss_mask;
    nlohmann::ordered_json spans = nlohmann::ordered_json::array();
    for (const Span& s : r.spans) {
        spans.push_back({s.start, s.end, s.modality == Modality::image ? "image" : "text"});
    }
    j["spans"] = spans;
    j["answer"] = r.answer;
    j["env_fingerprint"] = r.env_fingerprint;
    return j.dump();
}

DatasetRecord parse_record(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
        fail(ErrorKind::format, std::string("bad dataset line: ") + e.what());
    }
    DatasetRecord r;
    r.task = j.at("task").get<std::string>();
    r.grid_size = j.at("grid_size").get<int>();
    r.seed = j.at("seed").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.token_ids = j.at("token_ids").get<std::vector<int>>();
    for (int m : j.at("loss_mask").get<std::vector<int>>()) {
        r.loss_mask.push_back(static_cast<uint8_t>(m));
    }
    for (const auto& s : j.at("spans")) {
        Span span;
        span.start = s.at(0).get<int>();
        span.end = s.at(1).get<int>();
        span.modality = s.at(2).get<std::string>() == "image" ? Modality::image : Modality::text;
        r.spans.push_back(span);
    }
    r.answer = j.at("answer").get<std::string>();
    r.env_fingerprint = j.at("env_fingerprint").get<std::string>();
    return r;
}

namespace {

std::string header_json(const DatasetHeader& h) {
    nlohmann::ordered_json j;
    j["type"] = "header";
    j["format_version"] = 1;
    j["task"] = h.task;
    j["config"] = nlohmann::json::parse(h.config_json.empty() ? "{}" : h.config_json);
    j["config_digest"] = hex64(h.config_digest);
    j["vocab_digest"] = hex64(h.vocab_digest);
    j["codebook_digest"] = hex64(h.codebook_digest);
    j["count"] = h.count;
    return j.dump();
}

DatasetHeader parse_header(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
        fail(ErrorKind::format, std::string("bad dataset header: ") + e.what());
    }
    require(j.value("type", "") == "header", ErrorKind::format, "dataset file is missing its header line");
    DatasetHeader h;
    h.task = j.at("task").get<std::string>();
    h.config_json = j.at("config").dump();
    h.config_digest = parse_hex64(j.at("config_digest").get<std::string>());
    h.vocab_digest = parse_hex64(j.at("vocab_digest").get<std::string>());
    h.codebook_digest = parse_hex64(j.at("codebook_digest").get<std::string>());
    h.count = j.at("count").get<long>();
    return h;
}

} // namespace

void write_dataset(const std::string& path, const DatasetHeader& header,
                   const std::vector<DatasetRecord>& records) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::invalid_argument, "cannot open " + path);
    DatasetHeader h = header;
    h.count = static_cast<long>(records.size());
    f << header_json(h) << "\n";
    for (const DatasetRecord& r : records) {
        f << record_json(r) << "\n";
    }
    require(f.good(), ErrorKind::invalid_argument, "failed writing " + path);
}

DatasetHeader read_dataset_header(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), ErrorKind::invalid_argument, "cannot open " + path);
    std::string line;
    require(static_cast<bool>(std::getline(f, line)), ErrorKind::format, "empty dataset file");
    return parse_header(line);
}

std::pair<DatasetHeader, std::vector<DatasetRecord>> read_dataset(const std::string& path,
                                                                  std::optional<Variant> only) {
    std::ifstream f(path);
    require(f.good(), ErrorKind::invalid_argument, "cannot open " + path);
    std::string line;
    require(static_cast<bool>(std::getline(f, line)), ErrorKind::format, "empty dataset file");
    DatasetHeader header = parse_header(line);
    std::vector<DatasetRecord> records;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        DatasetRecord r = parse_record(line);
        if (only && r.variant != variant_name(*only)) continue;
        records.push_back(std::move(r));
    }
    return {std::move(header), std::move(records)};
}

} // namespace mindgrid
