#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "mindgrid/rng.hpp"

namespace mindgrid {

enum class Task : uint8_t { maze, mini_behavior, frozen_lake };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

// Grid coordinates are (x = column, y = row), zero-indexed from the top-left,
// matching the "[x, y]" convention used in the reasoning transcripts.
struct Cell {
    int x = 0;
    int y = 0;

    auto operator<=>(const Cell&) const = default;
};

struct GridSpec {
    Task task = Task::maze;
    int size = 3; // cells per side
    uint64_t seed = 0;
};

// Valid size ranges: maze and frozen_lake 3..6, mini_behavior 5..10.
void validate_spec(const GridSpec& spec);

enum class ActionKind : uint8_t { up, down, left, right, pick_up, drop, toggle };

std::string action_text(ActionKind a); // "Go up." / "Pick up." / "Drop." / "Toggle."
bool is_move(ActionKind a);

struct Action {
    ActionKind kind = ActionKind::up;
};

// Passage bits per cell; a set bit means the agent may leave in that direction.
namespace passage {
inline constexpr uint8_t up = 1;
inline constexpr uint8_t down = 2;
inline constexpr uint8_t left = 4;
inline constexpr uint8_t right = 8;
} // namespace passage

struct MazeEnv {
    int size = 0;
    std::vector<uint8_t> walls;             // row-major passage masks
    Cell agent;                             // current position
    std::map<char, Cell> destinations;      // 'A'..'D' -> cell
    std::vector<Cell> path_history;         // visited cells, front = start, back = agent

    uint8_t mask_at(Cell c) const { return walls[static_cast<std::size_t>(c.y) * size + c.x]; }
};

struct PrinterEnv {
    int size = 0;
    Cell agent;
    bool carrying = false;
    std::optional<Cell> printer;            // absent while carried or removed by mutation
    std::set<Cell> table;                   // contiguous rectangle
    bool toggled = false;

    bool printer_on_table() const { return printer && table.count(*printer) > 0; }
};

struct LakeEnv {
    int size = 0;
    Cell agent;
    std::set<Cell> holes;
    Cell gift;
};

using EnvState = std::variant<MazeEnv, PrinterEnv, LakeEnv>;

Task task_of(const EnvState& env);
int grid_size_of(const EnvState& env);

struct StepEffect {
    bool moved = false;
    bool blocked = false; // an in-grid obstacle or wall stopped the move
    bool picked = false;
    bool dropped = false;
    bool toggled = false;
    bool fell = false;
    bool reached = false;
};

enum class OutcomeLabel : uint8_t {
    maze_a,
    maze_b,
    maze_c,
    maze_d,
    mb_success,
    mb_drop_error,
    mb_pick_up_error,
    mb_missing_objects,
    fl_success,
    fl_fell_in_hole,
    fl_safe_no_reach,
};

struct Outcome {
    OutcomeLabel label;
};

// Multiple-choice letter for an outcome ('A'..'D').
char option_letter(OutcomeLabel label);

// Iterative DFS over the cell graph; the corridor graph is a spanning tree.
// Places the agent start and four labeled destination cells (one of them is
// the endpoint of the gold path that datagen derives, the other three are
// random distractors). Deterministic in spec.seed.
MazeEnv generate_maze(const GridSpec& spec);

// Pure transition. Invalid effects (blocked moves, failed pick/drop/toggle)
// are reported in StepEffect, never as errors. Off-grid moves clamp to the
// boundary for mini_behavior and frozen_lake; maze moves are wall-checked.
std::pair<EnvState, StepEffect> step(const EnvState& env, Action action);

// Replays `actions` from env0.
//   frozen_lake: stops at the first hole (fell_in_hole) or at the gift
//                (success); otherwise safe_no_reach.
//   mini_behavior: missing printer or table at start -> missing_objects;
//                first failed PickUp -> pick_up_error; first failed Drop ->
//                drop_error; completed pick/drop/toggle chain -> success.
//   maze: the label of the terminal cell; unlabeled terminal raises
//         no_matching_option (datagen never ships such sequences).
Outcome classify_outcome(const EnvState& env0, const std::vector<Action>& actions);

// Executed-step trace of a replay; stops where classify_outcome stops.
struct ReplayStep {
    Action action;
    StepEffect effect;
    EnvState state_after;
};

struct Replay {
    std::vector<ReplayStep> steps;
    Outcome outcome;
};

Replay replay_actions(const EnvState& env0, const std::vector<Action>& actions);

// Tabular Q-learning over the deterministic lake MDP. Reward +1 on the gift,
// -1 in a hole, 0 otherwise; episodes end on either terminal (or a step cap).
// alpha=0.1, gamma=0.95, epsilon=0.2. Deterministic in seed.
struct QTable {
    int size = 0;
    std::vector<std::array<double, 4>> q; // [y*size+x][action: up,down,left,right]

    ActionKind greedy(Cell c) const;
};

QTable qlearn_lake(const LakeEnv& env0, int episodes, uint64_t seed);

// Layout mutation used when an action sequence repeats: draw u ~ U[0,1);
// u < 0.4 relocate the printer, u < 0.8 relocate the table, otherwise remove
// the printer or the table (uniform coin). Relocations avoid the agent and
// the other entities.
PrinterEnv mutate_printer_layout(const PrinterEnv& env, uint64_t seed);

// Helpers shared with datagen.
Cell clamp_cell(Cell c, int size);
Cell moved_cell(Cell c, ActionKind a, int size);
bool adjacent4(Cell a, Cell b);

// Unique corridor path between two cells of a spanning-tree maze, as actions.
std::vector<Action> solve_maze(const MazeEnv& env, Cell target);

// Fingerprints for dedup and dataset records.
uint64_t wall_fingerprint(const MazeEnv& env);
uint64_t env_fingerprint(const EnvState& env);
std::string action_string(const std::vector<Action>& actions);

} // namespace mindgrid
