#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "mindgrid/gridworld.hpp"

namespace mindgrid {

// Tile edge length in pixels.
inline constexpr int kTileSize = 8;
inline constexpr int kTilePixels = kTileSize * kTileSize * 3;

using TileCode = uint16_t;

struct TileSprite {
    TileCode code = 0;
    std::array<uint8_t, kTilePixels> pixels{}; // row-major RGB
};

// Maze cell mark, drawn in the tile interior.
enum class MazeMark : uint8_t { none, dot, arrow_up, arrow_down, arrow_left, arrow_right };

enum class MbTile : uint8_t { floor, agent, printer, table, printer_on_table, printer_on_table_on };

enum class FlTile : uint8_t { ice, hole, gift, elf, elf_on_gift, elf_in_hole };

// Closed registry of every renderable cell state across the three tasks.
// Maze tiles enumerate (passage mask 1..15) x (label none/A..D) x mark;
// then the six mini_behavior tiles and the six frozen_lake tiles. The
// frozen_lake sprites carry seeded per-pixel noise so that task keeps
// richer pixel detail than the two symbolic ones.
class SpriteSet {
public:
    static const SpriteSet& instance();

    int count() const { return static_cast<int>(sprites_.size()); }
    const TileSprite& sprite(TileCode code) const { return sprites_[code]; }
    const std::vector<TileSprite>& all() const { return sprites_; }
    std::string name(TileCode code) const;

    // label: 0 none, 1..4 = A..D.
    static TileCode maze_tile(uint8_t mask, int label, MazeMark mark);
    static TileCode mb_tile(MbTile t);
    static TileCode fl_tile(FlTile t);

private:
    SpriteSet();
    std::vector<TileSprite> sprites_;
};

struct TileImage {
    int width = 0;  // cells
    int height = 0; // cells
    std::vector<TileCode> tiles; // row-major

    TileCode at(Cell c) const { return tiles[static_cast<std::size_t>(c.y) * width + c.x]; }
    bool operator==(const TileImage&) const = default;
};

// One tile per cell. Maze renders the incremental path history as arrows on
// departed cells plus a dot on the agent; the other tasks render only the
// current state.
TileImage render(const EnvState& env);

// Cells whose tile identifiers differ. Throws invalid_argument on dimension
// mismatch.
std::set<Cell> diff_cells(const TileImage& a, const TileImage& b);

// Derived pixel buffer, (height*T) x (width*T) RGB.
std::vector<uint8_t> render_pixels(const TileImage& img);

// Binary PPM (P6, 8-bit, no comments), for bit-exact golden files.
std::vector<uint8_t> to_ppm(const TileImage& img);
void write_ppm(const TileImage& img, const std::string& path);

} // namespace mindgrid
