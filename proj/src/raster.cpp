#include "mindgrid/raster.hpp"

#include <fstream>

#include "mindgrid/error.hpp"

namespace mindgrid {

namespace {

constexpr int kMazeBase = 0;
constexpr int kMazeCount = 15 * 5 * 6; // mask 1..15, label none/A..D, six marks
constexpr int kMbBase = kMazeBase + kMazeCount;
constexpr int kFlBase = kMbBase + 6;
constexpr int kTotal = kFlBase + 6;

struct Rgb {
    uint8_t r, g, b;
};

void put(std::array<uint8_t, kTilePixels>& px, int row, int col, Rgb c) {
    const std::size_t i = (static_cast<std::size_t>(row) * kTileSize + col) * 3;
    px[i] = c.r;
    px[i + 1] = c.g;
    px[i + 2] = c.b;
}

void fill_rect(std::array<uint8_t, kTilePixels>& px, int r0, int r1, int c0, int c1, Rgb c) {
    for (int r = r0; r <= r1; ++r) {
        for (int col = c0; col <= c1; ++col) {
            put(px, r, col, c);
        }
    }
}

uint8_t jitter(Rng& rng, int base, int amp) {
    int v = base + rng.range_int(-amp, amp);
    return static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
}

void noise_fill(std::array<uint8_t, kTilePixels>& px, int r0, int r1, int c0, int c1, Rgb base, int amp,
                Rng& rng) {
    for (int r = r0; r <= r1; ++r) {
        for (int col = c0; col <= c1; ++col) {
            put(px, r, col, {jitter(rng, base.r, amp), jitter(rng, base.g, amp), jitter(rng, base.b, amp)});
        }
    }
}

constexpr Rgb kWhite{255, 255, 255};
constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kRed{220, 40, 40};
constexpr std::array<Rgb, 4> kLabelColors = {{{50, 90, 220}, {50, 180, 70}, {235, 170, 40}, {165, 70, 205}}};

std::array<uint8_t, kTilePixels> draw_maze(uint8_t mask, int label, MazeMark mark) {
    std::array<uint8_t, kTilePixels> px;
    fill_rect(px, 0, kTileSize - 1, 0, kTileSize - 1, kWhite);
    // Wall segments on sides without a passage; corner posts always.
    if (!(mask & passage::up)) fill_rect(px, 0, 0, 0, kTileSize - 1, kBlack);
    if (!(mask & passage::down)) fill_rect(px, kTileSize - 1, kTileSize - 1, 0, kTileSize - 1, kBlack);
    if (!(mask & passage::left)) fill_rect(px, 0, kTileSize - 1, 0, 0, kBlack);
    if (!(mask & passage::right)) fill_rect(px, 0, kTileSize - 1, kTileSize - 1, kTileSize - 1, kBlack);
    for (int r : {0, kTileSize - 1}) {
        for (int c : {0, kTileSize - 1}) {
            put(px, r, c, kBlack);
        }
    }
    if (label > 0) {
        fill_rect(px, 1, 2, 1, 2, kLabelColors[static_cast<std::size_t>(label - 1)]);
    }
    switch (mark) {
    case MazeMark::none:
        break;
    case MazeMark::dot:
        fill_rect(px, 3, 4, 3, 4, kRed);
        break;
    case MazeMark::arrow_up:
        for (int r = 1; r <= 5; ++r) put(px, r, 4, kRed);
        put(px, 2, 3, kRed);
        put(px, 2, 5, kRed);
        break;
    case MazeMark::arrow_down:
        for (int r = 2; r <= 6; ++r) put(px, r, 4, kRed);
        put(px, 5, 3, kRed);
        put(px, 5, 5, kRed);
        break;
    case MazeMark::arrow_left:
        for (int c = 1; c <= 5; ++c) put(px, 4, c, kRed);
        put(px, 3, 2, kRed);
        put(px, 5, 2, kRed);
        break;
    case MazeMark::arrow_right:
        for (int c = 2; c <= 6; ++c) put(px, 4, c, kRed);
        put(px, 3, 5, kRed);
        put(px, 5, 5, kRed);
        break;
    }
    return px;
}

constexpr Rgb kFloor{205, 205, 205};
constexpr Rgb kFloorEdge{175, 175, 175};
constexpr Rgb kTable{150, 95, 45};
constexpr Rgb kTableEdge{115, 70, 30};
constexpr Rgb kPrinterBox{70, 70, 70};
constexpr Rgb kPaper{245, 245, 245};
constexpr Rgb kLight{60, 220, 80};

void draw_floor(std::array<uint8_t, kTilePixels>& px) {
    fill_rect(px, 0, kTileSize - 1, 0, kTileSize - 1, kFloor);
    fill_rect(px, 0, 0, 0, kTileSize - 1, kFloorEdge);
    fill_rect(px, 0, kTileSize - 1, 0, 0, kFloorEdge);
}

void draw_table_base(std::array<uint8_t, kTilePixels>& px) {
    fill_rect(px, 0, kTileSize - 1, 0, kTileSize - 1, kTable);
    fill_rect(px, 0, 0, 0, kTileSize - 1, kTableEdge);
    fill_rect(px, 0, kTileSize - 1, 0, 0, kTableEdge);
}

void draw_printer_box(std::array<uint8_t, kTilePixels>& px) {
    fill_rect(px, 2, 6, 2, 6, kPrinterBox);
    fill_rect(px, 3, 4, 3, 4, kPaper);
}

std::array<uint8_t, kTilePixels> draw_mb(MbTile t) {
    std::array<uint8_t, kTilePixels> px;
    switch (t) {
    case MbTile::floor:
        draw_floor(px);
        break;
    case MbTile::agent:
        draw_floor(px);
        put(px, 2, 4, kRed);
        fill_rect(px, 3, 4, 3, 5, kRed);
        fill_rect(px, 5, 6, 2, 6, kRed);
        break;
    case MbTile::printer:
        draw_floor(px);
        draw_printer_box(px);
        break;
    case MbTile::table:
        draw_table_base(px);
        break;
    case MbTile::printer_on_table:
        draw_table_base(px);
        draw_printer_box(px);
        break;
    case MbTile::printer_on_table_on:
        draw_table_base(px);
        draw_printer_box(px);
        put(px, 5, 5, kLight);
        put(px, 5, 6, kLight);
        break;
    }
    return px;
}

constexpr Rgb kIce{168, 205, 235};
constexpr Rgb kHoleDark{28, 36, 54};
constexpr Rgb kGiftRed{205, 40, 60};
constexpr Rgb kRibbon{240, 210, 70};
constexpr Rgb kHat{45, 165, 70};
constexpr Rgb kFace{240, 205, 175};
constexpr Rgb kBody{125, 85, 55};

void draw_elf_overlay(std::array<uint8_t, kTilePixels>& px, Rng& rng) {
    noise_fill(px, 1, 2, 2, 5, kHat, 10, rng);
    noise_fill(px, 3, 4, 2, 5, kFace, 6, rng);
    noise_fill(px, 5, 6, 2, 5, kBody, 8, rng);
}

std::array<uint8_t, kTilePixels> draw_fl(FlTile t) {
    std::array<uint8_t, kTilePixels> px;
    Rng rng(fnv1a64("fl_sprite") ^ (static_cast<uint64_t>(t) + 1));
    noise_fill(px, 0, kTileSize - 1, 0, kTileSize - 1, kIce, 22, rng);
    switch (t) {
    case FlTile::ice:
        for (int i = 0; i < 3; ++i) {
            put(px, rng.range_int(0, 7), rng.range_int(0, 7), kWhite);
        }
        break;
    case FlTile::hole:
        noise_fill(px, 1, 6, 1, 6, kHoleDark, 10, rng);
        break;
    case FlTile::gift:
        noise_fill(px, 2, 6, 2, 6, kGiftRed, 12, rng);
        noise_fill(px, 2, 6, 4, 4, kRibbon, 8, rng);
        noise_fill(px, 4, 4, 2, 6, kRibbon, 8, rng);
        break;
    case FlTile::elf:
        draw_elf_overlay(px, rng);
        break;
    case FlTile::elf_on_gift:
        noise_fill(px, 2, 6, 2, 6, kGiftRed, 12, rng);
        draw_elf_overlay(px, rng);
        break;
    case FlTile::elf_in_hole:
        noise_fill(px, 1, 6, 1, 6, kHoleDark, 10, rng);
        noise_fill(px, 2, 3, 2, 5, kHat, 10, rng);
        noise_fill(px, 4, 4, 3, 4, kFace, 6, rng);
        break;
    }
    return px;
}

} // namespace

SpriteSet::SpriteSet() {
    sprites_.resize(kTotal);
    for (uint8_t mask = 1; mask <= 15; ++mask) {
        for (int label = 0; label < 5; ++label) {
            for (int mark = 0; mark < 6; ++mark) {
                TileCode code = maze_tile(mask, label, static_cast<MazeMark>(mark));
                sprites_[code] = {code, draw_maze(mask, label, static_cast<MazeMark>(mark))};
            }
        }
    }
    for (int t = 0; t < 6; ++t) {
        TileCode code = mb_tile(static_cast<MbTile>(t));
        sprites_[code] = {code, draw_mb(static_cast<MbTile>(t))};
    }
    for (int t = 0; t < 6; ++t) {
        TileCode code = fl_tile(static_cast<FlTile>(t));
        sprites_[code] = {code, draw_fl(static_cast<FlTile>(t))};
    }
}

const SpriteSet& SpriteSet::instance() {
    static const SpriteSet set;
    return set;
}

TileCode SpriteSet::maze_tile(uint8_t mask, int label, MazeMark mark) {
    return static_cast<TileCode>(kMazeBase + (static_cast<int>(mask) - 1) * 30 + label * 6 +
                                 static_cast<int>(mark));
}

TileCode SpriteSet::mb_tile(MbTile t) { return static_cast<TileCode>(kMbBase + static_cast<int>(t)); }

TileCode SpriteSet::fl_tile(FlTile t) { return static_cast<TileCode>(kFlBase + static_cast<int>(t)); }

std::string SpriteSet::name(TileCode code) const {
    if (code < kMbBase) {
        int rest = code - kMazeBase;
        int mask = rest / 30 + 1;
        int label = (rest % 30) / 6;
        int mark = rest % 6;
        static const char* marks[] = {"", ":dot", ":arrow_up", ":arrow_down", ":arrow_left", ":arrow_right"};
        std::string s = "maze:m" + std::to_string(mask);
        if (label > 0) s += std::string(":") + static_cast<char>('A' + label - 1);
        s += marks[mark];
        return s;
    }
    if (code < kFlBase) {
        static const char* names[] = {"floor", "agent", "printer", "table", "printer_on_table",
                                      "printer_on_table_on"};
        return std::string("mb:") + names[code - kMbBase];
    }
    static const char* names[] = {"ice", "hole", "gift", "elf", "elf_on_gift", "elf_in_hole"};
    return std::string("fl:") + names[code - kFlBase];
}

namespace {

TileImage render_maze(const MazeEnv& env) {
    TileImage img;
    img.width = img.height = env.size;
    img.tiles.resize(static_cast<std::size_t>(env.size) * env.size);

    std::vector<int> label(img.tiles.size(), 0);
    for (const auto& [letter, cell] : env.destinations) {
        label[static_cast<std::size_t>(cell.y) * env.size + cell.x] = letter - 'A' + 1;
    }
    std::vector<MazeMark> mark(img.tiles.size(), MazeMark::none);
    for (std::size_t i = 0; i + 1 < env.path_history.size(); ++i) {
        Cell from = env.path_history[i];
        Cell to = env.path_history[i + 1];
        MazeMark m = MazeMark::none;
        if (to.y < from.y) m = MazeMark::arrow_up;
        else if (to.y > from.y) m = MazeMark::arrow_down;
        else if (to.x < from.x) m = MazeMark::arrow_left;
        else m = MazeMark::arrow_right;
        mark[static_cast<std::size_t>(from.y) * env.size + from.x] = m;
    }
    mark[static_cast<std::size_t>(env.agent.y) * env.size + env.agent.x] = MazeMark::dot;

    for (int y = 0; y < env.size; ++y) {
        for (int x = 0; x < env.size; ++x) {
            std::size_t i = static_cast<std::size_t>(y) * env.size + x;
            img.tiles[i] = SpriteSet::maze_tile(env.walls[i], label[i], mark[i]);
        }
    }
    return img;
}

TileImage render_printer(const PrinterEnv& env) {
    TileImage img;
    img.width = img.height = env.size;
    img.tiles.resize(static_cast<std::size_t>(env.size) * env.size);
    for (int y = 0; y < env.size; ++y) {
        for (int x = 0; x < env.size; ++x) {
            Cell c{x, y};
            MbTile t = MbTile::floor;
            if (c == env.agent) {
                t = MbTile::agent;
            } else if (env.printer && c == *env.printer) {
                if (env.table.count(c) > 0) {
                    t = env.toggled ? MbTile::printer_on_table_on : MbTile::printer_on_table;
                } else {
                    t = MbTile::printer;
                }
            } else if (env.table.count(c) > 0) {
                t = MbTile::table;
            }
            img.tiles[static_cast<std::size_t>(y) * env.size + x] = SpriteSet::mb_tile(t);
        }
    }
    return img;
}

TileImage render_lake(const LakeEnv& env) {
    TileImage img;
    img.width = img.height = env.size;
    img.tiles.resize(static_cast<std::size_t>(env.size) * env.size);
    for (int y = 0; y < env.size; ++y) {
        for (int x = 0; x < env.size; ++x) {
            Cell c{x, y};
            FlTile t = FlTile::ice;
            if (c == env.agent) {
                t = env.holes.count(c) > 0 ? FlTile::elf_in_hole
                                           : (c == env.gift ? FlTile::elf_on_gift : FlTile::elf);
            } else if (env.holes.count(c) > 0) {
                t = FlTile::hole;
            } else if (c == env.gift) {
                t = FlTile::gift;
            }
            img.tiles[static_cast<std::size_t>(y) * env.size + x] = SpriteSet::fl_tile(t);
        }
    }
    return img;
}

} // namespace

TileImage render(const EnvState& env) {
    if (const auto* m = std::get_if<MazeEnv>(&env)) return render_maze(*m);
    if (const auto* p = std::get_if<PrinterEnv>(&env)) return render_printer(*p);
    return render_lake(std::get<LakeEnv>(env));
}

std::set<Cell> diff_cells(const TileImage& a, const TileImage& b) {
    require(a.width == b.width && a.height == b.height, ErrorKind::invalid_argument,
            "diff_cells: dimension mismatch");
    std::set<Cell> out;
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            Cell c{x, y};
            if (a.at(c) != b.at(c)) {
                out.insert(c);
            }
        }
    }
    return out;
}

std::vector<uint8_t> render_pixels(const TileImage& img) {
    const SpriteSet& set = SpriteSet::instance();
    const int pw = img.width * kTileSize;
    const int ph = img.height * kTileSize;
    std::vector<uint8_t> px(static_cast<std::size_t>(pw) * ph * 3);
    for (int ty = 0; ty < img.height; ++ty) {
        for (int tx = 0; tx < img.width; ++tx) {
            const auto& sprite = set.sprite(img.at(Cell{tx, ty}));
            for (int r = 0; r < kTileSize; ++r) {
                const std::size_t dst = ((static_cast<std::size_t>(ty) * kTileSize + r) * pw +
                                         static_cast<std::size_t>(tx) * kTileSize) * 3;
                const std::size_t src = static_cast<std::size_t>(r) * kTileSize * 3;
                std::copy_n(sprite.pixels.data() + src, kTileSize * 3, px.data() + dst);
            }
        }
    }
    return px;
}

std::vector<uint8_t> to_ppm(const TileImage& img) {
    std::string header = "P6\n" + std::to_string(img.width * kTileSize) + " " +
                         std::to_string(img.height * kTileSize) + "\n255\n";
    std::vector<uint8_t> px = render_pixels(img);
    std::vector<uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), px.begin(), px.end());
    return out;
}

void write_ppm(const TileImage& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::invalid_argument, "cannot open " + path);
    auto bytes = to_ppm(img);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace mindgrid
