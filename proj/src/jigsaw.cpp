#include "sspda/jigsaw.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sspda/errors.hpp"

namespace sspda {

namespace {

long long factorial(int n) {
    long long f = 1;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

bool is_permutation_of_range(const std::vector<int>& p) {
    std::vector<bool> seen(p.size(), false);
    for (int v : p) {
        if (v < 0 || v >= static_cast<int>(p.size()) || seen[static_cast<std::size_t>(v)]) {
            return false;
        }
        seen[static_cast<std::size_t>(v)] = true;
    }
    return true;
}

void validate_set(const PermutationSet& set) {
    const int tiles = set.tiles();
    if (set.grid_side < 2 || set.grid_side > 3) {
        throw ParameterError("permutation set: grid side must be 2 or 3");
    }
    if (set.perms.empty()) throw ParameterError("permutation set: empty");
    for (const auto& p : set.perms) {
        if (static_cast<int>(p.size()) != tiles || !is_permutation_of_range(p)) {
            throw ContractError("permutation set: entry is not a permutation of tile indices");
        }
    }
    for (int i = 0; i < tiles; ++i) {
        if (set.perms[0][static_cast<std::size_t>(i)] != i) {
            throw ContractError("permutation set: index 0 must be the identity");
        }
    }
    for (std::size_t i = 0; i < set.perms.size(); ++i) {
        for (std::size_t j = i + 1; j < set.perms.size(); ++j) {
            if (set.perms[i] == set.perms[j]) {
                throw ContractError("permutation set: duplicate entries");
            }
        }
    }
}

}  // namespace

int hamming(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw DimensionError("hamming: permutations of different length");
    int d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) ++d;
    }
    return d;
}

namespace {

// GF(4) = GF(2)[x]/(x^2+x+1), GF(9) = GF(3)[x]/(x^2+1). Tile index t maps to
// the field element with coefficients (t / p, t % p).
int gf_mul(int a, int b, int p) {
    const int ah = a / p, al = a % p, bh = b / p, bl = b % p;
    int hi = ah * bl + al * bh;
    int lo = al * bl;
    const int sq = ah * bh;  // x^2 coefficient before reduction
    if (p == 2) {
        hi += sq;
        lo += sq;
    } else {
        lo += 2 * sq;
    }
    return (hi % p) * p + (lo % p);
}

// The maps x -> a*x + b over the tile field. Any two distinct members agree
// in at most one position, so the family is pairwise at Hamming distance
// >= tiles - 1; it contains the identity and has q(q-1) members.
std::vector<std::vector<int>> affine_tile_maps(int tiles) {
    const int p = tiles == 4 ? 2 : 3;
    std::vector<std::vector<int>> family;
    for (int a = 1; a < tiles; ++a) {
        for (int b = 0; b < tiles; ++b) {
            std::vector<int> f(static_cast<std::size_t>(tiles));
            for (int x = 0; x < tiles; ++x) {
                const int ax = gf_mul(a, x, p);
                const int hi = (ax / p + b / p) % p;
                const int lo = (ax % p + b % p) % p;
                f[static_cast<std::size_t>(x)] = hi * p + lo;
            }
            family.push_back(std::move(f));
        }
    }
    std::sort(family.begin(), family.end());
    return family;
}

}  // namespace

PermutationSet select_permutations(int grid_side, int count, std::uint64_t /*seed*/) {
    if (grid_side < 2 || grid_side > 3) {
        throw ParameterError("select_permutations: grid side must be 2 or 3");
    }
    const int tiles = grid_side * grid_side;
    const long long total = factorial(tiles);
    if (count < 1 || count > total) {
        throw ParameterError("select_permutations: count must be in [1, " +
                             std::to_string(total) + "]");
    }

    // Full lexicographic enumeration; 9! = 362880 candidates fits comfortably.
    std::vector<std::vector<int>> all;
    all.reserve(static_cast<std::size_t>(total));
    std::vector<int> cur(static_cast<std::size_t>(tiles));
    std::iota(cur.begin(), cur.end(), 0);
    do {
        all.push_back(cur);
    } while (std::next_permutation(cur.begin(), cur.end()));

    // A plain lexicographic tie-break lets the min pairwise distance decay to
    // tiles-2 within ~20 rounds on the 3x3 grid, while sets sustaining
    // tiles-1 exist up to 72 members. Preferring the affine family among
    // max-min ties keeps the selection on such a set; on the 2x2 grid the
    // result is identical to the plain tie-break for every count.
    std::vector<char> is_affine(all.size(), 0);
    {
        const auto family = affine_tile_maps(tiles);
        for (std::size_t i = 0; i < all.size(); ++i) {
            if (std::binary_search(family.begin(), family.end(), all[i])) is_affine[i] = 1;
        }
    }

    PermutationSet set;
    set.grid_side = grid_side;
    set.perms.push_back(all.front());  // identity comes first in lex order

    // min_dist[i] = min Hamming distance from candidate i to the selected set,
    // updated incrementally as members are added.
    std::vector<int> min_dist(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        min_dist[i] = hamming(all[i], set.perms[0]);
    }

    while (set.count() < count) {
        int best = -1;
        int best_affine = -1;
        long long best_idx = -1;
        for (std::size_t i = 0; i < all.size(); ++i) {
            if (min_dist[i] > best || (min_dist[i] == best && is_affine[i] > best_affine)) {
                best = min_dist[i];
                best_affine = is_affine[i];
                best_idx = static_cast<long long>(i);
                if (best == tiles && best_affine == 1) break;  // nothing can rank higher
            }
        }
        if (best <= 0) throw ContractError("select_permutations: candidate pool exhausted");
        const auto& chosen = all[static_cast<std::size_t>(best_idx)];
        set.perms.push_back(chosen);
        for (std::size_t i = 0; i < all.size(); ++i) {
            min_dist[i] = std::min(min_dist[i], hamming(all[i], chosen));
        }
    }
    return set;
}

TileGrid split_tiles(const Tensor& image, int grid_side) {
    if (image.rank() != 3) {
        throw DimensionError("split_tiles: expected [channels x h x w] image, got " +
                             image.shape_str());
    }
    if (grid_side < 1) throw ParameterError("split_tiles: grid side must be positive");
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h % grid_side != 0 || w % grid_side != 0) {
        throw DimensionError("split_tiles: grid side " + std::to_string(grid_side) +
                             " does not divide image " + image.shape_str());
    }
    const int th = h / grid_side, tw = w / grid_side;
    TileGrid grid;
    grid.grid_side = grid_side;
    grid.tiles.reserve(static_cast<std::size_t>(grid_side) * grid_side);
    for (int ty = 0; ty < grid_side; ++ty) {
        for (int tx = 0; tx < grid_side; ++tx) {
            Tensor tile({c, th, tw});
            for (int ch = 0; ch < c; ++ch) {
                for (int y = 0; y < th; ++y) {
                    for (int x = 0; x < tw; ++x) {
                        tile.values()[static_cast<std::size_t>((ch * th + y) * tw + x)] =
                            image.values()[static_cast<std::size_t>(
                                (ch * h + ty * th + y) * w + tx * tw + x)];
                    }
                }
            }
            grid.tiles.push_back(std::move(tile));
        }
    }
    return grid;
}

Tensor reassemble(const TileGrid& grid) {
    if (grid.tiles.empty()) throw ParameterError("reassemble: empty tile grid");
    const int g = grid.grid_side;
    if (static_cast<int>(grid.tiles.size()) != g * g) {
        throw DimensionError("reassemble: tile count does not match grid");
    }
    const int c = grid.tiles[0].dim(0), th = grid.tiles[0].dim(1), tw = grid.tiles[0].dim(2);
    for (const auto& t : grid.tiles) {
        if (!t.same_shape(grid.tiles[0])) throw DimensionError("reassemble: uneven tile shapes");
    }
    Tensor image({c, th * g, tw * g});
    const int h = th * g, w = tw * g;
    for (int ti = 0; ti < g * g; ++ti) {
        const int ty = ti / g, tx = ti % g;
        const Tensor& tile = grid.tiles[static_cast<std::size_t>(ti)];
        for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < th; ++y) {
                for (int x = 0; x < tw; ++x) {
                    image.values()[static_cast<std::size_t>(
                        (ch * h + ty * th + y) * w + tx * tw + x)] =
                        tile.values()[static_cast<std::size_t>((ch * th + y) * tw + x)];
                }
            }
        }
    }
    return image;
}

Tensor shuffle_image(const Tensor& image, const PermutationSet& set, int perm_index) {
    if (perm_index < 0 || perm_index >= set.count()) {
        throw ParameterError("shuffle_image: permutation index out of range");
    }
    TileGrid grid = split_tiles(image, set.grid_side);
    const auto& perm = set.perms[static_cast<std::size_t>(perm_index)];
    TileGrid shuffled;
    shuffled.grid_side = grid.grid_side;
    shuffled.tiles.resize(grid.tiles.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        shuffled.tiles[i] = grid.tiles[static_cast<std::size_t>(perm[i])];
    }
    return reassemble(shuffled);
}

std::pair<Tensor, int> maybe_shuffle(const Tensor& image, const PermutationSet& set, double beta,
                                     Rng& rng) {
    if (beta < 0.0 || beta > 1.0) throw ParameterError("maybe_shuffle: beta must be in [0, 1]");
    const double u = rng.uniform();
    if (u < beta) return {image, 0};
    if (set.count() < 2) {
        throw ParameterError("maybe_shuffle: need at least 2 permutations to shuffle");
    }
    const int idx = 1 + rng.below(set.count() - 1);
    return {shuffle_image(image, set, idx), idx};
}

void save_permutation_set(const PermutationSet& set, const std::string& path) {
    validate_set(set);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << set.grid_side << ' ' << set.count() << '\n';
    for (const auto& p : set.perms) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (i) out << ' ';
            out << p[i];
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing " + path);
}

PermutationSet load_permutation_set(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    PermutationSet set;
    int count = 0;
    if (!(in >> set.grid_side >> count)) throw IoError("bad permutation file header in " + path);
    const int tiles = set.grid_side * set.grid_side;
    set.perms.assign(static_cast<std::size_t>(count),
                     std::vector<int>(static_cast<std::size_t>(tiles)));
    for (auto& p : set.perms) {
        for (auto& v : p) {
            if (!(in >> v)) throw IoError("truncated permutation file " + path);
        }
    }
    validate_set(set);
    return set;
}

}  // namespace sspda
