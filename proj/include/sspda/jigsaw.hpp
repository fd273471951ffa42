#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sspda/rng.hpp"
#include "sspda/tensor.hpp"

namespace sspda {

/// Ordered set of tile permutations for the jigsaw pretext task.
/// Index 0 is always the identity; shuffle draws pick from [1, P).
struct PermutationSet {
    int grid_side = 0;
    std::vector<std::vector<int>> perms;

    int count() const { return static_cast<int>(perms.size()); }
    int tiles() const { return grid_side * grid_side; }
};

/// Image split into grid_side^2 equally sized patches, row-major.
struct TileGrid {
    int grid_side = 0;
    std::vector<Tensor> tiles;
};

// Number of positions where two equal-length permutations differ.
int hamming(const std::vector<int>& a, const std::vector<int>& b);

// Greedy max-min construction over the full enumeration of (grid_side^2)!
// permutations: start from the identity, then repeatedly add the candidate
// maximizing the minimum distance to the selected set, breaking ties by
// lexicographically smallest. Deterministic; the seed is reserved for future
// sampling modes and ignored in exact mode.
PermutationSet select_permutations(int grid_side, int count, std::uint64_t seed = 0);

TileGrid split_tiles(const Tensor& image, int grid_side);
Tensor reassemble(const TileGrid& grid);

// Output tile position i holds input tile perms[perm_index][i].
Tensor shuffle_image(const Tensor& image, const PermutationSet& set, int perm_index);

// With probability beta returns (image, 0) untouched; otherwise applies a
// permutation index drawn uniformly from [1, P).
std::pair<Tensor, int> maybe_shuffle(const Tensor& image, const PermutationSet& set, double beta,
                                     Rng& rng);

// Text format: first line "g P", then P lines of space-separated indices.
void save_permutation_set(const PermutationSet& set, const std::string& path);
PermutationSet load_permutation_set(const std::string& path);

}  // namespace sspda
