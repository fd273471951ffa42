#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "sspda/errors.hpp"
#include "sspda/jigsaw.hpp"
#include "test_util.hpp"

using namespace sspda;
using namespace sspda_test;

namespace {

// Independent greedy oracle: no incremental bookkeeping, recomputes the
// min-distance of every candidate against the whole selected set each round.
std::vector<std::vector<int>> greedy_oracle(int grid_side, int count) {
    const int tiles = grid_side * grid_side;
    std::vector<std::vector<int>> all;
    std::vector<int> cur(static_cast<std::size_t>(tiles));
    std::iota(cur.begin(), cur.end(), 0);
    do {
        all.push_back(cur);
    } while (std::next_permutation(cur.begin(), cur.end()));

    std::vector<std::vector<int>> picked{all.front()};
    while (static_cast<int>(picked.size()) < count) {
        int best_val = -1;
        std::size_t best_idx = 0;
        for (std::size_t i = 0; i < all.size(); ++i) {
            int mind = tiles + 1;
            for (const auto& sel : picked) {
                int d = 0;
                for (int j = 0; j < tiles; ++j) {
                    if (all[i][static_cast<std::size_t>(j)] != sel[static_cast<std::size_t>(j)]) {
                        ++d;
                    }
                }
                mind = std::min(mind, d);
            }
            if (mind > best_val) {
                best_val = mind;
                best_idx = i;
            }
        }
        picked.push_back(all[best_idx]);
    }
    return picked;
}

int min_pairwise_distance(const PermutationSet& set) {
    int best = set.tiles() + 1;
    for (int i = 0; i < set.count(); ++i) {
        for (int j = i + 1; j < set.count(); ++j) {
            best = std::min(best, hamming(set.perms[static_cast<std::size_t>(i)],
                                          set.perms[static_cast<std::size_t>(j)]));
        }
    }
    return best;
}

Tensor ramp_image(int channels, int side) {
    Tensor img({channels, side, side});
    for (int i = 0; i < img.numel(); ++i) img.data()[i] = i;
    return img;
}

}  // namespace

TEST_SUITE_BEGIN("jigsaw");

TEST_CASE("hamming distance") {
    CHECK(hamming({0, 1, 2, 3}, {0, 1, 2, 3}) == 0);
    CHECK(hamming({0, 1, 2, 3}, {1, 0, 2, 3}) == 2);
    CHECK(hamming({0, 1, 2, 3}, {1, 2, 3, 0}) == 4);
    CHECK_THROWS_AS(hamming({0, 1}, {0, 1, 2}), DimensionError);
}

TEST_CASE("select_permutations on the 2x2 grid") {
    SUBCASE("exhausting the group returns all 24, identity first") {
        const PermutationSet set = select_permutations(2, 24);
        CHECK(set.count() == 24);
        CHECK(set.perms[0] == std::vector<int>{0, 1, 2, 3});
        for (int i = 0; i < 24; ++i) {
            for (int j = i + 1; j < 24; ++j) {
                CHECK(set.perms[static_cast<std::size_t>(i)] !=
                      set.perms[static_cast<std::size_t>(j)]);
            }
        }
    }
    SUBCASE("P=2 picks the lexicographically smallest derangement") {
        const PermutationSet set = select_permutations(2, 2);
        CHECK(set.perms[1] == std::vector<int>{1, 0, 3, 2});
        CHECK(hamming(set.perms[0], set.perms[1]) == 4);
    }
    SUBCASE("matches the exhaustive greedy oracle for every P") {
        for (int p = 1; p <= 24; ++p) {
            const PermutationSet set = select_permutations(2, p);
            const auto want = greedy_oracle(2, p);
            REQUIRE(set.count() == p);
            for (int i = 0; i < p; ++i) {
                CAPTURE(p);
                CAPTURE(i);
                CHECK(set.perms[static_cast<std::size_t>(i)] == want[static_cast<std::size_t>(i)]);
            }
        }
    }
    SUBCASE("parameter bounds") {
        CHECK_THROWS_AS(select_permutations(2, 25), ParameterError);
        CHECK_THROWS_AS(select_permutations(2, 0), ParameterError);
        CHECK_THROWS_AS(select_permutations(4, 2), ParameterError);
    }
}

TEST_CASE("3x3 permutation sets keep pairwise distances high") {
    const PermutationSet set = select_permutations(3, 30);
    CHECK(set.count() == 30);
    CHECK(set.perms[0] == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(min_pairwise_distance(set) >= 8);
}

TEST_CASE("every set has strictly positive pairwise distances") {
    for (int p : {1, 2, 5, 12, 24}) {
        const PermutationSet set = select_permutations(2, p);
        for (int i = 0; i < set.count(); ++i) {
            for (int j = i + 1; j < set.count(); ++j) {
                CHECK(hamming(set.perms[static_cast<std::size_t>(i)],
                              set.perms[static_cast<std::size_t>(j)]) > 0);
            }
        }
    }
}

TEST_CASE("split_tiles and reassemble") {
    SUBCASE("2x2 example") {
        const Tensor img({1, 2, 2}, {1, 2, 3, 4});
        const TileGrid grid = split_tiles(img, 2);
        REQUIRE(grid.tiles.size() == 4);
        CHECK(grid.tiles[0].values() == std::vector<double>{1});
        CHECK(grid.tiles[1].values() == std::vector<double>{2});
        CHECK(grid.tiles[2].values() == std::vector<double>{3});
        CHECK(grid.tiles[3].values() == std::vector<double>{4});
    }
    SUBCASE("round trip is exact on random images") {
        Rng rng(9);
        for (int g : {2, 3}) {
            const Tensor img = random_tensor({3, 12, 12}, rng, 0.0, 1.0);
            const Tensor back = reassemble(split_tiles(img, g));
            REQUIRE(back.shape() == img.shape());
            for (int i = 0; i < img.numel(); ++i) CHECK(back.data()[i] == img.data()[i]);
        }
    }
    SUBCASE("center tile of a 6x6 ramp via direct slicing") {
        const Tensor img = ramp_image(1, 6);
        const TileGrid grid = split_tiles(img, 3);
        const Tensor& center = grid.tiles[4];
        for (int y = 0; y < 2; ++y) {
            for (int x = 0; x < 2; ++x) {
                CHECK(center.at(0, y, x) == img.at(0, 2 + y, 2 + x));
            }
        }
    }
    SUBCASE("non-divisible dimensions") {
        CHECK_THROWS_AS(split_tiles(Tensor({1, 5, 6}), 2), DimensionError);
    }
}

TEST_CASE("shuffle_image") {
    const PermutationSet set = select_permutations(2, 24);
    const Tensor img({1, 2, 2}, {1, 2, 3, 4});

    SUBCASE("identity leaves the image untouched") {
        const Tensor out = shuffle_image(img, set, 0);
        CHECK(out.values() == img.values());
    }
    SUBCASE("manual placement for [1,0,3,2]") {
        const auto it = std::find(set.perms.begin(), set.perms.end(),
                                  std::vector<int>{1, 0, 3, 2});
        REQUIRE(it != set.perms.end());
        const int idx = static_cast<int>(it - set.perms.begin());
        const Tensor out = shuffle_image(img, set, idx);
        CHECK(out.values() == std::vector<double>{2, 1, 4, 3});
    }
    SUBCASE("a permutation followed by its inverse restores the image") {
        Rng rng(17);
        const Tensor big = random_tensor({3, 6, 6}, rng, 0.0, 1.0);
        for (int idx = 0; idx < set.count(); ++idx) {
            const auto& p = set.perms[static_cast<std::size_t>(idx)];
            std::vector<int> inv(p.size());
            for (std::size_t i = 0; i < p.size(); ++i) {
                inv[static_cast<std::size_t>(p[i])] = static_cast<int>(i);
            }
            const auto inv_it = std::find(set.perms.begin(), set.perms.end(), inv);
            REQUIRE(inv_it != set.perms.end());
            const int inv_idx = static_cast<int>(inv_it - set.perms.begin());
            const Tensor back =
                shuffle_image(shuffle_image(big, set, idx), set, inv_idx);
            CHECK(back.values() == big.values());
        }
    }
    SUBCASE("tile multiset is preserved") {
        Rng rng(18);
        const Tensor big = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
        const Tensor out = shuffle_image(big, set, 7);
        auto a = big.values();
        auto b = out.values();
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
    SUBCASE("index out of range") {
        CHECK_THROWS_AS(shuffle_image(img, set, 24), ParameterError);
        CHECK_THROWS_AS(shuffle_image(img, set, -1), ParameterError);
    }
}

TEST_CASE("maybe_shuffle") {
    const PermutationSet set = select_permutations(2, 4);
    const Tensor img({1, 4, 4});

    SUBCASE("beta = 1 never shuffles") {
        Rng rng(1);
        for (int i = 0; i < 50; ++i) {
            auto [out, idx] = maybe_shuffle(img, set, 1.0, rng);
            CHECK(idx == 0);
        }
    }
    SUBCASE("beta = 0 with P = 2 always picks index 1") {
        const PermutationSet two = select_permutations(2, 2);
        Rng rng(2);
        for (int i = 0; i < 50; ++i) {
            auto [out, idx] = maybe_shuffle(img, two, 0.0, rng);
            CHECK(idx == 1);
        }
    }
    SUBCASE("shuffle frequency concentrates near 1 - beta") {
        Rng rng(3);
        int shuffled = 0;
        constexpr int kDraws = 10000;
        for (int i = 0; i < kDraws; ++i) {
            auto [out, idx] = maybe_shuffle(img, set, 0.7, rng);
            if (idx != 0) ++shuffled;
        }
        const double freq = static_cast<double>(shuffled) / kDraws;
        CHECK(freq > 0.28);
        CHECK(freq < 0.32);
    }
    SUBCASE("index zero never pairs with a shuffled image and vice versa") {
        Rng rng(4);
        Rng pix(5);
        const Tensor marked = random_tensor({1, 4, 4}, pix, 0.0, 1.0);
        for (int i = 0; i < 200; ++i) {
            auto [out, idx] = maybe_shuffle(marked, set, 0.5, rng);
            const bool changed = out.values() != marked.values();
            if (idx == 0) {
                CHECK_FALSE(changed);
            } else {
                CHECK(changed);
            }
        }
    }
}

TEST_CASE("permutation set file round trip") {
    namespace fs = std::filesystem;
    const PermutationSet set = select_permutations(3, 10);
    const auto path = (fs::temp_directory_path() / "sspda_perms_test.txt").string();
    save_permutation_set(set, path);
    const PermutationSet back = load_permutation_set(path);
    CHECK(back.grid_side == set.grid_side);
    REQUIRE(back.count() == set.count());
    for (int i = 0; i < set.count(); ++i) {
        CHECK(back.perms[static_cast<std::size_t>(i)] == set.perms[static_cast<std::size_t>(i)]);
    }
    fs::remove(path);
}

TEST_SUITE_END();
