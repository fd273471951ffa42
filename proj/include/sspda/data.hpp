#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sspda/rng.hpp"
#include "sspda/tensor.hpp"

namespace sspda {

enum class Domain { kSource, kTarget };

/// One image with an optional class label. Target labels are carried only for
/// oracle evaluation; the trainer never reads them.
struct Sample {
    Tensor image;  // [c x h x w], values in [0, 1]
    int label = -1;
    Domain domain = Domain::kSource;
};

struct Dataset {
    std::vector<Sample> samples;
    int num_classes = 0;

    int size() const { return static_cast<int>(samples.size()); }
    bool empty() const { return samples.empty(); }
};

/// Parameters of the synthetic shape benchmark. Source renders all classes;
/// target keeps only class ids 0..target_classes-1 and differs from the
/// source by a fixed appearance transform (channel rotation, background
/// texture) plus additive noise.
struct SyntheticSpec {
    int num_classes = 6;
    int target_classes = 3;
    int image_side = 48;  // must be divisible by the jigsaw grid side
    int samples_per_class = 200;
    double color_shift = 0.5;     // 0 = none, 1 = full channel rotation on target
    double texture_level = 0.15;  // amplitude of the target background stripes
    double noise_level = 0.04;    // uniform pixel noise, both domains
    std::uint64_t seed = 1234;
};

struct SyntheticData {
    Dataset source;
    Dataset target;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// --- uncompressed raster IO ------------------------------------------------

// P6 (color) or P5 (gray) with maxval 255. Gray images load as 3 identical
// channels. Values scale to [0, 1].
Tensor read_pnm(const std::string& path);
void write_ppm(const Tensor& image, const std::string& path);

// Nearest-neighbor resize of a [c x h x w] image to side x side.
Tensor resize_nearest(const Tensor& image, int out_h, int out_w);

/// Loads `root/<class>/*.ppm|*.pgm` for every class in class_list (ids follow
/// list order). Subdirectories not named in the list are skipped; their names
/// are returned through `warnings` when given.
Dataset load_directory(const std::string& root, const std::vector<std::string>& class_list,
                       int image_side, Domain domain,
                       std::vector<std::string>* warnings = nullptr);

// One "relative_path class_id domain" line per sample.
void write_manifest(const std::string& path, const std::vector<std::string>& relative_paths,
                    const std::vector<int>& labels, const std::vector<Domain>& domains);

// Writes class-per-directory PPM trees for both domains plus manifest.txt.
void write_dataset_tree(const SyntheticData& data, const std::string& out_dir);

// --- batching ---------------------------------------------------------------

/// Index plan for one epoch of mixed batches. Every batch holds exactly
/// batch_source source rows and batch_target target rows. The larger dataset
/// defines the epoch: each of its samples appears once (a final wrap tops up
/// the last batch when the batch size does not divide it); the smaller one is
/// reshuffled and recycled.
struct BatchPlan {
    std::vector<std::vector<int>> source_indices;
    std::vector<std::vector<int>> target_indices;

    int steps() const { return static_cast<int>(source_indices.size()); }
};

BatchPlan make_batches(int n_source, int n_target, int batch_source, int batch_target, Rng& rng);

// Stack dataset rows into a [n x c x h x w] tensor / label list.
Tensor pack_images(const Dataset& data, const std::vector<int>& indices);
std::vector<int> gather_labels(const Dataset& data, const std::vector<int>& indices);

}  // namespace sspda
