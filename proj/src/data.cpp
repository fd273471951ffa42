#include "sspda/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sspda/errors.hpp"

namespace fs = std::filesystem;

namespace sspda {

namespace {

// One foreground color for every class: the class signal lives in the shape
// alone, so a global channel rotation shifts the look of both domains apart
// without remapping one class onto another.
constexpr double kForeground[3] = {0.92, 0.62, 0.28};

// Triangle wave, period 1, range [0, 1]. Pure arithmetic so the pixel stream
// is identical on every libm.
double tri(double t) {
    t -= std::floor(t);
    return t < 0.5 ? 2.0 * t : 2.0 * (1.0 - t);
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Glyph coverage in glyph-local coordinates (u, v roughly in [-1.3, 1.3]).
// Returns 0 outside, otherwise an intensity factor in (0, 1].
double glyph_coverage(int glyph, double u, double v, double thickness) {
    switch (glyph) {
        case 0: {  // diagonal bar
            const double a = (u + v) * 0.7071067811865476;
            const double b = (u - v) * 0.7071067811865476;
            return (std::abs(a) <= thickness && std::abs(b) <= 1.15) ? 1.0 : 0.0;
        }
        case 1:  // filled blob
            return u * u + v * v <= 0.9 * 0.9 ? 1.0 : 0.0;
        case 2: {  // ring
            const double r = std::sqrt(u * u + v * v);
            return (r >= 0.52 && r <= 1.0) ? 1.0 : 0.0;
        }
        case 3:  // cross
            return ((std::abs(u) <= thickness && std::abs(v) <= 1.0) ||
                    (std::abs(v) <= thickness && std::abs(u) <= 1.0))
                       ? 1.0
                       : 0.0;
        case 4: {  // 2x2 checker block
            if (std::abs(u) > 1.0 || std::abs(v) > 1.0) return 0.0;
            const int cu = u + 1.0 < 1.0 ? 0 : 1;
            const int cv = v + 1.0 < 1.0 ? 0 : 1;
            return (cu + cv) % 2 == 0 ? 1.0 : 0.0;
        }
        default: {  // gradient square
            if (std::abs(u) > 0.9 || std::abs(v) > 0.9) return 0.0;
            return 0.25 + 0.75 * (u + 0.9) / 1.8;
        }
    }
}

Sample render_sample(const SyntheticSpec& spec, Domain domain, int cls, int index) {
    const int side = spec.image_side;
    const std::uint64_t stream = (domain == Domain::kTarget ? (1ULL << 40) : 0ULL) |
                                 (static_cast<std::uint64_t>(cls) << 20) |
                                 static_cast<std::uint64_t>(index);
    Rng rng(derive_seed(spec.seed, stream));

    const int glyph = cls % 6;
    const int cycle = cls / 6;
    const double half = side * rng.uniform(0.75, 1.05) * 0.34;
    const double cx = side * 0.5 + rng.uniform(-side / 12.0, side / 12.0);
    const double cy = side * 0.5 + rng.uniform(-side / 12.0, side / 12.0);
    const double thickness = rng.uniform(0.22, 0.30) + 0.05 * cycle;
    const double intensity = rng.uniform(0.85, 1.0);
    const double tint[3] = {rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03),
                            rng.uniform(-0.03, 0.03)};
    const double stripe_phase = rng.uniform(0.0, 1.0);
    const double stripe_period = side / 6.0;

    Sample s;
    s.domain = domain;
    s.label = cls;
    s.image = Tensor({3, side, side});
    std::vector<double> fg_mask(static_cast<std::size_t>(side) * side, 0.0);

    const double base_bg[3] = {0.12, 0.15, 0.18};
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const double u = (x + 0.5 - cx) / half;
            const double v = (y + 0.5 - cy) / half;
            const double cov = glyph_coverage(glyph, u, v, thickness);
            fg_mask[static_cast<std::size_t>(y * side + x)] = cov;
            for (int ch = 0; ch < 3; ++ch) {
                const double bg =
                    base_bg[ch] + tint[ch] + 0.08 * (static_cast<double>(y) / side);
                const double fg = kForeground[ch] * intensity * cov;
                s.image.at(ch, y, x) = cov > 0.0 ? fg : bg;
            }
        }
    }

    if (domain == Domain::kTarget) {
        // Fixed appearance transform: rotate channels, add stripes on the
        // background. Shapes stay where they are; only looks change.
        const double cs = spec.color_shift;
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
                const double r = s.image.at(0, y, x);
                const double g = s.image.at(1, y, x);
                const double b = s.image.at(2, y, x);
                s.image.at(0, y, x) = (1.0 - cs) * r + cs * g;
                s.image.at(1, y, x) = (1.0 - cs) * g + cs * b;
                s.image.at(2, y, x) = (1.0 - cs) * b + cs * r;
                if (fg_mask[static_cast<std::size_t>(y * side + x)] == 0.0) {
                    const double stripe =
                        spec.texture_level *
                        (tri((x + 0.5 * y) / stripe_period + stripe_phase) - 0.5);
                    for (int ch = 0; ch < 3; ++ch) {
                        s.image.at(ch, y, x) = clamp01(s.image.at(ch, y, x) + stripe);
                    }
                }
            }
        }
    }

    if (spec.noise_level > 0.0) {
        for (double& v : s.image.values()) {
            v = clamp01(v + rng.uniform(-spec.noise_level, spec.noise_level));
        }
    }
    return s;
}

void validate_spec(const SyntheticSpec& spec) {
    if (spec.num_classes < 1) throw ParameterError("synthetic: need at least one class");
    if (spec.target_classes < 1 || spec.target_classes > spec.num_classes) {
        throw ParameterError("synthetic: target class count must be in [1, num_classes]");
    }
    if (spec.image_side < 6) throw ParameterError("synthetic: image side too small");
    if (spec.samples_per_class < 1) throw ParameterError("synthetic: samples per class < 1");
    if (spec.noise_level < 0.0 || spec.color_shift < 0.0 || spec.color_shift > 1.0 ||
        spec.texture_level < 0.0) {
        throw ParameterError("synthetic: shift parameters out of range");
    }
}

std::string zero_pad(int v, int width) {
    std::ostringstream os;
    os.width(width);
    os.fill('0');
    os << v;
    return os.str();
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    validate_spec(spec);
    SyntheticData data;
    data.source.num_classes = spec.num_classes;
    data.target.num_classes = spec.num_classes;
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        for (int i = 0; i < spec.samples_per_class; ++i) {
            data.source.samples.push_back(render_sample(spec, Domain::kSource, cls, i));
        }
    }
    for (int cls = 0; cls < spec.target_classes; ++cls) {
        for (int i = 0; i < spec.samples_per_class; ++i) {
            data.target.samples.push_back(render_sample(spec, Domain::kTarget, cls, i));
        }
    }
    return data;
}

// --- raster IO ---------------------------------------------------------------

namespace {

// Reads the next PNM header token, skipping whitespace and # comments.
std::string next_pnm_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    if (tok.empty()) throw IoError("truncated header in " + path);
    return tok;
}

}  // namespace

Tensor read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const std::string magic = next_pnm_token(in, path);
    if (magic != "P6" && magic != "P5") {
        throw IoError(path + ": unsupported format '" + magic + "' (want P6 or P5)");
    }
    const int w = std::stoi(next_pnm_token(in, path));
    const int h = std::stoi(next_pnm_token(in, path));
    const int maxval = std::stoi(next_pnm_token(in, path));
    if (w <= 0 || h <= 0) throw IoError(path + ": bad dimensions");
    if (maxval != 255) throw IoError(path + ": unsupported maxval " + std::to_string(maxval));
    // exactly one whitespace byte separates header and pixel data; next_pnm_token
    // already consumed it as the token terminator.
    const int channels = magic == "P6" ? 3 : 1;
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw IoError(path + ": truncated pixel data");
    }
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                const std::size_t src =
                    channels == 3 ? static_cast<std::size_t>((y * w + x) * 3 + ch)
                                  : static_cast<std::size_t>(y * w + x);
                img.at(ch, y, x) = raw[src] / 255.0;
            }
        }
    }
    return img;
}

void write_ppm(const Tensor& image, const std::string& path) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("write_ppm: expected [3 x h x w] image, got " + image.shape_str());
    }
    const int h = image.dim(1), w = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                const double v = clamp01(image.at(ch, y, x));
                raw[static_cast<std::size_t>((y * w + x) * 3 + ch)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("failed writing " + path);
}

Tensor resize_nearest(const Tensor& image, int out_h, int out_w) {
    if (image.rank() != 3) throw DimensionError("resize_nearest: expected [c x h x w]");
    if (out_h <= 0 || out_w <= 0) throw ParameterError("resize_nearest: bad output size");
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < out_h; ++y) {
            const int sy = static_cast<int>(static_cast<long long>(y) * h / out_h);
            for (int x = 0; x < out_w; ++x) {
                const int sx = static_cast<int>(static_cast<long long>(x) * w / out_w);
                out.at(ch, y, x) = image.at(ch, sy, sx);
            }
        }
    }
    return out;
}

Dataset load_directory(const std::string& root, const std::vector<std::string>& class_list,
                       int image_side, Domain domain, std::vector<std::string>* warnings) {
    if (!fs::exists(root) || !fs::is_directory(root)) {
        throw IoError("dataset directory not found: " + root);
    }
    Dataset ds;
    ds.num_classes = static_cast<int>(class_list.size());

    std::vector<std::string> on_disk;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) on_disk.push_back(entry.path().filename().string());
    }
    std::sort(on_disk.begin(), on_disk.end());
    for (const auto& name : on_disk) {
        if (std::find(class_list.begin(), class_list.end(), name) == class_list.end()) {
            if (warnings) warnings->push_back("skipping unknown class directory: " + name);
        }
    }

    for (std::size_t cls = 0; cls < class_list.size(); ++cls) {
        const fs::path dir = fs::path(root) / class_list[cls];
        if (!fs::exists(dir)) continue;
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            const std::string ext = entry.path().extension().string();
            if (ext == ".ppm" || ext == ".pgm") files.push_back(entry.path().string());
        }
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            Sample s;
            Tensor img = read_pnm(file);
            if (img.dim(1) != image_side || img.dim(2) != image_side) {
                img = resize_nearest(img, image_side, image_side);
            }
            s.image = std::move(img);
            s.label = static_cast<int>(cls);
            s.domain = domain;
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

void write_manifest(const std::string& path, const std::vector<std::string>& relative_paths,
                    const std::vector<int>& labels, const std::vector<Domain>& domains) {
    if (relative_paths.size() != labels.size() || labels.size() != domains.size()) {
        throw DimensionError("write_manifest: column lengths differ");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (std::size_t i = 0; i < relative_paths.size(); ++i) {
        out << relative_paths[i] << ' ' << labels[i] << ' '
            << (domains[i] == Domain::kSource ? "source" : "target") << '\n';
    }
    if (!out) throw IoError("failed writing " + path);
}

void write_dataset_tree(const SyntheticData& data, const std::string& out_dir) {
    std::vector<std::string> paths;
    std::vector<int> labels;
    std::vector<Domain> domains;
    auto dump = [&](const Dataset& ds, const char* domain_name, Domain domain) {
        std::vector<int> per_class_count(static_cast<std::size_t>(ds.num_classes), 0);
        for (const auto& s : ds.samples) {
            const std::string cls_dir = "class_" + std::to_string(s.label);
            const fs::path dir = fs::path(out_dir) / domain_name / cls_dir;
            fs::create_directories(dir);
            const std::string name =
                "img_" + zero_pad(per_class_count[static_cast<std::size_t>(s.label)]++, 5) +
                ".ppm";
            write_ppm(s.image, (dir / name).string());
            paths.push_back(std::string(domain_name) + "/" + cls_dir + "/" + name);
            labels.push_back(s.label);
            domains.push_back(domain);
        }
    };
    dump(data.source, "source", Domain::kSource);
    dump(data.target, "target", Domain::kTarget);
    write_manifest((fs::path(out_dir) / "manifest.txt").string(), paths, labels, domains);
}

// --- batching ---------------------------------------------------------------

namespace {

// Shuffled index stream that reshuffles and restarts when exhausted.
class IndexStream {
public:
    IndexStream(int n, std::uint64_t seed) : rng_(seed), order_(static_cast<std::size_t>(n)) {
        for (int i = 0; i < n; ++i) order_[static_cast<std::size_t>(i)] = i;
        rng_.shuffle(order_);
    }
    int next() {
        if (pos_ == static_cast<int>(order_.size())) {
            rng_.shuffle(order_);
            pos_ = 0;
        }
        return order_[static_cast<std::size_t>(pos_++)];
    }

private:
    Rng rng_;
    std::vector<int> order_;
    int pos_ = 0;
};

}  // namespace

BatchPlan make_batches(int n_source, int n_target, int batch_source, int batch_target, Rng& rng) {
    if (n_source <= 0 || n_target <= 0) throw ParameterError("make_batches: empty dataset");
    if (batch_source <= 0 || batch_target <= 0) {
        throw ParameterError("make_batches: batch sizes must be positive");
    }
    const auto ceil_div = [](int a, int b) { return (a + b - 1) / b; };
    const int steps = std::max(ceil_div(n_source, batch_source), ceil_div(n_target, batch_target));

    IndexStream src(n_source, rng.next());
    IndexStream tgt(n_target, rng.next());
    BatchPlan plan;
    plan.source_indices.resize(static_cast<std::size_t>(steps));
    plan.target_indices.resize(static_cast<std::size_t>(steps));
    for (int s = 0; s < steps; ++s) {
        auto& sb = plan.source_indices[static_cast<std::size_t>(s)];
        auto& tb = plan.target_indices[static_cast<std::size_t>(s)];
        sb.reserve(static_cast<std::size_t>(batch_source));
        tb.reserve(static_cast<std::size_t>(batch_target));
        for (int i = 0; i < batch_source; ++i) sb.push_back(src.next());
        for (int i = 0; i < batch_target; ++i) tb.push_back(tgt.next());
    }
    return plan;
}

Tensor pack_images(const Dataset& data, const std::vector<int>& indices) {
    if (indices.empty()) throw ParameterError("pack_images: empty index list");
    const Tensor& first = data.samples.at(static_cast<std::size_t>(indices[0])).image;
    const int c = first.dim(0), h = first.dim(1), w = first.dim(2);
    Tensor out({static_cast<int>(indices.size()), c, h, w});
    const int plane = c * h * w;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Tensor& img = data.samples.at(static_cast<std::size_t>(indices[i])).image;
        if (img.dim(0) != c || img.dim(1) != h || img.dim(2) != w) {
            throw DimensionError("pack_images: mixed image shapes in dataset");
        }
        std::copy(img.data(), img.data() + plane, out.data() + i * static_cast<std::size_t>(plane));
    }
    return out;
}

std::vector<int> gather_labels(const Dataset& data, const std::vector<int>& indices) {
    std::vector<int> labels;
    labels.reserve(indices.size());
    for (int idx : indices) {
        labels.push_back(data.samples.at(static_cast<std::size_t>(idx)).label);
    }
    return labels;
}

}  // namespace sspda
