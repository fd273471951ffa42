#include "sspda/network.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "sspda/errors.hpp"
#include "sspda/rng.hpp"

namespace sspda {

void ModelConfig::validate() const {
    if (num_classes < 1) throw ParameterError("model: class count must be positive");
    if (num_permutations < 1) throw ParameterError("model: permutation count must be positive");
    if (in_channels < 1 || conv1_channels < 1 || conv2_channels < 1) {
        throw ParameterError("model: channel counts must be positive");
    }
    if (conv1_stride < 1 || conv2_stride < 1 || pool1 < 1 || pool2 < 1) {
        throw ParameterError("model: strides and pools must be positive");
    }
    if (conv2_channels % 2 != 0) {
        throw ParameterError("model: feature dim must be even (domain hidden = F/2)");
    }
    stage_sides();  // throws on geometry problems
}

std::vector<int> ModelConfig::stage_sides() const {
    auto conv_out = [](int side, int kernel, int stride, const char* what) {
        if (kernel > side) {
            throw ParameterError(std::string("model: ") + what + " kernel larger than its input");
        }
        return (side - kernel) / stride + 1;
    };
    std::vector<int> sides;
    sides.push_back(image_side);
    int s = conv_out(image_side, conv1_kernel, conv1_stride, "conv1");
    sides.push_back(s);
    if (s % pool1 != 0) throw ParameterError("model: pool1 does not divide conv1 output");
    s /= pool1;
    sides.push_back(s);
    s = conv_out(s, conv2_kernel, conv2_stride, "conv2");
    sides.push_back(s);
    if (s % pool2 != 0) throw ParameterError("model: pool2 does not divide conv2 output");
    s /= pool2;
    sides.push_back(s);
    return sides;
}

std::vector<Tensor*> SspdaModel::parameters() {
    return {&conv1,     &conv2,     &object_w,  &object_b, &puzzle_w, &puzzle_b,
            &domain_w1, &domain_b1, &domain_w2, &domain_b2, &domain_w3, &domain_b3};
}

std::vector<std::pair<std::string, Tensor*>> SspdaModel::named_parameters() {
    return {{"conv1", &conv1},
            {"conv2", &conv2},
            {"object_w", &object_w},
            {"object_b", &object_b},
            {"puzzle_w", &puzzle_w},
            {"puzzle_b", &puzzle_b},
            {"domain_w1", &domain_w1},
            {"domain_b1", &domain_b1},
            {"domain_w2", &domain_w2},
            {"domain_b2", &domain_b2},
            {"domain_w3", &domain_w3},
            {"domain_b3", &domain_b3}};
}

void SspdaModel::zero_grads() {
    for (Tensor* p : parameters()) p->zero_grad();
}

long long SspdaModel::parameter_count() const {
    long long n = 0;
    for (const Tensor* p : const_cast<SspdaModel*>(this)->parameters()) n += p->numel();
    return n;
}

namespace {

Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

SspdaModel build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    SspdaModel m;
    m.config = config;
    Rng rng(derive_seed(seed, 0x1017));

    const int f = config.feature_dim();
    const int hid = config.domain_hidden();
    m.conv1 = init_uniform({config.conv1_channels, config.in_channels, config.conv1_kernel,
                            config.conv1_kernel},
                           config.in_channels * config.conv1_kernel * config.conv1_kernel, rng);
    m.conv2 = init_uniform({config.conv2_channels, config.conv1_channels, config.conv2_kernel,
                            config.conv2_kernel},
                           config.conv1_channels * config.conv2_kernel * config.conv2_kernel, rng);
    m.object_w = init_uniform({f, config.num_classes}, f, rng);
    m.object_b = Tensor({config.num_classes});
    m.puzzle_w = init_uniform({f, config.num_permutations}, f, rng);
    m.puzzle_b = Tensor({config.num_permutations});
    m.domain_w1 = init_uniform({f, hid}, f, rng);
    m.domain_b1 = Tensor({hid});
    m.domain_w2 = init_uniform({hid, hid}, hid, rng);
    m.domain_b2 = Tensor({hid});
    m.domain_w3 = init_uniform({hid, 1}, hid, rng);
    m.domain_b3 = Tensor({1});
    return m;
}

Graph::NodeId forward_features(Graph& g, SspdaModel& model, Graph::NodeId images) {
    auto x = g.conv2d(images, g.param(model.conv1), model.config.conv1_stride);
    x = g.relu(x);
    x = g.max_pool2d(x, model.config.pool1);
    x = g.conv2d(x, g.param(model.conv2), model.config.conv2_stride);
    x = g.relu(x);
    x = g.max_pool2d(x, model.config.pool2);
    return g.global_avg_pool(x);
}

Graph::NodeId forward_class(Graph& g, SspdaModel& model, Graph::NodeId features) {
    return g.dense(features, g.param(model.object_w), g.param(model.object_b));
}

Graph::NodeId forward_puzzle(Graph& g, SspdaModel& model, Graph::NodeId features) {
    return g.dense(features, g.param(model.puzzle_w), g.param(model.puzzle_b));
}

Graph::NodeId forward_domain(Graph& g, SspdaModel& model, Graph::NodeId features, double lambda) {
    auto x = g.gradient_reversal(features, lambda);
    x = g.relu(g.dense(x, g.param(model.domain_w1), g.param(model.domain_b1)));
    x = g.relu(g.dense(x, g.param(model.domain_w2), g.param(model.domain_b2)));
    x = g.dense(x, g.param(model.domain_w3), g.param(model.domain_b3));
    // clamp keeps the output strictly inside (0, 1) even for saturated inputs
    return g.sigmoid(x, 1e-7);
}

double lambda_at(const LambdaSchedule& schedule, int step) {
    if (schedule.lambda_max < 0.0) throw ParameterError("lambda schedule: negative lambda_max");
    if (schedule.total_steps < 1) throw ParameterError("lambda schedule: total_steps must be >= 1");
    if (step < 0 || step > schedule.total_steps) {
        throw ParameterError("lambda schedule: step out of [0, total_steps]");
    }
    const double q = static_cast<double>(step) / schedule.total_steps;
    return schedule.lambda_max * (2.0 / (1.0 + std::exp(-10.0 * q)) - 1.0);
}

// --- checkpoint IO ------------------------------------------------------------

namespace {

void write_le_doubles(std::ofstream& out, const std::vector<double>& values) {
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
        out.write(reinterpret_cast<const char*>(b), 8);
    }
}

void read_le_doubles(std::ifstream& in, std::vector<double>& values, const std::string& path) {
    for (double& v : values) {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        if (in.gcount() != 8) throw IoError(path + ": truncated checkpoint data");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        v = std::bit_cast<double>(bits);
    }
}

}  // namespace

void save_checkpoint(const SspdaModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    auto& m = const_cast<SspdaModel&>(model);
    const auto& c = model.config;
    out << "sspda-checkpoint 1\n";
    out << "config " << c.image_side << ' ' << c.in_channels << ' ' << c.conv1_channels << ' '
        << c.conv1_kernel << ' ' << c.conv1_stride << ' ' << c.pool1 << ' ' << c.conv2_channels
        << ' ' << c.conv2_kernel << ' ' << c.conv2_stride << ' ' << c.pool2 << ' ' << c.num_classes
        << ' ' << c.num_permutations << '\n';
    for (const auto& [name, tensor] : m.named_parameters()) {
        out << "param " << name << ' ' << tensor->rank();
        for (int i = 0; i < tensor->rank(); ++i) out << ' ' << tensor->dim(i);
        out << '\n';
    }
    out << "data\n";
    for (const auto& [name, tensor] : m.named_parameters()) {
        write_le_doubles(out, tensor->values());
    }
    if (!out) throw IoError("failed writing " + path);
}

SspdaModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "sspda-checkpoint 1") {
        throw IoError(path + ": not a checkpoint file");
    }
    if (!std::getline(in, line)) throw IoError(path + ": missing config line");
    std::istringstream cfg_line(line);
    std::string tag;
    ModelConfig c;
    cfg_line >> tag >> c.image_side >> c.in_channels >> c.conv1_channels >> c.conv1_kernel >>
        c.conv1_stride >> c.pool1 >> c.conv2_channels >> c.conv2_kernel >> c.conv2_stride >>
        c.pool2 >> c.num_classes >> c.num_permutations;
    if (tag != "config" || !cfg_line) throw IoError(path + ": bad config line");

    SspdaModel model = build_model(c, 0);
    std::map<std::string, std::vector<int>> declared;
    std::vector<std::string> order;
    while (std::getline(in, line)) {
        if (line == "data") break;
        std::istringstream ls(line);
        std::string kind, name;
        int rank = 0;
        ls >> kind >> name >> rank;
        if (kind != "param" || !ls) throw IoError(path + ": bad header line '" + line + "'");
        std::vector<int> shape(static_cast<std::size_t>(rank));
        for (auto& d : shape) ls >> d;
        if (!ls) throw IoError(path + ": bad shape for " + name);
        declared[name] = shape;
        order.push_back(name);
    }
    auto named = model.named_parameters();
    if (order.size() != named.size()) throw IoError(path + ": parameter count mismatch");
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto& [name, tensor] = named[i];
        if (order[i] != name) throw IoError(path + ": unexpected parameter " + order[i]);
        if (declared[name] != tensor->shape()) {
            throw IoError(path + ": shape mismatch for " + name);
        }
        read_le_doubles(in, tensor->values(), path);
    }
    return model;
}

}  // namespace sspda
