#include "cmfl/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

#include "cmfl/error.hpp"
#include "cmfl/rng.hpp"

namespace cmfl {

namespace {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

constexpr std::size_t kKernel = 3;
constexpr std::size_t kTaps = kKernel * kKernel;
constexpr std::size_t kInferenceChunk = 64;

double sigmoid(double z) noexcept {
    const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    return std::clamp(s, std::numeric_limits<double>::denorm_min(), std::nextafter(1.0, 0.0));
}

// Tensor positions follow the order produced by build_layout().
struct BranchIndex {
    std::size_t first = 0;
    std::size_t blocks = 0;
    [[nodiscard]] std::size_t conv_w(std::size_t i) const noexcept { return first + 2 * i; }
    [[nodiscard]] std::size_t conv_b(std::size_t i) const noexcept { return first + 2 * i + 1; }
    [[nodiscard]] std::size_t embed_w() const noexcept { return first + 2 * blocks; }
    [[nodiscard]] std::size_t embed_b() const noexcept { return first + 2 * blocks + 1; }
};

struct Layout {
    BranchIndex a;
    BranchIndex b;
    std::size_t head_a_w = 0, head_a_b = 0;
    std::size_t head_b_w = 0, head_b_b = 0;
    std::size_t head_j_w = 0, head_j_b = 0;

    explicit Layout(const NetworkConfig& c) {
        const std::size_t per_branch = 2 * c.blocks_per_branch + 2;
        a = {0, c.blocks_per_branch};
        b = {per_branch, c.blocks_per_branch};
        const std::size_t h = 2 * per_branch;
        head_a_w = h;
        head_a_b = h + 1;
        head_b_w = h + 2;
        head_b_b = h + 3;
        head_j_w = h + 4;
        head_j_b = h + 5;
    }
};

std::vector<ParamTensor> build_layout(const NetworkConfig& c) {
    std::vector<ParamTensor> out;
    auto add = [&out](std::string name, std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (const std::size_t d : shape) n *= d;
        out.push_back({std::move(name), std::move(shape), std::vector<double>(n, 0.0)});
    };
    for (const auto& [prefix, channels] : {std::pair{"a", c.channels_a}, std::pair{"b", c.channels_b}}) {
        std::size_t cin = channels;
        for (std::size_t i = 0; i < c.blocks_per_branch; ++i) {
            const std::size_t f = c.filters_at(i);
            add(std::string(prefix) + ".conv" + std::to_string(i) + ".weight", {f, cin, kKernel, kKernel});
            add(std::string(prefix) + ".conv" + std::to_string(i) + ".bias", {f});
            cin = f;
        }
        add(std::string(prefix) + ".embed.weight", {c.embedding_dim, cin});
        add(std::string(prefix) + ".embed.bias", {c.embedding_dim});
    }
    add("head_a.weight", {1, c.embedding_dim});
    add("head_a.bias", {1});
    add("head_b.weight", {1, c.embedding_dim});
    add("head_b.bias", {1});
    add("head_joint.weight", {1, 2 * c.embedding_dim});
    add("head_joint.bias", {1});
    return out;
}

// Activations are stored channel-major: rows = channels, column = (b * H + y) * W + x.
// Pixels are mapped from [0, 1] to [-1, 1] on the way in.
Mat gather_input(std::span<const Image* const> images, std::size_t channels, std::size_t h, std::size_t w) {
    Mat x(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(images.size() * h * w));
    for (std::size_t b = 0; b < images.size(); ++b) {
        const Image& img = *images[b];
        if (img.channels != channels || img.height != h || img.width != w)
            throw DataError("input image shape " + std::to_string(img.channels) + "x" + std::to_string(img.height) +
                            "x" + std::to_string(img.width) + " does not match network " + std::to_string(channels) +
                            "x" + std::to_string(h) + "x" + std::to_string(w));
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < h * w; ++p)
                x(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(b * h * w + p)) = 2.0 * img.pixels[c * h * w + p] - 1.0;
    }
    return x;
}

Mat im2col(const Mat& x, std::size_t batch, std::size_t h, std::size_t w) {
    const auto channels = static_cast<std::size_t>(x.rows());
    Mat cols = Mat::Zero(static_cast<Eigen::Index>(channels * kTaps), x.cols());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const auto pix = static_cast<Eigen::Index>((b * h + y) * w + xx);
                double* dst = cols.col(pix).data();
                for (std::size_t ky = 0; ky < kKernel; ++ky) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < kKernel; ++kx) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                        const double* src = x.col(static_cast<Eigen::Index>((b * h + static_cast<std::size_t>(sy)) * w +
                                                                            static_cast<std::size_t>(sx)))
                                                .data();
                        const std::size_t tap = ky * kKernel + kx;
                        for (std::size_t c = 0; c < channels; ++c) dst[c * kTaps + tap] = src[c];
                    }
                }
            }
    return cols;
}

Mat col2im(const Mat& cols, std::size_t channels, std::size_t batch, std::size_t h, std::size_t w) {
    Mat x = Mat::Zero(static_cast<Eigen::Index>(channels), cols.cols());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const auto pix = static_cast<Eigen::Index>((b * h + y) * w + xx);
                const double* src = cols.col(pix).data();
                for (std::size_t ky = 0; ky < kKernel; ++ky) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < kKernel; ++kx) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                        double* dst = x.col(static_cast<Eigen::Index>((b * h + static_cast<std::size_t>(sy)) * w +
                                                                      static_cast<std::size_t>(sx)))
                                          .data();
                        const std::size_t tap = ky * kKernel + kx;
                        for (std::size_t c = 0; c < channels; ++c) dst[c] += src[c * kTaps + tap];
                    }
                }
            }
    return x;
}

Mat avg_pool2(const Mat& a, std::size_t batch, std::size_t h, std::size_t w) {
    const std::size_t oh = h / 2, ow = w / 2;
    Mat out(a.rows(), static_cast<Eigen::Index>(batch * oh * ow));
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                const auto i00 = static_cast<Eigen::Index>((b * h + 2 * y) * w + 2 * x);
                const auto i10 = static_cast<Eigen::Index>((b * h + 2 * y + 1) * w + 2 * x);
                out.col(static_cast<Eigen::Index>((b * oh + y) * ow + x)) =
                    0.25 * (a.col(i00) + a.col(i00 + 1) + a.col(i10) + a.col(i10 + 1));
            }
    return out;
}

Mat avg_pool2_backward(const Mat& d_out, std::size_t batch, std::size_t h, std::size_t w) {
    const std::size_t oh = h / 2, ow = w / 2;
    Mat d_in(d_out.rows(), static_cast<Eigen::Index>(batch * h * w));
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                const auto i00 = static_cast<Eigen::Index>((b * h + 2 * y) * w + 2 * x);
                const auto i10 = static_cast<Eigen::Index>((b * h + 2 * y + 1) * w + 2 * x);
                const Eigen::VectorXd g = 0.25 * d_out.col(static_cast<Eigen::Index>((b * oh + y) * ow + x));
                d_in.col(i00) = g;
                d_in.col(i00 + 1) = g;
                d_in.col(i10) = g;
                d_in.col(i10 + 1) = g;
            }
    return d_in;
}

struct BranchCache {
    std::size_t batch = 0;
    std::vector<std::size_t> heights;
    std::vector<std::size_t> widths;
    std::vector<Mat> cols;
    std::vector<Mat> pre;
    Mat gap;
    Mat emb;
};

// keep_cache=false drops the per-block buffers (inference).
BranchCache branch_forward(const ParameterSet& params, const BranchIndex& idx, std::span<const Image* const> images,
                           std::size_t channels, bool keep_cache) {
    const NetworkConfig& c = params.config;
    BranchCache cache;
    cache.batch = images.size();
    std::size_t h = c.input_height, w = c.input_width, cin = channels;
    Mat act = gather_input(images, channels, h, w);

    for (std::size_t i = 0; i < idx.blocks; ++i) {
        const std::size_t f = c.filters_at(i);
        const ParamTensor& wt = params.tensors[idx.conv_w(i)];
        const ParamTensor& bt = params.tensors[idx.conv_b(i)];
        Mat cols = im2col(act, cache.batch, h, w);
        Mat z = ConstRowMap(wt.values.data(), static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(cin * kTaps)) * cols;
        z.colwise() += ConstVecMap(bt.values.data(), static_cast<Eigen::Index>(f));
        act = avg_pool2(z.cwiseMax(0.0), cache.batch, h, w);
        if (keep_cache) {
            cache.heights.push_back(h);
            cache.widths.push_back(w);
            cache.cols.push_back(std::move(cols));
            cache.pre.push_back(std::move(z));
        }
        h /= 2;
        w /= 2;
        cin = f;
    }

    const auto hw = static_cast<Eigen::Index>(h * w);
    cache.gap.resize(static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(cache.batch));
    for (std::size_t b = 0; b < cache.batch; ++b)
        cache.gap.col(static_cast<Eigen::Index>(b)) =
            act.middleCols(static_cast<Eigen::Index>(b) * hw, hw).rowwise().sum() / static_cast<double>(hw);

    const ParamTensor& ew = params.tensors[idx.embed_w()];
    const ParamTensor& eb = params.tensors[idx.embed_b()];
    const auto d = static_cast<Eigen::Index>(c.embedding_dim);
    cache.emb = ConstRowMap(ew.values.data(), d, static_cast<Eigen::Index>(cin)) * cache.gap;
    cache.emb.colwise() += ConstVecMap(eb.values.data(), d);
    return cache;
}

void branch_backward(const ParameterSet& params, const BranchIndex& idx, const BranchCache& cache, const Mat& d_emb,
                     Gradients& grads) {
    const NetworkConfig& c = params.config;
    const auto d = static_cast<Eigen::Index>(c.embedding_dim);
    const auto c_last = static_cast<Eigen::Index>(c.filters_at(idx.blocks - 1));

    RowMap(grads.per_tensor[idx.embed_w()].data(), d, c_last).noalias() += d_emb * cache.gap.transpose();
    VecMap(grads.per_tensor[idx.embed_b()].data(), d) += d_emb.rowwise().sum();
    const Mat d_gap =
        ConstRowMap(params.tensors[idx.embed_w()].values.data(), d, c_last).transpose() * d_emb;

    const std::size_t fh = c.final_height(), fw = c.final_width();
    const auto hw = static_cast<Eigen::Index>(fh * fw);
    Mat d_act(c_last, static_cast<Eigen::Index>(cache.batch) * hw);
    for (std::size_t b = 0; b < cache.batch; ++b)
        d_act.middleCols(static_cast<Eigen::Index>(b) * hw, hw).colwise() =
            d_gap.col(static_cast<Eigen::Index>(b)) / static_cast<double>(hw);

    for (std::size_t i = idx.blocks; i-- > 0;) {
        const std::size_t h = cache.heights[i], w = cache.widths[i];
        const std::size_t f = c.filters_at(i);
        const std::size_t cin = i == 0 ? static_cast<std::size_t>(cache.cols[0].rows()) / kTaps : c.filters_at(i - 1);
        Mat d_z = avg_pool2_backward(d_act, cache.batch, h, w);
        d_z.array() *= (cache.pre[i].array() > 0.0).cast<double>();

        RowMap(grads.per_tensor[idx.conv_w(i)].data(), static_cast<Eigen::Index>(f),
               static_cast<Eigen::Index>(cin * kTaps))
            .noalias() += d_z * cache.cols[i].transpose();
        VecMap(grads.per_tensor[idx.conv_b(i)].data(), static_cast<Eigen::Index>(f)) += d_z.rowwise().sum();

        if (i > 0) {
            const Mat d_cols = ConstRowMap(params.tensors[idx.conv_w(i)].values.data(), static_cast<Eigen::Index>(f),
                                           static_cast<Eigen::Index>(cin * kTaps))
                                   .transpose() *
                               d_z;
            d_act = col2im(d_cols, cin, cache.batch, h, w);
        }
    }
}

double head_logit(const ParamTensor& w, const ParamTensor& b, const Mat& emb, Eigen::Index col) {
    return ConstVecMap(w.values.data(), emb.rows()).dot(emb.col(col)) + b.values[0];
}

// Joint head over concat(e_p, e_q).
double joint_logit(const ParamTensor& w, const ParamTensor& b, const Mat& emb_a, const Mat& emb_b, Eigen::Index col) {
    const auto d = emb_a.rows();
    return ConstVecMap(w.values.data(), d).dot(emb_a.col(col)) + ConstVecMap(w.values.data() + d, d).dot(emb_b.col(col)) +
           b.values[0];
}

}  // namespace

void NetworkConfig::validate() const {
    auto fail = [](const std::string& why) { throw ConfigError("incompatible geometry: " + why); };
    if (blocks_per_branch < 1) fail("blocks_per_branch must be >= 1");
    if (embedding_dim < 1) fail("embedding_dim must be >= 1");
    if (base_filters < 1) fail("base_filters must be >= 1");
    if (channels_a < 1 || channels_b < 1) fail("channel counts must be >= 1");
    if (blocks_per_branch >= 16) fail("blocks_per_branch too large");
    const std::size_t factor = std::size_t{1} << blocks_per_branch;
    if (input_height == 0 || input_width == 0 || input_height % factor != 0 || input_width % factor != 0)
        fail("input " + std::to_string(input_height) + "x" + std::to_string(input_width) + " not divisible by " +
             std::to_string(factor));
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
    j = nlohmann::json{{"input_height", c.input_height},   {"input_width", c.input_width},
                       {"channels_a", c.channels_a},       {"channels_b", c.channels_b},
                       {"blocks_per_branch", c.blocks_per_branch}, {"base_filters", c.base_filters},
                       {"embedding_dim", c.embedding_dim}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
    NetworkConfig d;
    c.input_height = j.value("input_height", d.input_height);
    c.input_width = j.value("input_width", d.input_width);
    c.channels_a = j.value("channels_a", d.channels_a);
    c.channels_b = j.value("channels_b", d.channels_b);
    c.blocks_per_branch = j.value("blocks_per_branch", d.blocks_per_branch);
    c.base_filters = j.value("base_filters", d.base_filters);
    c.embedding_dim = j.value("embedding_dim", d.embedding_dim);
    c.seed = j.value("seed", d.seed);
}

std::size_t ParameterSet::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < tensors.size(); ++i)
        if (tensors[i].name == name) return i;
    throw std::out_of_range("no parameter named " + std::string(name));
}

std::size_t ParameterSet::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.values.size();
    return n;
}

Gradients Gradients::zeros_like(const ParameterSet& params) {
    Gradients g;
    g.per_tensor.reserve(params.tensors.size());
    for (const auto& t : params.tensors) g.per_tensor.emplace_back(t.values.size(), 0.0);
    return g;
}

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("Adam eps must be > 0");
}

std::string_view to_string(Head head) noexcept {
    switch (head) {
        case Head::a: return "A";
        case Head::b: return "B";
        case Head::joint: return "joint";
    }
    return "joint";
}

Head parse_head(std::string_view text) {
    if (text == "A" || text == "a") return Head::a;
    if (text == "B" || text == "b") return Head::b;
    if (text == "joint" || text == "J") return Head::joint;
    throw ConfigError("unknown head '" + std::string(text) + "' (expected A, B or joint)");
}

ParameterSet init_network(const NetworkConfig& config) {
    config.validate();
    ParameterSet params;
    params.config = config;
    params.tensors = build_layout(config);

    Rng rng(config.seed);
    for (ParamTensor& t : params.tensors) {
        if (t.shape.size() == 1) continue;  // bias
        std::size_t fan_in = 1;
        for (std::size_t k = 1; k < t.shape.size(); ++k) fan_in *= t.shape[k];
        // ReLU layers get the He gain; linear maps use 1/fan_in.
        const bool conv = t.shape.size() == 4;
        const double stddev = std::sqrt((conv ? 2.0 : 1.0) / static_cast<double>(fan_in));
        std::normal_distribution<double> dist(0.0, stddev);
        for (double& v : t.values) v = dist(rng);
    }
    for (const auto& t : params.tensors) {
        params.adam_m.emplace_back(t.values.size(), 0.0);
        params.adam_v.emplace_back(t.values.size(), 0.0);
    }
    return params;
}

struct BatchTrace::Impl {
    const ParameterSet* params = nullptr;
    Layout layout;
    BranchCache a;
    BranchCache b;
    std::vector<HeadOutputs> heads;

    explicit Impl(const ParameterSet& p) : params(&p), layout(p.config) {}
};

BatchTrace::BatchTrace(const ParameterSet& params, std::span<const BatchItem> batch)
    : impl_(std::make_unique<Impl>(params)) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    std::vector<const Image*> xa, xb;
    xa.reserve(batch.size());
    xb.reserve(batch.size());
    for (const BatchItem& item : batch) {
        if (item.x_a == nullptr || item.x_b == nullptr) throw DataError("training batch requires both channels");
        xa.push_back(item.x_a);
        xb.push_back(item.x_b);
    }
    const NetworkConfig& c = params.config;
    const Layout& L = impl_->layout;
    impl_->a = branch_forward(params, L.a, xa, c.channels_a, true);
    impl_->b = branch_forward(params, L.b, xb, c.channels_b, true);

    const auto& T = params.tensors;
    impl_->heads.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto col = static_cast<Eigen::Index>(i);
        HeadOutputs& h = impl_->heads[i];
        h.y = batch[i].y;
        h.p = sigmoid(head_logit(T[L.head_a_w], T[L.head_a_b], impl_->a.emb, col));
        h.q = sigmoid(head_logit(T[L.head_b_w], T[L.head_b_b], impl_->b.emb, col));
        h.r = sigmoid(joint_logit(T[L.head_j_w], T[L.head_j_b], impl_->a.emb, impl_->b.emb, col));
    }
}

BatchTrace::~BatchTrace() = default;
BatchTrace::BatchTrace(BatchTrace&&) noexcept = default;
BatchTrace& BatchTrace::operator=(BatchTrace&&) noexcept = default;

const std::vector<HeadOutputs>& BatchTrace::heads() const noexcept { return impl_->heads; }

Gradients BatchTrace::backward(std::span<const HeadGradient> head_grads) const {
    const ParameterSet& params = *impl_->params;
    const Layout& L = impl_->layout;
    const auto& T = params.tensors;
    const std::size_t n = impl_->heads.size();
    if (head_grads.size() != n) throw std::invalid_argument("head gradient count does not match batch");

    const auto d = static_cast<Eigen::Index>(params.config.embedding_dim);
    Gradients grads = Gradients::zeros_like(params);
    Mat d_emb_a = Mat::Zero(d, static_cast<Eigen::Index>(n));
    Mat d_emb_b = Mat::Zero(d, static_cast<Eigen::Index>(n));

    const ConstVecMap wa(T[L.head_a_w].values.data(), d);
    const ConstVecMap wb(T[L.head_b_w].values.data(), d);
    const ConstVecMap wj_a(T[L.head_j_w].values.data(), d);
    const ConstVecMap wj_b(T[L.head_j_w].values.data() + d, d);
    VecMap g_wa(grads.per_tensor[L.head_a_w].data(), d);
    VecMap g_wb(grads.per_tensor[L.head_b_w].data(), d);
    VecMap g_wj_a(grads.per_tensor[L.head_j_w].data(), d);
    VecMap g_wj_b(grads.per_tensor[L.head_j_w].data() + d, d);

    for (std::size_t i = 0; i < n; ++i) {
        const auto col = static_cast<Eigen::Index>(i);
        const HeadOutputs& h = impl_->heads[i];
        const double gp = head_grads[i].d_p * h.p * (1.0 - h.p);
        const double gq = head_grads[i].d_q * h.q * (1.0 - h.q);
        const double gr = head_grads[i].d_r * h.r * (1.0 - h.r);

        g_wa += gp * impl_->a.emb.col(col);
        grads.per_tensor[L.head_a_b][0] += gp;
        g_wb += gq * impl_->b.emb.col(col);
        grads.per_tensor[L.head_b_b][0] += gq;
        g_wj_a += gr * impl_->a.emb.col(col);
        g_wj_b += gr * impl_->b.emb.col(col);
        grads.per_tensor[L.head_j_b][0] += gr;

        d_emb_a.col(col) = gp * wa + gr * wj_a;
        d_emb_b.col(col) = gq * wb + gr * wj_b;
    }

    branch_backward(params, L.a, impl_->a, d_emb_a, grads);
    branch_backward(params, L.b, impl_->b, d_emb_b, grads);
    return grads;
}

BackwardResult backward(const ParameterSet& params, std::span<const BatchItem> batch, const LossParams& loss) {
    const BatchTrace trace(params, batch);
    BackwardResult result;
    result.heads = trace.heads();
    const double scale = 1.0 / static_cast<double>(batch.size());
    std::vector<HeadGradient> head_grads(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const HeadOutputs& h = result.heads[i];
        const LossValue v = combined_loss(h.p, h.q, h.r, h.y, loss);
        result.loss += v.value;
        head_grads[i] = {v.d_p * scale, v.d_q * scale, v.d_r * scale};
    }
    result.loss *= scale;
    result.grads = trace.backward(head_grads);
    return result;
}

double batch_objective(const ParameterSet& params, std::span<const BatchItem> batch, const LossParams& loss) {
    const BatchTrace trace(params, batch);
    return batch_loss(trace.heads(), loss).value;
}

ForwardOutput forward(const ParameterSet& params, const Image& x_a, const Image& x_b) {
    const Layout L(params.config);
    const std::array<const Image*, 1> ia{&x_a};
    const std::array<const Image*, 1> ib{&x_b};
    const BranchCache a = branch_forward(params, L.a, ia, params.config.channels_a, false);
    const BranchCache b = branch_forward(params, L.b, ib, params.config.channels_b, false);

    const auto& T = params.tensors;
    ForwardOutput out;
    out.e_p.assign(a.emb.data(), a.emb.data() + a.emb.size());
    out.e_q.assign(b.emb.data(), b.emb.data() + b.emb.size());
    out.e_r = out.e_p;
    out.e_r.insert(out.e_r.end(), out.e_q.begin(), out.e_q.end());
    out.p = sigmoid(head_logit(T[L.head_a_w], T[L.head_a_b], a.emb, 0));
    out.q = sigmoid(head_logit(T[L.head_b_w], T[L.head_b_b], b.emb, 0));
    out.r = sigmoid(joint_logit(T[L.head_j_w], T[L.head_j_b], a.emb, b.emb, 0));
    return out;
}

std::vector<double> predict_scores(const ParameterSet& params, std::span<const Image* const> x_a,
                                   std::span<const Image* const> x_b, Head head) {
    const bool need_a = head != Head::b;
    const bool need_b = head != Head::a;
    const std::size_t n = need_a ? x_a.size() : x_b.size();
    if (need_a && need_b && x_a.size() != x_b.size()) throw std::invalid_argument("channel batches differ in size");
    if (need_a && std::any_of(x_a.begin(), x_a.end(), [](const Image* p) { return p == nullptr; }))
        throw std::invalid_argument("channel unavailable for head");
    if (need_b && std::any_of(x_b.begin(), x_b.end(), [](const Image* p) { return p == nullptr; }))
        throw std::invalid_argument("channel unavailable for head");

    const Layout L(params.config);
    const auto& T = params.tensors;
    std::vector<double> scores;
    scores.reserve(n);
    for (std::size_t start = 0; start < n; start += kInferenceChunk) {
        const std::size_t len = std::min(kInferenceChunk, n - start);
        BranchCache a, b;
        if (need_a) a = branch_forward(params, L.a, x_a.subspan(start, len), params.config.channels_a, false);
        if (need_b) b = branch_forward(params, L.b, x_b.subspan(start, len), params.config.channels_b, false);
        for (std::size_t i = 0; i < len; ++i) {
            const auto col = static_cast<Eigen::Index>(i);
            switch (head) {
                case Head::a: scores.push_back(sigmoid(head_logit(T[L.head_a_w], T[L.head_a_b], a.emb, col))); break;
                case Head::b: scores.push_back(sigmoid(head_logit(T[L.head_b_w], T[L.head_b_b], b.emb, col))); break;
                case Head::joint:
                    scores.push_back(sigmoid(joint_logit(T[L.head_j_w], T[L.head_j_b], a.emb, b.emb, col)));
                    break;
            }
        }
    }
    return scores;
}

double predict_score(const ParameterSet& params, const Image* x_a, const Image* x_b, Head head) {
    if ((head != Head::b && x_a == nullptr) || (head != Head::a && x_b == nullptr))
        throw std::invalid_argument("channel unavailable for head");
    const std::array<const Image*, 1> ia{x_a};
    const std::array<const Image*, 1> ib{x_b};
    return predict_scores(params, head == Head::b ? std::span<const Image* const>{} : ia,
                          head == Head::a ? std::span<const Image* const>{} : ib, head)
        .front();
}

void adam_step(ParameterSet& params, const Gradients& grads, const OptimizerConfig& opt) {
    if (grads.per_tensor.size() != params.tensors.size()) throw std::invalid_argument("gradient layout mismatch");
    if (params.adam_m.size() != params.tensors.size()) {
        params.adam_m.clear();
        params.adam_v.clear();
        for (const auto& t : params.tensors) {
            params.adam_m.emplace_back(t.values.size(), 0.0);
            params.adam_v.emplace_back(t.values.size(), 0.0);
        }
    }
    params.adam_step += 1;
    const double t = static_cast<double>(params.adam_step);
    const double bc1 = 1.0 - std::pow(opt.beta1, t);
    const double bc2 = 1.0 - std::pow(opt.beta2, t);
    const double shrink = 1.0 - opt.learning_rate * opt.weight_decay;

    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
        auto& theta = params.tensors[k].values;
        auto& m = params.adam_m[k];
        auto& v = params.adam_v[k];
        const auto& g = grads.per_tensor[k];
        if (g.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size())
            throw std::invalid_argument("moment arrays do not match parameter " + params.tensors[k].name);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            if (opt.weight_decay != 0.0) theta[i] *= shrink;
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            theta[i] -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.eps);
        }
    }
}

}  // namespace cmfl
