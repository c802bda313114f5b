#include "ugp/attention.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ugp/errors.hpp"
#include "ugp/rng.hpp"

namespace ugp::attention {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;

// ---------------------------------------------------------------------------
// Masks

AttentionMaskStack build_mask_stack(const PointCloud &superpoints, int layers) {
    if (superpoints.empty()) throw InvalidArgument("build_mask_stack: no superpoints");
    if (layers < 1) throw InvalidArgument("build_mask_stack: need at least one layer");
    const auto n = static_cast<Index>(superpoints.size());
    MatrixXd dist(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            dist(i, j) = (superpoints[static_cast<std::size_t>(i)] - superpoints[static_cast<std::size_t>(j)]).norm();

    AttentionMaskStack stack;
    stack.row_max = dist.rowwise().maxCoeff();
    stack.layers.reserve(static_cast<std::size_t>(layers));
    // d <= k * dmax / S is compared as S * d <= k * dmax in extended precision,
    // where both products of a double and a small integer are exact.
    const auto s = static_cast<long double>(layers);
    for (int k = 1; k <= layers; ++k) {
        Mask m(n, n);
        for (Index i = 0; i < n; ++i) {
            const long double bound = static_cast<long double>(k) * static_cast<long double>(stack.row_max(i));
            for (Index j = 0; j < n; ++j) m(i, j) = s * static_cast<long double>(dist(i, j)) <= bound ? 1 : 0;
        }
        stack.layers.push_back(std::move(m));
    }
    return stack;
}

AttentionMaskStack full_mask_stack(std::size_t n, int layers) {
    if (layers < 1) throw InvalidArgument("full_mask_stack: need at least one layer");
    AttentionMaskStack stack;
    stack.row_max = Eigen::VectorXd::Zero(static_cast<Index>(n));
    for (int k = 0; k < layers; ++k)
        stack.layers.push_back(Mask::Ones(static_cast<Index>(n), static_cast<Index>(n)));
    return stack;
}

// ---------------------------------------------------------------------------
// Geometric embedding

Eigen::RowVectorXd GeometricEmbedding::encode(double distance, double sigma_d, std::size_t dim) {
    RowVectorXd r(static_cast<Index>(dim));
    const double x = distance / sigma_d;
    for (std::size_t c = 0; 2 * c < dim; ++c) {
        const double w = std::pow(10000.0, -2.0 * static_cast<double>(c) / static_cast<double>(dim));
        r(static_cast<Index>(2 * c)) = std::sin(w * x);
        if (2 * c + 1 < dim) r(static_cast<Index>(2 * c + 1)) = std::cos(w * x);
    }
    return r;
}

GeometricEmbedding::GeometricEmbedding(const PointCloud &superpoints, double sigma_d, std::size_t dim)
    : n_(superpoints.size()), dim_(dim), data_(n_ * n_ * dim) {
    if (!(sigma_d > 0.0)) throw InvalidArgument("geometric_embedding: sigma_d must be positive");
    if (dim == 0) throw InvalidArgument("geometric_embedding: dimension must be positive");
    for (std::size_t i = 0; i < n_; ++i) {
        for (std::size_t j = i; j < n_; ++j) {
            const RowVectorXd r = encode((superpoints[i] - superpoints[j]).norm(), sigma_d, dim);
            std::copy(r.data(), r.data() + dim, data_.data() + (i * n_ + j) * dim);
            std::copy(r.data(), r.data() + dim, data_.data() + (j * n_ + i) * dim);
        }
    }
}

Eigen::Map<const Eigen::RowVectorXd> GeometricEmbedding::at(std::size_t i, std::size_t j) const {
    return {data_.data() + (i * n_ + j) * dim_, static_cast<Index>(dim_)};
}

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> GeometricEmbedding::row_block(
    std::size_t i) const {
    return {data_.data() + i * n_ * dim_, static_cast<Index>(n_), static_cast<Index>(dim_)};
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

MatrixXd uniform_matrix(Rng &rng, Index rows, Index cols, double bound) {
    MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
    return m;
}

template <typename Fn>
void for_each_tensor(LayerParams &p, Fn &&fn) {
    fn("wq", p.wq);
    fn("wk", p.wk);
    fn("wv", p.wv);
    fn("wr", p.wr);
    fn("w1", p.w1);
    fn("b1", p.b1);
    fn("w2", p.w2);
    fn("b2", p.b2);
    fn("ln1_gain", p.ln1_gain);
    fn("ln1_bias", p.ln1_bias);
    fn("ln2_gain", p.ln2_gain);
    fn("ln2_bias", p.ln2_bias);
}

}  // namespace

AttentionParams AttentionParams::init(std::size_t dim, int layers, std::uint64_t seed, std::size_t input_dim) {
    if (dim == 0 || layers < 1) throw InvalidArgument("AttentionParams::init: invalid shape");
    AttentionParams params;
    params.dim = dim;
    params.seed = seed;
    const auto d = static_cast<Index>(dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int l = 0; l < layers; ++l) {
        Rng rng(seed, "attention-layer", static_cast<std::uint64_t>(l));
        LayerParams p;
        p.wq = uniform_matrix(rng, d, d, bound);
        p.wk = uniform_matrix(rng, d, d, bound);
        p.wv = uniform_matrix(rng, d, d, bound);
        p.wr = uniform_matrix(rng, d, d, bound);
        p.w1 = uniform_matrix(rng, d, 2 * d, bound);
        p.b1 = uniform_matrix(rng, 1, 2 * d, bound);
        p.w2 = uniform_matrix(rng, 2 * d, d, bound);
        p.b2 = uniform_matrix(rng, 1, d, bound);
        p.ln1_gain = RowVectorXd::Ones(d);
        p.ln1_bias = RowVectorXd::Zero(d);
        p.ln2_gain = RowVectorXd::Ones(d);
        p.ln2_bias = RowVectorXd::Zero(d);
        params.layers.push_back(std::move(p));
    }
    if (input_dim != 0 && input_dim != dim) {
        Rng rng(seed, "attention-input");
        params.input_projection =
            uniform_matrix(rng, static_cast<Index>(input_dim), d, 1.0 / std::sqrt(static_cast<double>(input_dim)));
    }
    return params;
}

void AttentionParams::save(const std::filesystem::path &path) const {
    std::vector<unsigned char> blob;
    nlohmann::ordered_json shapes = nlohmann::ordered_json::array();
    auto append = [&](const std::string &name, const auto &m) {
        shapes.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
        for (Index i = 0; i < m.rows(); ++i)
            for (Index j = 0; j < m.cols(); ++j) {
                const auto bits = std::bit_cast<std::uint64_t>(static_cast<double>(m(i, j)));
                for (int b = 0; b < 8; ++b) blob.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xffu));
            }
    };
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto copy = layers[l];
        for_each_tensor(copy, [&](const char *name, const auto &m) { append("layer" + std::to_string(l) + "." + name, m); });
    }
    if (input_projection.size() > 0) append("input_projection", input_projection);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write parameters: " + path.string());
    out.write(reinterpret_cast<const char *>(blob.data()), static_cast<std::streamsize>(blob.size()));

    nlohmann::ordered_json meta;
    meta["format"] = "float64-le";
    meta["d_t"] = dim;
    meta["S"] = layers.size();
    meta["seed"] = seed;
    meta["tensors"] = shapes;
    std::ofstream side(path.string() + ".json", std::ios::trunc);
    if (!side) throw DataError("cannot write parameter sidecar: " + path.string() + ".json");
    side << meta.dump(2) << "\n";
}

AttentionParams AttentionParams::load(const std::filesystem::path &path) {
    std::ifstream side(path.string() + ".json");
    if (!side) throw DataError("cannot open parameter sidecar: " + path.string() + ".json");
    nlohmann::json meta;
    try {
        side >> meta;
    } catch (const nlohmann::json::exception &e) {
        throw DataError(std::string("parameter sidecar: ") + e.what());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open parameters: " + path.string());
    const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    AttentionParams params;
    params.dim = meta.at("d_t").get<std::size_t>();
    params.seed = meta.at("seed").get<std::uint64_t>();
    const auto layer_count = meta.at("S").get<std::size_t>();
    params.layers.resize(layer_count);
    std::size_t offset = 0;
    std::size_t tensor = 0;
    const auto &tensors = meta.at("tensors");
    auto read_into = [&](const std::string &name, auto &m) {
        if (tensor >= tensors.size() || tensors[tensor].at("name").get<std::string>() != name)
            throw DataError("parameter sidecar: expected tensor " + name);
        const auto rows = tensors[tensor].at("rows").get<Index>();
        const auto cols = tensors[tensor].at("cols").get<Index>();
        ++tensor;
        m.resize(rows, cols);
        if (offset + static_cast<std::size_t>(rows * cols) * 8 > blob.size())
            throw DataError("parameter blob truncated at tensor " + name);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) {
                std::uint64_t bits = 0;
                for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(blob[offset + b]) << (8 * b);
                offset += 8;
                m(i, j) = std::bit_cast<double>(bits);
            }
    };
    try {
        for (std::size_t l = 0; l < layer_count; ++l)
            for_each_tensor(params.layers[l],
                            [&](const char *name, auto &m) { read_into("layer" + std::to_string(l) + "." + name, m); });
        if (tensor < tensors.size()) read_into("input_projection", params.input_projection);
    } catch (const nlohmann::json::exception &e) {
        throw DataError(std::string("parameter sidecar: ") + e.what());
    }
    if (offset != blob.size()) throw DataError("parameter blob has trailing bytes");
    return params;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

struct NormResult {
    MatrixXd normalized;
    Eigen::VectorXd inv_std;
};

NormResult normalize_rows(const MatrixXd &s, double eps) {
    NormResult r{MatrixXd(s.rows(), s.cols()), Eigen::VectorXd(s.rows())};
    const double d = static_cast<double>(s.cols());
    for (Index i = 0; i < s.rows(); ++i) {
        const double mean = s.row(i).sum() / d;
        const RowVectorXd centered = s.row(i).array() - mean;
        const double var = centered.squaredNorm() / d;
        r.inv_std(i) = 1.0 / std::sqrt(var + eps);
        r.normalized.row(i) = centered * r.inv_std(i);
    }
    return r;
}

MatrixXd layer_norm_backward(const MatrixXd &grad_hat, const MatrixXd &hat, const Eigen::VectorXd &inv_std) {
    MatrixXd out(grad_hat.rows(), grad_hat.cols());
    const double d = static_cast<double>(grad_hat.cols());
    for (Index i = 0; i < grad_hat.rows(); ++i) {
        const double mean_g = grad_hat.row(i).sum() / d;
        const double mean_gh = grad_hat.row(i).dot(hat.row(i)) / d;
        out.row(i) = inv_std(i) * (grad_hat.row(i).array() - mean_g - hat.row(i).array() * mean_gh).matrix();
    }
    return out;
}

void check_shapes(const MatrixXd &x, const Mask *mask, const GeometricEmbedding &embedding, const LayerParams &p) {
    const auto d = x.cols();
    if (p.wq.rows() != d || p.wq.cols() != d || p.wk.rows() != d || p.wv.rows() != d || p.wr.rows() != d)
        throw InvalidArgument("attention: parameter shapes do not match the input width");
    if (static_cast<std::size_t>(x.rows()) != embedding.size() || static_cast<std::size_t>(d) != embedding.dim())
        throw InvalidArgument("attention: embedding shape does not match the input");
    if (mask && (mask->rows() != x.rows() || mask->cols() != x.rows()))
        throw InvalidArgument("attention: mask shape does not match the input");
    if (!x.allFinite()) throw InvalidArgument("attention: non-finite input");
}

struct CoreResult {
    MatrixXd q, k, v, g, scores, weights, attended;
};

CoreResult core_forward(const MatrixXd &x, const Mask *mask, const GeometricEmbedding &embedding, const LayerParams &p,
                        const LayerOptions &options) {
    check_shapes(x, mask, embedding, p);
    CoreResult r;
    const Index n = x.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
    r.q = x * p.wq;
    r.k = x * p.wk;
    r.v = x * p.wv;
    r.g = r.q * p.wr.transpose();
    r.scores = r.q * r.k.transpose();
    for (Index i = 0; i < n; ++i) r.scores.row(i) += (embedding.row_block(static_cast<std::size_t>(i)) * r.g.row(i).transpose()).transpose();
    r.scores *= scale;

    r.weights = MatrixXd::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
        double top = -std::numeric_limits<double>::infinity();
        for (Index j = 0; j < n; ++j) {
            if (mask && options.semantics == MaskSemantics::Exclude && (*mask)(i, j) == 0) continue;
            const double e = (mask && options.semantics == MaskSemantics::Multiplicative)
                                 ? r.scores(i, j) * static_cast<double>((*mask)(i, j))
                                 : r.scores(i, j);
            r.weights(i, j) = e;
            top = std::max(top, e);
        }
        double sum = 0.0;
        for (Index j = 0; j < n; ++j) {
            if (mask && options.semantics == MaskSemantics::Exclude && (*mask)(i, j) == 0) continue;
            r.weights(i, j) = std::exp(r.weights(i, j) - top);
            sum += r.weights(i, j);
        }
        if (!(sum > 0.0)) throw InvalidArgument("attention: mask row admits no key");
        r.weights.row(i) /= sum;
    }
    r.attended = r.weights * r.v;
    return r;
}

}  // namespace

MatrixXd attention_core(const MatrixXd &x, const Mask *mask, const GeometricEmbedding &embedding,
                        const LayerParams &params, const LayerOptions &options, MatrixXd *weights) {
    CoreResult r = core_forward(x, mask, embedding, params, options);
    if (weights) *weights = std::move(r.weights);
    return std::move(r.attended);
}

namespace {

MatrixXd sublayer_impl(const MatrixXd &x, const MatrixXd &attended, const LayerParams &p, const LayerOptions &options,
                       LayerCache *cache) {
    MatrixXd s1 = x + attended;
    NormResult n1 = normalize_rows(s1, options.layer_norm_eps);
    MatrixXd y1 = (n1.normalized.array().rowwise() * p.ln1_gain.array()).rowwise() + p.ln1_bias.array();
    MatrixXd u = (y1 * p.w1).rowwise() + p.b1;
    MatrixXd h = u.unaryExpr([](double v) { return gelu(v); });
    MatrixXd s2 = y1 + ((h * p.w2).rowwise() + p.b2);
    NormResult n2 = normalize_rows(s2, options.layer_norm_eps);
    MatrixXd out = (n2.normalized.array().rowwise() * p.ln2_gain.array()).rowwise() + p.ln2_bias.array();
    if (cache) {
        cache->s1 = std::move(s1);
        cache->y1_hat = std::move(n1.normalized);
        cache->inv_std1 = std::move(n1.inv_std);
        cache->y1 = std::move(y1);
        cache->u = std::move(u);
        cache->h = std::move(h);
        cache->s2 = std::move(s2);
        cache->out_hat = std::move(n2.normalized);
        cache->inv_std2 = std::move(n2.inv_std);
        cache->out = out;
    }
    return out;
}

}  // namespace

MatrixXd sublayer(const MatrixXd &x, const MatrixXd &attended, const LayerParams &params, const LayerOptions &options) {
    return sublayer_impl(x, attended, params, options, nullptr);
}

MatrixXd attention_layer(const MatrixXd &x, const Mask *mask, const GeometricEmbedding &embedding,
                         const LayerParams &params, const LayerOptions &options, LayerCache *cache) {
    CoreResult r = core_forward(x, mask, embedding, params, options);
    MatrixXd out = sublayer_impl(x, r.attended, params, options, cache);
    if (cache) {
        cache->x = x;
        cache->q = std::move(r.q);
        cache->k = std::move(r.k);
        cache->v = std::move(r.v);
        cache->g = std::move(r.g);
        cache->scores = std::move(r.scores);
        cache->weights = std::move(r.weights);
        cache->attended = std::move(r.attended);
    }
    return out;
}

LayerGradients attention_layer_backward(const LayerCache &c, const MatrixXd &grad_out, const Mask *mask,
                                        const GeometricEmbedding &embedding, const LayerParams &p,
                                        const LayerOptions &options) {
    LayerGradients g;
    const Index n = c.x.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(c.x.cols()));

    // Second layer norm.
    g.ln2_gain = (grad_out.array() * c.out_hat.array()).colwise().sum();
    g.ln2_bias = grad_out.colwise().sum();
    const MatrixXd d_out_hat = grad_out.array().rowwise() * p.ln2_gain.array();
    const MatrixXd d_s2 = layer_norm_backward(d_out_hat, c.out_hat, c.inv_std2);

    // Feed-forward with residual.
    g.w2 = c.h.transpose() * d_s2;
    g.b2 = d_s2.colwise().sum();
    const MatrixXd d_h = d_s2 * p.w2.transpose();
    const MatrixXd d_u = d_h.array() * c.u.unaryExpr([](double v) { return gelu_grad(v); }).array();
    g.w1 = c.y1.transpose() * d_u;
    g.b1 = d_u.colwise().sum();
    const MatrixXd d_y1 = d_s2 + d_u * p.w1.transpose();

    // First layer norm.
    g.ln1_gain = (d_y1.array() * c.y1_hat.array()).colwise().sum();
    g.ln1_bias = d_y1.colwise().sum();
    const MatrixXd d_y1_hat = d_y1.array().rowwise() * p.ln1_gain.array();
    const MatrixXd d_s1 = layer_norm_backward(d_y1_hat, c.y1_hat, c.inv_std1);

    // Attention: Z = A V.
    const MatrixXd &d_z = d_s1;
    const MatrixXd d_a = d_z * c.v.transpose();
    const MatrixXd d_v = c.weights.transpose() * d_z;
    MatrixXd d_e(n, n);
    for (Index i = 0; i < n; ++i) {
        const double inner = c.weights.row(i).dot(d_a.row(i));
        d_e.row(i) = c.weights.row(i).array() * (d_a.row(i).array() - inner);
    }
    if (mask && options.semantics == MaskSemantics::Multiplicative)
        d_e = d_e.array() * mask->cast<double>().array();
    d_e *= scale;

    MatrixXd d_g(n, c.x.cols());
    for (Index i = 0; i < n; ++i) d_g.row(i) = d_e.row(i) * embedding.row_block(static_cast<std::size_t>(i));
    const MatrixXd d_q = d_e * c.k + d_g * p.wr;
    const MatrixXd d_k = d_e.transpose() * c.q;
    g.wr = d_g.transpose() * c.q;
    g.wq = c.x.transpose() * d_q;
    g.wk = c.x.transpose() * d_k;
    g.wv = c.x.transpose() * d_v;
    g.x = d_s1 + d_q * p.wq.transpose() + d_k * p.wk.transpose() + d_v * p.wv.transpose();
    return g;
}

MatrixXd progressive_stack(const MatrixXd &x0, const AttentionMaskStack &masks, const GeometricEmbedding &embedding,
                           const AttentionParams &params, const LayerOptions &options,
                           std::vector<MatrixXd> *layer_weights) {
    if (masks.depth() != params.layers.size())
        throw InvalidArgument("progressive_stack: mask depth does not match the layer count");
    MatrixXd x = params.input_projection.size() > 0 ? MatrixXd(x0 * params.input_projection) : x0;
    if (static_cast<std::size_t>(x.cols()) != params.dim)
        throw InvalidArgument("progressive_stack: input width does not match d_t");
    if (layer_weights) layer_weights->clear();
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
        if (layer_weights) {
            LayerCache cache;
            x = attention_layer(x, &masks.layers[k], embedding, params.layers[k], options, &cache);
            layer_weights->push_back(std::move(cache.weights));
        } else {
            x = attention_layer(x, &masks.layers[k], embedding, params.layers[k], options);
        }
    }
    return x;
}

}  // namespace ugp::attention
