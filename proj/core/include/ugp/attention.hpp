#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ugp/geometry.hpp"

namespace ugp::attention {

inline constexpr std::size_t kDefaultDim = 48;
inline constexpr int kDefaultLayers = 3;
inline constexpr double kDefaultSigmaD = 4.8;

/// Boolean n x n mask, 1 = key j admitted for query i.
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Nested distance masks: layer k (1-based) admits j for query i iff
/// d_ij <= k * d_i,max / S, with d_i,max the largest distance from i.
struct AttentionMaskStack {
    std::vector<Mask> layers;
    Eigen::VectorXd row_max;

    [[nodiscard]] std::size_t depth() const { return layers.size(); }
};

AttentionMaskStack build_mask_stack(const PointCloud &superpoints, int layers);
/// S all-ones masks (plain global self-attention at every layer).
AttentionMaskStack full_mask_stack(std::size_t n, int layers);

/// Distance-only sinusoidal structure embedding r_ij, d_t channels:
/// r[2c] = sin(w_c d_ij / sigma_d), r[2c+1] = cos(w_c d_ij / sigma_d),
/// w_c = 10000^(-2c/d_t). Stored densely as an n x n x d_t tensor.
class GeometricEmbedding {
public:
    GeometricEmbedding(const PointCloud &superpoints, double sigma_d, std::size_t dim);

    [[nodiscard]] std::size_t size() const { return n_; }
    [[nodiscard]] std::size_t dim() const { return dim_; }
    /// r_ij as a length-d_t row.
    [[nodiscard]] Eigen::Map<const Eigen::RowVectorXd> at(std::size_t i, std::size_t j) const;
    /// All r_ij for fixed i: n x d_t, row j.
    [[nodiscard]] Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
    row_block(std::size_t i) const;

    static Eigen::RowVectorXd encode(double distance, double sigma_d, std::size_t dim);

private:
    std::size_t n_;
    std::size_t dim_;
    std::vector<double> data_;
};

/// How excluded mask entries enter the softmax.
enum class MaskSemantics {
    Exclude,         // score replaced by -inf: weight exactly 0
    Multiplicative,  // literal score * mask: excluded scores become 0, still weighted
};

struct LayerParams {
    Eigen::MatrixXd wq, wk, wv, wr;  // d x d
    Eigen::MatrixXd w1;              // d x 2d
    Eigen::RowVectorXd b1;           // 2d
    Eigen::MatrixXd w2;              // 2d x d
    Eigen::RowVectorXd b2;           // d
    Eigen::RowVectorXd ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // d
};

/// Parameters of a stack of S single-head self-attention layers.
struct AttentionParams {
    std::size_t dim = kDefaultDim;
    std::uint64_t seed = 0;
    std::vector<LayerParams> layers;
    Eigen::MatrixXd input_projection;  // empty => identity (input width == dim)

    /// Weights uniform in [-1/sqrt(d), 1/sqrt(d)]; layer-norm gains 1, biases 0.
    static AttentionParams init(std::size_t dim, int layers, std::uint64_t seed, std::size_t input_dim = 0);

    /// Flat little-endian float64 blob plus JSON sidecar (`<path>.json`).
    void save(const std::filesystem::path &path) const;
    static AttentionParams load(const std::filesystem::path &path);
};

struct LayerOptions {
    MaskSemantics semantics = MaskSemantics::Exclude;
    double layer_norm_eps = 1e-5;
};

/// Intermediate values of one forward pass, kept for the backward pass.
struct LayerCache {
    Eigen::MatrixXd x, q, k, v, g, scores, weights, attended;
    Eigen::MatrixXd s1, y1_hat, y1, u, h, s2, out_hat, out;
    Eigen::VectorXd inv_std1, inv_std2;
};

/// Masked attention only: weights = rowsoftmax(mask(e)), returns weights * (X W^V).
/// `mask == nullptr` is the unmasked path.
Eigen::MatrixXd attention_core(const Eigen::MatrixXd &x, const Mask *mask, const GeometricEmbedding &embedding,
                               const LayerParams &params, const LayerOptions &options = {},
                               Eigen::MatrixXd *weights = nullptr);

/// Residual + layer norm + feed-forward (d -> 2d -> d, GELU) + residual + layer norm.
Eigen::MatrixXd sublayer(const Eigen::MatrixXd &x, const Eigen::MatrixXd &attended, const LayerParams &params,
                         const LayerOptions &options = {});

/// Full layer: sublayer(x, attention_core(x)).
Eigen::MatrixXd attention_layer(const Eigen::MatrixXd &x, const Mask *mask, const GeometricEmbedding &embedding,
                                const LayerParams &params, const LayerOptions &options = {},
                                LayerCache *cache = nullptr);

struct LayerGradients {
    Eigen::MatrixXd x, wq, wk, wv, wr, w1, w2;
    Eigen::RowVectorXd b1, b2, ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

/// Gradients of a scalar loss given dL/d(output) and the forward cache.
LayerGradients attention_layer_backward(const LayerCache &cache, const Eigen::MatrixXd &grad_out,
                                        const Mask *mask, const GeometricEmbedding &embedding,
                                        const LayerParams &params, const LayerOptions &options = {});

/// Applies layer k with mask k for k = 1..S. The input is first multiplied by
/// params.input_projection when that is set.
Eigen::MatrixXd progressive_stack(const Eigen::MatrixXd &x0, const AttentionMaskStack &masks,
                                  const GeometricEmbedding &embedding, const AttentionParams &params,
                                  const LayerOptions &options = {},
                                  std::vector<Eigen::MatrixXd> *layer_weights = nullptr);

}  // namespace ugp::attention
