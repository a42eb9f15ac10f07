#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "smoe/model.hpp"

namespace smoe {

struct TokenBatch {
    Matrix embeddings;        // b × d_model
    std::vector<int> labels;  // optional class indices, empty when absent
};

struct RoutingStats {
    std::vector<Matrix> logits;                    // per layer H, n_experts × b
    std::vector<std::vector<double>> frequencies;  // per layer A, sums to 1
};

struct LossBreakdown {
    double task = 0.0;
    double kd = 0.0;
    double total = 0.0;
};

struct LayerForwardResult {
    Matrix y;                     // b × d_model
    Matrix h;                     // n_experts × b router logits
    std::vector<int> assignment;  // per token, ORIGINAL expert index
    std::vector<float> gates;     // per token softmax gate of the chosen expert
};

// Top-1 routing with residual: y = x + g * expert(x). Ties in the argmax go
// to the lowest expert index; pruned layers restrict argmax and softmax to
// the active experts. Storage lookup follows the redirect table.
LayerForwardResult layer_forward(const SmoeLayer& layer, const Matrix& x);

// u*(v*x) + s_kept * x[kept_cols] for one decomposed matrix.
std::vector<float> decomposed_part_apply(const DecomposedPart& p, std::span<const float> x);

// Full decomposed expert map: out part of relu(in part of x).
std::vector<float> decomposed_forward(const DecomposedExpert& d, std::span<const float> x);

// Expert map of any storage slot, dense or decomposed.
std::vector<float> expert_forward(const ExpertSlot& slot, std::span<const float> x);

struct ForwardCapture {
    std::vector<Matrix> layer_inputs;             // input X of each layer
    std::vector<Matrix> logits;                   // H per layer
    std::vector<std::vector<int>> assignment;     // per layer, per token
    std::vector<std::vector<float>> gates;        // per layer, per token
    Matrix output;                                // final Y
};

ForwardCapture model_forward(const ModelManifest& m, const Matrix& x);

// Y * readout^T; requires a readout head in the manifest.
Matrix task_logits(const ModelManifest& m, const Matrix& y);

RoutingStats collect_stats(const ModelManifest& m, const TokenBatch& batch);

struct FfnGrads {
    Matrix d_w_in;   // d_ff × d_model
    Matrix d_w_out;  // d_model × d_ff
};

// Analytic gradients of x -> w_out * relu(w_in * x) given dL/dy.
FfnGrads ffn_backward(const ExpertWeights& e, std::span<const float> x,
                      std::span<const float> upstream);

// task = mean cross-entropy(student, labels); kd = mean KL(soft teacher || soft
// student) at temperature T; total = task + alpha * kd. Empty labels give
// task = 0. Throws on non-positive T or shape mismatch.
LossBreakdown kd_task_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                           const std::vector<int>& labels, double alpha, double temperature);

// dL/d(student_logits) for the loss above, mean-reduced over the batch.
Matrix loss_grad_logits(const Matrix& student_logits, const Matrix& teacher_logits,
                        const std::vector<int>& labels, double alpha, double temperature);

struct ModelGrads {
    // Per layer, per storage slot: dL/dW in dense shape, summed over tokens.
    std::vector<std::vector<FfnGrads>> experts;
};

// Backward through the expert path only; the router gets no gradient and
// gates are treated as constants.
ModelGrads model_backward(const ModelManifest& m, const ForwardCapture& fwd, const Matrix& d_output);

struct ToySpec {
    int d_model = 16;
    int d_ff = 32;
    int n_layers = 4;
    int n_experts = 8;
    int n_tokens = 256;
    int n_classes = 8;
    double router_gain = 1.0;  // log-scale spread of router row norms
    bool skip_first_layer = true;
};

// Deterministic per seed. Router rows get log-normal scales so routing is
// skewed; labels are the argmax of a fixed random readout over the model's
// own output.
std::pair<ModelManifest, TokenBatch> gen_toy(uint64_t seed, const ToySpec& spec);

// Token embeddings (and labels, when the model has a readout) for an
// existing model, matching the gen_toy distribution.
TokenBatch gen_tokens(const ModelManifest& m, uint64_t seed, int n_tokens);

// Portable Box-Muller gaussian source; std::normal_distribution is
// implementation-defined, which would break bit-reproducible archives.
struct Rng {
    explicit Rng(uint64_t seed) : eng(seed) {}

    double uniform();   // [0, 1)
    double gaussian();  // N(0, 1)

    std::mt19937_64 eng;
    bool has_spare = false;
    double spare = 0.0;
};

}  // namespace smoe
