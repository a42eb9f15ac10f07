#include "smoe/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace smoe {

double Rng::uniform() {
    // 53 mantissa bits of the raw draw.
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

double Rng::gaussian() {
    if (has_spare) {
        has_spare = false;
        return spare;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare = r * std::sin(theta);
    has_spare = true;
    return r * std::cos(theta);
}

std::vector<float> decomposed_part_apply(const DecomposedPart& p, std::span<const float> x) {
    if (static_cast<size_t>(p.d_in()) != x.size())
        throw std::invalid_argument("decomposed_part_apply: dimension mismatch");
    const std::vector<float> vx = matvec(p.v, x);
    std::vector<double> acc(p.d_out(), 0.0);
    for (int i = 0; i < p.u.rows; ++i) {
        double a = 0.0;
        for (int k = 0; k < p.u.cols; ++k)
            a += static_cast<double>(p.u.at(i, k)) * static_cast<double>(vx[k]);
        acc[i] = a;
    }
    for (size_t k = 0; k < p.kept_cols.size(); ++k) {
        const double xk = x[p.kept_cols[k]];
        for (int i = 0; i < p.s_kept.rows; ++i)
            acc[i] += static_cast<double>(p.s_kept.at(i, static_cast<int>(k))) * xk;
    }
    std::vector<float> y(p.d_out());
    for (int i = 0; i < p.d_out(); ++i) y[i] = static_cast<float>(acc[i]);
    return y;
}

std::vector<float> decomposed_forward(const DecomposedExpert& d, std::span<const float> x) {
    std::vector<float> z = decomposed_part_apply(d.in, x);
    for (float& v : z) v = v > 0.0f ? v : 0.0f;
    return decomposed_part_apply(d.out, z);
}

std::vector<float> expert_forward(const ExpertSlot& slot, std::span<const float> x) {
    if (is_dense(slot)) {
        const auto& e = std::get<ExpertWeights>(slot);
        std::vector<float> z = matvec(e.w_in, x);
        for (float& v : z) v = v > 0.0f ? v : 0.0f;
        return matvec(e.w_out, z);
    }
    return decomposed_forward(std::get<DecomposedExpert>(slot), x);
}

LayerForwardResult layer_forward(const SmoeLayer& layer, const Matrix& x) {
    const int n = layer.n_experts();
    if (x.cols != layer.router.cols)
        throw std::invalid_argument("layer_forward: token width != router width");
    const int b = x.rows;
    LayerForwardResult res;
    res.y = Matrix(b, x.cols);
    res.h = Matrix(n, b);
    res.assignment.resize(b);
    res.gates.resize(b);

    auto active = [&](int i) { return layer.active.empty() || layer.active[i] != 0; };

    for (int tok = 0; tok < b; ++tok) {
        const auto xt = x.row(tok);
        const std::vector<float> h = matvec(layer.router, xt);
        for (int i = 0; i < n; ++i) res.h.at(i, tok) = h[i];

        int e = -1;
        for (int i = 0; i < n; ++i) {
            if (!active(i)) continue;
            if (e < 0 || h[i] > h[e]) e = i;
        }
        // softmax gate over the surviving logits
        double mx = h[e];
        double denom = 0.0;
        for (int i = 0; i < n; ++i)
            if (active(i)) denom += std::exp(static_cast<double>(h[i]) - mx);
        const float gate = static_cast<float>(1.0 / denom);  // exp(h[e]-mx) = 1

        const std::vector<float> f = expert_forward(layer.experts[layer.redirect[e]], xt);
        for (int j = 0; j < x.cols; ++j)
            res.y.at(tok, j) = x.at(tok, j) + gate * f[j];
        res.assignment[tok] = e;
        res.gates[tok] = gate;
    }
    return res;
}

ForwardCapture model_forward(const ModelManifest& m, const Matrix& x) {
    ForwardCapture cap;
    Matrix cur = x;
    for (const auto& layer : m.layers) {
        cap.layer_inputs.push_back(cur);
        LayerForwardResult r = layer_forward(layer, cur);
        cap.logits.push_back(std::move(r.h));
        cap.assignment.push_back(std::move(r.assignment));
        cap.gates.push_back(std::move(r.gates));
        cur = std::move(r.y);
    }
    cap.output = std::move(cur);
    return cap;
}

Matrix task_logits(const ModelManifest& m, const Matrix& y) {
    if (m.readout.empty()) throw std::invalid_argument("task_logits: model has no readout head");
    return matmul(y, transpose(m.readout));
}

RoutingStats collect_stats(const ModelManifest& m, const TokenBatch& batch) {
    if (batch.embeddings.rows < 1) throw std::invalid_argument("collect_stats: empty batch");
    ForwardCapture cap = model_forward(m, batch.embeddings);
    RoutingStats stats;
    const int b = batch.embeddings.rows;
    for (size_t t = 0; t < m.layers.size(); ++t) {
        std::vector<double> freq(m.layers[t].n_experts(), 0.0);
        for (int e : cap.assignment[t]) freq[e] += 1.0;
        for (double& f : freq) f /= b;
        stats.frequencies.push_back(std::move(freq));
        stats.logits.push_back(std::move(cap.logits[t]));
    }
    return stats;
}

FfnGrads ffn_backward(const ExpertWeights& e, std::span<const float> x,
                      std::span<const float> upstream) {
    if (static_cast<size_t>(e.w_in.cols) != x.size() ||
        static_cast<size_t>(e.w_out.rows) != upstream.size())
        throw std::invalid_argument("ffn_backward: shape mismatch");
    const int d_ff = e.w_in.rows;
    const std::vector<float> z = matvec(e.w_in, x);
    FfnGrads g;
    g.d_w_in = Matrix(e.w_in.rows, e.w_in.cols);
    g.d_w_out = Matrix(e.w_out.rows, e.w_out.cols);
    // d_w_out = upstream ⊗ relu(z)
    for (int i = 0; i < e.w_out.rows; ++i)
        for (int j = 0; j < d_ff; ++j)
            g.d_w_out.at(i, j) = upstream[i] * (z[j] > 0.0f ? z[j] : 0.0f);
    // dz = (w_out^T upstream) ⊙ 1[z > 0]; d_w_in = dz ⊗ x
    const std::vector<float> da = matvec_transposed(e.w_out, upstream);
    for (int j = 0; j < d_ff; ++j) {
        const float dz = z[j] > 0.0f ? da[j] : 0.0f;
        for (int k = 0; k < e.w_in.cols; ++k) g.d_w_in.at(j, k) = dz * x[k];
    }
    return g;
}

namespace {

// Row-wise log-softmax in double.
std::vector<double> log_softmax_row(const Matrix& logits, int row, double inv_t) {
    const int c = logits.cols;
    std::vector<double> out(c);
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(logits.at(row, j)) * inv_t);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) denom += std::exp(static_cast<double>(logits.at(row, j)) * inv_t - mx);
    const double log_denom = std::log(denom) + mx;
    for (int j = 0; j < c; ++j) out[j] = static_cast<double>(logits.at(row, j)) * inv_t - log_denom;
    return out;
}

}  // namespace

LossBreakdown kd_task_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                           const std::vector<int>& labels, double alpha, double temperature) {
    if (temperature <= 0.0) throw std::invalid_argument("kd_task_loss: non-positive temperature");
    if (!student_logits.same_shape(teacher_logits))
        throw std::invalid_argument("kd_task_loss: logit shapes differ");
    if (!labels.empty() && static_cast<int>(labels.size()) != student_logits.rows)
        throw std::invalid_argument("kd_task_loss: label count != batch size");
    for (int l : labels)
        if (l < 0 || l >= student_logits.cols)
            throw std::invalid_argument("kd_task_loss: label out of range");

    const int b = student_logits.rows;
    LossBreakdown loss;
    double task = 0.0, kd = 0.0;
    for (int t = 0; t < b; ++t) {
        if (!labels.empty()) {
            const std::vector<double> ls = log_softmax_row(student_logits, t, 1.0);
            task -= ls[labels[t]];
        }
        const std::vector<double> lt = log_softmax_row(teacher_logits, t, 1.0 / temperature);
        const std::vector<double> lq = log_softmax_row(student_logits, t, 1.0 / temperature);
        for (int j = 0; j < student_logits.cols; ++j)
            kd += std::exp(lt[j]) * (lt[j] - lq[j]);
    }
    loss.task = labels.empty() ? 0.0 : task / b;
    loss.kd = std::max(kd / b, 0.0);
    loss.total = loss.task + alpha * loss.kd;
    return loss;
}

Matrix loss_grad_logits(const Matrix& student_logits, const Matrix& teacher_logits,
                        const std::vector<int>& labels, double alpha, double temperature) {
    if (temperature <= 0.0) throw std::invalid_argument("loss_grad_logits: non-positive temperature");
    if (!student_logits.same_shape(teacher_logits))
        throw std::invalid_argument("loss_grad_logits: logit shapes differ");
    for (int l : labels)
        if (l < 0 || l >= student_logits.cols)
            throw std::invalid_argument("loss_grad_logits: label out of range");
    const int b = student_logits.rows;
    const int c = student_logits.cols;
    Matrix g(b, c);
    for (int t = 0; t < b; ++t) {
        std::vector<double> row(c, 0.0);
        if (!labels.empty()) {
            const std::vector<double> ls = log_softmax_row(student_logits, t, 1.0);
            for (int j = 0; j < c; ++j) row[j] += std::exp(ls[j]);
            row[labels[t]] -= 1.0;
        }
        const std::vector<double> lt = log_softmax_row(teacher_logits, t, 1.0 / temperature);
        const std::vector<double> lq = log_softmax_row(student_logits, t, 1.0 / temperature);
        for (int j = 0; j < c; ++j)
            row[j] += alpha * (std::exp(lq[j]) - std::exp(lt[j])) / temperature;
        for (int j = 0; j < c; ++j) g.at(t, j) = static_cast<float>(row[j] / b);
    }
    return g;
}

ModelGrads model_backward(const ModelManifest& m, const ForwardCapture& fwd, const Matrix& d_output) {
    ModelGrads grads;
    grads.experts.resize(m.layers.size());
    for (size_t t = 0; t < m.layers.size(); ++t) {
        grads.experts[t].resize(m.layers[t].experts.size());
        for (auto& g : grads.experts[t]) {
            g.d_w_in = Matrix(m.d_ff, m.d_model);
            g.d_w_out = Matrix(m.d_model, m.d_ff);
        }
    }

    Matrix d_y = d_output;
    for (int t = static_cast<int>(m.layers.size()) - 1; t >= 0; --t) {
        const auto& layer = m.layers[t];
        const Matrix& x = fwd.layer_inputs[t];
        // Dense views of every slot so decomposed experts share the same path.
        std::vector<ExpertWeights> dense(layer.experts.size());
        for (size_t s = 0; s < layer.experts.size(); ++s) dense[s] = materialize(layer.experts[s]);

        Matrix d_x(x.rows, x.cols);
        for (int tok = 0; tok < x.rows; ++tok) {
            const int slot = layer.redirect[fwd.assignment[t][tok]];
            const float gate = fwd.gates[t][tok];
            const auto& e = dense[slot];
            const auto xt = x.row(tok);
            const auto up = d_y.row(tok);

            const std::vector<float> z = matvec(e.w_in, xt);
            const std::vector<float> da = matvec_transposed(e.w_out, up);
            auto& slot_grads = grads.experts[t][slot];
            for (int j = 0; j < m.d_ff; ++j) {
                const float a = z[j] > 0.0f ? z[j] : 0.0f;
                const float dz = z[j] > 0.0f ? da[j] : 0.0f;
                for (int k = 0; k < m.d_model; ++k)
                    slot_grads.d_w_in.at(j, k) += gate * dz * xt[k];
                for (int i = 0; i < m.d_model; ++i)
                    slot_grads.d_w_out.at(i, j) += gate * up[i] * a;
            }
            // dL/dx = upstream + g * w_in^T (relu'(z) ⊙ (w_out^T upstream))
            std::vector<double> dx(m.d_model, 0.0);
            for (int j = 0; j < m.d_ff; ++j) {
                if (z[j] <= 0.0f) continue;
                const double dz = da[j];
                for (int k = 0; k < m.d_model; ++k)
                    dx[k] += static_cast<double>(e.w_in.at(j, k)) * dz;
            }
            for (int k = 0; k < m.d_model; ++k)
                d_x.at(tok, k) = static_cast<float>(up[k] + gate * dx[k]);
        }
        d_y = std::move(d_x);
    }
    return grads;
}

std::pair<ModelManifest, TokenBatch> gen_toy(uint64_t seed, const ToySpec& spec) {
    if (spec.d_model <= 0 || spec.d_ff <= 0 || spec.n_layers <= 0 || spec.n_experts <= 0 ||
        spec.n_tokens <= 0 || spec.n_classes <= 0)
        throw std::invalid_argument("gen_toy: dimensions must be positive");

    Rng rng(seed);
    ModelManifest m;
    m.d_model = spec.d_model;
    m.d_ff = spec.d_ff;
    if (spec.skip_first_layer) m.skip_layers.insert(0);

    const double w_in_scale = std::sqrt(2.0 / spec.d_model);
    const double w_out_scale = std::sqrt(1.0 / spec.d_ff);
    for (int t = 0; t < spec.n_layers; ++t) {
        SmoeLayer layer;
        layer.router = Matrix(spec.n_experts, spec.d_model);
        for (int i = 0; i < spec.n_experts; ++i) {
            const double scale = std::exp(spec.router_gain * rng.gaussian());
            for (int j = 0; j < spec.d_model; ++j)
                layer.router.at(i, j) = static_cast<float>(scale * rng.gaussian());
        }
        for (int e = 0; e < spec.n_experts; ++e) {
            ExpertWeights ew;
            ew.w_in = Matrix(spec.d_ff, spec.d_model);
            ew.w_out = Matrix(spec.d_model, spec.d_ff);
            for (float& v : ew.w_in.data) v = static_cast<float>(w_in_scale * rng.gaussian());
            for (float& v : ew.w_out.data) v = static_cast<float>(w_out_scale * rng.gaussian());
            layer.experts.emplace_back(std::move(ew));
            layer.redirect.push_back(e);
        }
        m.layers.push_back(std::move(layer));
    }
    m.readout = Matrix(spec.n_classes, spec.d_model);
    for (float& v : m.readout.data) v = static_cast<float>(rng.gaussian());

    TokenBatch batch;
    batch.embeddings = Matrix(spec.n_tokens, spec.d_model);
    for (float& v : batch.embeddings.data) v = static_cast<float>(rng.gaussian());

    const ForwardCapture cap = model_forward(m, batch.embeddings);
    const Matrix logits = task_logits(m, cap.output);
    batch.labels.resize(spec.n_tokens);
    for (int t = 0; t < spec.n_tokens; ++t) {
        int best = 0;
        for (int j = 1; j < logits.cols; ++j)
            if (logits.at(t, j) > logits.at(t, best)) best = j;
        batch.labels[t] = best;
    }
    return {std::move(m), std::move(batch)};
}

TokenBatch gen_tokens(const ModelManifest& m, uint64_t seed, int n_tokens) {
    if (n_tokens <= 0) throw std::invalid_argument("gen_tokens: batch must be positive");
    Rng rng(seed);
    TokenBatch batch;
    batch.embeddings = Matrix(n_tokens, m.d_model);
    for (float& v : batch.embeddings.data) v = static_cast<float>(rng.gaussian());
    if (!m.readout.empty()) {
        const ForwardCapture cap = model_forward(m, batch.embeddings);
        const Matrix logits = task_logits(m, cap.output);
        batch.labels.resize(n_tokens);
        for (int t = 0; t < n_tokens; ++t) {
            int best = 0;
            for (int j = 1; j < logits.cols; ++j)
                if (logits.at(t, j) > logits.at(t, best)) best = j;
            batch.labels[t] = best;
        }
    }
    return batch;
}

}  // namespace smoe
