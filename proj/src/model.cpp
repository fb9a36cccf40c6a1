#include "ubergnn/model.hpp"

#include <algorithm>
#include <cmath>

#include "ubergnn/rng.hpp"

namespace ubergnn {

namespace {

constexpr double kProbClipLo = 1e-10;
constexpr double kProbClipHi = 1.0 - 1e-10;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

Matrix gaussian_from(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.gaussian(stddev);
    return m;
}

}  // namespace

AttentionVariant variant_from_string(const std::string& s) {
    if (s == "v1" || s == "V1") return AttentionVariant::V1;
    if (s == "v2" || s == "V2") return AttentionVariant::V2;
    if (s == "v3" || s == "V3") return AttentionVariant::V3;
    if (s == "v4" || s == "V4") return AttentionVariant::V4;
    throw ConfigError("unknown attention variant: " + s);
}

std::string to_string(AttentionVariant v) {
    switch (v) {
        case AttentionVariant::V1: return "v1";
        case AttentionVariant::V2: return "v2";
        case AttentionVariant::V3: return "v3";
        default: return "v4";
    }
}

LossMode loss_mode_from_string(const std::string& s) {
    if (s == "paper_bce") return LossMode::PaperBce;
    if (s == "categorical_ce") return LossMode::CategoricalCe;
    throw ConfigError("unknown loss mode: " + s);
}

std::string to_string(LossMode m) {
    return m == LossMode::PaperBce ? "paper_bce" : "categorical_ce";
}

std::size_t ModelConfig::attn_ctx_width() const {
    switch (variant) {
        case AttentionVariant::V1: return 0;
        case AttentionVariant::V2: return hidden;
        case AttentionVariant::V3: return user_dim;
        default: return user_dim + hidden;
    }
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    Parameter* fixed[] = {&item_table, &fm_w, &fm_latent};
    for (Parameter* p : fixed) out.push_back(p);
    for (std::size_t i = 0; i < dnn_w.size(); ++i) {
        out.push_back(&dnn_w[i]);
        out.push_back(&dnn_b[i]);
    }
    Parameter* gg[] = {&gg_h, &gg_b, &gg_wz, &gg_uz, &gg_wr, &gg_ur, &gg_wo, &gg_uo,
                       &at_a, &at_w1, &at_w2, &at_c, &w3};
    for (Parameter* p : gg) {
        if (!p->value.empty()) out.push_back(p);
    }
    return out;
}

std::vector<const Parameter*> Model::parameters() const {
    auto mutable_params = const_cast<Model*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
}

void Model::zero_grads() {
    for (Parameter* p : parameters()) p->zero_grad();
}

std::size_t Model::scalar_count() const {
    std::size_t n = 0;
    for (const Parameter* p : parameters()) n += p->value.size();
    return n;
}

Model build_model(const ModelConfig& cfg, std::size_t vocab_size,
                  std::size_t feature_width, std::uint64_t seed) {
    if (cfg.hidden == 0 || cfg.user_dim == 0 || cfg.fm_dim == 0 || cfg.prop_steps == 0) {
        throw ConfigError("build_model: d, M, f and T must all be >= 1");
    }
    if (vocab_size == 0 || feature_width == 0) {
        throw ConfigError("build_model: empty vocabulary or feature space");
    }
    const std::size_t d = cfg.hidden, M = cfg.user_dim;
    Model model;
    model.cfg = cfg;
    model.vocab_size = vocab_size;
    model.feature_width = feature_width;

    Rng rng(seed);
    auto init = [&](std::size_t r, std::size_t c, const char* name) {
        return Parameter(gaussian_from(rng, r, c, 0.1), name);
    };
    model.item_table = init(vocab_size, d, "item_table");
    model.fm_w = init(feature_width, 1, "fm_w");
    model.fm_latent = init(feature_width, cfg.fm_dim, "fm_latent");
    std::size_t in = feature_width;
    std::vector<std::size_t> widths = cfg.dnn_hidden;
    widths.push_back(M);
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const std::string idx = std::to_string(i);
        model.dnn_w.push_back(Parameter(gaussian_from(rng, widths[i], in, 0.1), "dnn_w" + idx));
        model.dnn_b.push_back(Parameter(gaussian_from(rng, widths[i], 1, 0.1), "dnn_b" + idx));
        in = widths[i];
    }
    model.gg_h = init(d, 2 * d, "gg_h");
    model.gg_b = init(1, 2 * d, "gg_b");
    model.gg_wz = init(d, 2 * d, "gg_wz");
    model.gg_uz = init(d, d, "gg_uz");
    if (!cfg.tie_reset_update_input) {
        model.gg_wr = init(d, 2 * d, "gg_wr");
    }
    model.gg_ur = init(d, d, "gg_ur");
    model.gg_wo = init(d, 2 * d, "gg_wo");
    model.gg_uo = init(d, d, "gg_uo");
    if (cfg.variant != AttentionVariant::V1) {
        model.at_a = init(d, 1, "at_a");
        model.at_w1 = init(d, cfg.attn_ctx_width(), "at_w1");
        model.at_w2 = init(d, d, "at_w2");
        model.at_c = init(d, 1, "at_c");
    }
    model.w3 = init(d, 2 * d + M, "w3");
    return model;
}

// ---- user encoder -------------------------------------------------------

double fm_forward(const UserFeatureVector& x, const Matrix& w, const Matrix& latent) {
    if (w.rows() != x.width || w.cols() != 1 || latent.rows() != x.width) {
        throw std::invalid_argument("fm_forward: dimension mismatch");
    }
    const std::size_t f = latent.cols();
    double linear = 0.0;
    std::vector<double> qsum(f, 0.0);
    double sum_sq = 0.0;
    for (std::size_t slot : x.active) {
        linear += w[slot];
        const double* k = latent.row(slot);
        for (std::size_t j = 0; j < f; ++j) qsum[j] += k[j];
        sum_sq += dot(k, k, f);
    }
    const double order2 = 0.5 * (dot(qsum.data(), qsum.data(), f) - sum_sq);
    return linear + order2;
}

namespace {

std::vector<double> dnn_forward_traced(const UserFeatureVector& x, const Model& model,
                                       std::vector<std::vector<double>>* alphas) {
    if (x.width != model.feature_width) {
        throw std::invalid_argument("dnn_forward: feature width mismatch");
    }
    std::vector<double> act;
    for (std::size_t layer = 0; layer < model.dnn_w.size(); ++layer) {
        const Matrix& W = model.dnn_w[layer].value;
        const Matrix& b = model.dnn_b[layer].value;
        const std::size_t expected_in = layer == 0 ? x.width : act.size();
        if (W.cols() != expected_in || b.rows() != W.rows()) {
            throw ConfigError("dnn layer " + std::to_string(layer) +
                              " has inconsistent dimensions");
        }
        std::vector<double> next(W.rows());
        for (std::size_t j = 0; j < W.rows(); ++j) {
            double pre = b[j];
            if (layer == 0) {
                for (std::size_t slot : x.active) pre += W(j, slot);
            } else {
                pre += dot(W.row(j), act.data(), act.size());
            }
            next[j] = sigmoid(pre);
        }
        act = std::move(next);
        if (alphas) alphas->push_back(act);
    }
    return act;
}

}  // namespace

std::vector<double> dnn_forward(const UserFeatureVector& x, const Model& model) {
    return dnn_forward_traced(x, model, nullptr);
}

std::vector<double> user_embedding(const UserFeatureVector& x, const Model& model) {
    const double fm = fm_forward(x, model.fm_w.value, model.fm_latent.value);
    std::vector<double> u = dnn_forward(x, model);
    for (double& v : u) v = sigmoid(fm + v);
    return u;
}

// ---- gated graph propagation --------------------------------------------

Matrix init_states(const SessionGraph& graph, const Matrix& table) {
    Matrix states(graph.node_count(), table.cols());
    for (std::size_t i = 0; i < graph.node_count(); ++i) {
        const std::size_t item = graph.nodes[i];
        if (item >= table.rows()) {
            throw std::out_of_range("init_states: item index " + std::to_string(item) +
                                    " outside embedding table");
        }
        std::copy(table.row(item), table.row(item) + table.cols(), states.row(i));
    }
    return states;
}

namespace {

void propagate_step_impl(const SessionGraph& graph, const Matrix& states,
                         const Model& model, StepTrace& st) {
    const std::size_t n = graph.node_count();
    const std::size_t d = model.cfg.hidden;
    if (states.rows() != n || states.cols() != d) {
        throw ConfigError("propagate_step: state matrix shape mismatch");
    }
    const Matrix& H = model.gg_h.value;
    const Matrix& b = model.gg_b.value;
    if (H.rows() != d || H.cols() != 2 * d || b.cols() != 2 * d) {
        throw ConfigError("propagate_step: propagation matrix shape mismatch");
    }
    const Matrix& Wz = model.gg_wz.value;
    const Matrix& Wr = model.cfg.tie_reset_update_input ? model.gg_wz.value
                                                        : model.gg_wr.value;
    const Matrix& Wo = model.gg_wo.value;
    const Matrix& Uz = model.gg_uz.value;
    const Matrix& Ur = model.gg_ur.value;
    const Matrix& Uo = model.gg_uo.value;

    // Stencil application: row i of m_agg is gather_concat_rows(i) applied to
    // the stacked [V; V], i.e. (a_out + a_in) * V.
    st.m_agg = Matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        double* mrow = st.m_agg.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            const double c = graph.a_out(i, j) + graph.a_in(i, j);
            if (c == 0.0) continue;
            const double* vrow = states.row(j);
            for (std::size_t k = 0; k < d; ++k) mrow[k] += c * vrow[k];
        }
    }
    st.a = Matrix(n, 2 * d);
    for (std::size_t i = 0; i < n; ++i) {
        double* arow = st.a.row(i);
        std::copy(b.row(0), b.row(0) + 2 * d, arow);
        const double* mrow = st.m_agg.row(i);
        for (std::size_t p = 0; p < d; ++p) {
            const double mv = mrow[p];
            if (mv == 0.0) continue;
            const double* hrow = H.row(p);
            for (std::size_t q = 0; q < 2 * d; ++q) arow[q] += mv * hrow[q];
        }
    }
    st.z = Matrix(n, d);
    st.r = Matrix(n, d);
    st.cand = Matrix(n, d);
    st.out = Matrix(n, d);
    std::vector<double> rv(d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = st.a.row(i);
        const double* vprev = states.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            st.z(i, j) = sigmoid(dot(Wz.row(j), arow, 2 * d) + dot(Uz.row(j), vprev, d));
            st.r(i, j) = sigmoid(dot(Wr.row(j), arow, 2 * d) + dot(Ur.row(j), vprev, d));
        }
        for (std::size_t j = 0; j < d; ++j) rv[j] = st.r(i, j) * vprev[j];
        for (std::size_t j = 0; j < d; ++j) {
            st.cand(i, j) =
                std::tanh(dot(Wo.row(j), arow, 2 * d) + dot(Uo.row(j), rv.data(), d));
            st.out(i, j) = (1.0 - st.z(i, j)) * vprev[j] + st.z(i, j) * st.cand(i, j);
        }
    }
}

}  // namespace

Matrix propagate_step(const SessionGraph& graph, const Matrix& states,
                      const Model& model) {
    StepTrace st;
    propagate_step_impl(graph, states, model, st);
    return st.out;
}

Matrix propagate(const SessionGraph& graph, const Matrix& table, const Model& model,
                 std::size_t steps) {
    if (steps == 0) {
        throw std::invalid_argument("propagate: need at least one step");
    }
    Matrix states = init_states(graph, table);
    for (std::size_t t = 0; t < steps; ++t) {
        states = propagate_step(graph, states, model);
    }
    return states;
}

// ---- readout -------------------------------------------------------------

namespace {

std::vector<double> attention_context(const std::vector<double>& u,
                                      const std::vector<double>& s_c,
                                      AttentionVariant variant) {
    switch (variant) {
        case AttentionVariant::V2: return s_c;
        case AttentionVariant::V3: return u;
        case AttentionVariant::V4: {
            std::vector<double> ctx = u;
            ctx.insert(ctx.end(), s_c.begin(), s_c.end());
            return ctx;
        }
        default: return {};
    }
}

std::vector<double> attention_weights_traced(const std::vector<double>& u,
                                             const std::vector<double>& s_c,
                                             const Matrix& states, const Model& model,
                                             Matrix* sig_q, std::vector<double>* ctx_out) {
    const std::size_t n = states.rows();
    const std::size_t d = model.cfg.hidden;
    std::vector<double> lambda(n);
    if (model.cfg.variant == AttentionVariant::V1) {
        std::fill(lambda.begin(), lambda.end(), 1.0 / static_cast<double>(n));
        return lambda;
    }
    const Matrix& W1 = model.at_w1.value;
    const Matrix& W2 = model.at_w2.value;
    const Matrix& a = model.at_a.value;
    const Matrix& C = model.at_c.value;
    const auto ctx = attention_context(u, s_c, model.cfg.variant);
    if (W1.rows() != d || W1.cols() != ctx.size() || W2.rows() != d ||
        W2.cols() != d || a.rows() != d || C.rows() != d) {
        throw ConfigError("attention_weights: parameter shapes do not match variant " +
                          to_string(model.cfg.variant));
    }
    if (sig_q) *sig_q = Matrix(n, d);
    if (ctx_out) *ctx_out = ctx;
    for (std::size_t i = 0; i < n; ++i) {
        const double* vrow = states.row(i);
        double lam = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double q = dot(W1.row(j), ctx.data(), ctx.size()) +
                             dot(W2.row(j), vrow, d) + C[j];
            const double sq = sigmoid(q);
            if (sig_q) (*sig_q)(i, j) = sq;
            lam += a[j] * sq;
        }
        lambda[i] = lam;
    }
    return lambda;
}

}  // namespace

std::vector<double> attention_weights(const std::vector<double>& u,
                                      const std::vector<double>& s_c,
                                      const Matrix& states, const Model& model) {
    return attention_weights_traced(u, s_c, states, model, nullptr, nullptr);
}

std::vector<double> global_embedding(const std::vector<double>& lambda,
                                     const Matrix& states) {
    if (lambda.size() != states.rows()) {
        throw std::invalid_argument("global_embedding: weight count != node count");
    }
    std::vector<double> s_g(states.cols(), 0.0);
    for (std::size_t i = 0; i < states.rows(); ++i) {
        const double* vrow = states.row(i);
        for (std::size_t j = 0; j < states.cols(); ++j) s_g[j] += lambda[i] * vrow[j];
    }
    return s_g;
}

std::vector<double> hybrid_embedding(const std::vector<double>& s_c,
                                     const std::vector<double>& s_g,
                                     const std::vector<double>& u, const Model& model) {
    const std::size_t d = model.cfg.hidden, M = model.cfg.user_dim;
    const Matrix& W3 = model.w3.value;
    if (s_c.size() != d || s_g.size() != d || u.size() != M || W3.rows() != d ||
        W3.cols() != 2 * d + M) {
        throw ConfigError("hybrid_embedding: shape mismatch");
    }
    std::vector<double> cat;
    cat.reserve(2 * d + M);
    cat.insert(cat.end(), s_c.begin(), s_c.end());
    cat.insert(cat.end(), s_g.begin(), s_g.end());
    cat.insert(cat.end(), u.begin(), u.end());
    std::vector<double> s_h(d);
    for (std::size_t j = 0; j < d; ++j) {
        s_h[j] = dot(W3.row(j), cat.data(), cat.size());
    }
    return s_h;
}

PredictionVector score_and_predict(const std::vector<double>& s_h, const Matrix& table) {
    if (s_h.size() != table.cols()) {
        throw std::invalid_argument("score_and_predict: dimension mismatch");
    }
    PredictionVector out;
    out.scores.resize(table.rows());
    for (std::size_t j = 0; j < table.rows(); ++j) {
        out.scores[j] = dot(s_h.data(), table.row(j), s_h.size());
    }
    const double peak = *std::max_element(out.scores.begin(), out.scores.end());
    out.probs.resize(out.scores.size());
    double total = 0.0;
    for (std::size_t j = 0; j < out.scores.size(); ++j) {
        out.probs[j] = std::exp(out.scores[j] - peak);
        total += out.probs[j];
    }
    for (double& p : out.probs) p /= total;
    return out;
}

double cross_entropy_loss(const std::vector<double>& probs, std::size_t label,
                          LossMode mode) {
    if (label >= probs.size()) {
        throw std::invalid_argument("cross_entropy_loss: label out of range");
    }
    auto clip = [](double p) { return std::clamp(p, kProbClipLo, kProbClipHi); };
    if (mode == LossMode::CategoricalCe) {
        return -std::log(clip(probs[label]));
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = clip(probs[i]);
        loss -= i == label ? std::log(p) : std::log(1.0 - p);
    }
    return loss;
}

// ---- whole-model forward/backward ---------------------------------------

double model_forward(const Model& model, const SessionGraph& graph,
                     const UserFeatureVector& x, std::size_t label,
                     ExampleTrace* trace) {
    ExampleTrace local;
    ExampleTrace& tr = trace ? *trace : local;
    tr = ExampleTrace{};

    tr.fm_value = fm_forward(x, model.fm_w.value, model.fm_latent.value);
    {
        const std::size_t f = model.cfg.fm_dim;
        tr.fm_qsum.assign(f, 0.0);
        for (std::size_t slot : x.active) {
            const double* k = model.fm_latent.value.row(slot);
            for (std::size_t j = 0; j < f; ++j) tr.fm_qsum[j] += k[j];
        }
    }
    const std::vector<double> dnn_out = dnn_forward_traced(x, model, &tr.alphas);
    tr.u.resize(dnn_out.size());
    for (std::size_t j = 0; j < dnn_out.size(); ++j) {
        tr.u[j] = sigmoid(tr.fm_value + dnn_out[j]);
    }

    tr.states0 = init_states(graph, model.item_table.value);
    tr.steps.resize(model.cfg.prop_steps);
    const Matrix* prev = &tr.states0;
    for (std::size_t t = 0; t < model.cfg.prop_steps; ++t) {
        propagate_step_impl(graph, *prev, model, tr.steps[t]);
        prev = &tr.steps[t].out;
    }
    const Matrix& final_states = *prev;

    tr.s_c.assign(final_states.row(graph.last_node),
                  final_states.row(graph.last_node) + final_states.cols());
    tr.lambda = attention_weights_traced(tr.u, tr.s_c, final_states, model, &tr.sig_q,
                                         &tr.ctx);
    tr.s_g = global_embedding(tr.lambda, final_states);
    tr.s_h = hybrid_embedding(tr.s_c, tr.s_g, tr.u, model);
    tr.pred = score_and_predict(tr.s_h, model.item_table.value);
    tr.label = label;
    tr.loss = cross_entropy_loss(tr.pred.probs, label, model.cfg.loss_mode);
    return tr.loss;
}

void model_backward(Model& model, const SessionGraph& graph,
                    const UserFeatureVector& x, const ExampleTrace& trace,
                    double loss_scale) {
    const std::size_t d = model.cfg.hidden;
    const std::size_t M = model.cfg.user_dim;
    const std::size_t n = graph.node_count();
    const std::size_t m = model.vocab_size;
    const Matrix& final_states = trace.steps.back().out;

    // loss -> scores, with dL/dp_i fused against the softmax Jacobian so the
    // label term is the exact, bounded (dL/dp_label)·p_label = −1 even deep in
    // saturation; the loss-value clip would otherwise zero all gradients and
    // freeze training permanently.
    const std::vector<double>& p = trace.pred.probs;
    std::vector<double> t(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        if (model.cfg.loss_mode == LossMode::CategoricalCe) {
            if (i == trace.label) t[i] = -1.0;
        } else {
            t[i] = i == trace.label
                       ? -1.0
                       : p[i] / std::max(1.0 - p[i], kProbClipLo);
        }
        t[i] *= loss_scale;
    }
    double inner = 0.0;
    for (std::size_t i = 0; i < m; ++i) inner += t[i];
    std::vector<double> dscore(m);
    for (std::size_t i = 0; i < m; ++i) dscore[i] = t[i] - p[i] * inner;

    // scores -> s_h and the embedding table
    std::vector<double> ds_h(d, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        const double g = dscore[j];
        if (g == 0.0) continue;
        const double* vrow = model.item_table.value.row(j);
        double* grow = model.item_table.grad.row(j);
        for (std::size_t k = 0; k < d; ++k) {
            ds_h[k] += g * vrow[k];
            grow[k] += g * trace.s_h[k];
        }
    }

    // hybrid embedding
    std::vector<double> cat;
    cat.reserve(2 * d + M);
    cat.insert(cat.end(), trace.s_c.begin(), trace.s_c.end());
    cat.insert(cat.end(), trace.s_g.begin(), trace.s_g.end());
    cat.insert(cat.end(), trace.u.begin(), trace.u.end());
    std::vector<double> dcat(2 * d + M, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        const double g = ds_h[j];
        double* grow = model.w3.grad.row(j);
        const double* wrow = model.w3.value.row(j);
        for (std::size_t k = 0; k < cat.size(); ++k) {
            grow[k] += g * cat[k];
            dcat[k] += wrow[k] * g;
        }
    }
    std::vector<double> ds_c(dcat.begin(), dcat.begin() + d);
    std::vector<double> ds_g(dcat.begin() + d, dcat.begin() + 2 * d);
    std::vector<double> du(dcat.begin() + 2 * d, dcat.end());

    // global embedding and attention
    Matrix dstates(n, d);
    if (model.cfg.variant == AttentionVariant::V1) {
        const double w = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < d; ++k) dstates(i, k) += w * ds_g[k];
        }
    } else {
        std::vector<double> dctx(trace.ctx.size(), 0.0);
        std::vector<double> dq(d);
        for (std::size_t i = 0; i < n; ++i) {
            const double* vrow = final_states.row(i);
            const double dlam = dot(ds_g.data(), vrow, d);
            for (std::size_t k = 0; k < d; ++k) dstates(i, k) += trace.lambda[i] * ds_g[k];
            if (dlam == 0.0) continue;
            for (std::size_t j = 0; j < d; ++j) {
                const double sq = trace.sig_q(i, j);
                model.at_a.grad[j] += sq * dlam;
                dq[j] = model.at_a.value[j] * sq * (1.0 - sq) * dlam;
            }
            for (std::size_t j = 0; j < d; ++j) {
                const double g = dq[j];
                if (g == 0.0) continue;
                model.at_c.grad[j] += g;
                double* w1g = model.at_w1.grad.row(j);
                const double* w1v = model.at_w1.value.row(j);
                for (std::size_t k = 0; k < trace.ctx.size(); ++k) {
                    w1g[k] += g * trace.ctx[k];
                    dctx[k] += w1v[k] * g;
                }
                double* w2g = model.at_w2.grad.row(j);
                const double* w2v = model.at_w2.value.row(j);
                for (std::size_t k = 0; k < d; ++k) {
                    w2g[k] += g * vrow[k];
                    dstates(i, k) += w2v[k] * g;
                }
            }
        }
        switch (model.cfg.variant) {
            case AttentionVariant::V2:
                for (std::size_t k = 0; k < d; ++k) ds_c[k] += dctx[k];
                break;
            case AttentionVariant::V3:
                for (std::size_t k = 0; k < M; ++k) du[k] += dctx[k];
                break;
            default:  // V4: ctx = [u; s_c]
                for (std::size_t k = 0; k < M; ++k) du[k] += dctx[k];
                for (std::size_t k = 0; k < d; ++k) ds_c[k] += dctx[M + k];
                break;
        }
    }
    for (std::size_t k = 0; k < d; ++k) dstates(graph.last_node, k) += ds_c[k];

    // propagation steps, newest first
    const Matrix& Wz = model.gg_wz.value;
    const Matrix& Uz = model.gg_uz.value;
    const bool tied = model.cfg.tie_reset_update_input;
    const Matrix& Wr = tied ? model.gg_wz.value : model.gg_wr.value;
    Matrix& Wr_grad = tied ? model.gg_wz.grad : model.gg_wr.grad;
    const Matrix& Ur = model.gg_ur.value;
    const Matrix& Wo = model.gg_wo.value;
    const Matrix& Uo = model.gg_uo.value;
    const Matrix& H = model.gg_h.value;

    std::vector<double> da(2 * d), rv(d), t1(d);
    for (std::size_t t = trace.steps.size(); t-- > 0;) {
        const StepTrace& st = trace.steps[t];
        const Matrix& prev = t == 0 ? trace.states0 : trace.steps[t - 1].out;
        Matrix dprev(n, d);
        Matrix dm_agg(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            const double* vprev = prev.row(i);
            const double* zrow = st.z.row(i);
            const double* rrow = st.r.row(i);
            const double* crow = st.cand.row(i);
            const double* arow = st.a.row(i);
            const double* dv = dstates.row(i);
            double* dprow = dprev.row(i);
            std::fill(da.begin(), da.end(), 0.0);
            for (std::size_t j = 0; j < d; ++j) rv[j] = rrow[j] * vprev[j];
            std::fill(t1.begin(), t1.end(), 0.0);
            for (std::size_t j = 0; j < d; ++j) {
                const double dz = dv[j] * (crow[j] - vprev[j]);
                const double dcand = dv[j] * zrow[j];
                dprow[j] += dv[j] * (1.0 - zrow[j]);
                const double dc = dcand * (1.0 - crow[j] * crow[j]);
                if (dc != 0.0) {
                    double* wog = model.gg_wo.grad.row(j);
                    const double* wov = Wo.row(j);
                    for (std::size_t k = 0; k < 2 * d; ++k) {
                        wog[k] += dc * arow[k];
                        da[k] += wov[k] * dc;
                    }
                    double* uog = model.gg_uo.grad.row(j);
                    const double* uov = Uo.row(j);
                    for (std::size_t k = 0; k < d; ++k) {
                        uog[k] += dc * rv[k];
                        t1[k] += uov[k] * dc;
                    }
                }
                const double dsz = dz * zrow[j] * (1.0 - zrow[j]);
                if (dsz != 0.0) {
                    double* wzg = model.gg_wz.grad.row(j);
                    const double* wzv = Wz.row(j);
                    for (std::size_t k = 0; k < 2 * d; ++k) {
                        wzg[k] += dsz * arow[k];
                        da[k] += wzv[k] * dsz;
                    }
                    double* uzg = model.gg_uz.grad.row(j);
                    const double* uzv = Uz.row(j);
                    for (std::size_t k = 0; k < d; ++k) {
                        uzg[k] += dsz * vprev[k];
                        dprow[k] += uzv[k] * dsz;
                    }
                }
            }
            // reset gate, fed by the candidate path only
            for (std::size_t j = 0; j < d; ++j) {
                const double dr = t1[j] * vprev[j];
                dprow[j] += t1[j] * rrow[j];
                const double dsr = dr * rrow[j] * (1.0 - rrow[j]);
                if (dsr == 0.0) continue;
                double* wrg = Wr_grad.row(j);
                const double* wrv = Wr.row(j);
                for (std::size_t k = 0; k < 2 * d; ++k) {
                    wrg[k] += dsr * arow[k];
                    da[k] += wrv[k] * dsr;
                }
                double* urg = model.gg_ur.grad.row(j);
                const double* urv = Ur.row(j);
                for (std::size_t k = 0; k < d; ++k) {
                    urg[k] += dsr * vprev[k];
                    dprow[k] += urv[k] * dsr;
                }
            }
            // a = m H + b
            double* bg = model.gg_b.grad.row(0);
            for (std::size_t k = 0; k < 2 * d; ++k) bg[k] += da[k];
            const double* mrow = st.m_agg.row(i);
            double* dmrow = dm_agg.row(i);
            for (std::size_t pidx = 0; pidx < d; ++pidx) {
                double* hg = model.gg_h.grad.row(pidx);
                const double* hv = H.row(pidx);
                const double mv = mrow[pidx];
                double acc = 0.0;
                for (std::size_t k = 0; k < 2 * d; ++k) {
                    hg[k] += mv * da[k];
                    acc += hv[k] * da[k];
                }
                dmrow[pidx] = acc;
            }
        }
        // m_agg = (A_out + A_in) * V_prev
        for (std::size_t i = 0; i < n; ++i) {
            const double* dmrow = dm_agg.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                const double c = graph.a_out(i, j) + graph.a_in(i, j);
                if (c == 0.0) continue;
                double* dprow = dprev.row(j);
                for (std::size_t k = 0; k < d; ++k) dprow[k] += c * dmrow[k];
            }
        }
        dstates = std::move(dprev);
    }
    for (std::size_t i = 0; i < n; ++i) {
        double* grow = model.item_table.grad.row(graph.nodes[i]);
        const double* drow = dstates.row(i);
        for (std::size_t k = 0; k < d; ++k) grow[k] += drow[k];
    }

    // user tower: u = sigmoid(fm + dnn)
    std::vector<double> dpre(M);
    double dfm = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
        dpre[j] = du[j] * trace.u[j] * (1.0 - trace.u[j]);
        dfm += dpre[j];
    }
    // DNN layers backwards
    std::vector<double> dact = dpre;
    for (std::size_t layer = model.dnn_w.size(); layer-- > 0;) {
        const std::vector<double>& act = trace.alphas[layer];
        std::vector<double> ds(act.size());
        for (std::size_t j = 0; j < act.size(); ++j) {
            ds[j] = dact[j] * act[j] * (1.0 - act[j]);
            model.dnn_b[layer].grad[j] += ds[j];
        }
        const Matrix& W = model.dnn_w[layer].value;
        Matrix& Wg = model.dnn_w[layer].grad;
        if (layer == 0) {
            for (std::size_t j = 0; j < ds.size(); ++j) {
                for (std::size_t slot : x.active) Wg(j, slot) += ds[j];
            }
        } else {
            const std::vector<double>& input = trace.alphas[layer - 1];
            std::vector<double> dinput(input.size(), 0.0);
            for (std::size_t j = 0; j < ds.size(); ++j) {
                const double g = ds[j];
                double* wg = Wg.row(j);
                const double* wv = W.row(j);
                for (std::size_t k = 0; k < input.size(); ++k) {
                    wg[k] += g * input[k];
                    dinput[k] += wv[k] * g;
                }
            }
            dact = std::move(dinput);
        }
    }
    // FM: d/dk_i of the square-of-sum identity is (qsum - k_i)
    const std::size_t f = model.cfg.fm_dim;
    for (std::size_t slot : x.active) {
        model.fm_w.grad[slot] += dfm;
        const double* k = model.fm_latent.value.row(slot);
        double* kg = model.fm_latent.grad.row(slot);
        for (std::size_t j = 0; j < f; ++j) {
            kg[j] += dfm * (trace.fm_qsum[j] - k[j]);
        }
    }
}

}  // namespace ubergnn
