#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ubergnn/data.hpp"
#include "ubergnn/matrix.hpp"
#include "ubergnn/optim.hpp"
#include "ubergnn/session_graph.hpp"

namespace ubergnn {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class AttentionVariant { V1 = 1, V2 = 2, V3 = 3, V4 = 4 };
enum class LossMode { PaperBce, CategoricalCe };

AttentionVariant variant_from_string(const std::string& s);
std::string to_string(AttentionVariant v);
LossMode loss_mode_from_string(const std::string& s);
std::string to_string(LossMode m);

struct ModelConfig {
    std::size_t hidden = 32;    // item embedding / node state dimension d
    std::size_t user_dim = 32;  // user embedding dimension M
    std::size_t fm_dim = 10;    // FM latent dimension f
    std::vector<std::size_t> dnn_hidden{64, 64};
    AttentionVariant variant = AttentionVariant::V4;
    std::size_t prop_steps = 1;  // T
    bool tie_reset_update_input = false;
    LossMode loss_mode = LossMode::PaperBce;

    // Width of the attention context: d (V2), M (V3), M + d (V4), 0 (V1).
    std::size_t attn_ctx_width() const;
};

// Every trainable matrix of the model, as named parameters.
struct Model {
    ModelConfig cfg;
    std::size_t vocab_size = 0;     // m
    std::size_t feature_width = 0;  // h

    Parameter item_table;  // m x d
    Parameter fm_w;        // h x 1
    Parameter fm_latent;   // h x f
    std::vector<Parameter> dnn_w;  // chained h -> hidden... -> M
    std::vector<Parameter> dnn_b;
    Parameter gg_h;   // d x 2d
    Parameter gg_b;   // 1 x 2d
    Parameter gg_wz;  // d x 2d
    Parameter gg_uz;  // d x d
    Parameter gg_wr;  // d x 2d, absent when reset/update input weights are tied
    Parameter gg_ur;  // d x d
    Parameter gg_wo;  // d x 2d
    Parameter gg_uo;  // d x d
    Parameter at_a;   // d x 1, absent for V1
    Parameter at_w1;  // d x ctx_width, absent for V1
    Parameter at_w2;  // d x d, absent for V1
    Parameter at_c;   // d x 1, absent for V1
    Parameter w3;     // d x (2d + M)

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    void zero_grads();
    std::size_t scalar_count() const;
};

// All parameters drawn i.i.d. N(0, 0.1^2) from one stream in fixed order.
Model build_model(const ModelConfig& cfg, std::size_t vocab_size,
                  std::size_t feature_width, std::uint64_t seed);

// ---- user encoder -------------------------------------------------------

// <w, x> plus pairwise interactions of active slots, via the square-of-sum
// identity (O(|active| * f)).
double fm_forward(const UserFeatureVector& x, const Matrix& w, const Matrix& latent);

// Sigmoid MLP from the one-hot portrait to the M-dimensional output.
std::vector<double> dnn_forward(const UserFeatureVector& x, const Model& model);

// sigmoid(fm scalar broadcast + dnn output), entries in (0,1).
std::vector<double> user_embedding(const UserFeatureVector& x, const Model& model);

// ---- gated graph propagation --------------------------------------------

Matrix init_states(const SessionGraph& graph, const Matrix& table);
Matrix propagate_step(const SessionGraph& graph, const Matrix& states,
                      const Model& model);
Matrix propagate(const SessionGraph& graph, const Matrix& table, const Model& model,
                 std::size_t steps);

// ---- readout and loss ----------------------------------------------------

std::vector<double> attention_weights(const std::vector<double>& u,
                                      const std::vector<double>& s_c,
                                      const Matrix& states, const Model& model);

std::vector<double> global_embedding(const std::vector<double>& lambda,
                                     const Matrix& states);

std::vector<double> hybrid_embedding(const std::vector<double>& s_c,
                                     const std::vector<double>& s_g,
                                     const std::vector<double>& u, const Model& model);

struct PredictionVector {
    std::vector<double> scores;
    std::vector<double> probs;
};

// Dot products against every vocabulary embedding, then stable softmax.
PredictionVector score_and_predict(const std::vector<double>& s_h, const Matrix& table);

// Summed binary cross-entropy over all coordinates (or plain categorical CE),
// probabilities clipped to [1e-10, 1 - 1e-10] before the logs.
double cross_entropy_loss(const std::vector<double>& probs, std::size_t label,
                          LossMode mode = LossMode::PaperBce);

// ---- whole-model forward/backward ---------------------------------------

struct StepTrace {
    Matrix m_agg;  // n x d  (A_out + A_in) * V_prev
    Matrix a;      // n x 2d pre-gate aggregation
    Matrix z;      // n x d  update gate
    Matrix r;      // n x d  reset gate
    Matrix cand;   // n x d  tanh candidate
    Matrix out;    // n x d  new states
};

struct ExampleTrace {
    std::vector<std::vector<double>> alphas;  // DNN post-sigmoid activations
    double fm_value = 0.0;
    std::vector<double> fm_qsum;  // sum of active latent vectors
    std::vector<double> u;

    Matrix states0;
    std::vector<StepTrace> steps;

    std::vector<double> lambda;
    Matrix sig_q;             // n x d, empty for V1
    std::vector<double> ctx;  // attention context, empty for V1
    std::vector<double> s_c, s_g, s_h;
    PredictionVector pred;
    std::size_t label = 0;
    double loss = 0.0;
};

double model_forward(const Model& model, const SessionGraph& graph,
                     const UserFeatureVector& x, std::size_t label,
                     ExampleTrace* trace);

// Accumulates d(loss_scale * loss)/dtheta into each parameter's grad slot.
void model_backward(Model& model, const SessionGraph& graph,
                    const UserFeatureVector& x, const ExampleTrace& trace,
                    double loss_scale = 1.0);

}  // namespace ubergnn
