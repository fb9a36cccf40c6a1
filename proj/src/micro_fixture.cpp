#include "ubergnn/micro_fixture.hpp"

#include "ubergnn/gradcheck.hpp"

namespace ubergnn {

MicroFixture make_micro_fixture(std::uint64_t seed) {
    MicroFixture fx;
    fx.schema.fields = {
        {FieldSpec::Kind::Categorical, "f0", {"a", "b"}, {}},
        {FieldSpec::Kind::Categorical, "f1", {"a", "b"}, {}},
        {FieldSpec::Kind::Continuous, "f2", {}, {0.5}},
    };
    fx.x = encode_user({{"f0", "a"}, {"f1", "b"}, {"f2", "0.7"}}, fx.schema);

    ModelConfig cfg;
    cfg.hidden = 4;
    cfg.user_dim = 3;
    cfg.fm_dim = 2;
    cfg.dnn_hidden = {5, 5};
    cfg.variant = AttentionVariant::V4;
    cfg.prop_steps = 2;
    fx.model = build_model(cfg, /*vocab_size=*/6, fx.schema.total_width(), seed);

    fx.graph = build_graph({0, 1, 2, 1});
    fx.label = 3;
    return fx;
}

std::vector<GradCheckReport> run_grad_check(MicroFixture& fx, double eps) {
    fx.model.zero_grads();
    ExampleTrace trace;
    model_forward(fx.model, fx.graph, fx.x, fx.label, &trace);
    model_backward(fx.model, fx.graph, fx.x, trace);

    auto params = fx.model.parameters();
    const auto numeric = finite_diff_grad(
        [&]() { return model_forward(fx.model, fx.graph, fx.x, fx.label, nullptr); },
        params, eps);

    std::vector<GradCheckReport> reports;
    for (std::size_t i = 0; i < params.size(); ++i) {
        reports.push_back({params[i]->name,
                           max_relative_error(params[i]->grad, numeric[i])});
    }
    return reports;
}

}  // namespace ubergnn
