#include "splitllm/gradcheck.hpp"

#include "splitllm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace splitllm {

RunConfig gradcheck_config() {
    RunConfig cfg;
    cfg.edges = 1;
    cfg.users = 1;
    cfg.widths = {8, 6, 5};
    cfg.cut = 2;
    cfg.rank = 2;
    cfg.init_std = 0.1;
    cfg.rounds = 50;
    cfg.local_epochs = 2;
    cfg.batch = 8;
    cfg.blob_dim = 6;
    cfg.blob_train_per_class = 20;
    cfg.blob_test_per_class = 10;
    cfg.schemes = {"splitllm"};
    return cfg;
}

namespace {

double loss_at(const Segment<double>& seg, const AdapterSet<double>& adapters, const Matrix64& x,
               const std::vector<std::uint32_t>& labels) {
    const auto fwd = segment_forward(seg, std::span<const LoraAdapter<double>>(adapters), x);
    return softmax_cross_entropy(fwd.output, std::span<const std::uint32_t>(labels)).loss;
}

void check_gradients(const RunConfig& cfg, const Experiment& exp, const GradcheckOptions& opt,
                     GradcheckReport& report) {
    auto model = build_model<double>(exp.shape, cfg.seed);
    Rng rng = make_stream(cfg.seed, StreamPurpose::GradCheck);
    for (auto& a : model.adapters) {
        a.a = gaussian_matrix<double>(a.a.rows(), a.a.cols(), 0.0, 0.5, rng);
        a.b = gaussian_matrix<double>(a.b.rows(), a.b.cols(), 0.0, 0.5, rng);
    }
    const auto seg = whole_model(model.frozen);
    std::vector<std::size_t> all(exp.data.train.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto batch = sample_minibatch(all, opt.batch, rng);
    const auto x = exp.data.train.gather_features<double>(batch);
    const auto labels = exp.data.train.gather_labels(batch);

    std::vector<AdapterGrad<double>> grads;
    {
        std::optional<testing::ScopedBackwardFault> fault;
        if (opt.corrupt_backward) fault.emplace(1.5);
        auto fwd = segment_forward(seg, std::span<const LoraAdapter<double>>(model.adapters), x);
        const auto ce = softmax_cross_entropy(fwd.output, std::span<const std::uint32_t>(labels));
        grads = segment_backward(fwd.cache, ce.dlogits).grads;
    }

    report.parameter_count = model.frozen->parameter_count();
    for (const auto& a : model.adapters) report.parameter_count += a.parameter_count();

    auto probe = [&](BasicMatrix<double>& param, const BasicMatrix<double>& analytic) {
        for (std::size_t i = 0; i < param.size(); ++i) {
            double& v = param.values()[i];
            const double saved = v;
            v = saved + opt.step;
            const double up = loss_at(seg, model.adapters, x, labels);
            v = saved - opt.step;
            const double down = loss_at(seg, model.adapters, x, labels);
            v = saved;
            const double numeric = (up - down) / (2.0 * opt.step);
            const double exact = analytic.values()[i];
            const double denom = std::max({std::abs(numeric), std::abs(exact), opt.grad_floor});
            report.max_grad_error = std::max(report.max_grad_error, std::abs(numeric - exact) / denom);
            ++report.checked_entries;
        }
    };
    for (std::size_t l = 0; l < model.adapters.size(); ++l) {
        probe(model.adapters[l].a, grads[l].ga);
        probe(model.adapters[l].b, grads[l].gb);
    }
}

double rel_gap(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-30});
    return std::abs(a - b) / denom;
}

template <typename T>
void check_split(RunConfig cfg, const GradcheckOptions& opt, GradcheckReport& report) {
    cfg.edges = 1;
    cfg.users = 1;
    cfg.executor = Executor::Sequential;
    const Experiment exp = prepare_experiment(cfg);
    std::optional<testing::ScopedBackwardFault> fault;
    if (opt.corrupt_backward) fault.emplace(1.5);
    const auto split = run_training<T>(cfg, exp);
    const auto oracle = train_centralized<T>(cfg, exp);
    require(split.steps.size() == oracle.steps.size(), ErrorKind::Protocol, "split and oracle step counts differ");
    report.split_steps = split.steps.size();
    double worst = 0.0;
    for (std::size_t i = 0; i < split.steps.size(); ++i)
        worst = std::max(worst, rel_gap(split.steps[i].loss, oracle.steps[i].loss));
    for (std::size_t l = 0; l < split.final_adapters.size(); ++l) {
        worst = std::max(worst, max_rel_diff(split.final_adapters[l].a, oracle.final_adapters[l].a));
        worst = std::max(worst, max_rel_diff(split.final_adapters[l].b, oracle.final_adapters[l].b));
    }
    report.max_split_divergence = worst;
}

} // namespace

GradcheckReport run_gradcheck(const RunConfig& cfg, const GradcheckOptions& options) {
    validate(cfg);
    GradcheckReport report;
    report.grad_tolerance = options.grad_tolerance;
    report.split_tolerance = options.split_tolerance > 0.0 ? options.split_tolerance
                             : cfg.precision == Precision::F32 ? 1e-5
                                                               : 1e-10;
    const Experiment exp = prepare_experiment(cfg);
    require(exp.shape.frozen_parameter_count() + exp.shape.trainable_parameter_count() <= 10000, ErrorKind::Config,
            "gradcheck: model has more than 10^4 parameters; use a smaller config");
    check_gradients(cfg, exp, options, report);
    if (cfg.precision == Precision::F32)
        check_split<float>(cfg, options, report);
    else
        check_split<double>(cfg, options, report);
    return report;
}

} // namespace splitllm
