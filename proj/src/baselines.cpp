#include "splitllm/baselines.hpp"

#include "splitllm/aggregation.hpp"
#include "splitllm/nodes.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>

namespace splitllm {

namespace {

template <typename T>
std::vector<MomentumBuffers<T>> fresh_momentum(const AdapterSet<T>& adapters) {
    std::vector<MomentumBuffers<T>> out;
    for (const auto& a : adapters) out.push_back(MomentumBuffers<T>::zeros_like(a));
    return out;
}

/// Per-layer SGD with the tier learning rate of each layer.
template <typename T>
void step_layers(AdapterSet<T>& adapters, std::vector<MomentumBuffers<T>>& momentum,
                 const std::vector<AdapterGrad<T>>& grads, const RunConfig& cfg, std::size_t round) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const SgdParams sgd{layer_learning_rate(cfg, adapters[i].layer_index, round), cfg.momentum};
        sgd_step(adapters[i], grads[i].ga, grads[i].gb, momentum[i], sgd);
    }
}

/// One forward, loss and backward over `segment` on the given rows.
template <typename T>
double train_step(const Segment<T>& segment, AdapterSet<T>& adapters, std::vector<MomentumBuffers<T>>& momentum,
                  const Dataset& data, const std::vector<std::size_t>& batch, const RunConfig& cfg,
                  std::size_t round) {
    auto fwd = segment_forward(segment, std::span<const LoraAdapter<T>>(adapters), data.gather_features<T>(batch));
    const auto labels = data.gather_labels(batch);
    const auto ce = softmax_cross_entropy(fwd.output, std::span<const std::uint32_t>(labels));
    auto back = segment_backward(fwd.cache, ce.dlogits);
    step_layers(adapters, momentum, back.grads, cfg, round);
    return ce.loss;
}

/// Data-size FedAvg of per-contributor adapter sets, layer by layer.
template <typename T>
AdapterSet<T> fedavg_sets(const std::vector<ContributorKey>& keys, const std::vector<AdapterSet<T>>& sets,
                          const std::vector<std::size_t>& sizes, double* discrepancy) {
    const auto weights = compute_weights(sizes);
    AdapterSet<T> out;
    for (std::size_t i = 0; i < sets.front().size(); ++i) {
        WeightedAdapterSet<T> set{sets.front()[i].layer_index, {}};
        for (std::size_t j = 0; j < sets.size(); ++j) set.entries.push_back({keys[j], sets[j][i], weights[j]});
        set.validate();
        if (discrepancy) *discrepancy = std::max(*discrepancy, product_discrepancy(set));
        out.push_back(fedavg_adapters(set));
    }
    return out;
}

template <typename T>
ModelDistributionMsg<T> distribution(const Segment<T>& seg, std::uint32_t m, std::uint32_t n) {
    ModelDistributionMsg<T> msg;
    msg.header = MessageHeader{0, 0, m, n};
    msg.tier = Tier::User;
    msg.first_layer = seg.first_index();
    for (std::size_t i = 0; i < seg.size(); ++i) msg.layers.push_back(seg.layer(i));
    return msg;
}

/// Shared bookkeeping for the baseline trainers.
template <typename T>
struct BaselineRun {
    const RunConfig& cfg;
    const Experiment& exp;
    LayeredModel<T> model;
    SimNetwork network;
    TrainingHistory<T> history;

    BaselineRun(const RunConfig& c, const Experiment& e, const char* scheme)
        : cfg(c), exp(e), model(build_model<T>(e.shape, c.seed)), network(c.links) {
        validate(cfg);
        history.scheme = scheme;
        history.initial_adapters = model.adapters;
        for (std::size_t n = 0; n < exp.plan.shards.size(); ++n)
            if (exp.plan.shards[n].empty())
                history.warnings.push_back("user " + Topology::key(exp.topology.edge_of(n), static_cast<std::uint32_t>(n)) +
                                           " has no local data; skipped with aggregation weight 0");
    }

    std::vector<std::uint32_t> active_users() const {
        std::vector<std::uint32_t> out;
        for (auto n : exp.topology.users_in_order())
            if (!exp.plan.shards[n].empty()) out.push_back(n);
        return out;
    }

    void finish_round(std::uint32_t t, const AdapterSet<T>& adapters, const MessageLog& log, double step_loss_sum,
                      std::size_t steps, double discrepancy) {
        network.commit(log);
        RoundMetrics metrics;
        metrics.round = t;
        const auto whole = whole_model(model.frozen);
        metrics.train_loss = evaluate(whole, adapters, exp.data.train).loss;
        const auto test = evaluate(whole, adapters, exp.data.test);
        metrics.test_loss = test.loss;
        metrics.test_accuracy = test.accuracy;
        metrics.mean_step_loss = steps ? step_loss_sum / static_cast<double>(steps) : 0.0;
        metrics.user_bytes = network.tier_bytes(Tier::User);
        metrics.edge_bytes = network.tier_bytes(Tier::Edge);
        metrics.cloud_bytes = network.tier_bytes(Tier::Cloud);
        metrics.wall_clock_seconds = network.estimate_seconds(log);
        metrics.aggregation_discrepancy = discrepancy;
        history.rounds.push_back(metrics);
    }

    TrainingHistory<T> finish(AdapterSet<T> adapters) {
        history.final_adapters = std::move(adapters);
        history.frozen = model.frozen;
        history.log = network.log();
        return std::move(history);
    }
};

} // namespace

template <typename T>
TrainingHistory<T> train_centralized(const RunConfig& cfg, const Experiment& exp) {
    BaselineRun<T> run(cfg, exp, "centralized");
    std::vector<std::size_t> pool;
    for (auto n : exp.topology.users_in_order())
        pool.insert(pool.end(), exp.plan.shards[n].begin(), exp.plan.shards[n].end());
    require(!pool.empty(), ErrorKind::Config, "training set is empty");
    const auto whole = whole_model(run.model.frozen);
    AdapterSet<T> adapters = run.model.adapters;
    for (std::uint32_t t = 1; t <= cfg.rounds; ++t) {
        auto momentum = fresh_momentum(adapters);
        double loss_sum = 0.0;
        for (std::uint32_t k = 1; k <= cfg.local_epochs; ++k) {
            Rng rng = minibatch_stream(cfg.seed, 0, 0, t, k);
            const auto batch = sample_minibatch(pool, cfg.batch, rng);
            const double loss = train_step(whole, adapters, momentum, exp.data.train, batch, cfg, t);
            run.history.steps.push_back(StepRecord{t, k, 0, 0, loss});
            loss_sum += loss;
        }
        run.finish_round(t, adapters, MessageLog{}, loss_sum, cfg.local_epochs, 0.0);
    }
    return run.finish(std::move(adapters));
}

template <typename T>
TrainingHistory<T> train_fl_baseline(const RunConfig& cfg, const Experiment& exp) {
    BaselineRun<T> run(cfg, exp, "fl");
    const auto whole = whole_model(run.model.frozen);
    const auto users = run.active_users();
    AdapterSet<T> global = run.model.adapters;
    if (cfg.rounds > 0) {
        MessageLog log;
        Channel<T> ch(log);
        for (auto n : users) ch.transmit(Tier::Cloud, Tier::User, distribution(whole, exp.topology.edge_of(n), n));
        run.history.distribution_bytes = log.total_bytes();
        run.network.commit(log);
    }
    for (std::uint32_t t = 1; t <= cfg.rounds; ++t) {
        MessageLog log;
        Channel<T> ch(log);
        std::vector<ContributorKey> keys;
        std::vector<AdapterSet<T>> uploads;
        std::vector<std::size_t> sizes;
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (auto n : users) {
            const std::uint32_t m = exp.topology.edge_of(n);
            const auto& shard = exp.plan.shards[n];
            BroadcastMsg<T> bcast{{t, 0, m, n}, Tier::User, 0, global};
            AdapterSet<T> local = ch.transmit(Tier::Cloud, Tier::User, bcast).adapters;
            auto momentum = fresh_momentum(local);
            for (std::uint32_t k = 1; k <= cfg.local_epochs; ++k) {
                Rng rng = minibatch_stream(cfg.seed, m, n, t, k);
                const auto batch = sample_minibatch(shard, cfg.batch, rng);
                const double loss = train_step(whole, local, momentum, exp.data.train, batch, cfg, t);
                run.history.steps.push_back(StepRecord{t, k, m, n, loss});
                loss_sum += loss;
                ++steps;
            }
            AdapterUploadMsg<T> up{{t, 0, m, n}, Tier::User, static_cast<std::uint32_t>(shard.size()), std::move(local)};
            auto got = ch.transmit(Tier::User, Tier::Cloud, up);
            keys.push_back({m, n});
            sizes.push_back(got.data_size);
            uploads.push_back(std::move(got.adapters));
        }
        double discrepancy = 0.0;
        global = fedavg_sets(keys, uploads, sizes, &discrepancy);
        run.finish_round(t, global, log, loss_sum, steps, discrepancy);
    }
    return run.finish(std::move(global));
}

template <typename T>
TrainingHistory<T> train_sl_baseline(const RunConfig& cfg, const Experiment& exp) {
    BaselineRun<T> run(cfg, exp, "sl");
    const auto whole = whole_model(run.model.frozen);
    const Segment<T> user_seg{run.model.frozen, 0, 1};
    const Segment<T> server_seg{run.model.frozen, 1, run.model.layer_count()};
    const auto users = run.active_users();
    AdapterSet<T> user_global = slice_adapters(run.model.adapters, user_seg);
    AdapterSet<T> server = slice_adapters(run.model.adapters, server_seg);

    std::vector<UserNode<T>> nodes;
    for (std::size_t n = 0; n < exp.topology.user_count(); ++n)
        nodes.emplace_back(exp.topology.edge_of(n), static_cast<std::uint32_t>(n), user_seg, exp.data.train,
                           exp.plan.shards[n], cfg.seed);

    if (cfg.rounds > 0) {
        MessageLog log;
        Channel<T> ch(log);
        for (auto n : users) ch.transmit(Tier::Cloud, Tier::User, distribution(user_seg, exp.topology.edge_of(n), n));
        run.history.distribution_bytes = log.total_bytes();
        run.network.commit(log);
    }
    for (std::uint32_t t = 1; t <= cfg.rounds; ++t) {
        MessageLog log;
        Channel<T> ch(log);
        const SgdParams sgd_user{decayed_learning_rate(cfg.lr_user, cfg.lr_decay, t), cfg.momentum};
        auto server_momentum = fresh_momentum(server);
        std::vector<ContributorKey> keys;
        std::vector<AdapterSet<T>> uploads;
        std::vector<std::size_t> sizes;
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (auto n : users) {
            auto& user = nodes[n];
            const std::uint32_t m = user.edge();
            BroadcastMsg<T> bcast{{t, 0, m, n}, Tier::User, 0, user_global};
            user.begin_round(t, ch.transmit(Tier::Cloud, Tier::User, bcast).adapters, sgd_user);
            for (std::uint32_t k = 1; k <= cfg.local_epochs; ++k) {
                const auto act = ch.transmit(Tier::User, Tier::Cloud, user.step(k, cfg.batch));
                auto fwd = segment_forward(server_seg, std::span<const LoraAdapter<T>>(server), act.tensor);
                const auto ce = softmax_cross_entropy(fwd.output, std::span<const std::uint32_t>(act.labels));
                auto back = segment_backward(fwd.cache, ce.dlogits);
                step_layers(server, server_momentum, back.grads, cfg, t);
                run.history.steps.push_back(StepRecord{t, k, m, n, ce.loss});
                loss_sum += ce.loss;
                ++steps;
                user.apply_gradient(ch.transmit(Tier::Cloud, Tier::User, GradientMsg<T>{act.header, std::move(back.downstream)}));
            }
            auto got = ch.transmit(Tier::User, Tier::Cloud, user.upload());
            keys.push_back({m, n});
            sizes.push_back(got.data_size);
            uploads.push_back(std::move(got.adapters));
        }
        double discrepancy = 0.0;
        user_global = fedavg_sets(keys, uploads, sizes, &discrepancy);
        AdapterSet<T> all = user_global;
        all.insert(all.end(), server.begin(), server.end());
        run.finish_round(t, all, log, loss_sum, steps, discrepancy);
    }
    AdapterSet<T> all = user_global;
    all.insert(all.end(), server.begin(), server.end());
    return run.finish(std::move(all));
}

template <typename T>
TrainingHistory<T> train_scheme(Scheme scheme, const RunConfig& cfg, const Experiment& experiment) {
    switch (scheme) {
    case Scheme::SplitLlm: return run_training<T>(cfg, experiment);
    case Scheme::Fl: return train_fl_baseline<T>(cfg, experiment);
    case Scheme::Sl: return train_sl_baseline<T>(cfg, experiment);
    }
    fail(ErrorKind::Config, "unknown scheme");
}

#define SPLITLLM_INSTANTIATE(T)                                                                       \
    template TrainingHistory<T> train_centralized(const RunConfig&, const Experiment&);               \
    template TrainingHistory<T> train_fl_baseline(const RunConfig&, const Experiment&);               \
    template TrainingHistory<T> train_sl_baseline(const RunConfig&, const Experiment&);               \
    template TrainingHistory<T> train_scheme(Scheme, const RunConfig&, const Experiment&);
SPLITLLM_INSTANTIATE(float)
SPLITLLM_INSTANTIATE(double)
#undef SPLITLLM_INSTANTIATE

const ComparisonRow* Comparison::find(const std::string& scheme) const noexcept {
    for (const auto& r : rows)
        if (r.scheme == scheme) return &r;
    return nullptr;
}

std::string Comparison::to_csv() const {
    std::string out = "scheme,acc_iid,acc_noniid,user_comm_bytes,mem_user,mem_edge,mem_cloud\n";
    char line[256];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%s,%.4f,%.4f,%llu,%llu,%llu,%llu\n", r.scheme.c_str(), r.acc_iid,
                      r.acc_noniid, static_cast<unsigned long long>(r.user_comm_bytes),
                      static_cast<unsigned long long>(r.memory.user.total()),
                      static_cast<unsigned long long>(r.memory.edge.total()),
                      static_cast<unsigned long long>(r.memory.cloud.total()));
        out += line;
    }
    return out;
}

std::string Comparison::to_json() const {
    nlohmann::ordered_json j;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json row;
        row["scheme"] = r.scheme;
        row["acc_iid"] = r.acc_iid;
        row["acc_noniid"] = r.acc_noniid;
        row["user_comm_bytes"] = r.user_comm_bytes;
        row["mem_user"] = r.memory.user.total();
        row["mem_edge"] = r.memory.edge.total();
        row["mem_cloud"] = r.memory.cloud.total();
        row["user_activation_bytes"] = r.user_activation_bytes;
        j["rows"].push_back(row);
    }
    if (peak_memory_reduction) j["peak_memory_reduction_vs_fl"] = *peak_memory_reduction;
    return j.dump(2) + "\n";
}

namespace {

template <typename T>
Comparison compare_impl(const RunConfig& cfg, const std::vector<std::string>& schemes) {
    require(!schemes.empty(), ErrorKind::Config, "schemes: list is empty");
    std::vector<Scheme> parsed;
    for (const auto& s : schemes) parsed.push_back(parse_scheme(s));
    const Experiment iid = prepare_experiment(cfg, PartitionKind::Iid);
    const Experiment noniid = prepare_experiment(cfg, PartitionKind::Dirichlet);
    Comparison out;
    for (auto scheme : parsed) {
        ComparisonRow row;
        row.scheme = to_string(scheme);
        const auto h_iid = train_scheme<T>(scheme, cfg, iid);
        const auto h_non = train_scheme<T>(scheme, cfg, noniid);
        row.acc_iid = h_iid.best_accuracy();
        row.acc_noniid = h_non.best_accuracy();
        row.user_comm_bytes = h_iid.user_comm_bytes();
        row.user_activation_bytes = h_iid.user_activation_bytes();
        row.memory = memory_estimate(cfg, iid.shape, scheme);
        out.rows.push_back(std::move(row));
    }
    const auto* fl = out.find("fl");
    const auto* split = out.find("splitllm");
    if (fl && split && fl->memory.user.total() > 0) {
        const auto peak = std::max({split->memory.user.total(), split->memory.edge.total(), split->memory.cloud.total()});
        const double fl_user = static_cast<double>(fl->memory.user.total());
        out.peak_memory_reduction = (fl_user - static_cast<double>(peak)) / fl_user;
    }
    return out;
}

} // namespace

Comparison compare(const RunConfig& cfg, const std::vector<std::string>& schemes) {
    validate(cfg);
    return cfg.precision == Precision::F32 ? compare_impl<float>(cfg, schemes) : compare_impl<double>(cfg, schemes);
}

} // namespace splitllm
