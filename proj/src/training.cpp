#include "splitllm/training.hpp"

#include "splitllm/aggregation.hpp"
#include "splitllm/metrics.hpp"
#include "splitllm/nodes.hpp"

#include <algorithm>
#include <exception>
#include <numeric>
#include <optional>
#include <thread>

namespace splitllm {

template <typename T>
double TrainingHistory<T>::best_accuracy() const noexcept {
    double best = 0.0;
    for (const auto& r : rounds) best = std::max(best, r.test_accuracy);
    return best;
}

template <typename T>
std::uint64_t TrainingHistory<T>::user_comm_bytes() const noexcept {
    std::uint64_t total = 0;
    for (const auto& rec : log.records())
        if (rec.tag != MessageTag::ModelDistribution && (rec.src == Tier::User || rec.dst == Tier::User))
            total += rec.bytes;
    return total;
}

template <typename T>
std::uint64_t TrainingHistory<T>::user_activation_bytes() const noexcept {
    std::uint64_t total = 0;
    for (const auto& rec : log.records())
        if ((rec.tag == MessageTag::Activation || rec.tag == MessageTag::Gradient) &&
            (rec.src == Tier::User || rec.dst == Tier::User))
            total += rec.bytes;
    return total;
}

template struct TrainingHistory<float>;
template struct TrainingHistory<double>;

Experiment prepare_experiment(const RunConfig& cfg) { return prepare_experiment(cfg, cfg.partition); }

Experiment prepare_experiment(const RunConfig& cfg, PartitionKind partition) {
    validate(cfg);
    DataSplit data;
    if (cfg.data == DataSource::Blobs) {
        data = make_blob_fixture(
            BlobSpec{cfg.classes, cfg.blob_dim, cfg.blob_train_per_class, cfg.blob_test_per_class, cfg.blob_spread},
            cfg.seed);
    } else {
        data.train = load_table(cfg.train_path, cfg.classes);
        data.test = load_table(cfg.test_path, data.train.classes);
        require(data.test.dim() == data.train.dim(), ErrorKind::Data,
                "test_path: feature dim " + std::to_string(data.test.dim()) + " differs from train dim " +
                    std::to_string(data.train.dim()));
    }
    Topology topology(cfg.edges, cfg.users, cfg.assignment);
    Rng rng = make_stream(cfg.seed, StreamPurpose::Partition);
    PartitionPlan plan = partition == PartitionKind::Iid ? partition_iid(data.train, topology, rng)
                                                         : partition_dirichlet(data.train, topology, cfg.beta, rng);
    ModelShape shape = model_shape(cfg, data.train.dim(), data.train.classes);
    return Experiment{std::move(data), std::move(topology), std::move(plan), std::move(shape)};
}

std::vector<std::size_t> sample_minibatch(std::span<const std::size_t> shard, std::size_t batch, Rng& rng) {
    std::vector<std::size_t> pool(shard.begin(), shard.end());
    const std::size_t take = std::min(batch, pool.size());
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(take);
    return pool;
}

Rng minibatch_stream(std::uint64_t seed, std::uint32_t m, std::uint32_t n, std::uint32_t t, std::uint32_t k) {
    return make_stream(seed, StreamPurpose::MiniBatch, m, n, t, k);
}

double layer_learning_rate(const RunConfig& cfg, std::size_t layer, std::size_t round) {
    const double base = layer == 1 ? cfg.lr_user : layer <= cfg.cut ? cfg.lr_edge : cfg.lr_cloud;
    return decayed_learning_rate(base, cfg.lr_decay, round);
}

namespace {

template <typename T>
struct EdgeOutcome {
    MessageLog log;
    std::vector<StepRecord> steps;
    std::vector<AdapterUploadMsg<T>> user_uploads;
    std::optional<AdapterUploadMsg<T>> edge_upload;
};

template <typename T>
class SplitLlmRun {
public:
    SplitLlmRun(const RunConfig& cfg, const Experiment& exp)
        : cfg_(cfg), exp_(exp), model_(build_model<T>(exp.shape, cfg.seed)),
          parts_(partition_model(model_.frozen, cfg.cut)), network_(cfg.links),
          cloud_(parts_.cloud, exp.topology.edge_count(), cfg.cloud_replicas == CloudReplicaPolicy::Shared) {
        require(exp.plan.shards.size() == exp.topology.user_count(), ErrorKind::Config,
                "partition plan does not match the topology");
        for (std::size_t m = 0; m < exp.topology.edge_count(); ++m)
            edges_.emplace_back(static_cast<std::uint32_t>(m), parts_.edge);
        for (std::size_t n = 0; n < exp.topology.user_count(); ++n) {
            users_.emplace_back(exp.topology.edge_of(n), static_cast<std::uint32_t>(n), parts_.user, exp.data.train,
                                exp.plan.shards[n], cfg.seed);
            if (exp.plan.shards[n].empty())
                history_.warnings.push_back("user " + Topology::key(exp.topology.edge_of(n),
                                                                    static_cast<std::uint32_t>(n)) +
                                            " has no local data; skipped with aggregation weight 0");
        }
        history_.scheme = "splitllm";
        history_.initial_adapters = model_.adapters;
        current_ = model_.adapters;
    }

    TrainingHistory<T> run() {
        if (cfg_.rounds > 0) distribute();
        for (std::size_t t = 1; t <= cfg_.rounds; ++t) run_round(static_cast<std::uint32_t>(t));
        history_.final_adapters = current_;
        history_.frozen = model_.frozen;
        history_.log = network_.log();
        return std::move(history_);
    }

private:
    std::vector<std::uint32_t> active_users(std::size_t m) const {
        std::vector<std::uint32_t> out;
        for (auto n : exp_.topology.users_of(m))
            if (users_[n].data_size() > 0) out.push_back(n);
        return out;
    }

    ModelDistributionMsg<T> distribution(const Segment<T>& seg, Tier tier, std::uint32_t m, std::uint32_t n) const {
        ModelDistributionMsg<T> msg;
        msg.header = MessageHeader{0, 0, m, n};
        msg.tier = tier;
        msg.first_layer = seg.first_index();
        for (std::size_t i = 0; i < seg.size(); ++i) msg.layers.push_back(seg.layer(i));
        return msg;
    }

    /// Frozen layers travel once: edge and relayed user segments to each edge,
    /// then the user segment to each participating user.
    void distribute() {
        MessageLog log;
        Channel<T> ch(log);
        for (std::size_t m = 0; m < exp_.topology.edge_count(); ++m) {
            const auto mm = static_cast<std::uint32_t>(m);
            ch.transmit(Tier::Cloud, Tier::Edge, distribution(parts_.edge, Tier::Edge, mm, 0));
            const auto users = active_users(m);
            if (users.empty()) continue;
            const auto relay = ch.transmit(Tier::Cloud, Tier::Edge, distribution(parts_.user, Tier::User, mm, 0));
            for (auto n : users) {
                auto msg = relay;
                msg.header.n = n;
                ch.transmit(Tier::Edge, Tier::User, msg);
            }
        }
        history_.distribution_bytes = log.total_bytes();
        network_.commit(log);
    }

    EdgeOutcome<T> run_edge(std::uint32_t m, std::uint32_t t) {
        EdgeOutcome<T> out;
        const auto users = active_users(m);
        if (users.empty()) return out;
        Channel<T> ch(out.log);
        const SgdParams sgd_user{decayed_learning_rate(cfg_.lr_user, cfg_.lr_decay, t), cfg_.momentum};
        const SgdParams sgd_edge{decayed_learning_rate(cfg_.lr_edge, cfg_.lr_decay, t), cfg_.momentum};

        BroadcastMsg<T> to_edge{{t, 0, m, 0}, Tier::Edge, 0, slice_adapters(current_, parts_.edge)};
        edges_[m].begin_round(t, ch.transmit(Tier::Cloud, Tier::Edge, to_edge).adapters, sgd_edge);
        BroadcastMsg<T> for_users{{t, 0, m, 0}, Tier::User, 0, slice_adapters(current_, parts_.user)};
        const auto relay = ch.transmit(Tier::Cloud, Tier::Edge, for_users);

        std::uint32_t edge_data = 0;
        for (auto n : users) {
            auto& user = users_[n];
            auto bcast = relay;
            bcast.header.n = n;
            user.begin_round(t, ch.transmit(Tier::Edge, Tier::User, bcast).adapters, sgd_user);
            for (std::uint32_t k = 1; k <= cfg_.local_epochs; ++k) {
                const auto ru = ch.transmit(Tier::User, Tier::Edge, user.step(k, cfg_.batch));
                const auto re = ch.transmit(Tier::Edge, Tier::Cloud, edges_[m].forward(ru));
                auto result = cloud_.step(re);
                out.steps.push_back(StepRecord{t, k, m, n, result.loss});
                const auto ge = ch.transmit(Tier::Cloud, Tier::Edge, result.gradient);
                user.apply_gradient(ch.transmit(Tier::Edge, Tier::User, edges_[m].backward(ge)));
            }
            const auto up = ch.transmit(Tier::User, Tier::Edge, user.upload());
            edge_data += up.data_size;
            out.user_uploads.push_back(ch.transmit(Tier::Edge, Tier::Cloud, up));
        }
        out.edge_upload = ch.transmit(Tier::Edge, Tier::Cloud, edges_[m].upload(edge_data));
        return out;
    }

    std::vector<EdgeOutcome<T>> run_edges(std::uint32_t t) {
        const std::size_t M = exp_.topology.edge_count();
        std::vector<EdgeOutcome<T>> outcomes(M);
        const bool concurrent = cfg_.executor == Executor::Concurrent && !cloud_.shared() && M > 1;
        if (!concurrent) {
            for (std::size_t m = 0; m < M; ++m) outcomes[m] = run_edge(static_cast<std::uint32_t>(m), t);
            return outcomes;
        }
        std::vector<std::exception_ptr> errors(M);
        std::vector<std::thread> workers;
        workers.reserve(M);
        for (std::size_t m = 0; m < M; ++m) {
            workers.emplace_back([&, m] {
                try {
                    outcomes[m] = run_edge(static_cast<std::uint32_t>(m), t);
                } catch (...) {
                    errors[m] = std::current_exception();
                }
            });
        }
        for (auto& w : workers) w.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        return outcomes;
    }

    void run_round(std::uint32_t t) {
        const SgdParams sgd_cloud{decayed_learning_rate(cfg_.lr_cloud, cfg_.lr_decay, t), cfg_.momentum};
        cloud_.begin_round(t, slice_adapters(current_, parts_.cloud), sgd_cloud);

        auto outcomes = run_edges(t);

        // Barrier: merge per-edge traces in ascending m, then aggregate.
        MessageLog round_log;
        double wall = 0.0;
        RoundMetrics metrics;
        metrics.round = t;
        double loss_sum = 0.0;
        std::size_t step_count = 0;
        std::vector<std::size_t> sizes;
        std::vector<std::size_t> groups;
        for (std::size_t m = 0; m < outcomes.size(); ++m) {
            auto& o = outcomes[m];
            round_log.append(o.log);
            wall = std::max(wall, network_.estimate_seconds(o.log));
            for (const auto& s : o.steps) {
                loss_sum += s.loss;
                ++step_count;
                history_.steps.push_back(s);
            }
            for (const auto& up : o.user_uploads) {
                sizes.push_back(up.data_size);
                groups.push_back(m);
            }
        }
        network_.commit(round_log);

        const auto weights = compute_weights(sizes);
        const auto edge_weights = group_weights(weights, groups, outcomes.size());
        AdapterSet<T> next;
        double discrepancy = 0.0;
        auto merge = [&](WeightedAdapterSet<T>& set) {
            set.validate();
            discrepancy = std::max(discrepancy, product_discrepancy(set));
            next.push_back(fedavg_adapters(set));
        };

        for (std::size_t i = 0; i < parts_.user.size(); ++i) {
            WeightedAdapterSet<T> set{parts_.user.first_index() + static_cast<std::uint32_t>(i), {}};
            std::size_t j = 0;
            for (const auto& o : outcomes)
                for (const auto& up : o.user_uploads)
                    set.entries.push_back({{up.header.m, up.header.n}, up.adapters[i], weights[j++]});
            merge(set);
        }
        for (std::size_t i = 0; i < parts_.edge.size(); ++i) {
            WeightedAdapterSet<T> set{parts_.edge.first_index() + static_cast<std::uint32_t>(i), {}};
            for (std::size_t m = 0; m < outcomes.size(); ++m)
                if (outcomes[m].edge_upload)
                    set.entries.push_back({{static_cast<std::uint32_t>(m), 0}, outcomes[m].edge_upload->adapters[i],
                                           edge_weights[m]});
            merge(set);
        }
        for (std::size_t i = 0; i < parts_.cloud.size(); ++i) {
            WeightedAdapterSet<T> set{parts_.cloud.first_index() + static_cast<std::uint32_t>(i), {}};
            if (cloud_.shared()) {
                set.entries.push_back({{0, 0}, cloud_.replica(0)[i], 1.0});
            } else {
                for (std::size_t m = 0; m < outcomes.size(); ++m)
                    if (outcomes[m].edge_upload)
                        set.entries.push_back({{static_cast<std::uint32_t>(m), 0}, cloud_.replica(m)[i], edge_weights[m]});
            }
            merge(set);
        }
        current_ = std::move(next);

        const auto whole = whole_model(model_.frozen);
        metrics.train_loss = evaluate(whole, current_, exp_.data.train).loss;
        const auto test = evaluate_split(parts_, current_, exp_.data.test);
        metrics.test_loss = test.loss;
        metrics.test_accuracy = test.accuracy;
        metrics.mean_step_loss = step_count ? loss_sum / static_cast<double>(step_count) : 0.0;
        metrics.user_bytes = network_.tier_bytes(Tier::User);
        metrics.edge_bytes = network_.tier_bytes(Tier::Edge);
        metrics.cloud_bytes = network_.tier_bytes(Tier::Cloud);
        metrics.wall_clock_seconds = wall;
        metrics.aggregation_discrepancy = discrepancy;
        history_.rounds.push_back(metrics);
    }

    const RunConfig& cfg_;
    const Experiment& exp_;
    LayeredModel<T> model_;
    ModelPartition<T> parts_;
    SimNetwork network_;
    std::vector<UserNode<T>> users_;
    std::vector<EdgeNode<T>> edges_;
    CloudNode<T> cloud_;
    AdapterSet<T> current_;
    TrainingHistory<T> history_;
};

} // namespace

template <typename T>
TrainingHistory<T> run_training(const RunConfig& cfg, const Experiment& experiment) {
    validate(cfg);
    return SplitLlmRun<T>(cfg, experiment).run();
}

template <typename T>
TrainingHistory<T> run_training(const RunConfig& cfg) {
    const Experiment experiment = prepare_experiment(cfg);
    return run_training<T>(cfg, experiment);
}

template TrainingHistory<float> run_training(const RunConfig&, const Experiment&);
template TrainingHistory<double> run_training(const RunConfig&, const Experiment&);
template TrainingHistory<float> run_training(const RunConfig&);
template TrainingHistory<double> run_training(const RunConfig&);

} // namespace splitllm
