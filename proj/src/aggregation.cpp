#include "splitllm/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace splitllm {

std::vector<double> compute_weights(std::span<const std::size_t> data_sizes) {
    require(!data_sizes.empty(), ErrorKind::Config, "no data sizes supplied for aggregation weights");
    const std::size_t total = std::accumulate(data_sizes.begin(), data_sizes.end(), std::size_t{0});
    require(total > 0, ErrorKind::Config, "all data sizes are zero; aggregation weights undefined");
    std::vector<double> w;
    w.reserve(data_sizes.size());
    for (std::size_t s : data_sizes) w.push_back(static_cast<double>(s) / static_cast<double>(total));
    return w;
}

std::vector<double> group_weights(std::span<const double> weights, std::span<const std::size_t> groups,
                                  std::size_t group_count) {
    require(weights.size() == groups.size(), ErrorKind::Shape, "group_weights: one group per weight required");
    std::vector<double> out(group_count, 0.0);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        require(groups[i] < group_count, ErrorKind::Config, "group index out of range");
        out[groups[i]] += weights[i];
    }
    return out;
}

template <typename T>
void WeightedAdapterSet<T>::validate() const {
    require(!entries.empty(), ErrorKind::Aggregation, "empty adapter set for layer " + std::to_string(layer_index));
    const auto& first = entries.front().adapter;
    double total = 0.0;
    for (const auto& e : entries) {
        require(e.adapter.layer_index == layer_index, ErrorKind::Aggregation,
                "adapter for layer " + std::to_string(e.adapter.layer_index) + " in the set of layer " +
                    std::to_string(layer_index));
        require(e.adapter.a.rows() == first.a.rows() && e.adapter.a.cols() == first.a.cols() &&
                    e.adapter.b.rows() == first.b.rows() && e.adapter.b.cols() == first.b.cols(),
                ErrorKind::Aggregation, "replica shapes differ for layer " + std::to_string(layer_index));
        require(e.weight >= 0.0 && e.weight <= 1.0, ErrorKind::Aggregation, "weight outside [0, 1]");
        total += e.weight;
    }
    require(std::abs(total - 1.0) <= 1e-12, ErrorKind::Aggregation,
            "weights for layer " + std::to_string(layer_index) + " sum to " + std::to_string(total));
}

namespace {

template <typename T>
struct Accumulator;
template <>
struct Accumulator<float> {
    using type = double;
};
template <>
struct Accumulator<double> {
    using type = long double;
};

template <typename T>
std::vector<const WeightedAdapter<T>*> ordered(const WeightedAdapterSet<T>& set) {
    std::vector<const WeightedAdapter<T>*> order;
    for (const auto& e : set.entries) order.push_back(&e);
    std::stable_sort(order.begin(), order.end(), [](auto* x, auto* y) { return x->key < y->key; });
    return order;
}

template <typename T, typename Get>
BasicMatrix<T> weighted_mean(const std::vector<const WeightedAdapter<T>*>& order, Get get) {
    using Acc = typename Accumulator<T>::type;
    const BasicMatrix<T>& shape = get(*order.front());
    std::vector<Acc> acc(shape.size(), Acc(0));
    for (const auto* e : order) {
        const Acc w = static_cast<Acc>(e->weight);
        auto v = get(*e).values();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * static_cast<Acc>(v[i]);
    }
    BasicMatrix<T> out(shape.rows(), shape.cols());
    for (std::size_t i = 0; i < acc.size(); ++i) out.values()[i] = static_cast<T>(acc[i]);
    return out;
}

} // namespace

template <typename T>
LoraAdapter<T> fedavg_adapters(const WeightedAdapterSet<T>& set) {
    set.validate();
    const auto order = ordered(set);
    LoraAdapter<T> out;
    out.layer_index = set.layer_index;
    out.init_std = order.front()->adapter.init_std;
    out.a = weighted_mean<T>(order, [](const WeightedAdapter<T>& e) -> const BasicMatrix<T>& { return e.adapter.a; });
    out.b = weighted_mean<T>(order, [](const WeightedAdapter<T>& e) -> const BasicMatrix<T>& { return e.adapter.b; });
    return out;
}

template <typename T>
double product_discrepancy(const WeightedAdapterSet<T>& set) {
    set.validate();
    const auto order = ordered(set);
    const auto& first = order.front()->adapter;
    Matrix64 mean_of_products(first.a.rows(), first.b.cols());
    Matrix64 mean_a(first.a.rows(), first.a.cols());
    Matrix64 mean_b(first.b.rows(), first.b.cols());
    for (const auto* e : order) {
        const Matrix64 a = e->adapter.a.template cast<double>();
        const Matrix64 b = e->adapter.b.template cast<double>();
        mean_of_products = add(mean_of_products, scaled(matmul(a, b), e->weight));
        mean_a = add(mean_a, scaled(a, e->weight));
        mean_b = add(mean_b, scaled(b, e->weight));
    }
    const Matrix64 product_of_means = matmul(mean_a, mean_b);
    double s = 0.0;
    for (std::size_t i = 0; i < product_of_means.size(); ++i) {
        const double d = mean_of_products.values()[i] - product_of_means.values()[i];
        s += d * d;
    }
    return std::sqrt(s);
}

template struct WeightedAdapterSet<float>;
template struct WeightedAdapterSet<double>;
template LoraAdapter<float> fedavg_adapters(const WeightedAdapterSet<float>&);
template LoraAdapter<double> fedavg_adapters(const WeightedAdapterSet<double>&);
template double product_discrepancy(const WeightedAdapterSet<float>&);
template double product_discrepancy(const WeightedAdapterSet<double>&);

} // namespace splitllm
