#include "splitllm/nodes.hpp"

#include "splitllm/training.hpp"

namespace splitllm {

namespace {

template <typename T>
std::vector<MomentumBuffers<T>> zero_momentum(const AdapterSet<T>& adapters) {
    std::vector<MomentumBuffers<T>> out;
    out.reserve(adapters.size());
    for (const auto& a : adapters) out.push_back(MomentumBuffers<T>::zeros_like(a));
    return out;
}

template <typename T>
void apply_grads(AdapterSet<T>& adapters, std::vector<MomentumBuffers<T>>& momentum,
                 const std::vector<AdapterGrad<T>>& grads, const SgdParams& sgd) {
    require(grads.size() == adapters.size(), ErrorKind::Shape, "gradient count does not match adapter count");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        require(grads[i].layer_index == adapters[i].layer_index, ErrorKind::Shape, "gradient layer mismatch");
        sgd_step(adapters[i], grads[i].ga, grads[i].gb, momentum[i], sgd);
    }
}

template <typename T>
void check_segment_adapters(const Segment<T>& segment, const AdapterSet<T>& adapters, const char* who) {
    require(adapters.size() == segment.size(), ErrorKind::Protocol,
            std::string(who) + ": broadcast carries " + std::to_string(adapters.size()) + " adapters for a " +
                std::to_string(segment.size()) + "-layer segment");
    for (std::size_t i = 0; i < adapters.size(); ++i)
        require(adapters[i].layer_index == segment.first_index() + i, ErrorKind::Protocol,
                std::string(who) + ": broadcast adapter for wrong layer");
}

std::string describe(const MessageHeader& h) {
    return "(t=" + std::to_string(h.t) + ", k=" + std::to_string(h.k) + ", m=" + std::to_string(h.m) +
           ", n=" + std::to_string(h.n) + ")";
}

} // namespace

template <typename T>
UserNode<T>::UserNode(std::uint32_t m, std::uint32_t n, Segment<T> segment, const Dataset& train,
                      std::vector<std::size_t> shard, std::uint64_t seed)
    : m_(m), n_(n), segment_(std::move(segment)), train_(&train), shard_(std::move(shard)), seed_(seed) {}

template <typename T>
void UserNode<T>::begin_round(std::uint32_t t, AdapterSet<T> adapters, const SgdParams& sgd) {
    require(!pending_, ErrorKind::Protocol, "user " + std::to_string(n_) + " starts a round with a gradient pending");
    check_segment_adapters(segment_, adapters, "user");
    t_ = t;
    adapters_ = std::move(adapters);
    momentum_ = zero_momentum(adapters_);
    sgd_ = sgd;
}

template <typename T>
ActivationMsg<T> UserNode<T>::step(std::uint32_t k, std::size_t batch) {
    require(t_ > 0, ErrorKind::Protocol, "user " + std::to_string(n_) + " has not received this round's adapters");
    require(!pending_, ErrorKind::Protocol,
            "user " + std::to_string(n_) + " starts epoch " + std::to_string(k) + " before its previous gradient");
    require(!shard_.empty(), ErrorKind::Data, "user " + std::to_string(n_) + " has no local data");
    require(train_->dim() == segment_.in_dim(), ErrorKind::Data,
            "user " + std::to_string(n_) + ": feature dim " + std::to_string(train_->dim()) +
                " does not match the model input " + std::to_string(segment_.in_dim()));
    Rng rng = minibatch_stream(seed_, m_, n_, t_, k);
    last_batch_ = sample_minibatch(shard_, batch, rng);
    auto fwd = segment_forward(segment_, std::span<const LoraAdapter<T>>(adapters_),
                               train_->gather_features<T>(last_batch_));
    ActivationMsg<T> msg;
    msg.header = MessageHeader{t_, k, m_, n_};
    msg.labels = train_->gather_labels(last_batch_);
    pending_ = Pending{msg.header, std::move(fwd.cache), fwd.output.rows(), fwd.output.cols()};
    msg.tensor = std::move(fwd.output);
    return msg;
}

template <typename T>
void UserNode<T>::apply_gradient(const GradientMsg<T>& msg) {
    require(pending_.has_value(), ErrorKind::Protocol,
            "user " + std::to_string(n_) + " received gradient " + describe(msg.header) + " with no cached forward");
    require(msg.header == pending_->header, ErrorKind::Protocol,
            "user " + std::to_string(n_) + " expected gradient " + describe(pending_->header) + ", got " +
                describe(msg.header));
    require(msg.tensor.rows() == pending_->rows && msg.tensor.cols() == pending_->cols, ErrorKind::Protocol,
            "user gradient shape " + msg.tensor.shape_string() + " does not match its activation");
    auto back = segment_backward(pending_->cache, msg.tensor);
    pending_.reset();
    apply_grads(adapters_, momentum_, back.grads, sgd_);
}

template <typename T>
AdapterUploadMsg<T> UserNode<T>::upload() const {
    require(!pending_, ErrorKind::Protocol, "user " + std::to_string(n_) + " uploads with a gradient pending");
    AdapterUploadMsg<T> msg;
    msg.header = MessageHeader{t_, 0, m_, n_};
    msg.tier = Tier::User;
    msg.data_size = static_cast<std::uint32_t>(shard_.size());
    msg.adapters = adapters_;
    return msg;
}

template <typename T>
EdgeNode<T>::EdgeNode(std::uint32_t m, Segment<T> segment) : m_(m), segment_(std::move(segment)) {}

template <typename T>
void EdgeNode<T>::begin_round(std::uint32_t t, AdapterSet<T> adapters, const SgdParams& sgd) {
    require(!pending_, ErrorKind::Protocol, "edge " + std::to_string(m_) + " starts a round with a gradient pending");
    check_segment_adapters(segment_, adapters, "edge");
    t_ = t;
    adapters_ = std::move(adapters);
    momentum_ = zero_momentum(adapters_);
    sgd_ = sgd;
}

template <typename T>
ActivationMsg<T> EdgeNode<T>::forward(const ActivationMsg<T>& from_user) {
    const auto& h = from_user.header;
    require(h.t == t_ && h.m == m_, ErrorKind::Protocol,
            "edge " + std::to_string(m_) + " at round " + std::to_string(t_) + " got out-of-order activation " +
                describe(h));
    require(!pending_, ErrorKind::Protocol,
            "edge " + std::to_string(m_) + " got activation " + describe(h) + " while " + describe(pending_->header) +
                " is still in flight");
    require(from_user.tensor.cols() == segment_.in_dim(), ErrorKind::Protocol,
            "edge " + std::to_string(m_) + ": activation width " + std::to_string(from_user.tensor.cols()) +
                " does not match its segment");
    auto fwd = segment_forward(segment_, std::span<const LoraAdapter<T>>(adapters_), from_user.tensor);
    ActivationMsg<T> out;
    out.header = h;
    out.labels = from_user.labels;
    pending_ = Pending{h, std::move(fwd.cache), fwd.output.rows(), fwd.output.cols()};
    out.tensor = std::move(fwd.output);
    return out;
}

template <typename T>
GradientMsg<T> EdgeNode<T>::backward(const GradientMsg<T>& from_cloud) {
    require(pending_.has_value(), ErrorKind::Protocol,
            "edge " + std::to_string(m_) + " got gradient " + describe(from_cloud.header) + " with no cached forward");
    require(from_cloud.header == pending_->header, ErrorKind::Protocol,
            "edge " + std::to_string(m_) + " expected gradient " + describe(pending_->header) + ", got " +
                describe(from_cloud.header));
    require(from_cloud.tensor.rows() == pending_->rows && from_cloud.tensor.cols() == pending_->cols,
            ErrorKind::Protocol, "edge gradient shape does not match R^e");
    auto back = segment_backward(pending_->cache, from_cloud.tensor);
    GradientMsg<T> out;
    out.header = pending_->header;
    pending_.reset();
    apply_grads(adapters_, momentum_, back.grads, sgd_);
    out.tensor = std::move(back.downstream);
    return out;
}

template <typename T>
AdapterUploadMsg<T> EdgeNode<T>::upload(std::uint32_t data_size) const {
    require(!pending_, ErrorKind::Protocol, "edge " + std::to_string(m_) + " uploads with a gradient pending");
    AdapterUploadMsg<T> msg;
    msg.header = MessageHeader{t_, 0, m_, 0};
    msg.tier = Tier::Edge;
    msg.data_size = data_size;
    msg.adapters = adapters_;
    return msg;
}

template <typename T>
CloudNode<T>::CloudNode(Segment<T> segment, std::size_t edges, bool shared_replica)
    : segment_(std::move(segment)), shared_(shared_replica), replicas_(shared_replica ? 1 : edges) {}

template <typename T>
void CloudNode<T>::begin_round(std::uint32_t t, const AdapterSet<T>& adapters, const SgdParams& sgd) {
    check_segment_adapters(segment_, adapters, "cloud");
    t_ = t;
    sgd_ = sgd;
    for (auto& r : replicas_) {
        r.adapters = adapters;
        r.momentum = zero_momentum(adapters);
    }
}

template <typename T>
typename CloudNode<T>::StepResult CloudNode<T>::step(const ActivationMsg<T>& from_edge) {
    const auto& h = from_edge.header;
    require(h.t == t_, ErrorKind::Protocol, "cloud at round " + std::to_string(t_) + " got activation " + describe(h));
    require(h.m < (shared_ ? std::numeric_limits<std::uint32_t>::max() : replicas_.size()), ErrorKind::Protocol,
            "cloud has no replica for edge " + std::to_string(h.m));
    require(from_edge.tensor.cols() == segment_.in_dim(), ErrorKind::Protocol,
            "cloud: activation width does not match its segment");
    auto& replica = replicas_[replica_of(h.m)];
    auto fwd = segment_forward(segment_, std::span<const LoraAdapter<T>>(replica.adapters), from_edge.tensor);
    LossAndGrad<T> ce;
    try {
        ce = softmax_cross_entropy(fwd.output, std::span<const std::uint32_t>(from_edge.labels));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Input) fail(ErrorKind::Data, std::string("cloud: ") + e.what());
        throw;
    }
    auto back = segment_backward(fwd.cache, ce.dlogits);
    apply_grads(replica.adapters, replica.momentum, back.grads, sgd_);
    StepResult result;
    result.loss = ce.loss;
    result.gradient.header = h;
    result.gradient.tensor = std::move(back.downstream);
    return result;
}

template class UserNode<float>;
template class UserNode<double>;
template class EdgeNode<float>;
template class EdgeNode<double>;
template class CloudNode<float>;
template class CloudNode<double>;

} // namespace splitllm
