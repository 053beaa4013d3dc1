#include "splitllm/topology.hpp"

#include "splitllm/error.hpp"

namespace splitllm {

AssignmentPolicy parse_assignment(const std::string& name) {
    if (name == "block") return AssignmentPolicy::Block;
    if (name == "round_robin") return AssignmentPolicy::RoundRobin;
    fail(ErrorKind::Config, "unknown assignment policy '" + name + "' (expected block or round_robin)");
}

const char* to_string(AssignmentPolicy policy) noexcept {
    return policy == AssignmentPolicy::Block ? "block" : "round_robin";
}

Topology::Topology(std::size_t edges, std::size_t users, AssignmentPolicy policy) : edges_(edges) {
    require(edges >= 1, ErrorKind::Config, "need at least one edge server (M >= 1)");
    require(users >= 1, ErrorKind::Config, "need at least one user (N >= 1)");
    require(edges <= users, ErrorKind::Config,
            "M = " + std::to_string(edges) + " edge servers exceeds N = " + std::to_string(users) + " users");
    edge_of_.resize(users);
    users_of_.resize(edges);
    for (std::size_t n = 0; n < users; ++n) {
        const std::size_t m = policy == AssignmentPolicy::Block ? n * edges / users : n % edges;
        edge_of_[n] = static_cast<std::uint32_t>(m);
        users_of_[m].push_back(static_cast<std::uint32_t>(n));
    }
}

std::vector<std::uint32_t> Topology::users_in_order() const {
    std::vector<std::uint32_t> order;
    order.reserve(user_count());
    for (const auto& users : users_of_) order.insert(order.end(), users.begin(), users.end());
    return order;
}

} // namespace splitllm
