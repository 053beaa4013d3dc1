#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace splitllm {

enum class AssignmentPolicy { Block, RoundRobin };

AssignmentPolicy parse_assignment(const std::string& name);
const char* to_string(AssignmentPolicy policy) noexcept;

/// M edge servers and N users; every user belongs to exactly one edge.
/// Users carry a global id n in [0, N); edges an id m in [0, M).
class Topology {
public:
    Topology(std::size_t edges, std::size_t users, AssignmentPolicy policy = AssignmentPolicy::Block);

    std::size_t edge_count() const noexcept { return edges_; }
    std::size_t user_count() const noexcept { return edge_of_.size(); }
    std::uint32_t edge_of(std::size_t user) const { return edge_of_.at(user); }
    const std::vector<std::uint32_t>& users_of(std::size_t edge) const { return users_of_.at(edge); }

    /// All users sorted by (edge, user id): the canonical (m, n) order.
    std::vector<std::uint32_t> users_in_order() const;

    static std::string key(std::uint32_t m, std::uint32_t n) { return std::to_string(m) + ":" + std::to_string(n); }

private:
    std::size_t edges_;
    std::vector<std::uint32_t> edge_of_;
    std::vector<std::vector<std::uint32_t>> users_of_;
};

} // namespace splitllm
