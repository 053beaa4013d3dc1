#include "splitllm/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

namespace splitllm {

void Dataset::validate() const {
    require(!labels.empty(), ErrorKind::Data, "dataset has no samples");
    require(features.rows() == labels.size(), ErrorKind::Data, "feature rows and label count differ");
    require(classes >= 1, ErrorKind::Data, "dataset class count must be positive");
    for (std::size_t i = 0; i < labels.size(); ++i)
        require(labels[i] < classes, ErrorKind::Data,
                "sample " + std::to_string(i) + " has label " + std::to_string(labels[i]) + " >= C = " +
                    std::to_string(classes));
}

template <typename T>
BasicMatrix<T> Dataset::gather_features(std::span<const std::size_t> indices) const {
    BasicMatrix<T> out(indices.size(), dim());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto src = features.row(indices[r]);
        for (std::size_t c = 0; c < src.size(); ++c) out(r, c) = static_cast<T>(src[c]);
    }
    return out;
}

template Matrix Dataset::gather_features<float>(std::span<const std::size_t>) const;
template Matrix64 Dataset::gather_features<double>(std::span<const std::size_t>) const;

std::vector<std::uint32_t> Dataset::gather_labels(std::span<const std::size_t> indices) const {
    std::vector<std::uint32_t> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(labels.at(i));
    return out;
}

Matrix blob_centers(std::size_t classes, std::size_t dim, Rng& rng) {
    require(classes >= 2, ErrorKind::Config, "blobs need at least 2 classes");
    require(dim >= 1, ErrorKind::Config, "blob dimension must be >= 1");
    return gaussian_matrix<float>(classes, dim, 0.0, 1.0, rng);
}

Dataset sample_blobs(const Matrix& centers, std::size_t per_class, double spread, Rng& rng) {
    require(per_class >= 1, ErrorKind::Config, "blobs need at least one sample per class");
    require(spread >= 0.0, ErrorKind::Config, "blob spread must be >= 0");
    const std::size_t classes = centers.rows(), dim = centers.cols();
    Dataset d;
    d.classes = classes;
    d.features = Matrix(classes * per_class, dim);
    d.labels.reserve(classes * per_class);
    std::size_t row = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t s = 0; s < per_class; ++s, ++row) {
            for (std::size_t j = 0; j < dim; ++j)
                d.features(row, j) = static_cast<float>(centers(c, j) + spread * rng.normal());
            d.labels.push_back(static_cast<std::uint32_t>(c));
        }
    }
    return d;
}

Dataset synth_blobs(std::size_t classes, std::size_t dim, std::size_t per_class, double spread, Rng& rng) {
    const Matrix centers = blob_centers(classes, dim, rng);
    return sample_blobs(centers, per_class, spread, rng);
}

DataSplit make_blob_fixture(const BlobSpec& spec, std::uint64_t seed) {
    Rng center_rng = make_stream(seed, StreamPurpose::BlobCenters);
    Rng train_rng = make_stream(seed, StreamPurpose::BlobTrain);
    Rng test_rng = make_stream(seed, StreamPurpose::BlobTest);
    const Matrix centers = blob_centers(spec.classes, spec.dim, center_rng);
    return {sample_blobs(centers, spec.train_per_class, spec.spread, train_rng),
            sample_blobs(centers, spec.test_per_class, spec.spread, test_rng)};
}

Dataset load_table(const std::filesystem::path& path, std::size_t classes) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open dataset '" + path.string() + "'");
    std::vector<float> values;
    std::vector<std::uint32_t> labels;
    std::size_t dim = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        const std::string where = path.string() + ":" + std::to_string(line_no);
        require(fields.size() >= 2, ErrorKind::Parse, where + ": expected features followed by a label");
        if (dim == 0) dim = fields.size() - 1;
        require(fields.size() - 1 == dim, ErrorKind::Parse,
                where + ": expected " + std::to_string(dim) + " features, found " + std::to_string(fields.size() - 1));
        for (std::size_t i = 0; i < dim; ++i) {
            const char* s = fields[i].c_str();
            char* end = nullptr;
            errno = 0;
            const float v = std::strtof(s, &end);
            while (end && (*end == ' ' || *end == '\t')) ++end;
            require(end != s && end && *end == '\0' && errno != ERANGE && std::isfinite(v), ErrorKind::Parse,
                    where + ": malformed feature '" + fields[i] + "'");
            values.push_back(v);
        }
        const char* s = fields.back().c_str();
        char* end = nullptr;
        errno = 0;
        const long label = std::strtol(s, &end, 10);
        while (end && (*end == ' ' || *end == '\t' || *end == '\r')) ++end;
        require(end != s && end && *end == '\0' && errno == 0 && label >= 0, ErrorKind::Parse,
                where + ": malformed label '" + fields.back() + "'");
        if (classes != 0)
            require(static_cast<std::size_t>(label) < classes, ErrorKind::Data,
                    where + ": label " + std::to_string(label) + " >= C = " + std::to_string(classes));
        labels.push_back(static_cast<std::uint32_t>(label));
    }
    require(!labels.empty(), ErrorKind::Data, "dataset '" + path.string() + "' contains no samples");
    Dataset d;
    d.classes = classes != 0 ? classes : *std::max_element(labels.begin(), labels.end()) + 1;
    d.features = Matrix(labels.size(), dim, std::move(values));
    d.labels = std::move(labels);
    d.validate();
    return d;
}

void write_table(const std::filesystem::path& path, const Dataset& data) {
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    char buf[32];
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (float v : data.features.row(i)) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
            out << buf << ',';
        }
        out << data.labels[i] << '\n';
    }
    require(static_cast<bool>(out), ErrorKind::Io, "write to '" + path.string() + "' failed");
}

std::vector<std::size_t> PartitionPlan::sizes() const {
    std::vector<std::size_t> s;
    s.reserve(shards.size());
    for (const auto& shard : shards) s.push_back(shard.size());
    return s;
}

bool PartitionPlan::is_disjoint_cover(std::size_t total) const {
    std::vector<char> seen(total, 0);
    std::size_t count = 0;
    for (const auto& shard : shards) {
        for (std::size_t i : shard) {
            if (i >= total || seen[i]) return false;
            seen[i] = 1;
            ++count;
        }
    }
    return count == total;
}

std::string PartitionPlan::to_json(const Topology& topology) const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::uint32_t n : topology.users_in_order()) j[Topology::key(topology.edge_of(n), n)] = shards.at(n);
    return j.dump();
}

PartitionKind parse_partition(const std::string& name) {
    if (name == "iid") return PartitionKind::Iid;
    if (name == "dirichlet") return PartitionKind::Dirichlet;
    fail(ErrorKind::Config, "unknown partition '" + name + "' (expected iid or dirichlet)");
}

const char* to_string(PartitionKind kind) noexcept { return kind == PartitionKind::Iid ? "iid" : "dirichlet"; }

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

} // namespace

PartitionPlan partition_iid(const Dataset& data, const Topology& topology, Rng& rng) {
    const std::size_t total = data.size(), users = topology.user_count();
    require(total >= users, ErrorKind::Config,
            "IID partition needs at least one sample per user (" + std::to_string(total) + " samples, " +
                std::to_string(users) + " users)");
    std::vector<std::size_t> perm(total);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    shuffle(perm, rng);
    PartitionPlan plan;
    plan.shards.resize(users);
    const auto order = topology.users_in_order();
    const std::size_t base = total / users, extra = total % users;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < users; ++i) {
        const std::size_t len = base + (i < extra ? 1 : 0);
        auto& shard = plan.shards[order[i]];
        shard.assign(perm.begin() + static_cast<std::ptrdiff_t>(pos), perm.begin() + static_cast<std::ptrdiff_t>(pos + len));
        std::sort(shard.begin(), shard.end());
        pos += len;
    }
    return plan;
}

PartitionPlan partition_dirichlet(const Dataset& data, const Topology& topology, double beta, Rng& rng) {
    require(beta > 0.0 && std::isfinite(beta), ErrorKind::Config, "Dirichlet concentration beta must be > 0");
    const std::size_t users = topology.user_count();
    const auto order = topology.users_in_order();
    PartitionPlan plan;
    plan.shards.resize(users);
    for (std::size_t c = 0; c < data.classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data.labels[i] == c) members.push_back(i);
        shuffle(members, rng);
        std::vector<double> p(users);
        double sum = 0.0;
        for (double& x : p) sum += (x = rng.gamma(beta));
        if (!(sum > 0.0)) {
            std::fill(p.begin(), p.end(), 1.0);
            sum = static_cast<double>(users);
        }
        double cumulative = 0.0;
        std::size_t start = 0;
        for (std::size_t i = 0; i < users; ++i) {
            cumulative += p[i] / sum;
            std::size_t stop = i + 1 == users
                                   ? members.size()
                                   : static_cast<std::size_t>(std::floor(cumulative * static_cast<double>(members.size())));
            stop = std::clamp(stop, start, members.size());
            auto& shard = plan.shards[order[i]];
            shard.insert(shard.end(), members.begin() + static_cast<std::ptrdiff_t>(start),
                         members.begin() + static_cast<std::ptrdiff_t>(stop));
            start = stop;
        }
    }
    for (auto& shard : plan.shards) std::sort(shard.begin(), shard.end());
    return plan;
}

} // namespace splitllm
