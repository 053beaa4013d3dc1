#include "splitllm/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace splitllm {

const char* to_string(Precision p) noexcept { return p == Precision::F32 ? "f32" : "f64"; }
const char* to_string(Executor e) noexcept { return e == Executor::Sequential ? "sequential" : "concurrent"; }
const char* to_string(CloudReplicaPolicy p) noexcept { return p == CloudReplicaPolicy::PerEdge ? "per_edge" : "shared"; }

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
    fail(ErrorKind::Config, key + ": invalid value '" + value + "' (expected " + expected + ")");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || v.empty()) bad_value(key, v, "a non-negative integer");
    return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(parse_u64(key, v));
}

double parse_real(const std::string& key, const std::string& v) {
    double out = 0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || v.empty() || !std::isfinite(out)) bad_value(key, v, "a real number");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_value(key, v, "true or false");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename Seq>
std::string join(const Seq& items) {
    std::string out;
    for (const auto& item : items) {
        if (!out.empty()) out += ",";
        if constexpr (std::is_arithmetic_v<std::decay_t<decltype(item)>>)
            out += std::to_string(item);
        else
            out += item;
    }
    return out;
}

struct Setting {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SIZE_SETTING(field)                                                                                        \
    {#field, {[](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_size(k, v); },        \
              [](const RunConfig& c) { return std::to_string(c.field); }}}
#define REAL_SETTING(field)                                                                                        \
    {#field, {[](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_real(k, v); },        \
              [](const RunConfig& c) { return format_real(c.field); }}}

// Order of this table is the canonical key order of to_text().
const std::vector<std::pair<std::string, Setting>>& settings() {
    static const std::vector<std::pair<std::string, Setting>> table = {
        SIZE_SETTING(edges),
        SIZE_SETTING(users),
        {"assignment",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.assignment = parse_assignment(v); },
          [](const RunConfig& c) { return std::string(to_string(c.assignment)); }}},
        {"widths",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              std::vector<std::size_t> w;
              for (const auto& item : split_list(v)) w.push_back(parse_size(k, item));
              if (w.empty()) bad_value(k, v, "a comma-separated list of hidden widths");
              c.widths = std::move(w);
          },
          [](const RunConfig& c) { return join(c.widths); }}},
        SIZE_SETTING(cut),
        SIZE_SETTING(rank),
        REAL_SETTING(init_std),
        {"activation",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.activation = parse_activation(v); },
          [](const RunConfig& c) { return std::string(to_string(c.activation)); }}},
        REAL_SETTING(lr_user),
        REAL_SETTING(lr_edge),
        REAL_SETTING(lr_cloud),
        REAL_SETTING(momentum),
        REAL_SETTING(lr_decay),
        SIZE_SETTING(rounds),
        SIZE_SETTING(local_epochs),
        SIZE_SETTING(batch),
        {"data",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "blobs")
                  c.data = DataSource::Blobs;
              else if (v == "table")
                  c.data = DataSource::Table;
              else
                  bad_value(k, v, "blobs or table");
          },
          [](const RunConfig& c) { return std::string(c.data == DataSource::Blobs ? "blobs" : "table"); }}},
        {"train_path", {[](RunConfig& c, const std::string&, const std::string& v) { c.train_path = v; },
                        [](const RunConfig& c) { return c.train_path; }}},
        {"test_path", {[](RunConfig& c, const std::string&, const std::string& v) { c.test_path = v; },
                       [](const RunConfig& c) { return c.test_path; }}},
        SIZE_SETTING(classes),
        SIZE_SETTING(blob_dim),
        SIZE_SETTING(blob_train_per_class),
        SIZE_SETTING(blob_test_per_class),
        REAL_SETTING(blob_spread),
        {"partition",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.partition = parse_partition(v); },
          [](const RunConfig& c) { return std::string(to_string(c.partition)); }}},
        REAL_SETTING(beta),
        {"seed", {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); },
                  [](const RunConfig& c) { return std::to_string(c.seed); }}},
        {"precision",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "f32")
                  c.precision = Precision::F32;
              else if (v == "f64")
                  c.precision = Precision::F64;
              else
                  bad_value(k, v, "f32 or f64");
          },
          [](const RunConfig& c) { return std::string(to_string(c.precision)); }}},
        {"executor",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "sequential")
                  c.executor = Executor::Sequential;
              else if (v == "concurrent")
                  c.executor = Executor::Concurrent;
              else
                  bad_value(k, v, "sequential or concurrent");
          },
          [](const RunConfig& c) { return std::string(to_string(c.executor)); }}},
        {"cloud_replicas",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "per_edge")
                  c.cloud_replicas = CloudReplicaPolicy::PerEdge;
              else if (v == "shared")
                  c.cloud_replicas = CloudReplicaPolicy::Shared;
              else
                  bad_value(k, v, "per_edge or shared");
          },
          [](const RunConfig& c) { return std::string(to_string(c.cloud_replicas)); }}},
        SIZE_SETTING(sl_parallel_contexts),
        {"schemes", {[](RunConfig& c, const std::string&, const std::string& v) { c.schemes = split_list(v); },
                     [](const RunConfig& c) { return join(c.schemes); }}},
        {"out", {[](RunConfig& c, const std::string&, const std::string& v) { c.out = v; },
                 [](const RunConfig& c) { return c.out; }}},
        {"event_log", {[](RunConfig& c, const std::string& k, const std::string& v) { c.event_log = parse_bool(k, v); },
                       [](const RunConfig& c) { return std::string(c.event_log ? "true" : "false"); }}},
        REAL_SETTING(links.user_edge.bits_per_second),
        REAL_SETTING(links.user_edge.delay_seconds),
        REAL_SETTING(links.edge_cloud.bits_per_second),
        REAL_SETTING(links.edge_cloud.delay_seconds),
        REAL_SETTING(links.user_cloud.bits_per_second),
        REAL_SETTING(links.user_cloud.delay_seconds),
    };
    return table;
}

#undef SIZE_SETTING
#undef REAL_SETTING

const Setting& find_setting(const std::string& key) {
    for (const auto& [name, setting] : settings())
        if (name == key) return setting;
    fail(ErrorKind::Config, "unknown key '" + key + "'");
}

} // namespace

const std::vector<std::string>& setting_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, _] : settings()) k.push_back(name);
        return k;
    }();
    return keys;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    find_setting(key).set(cfg, key, trim(value));
}

std::string get_setting(const RunConfig& cfg, const std::string& key) { return find_setting(key).get(cfg); }

void parse_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
    std::stringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::Config,
                origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        try {
            apply_setting(cfg, key, line.substr(eq + 1));
        } catch (const Error& e) {
            fail(ErrorKind::Config, origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Config, "cannot read config file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    parse_config_text(cfg, ss.str(), path.string());
}

void validate(const RunConfig& cfg) {
    auto check = [](bool ok, const std::string& field, const std::string& what) {
        require(ok, ErrorKind::Config, field + ": " + what);
    };
    check(cfg.edges >= 1, "edges", "need at least one edge server");
    check(cfg.users >= 1, "users", "need at least one user");
    check(cfg.edges <= cfg.users, "edges", "M = " + std::to_string(cfg.edges) + " exceeds N = " +
                                               std::to_string(cfg.users));
    check(!cfg.widths.empty(), "widths", "need at least one hidden layer");
    const std::size_t L = cfg.layer_count();
    check(L >= 3, "widths", "model needs L >= 3 layers for a three-way cut (got " + std::to_string(L) + ")");
    check(cfg.cut > 1, "cut", "L_e must exceed 1 (edge segment empty)");
    check(cfg.cut < L, "cut", "L_e = " + std::to_string(cfg.cut) + " must be below L = " + std::to_string(L) +
                                  " (cloud segment empty)");
    check(cfg.rank >= 1, "rank", "must be >= 1");
    for (std::size_t w : cfg.widths)
        check(w > cfg.rank, "rank", "r = " + std::to_string(cfg.rank) + " must be below every hidden width (" +
                                        std::to_string(w) + ")");
    if (cfg.data == DataSource::Blobs)
        check(cfg.blob_dim > cfg.rank, "rank", "r must be below the input dimension " + std::to_string(cfg.blob_dim));
    check(cfg.init_std >= 0.0, "init_std", "must be >= 0");
    check(cfg.lr_user > 0.0, "lr_user", "must be > 0");
    check(cfg.lr_edge > 0.0, "lr_edge", "must be > 0");
    check(cfg.lr_cloud > 0.0, "lr_cloud", "must be > 0");
    check(cfg.momentum >= 0.0 && cfg.momentum < 1.0, "momentum", "must lie in [0, 1)");
    check(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0, "lr_decay", "must lie in (0, 1]");
    check(cfg.local_epochs >= 1, "local_epochs", "must be >= 1");
    check(cfg.batch >= 1, "batch", "must be >= 1");
    if (cfg.data == DataSource::Blobs) {
        check(cfg.classes >= 2, "classes", "blobs need at least 2 classes");
        check(cfg.blob_dim >= 1, "blob_dim", "must be >= 1");
        check(cfg.blob_train_per_class >= 1, "blob_train_per_class", "must be >= 1");
        check(cfg.blob_test_per_class >= 1, "blob_test_per_class", "must be >= 1");
        check(cfg.blob_spread >= 0.0, "blob_spread", "must be >= 0");
    } else {
        check(!cfg.train_path.empty(), "train_path", "required when data = table");
        check(!cfg.test_path.empty(), "test_path", "required when data = table");
    }
    check(cfg.beta > 0.0, "beta", "Dirichlet concentration must be > 0");
    check(cfg.sl_parallel_contexts >= 1, "sl_parallel_contexts", "must be >= 1");
    check(!cfg.schemes.empty(), "schemes", "need at least one scheme");
    std::set<std::string> seen;
    for (const auto& s : cfg.schemes) {
        check(s == "splitllm" || s == "fl" || s == "sl", "schemes", "unknown scheme '" + s + "'");
        check(seen.insert(s).second, "schemes", "duplicate scheme '" + s + "'");
    }
    for (const LinkModel* link : {&cfg.links.user_edge, &cfg.links.edge_cloud, &cfg.links.user_cloud}) {
        check(link->bits_per_second > 0.0, "links", "bandwidth must be > 0");
        check(link->delay_seconds >= 0.0, "links", "delay must be >= 0");
    }
}

std::string to_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& [name, setting] : settings()) out += name + " = " + setting.get(cfg) + "\n";
    return out;
}

std::string config_hash(const RunConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, setting] : settings()) {
        if (name == "seed" || name == "out" || name == "executor") continue;
        const std::string line = name + "=" + setting.get(cfg) + "\n";
        for (unsigned char c : line) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ModelShape model_shape(const RunConfig& cfg, std::size_t input_dim, std::size_t classes) {
    ModelShape shape;
    shape.input_dim = input_dim;
    shape.widths = cfg.widths;
    shape.classes = classes;
    shape.hidden_activation = cfg.activation;
    shape.rank = cfg.rank;
    shape.init_std = cfg.init_std;
    shape.validate();
    return shape;
}

} // namespace splitllm
