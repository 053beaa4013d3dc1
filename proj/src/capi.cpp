#include "splitllm.h"

#include "splitllm/commands.hpp"
#include "splitllm/config.hpp"
#include "splitllm/gradcheck.hpp"

#include <cstring>
#include <iostream>
#include <new>
#include <string>

struct slm_config {
    splitllm::RunConfig cfg;
};

namespace {

thread_local std::string last_error;

template <typename F>
slm_status guarded(F&& body) {
    try {
        body();
        last_error.clear();
        return SLM_OK;
    } catch (const splitllm::Error& e) {
        last_error = e.what();
        const bool config = e.kind() == splitllm::ErrorKind::Config || e.kind() == splitllm::ErrorKind::Usage;
        return config ? SLM_ERR_CONFIG : SLM_ERR_RUNTIME;
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return SLM_ERR_RUNTIME;
    } catch (const std::exception& e) {
        last_error = e.what();
        return SLM_ERR_RUNTIME;
    } catch (...) {
        last_error = "unknown failure";
        return SLM_ERR_RUNTIME;
    }
}

void require_arg(const void* p, const char* name) {
    splitllm::require(p != nullptr, splitllm::ErrorKind::Usage, std::string(name) + " must not be null");
}

void copy_out(const std::string& s, char* buf, std::size_t cap) {
    if (!buf || cap == 0) return;
    const std::size_t n = std::min(s.size(), cap - 1);
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
}

} // namespace

extern "C" {

slm_status slm_config_create(slm_config** out) { return slm_config_create_preset("default", out); }

slm_status slm_config_create_preset(const char* name, slm_config** out) {
    return guarded([&] {
        require_arg(out, "out");
        require_arg(name, "name");
        *out = nullptr;
        const std::string preset = name;
        auto* handle = new slm_config;
        if (preset == "gradcheck") {
            handle->cfg = splitllm::gradcheck_config();
        } else if (preset != "default") {
            delete handle;
            splitllm::fail(splitllm::ErrorKind::Config, "unknown preset '" + preset + "' (expected default or gradcheck)");
        }
        *out = handle;
    });
}

void slm_config_destroy(slm_config* cfg) { delete cfg; }

slm_status slm_config_load_file(slm_config* cfg, const char* path) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        require_arg(path, "path");
        splitllm::load_config_file(cfg->cfg, path);
    });
}

slm_status slm_config_set(slm_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        require_arg(key, "key");
        require_arg(value, "value");
        splitllm::apply_setting(cfg->cfg, key, value);
    });
}

slm_status slm_config_get(const slm_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        require_arg(key, "key");
        const auto value = splitllm::get_setting(cfg->cfg, key);
        if (needed) *needed = value.size() + 1;
        copy_out(value, buf, cap);
    });
}

slm_status slm_config_validate(const slm_config* cfg) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        splitllm::validate(cfg->cfg);
    });
}

slm_status slm_config_hash(const slm_config* cfg, char* buf, size_t cap) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        require_arg(buf, "buf");
        splitllm::require(cap >= 17, splitllm::ErrorKind::Usage, "hash buffer needs 17 bytes");
        copy_out(splitllm::config_hash(cfg->cfg), buf, cap);
    });
}

slm_status slm_run(const slm_config* cfg, char* dir_buf, size_t cap) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        const auto dir = splitllm::cmd_run(cfg->cfg, std::cout);
        copy_out(dir.string(), dir_buf, cap);
    });
}

slm_status slm_compare(const slm_config* cfg, char* dir_buf, size_t cap) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        const auto dir = splitllm::cmd_compare(cfg->cfg, std::cout);
        copy_out(dir.string(), dir_buf, cap);
    });
}

slm_status slm_gradcheck(const slm_config* cfg, int corrupt_backward, int* passed) {
    return guarded([&] {
        require_arg(cfg, "cfg");
        require_arg(passed, "passed");
        splitllm::GradcheckOptions options;
        options.corrupt_backward = corrupt_backward != 0;
        *passed = splitllm::cmd_gradcheck(cfg->cfg, options, std::cout) ? 1 : 0;
    });
}

const char* slm_last_error(void) { return last_error.c_str(); }

const char* slm_version(void) { return "0.1.0"; }

} // extern "C"
