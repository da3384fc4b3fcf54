#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volpretext/rng.hpp"
#include "volpretext/tensor.hpp"
#include "volpretext/volume.hpp"

namespace test_helpers {

template <typename T>
vpx::Tensor<T> random_tensor(std::vector<std::int64_t> shape, vpx::Rng& rng, double scale = 1.0) {
    vpx::Tensor<T> t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = static_cast<T>(rng.normal() * scale);
    }
    return t;
}

inline vpx::prep::Volume random_volume(std::int64_t d, std::int64_t h, std::int64_t w,
                                       vpx::Rng& rng) {
    vpx::prep::Volume v(d, h, w);
    for (auto& x : v.voxels) x = static_cast<float>(rng.next_double());
    return v;
}

inline std::string temp_dir(const std::string& tag) {
    const std::string path = std::string("/tmp/volpretext_test_") + tag + "_" +
                             std::to_string(::getpid());
    std::string cmd = "rm -rf '" + path + "' && mkdir -p '" + path + "'";
    if (std::system(cmd.c_str()) != 0) throw std::runtime_error("temp_dir failed");
    return path;
}

} // namespace test_helpers
