#pragma once

#include "dualrep/encoder.hpp"
#include "dualrep/synthetic_video.hpp"
#include "dualrep/trainers.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

namespace dualrep::testing {

inline std::vector<Vec> unit_vectors(int n, int dim, Rng& rng) {
    std::vector<Vec> out;
    for (int i = 0; i < n; ++i) out.push_back(random_unit_vector(dim, rng));
    return out;
}

inline DualRep dual_rep(int segments, int dim, Rng& rng) {
    DualRep r;
    for (int s = 0; s < segments; ++s) r.push_back(random_unit_vector(dim, rng));
    return r;
}

inline std::vector<DualRep> dual_reps(int n, int segments, int dim, Rng& rng) {
    std::vector<DualRep> out;
    for (int i = 0; i < n; ++i) out.push_back(dual_rep(segments, dim, rng));
    return out;
}

inline Vec basis(int dim, int k) {
    Vec e = Vec::Zero(dim);
    e(k) = 1.0;
    return e;
}

inline VideoSpec small_spec(std::uint64_t seed = 0) {
    VideoSpec s;
    s.num_classes = 4;
    s.videos_per_class = 6;
    s.frames_per_video = 16;
    s.frame_dim = 8;
    s.seed = seed;
    return s;
}

inline TrainConfig small_train_config(std::uint64_t seed = 0) {
    TrainConfig c;
    c.dims.hidden_dim = 8;
    c.dims.feature_dim = 6;
    c.dims.projection_dim = 4;
    c.dims.dual_hidden_dim = 6;
    c.hp.queue_size = 32;
    c.hp.lambda1 = 0.5;
    c.batch_size = 4;
    c.epochs = 2;
    c.lr = 0.01;
    c.lr_milestones = {};
    c.clip_length = 4;
    c.stride = 2;
    c.seed = seed;
    return c;
}

inline std::vector<const Video*> first_videos(const Dataset& d, int n) {
    std::vector<const Video*> out;
    for (int i = 0; i < n; ++i) out.push_back(&d.videos[i * (d.videos.size() / n)]);
    return out;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("dualrep_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

}  // namespace dualrep::testing
