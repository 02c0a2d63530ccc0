#pragma once

#include "dualrep/numeric.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

namespace dualrep {

using Rng = std::mt19937_64;

double uniform01(Rng& rng);
int uniform_int(Rng& rng, int lo, int hi);  // inclusive bounds
Vec gaussian_vector(int n, Rng& rng);
Vec random_unit_vector(int n, Rng& rng);

struct VideoSpec {
    int num_classes = 4;
    int videos_per_class = 24;
    int frames_per_video = 32;
    int frame_dim = 32;
    double class_separation = 3.0;
    double drift_scale = 6.0;
    double noise_scale = 0.05;
    /// Std-dev of each video's centroid around its class centroid.
    double instance_spread = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Frames are stored one per row: frames(t, :) is the frame at time t.
struct Video {
    int id = 0;
    int class_label = 0;
    Mat frames;
};

struct Dataset {
    VideoSpec spec;
    Mat class_centroids;   // num_classes x frame_dim
    Mat motion_directions; // num_classes x frame_dim, unit rows
    Mat video_centroids;   // num_videos x frame_dim
    std::vector<Video> videos;
};

struct Clip {
    int video_id = 0;
    int start_frame = 0;
    int stride = 1;
    Mat frames;  // length x frame_dim

    int length() const { return static_cast<int>(frames.rows()); }
};

struct AugmentConfig {
    double jitter_scale = 1.0;
    double channel_scale_min = 1.0;
    double channel_scale_max = 1.0;
    double crop_fraction = 1.0;

    void validate() const;
    bool is_identity() const;
};

/// One augmentation draw, applied identically to every frame:
/// x' = mask .* (scale .* x + offset), mask = 1 on [crop_start, crop_start + crop_length).
struct AugmentParams {
    Vec offset;
    Vec scale;
    int crop_start = 0;
    int crop_length = 0;
};

using Permutation = std::vector<int>;

struct ShuffledClip {
    Clip clip;
    /// Segment j of the shuffled clip is segment perm[j] of the input.
    Permutation perm;
};

struct TrainingTuple {
    Clip c;
    Clip c_hat;
    Clip s_hat;
    Permutation perm;
    AugmentParams params;
};

Dataset generate_dataset(const VideoSpec& spec);

Clip clip_at(const Video& video, int length, int stride, int start);
Clip sample_clip(const Video& video, int length, int stride, Rng& rng);
/// `count` starts spread evenly over the valid range.
std::vector<int> uniform_clip_starts(int frames_per_video, int length, int stride, int count);

std::vector<Mat> split_subclips(const Mat& frames, int segments);
Mat concat_subclips(const std::vector<Mat>& parts);

Permutation identity_permutation(int n);
bool is_identity(const Permutation& perm);
Permutation inverse_permutation(const Permutation& perm);
/// Uniform over permutations of n elements (identity included).
Permutation random_permutation(int n, Rng& rng);

Clip permute_subclips(const Clip& clip, int segments, const Permutation& perm);
ShuffledClip shuffle_subclips(const Clip& clip, int segments, Rng& rng);
Clip unshuffle(const Clip& shuffled, int segments, const Permutation& perm);

AugmentParams draw_augment_params(int dim, const AugmentConfig& cfg, Rng& rng);
Clip apply_augment(const Clip& clip, const AugmentParams& params);
Clip augment(const Clip& clip, const AugmentConfig& cfg, Rng& rng);

TrainingTuple make_training_tuple(const Video& video, int length, int stride, int segments,
                                  const AugmentConfig& cfg, Rng& rng);
/// Builds the tuple from an already sampled clip.
TrainingTuple make_training_tuple(const Clip& c, int segments, const AugmentConfig& cfg, Rng& rng);

struct Split {
    std::vector<int> train;  // indices into Dataset::videos
    std::vector<int> test;
};
/// First `train_per_class` videos of each class go to train, the rest to test.
Split split_per_class(const Dataset& data, int train_per_class);

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace dualrep
