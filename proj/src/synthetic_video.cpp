#include "dualrep/synthetic_video.hpp"

#include "dualrep/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace dualrep {

double uniform01(Rng& rng) { return std::generate_canonical<double, 53>(rng); }

int uniform_int(Rng& rng, int lo, int hi) {
    std::uniform_int_distribution<int> dist(lo, hi);
    return dist(rng);
}

Vec gaussian_vector(int n, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = dist(rng);
    return v;
}

Vec random_unit_vector(int n, Rng& rng) {
    for (;;) {
        Vec v = gaussian_vector(n, rng);
        if (v.norm() > 1e-12) return v / v.norm();
    }
}

void VideoSpec::validate() const {
    if (num_classes <= 0) throw ConfigError("num_classes must be positive");
    if (videos_per_class <= 0) throw ConfigError("videos_per_class must be positive");
    if (frames_per_video <= 0) throw ConfigError("frames_per_video must be positive");
    if (frame_dim <= 0) throw ConfigError("frame_dim must be positive");
    if (!(class_separation >= 0)) throw ConfigError("class_separation must be non-negative");
    if (!(drift_scale >= 0)) throw ConfigError("drift_scale must be non-negative");
    if (!(noise_scale >= 0)) throw ConfigError("noise_scale must be non-negative");
    if (!(instance_spread >= 0)) throw ConfigError("instance_spread must be non-negative");
}

void AugmentConfig::validate() const {
    if (!(jitter_scale >= 0)) throw ConfigError("jitter_scale must be non-negative");
    if (!(channel_scale_min <= channel_scale_max)) {
        throw ConfigError("channel_scale range must satisfy min <= max");
    }
    if (!(crop_fraction > 0 && crop_fraction <= 1)) {
        throw ConfigError("crop_fraction must lie in (0, 1]");
    }
}

bool AugmentConfig::is_identity() const {
    return jitter_scale == 0 && channel_scale_min == 1 && channel_scale_max == 1 &&
           crop_fraction == 1;
}

namespace {

Mat class_centroids(int k, int d, double sep, Rng& rng) {
    Mat c(k, d);
    if (k <= d) {
        Mat g(d, k);
        for (int j = 0; j < k; ++j) g.col(j) = gaussian_vector(d, rng);
        Eigen::HouseholderQR<Mat> qr(g);
        Mat q = qr.householderQ() * Mat::Identity(d, k);
        // Orthonormal directions scaled by sep/sqrt(2) are pairwise exactly sep apart.
        c = q.transpose() * (sep / std::sqrt(2.0));
        return c;
    }
    for (int i = 0; i < k; ++i) c.row(i) = random_unit_vector(d, rng).transpose();
    double min_dist = INFINITY;
    for (int i = 0; i < k; ++i) {
        for (int j = i + 1; j < k; ++j) min_dist = std::min(min_dist, (c.row(i) - c.row(j)).norm());
    }
    if (min_dist > 0) c *= sep / min_dist;
    return c;
}

}  // namespace

Dataset generate_dataset(const VideoSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int k = spec.num_classes;
    const int d = spec.frame_dim;
    const int t_len = spec.frames_per_video;

    Dataset data;
    data.spec = spec;
    data.class_centroids = class_centroids(k, d, spec.class_separation, rng);
    data.motion_directions.resize(k, d);
    for (int c = 0; c < k; ++c) data.motion_directions.row(c) = random_unit_vector(d, rng).transpose();

    const int n = k * spec.videos_per_class;
    data.video_centroids.resize(n, d);
    data.videos.reserve(n);
    for (int c = 0; c < k; ++c) {
        for (int v = 0; v < spec.videos_per_class; ++v) {
            Video video;
            video.id = static_cast<int>(data.videos.size());
            video.class_label = c;
            Vec centre = data.class_centroids.row(c).transpose() +
                         spec.instance_spread * gaussian_vector(d, rng);
            data.video_centroids.row(video.id) = centre.transpose();
            Vec dir = data.motion_directions.row(c).transpose();
            video.frames.resize(t_len, d);
            for (int t = 0; t < t_len; ++t) {
                double ramp = t_len > 1 ? static_cast<double>(t) / (t_len - 1) : 0.0;
                Vec noise = gaussian_vector(d, rng);
                video.frames.row(t) =
                    (centre + (spec.drift_scale * ramp) * dir + spec.noise_scale * noise).transpose();
            }
            data.videos.push_back(std::move(video));
        }
    }
    return data;
}

Clip clip_at(const Video& video, int length, int stride, int start) {
    if (length <= 0 || stride <= 0) throw RangeError("clip length and stride must be positive");
    const int t_len = static_cast<int>(video.frames.rows());
    if (static_cast<long>(length) * stride > t_len) {
        throw RangeError("clip of length " + std::to_string(length) + " at stride " +
                         std::to_string(stride) + " exceeds video of " + std::to_string(t_len) +
                         " frames");
    }
    if (start < 0 || start + length * stride > t_len) {
        throw RangeError("clip start " + std::to_string(start) + " out of range");
    }
    Clip clip;
    clip.video_id = video.id;
    clip.start_frame = start;
    clip.stride = stride;
    clip.frames.resize(length, video.frames.cols());
    for (int i = 0; i < length; ++i) clip.frames.row(i) = video.frames.row(start + i * stride);
    return clip;
}

Clip sample_clip(const Video& video, int length, int stride, Rng& rng) {
    const int t_len = static_cast<int>(video.frames.rows());
    if (length <= 0 || stride <= 0 || static_cast<long>(length) * stride > t_len) {
        throw RangeError("clip of length " + std::to_string(length) + " at stride " +
                         std::to_string(stride) + " exceeds video of " + std::to_string(t_len) +
                         " frames");
    }
    int start = uniform_int(rng, 0, t_len - length * stride);
    return clip_at(video, length, stride, start);
}

std::vector<int> uniform_clip_starts(int frames_per_video, int length, int stride, int count) {
    int last = frames_per_video - length * stride;
    if (last < 0) throw RangeError("clip does not fit in video");
    std::vector<int> starts(count);
    for (int i = 0; i < count; ++i) {
        starts[i] = count == 1 ? 0
                               : static_cast<int>(std::lround(static_cast<double>(last) * i / (count - 1)));
    }
    return starts;
}

std::vector<Mat> split_subclips(const Mat& frames, int segments) {
    if (segments <= 0) throw ShapeError("segment count must be positive");
    if (frames.rows() % segments != 0) {
        throw ShapeError("clip length " + std::to_string(frames.rows()) +
                         " is not divisible by " + std::to_string(segments) + " segments");
    }
    const Eigen::Index len = frames.rows() / segments;
    std::vector<Mat> parts;
    parts.reserve(segments);
    for (int s = 0; s < segments; ++s) parts.emplace_back(frames.middleRows(s * len, len));
    return parts;
}

Mat concat_subclips(const std::vector<Mat>& parts) {
    if (parts.empty()) return Mat();
    Eigen::Index rows = 0;
    for (const auto& p : parts) rows += p.rows();
    Mat out(rows, parts.front().cols());
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        if (p.cols() != out.cols()) throw ShapeError("sub-clips differ in frame dimension");
        out.middleRows(at, p.rows()) = p;
        at += p.rows();
    }
    return out;
}

Permutation identity_permutation(int n) {
    Permutation p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    return p;
}

bool is_identity(const Permutation& perm) {
    for (std::size_t i = 0; i < perm.size(); ++i) {
        if (perm[i] != static_cast<int>(i)) return false;
    }
    return true;
}

Permutation inverse_permutation(const Permutation& perm) {
    Permutation inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
    return inv;
}

Permutation random_permutation(int n, Rng& rng) {
    Permutation p = identity_permutation(n);
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(rng, 0, i)]);
    return p;
}

Clip permute_subclips(const Clip& clip, int segments, const Permutation& perm) {
    auto parts = split_subclips(clip.frames, segments);
    if (static_cast<int>(perm.size()) != segments) throw ShapeError("permutation size mismatch");
    std::vector<Mat> out(segments);
    for (int j = 0; j < segments; ++j) out[j] = parts[perm[j]];
    Clip result = clip;
    result.frames = concat_subclips(out);
    return result;
}

ShuffledClip shuffle_subclips(const Clip& clip, int segments, Rng& rng) {
    if (segments < 2) throw ConfigError("shuffling needs at least 2 segments");
    if (clip.frames.rows() % segments != 0) {
        throw ShapeError("clip length " + std::to_string(clip.frames.rows()) +
                         " is not divisible by " + std::to_string(segments) + " segments");
    }
    Permutation perm;
    if (segments == 2) {
        perm = {1, 0};
    } else {
        do {
            perm = random_permutation(segments, rng);
        } while (is_identity(perm));
    }
    return {permute_subclips(clip, segments, perm), perm};
}

Clip unshuffle(const Clip& shuffled, int segments, const Permutation& perm) {
    return permute_subclips(shuffled, segments, inverse_permutation(perm));
}

AugmentParams draw_augment_params(int dim, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    AugmentParams p;
    p.scale.resize(dim);
    const double span = cfg.channel_scale_max - cfg.channel_scale_min;
    for (int i = 0; i < dim; ++i) p.scale[i] = cfg.channel_scale_min + span * uniform01(rng);
    p.offset = cfg.jitter_scale * gaussian_vector(dim, rng);
    p.crop_length = std::clamp(static_cast<int>(std::lround(cfg.crop_fraction * dim)), 1, dim);
    p.crop_start = uniform_int(rng, 0, dim - p.crop_length);
    return p;
}

Clip apply_augment(const Clip& clip, const AugmentParams& params) {
    const Eigen::Index dim = clip.frames.cols();
    if (params.scale.size() != dim || params.offset.size() != dim) {
        throw ShapeError("augmentation parameters do not match frame dimension");
    }
    Clip out = clip;
    for (Eigen::Index t = 0; t < clip.frames.rows(); ++t) {
        out.frames.row(t) = (clip.frames.row(t).array() * params.scale.transpose().array() +
                             params.offset.transpose().array())
                                .matrix();
    }
    if (params.crop_length < dim) {
        for (Eigen::Index i = 0; i < dim; ++i) {
            if (i < params.crop_start || i >= params.crop_start + params.crop_length) {
                out.frames.col(i).setZero();
            }
        }
    }
    return out;
}

Clip augment(const Clip& clip, const AugmentConfig& cfg, Rng& rng) {
    return apply_augment(clip, draw_augment_params(static_cast<int>(clip.frames.cols()), cfg, rng));
}

TrainingTuple make_training_tuple(const Clip& c, int segments, const AugmentConfig& cfg, Rng& rng) {
    TrainingTuple tuple;
    tuple.c = c;
    tuple.params = draw_augment_params(static_cast<int>(c.frames.cols()), cfg, rng);
    tuple.c_hat = apply_augment(c, tuple.params);
    auto shuffled = shuffle_subclips(tuple.c_hat, segments, rng);
    tuple.s_hat = std::move(shuffled.clip);
    tuple.perm = std::move(shuffled.perm);
    return tuple;
}

TrainingTuple make_training_tuple(const Video& video, int length, int stride, int segments,
                                  const AugmentConfig& cfg, Rng& rng) {
    return make_training_tuple(sample_clip(video, length, stride, rng), segments, cfg, rng);
}

Split split_per_class(const Dataset& data, int train_per_class) {
    if (train_per_class < 0) throw ConfigError("train_per_class must be non-negative");
    Split split;
    std::map<int, int> seen;
    for (std::size_t i = 0; i < data.videos.size(); ++i) {
        int& count = seen[data.videos[i].class_label];
        (count < train_per_class ? split.train : split.test).push_back(static_cast<int>(i));
        ++count;
    }
    return split;
}

namespace {

std::vector<double> flatten(const Mat& m) {
    std::vector<double> out;
    out.reserve(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    }
    return out;
}

Mat unflatten(const std::vector<double>& v, std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
    if (offset + static_cast<std::size_t>(rows * cols) > v.size()) {
        throw ManifestError("binary payload shorter than manifest implies");
    }
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[offset + r * cols + c];
    }
    return m;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ManifestError("malformed manifest line: " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

const std::string& need(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ManifestError("manifest is missing key '" + key + "'");
    return it->second;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto& s = data.spec;
    std::ostringstream m;
    m << "format=dualrep-dataset-v1\n"
      << "num_classes=" << s.num_classes << "\n"
      << "videos_per_class=" << s.videos_per_class << "\n"
      << "frames_per_video=" << s.frames_per_video << "\n"
      << "frame_dim=" << s.frame_dim << "\n"
      << "class_separation=" << format_double(s.class_separation) << "\n"
      << "drift_scale=" << format_double(s.drift_scale) << "\n"
      << "noise_scale=" << format_double(s.noise_scale) << "\n"
      << "instance_spread=" << format_double(s.instance_spread) << "\n"
      << "seed=" << s.seed << "\n"
      << "num_videos=" << data.videos.size() << "\n"
      << "frames_file=frames.bin\n"
      << "centroids_file=centroids.bin\n"
      << "labels=";
    for (std::size_t i = 0; i < data.videos.size(); ++i) {
        m << (i ? "," : "") << data.videos[i].class_label;
    }
    m << "\n";
    write_text(dir / "manifest.txt", m.str());

    std::vector<double> frames;
    frames.reserve(data.videos.size() * s.frames_per_video * s.frame_dim);
    for (const auto& v : data.videos) {
        auto f = flatten(v.frames);
        frames.insert(frames.end(), f.begin(), f.end());
    }
    write_f64_le(dir / "frames.bin", frames);

    std::vector<double> cents = flatten(data.class_centroids);
    auto mot = flatten(data.motion_directions);
    auto vc = flatten(data.video_centroids);
    cents.insert(cents.end(), mot.begin(), mot.end());
    cents.insert(cents.end(), vc.begin(), vc.end());
    write_f64_le(dir / "centroids.bin", cents);
}

Dataset load_dataset(const std::filesystem::path& dir) {
    auto kv = parse_kv(read_text(dir / "manifest.txt"));
    if (need(kv, "format") != "dualrep-dataset-v1") throw ManifestError("unknown dataset format");
    Dataset data;
    auto& s = data.spec;
    s.num_classes = std::stoi(need(kv, "num_classes"));
    s.videos_per_class = std::stoi(need(kv, "videos_per_class"));
    s.frames_per_video = std::stoi(need(kv, "frames_per_video"));
    s.frame_dim = std::stoi(need(kv, "frame_dim"));
    s.class_separation = std::stod(need(kv, "class_separation"));
    s.drift_scale = std::stod(need(kv, "drift_scale"));
    s.noise_scale = std::stod(need(kv, "noise_scale"));
    s.instance_spread = std::stod(need(kv, "instance_spread"));
    s.seed = std::stoull(need(kv, "seed"));
    s.validate();
    const int n = std::stoi(need(kv, "num_videos"));
    if (n != s.num_classes * s.videos_per_class) throw ManifestError("num_videos inconsistent with spec");

    std::vector<int> labels;
    std::istringstream ls(need(kv, "labels"));
    std::string tok;
    while (std::getline(ls, tok, ',')) labels.push_back(std::stoi(tok));
    if (static_cast<int>(labels.size()) != n) throw ManifestError("label count mismatch");

    auto frames = read_f64_le(dir / need(kv, "frames_file"));
    const std::size_t per = static_cast<std::size_t>(s.frames_per_video) * s.frame_dim;
    if (frames.size() != per * n) throw ManifestError("frames.bin size mismatch");
    for (int i = 0; i < n; ++i) {
        Video v;
        v.id = i;
        v.class_label = labels[i];
        v.frames = unflatten(frames, per * i, s.frames_per_video, s.frame_dim);
        data.videos.push_back(std::move(v));
    }

    auto cents = read_f64_le(dir / need(kv, "centroids_file"));
    const std::size_t kd = static_cast<std::size_t>(s.num_classes) * s.frame_dim;
    if (cents.size() != 2 * kd + static_cast<std::size_t>(n) * s.frame_dim) {
        throw ManifestError("centroids.bin size mismatch");
    }
    data.class_centroids = unflatten(cents, 0, s.num_classes, s.frame_dim);
    data.motion_directions = unflatten(cents, kd, s.num_classes, s.frame_dim);
    data.video_centroids = unflatten(cents, 2 * kd, n, s.frame_dim);
    return data;
}

}  // namespace dualrep
