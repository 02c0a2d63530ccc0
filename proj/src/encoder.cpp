#include "dualrep/encoder.hpp"

#include "dualrep/errors.hpp"
#include "dualrep/synthetic_video.hpp"

#include <cmath>
#include <sstream>

namespace dualrep {

void EncoderDims::validate() const {
    if (frame_dim <= 0 || hidden_dim <= 0 || feature_dim <= 0 || projection_dim <= 0 ||
        dual_hidden_dim <= 0) {
        throw ConfigError("encoder dimensions must be positive");
    }
    if (segments < 1) throw ConfigError("segments must be at least 1");
    if (order_head && segments > 8) throw ConfigError("order head supports at most 8 segments");
}

int factorial(int n) {
    int f = 1;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

namespace {

Mat uniform_matrix(Eigen::Index rows, Eigen::Index cols, double a, Rng& rng) {
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = a * (2.0 * uniform01(rng) - 1.0);
    }
    return m;
}

void add_linear(ParamSet& p, const char* w, const char* b, int out, int in, Rng& rng) {
    double a = 1.0 / std::sqrt(static_cast<double>(in));
    p[w] = uniform_matrix(out, in, a, rng);
    p[b] = uniform_matrix(out, 1, a, rng);
}

const Mat& get(const ParamSet& p, const char* name) {
    auto it = p.find(name);
    if (it == p.end()) throw ManifestError(std::string("missing parameter ") + name);
    return it->second;
}

Mat& get(ParamSet& p, const char* name) {
    auto it = p.find(name);
    if (it == p.end()) throw ManifestError(std::string("missing parameter ") + name);
    return it->second;
}

}  // namespace

ParamSet init_params(const EncoderDims& dims, std::uint64_t seed) {
    dims.validate();
    Rng rng(seed);
    ParamSet p;
    add_linear(p, param::frame_w, param::frame_b, dims.hidden_dim, dims.frame_dim, rng);
    add_linear(p, param::mix_w, param::mix_b, dims.feature_dim, dims.hidden_dim, rng);
    add_linear(p, param::clip_w, param::clip_b, dims.projection_dim, dims.feature_dim, rng);
    add_linear(p, param::dual_hidden_w, param::dual_hidden_b, dims.dual_hidden_dim,
               dims.feature_dim, rng);
    add_linear(p, param::dual_out_w, param::dual_out_b, dims.projection_dim,
               dims.dual_hidden_dim, rng);
    if (dims.order_head) {
        add_linear(p, param::order_w, param::order_b, factorial(dims.segments),
                   dims.segments * dims.projection_dim, rng);
    }
    return p;
}

EncoderDims infer_dims(const ParamSet& params, int segments) {
    EncoderDims d;
    d.frame_dim = static_cast<int>(get(params, param::frame_w).cols());
    d.hidden_dim = static_cast<int>(get(params, param::frame_w).rows());
    d.feature_dim = static_cast<int>(get(params, param::mix_w).rows());
    d.projection_dim = static_cast<int>(get(params, param::clip_w).rows());
    d.dual_hidden_dim = static_cast<int>(get(params, param::dual_hidden_w).rows());
    d.segments = segments;
    d.order_head = params.count(param::order_w) > 0;
    return d;
}

ParamSet zeros_like(const ParamSet& params) {
    ParamSet z;
    for (const auto& [name, m] : params) z[name] = Mat::Zero(m.rows(), m.cols());
    return z;
}

bool same_manifest(const ParamSet& a, const ParamSet& b) {
    if (a.size() != b.size()) return false;
    for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first || ia->second.rows() != ib->second.rows() ||
            ia->second.cols() != ib->second.cols()) {
            return false;
        }
    }
    return true;
}

void check_same_manifest(const ParamSet& a, const ParamSet& b) {
    if (!same_manifest(a, b)) throw ManifestError("parameter manifests differ");
}

void axpy(ParamSet& a, double alpha, const ParamSet& b) {
    check_same_manifest(a, b);
    for (auto& [name, m] : a) m += alpha * b.at(name);
}

bool params_finite(const ParamSet& params) {
    for (const auto& [name, m] : params) {
        if (!all_finite(m)) return false;
    }
    return true;
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
    check_same_manifest(a, b);
    double d = 0;
    for (const auto& [name, m] : a) {
        if (m.size()) d = std::max(d, (m - b.at(name)).cwiseAbs().maxCoeff());
    }
    return d;
}

void momentum_update(ParamSet& key, const ParamSet& query, double m) {
    if (!(m >= 0 && m <= 1)) throw ConfigError("momentum must lie in [0, 1]");
    check_same_manifest(key, query);
    for (auto& [name, k] : key) k = m * k + (1.0 - m) * query.at(name);
}

Vec encode_backbone(const ParamSet& params, const Mat& clip, BackboneCache* cache) {
    const Mat& w1 = get(params, param::frame_w);
    const Mat& b1 = get(params, param::frame_b);
    const Mat& w2 = get(params, param::mix_w);
    const Mat& b2 = get(params, param::mix_b);
    if (clip.cols() != w1.cols()) {
        throw ShapeError("clip frame dimension " + std::to_string(clip.cols()) +
                         " does not match encoder input " + std::to_string(w1.cols()));
    }
    if (clip.rows() == 0) throw ShapeError("empty clip");
    Mat act = ((clip * w1.transpose()).rowwise() + b1.col(0).transpose()).array().tanh();
    Vec pooled = act.colwise().mean().transpose();
    Vec h = w2 * pooled + b2.col(0);
    if (cache) {
        cache->x = clip;
        cache->act = std::move(act);
        cache->pooled = pooled;
    }
    return h;
}

void backbone_backward(const ParamSet& params, const BackboneCache& cache, const Vec& dh,
                       ParamSet& grads) {
    const Mat& w2 = get(params, param::mix_w);
    get(grads, param::mix_w) += dh * cache.pooled.transpose();
    get(grads, param::mix_b).col(0) += dh;
    Vec dpooled = w2.transpose() * dh;
    const double inv_len = 1.0 / static_cast<double>(cache.act.rows());
    Mat da = (1.0 - cache.act.array().square()).rowwise() * (inv_len * dpooled.transpose()).array();
    get(grads, param::frame_w) += da.transpose() * cache.x;
    get(grads, param::frame_b).col(0) += da.colwise().sum().transpose();
}

Vec project_clip(const ParamSet& params, const Vec& h, ProjectCache* cache) {
    const Mat& w = get(params, param::clip_w);
    if (h.size() != w.cols()) throw ShapeError("feature dimension mismatch in clip head");
    Vec pre = w * h + get(params, param::clip_b).col(0);
    double norm = pre.norm();
    Vec z = normalized(pre);
    if (cache) {
        cache->input = h;
        cache->z = z;
        cache->norm = norm;
    }
    return z;
}

Vec project_clip_backward(const ParamSet& params, const ProjectCache& cache, const Vec& dz,
                          ParamSet& grads) {
    Vec dpre = normalize_backward(cache.z, cache.norm, dz);
    get(grads, param::clip_w) += dpre * cache.input.transpose();
    get(grads, param::clip_b).col(0) += dpre;
    return get(params, param::clip_w).transpose() * dpre;
}

Vec encode_clip(const ParamSet& params, const Mat& clip, ClipCache* cache) {
    Vec h = encode_backbone(params, clip, cache ? &cache->backbone : nullptr);
    return project_clip(params, h, cache ? &cache->head : nullptr);
}

void encode_clip_backward(const ParamSet& params, const ClipCache& cache, const Vec& dz,
                          ParamSet& grads) {
    Vec dh = project_clip_backward(params, cache.head, dz, grads);
    backbone_backward(params, cache.backbone, dh, grads);
}

DualRep project_dual(const ParamSet& params, const Mat& clip, int segments, DualCache* cache) {
    const Mat& w1 = get(params, param::dual_hidden_w);
    const Mat& b1 = get(params, param::dual_hidden_b);
    const Mat& w2 = get(params, param::dual_out_w);
    const Mat& b2 = get(params, param::dual_out_b);
    auto parts = split_subclips(clip, segments);
    DualRep out;
    out.reserve(segments);
    if (cache) cache->segments.assign(segments, {});
    for (int s = 0; s < segments; ++s) {
        BackboneCache* bc = cache ? &cache->segments[s].backbone : nullptr;
        Vec h = encode_backbone(params, parts[s], bc);
        Vec hidden = (w1 * h + b1.col(0)).array().tanh();
        Vec pre = w2 * hidden + b2.col(0);
        double norm = pre.norm();
        Vec z = normalized(pre);
        if (cache) {
            auto& sc = cache->segments[s];
            sc.h = h;
            sc.hidden = hidden;
            sc.z = z;
            sc.norm = norm;
        }
        out.push_back(std::move(z));
    }
    return out;
}

void project_dual_backward(const ParamSet& params, const DualCache& cache, const DualRep& dparts,
                           ParamSet& grads) {
    if (dparts.size() != cache.segments.size()) throw ShapeError("dual gradient size mismatch");
    const Mat& w1 = get(params, param::dual_hidden_w);
    const Mat& w2 = get(params, param::dual_out_w);
    for (std::size_t s = 0; s < cache.segments.size(); ++s) {
        const auto& sc = cache.segments[s];
        Vec dpre = normalize_backward(sc.z, sc.norm, dparts[s]);
        get(grads, param::dual_out_w) += dpre * sc.hidden.transpose();
        get(grads, param::dual_out_b).col(0) += dpre;
        Vec da = ((w2.transpose() * dpre).array() * (1.0 - sc.hidden.array().square())).matrix();
        get(grads, param::dual_hidden_w) += da * sc.h.transpose();
        get(grads, param::dual_hidden_b).col(0) += da;
        backbone_backward(params, sc.backbone, w1.transpose() * da, grads);
    }
}

namespace {

Vec concat_parts(const DualRep& parts) {
    Eigen::Index n = 0;
    for (const auto& p : parts) n += p.size();
    Vec x(n);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        x.segment(at, p.size()) = p;
        at += p.size();
    }
    return x;
}

}  // namespace

Vec order_logits(const ParamSet& params, const DualRep& parts) {
    const Mat& w = get(params, param::order_w);
    Vec x = concat_parts(parts);
    if (x.size() != w.cols()) throw ShapeError("order head input dimension mismatch");
    return w * x + get(params, param::order_b).col(0);
}

DualRep order_logits_backward(const ParamSet& params, const DualRep& parts, const Vec& dlogits,
                              ParamSet& grads) {
    const Mat& w = get(params, param::order_w);
    Vec x = concat_parts(parts);
    get(grads, param::order_w) += dlogits * x.transpose();
    get(grads, param::order_b).col(0) += dlogits;
    Vec dx = w.transpose() * dlogits;
    DualRep out;
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.push_back(dx.segment(at, p.size()));
        at += p.size();
    }
    return out;
}

DualRep unpermute_parts(const DualRep& parts, const std::vector<int>& perm) {
    if (parts.size() != perm.size()) throw ShapeError("permutation size mismatch");
    DualRep out(parts.size());
    for (std::size_t j = 0; j < perm.size(); ++j) out[perm[j]] = parts[j];
    return out;
}

DualRep zeros_like(const DualRep& rep) {
    DualRep out;
    for (const auto& p : rep) out.push_back(Vec::Zero(p.size()));
    return out;
}

void save_params(const ParamSet& params, const std::filesystem::path& stem) {
    std::ostringstream manifest;
    std::vector<double> flat;
    for (const auto& [name, m] : params) {
        manifest << name << " " << m.rows() << " " << m.cols() << " " << flat.size() << "\n";
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
        }
    }
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    write_text(stem.string() + ".manifest", manifest.str());
    write_f64_le(stem.string() + ".bin", flat);
}

ParamSet load_params(const std::filesystem::path& stem) {
    std::istringstream manifest(read_text(stem.string() + ".manifest"));
    auto flat = read_f64_le(stem.string() + ".bin");
    ParamSet params;
    std::string line;
    std::size_t expected = 0;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name;
        long rows = -1, cols = -1;
        std::size_t offset = 0;
        if (!(ls >> name >> rows >> cols >> offset) || rows < 0 || cols < 0) {
            throw ManifestError("malformed checkpoint manifest line: " + line);
        }
        if (offset != expected || offset + rows * cols > flat.size()) {
            throw ManifestError("checkpoint offsets inconsistent at " + name);
        }
        Mat m(rows, cols);
        for (long r = 0; r < rows; ++r) {
            for (long c = 0; c < cols; ++c) m(r, c) = flat[offset + r * cols + c];
        }
        params[name] = std::move(m);
        expected = offset + rows * cols;
    }
    if (expected != flat.size()) throw ManifestError("checkpoint payload has trailing data");
    return params;
}

}  // namespace dualrep
