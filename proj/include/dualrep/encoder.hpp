#pragma once

#include "dualrep/numeric.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dualrep {

struct EncoderDims {
    int frame_dim = 32;
    int hidden_dim = 64;       // per-frame stage width
    int feature_dim = 32;      // backbone output h
    int projection_dim = 16;   // z and dual parts
    int dual_hidden_dim = 32;  // hidden layer of the dual head
    int segments = 2;
    bool order_head = false;   // adds a S!-way classifier on the dual parts

    void validate() const;
};

/// Named parameter tensors; biases are stored as column vectors.
/// Iteration order (std::map) is the manifest order.
using ParamSet = std::map<std::string, Mat>;

/// Ordered sub-clip features (q^1, ..., q^S).
using DualRep = std::vector<Vec>;

namespace param {
inline constexpr const char* frame_w = "backbone.frame.weight";
inline constexpr const char* frame_b = "backbone.frame.bias";
inline constexpr const char* mix_w = "backbone.mix.weight";
inline constexpr const char* mix_b = "backbone.mix.bias";
inline constexpr const char* clip_w = "clip_head.weight";
inline constexpr const char* clip_b = "clip_head.bias";
inline constexpr const char* dual_hidden_w = "dual_head.hidden.weight";
inline constexpr const char* dual_hidden_b = "dual_head.hidden.bias";
inline constexpr const char* dual_out_w = "dual_head.out.weight";
inline constexpr const char* dual_out_b = "dual_head.out.bias";
inline constexpr const char* order_w = "order_head.weight";
inline constexpr const char* order_b = "order_head.bias";
}  // namespace param

int factorial(int n);

/// uniform(-a, a), a = 1/sqrt(fan_in), for weights and biases alike.
ParamSet init_params(const EncoderDims& dims, std::uint64_t seed);
EncoderDims infer_dims(const ParamSet& params, int segments);

ParamSet zeros_like(const ParamSet& params);
bool same_manifest(const ParamSet& a, const ParamSet& b);
void check_same_manifest(const ParamSet& a, const ParamSet& b);
/// a += alpha * b
void axpy(ParamSet& a, double alpha, const ParamSet& b);
bool params_finite(const ParamSet& params);
double max_abs_diff(const ParamSet& a, const ParamSet& b);

/// key <- m * key + (1 - m) * query, for every tensor.
void momentum_update(ParamSet& key, const ParamSet& query, double m);

struct BackboneCache {
    Mat x;       // L x frame_dim
    Mat act;     // L x hidden_dim, tanh output
    Vec pooled;  // mean over frames of act
};

/// h = W_mix * mean_t tanh(W_frame x_t + b_frame) + b_mix
Vec encode_backbone(const ParamSet& params, const Mat& clip, BackboneCache* cache = nullptr);
void backbone_backward(const ParamSet& params, const BackboneCache& cache, const Vec& dh,
                       ParamSet& grads);

struct ProjectCache {
    Vec input;
    Vec z;
    double norm = 0;
};

/// z = normalize(W_clip h + b_clip)
Vec project_clip(const ParamSet& params, const Vec& h, ProjectCache* cache = nullptr);
/// Returns dL/dh and accumulates parameter gradients.
Vec project_clip_backward(const ParamSet& params, const ProjectCache& cache, const Vec& dz,
                          ParamSet& grads);

struct ClipCache {
    BackboneCache backbone;
    ProjectCache head;
};

/// Backbone followed by the clip head.
Vec encode_clip(const ParamSet& params, const Mat& clip, ClipCache* cache = nullptr);
void encode_clip_backward(const ParamSet& params, const ClipCache& cache, const Vec& dz,
                          ParamSet& grads);

struct DualSegmentCache {
    BackboneCache backbone;
    Vec h;
    Vec hidden;  // tanh output
    Vec z;
    double norm = 0;
};

struct DualCache {
    std::vector<DualSegmentCache> segments;
};

/// Backbone plus dual head applied to each of the S sub-clips independently.
DualRep project_dual(const ParamSet& params, const Mat& clip, int segments,
                     DualCache* cache = nullptr);
void project_dual_backward(const ParamSet& params, const DualCache& cache, const DualRep& dparts,
                           ParamSet& grads);

/// Logits over the S! segment orders from the concatenated dual parts.
Vec order_logits(const ParamSet& params, const DualRep& parts);
/// Returns the gradient w.r.t. each part.
DualRep order_logits_backward(const ParamSet& params, const DualRep& parts, const Vec& dlogits,
                              ParamSet& grads);

/// Reorders parts so that result[perm[j]] = parts[j].
DualRep unpermute_parts(const DualRep& parts, const std::vector<int>& perm);
DualRep zeros_like(const DualRep& rep);

/// Writes <stem>.manifest ("name rows cols offset" per line) and <stem>.bin.
void save_params(const ParamSet& params, const std::filesystem::path& stem);
ParamSet load_params(const std::filesystem::path& stem);

}  // namespace dualrep
