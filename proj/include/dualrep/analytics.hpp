#pragma once

#include "dualrep/encoder.hpp"
#include "dualrep/synthetic_video.hpp"
#include "dualrep/trainers.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace dualrep {

struct EvalConfig {
    int clip_length = 8;
    int stride = 2;
    int clips_per_video = 10;
    std::vector<int> ks{1, 5, 10, 20, 50};
};

/// Normalized backbone features of `count` evenly spaced clips.
std::vector<Vec> clip_backbone_features(const ParamSet& params, const Video& video, int length,
                                        int stride, int count);
/// Mean of the clip features, re-normalized.
Vec video_feature(const ParamSet& params, const Video& video, const EvalConfig& eval);

inline constexpr double kDiscriminationSentinel = std::numeric_limits<double>::infinity();

struct VarianceReport {
    double sigma_inter = 0;
    double sigma_intra = 0;
    double discrimination = 0;  // +inf when sigma_intra == 0
    std::map<int, Vec> per_video_means;
};

/// groups[k] holds the clip features of video ids[k] (ids default to 0..N-1).
VarianceReport compute_variances(const std::vector<std::vector<Vec>>& groups,
                                 const std::vector<int>& ids = {});
VarianceReport variance_of_encoder(const ParamSet& params, const Dataset& data,
                                   const std::vector<int>& videos, const EvalConfig& eval);

struct RetrievalResult {
    std::vector<int> ks;
    std::vector<std::vector<int>> ranked;     // per query, gallery indices by decreasing cosine
    std::vector<std::vector<bool>> hits;      // per query, per k
    std::vector<double> accuracy;             // per k
};

RetrievalResult retrieval_topk(const std::vector<Vec>& queries, const std::vector<int>& query_labels,
                               const std::vector<Vec>& gallery, const std::vector<int>& gallery_labels,
                               const std::vector<int>& ks);
/// Test videos query the training videos with video-level backbone features.
RetrievalResult retrieval_of_encoder(const ParamSet& params, const Dataset& data, const Split& split,
                                     const EvalConfig& eval);

struct FinetuneConfig {
    int epochs = 150;
    int batch_size = 16;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int workers = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct FinetuneResult {
    double accuracy = 0;
    std::map<int, double> per_class_accuracy;
    std::map<int, int> per_class_count;
    std::vector<int> predictions;
    std::vector<int> labels;
};

/// Trains a linear classifier on the backbone output together with the backbone itself,
/// then averages class probabilities over clips_per_video test clips.
FinetuneResult finetune_classifier(const ParamSet& pretrained, const Dataset& data, const Split& split,
                                   int num_classes, const FinetuneConfig& cfg, const EvalConfig& eval);

struct ClassDelta {
    int label = 0;
    double before = 0;
    double after = 0;
    double delta = 0;  // after - before
};

/// Sorted by decreasing |delta|; ties keep ascending label order.
std::vector<ClassDelta> per_class_improvement(const std::map<int, double>& model_a,
                                              const std::map<int, double>& model_b);

struct ThetaRow {
    double theta = 0;
    double retrieval_top1 = 0;
    double finetune_accuracy = 0;
    bool finite = true;
};

std::vector<ThetaRow> theta_sweep(const TrainConfig& base, const Dataset& data, const Split& split,
                                  const FinetuneConfig& ft, const EvalConfig& eval,
                                  const std::vector<double>& thetas);
std::string theta_sweep_csv(const std::vector<ThetaRow>& rows);

/// Header plus one tab-separated row per video: id, label, features (17 significant digits).
std::string embeddings_tsv(const ParamSet& params, const Dataset& data, const std::vector<int>& videos,
                           const EvalConfig& eval);
void export_embeddings(const ParamSet& params, const Dataset& data, const std::vector<int>& videos,
                       const EvalConfig& eval, const std::filesystem::path& path);

}  // namespace dualrep
