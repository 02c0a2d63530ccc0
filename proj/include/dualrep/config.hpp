#pragma once

#include "dualrep/analytics.hpp"
#include "dualrep/synthetic_video.hpp"
#include "dualrep/trainers.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dualrep {

struct ExperimentConfig {
    Framework framework = Framework::SimCLR;
    Pretext pretext = Pretext::ShuffleRank;
    std::uint64_t seed = 0;
    std::string output_dir;

    VideoSpec data;
    int train_per_class = 16;
    std::string data_path;  // load a saved dataset instead of generating one

    AugmentConfig augment;
    EncoderDims model;
    Hyperparams loss;

    int epochs = 200;
    int batch_size = 16;
    double lr = 0.01;
    std::vector<int> lr_milestones{120, 160};
    double lr_decay = 0.1;
    double sgd_momentum = 0.9;
    double weight_decay = 1e-4;
    int clip_length = 8;
    int stride = 2;
    int checkpoint_every = 0;

    int clips_per_video = 10;
    std::vector<int> ks{1, 5, 10, 20, 50};
    std::string checkpoint;  // checkpoint directory evaluated by finetune/retrieve/analyze-variance
    int finetune_epochs = 150;
    double finetune_lr = 0.01;
    int finetune_batch_size = 16;
    std::vector<double> thetas{1.0, 0.5, 0.1, 0.05, 0.01};
    int gradcheck_seeds = 5;
    int oracle_instances = 20;

    TrainConfig train_config(int workers) const;
    EvalConfig eval_config() const;
    FinetuneConfig finetune_config(int workers) const;
};

/// Every accepted key, in dotted form ("train.lr").
std::vector<std::string> config_keys();

/// Parses YAML text on top of the defaults, then applies "key=value" overrides.
/// Unknown keys, bad values and failed validation raise ConfigError naming the key and,
/// for file input, "<source>:<line>".
ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source,
                              const std::vector<std::string>& overrides = {});
ExperimentConfig load_config_file(const std::string& path, const std::vector<std::string>& overrides = {});

/// Fully resolved configuration as YAML; parse_config(dump_config(c)) == c.
std::string dump_config(const ExperimentConfig& cfg);

}  // namespace dualrep
