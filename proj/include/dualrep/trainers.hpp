#pragma once

#include "dualrep/encoder.hpp"
#include "dualrep/errors.hpp"
#include "dualrep/losses.hpp"
#include "dualrep/synthetic_video.hpp"

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dualrep {

enum class Framework { SimCLR, MoCo };
/// ShuffleRank is the dual-representation method; OrderPrediction replaces the ranking
/// loss with cross-entropy over segment orders. Contrast-only training is ShuffleRank
/// with lambda1 = lambda2 = 0.
enum class Pretext { ShuffleRank, OrderPrediction };

std::string to_string(Framework f);
std::string to_string(Pretext p);
Framework parse_framework(const std::string& s);
Pretext parse_pretext(const std::string& s);

struct TrainConfig {
    Framework framework = Framework::SimCLR;
    Pretext pretext = Pretext::ShuffleRank;
    Hyperparams hp;
    AugmentConfig augment;
    EncoderDims dims;  // frame_dim and segments are taken from the data and hp
    int epochs = 200;
    int batch_size = 16;
    double lr = 0.01;
    std::vector<int> lr_milestones{120, 160};
    double lr_decay = 0.1;
    double sgd_momentum = 0.9;
    double weight_decay = 1e-4;
    int clip_length = 8;
    int stride = 2;
    int checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
    int workers = 1;
    std::uint64_t seed = 0;

    void validate() const;
    EncoderDims encoder_dims(int frame_dim) const;
    double lr_at_epoch(int epoch) const;
};

/// v <- mu v + g + wd p ; p <- p - lr v
class SgdOptimizer {
public:
    SgdOptimizer(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
    void step(ParamSet& params, ParamSet& velocity, const ParamSet& grads, double lr) const;

private:
    double momentum_;
    double weight_decay_;
};

/// FIFO dictionary of detached keys.
template <typename T>
class NegativeQueue {
public:
    explicit NegativeQueue(std::size_t capacity = 0) : capacity_(capacity) {}
    /// Rebuilds a saved queue, oldest item first.
    NegativeQueue(std::size_t capacity, const std::vector<T>& items, std::uint64_t inserted)
        : capacity_(capacity), items_(items.begin(), items.end()), inserted_(inserted) {
        if (items_.size() > capacity_ || inserted_ < items_.size()) {
            throw ManifestError("inconsistent saved queue");
        }
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    std::uint64_t inserted() const { return inserted_; }

    void enqueue(const T& item) {
        if (capacity_ == 0) throw ConfigError("queue capacity is zero");
        items_.push_back(item);
        ++inserted_;
        while (items_.size() > capacity_) items_.pop_front();
    }
    void enqueue_batch(const std::vector<T>& batch) {
        for (const auto& item : batch) enqueue(item);
    }
    /// Removes and returns the oldest entry.
    T dequeue() {
        if (items_.empty()) throw RangeError("dequeue from empty queue");
        T front = std::move(items_.front());
        items_.pop_front();
        return front;
    }
    const T& operator[](std::size_t i) const { return items_[i]; }
    std::vector<T> items() const { return {items_.begin(), items_.end()}; }

private:
    std::size_t capacity_;
    std::deque<T> items_;
    std::uint64_t inserted_ = 0;
};

struct TrainState {
    ParamSet params;
    ParamSet velocity;
    ParamSet key_params;  // MoCo only
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    Rng rng;
    NegativeQueue<Vec> clip_queue;
    NegativeQueue<DualRep> dual_queue;
};

/// Fresh parameters from cfg.seed; MoCo key nets copy the query nets and the queues are
/// filled with normalized random vectors.
TrainState init_train_state(const TrainConfig& cfg, int frame_dim);

struct StepMetrics {
    double l_c = 0;
    double l_rank_unaug = 0;
    double l_rank_aug = 0;
    double l_tc = 0;
    double l_order = 0;
    double l_total = 0;
};

/// Random draws for one video: c1 is the raw clip that gets ranked, c2 the augmented
/// second view, tuple = (c1, augment(c1), shuffle(augment(c1))).
struct VideoDraw {
    Clip c1;
    Clip c2;
    TrainingTuple tuple;
};

std::vector<VideoDraw> draw_batch(Rng& rng, const TrainConfig& cfg,
                                  const std::vector<const Video*>& batch);

struct StepGradients {
    StepMetrics metrics;
    ParamSet grads;          // query / online nets
    ParamSet key_grads;      // MoCo: always zero
    std::vector<Vec> keys;   // MoCo: k+ to enqueue
    std::vector<DualRep> dual_keys;
};

StepGradients simclr_gradients(const ParamSet& params, const TrainConfig& cfg,
                               const std::vector<VideoDraw>& draws);
StepGradients moco_gradients(const TrainState& state, const TrainConfig& cfg,
                             const std::vector<VideoDraw>& draws);

StepMetrics simclr_step(TrainState& state, const TrainConfig& cfg,
                        const std::vector<const Video*>& batch, double lr);
StepMetrics moco_step(TrainState& state, const TrainConfig& cfg,
                      const std::vector<const Video*>& batch, double lr);

struct MetricsRow {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    StepMetrics m;
    double lr = 0;
};

std::string metrics_csv_header(Pretext pretext);
std::string metrics_csv_row(const MetricsRow& row, Pretext pretext);

void save_checkpoint(const TrainState& state, const std::filesystem::path& dir);
TrainState load_checkpoint(const std::filesystem::path& dir);

struct PretrainResult {
    TrainState state;
    std::vector<MetricsRow> rows;
};

/// Runs cfg.epochs epochs over `train` (indices into data.videos). When `out_dir` is set,
/// writes metrics.csv, checkpoints/ and, on a non-finite loss, diagnostic.txt.
PretrainResult pretrain(const TrainConfig& cfg, const Dataset& data, const std::vector<int>& train,
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace dualrep
