#include "dualrep/analytics.hpp"

#include "dualrep/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dualrep {

std::vector<Vec> clip_backbone_features(const ParamSet& params, const Video& video, int length,
                                        int stride, int count) {
    std::vector<Vec> out;
    for (int start : uniform_clip_starts(static_cast<int>(video.frames.rows()), length, stride, count)) {
        out.push_back(normalized(encode_backbone(params, clip_at(video, length, stride, start).frames)));
    }
    return out;
}

Vec video_feature(const ParamSet& params, const Video& video, const EvalConfig& eval) {
    auto feats = clip_backbone_features(params, video, eval.clip_length, eval.stride, eval.clips_per_video);
    Vec mean = Vec::Zero(feats.front().size());
    for (const auto& f : feats) mean += f;
    return normalized(mean / static_cast<double>(feats.size()));
}

VarianceReport compute_variances(const std::vector<std::vector<Vec>>& groups,
                                 const std::vector<int>& ids) {
    const std::size_t n = groups.size();
    if (n < 2) throw ConfigError("inter-video variance needs at least 2 videos");
    if (!ids.empty() && ids.size() != n) throw ShapeError("video id count mismatch");
    VarianceReport rep;
    std::vector<Vec> means;
    double intra = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& g = groups[k];
        if (g.empty()) throw ConfigError("every video needs at least one clip");
        Vec mu = Vec::Zero(g.front().size());
        for (const auto& z : g) {
            if (z.size() != mu.size()) throw ShapeError("feature dimensions differ");
            mu += z;
        }
        mu /= static_cast<double>(g.size());
        // mean squared deviation via pairwise distances: exactly zero for identical clips
        double s = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            for (std::size_t j = i + 1; j < g.size(); ++j) s += (g[i] - g[j]).squaredNorm();
        }
        const double c = static_cast<double>(g.size());
        intra += s / (c * c);
        rep.per_video_means[ids.empty() ? static_cast<int>(k) : ids[k]] = mu;
        means.push_back(std::move(mu));
    }
    double inter = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (means[i].size() != means[0].size()) throw ShapeError("feature dimensions differ");
        for (std::size_t j = i + 1; j < n; ++j) inter += (means[i] - means[j]).squaredNorm();
    }
    rep.sigma_intra = intra / static_cast<double>(n);
    rep.sigma_inter = inter / (static_cast<double>(n) * static_cast<double>(n - 1));
    rep.discrimination = rep.sigma_intra == 0 ? kDiscriminationSentinel : rep.sigma_inter / rep.sigma_intra;
    return rep;
}

VarianceReport variance_of_encoder(const ParamSet& params, const Dataset& data,
                                   const std::vector<int>& videos, const EvalConfig& eval) {
    std::vector<std::vector<Vec>> groups;
    std::vector<int> ids;
    for (int v : videos) {
        const Video& video = data.videos.at(v);
        groups.push_back(clip_backbone_features(params, video, eval.clip_length, eval.stride,
                                                eval.clips_per_video));
        ids.push_back(video.id);
    }
    return compute_variances(groups, ids);
}

RetrievalResult retrieval_topk(const std::vector<Vec>& queries, const std::vector<int>& query_labels,
                               const std::vector<Vec>& gallery, const std::vector<int>& gallery_labels,
                               const std::vector<int>& ks) {
    if (gallery.empty()) throw ConfigError("retrieval needs a non-empty gallery");
    if (queries.size() != query_labels.size() || gallery.size() != gallery_labels.size()) {
        throw ShapeError("feature and label counts differ");
    }
    for (int k : ks) {
        if (k <= 0) throw ConfigError("k must be positive");
    }
    RetrievalResult res;
    res.ks = ks;
    res.accuracy.assign(ks.size(), 0.0);
    for (std::size_t q = 0; q < queries.size(); ++q) {
        std::vector<double> sim(gallery.size());
        for (std::size_t g = 0; g < gallery.size(); ++g) sim[g] = queries[q].dot(gallery[g]);
        std::vector<int> order(gallery.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sim[a] > sim[b]; });
        std::vector<bool> hit(ks.size(), false);
        for (std::size_t ki = 0; ki < ks.size(); ++ki) {
            const std::size_t top = std::min<std::size_t>(ks[ki], order.size());
            for (std::size_t r = 0; r < top && !hit[ki]; ++r) {
                hit[ki] = gallery_labels[order[r]] == query_labels[q];
            }
            if (hit[ki]) res.accuracy[ki] += 1.0;
        }
        res.ranked.push_back(std::move(order));
        res.hits.push_back(std::move(hit));
    }
    if (!queries.empty()) {
        for (auto& a : res.accuracy) a /= static_cast<double>(queries.size());
    }
    return res;
}

RetrievalResult retrieval_of_encoder(const ParamSet& params, const Dataset& data, const Split& split,
                                     const EvalConfig& eval) {
    std::vector<Vec> q, g;
    std::vector<int> ql, gl;
    for (int v : split.test) {
        q.push_back(video_feature(params, data.videos.at(v), eval));
        ql.push_back(data.videos[v].class_label);
    }
    for (int v : split.train) {
        g.push_back(video_feature(params, data.videos.at(v), eval));
        gl.push_back(data.videos[v].class_label);
    }
    return retrieval_topk(q, ql, g, gl, eval.ks);
}

void FinetuneConfig::validate() const {
    if (epochs < 0) throw ConfigError("finetune epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("finetune batch_size must be positive");
    if (!(lr >= 0)) throw ConfigError("finetune lr must be non-negative");
    if (workers < 1) throw ConfigError("workers must be at least 1");
}

namespace {

constexpr const char* kClsW = "classifier.weight";
constexpr const char* kClsB = "classifier.bias";

ParamSet classifier_params(const ParamSet& pretrained, int num_classes, std::uint64_t seed) {
    ParamSet p;
    for (const char* name : {param::frame_w, param::frame_b, param::mix_w, param::mix_b}) {
        auto it = pretrained.find(name);
        if (it == pretrained.end()) throw ManifestError(std::string("checkpoint lacks ") + name);
        p[name] = it->second;
    }
    const auto feat = p[param::mix_w].rows();
    Rng rng(seed);
    const double a = 1.0 / std::sqrt(static_cast<double>(feat));
    Mat w(num_classes, feat), b(num_classes, 1);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = a * (2.0 * uniform01(rng) - 1.0);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = a * (2.0 * uniform01(rng) - 1.0);
    p[kClsW] = w;
    p[kClsB] = b;
    return p;
}

Vec class_logits(const ParamSet& p, const Vec& h) { return p.at(kClsW) * h + p.at(kClsB).col(0); }

}  // namespace

FinetuneResult finetune_classifier(const ParamSet& pretrained, const Dataset& data, const Split& split,
                                   int num_classes, const FinetuneConfig& cfg, const EvalConfig& eval) {
    cfg.validate();
    if (num_classes < 1) throw ConfigError("num_classes must be positive");
    for (const auto* idx : {&split.train, &split.test}) {
        for (int v : *idx) {
            int label = data.videos.at(v).class_label;
            if (label < 0 || label >= num_classes) {
                throw ConfigError("label count mismatch: label " + std::to_string(label) +
                                  " with " + std::to_string(num_classes) + " classes");
            }
        }
    }
    ParamSet p = classifier_params(pretrained, num_classes, cfg.seed);
    ParamSet velocity = zeros_like(p);
    SgdOptimizer opt(cfg.momentum, cfg.weight_decay);
    Rng rng(cfg.seed ^ 0x2545F4914F6CDD1DULL);
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 0; epoch < cfg.epochs && !split.train.empty(); ++epoch) {
        std::vector<int> order = split.train;
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            std::swap(order[i], order[uniform_int(rng, 0, static_cast<int>(i))]);
        }
        for (std::size_t at = 0; at < order.size(); at += bs) {
            const std::size_t end = std::min(order.size(), at + bs);
            std::vector<Clip> clips;
            for (std::size_t k = at; k < end; ++k) {
                clips.push_back(sample_clip(data.videos[order[k]], eval.clip_length, eval.stride, rng));
            }
            const double inv = 1.0 / static_cast<double>(clips.size());
            std::vector<ParamSet> per(clips.size());
            parallel_for(clips.size(), cfg.workers, [&](std::size_t k) {
                ParamSet g = zeros_like(p);
                BackboneCache cache;
                Vec h = encode_backbone(p, clips[k].frames, &cache);
                Vec logits = class_logits(p, h);
                Vec prob = softmax(logits);
                prob[data.videos[order[at + k]].class_label] -= 1.0;
                Vec dlogits = inv * prob;
                g[kClsW] += dlogits * h.transpose();
                g[kClsB].col(0) += dlogits;
                backbone_backward(p, cache, p.at(kClsW).transpose() * dlogits, g);
                per[k] = std::move(g);
            });
            ParamSet grads = zeros_like(p);
            for (const auto& g : per) {
                for (auto& [name, m] : grads) m += g.at(name);
            }
            opt.step(p, velocity, grads, cfg.lr);
        }
    }

    FinetuneResult res;
    std::map<int, int> correct;
    for (int v : split.test) {
        const Video& video = data.videos.at(v);
        Vec prob = Vec::Zero(num_classes);
        auto starts = uniform_clip_starts(static_cast<int>(video.frames.rows()), eval.clip_length,
                                          eval.stride, eval.clips_per_video);
        for (int s : starts) {
            prob += softmax(class_logits(p, encode_backbone(p, clip_at(video, eval.clip_length, eval.stride, s).frames)));
        }
        prob /= static_cast<double>(starts.size());
        Eigen::Index pred = 0;
        prob.maxCoeff(&pred);
        res.predictions.push_back(static_cast<int>(pred));
        res.labels.push_back(video.class_label);
        res.per_class_count[video.class_label] += 1;
        correct[video.class_label] += pred == video.class_label ? 1 : 0;
    }
    int total_correct = 0;
    for (const auto& [label, count] : res.per_class_count) {
        res.per_class_accuracy[label] = static_cast<double>(correct[label]) / count;
        total_correct += correct[label];
    }
    res.accuracy = split.test.empty() ? 0.0 : static_cast<double>(total_correct) / split.test.size();
    return res;
}

std::vector<ClassDelta> per_class_improvement(const std::map<int, double>& model_a,
                                              const std::map<int, double>& model_b) {
    if (model_a.size() != model_b.size()) throw ConfigError("class sets differ");
    std::vector<ClassDelta> out;
    for (const auto& [label, a] : model_a) {
        auto it = model_b.find(label);
        if (it == model_b.end()) throw ConfigError("class sets differ");
        out.push_back({label, a, it->second, it->second - a});
    }
    std::stable_sort(out.begin(), out.end(), [](const ClassDelta& x, const ClassDelta& y) {
        return std::abs(x.delta) > std::abs(y.delta);
    });
    return out;
}

std::vector<ThetaRow> theta_sweep(const TrainConfig& base, const Dataset& data, const Split& split,
                                  const FinetuneConfig& ft, const EvalConfig& eval,
                                  const std::vector<double>& thetas) {
    std::vector<ThetaRow> rows;
    for (double theta : thetas) {
        TrainConfig cfg = base;
        cfg.hp.theta = theta;
        auto res = pretrain(cfg, data, split.train);
        ThetaRow row;
        row.theta = theta;
        row.finite = params_finite(res.state.params);
        for (const auto& r : res.rows) row.finite = row.finite && std::isfinite(r.m.l_total);
        row.retrieval_top1 = retrieval_of_encoder(res.state.params, data, split, eval).accuracy.at(0);
        row.finetune_accuracy =
            finetune_classifier(res.state.params, data, split, data.spec.num_classes, ft, eval).accuracy;
        rows.push_back(row);
    }
    return rows;
}

std::string theta_sweep_csv(const std::vector<ThetaRow>& rows) {
    std::ostringstream s;
    s << "theta,retrieval_top1,finetune_accuracy\n";
    for (const auto& r : rows) {
        s << format_double(r.theta) << "," << format_double(r.retrieval_top1) << ","
          << format_double(r.finetune_accuracy) << "\n";
    }
    return s.str();
}

std::string embeddings_tsv(const ParamSet& params, const Dataset& data, const std::vector<int>& videos,
                           const EvalConfig& eval) {
    std::ostringstream s;
    std::vector<Vec> feats;
    for (int v : videos) feats.push_back(video_feature(params, data.videos.at(v), eval));
    s << "video_id\tlabel";
    const Eigen::Index d = feats.empty() ? 0 : feats.front().size();
    for (Eigen::Index k = 0; k < d; ++k) s << "\tf" << k;
    s << "\n";
    for (std::size_t i = 0; i < videos.size(); ++i) {
        const Video& v = data.videos[videos[i]];
        s << v.id << "\t" << v.class_label;
        for (Eigen::Index k = 0; k < d; ++k) s << "\t" << format_double17(feats[i][k]);
        s << "\n";
    }
    return s.str();
}

void export_embeddings(const ParamSet& params, const Dataset& data, const std::vector<int>& videos,
                       const EvalConfig& eval, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_text(path, embeddings_tsv(params, data, videos, eval));
}

}  // namespace dualrep
