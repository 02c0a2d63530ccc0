#include "dualrep/config.hpp"

#include "dualrep/errors.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace dualrep {

TrainConfig ExperimentConfig::train_config(int workers) const {
    TrainConfig t;
    t.framework = framework;
    t.pretext = pretext;
    t.hp = loss;
    t.augment = augment;
    t.dims = model;
    t.dims.frame_dim = data.frame_dim;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.lr = lr;
    t.lr_milestones = lr_milestones;
    t.lr_decay = lr_decay;
    t.sgd_momentum = sgd_momentum;
    t.weight_decay = weight_decay;
    t.clip_length = clip_length;
    t.stride = stride;
    t.checkpoint_every = checkpoint_every;
    t.workers = workers;
    t.seed = seed;
    return t;
}

EvalConfig ExperimentConfig::eval_config() const {
    EvalConfig e;
    e.clip_length = clip_length;
    e.stride = stride;
    e.clips_per_video = clips_per_video;
    e.ks = ks;
    return e;
}

FinetuneConfig ExperimentConfig::finetune_config(int workers) const {
    FinetuneConfig f;
    f.epochs = finetune_epochs;
    f.lr = finetune_lr;
    f.batch_size = finetune_batch_size;
    f.momentum = sgd_momentum;
    f.weight_decay = weight_decay;
    f.workers = workers;
    f.seed = seed;
    return f;
}

namespace {

using Check = std::function<std::string(const ExperimentConfig&)>;

struct Field {
    std::string key;
    std::function<void(ExperimentConfig&, const YAML::Node&)> set;
    std::function<void(const ExperimentConfig&, YAML::Emitter&)> emit;
    Check check;
};

template <typename T>
void emit_value(YAML::Emitter& e, const T& v) {
    if constexpr (std::is_same_v<T, double>) {
        e << format_double(v);
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
        e << YAML::Flow << YAML::BeginSeq;
        for (double x : v) e << format_double(x);
        e << YAML::EndSeq;
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
        e << YAML::Flow << YAML::BeginSeq;
        for (int x : v) e << x;
        e << YAML::EndSeq;
    } else {
        e << v;
    }
}

template <typename T, typename Acc>
Field field(std::string key, Acc acc, Check check = {}) {
    Field f;
    f.key = std::move(key);
    f.set = [acc](ExperimentConfig& c, const YAML::Node& n) { acc(c) = n.as<T>(); };
    f.emit = [acc](const ExperimentConfig& c, YAML::Emitter& e) {
        emit_value<T>(e, acc(const_cast<ExperimentConfig&>(c)));
    };
    f.check = std::move(check);
    return f;
}

Check positive_int(std::function<int(const ExperimentConfig&)> get) {
    return [get](const ExperimentConfig& c) { return get(c) > 0 ? "" : std::string("must be positive"); };
}

Check positive(std::function<double(const ExperimentConfig&)> get) {
    return [get](const ExperimentConfig& c) { return get(c) > 0 ? "" : std::string("must be positive"); };
}

Check non_negative(std::function<double(const ExperimentConfig&)> get) {
    return [get](const ExperimentConfig& c) { return get(c) >= 0 ? "" : std::string("must be non-negative"); };
}

#define ACC(T, expr) [](ExperimentConfig& c) -> T& { return c.expr; }
#define GET(expr) [](const ExperimentConfig& c) { return c.expr; }

const std::vector<Field>& registry() {
    static const std::vector<Field> fields = [] {
        std::vector<Field> f;
        Field fw;
        fw.key = "framework";
        fw.set = [](ExperimentConfig& c, const YAML::Node& n) { c.framework = parse_framework(n.as<std::string>()); };
        fw.emit = [](const ExperimentConfig& c, YAML::Emitter& e) { e << to_string(c.framework); };
        f.push_back(fw);
        Field pt;
        pt.key = "pretext";
        pt.set = [](ExperimentConfig& c, const YAML::Node& n) { c.pretext = parse_pretext(n.as<std::string>()); };
        pt.emit = [](const ExperimentConfig& c, YAML::Emitter& e) { e << to_string(c.pretext); };
        f.push_back(pt);
        f.push_back(field<std::uint64_t>("seed", ACC(std::uint64_t, seed)));
        f.push_back(field<std::string>("output_dir", ACC(std::string, output_dir)));

        f.push_back(field<int>("data.num_classes", ACC(int, data.num_classes), positive_int(GET(data.num_classes))));
        f.push_back(field<int>("data.videos_per_class", ACC(int, data.videos_per_class),
                               positive_int(GET(data.videos_per_class))));
        f.push_back(field<int>("data.frames_per_video", ACC(int, data.frames_per_video),
                               positive_int(GET(data.frames_per_video))));
        f.push_back(field<int>("data.frame_dim", ACC(int, data.frame_dim), positive_int(GET(data.frame_dim))));
        f.push_back(field<double>("data.class_separation", ACC(double, data.class_separation),
                                  non_negative(GET(data.class_separation))));
        f.push_back(field<double>("data.drift_scale", ACC(double, data.drift_scale), non_negative(GET(data.drift_scale))));
        f.push_back(field<double>("data.noise_scale", ACC(double, data.noise_scale), non_negative(GET(data.noise_scale))));
        f.push_back(field<double>("data.instance_spread", ACC(double, data.instance_spread),
                                  non_negative(GET(data.instance_spread))));
        f.push_back(field<std::uint64_t>("data.seed", ACC(std::uint64_t, data.seed)));
        f.push_back(field<int>("data.train_per_class", ACC(int, train_per_class), [](const ExperimentConfig& c) {
            if (c.train_per_class < 1) return std::string("must be positive");
            if (c.train_per_class > c.data.videos_per_class) return std::string("exceeds data.videos_per_class");
            return std::string();
        }));
        f.push_back(field<std::string>("data.path", ACC(std::string, data_path)));

        f.push_back(field<double>("augment.jitter_scale", ACC(double, augment.jitter_scale),
                                  non_negative(GET(augment.jitter_scale))));
        f.push_back(field<double>("augment.channel_scale_min", ACC(double, augment.channel_scale_min)));
        f.push_back(field<double>("augment.channel_scale_max", ACC(double, augment.channel_scale_max),
                                  [](const ExperimentConfig& c) {
                                      return c.augment.channel_scale_min <= c.augment.channel_scale_max
                                                 ? std::string()
                                                 : std::string("must be >= augment.channel_scale_min");
                                  }));
        f.push_back(field<double>("augment.crop_fraction", ACC(double, augment.crop_fraction),
                                  [](const ExperimentConfig& c) {
                                      return c.augment.crop_fraction > 0 && c.augment.crop_fraction <= 1
                                                 ? std::string()
                                                 : std::string("must lie in (0, 1]");
                                  }));

        f.push_back(field<int>("model.hidden_dim", ACC(int, model.hidden_dim), positive_int(GET(model.hidden_dim))));
        f.push_back(field<int>("model.feature_dim", ACC(int, model.feature_dim), positive_int(GET(model.feature_dim))));
        f.push_back(field<int>("model.projection_dim", ACC(int, model.projection_dim),
                               positive_int(GET(model.projection_dim))));
        f.push_back(field<int>("model.dual_hidden_dim", ACC(int, model.dual_hidden_dim),
                               positive_int(GET(model.dual_hidden_dim))));

        f.push_back(field<double>("loss.tau", ACC(double, loss.tau), positive(GET(loss.tau))));
        f.push_back(field<double>("loss.tau_tc", ACC(double, loss.tau_tc), positive(GET(loss.tau_tc))));
        f.push_back(field<double>("loss.theta", ACC(double, loss.theta), positive(GET(loss.theta))));
        f.push_back(field<double>("loss.lambda1", ACC(double, loss.lambda1), non_negative(GET(loss.lambda1))));
        f.push_back(field<double>("loss.lambda2", ACC(double, loss.lambda2), non_negative(GET(loss.lambda2))));
        f.push_back(field<int>("loss.segments", ACC(int, loss.segments), [](const ExperimentConfig& c) {
            if (c.loss.segments < 2) return std::string("must be at least 2");
            if (c.pretext == Pretext::OrderPrediction && c.loss.segments > 8) {
                return std::string("order prediction supports at most 8 segments");
            }
            return std::string();
        }));
        f.push_back(field<int>("loss.queue_size", ACC(int, loss.queue_size), [](const ExperimentConfig& c) {
            if (c.loss.queue_size < 1) return std::string("must be positive");
            if (c.framework == Framework::MoCo && c.loss.queue_size < c.batch_size) {
                return std::string("must be at least train.batch_size for moco");
            }
            return std::string();
        }));
        f.push_back(field<double>("loss.momentum", ACC(double, loss.momentum), [](const ExperimentConfig& c) {
            return c.loss.momentum >= 0 && c.loss.momentum <= 1 ? std::string() : std::string("must lie in [0, 1]");
        }));

        f.push_back(field<int>("train.epochs", ACC(int, epochs), non_negative(GET(epochs))));
        f.push_back(field<int>("train.batch_size", ACC(int, batch_size), [](const ExperimentConfig& c) {
            return c.batch_size >= 2 ? std::string() : std::string("must be at least 2");
        }));
        f.push_back(field<double>("train.lr", ACC(double, lr), non_negative(GET(lr))));
        f.push_back(field<std::vector<int>>("train.lr_milestones", ACC(std::vector<int>, lr_milestones)));
        f.push_back(field<double>("train.lr_decay", ACC(double, lr_decay), positive(GET(lr_decay))));
        f.push_back(field<double>("train.sgd_momentum", ACC(double, sgd_momentum), [](const ExperimentConfig& c) {
            return c.sgd_momentum >= 0 && c.sgd_momentum < 1 ? std::string() : std::string("must lie in [0, 1)");
        }));
        f.push_back(field<double>("train.weight_decay", ACC(double, weight_decay), non_negative(GET(weight_decay))));
        f.push_back(field<int>("train.clip_length", ACC(int, clip_length), [](const ExperimentConfig& c) {
            if (c.clip_length < 1) return std::string("must be positive");
            if (c.clip_length % c.loss.segments != 0) return std::string("must be divisible by loss.segments");
            return std::string();
        }));
        f.push_back(field<int>("train.stride", ACC(int, stride), [](const ExperimentConfig& c) {
            if (c.stride < 1) return std::string("must be positive");
            if (static_cast<long>(c.clip_length) * c.stride > c.data.frames_per_video) {
                return std::string("clip_length * stride exceeds data.frames_per_video");
            }
            return std::string();
        }));
        f.push_back(field<int>("train.checkpoint_every", ACC(int, checkpoint_every), non_negative(GET(checkpoint_every))));

        f.push_back(field<int>("eval.clips_per_video", ACC(int, clips_per_video), positive_int(GET(clips_per_video))));
        f.push_back(field<std::vector<int>>("eval.ks", ACC(std::vector<int>, ks), [](const ExperimentConfig& c) {
            if (c.ks.empty()) return std::string("must not be empty");
            for (int k : c.ks) {
                if (k < 1) return std::string("entries must be positive");
            }
            return std::string();
        }));
        f.push_back(field<std::string>("eval.checkpoint", ACC(std::string, checkpoint)));
        f.push_back(field<int>("eval.finetune_epochs", ACC(int, finetune_epochs), non_negative(GET(finetune_epochs))));
        f.push_back(field<double>("eval.finetune_lr", ACC(double, finetune_lr), non_negative(GET(finetune_lr))));
        f.push_back(field<int>("eval.finetune_batch_size", ACC(int, finetune_batch_size),
                               positive_int(GET(finetune_batch_size))));
        f.push_back(field<std::vector<double>>("eval.thetas", ACC(std::vector<double>, thetas),
                                               [](const ExperimentConfig& c) {
                                                   for (double t : c.thetas) {
                                                       if (!(t > 0)) return std::string("entries must be positive");
                                                   }
                                                   return std::string();
                                               }));
        f.push_back(field<int>("eval.gradcheck_seeds", ACC(int, gradcheck_seeds), positive_int(GET(gradcheck_seeds))));
        f.push_back(field<int>("eval.oracle_instances", ACC(int, oracle_instances), positive_int(GET(oracle_instances))));
        return f;
    }();
    return fields;
}

#undef ACC
#undef GET

const Field* find_field(const std::string& key) {
    for (const auto& f : registry()) {
        if (f.key == key) return &f;
    }
    return nullptr;
}

bool is_section(const std::string& name) {
    const std::string prefix = name + ".";
    for (const auto& f : registry()) {
        if (f.key.rfind(prefix, 0) == 0) return true;
    }
    return false;
}

std::string where(const std::string& source, int line) {
    return line > 0 ? source + ":" + std::to_string(line) : source;
}

void set_value(ExperimentConfig& cfg, const std::string& key, const YAML::Node& value,
               const std::string& location, std::map<std::string, std::string>& origin) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError(location + ": unknown config key '" + key + "'");
    try {
        f->set(cfg, value);
    } catch (const YAML::Exception&) {
        throw ConfigError(location + ": invalid value for '" + key + "'");
    } catch (const ConfigError& e) {
        throw ConfigError(location + ": " + key + ": " + e.what());
    }
    origin[key] = location;
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : registry()) keys.push_back(f.key);
    return keys;
}

ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source,
                              const std::vector<std::string>& overrides) {
    ExperimentConfig cfg;
    std::map<std::string, std::string> origin;
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(where(source, e.mark.line + 1) + ": YAML syntax error: " + e.msg);
    }
    if (root && !root.IsNull()) {
        if (!root.IsMap()) throw ConfigError(source + ": top level must be a mapping");
        for (auto it = root.begin(); it != root.end(); ++it) {
            const std::string key = it->first.as<std::string>();
            const int line = it->first.Mark().line + 1;
            if (it->second.IsMap() && is_section(key)) {
                for (auto jt = it->second.begin(); jt != it->second.end(); ++jt) {
                    const std::string full = key + "." + jt->first.as<std::string>();
                    set_value(cfg, full, jt->second, where(source, jt->first.Mark().line + 1), origin);
                }
            } else if (is_section(key)) {
                throw ConfigError(where(source, line) + ": section '" + key + "' must be a mapping");
            } else {
                set_value(cfg, key, it->second, where(source, line), origin);
            }
        }
    }
    for (const auto& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("--set expects key=value, got '" + ov + "'");
        }
        const std::string key = ov.substr(0, eq);
        YAML::Node value;
        try {
            value = YAML::Load(ov.substr(eq + 1));
        } catch (const YAML::Exception&) {
            throw ConfigError("--set " + key + ": cannot parse value");
        }
        set_value(cfg, key, value, "--set " + key, origin);
    }
    for (const auto& f : registry()) {
        if (!f.check) continue;
        std::string msg = f.check(cfg);
        if (!msg.empty()) {
            auto it = origin.find(f.key);
            std::string loc = it != origin.end() ? it->second : "default";
            throw ConfigError(loc + ": " + f.key + " " + msg);
        }
    }
    try {
        cfg.data.validate();
        cfg.train_config(1).validate();
        cfg.finetune_config(1).validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path, overrides);
}

std::string dump_config(const ExperimentConfig& cfg) {
    YAML::Emitter e;
    e << YAML::BeginMap;
    std::string section;
    for (const auto& f : registry()) {
        auto dot = f.key.find('.');
        std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
        std::string leaf = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
        if (sec != section) {
            if (!section.empty()) e << YAML::EndMap;
            if (!sec.empty()) e << YAML::Key << sec << YAML::Value << YAML::BeginMap;
            section = sec;
        }
        e << YAML::Key << leaf << YAML::Value;
        f.emit(cfg, e);
    }
    if (!section.empty()) e << YAML::EndMap;
    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

}  // namespace dualrep
