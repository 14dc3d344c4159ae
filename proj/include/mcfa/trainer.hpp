#pragma once

// End-to-end joint training on the three-stage joint loss: SGD with
// momentum, variant task masking, per-epoch loss/weight traces, cascade
// evaluation, the finite-difference gradient check and the four-variant
// ablation harness.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mcfa/cascade.hpp"
#include "mcfa/checkpoint.hpp"
#include "mcfa/data.hpp"
#include "mcfa/losses.hpp"
#include "mcfa/model.hpp"

namespace mcfa {

enum class Variant { MCFA, MCFA_FD_FAC, MCFA_FLL_FAC, MCFA_FAC };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::MCFA: return "MCFA";
        case Variant::MCFA_FD_FAC: return "MCFA_FD_FAC";
        case Variant::MCFA_FLL_FAC: return "MCFA_FLL_FAC";
        case Variant::MCFA_FAC: return "MCFA_FAC";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "MCFA") return Variant::MCFA;
    if (s == "MCFA_FD_FAC") return Variant::MCFA_FD_FAC;
    if (s == "MCFA_FLL_FAC") return Variant::MCFA_FLL_FAC;
    if (s == "MCFA_FAC") return Variant::MCFA_FAC;
    throw std::runtime_error("unknown variant '" + s + "'");
}

// Task sets by variant: FD = face detection (classification + box),
// FLL = facial landmark localization; FAC always trains.
inline TaskMask variant_tasks(Variant v) {
    switch (v) {
        case Variant::MCFA: return TaskMask::all();
        case Variant::MCFA_FD_FAC: return {true, true, false, true};
        case Variant::MCFA_FLL_FAC: return {true, false, true, true};
        case Variant::MCFA_FAC: return {false, false, false, true};
    }
    return {};
}

struct TrainConfig {
    Variant variant = Variant::MCFA;
    double learning_rate = 0.01;
    double momentum = 0.9;
    int epochs = 10;
    int batch_size = 8;
    std::uint64_t rng_seed = 1;
    ModelConfig model;
    CascadeThresholds thresholds;
    Weighting weighting = Weighting::dynamic;
    int threads = 1;
    double lr_decay_factor = 0.1;
    std::vector<double> lr_decay_at{0.6, 0.85};  // fractions of total epochs

    void validate() const {
        model.validate();
        thresholds.validate();
        if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
        if (momentum < 0.0 || momentum >= 1.0)
            throw std::invalid_argument("momentum must lie in [0,1)");
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (threads < 1) throw std::invalid_argument("threads must be >= 1");
        if (lr_decay_factor <= 0.0 || lr_decay_factor > 1.0)
            throw std::invalid_argument("lr_decay_factor must lie in (0,1]");
    }
};

struct EpochRecord {
    std::array<std::array<double, 4>, 3> mean_terms{};  // [stage][task], mean over samples
    double mean_joint = 0.0;
    std::array<std::vector<double>, 3> mean_dyn_weights;  // per stage
    double learning_rate = 0.0;
};

struct Metrics {
    std::vector<double> per_attribute_accuracy;
    double average_accuracy = 0.0;
    std::size_t evaluated = 0;
    std::size_t rejected_at_s = 0;
    std::size_t rejected_at_m = 0;
    std::vector<EpochRecord> loss_trace;  // filled by train()
};

inline void write_metrics(std::ostream& os, const Metrics& m) {
    os << "evaluated=" << m.evaluated << '\n';
    os << "rejected_at_s=" << m.rejected_at_s << '\n';
    os << "rejected_at_m=" << m.rejected_at_m << '\n';
    char buf[32];
    for (std::size_t q = 0; q < m.per_attribute_accuracy.size(); ++q) {
        std::snprintf(buf, sizeof(buf), "%.9g", m.per_attribute_accuracy[q]);
        os << "attr_" << q << "_accuracy=" << buf << '\n';
    }
    std::snprintf(buf, sizeof(buf), "%.9g", m.average_accuracy);
    os << "average_accuracy=" << buf << '\n';
}

// Per-attribute accuracy through the cascade; rejected samples are scored as
// all-attributes-negative and counted separately.
inline Metrics evaluate(const McfaModel& model, const DatasetManifest& manifest,
                        const CascadeThresholds& thresholds) {
    const ModelConfig& cfg = model.config();
    std::vector<Sample> attr_samples;
    for (const auto& rec : manifest.records)
        if (rec.kind == SampleKind::attribute)
            attr_samples.push_back(load_sample(manifest, rec, cfg.input_sides[0], cfg.in_channels));
    if (attr_samples.empty())
        throw std::invalid_argument("evaluate: manifest has no attribute annotations");

    auto [results, stats] = batch_predict(model, attr_samples, thresholds);
    const int d = cfg.num_attributes;
    Metrics m;
    m.evaluated = attr_samples.size();
    m.rejected_at_s = stats.rejected_s;
    m.rejected_at_m = stats.rejected_m;
    m.per_attribute_accuracy.assign(d, 0.0);
    for (std::size_t i = 0; i < attr_samples.size(); ++i) {
        const auto& truth = *attr_samples[i].attributes;
        for (int q = 0; q < d; ++q) {
            const int pred = results[i].status == PredictionStatus::accepted
                                 ? (*results[i].attr_decisions)[q]
                                 : 0;
            if (pred == truth[q]) m.per_attribute_accuracy[q] += 1.0;
        }
    }
    for (auto& a : m.per_attribute_accuracy) a /= static_cast<double>(attr_samples.size());
    m.average_accuracy =
        std::accumulate(m.per_attribute_accuracy.begin(), m.per_attribute_accuracy.end(), 0.0) /
        static_cast<double>(d);
    return m;
}

namespace detail {

struct SampleLoss {
    LossBreakdown breakdown;
    std::array<std::vector<double>, 3> dyn_weights;
};

// Forward + joint loss + backward for one sample; gradients accumulate into
// the given model's parameter tensors.
inline SampleLoss train_sample(const McfaModel& model, const Sample& sample, const TaskMask& tasks,
                               Weighting weighting) {
    Graph g;
    FullOutputs outs = forward_full(model, g, sample.image);
    SampleLoss sl;
    sl.breakdown = joint_loss(g, outs, sample, tasks, weighting);
    bool any_term = false;
    for (const auto& stage : sl.breakdown.present)
        for (bool p : stage) any_term |= p;
    if (any_term && std::isfinite(sl.breakdown.joint_value)) g.backward(sl.breakdown.joint);
    sl.dyn_weights = {outs.s.dyn_weights.values(), outs.m.dyn_weights.values(),
                      outs.l.dyn_weights.values()};
    return sl;
}

}  // namespace detail

struct TrainResult {
    McfaModel model;
    Metrics metrics;
};

// SGD with momentum on the variant-masked joint loss. Deterministic for a
// fixed config (threads included): batch gradients are per-sample sums
// merged in sample order, divided by the batch size.
inline TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest,
                         const std::filesystem::path& out_dir = {},
                         std::ostream* log = nullptr) {
    cfg.validate();
    if (manifest.records.empty()) throw std::invalid_argument("train: manifest is empty");
    const TaskMask tasks = variant_tasks(cfg.variant);
    bool has_attr = false, has_landmark = false;
    for (const auto& r : manifest.records) {
        has_attr |= r.kind == SampleKind::attribute;
        has_landmark |= r.kind == SampleKind::landmark;
    }
    if (tasks.use_attr && !has_attr)
        throw std::invalid_argument("train: variant requires attribute records");
    if (tasks.use_landmark && !has_landmark)
        throw std::invalid_argument("train: variant requires landmark records");
    if (manifest.num_attributes != cfg.model.num_attributes ||
        manifest.num_landmarks != cfg.model.num_landmarks)
        throw std::invalid_argument("train: manifest arities do not match model config");

    std::vector<Sample> dataset =
        load_samples(manifest, cfg.model.input_sides[0], cfg.model.in_channels);

    McfaModel model(cfg.model, cfg.rng_seed);
    auto params = model.named_params();
    std::vector<std::vector<double>> velocity(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        velocity[i].assign(params[i].tensor.size(), 0.0);

    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    Metrics metrics;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cfg.learning_rate;
        for (double frac : cfg.lr_decay_at)
            if (epoch >= static_cast<int>(frac * cfg.epochs)) lr *= cfg.lr_decay_factor;

        auto batches = make_batches(dataset, cfg.batch_size, cfg.rng_seed + 1 + epoch);

        EpochRecord rec;
        rec.learning_rate = lr;
        for (auto& w : rec.mean_dyn_weights) w.assign(cfg.model.num_attributes, 0.0);
        std::size_t samples_seen = 0;

        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto& batch = batches[b];
            model.zero_grad();
            std::vector<detail::SampleLoss> losses(batch.size());

            const int nthreads = std::min<int>(cfg.threads, static_cast<int>(batch.size()));
            if (nthreads <= 1) {
                for (std::size_t i = 0; i < batch.size(); ++i)
                    losses[i] = detail::train_sample(model, batch[i], tasks, cfg.weighting);
            } else {
                // data-parallel per-sample gradients on private model clones,
                // merged in fixed chunk order
                std::vector<McfaModel> clones;
                clones.reserve(nthreads);
                for (int t = 0; t < nthreads; ++t) clones.push_back(model.clone());
                std::vector<std::thread> pool;
                std::vector<std::string> errors(nthreads);
                const std::size_t chunk = (batch.size() + nthreads - 1) / nthreads;
                for (int t = 0; t < nthreads; ++t) {
                    pool.emplace_back([&, t] {
                        const std::size_t lo = t * chunk;
                        const std::size_t hi = std::min(batch.size(), lo + chunk);
                        try {
                            for (std::size_t i = lo; i < hi; ++i)
                                losses[i] =
                                    detail::train_sample(clones[t], batch[i], tasks, cfg.weighting);
                        } catch (const std::exception& e) {
                            errors[t] = e.what();
                        }
                    });
                }
                for (auto& th : pool) th.join();
                for (const auto& e : errors)
                    if (!e.empty()) throw std::runtime_error(e);
                for (int t = 0; t < nthreads; ++t) {
                    auto cp = clones[t].named_params();
                    for (std::size_t i = 0; i < params.size(); ++i) {
                        if (!cp[i].tensor.has_grad()) continue;
                        auto& dst = params[i].tensor.ensure_grad();
                        const auto& src = cp[i].tensor.grad();
                        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                    }
                }
            }

            for (std::size_t i = 0; i < batch.size(); ++i) {
                const auto& sl = losses[i];
                if (!std::isfinite(sl.breakdown.joint_value))
                    throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                             std::to_string(epoch) + " batch " + std::to_string(b));
                rec.mean_joint += sl.breakdown.joint_value;
                for (int j = 0; j < 3; ++j) {
                    for (int t = 0; t < 4; ++t)
                        if (sl.breakdown.present[j][t]) rec.mean_terms[j][t] += sl.breakdown.terms[j][t];
                    for (int q = 0; q < cfg.model.num_attributes; ++q)
                        rec.mean_dyn_weights[j][q] += sl.dyn_weights[j][q];
                }
                ++samples_seen;
            }

            // mean-gradient SGD step with momentum; absent gradients are zero
            const double inv_n = 1.0 / static_cast<double>(batch.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                const bool has_g = params[i].tensor.has_grad();
                const double* gr = has_g ? params[i].tensor.grad().data() : nullptr;
                auto& vel = velocity[i];
                auto& val = params[i].tensor.values();
                for (std::size_t j = 0; j < val.size(); ++j) {
                    vel[j] = cfg.momentum * vel[j] + (gr ? gr[j] : 0.0) * inv_n;
                    val[j] -= lr * vel[j];
                }
            }
        }

        const double inv_seen = 1.0 / static_cast<double>(samples_seen);
        rec.mean_joint *= inv_seen;
        for (int j = 0; j < 3; ++j) {
            for (int t = 0; t < 4; ++t) rec.mean_terms[j][t] *= inv_seen;
            for (auto& w : rec.mean_dyn_weights[j]) w *= inv_seen;
        }
        metrics.loss_trace.push_back(rec);

        if (!out_dir.empty()) save_model(model, out_dir / "model_last.ckpt");
        if (log) {
            double task_sums[4] = {0, 0, 0, 0};
            for (int j = 0; j < 3; ++j)
                for (int t = 0; t < 4; ++t) task_sums[t] += rec.mean_terms[j][t];
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "epoch %3d  lr %.5f  joint %.6f  cls %.4f  box %.4f  lm %.4f  attr %.4f",
                          epoch, lr, rec.mean_joint, task_sums[0], task_sums[1], task_sums[2],
                          task_sums[3]);
            *log << buf << '\n';
        }
    }

    if (has_attr) {
        Metrics eval = evaluate(model, manifest, cfg.thresholds);
        eval.loss_trace = std::move(metrics.loss_trace);
        metrics = std::move(eval);
    }
    if (!out_dir.empty()) {
        save_model(model, out_dir / "model_final.ckpt");
        std::ofstream mf(out_dir / "metrics.txt");
        write_metrics(mf, metrics);
    }
    return {std::move(model), std::move(metrics)};
}

// ---------------------------------------------------------------------------
// Gradient check: analytic vs central finite differences across every
// parameter group.

struct GradcheckReport {
    struct Group {
        std::string name;
        double max_rel_err = 0.0;
        int checked = 0;
    };
    std::vector<Group> groups;
    double tolerance = 1e-3;
    int total_checked = 0;
    bool ok = false;

    std::string to_string() const {
        std::ostringstream os;
        for (const auto& g : groups) {
            char buf[128];
            std::snprintf(buf, sizeof(buf), "%-22s checked %2d  max_rel_err %.3e  %s", g.name.c_str(),
                          g.checked, g.max_rel_err, g.max_rel_err < tolerance ? "ok" : "FAIL");
            os << buf << '\n';
        }
        os << (ok ? "gradcheck: all groups within tolerance" : "gradcheck: FAILURE") << '\n';
        return os.str();
    }
};

inline ModelConfig gradcheck_default_config() {
    ModelConfig cfg;
    cfg.channel_scale = 1.0 / 16.0;
    cfg.num_attributes = 4;
    cfg.num_landmarks = 5;
    cfg.input_sides = {32, 16, 8};
    cfg.in_channels = 1;
    return cfg;
}

inline GradcheckReport gradcheck(const ModelConfig& cfg_in, std::uint64_t seed,
                                 int per_group = 3, double eps = 1e-5) {
    ModelConfig cfg = cfg_in;
    cfg.validate();
    McfaModel model(cfg, seed);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);

    // jitter every parameter so the check runs at a generic point
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    auto params = model.named_params();
    for (auto& p : params)
        for (auto& v : p.tensor.values()) v += jitter(rng);

    // one sample of each annotation kind lights up every head
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Sample> batch(4);
    const int side = cfg.input_sides[0];
    for (int i = 0; i < 4; ++i) {
        batch[i].image = Tensor({cfg.in_channels, side, side});
        for (auto& v : batch[i].image.values()) v = unit(rng);
    }
    batch[0].kind = SampleKind::nonface;
    batch[1].kind = SampleKind::face;
    batch[1].box = {0.2, 0.3, 0.4, 0.35};
    batch[2].kind = SampleKind::landmark;
    batch[2].box = {0.1, 0.1, 0.5, 0.5};
    batch[2].landmarks = std::vector<double>(2 * cfg.num_landmarks);
    for (auto& v : *batch[2].landmarks) v = unit(rng);
    batch[3].kind = SampleKind::attribute;
    batch[3].box = {0.25, 0.2, 0.45, 0.4};
    batch[3].attributes = std::vector<int>(cfg.num_attributes);
    for (auto& a : *batch[3].attributes) a = rng() % 2 ? 1 : 0;

    auto total_loss = [&]() {
        double total = 0.0;
        for (const auto& s : batch) {
            Graph g;
            FullOutputs outs = forward_full(model, g, s.image);
            total += joint_loss(g, outs, s, TaskMask::all(), Weighting::dynamic).joint_value;
        }
        return total;
    };

    // analytic gradients of the summed loss
    model.zero_grad();
    for (const auto& s : batch) {
        Graph g;
        FullOutputs outs = forward_full(model, g, s.image);
        g.backward(joint_loss(g, outs, s, TaskMask::all(), Weighting::dynamic).joint);
    }

    // group -> flat coordinate space
    std::map<int, std::vector<std::pair<std::size_t, std::size_t>>> group_coords;
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i].tensor.size(); ++j)
            group_coords[static_cast<int>(params[i].group)].emplace_back(i, j);

    GradcheckReport rep;
    rep.groups.resize(kNumParamGroups);
    for (int gi = 0; gi < kNumParamGroups; ++gi) {
        auto& group = rep.groups[gi];
        group.name = param_group_name(static_cast<ParamGroup>(gi));
        const auto& coords = group_coords[gi];
        for (int rep_i = 0; rep_i < per_group; ++rep_i) {
            const auto [pi, off] = coords[rng() % coords.size()];
            double* slot = params[pi].tensor.data() + off;
            const double analytic = params[pi].tensor.grad()[off];
            const double saved = *slot;
            *slot = saved + eps;
            const double up = total_loss();
            *slot = saved - eps;
            const double down = total_loss();
            *slot = saved;
            const double fd = (up - down) / (2.0 * eps);
            const double err =
                std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-4});
            group.max_rel_err = std::max(group.max_rel_err, err);
            ++group.checked;
            ++rep.total_checked;
        }
    }
    rep.ok = true;
    for (const auto& g : rep.groups) rep.ok = rep.ok && g.max_rel_err < rep.tolerance;
    return rep;
}

// ---------------------------------------------------------------------------
// Ablation harness: the four variants under one seed and hyperparameters.

struct AblationRun {
    Variant variant;
    Metrics metrics;
};

struct AblationReport {
    std::vector<AblationRun> runs;

    std::string comparison_table(int num_attributes) const {
        std::ostringstream os;
        os << "variant        avg_acc";
        for (int q = 0; q < num_attributes; ++q) os << "  attr_" << q;
        os << "  final_joint\n";
        for (const auto& r : runs) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%-14s %7.4f", variant_name(r.variant),
                          r.metrics.average_accuracy);
            os << buf;
            for (double a : r.metrics.per_attribute_accuracy) {
                std::snprintf(buf, sizeof(buf), "  %6.4f", a);
                os << buf;
            }
            const double fj = r.metrics.loss_trace.empty()
                                  ? 0.0
                                  : r.metrics.loss_trace.back().mean_joint;
            std::snprintf(buf, sizeof(buf), "  %.6f", fj);
            os << buf << '\n';
        }
        return os.str();
    }
};

inline AblationReport ablate(const TrainConfig& base, const DatasetManifest& manifest,
                             const std::filesystem::path& out_dir = {},
                             std::ostream* log = nullptr) {
    AblationReport report;
    for (Variant v : {Variant::MCFA, Variant::MCFA_FD_FAC, Variant::MCFA_FLL_FAC,
                      Variant::MCFA_FAC}) {
        TrainConfig cfg = base;
        cfg.variant = v;
        if (log) *log << "=== " << variant_name(v) << " ===\n";
        std::filesystem::path dir;
        if (!out_dir.empty()) dir = out_dir / variant_name(v);
        TrainResult r = train(cfg, manifest, dir, log);
        report.runs.push_back({v, std::move(r.metrics)});
    }
    if (!out_dir.empty()) {
        std::ofstream out(out_dir / "comparison.txt");
        out << report.comparison_table(base.model.num_attributes);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Flat key=value training config files.

inline TrainConfig parse_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            std::istringstream chk(line);
            std::string leftover;
            if (chk >> leftover)
                throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                         ": expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        const std::string where = path.string() + ":" + std::to_string(lineno);
        try {
            if (key == "variant") cfg.variant = variant_from_name(val);
            else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
            else if (key == "momentum") cfg.momentum = std::stod(val);
            else if (key == "epochs") cfg.epochs = std::stoi(val);
            else if (key == "batch_size") cfg.batch_size = std::stoi(val);
            else if (key == "rng_seed") cfg.rng_seed = std::stoull(val);
            else if (key == "channel_scale") cfg.model.channel_scale = std::stod(val);
            else if (key == "num_attributes") cfg.model.num_attributes = std::stoi(val);
            else if (key == "num_landmarks") cfg.model.num_landmarks = std::stoi(val);
            else if (key == "input_side") {
                const int side = std::stoi(val);
                cfg.model.input_sides = {side, side / 2, side / 4};
            } else if (key == "in_channels") cfg.model.in_channels = std::stoi(val);
            else if (key == "t_s") cfg.thresholds.t_s = std::stod(val);
            else if (key == "t_m") cfg.thresholds.t_m = std::stod(val);
            else if (key == "weighting") {
                if (val == "dynamic") cfg.weighting = Weighting::dynamic;
                else if (val == "fixed-uniform") cfg.weighting = Weighting::fixed_uniform;
                else throw std::runtime_error("weighting must be dynamic or fixed-uniform");
            } else if (key == "threads") cfg.threads = std::stoi(val);
            else if (key == "lr_decay_factor") cfg.lr_decay_factor = std::stod(val);
            else if (key == "lr_decay_at") {
                cfg.lr_decay_at.clear();
                std::istringstream vs(val);
                std::string item;
                while (std::getline(vs, item, ',')) cfg.lr_decay_at.push_back(std::stod(item));
            } else throw std::runtime_error("unknown key '" + key + "'");
        } catch (const std::runtime_error&) {
            throw;
        } catch (const std::exception&) {
            throw std::runtime_error(where + ": bad value '" + val + "' for key '" + key + "'");
        }
    }
    return cfg;
}

}  // namespace mcfa
