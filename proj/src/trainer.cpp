#include "kspace/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "kspace/error.hpp"
#include "kspace/heads.hpp"
#include "kspace/metrics.hpp"

namespace kspace::train {

namespace {

double frobenius(const Tensor2& t) {
    double s = 0.0;
    for (size_t i = 0; i < t.size(); ++i) s += t.data()[i] * t.data()[i];
    return std::sqrt(s);
}

double grad_map_norm(const std::map<std::string, Tensor2>& grads) {
    double s = 0.0;
    for (const auto& [name, g] : grads) {
        (void)name;
        for (size_t i = 0; i < g.size(); ++i) s += g.data()[i] * g.data()[i];
    }
    return std::sqrt(s);
}

void merge_grads(std::map<std::string, Tensor2>& into, const std::map<std::string, Tensor2>& from) {
    for (const auto& [name, g] : from) {
        auto it = into.find(name);
        if (it == into.end()) {
            into.emplace(name, g);
        } else {
            for (size_t i = 0; i < g.size(); ++i) it->second.data()[i] += g.data()[i];
        }
    }
}

// balanced draw: half the budget per class, spilling over when one class is
// short; both classes must be represented
std::vector<int64_t> balanced_rows(const std::vector<int64_t>& pool, const std::vector<int>& labels, int want,
                                   RngStream& rng, const std::unordered_set<int64_t>* exclude) {
    std::vector<int64_t> pos, neg;
    for (int64_t r : pool) {
        if (exclude && exclude->count(r)) continue;
        (labels[static_cast<size_t>(r)] ? pos : neg).push_back(r);
    }
    if (pos.empty() || neg.empty())
        throw ContractError("episode builder: a class is missing from the available support pool");
    rng.shuffle(pos);
    rng.shuffle(neg);
    const int half = want / 2;
    std::vector<int64_t> out;
    const int n_pos = std::min<int>(half, static_cast<int>(pos.size()));
    const int n_neg = std::min<int>(want - n_pos, static_cast<int>(neg.size()));
    out.insert(out.end(), pos.begin(), pos.begin() + n_pos);
    out.insert(out.end(), neg.begin(), neg.begin() + n_neg);
    for (size_t k = static_cast<size_t>(n_pos); out.size() < static_cast<size_t>(want) && k < pos.size(); ++k)
        out.push_back(pos[k]);
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (opt.lr <= 0.0) throw ConfigError("train: step size must be positive");
    if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
    if (n_support < 2) throw ConfigError("train: n_support must be at least 2");
    if (n_query < 1) throw ConfigError("train: n_query must be at least 1");
    if (hook_free && adversarial) throw ConfigError("train: hook_free applies to the base variant only");
}

TaskRuntime make_task_runtime(const RelationalBundle& bundle, const std::string& task) {
    const TaskSpec* spec = bundle.manifest.find_task(task);
    if (!spec) throw ConfigError("unknown task '" + task + "'");
    TaskRuntime rt;
    rt.name = task;
    rt.table = static_cast<int32_t>(bundle.manifest.table_index(spec->table));
    rt.labels = bundle.task_labels(task);
    rt.times = bundle.task_times(task);
    rt.split = eval::temporal_split(rt.times);
    return rt;
}

PipelineContext PipelineContext::make(const RelationalBundle& bundle, const HeteroGraph& graph,
                                      const model::BackboneConfig& bcfg, const FeatureConfig& fcfg,
                                      const std::vector<TaskRuntime>& training_tasks, uint64_t walk_seed) {
    if (training_tasks.empty()) throw ContractError("pipeline: no training tasks");
    PipelineContext ctx;
    ctx.backbone_cfg = bcfg;
    ctx.feature_cfg = fcfg;
    ctx.walk_seed = walk_seed;
    ctx.icl = model::FrozenIclHead::for_width(bcfg.hidden);

    int64_t t_min = std::numeric_limits<int64_t>::max();
    int64_t t_max = std::numeric_limits<int64_t>::min();
    int64_t cutoff = std::numeric_limits<int64_t>::min();
    for (const auto& task : training_tasks) {
        for (int64_t r : task.split.train) {
            const int64_t t = task.times[static_cast<size_t>(r)];
            if (t == kStaticTime) continue;
            t_min = std::min(t_min, t);
            t_max = std::max(t_max, t);
        }
        cutoff = std::max(cutoff, t_max);
    }
    if (t_min > t_max) {  // all-static degenerate case
        t_min = 0;
        t_max = 1;
        cutoff = 0;
    }
    ctx.t_min = t_min;
    ctx.t_max = t_max;
    ctx.cutoff = cutoff;

    auto encoder = FrozenRowEncoder::fit(bundle, fcfg, cutoff);
    ctx.features = std::make_unique<FeatureContext>(bundle, graph, fcfg, std::move(encoder), t_min, t_max, walk_seed);
    return ctx;
}

PipelineContext PipelineContext::restore(const RelationalBundle& bundle, const HeteroGraph& graph,
                                         const Checkpoint& ck) {
    PipelineContext ctx;
    ctx.backbone_cfg = model::backbone_config_from_json(ck.meta.at("backbone"));
    ctx.feature_cfg = feature_config_from_json(ck.meta.at("features"));
    ctx.t_min = ck.meta.at("t_min").get<int64_t>();
    ctx.t_max = ck.meta.at("t_max").get<int64_t>();
    ctx.cutoff = ck.meta.at("cutoff").get<int64_t>();
    ctx.walk_seed = ck.meta.at("walk_seed").get<uint64_t>();
    ctx.icl.tau = ck.meta.at("icl_tau").get<double>();
    ctx.icl.eps = ck.meta.at("icl_eps").get<double>();
    if (ck.meta.at("manifest_digest").get<uint64_t>() != bundle.manifest.digest())
        throw ConfigError("checkpoint: manifest digest mismatch");

    std::map<std::string, Tensor2> stats;
    for (const auto& [name, t] : ck.tensors)
        if (name.rfind("enc.", 0) == 0) stats.emplace(name, t);
    auto encoder = FrozenRowEncoder::restore(bundle, ctx.feature_cfg, stats);
    ctx.features = std::make_unique<FeatureContext>(bundle, graph, ctx.feature_cfg, std::move(encoder), ctx.t_min,
                                                    ctx.t_max, ctx.walk_seed);
    return ctx;
}

std::vector<Episode> build_epoch_episodes(const std::vector<TaskRuntime>& tasks, int n_support, int n_query,
                                          RngStream episode_stream) {
    std::vector<std::vector<Episode>> per_task(tasks.size());
    for (size_t ti = 0; ti < tasks.size(); ++ti) {
        const TaskRuntime& task = tasks[ti];
        RngStream rng = episode_stream.derive(task.name);
        std::vector<int64_t> perm = task.split.train;
        rng.shuffle(perm);
        for (size_t at = 0; at < perm.size(); at += static_cast<size_t>(n_query)) {
            Episode ep;
            ep.task_index = static_cast<int>(ti);
            const size_t end = std::min(perm.size(), at + static_cast<size_t>(n_query));
            ep.query_rows.assign(perm.begin() + static_cast<int64_t>(at), perm.begin() + static_cast<int64_t>(end));
            std::unordered_set<int64_t> exclude(ep.query_rows.begin(), ep.query_rows.end());
            ep.support_rows = balanced_rows(task.split.train, task.labels, n_support, rng, &exclude);
            per_task[ti].push_back(std::move(ep));
        }
    }
    std::vector<Episode> out;
    for (size_t k = 0;; ++k) {  // round-robin interleave
        bool any = false;
        for (size_t ti = 0; ti < per_task.size(); ++ti)
            if (k < per_task[ti].size()) {
                out.push_back(std::move(per_task[ti][k]));
                any = true;
            }
        if (!any) break;
    }
    return out;
}

nlohmann::json StepMetrics::to_json() const {
    nlohmann::json j{{"step", step},
                     {"epoch", epoch},
                     {"task", task},
                     {"loss_main", loss_main},
                     {"gate_rate", gate_rate},
                     {"mean_alpha", mean_alpha},
                     {"grad_norm_boundary", boundary_grad_norm},
                     {"grad_norm_refined", refined_grad_norm},
                     {"grad_norm_params", param_grad_norm},
                     {"aborted", aborted}};
    j["loss_adv"] = loss_adv ? nlohmann::json(*loss_adv) : nlohmann::json(nullptr);
    return j;
}

Trainer::Trainer(const RelationalBundle& bundle, const HeteroGraph& graph, PipelineContext& ctx,
                 std::vector<TaskRuntime> training_tasks, TrainConfig cfg)
    : bundle_(bundle),
      graph_(graph),
      ctx_(ctx),
      tasks_(std::move(training_tasks)),
      cfg_(cfg),
      root_(cfg.seed),
      params_(model::init_backbone_params(ctx.backbone_cfg, ctx.feature_cfg.width(), root_.derive("init"))),
      adv_params_(model::init_adversary_params(ctx.backbone_cfg.hidden, root_.derive("adv-init"))),
      opt_(cfg.opt),
      adv_opt_(cfg.opt) {
    cfg_.validate();
    if (tasks_.empty()) throw ContractError("trainer: no training tasks");
}

SampledSubgraph Trainer::sample_for(const TaskRuntime& task, const std::vector<int64_t>& support,
                                    const std::vector<int64_t>& query) const {
    std::vector<Seed> seeds;
    seeds.reserve(support.size() + query.size());
    for (int64_t r : support)
        seeds.push_back({graph_.node_id(task.table, r), task.times[static_cast<size_t>(r)]});
    for (int64_t r : query)
        seeds.push_back({graph_.node_id(task.table, r), task.times[static_cast<size_t>(r)]});
    return sample_neighborhood(graph_, seeds, ctx_.feature_cfg.fanout, root_.derive("sampling"));
}

void Trainer::forward_episode(const Episode& episode, bool with_boundary, ForwardOut& out) const {
    const TaskRuntime& task = tasks_[static_cast<size_t>(episode.task_index)];
    const SampledSubgraph sg = sample_for(task, episode.support_rows, episode.query_rows);
    Tensor2 features = ctx_.features->features_for(sg);

    out.reg = model::register_params(out.tape, params_);
    const ad::NodeId fid = out.tape.constant(std::move(features));
    out.h = model::backbone_forward(out.tape, ctx_.backbone_cfg, out.reg, sg, fid, with_boundary);

    const size_t n_s = episode.support_rows.size();
    out.support_locals.assign(sg.seed_locals.begin(), sg.seed_locals.begin() + static_cast<int64_t>(n_s));
    out.query_locals.assign(sg.seed_locals.begin() + static_cast<int64_t>(n_s), sg.seed_locals.end());
    out.y_support.clear();
    out.y_query.clear();
    for (int64_t r : episode.support_rows) out.y_support.push_back(task.labels[static_cast<size_t>(r)]);
    for (int64_t r : episode.query_rows) out.y_query.push_back(task.labels[static_cast<size_t>(r)]);

    const ad::NodeId z_q = out.tape.gather_rows(out.h, out.query_locals);
    ad::NodeId z_s;
    if (cfg_.detach_support) {
        const Tensor2& h_val = out.tape.value(out.h);
        Tensor2 zs(static_cast<int64_t>(out.support_locals.size()), h_val.cols());
        for (size_t i = 0; i < out.support_locals.size(); ++i)
            std::copy(h_val.row(out.support_locals[i]), h_val.row(out.support_locals[i]) + h_val.cols(),
                      zs.row(static_cast<int64_t>(i)));
        z_s = out.tape.constant(std::move(zs));
    } else {
        z_s = out.tape.gather_rows(out.h, out.support_locals);
    }
    const ad::NodeId probs = model::icl_predict(out.tape, ctx_.icl, z_q, z_s, out.y_support);
    out.loss = model::main_loss(out.tape, probs, out.y_query);
}

StepMetrics Trainer::train_step(const Episode& episode) {
    StepMetrics m;
    m.step = step_counter_++;
    m.task = tasks_[static_cast<size_t>(episode.task_index)].name;

    ForwardOut f;
    forward_episode(episode, /*with_boundary=*/!cfg_.hook_free, f);
    m.loss_main = f.tape.value(f.loss).at(0, 0);
    if (!std::isfinite(m.loss_main)) {
        m.aborted = true;
        return m;
    }

    if (cfg_.hook_free) {
        auto grads = model::named_grads(f.reg, f.tape.backward_from(f.loss));
        m.param_grad_norm = grad_map_norm(grads);
        opt_.step(params_, grads);
        return m;
    }

    auto above = model::named_grads(f.reg, f.tape.backward_from(f.loss));
    const Tensor2& captured = f.tape.boundary_grad();
    m.boundary_grad_norm = frobenius(captured);
    Tensor2 refined = captured;

    std::map<std::string, Tensor2> adv_grads;
    if (cfg_.adversarial) {
        const Tensor2& h_val = f.tape.value(f.h);
        const int64_t d = h_val.cols();
        const int64_t n_q = static_cast<int64_t>(f.query_locals.size());
        Tensor2 h_query(n_q, d), g_main_q(n_q, d);
        for (int64_t i = 0; i < n_q; ++i) {
            const int32_t local = f.query_locals[static_cast<size_t>(i)];
            std::copy(h_val.row(local), h_val.row(local) + d, h_query.row(i));
            std::copy(captured.row(local), captured.row(local) + d, g_main_q.row(i));
        }

        Tensor2 g_adv;
        if (adv_gradient_override) {
            g_adv = adv_gradient_override(h_query, f.y_query);
        } else {
            auto adv = model::adv_forward_loss(adv_params_, h_query, f.y_query);
            if (!std::isfinite(adv.mean_loss)) {
                m.loss_adv = adv.mean_loss;
                m.aborted = true;
                return m;
            }
            m.loss_adv = adv.mean_loss;
            g_adv = std::move(adv.input_grads);
            adv_grads = std::move(adv.param_grads);
        }

        auto proj = project_gradients(g_main_q, g_adv);
        m.gate_rate = proj.gate_rate();
        m.mean_alpha = proj.mean_alpha();
        for (int64_t i = 0; i < n_q; ++i) {
            const int32_t local = f.query_locals[static_cast<size_t>(i)];
            std::copy(proj.refined.row(i), proj.refined.row(i) + d, refined.row(local));
        }
    }
    m.refined_grad_norm = frobenius(refined);

    auto below = model::named_grads(f.reg, f.tape.resume_backward(refined));
    merge_grads(below, above);
    m.param_grad_norm = grad_map_norm(below);
    opt_.step(params_, below);
    if (cfg_.adversarial && !adv_grads.empty()) adv_opt_.step(adv_params_, adv_grads);
    return m;
}

std::vector<int64_t> Trainer::eval_support_rows(const TaskRuntime& task) const {
    RngStream rng = root_.derive("eval-support").derive(task.name);
    return balanced_rows(task.split.train, task.labels, cfg_.n_support, rng, nullptr);
}

std::optional<double> Trainer::evaluate(const TaskRuntime& task, const std::vector<int64_t>& query_rows,
                                        const std::vector<int64_t>& support_rows) const {
    // support representations once; per-seed expansions are independent, so
    // batching queries separately changes nothing
    Tensor2 z_support;
    std::vector<int> y_support;
    {
        const SampledSubgraph sg = sample_for(task, support_rows, {});
        Tensor2 features = ctx_.features->features_for(sg);
        ad::Tape tape;
        auto reg = model::register_params(tape, params_);
        const ad::NodeId h =
            model::backbone_forward(tape, ctx_.backbone_cfg, reg, sg, tape.constant(std::move(features)), false);
        const Tensor2& h_val = tape.value(h);
        z_support = Tensor2(static_cast<int64_t>(support_rows.size()), h_val.cols());
        for (size_t i = 0; i < support_rows.size(); ++i)
            std::copy(h_val.row(sg.seed_locals[i]), h_val.row(sg.seed_locals[i]) + h_val.cols(),
                      z_support.row(static_cast<int64_t>(i)));
        for (int64_t r : support_rows) y_support.push_back(task.labels[static_cast<size_t>(r)]);
    }

    std::vector<double> scores;
    std::vector<int> y_query;
    for (size_t at = 0; at < query_rows.size(); at += static_cast<size_t>(cfg_.n_query)) {
        const size_t end = std::min(query_rows.size(), at + static_cast<size_t>(cfg_.n_query));
        const std::vector<int64_t> batch(query_rows.begin() + static_cast<int64_t>(at),
                                         query_rows.begin() + static_cast<int64_t>(end));
        const SampledSubgraph sg = sample_for(task, {}, batch);
        Tensor2 features = ctx_.features->features_for(sg);
        ad::Tape tape;
        auto reg = model::register_params(tape, params_);
        const ad::NodeId h =
            model::backbone_forward(tape, ctx_.backbone_cfg, reg, sg, tape.constant(std::move(features)), false);
        const ad::NodeId z_q = tape.gather_rows(h, sg.seed_locals);
        const ad::NodeId p = model::icl_predict(tape, ctx_.icl, z_q, tape.constant(z_support), y_support);
        const Tensor2& pv = tape.value(p);
        for (int64_t i = 0; i < pv.rows(); ++i) scores.push_back(pv.at(i, 0));
        for (int64_t r : batch) y_query.push_back(task.labels[static_cast<size_t>(r)]);
    }
    return eval::auroc(scores, y_query);
}

Checkpoint Trainer::snapshot() const {
    Checkpoint ck;
    for (const auto& name : params_.names()) ck.tensors.emplace(name, params_.at(name));
    for (const auto& name : adv_params_.names()) ck.tensors.emplace(name, adv_params_.at(name));
    for (auto& [name, t] : ctx_.features->encoder().export_stats()) ck.tensors.emplace(name, std::move(t));

    std::vector<std::string> training;
    for (const auto& t : tasks_) training.push_back(t.name);
    ck.meta = {{"backbone", model::to_json(ctx_.backbone_cfg)},
               {"features", to_json(ctx_.feature_cfg)},
               {"t_min", ctx_.t_min},
               {"t_max", ctx_.t_max},
               {"cutoff", ctx_.cutoff},
               {"walk_seed", ctx_.walk_seed},
               {"icl_tau", ctx_.icl.tau},
               {"icl_eps", ctx_.icl.eps},
               {"manifest_digest", bundle_.manifest.digest()},
               {"training_tasks", training},
               {"adversarial", cfg_.adversarial},
               {"seed", cfg_.seed},
               {"param_order", params_.names()},
               {"adv_order", adv_params_.names()}};
    return ck;
}

void Trainer::restore_params(const Checkpoint& ck) {
    for (const auto& name : params_.names()) params_.at(name) = ck.tensors.at(name);
    for (const auto& name : adv_params_.names()) adv_params_.at(name) = ck.tensors.at(name);
}

FitResult Trainer::fit() {
    FitResult out;
    double best = -std::numeric_limits<double>::infinity();
    out.checkpoint = snapshot();  // zero epochs: the initialization
    out.best_epoch = -1;

    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
        auto episodes = build_epoch_episodes(tasks_, cfg_.n_support, cfg_.n_query, root_.derive("episodes", epoch));
        for (const auto& ep : episodes) {
            StepMetrics m = train_step(ep);
            m.epoch = epoch;
            out.log_lines.push_back(m.to_json().dump());
        }

        double sum = 0.0;
        int counted = 0;
        for (const auto& task : tasks_) {
            const auto a = evaluate(task, task.split.val, eval_support_rows(task));
            if (a) {
                sum += *a;
                ++counted;
            }
        }
        const double val = counted ? sum / counted : 0.0;
        out.log_lines.push_back(nlohmann::json{{"epoch", epoch}, {"val_auroc", val}}.dump());
        if (val > best) {
            best = val;
            out.checkpoint = snapshot();
            out.best_epoch = epoch;
        }
    }
    out.best_val_auroc = std::isfinite(best) ? best : 0.0;
    out.checkpoint.meta["best_val_auroc"] = out.best_val_auroc;
    out.checkpoint.meta["best_epoch"] = out.best_epoch;
    return out;
}

}  // namespace kspace::train
