#include "flashcast/trainer.hpp"

#include <chrono>
#include <fstream>
#include <numeric>

namespace flashcast {

namespace fs = std::filesystem;

Batch DatasetSource::batch(const std::vector<std::size_t>& items) const {
    std::vector<std::size_t> days;
    days.reserve(items.size());
    for (std::size_t i : items) {
        if (i >= days_.size()) throw DimensionError("batch", "sample index out of range");
        days.push_back(days_[i]);
    }
    return make_batch(ds_, days, stats_);
}

Batch MemorySource::batch(const std::vector<std::size_t>& items) const {
    std::vector<GridSample> picked;
    picked.reserve(items.size());
    for (std::size_t i : items) {
        if (i >= samples_.size()) throw DimensionError("batch", "sample index out of range");
        picked.push_back(samples_[i]);
    }
    return make_batch(picked, stats_);
}

Json to_json(const LossBreakdown& b) {
    return {{"total", b.total}, {"cls", b.cls},           {"reg", b.reg},
            {"valid", b.valid}, {"positive", b.positive}, {"anomaly", b.anomaly}};
}

Json to_json(const EpochRecord& r) {
    Json j{{"epoch", r.epoch},
           {"steps", r.steps},
           {"lr", r.lr},
           {"train", to_json(r.train)},
           {"best_val", std::isfinite(r.best_val) ? Json(r.best_val) : Json(nullptr)},
           {"best_epoch", r.best_epoch},
           {"improved", r.improved},
           {"wall_time_s", r.wall_time_s}};
    j["val"] = r.val ? to_json(*r.val) : Json(nullptr);
    return j;
}

namespace {

// Combines per-batch masked means into one mean over all pixels.
class BreakdownSum {
public:
    void add(const LossBreakdown& b) {
        const double w = static_cast<double>(b.valid);
        total_ += b.total * w;
        cls_ += b.cls * w;
        reg_ += b.reg * w;
        out_.valid += b.valid;
        out_.positive += b.positive;
        out_.anomaly += b.anomaly;
    }
    LossBreakdown result() const {
        LossBreakdown r = out_;
        if (r.valid > 0) {
            const double n = static_cast<double>(r.valid);
            r.total = total_ / n;
            r.cls = cls_ / n;
            r.reg = reg_ / n;
        }
        return r;
    }

private:
    double total_ = 0.0, cls_ = 0.0, reg_ = 0.0;
    LossBreakdown out_;
};

std::vector<std::size_t> range_of(std::size_t first, std::size_t last) {
    std::vector<std::size_t> v(last - first);
    std::iota(v.begin(), v.end(), first);
    return v;
}

}  // namespace

LossBreakdown evaluate_loss(const ModelParams<float>& params, const SampleSource& source, const LossConfig& loss,
                            std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    NoGradGuard no_grad;
    Rng unused(0);
    BreakdownSum sum;
    for (std::size_t first = 0; first < source.size(); first += batch_size) {
        const Batch b = source.batch(range_of(first, std::min(source.size(), first + batch_size)));
        const auto out = forward(params, Variable<float>::constant(b.x), false, unused);
        sum.add(total_loss(out.logits, out.magnitudes, b.y, b.mask, loss).breakdown);
    }
    return sum.result();
}

TrainResult train(const TrainerOptions& options, const SampleSource& train_source, const SampleSource* val_source) {
    options.model.validate();
    options.optim.validate();
    options.loss.validate();
    if (train_source.size() == 0) throw DataError("training set is empty");
    const OptimConfig& oc = options.optim;

    TrainResult result;
    if (options.resume_from) {
        Checkpoint ck = load_checkpoint(*options.resume_from);
        if (to_json(ck.params.config) != to_json(options.model)) {
            throw ConfigError("checkpoint model configuration differs from the requested one");
        }
        if (ck.state.seed != options.seed) throw ConfigError("checkpoint was trained with a different seed");
        result.params = std::move(ck.params);
        result.state = ck.state;
        if (ck.optimizer) result.optimizer = std::move(*ck.optimizer);
    } else {
        result.params = init_params<float>(options.model, options.seed);
        result.state.seed = options.seed;
    }
    auto named = result.params.named_params();
    if (result.optimizer.empty()) result.optimizer = AdamState<float>::zeros_like(named);

    const std::size_t n = train_source.size();
    const std::size_t per_epoch = (n + oc.batch_size - 1) / oc.batch_size;
    std::size_t total_steps = per_epoch * oc.epochs;
    if (oc.max_steps > 0) total_steps = std::min(total_steps, oc.max_steps);

    std::ofstream log;
    if (options.out_dir) {
        fs::create_directories(*options.out_dir);
        const auto mode = options.resume_from ? std::ios::app : std::ios::trunc;
        log.open(*options.out_dir / "train_log.ndjson", std::ios::out | mode);
        if (!log) throw DataError("cannot open training log in " + options.out_dir->string());
    }

    const auto t0 = std::chrono::steady_clock::now();
    bool stop = oc.max_steps > 0 && result.state.step >= oc.max_steps;
    for (std::size_t epoch = result.state.epochs_completed; epoch < oc.epochs && !stop; ++epoch) {
        std::vector<std::size_t> order = range_of(0, n);
        Rng shuffle = derive_rng(options.seed, 10, epoch);
        fisher_yates(order, shuffle);

        BreakdownSum epoch_sum;
        double lr = oc.lr;
        for (std::size_t first = 0; first < n; first += oc.batch_size) {
            const std::vector<std::size_t> items(order.begin() + static_cast<std::ptrdiff_t>(first),
                                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(n, first + oc.batch_size)));
            const Batch b = train_source.batch(items);
            Rng drop = derive_rng(options.seed, 20, result.state.step);
            for (auto& p : named) p.var.zero_grad();
            const auto out = forward(result.params, Variable<float>::constant(b.x), true, drop);
            const auto loss = total_loss(out.logits, out.magnitudes, b.y, b.mask, options.loss);
            if (!std::isfinite(loss.breakdown.total)) {
                throw TrainingError("non-finite loss at step " + std::to_string(result.state.step));
            }
            backward(loss.total);
            double scale = 1.0;
            if (oc.clip_grad_norm > 0.0) {
                const double norm = gradient_norm(named);
                if (norm > oc.clip_grad_norm) scale = oc.clip_grad_norm / norm;
            }
            lr = oc.lr_at(result.state.step, total_steps);
            adamw_step(named, result.optimizer, oc, lr, scale);
            ++result.state.step;
            epoch_sum.add(loss.breakdown);
            result.step_losses.push_back(loss.breakdown.total);
            if (options.on_step) options.on_step(result.state.step, loss.breakdown);
            if (oc.max_steps > 0 && result.state.step >= oc.max_steps) {
                stop = true;
                break;
            }
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.steps = result.state.step;
        rec.lr = lr;
        rec.train = epoch_sum.result();
        if (val_source && val_source->size() > 0) rec.val = evaluate_loss(result.params, *val_source, options.loss, oc.batch_size);
        const double score = rec.val ? rec.val->total : rec.train.total;
        rec.improved = score < result.state.best_val;
        result.state.epochs_completed = epoch + 1;
        if (rec.improved) {
            result.state.best_val = score;
            result.state.best_epoch = epoch + 1;
        }
        rec.best_val = result.state.best_val;
        rec.best_epoch = result.state.best_epoch;
        rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (options.out_dir) {
            if (rec.improved) {
                save_checkpoint(*options.out_dir / "best.ckpt", result.params, &result.optimizer, result.state,
                                options.checkpoint_extra);
            }
            save_checkpoint(*options.out_dir / "final.ckpt", result.params, &result.optimizer, result.state,
                            options.checkpoint_extra);
            log << to_json(rec).dump() << '\n';
            log.flush();
        }
        if (options.on_epoch) options.on_epoch(rec);
        result.epochs.push_back(std::move(rec));
    }
    return result;
}

}  // namespace flashcast
