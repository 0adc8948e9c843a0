#include "nearl/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "nearl/checkpoint.hpp"
#include "nearl/error.hpp"

namespace nearl {

namespace {

void check_labels(const Tensor& logits, std::span<const std::size_t> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        fail(ErrorKind::shape, "cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                                   std::to_string(labels.size()) + " labels");
    }
    for (std::size_t y : labels) {
        if (y >= logits.dim(1)) {
            fail(ErrorKind::shape, "label " + std::to_string(y) + " out of range for " +
                                       std::to_string(logits.dim(1)) + " classes");
        }
    }
}

// -log softmax(row)[label] for every row, evaluated on plain values.
std::vector<double> row_losses(const Tensor& logits, std::span<const std::size_t> labels) {
    const std::size_t b = logits.dim(0);
    const std::size_t c = logits.dim(1);
    const auto x = logits.values();
    std::vector<double> out(b);
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = x.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        out[i] = -(row[labels[i]] - mx - std::log(z));
    }
    return out;
}

bool orthogonalizing(AblationMode mode) {
    return mode == AblationMode::full || mode == AblationMode::no_useformer;
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    check_labels(logits, labels);
    const std::size_t b = logits.dim(0);
    const std::size_t c = logits.dim(1);
    std::vector<double> onehot(b * c, 0.0);
    for (std::size_t i = 0; i < b; ++i) onehot[i * c + labels[i]] = 1.0;
    const Tensor picked = sum(log_softmax(logits, -1) * Tensor({b, c}, std::move(onehot)));
    return scale(picked, -1.0 / static_cast<double>(b));
}

Tensor ce_loss(const Tensor& v, const Tensor& s, std::span<const std::size_t> labels,
               double temperature) {
    return cross_entropy(cosine_logits(v, s, temperature), labels);
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) fail(ErrorKind::shape, "argmax_rows expects (B, C) logits");
    const std::size_t c = logits.dim(1);
    const auto x = logits.values();
    std::vector<std::size_t> out(logits.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (x[i * c + j] > x[i * c + best]) best = j;
        }
        out[i] = best;
    }
    return out;
}

ClassMetrics classification_metrics(std::span<const std::size_t> predictions,
                                    std::span<const std::size_t> labels, std::size_t n_classes) {
    if (labels.empty()) fail(ErrorKind::config, "cannot score an empty set of predictions");
    if (predictions.size() != labels.size()) {
        fail(ErrorKind::shape, "prediction and label counts differ");
    }
    ClassMetrics m;
    m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= n_classes || predictions[i] >= n_classes) {
            fail(ErrorKind::shape, "class index out of range in metrics");
        }
        ++m.confusion[labels[i]][predictions[i]];
        if (labels[i] == predictions[i]) ++correct;
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    double f1_sum = 0.0;
    for (std::size_t k = 0; k < n_classes; ++k) {
        std::size_t actual = 0;
        std::size_t predicted = 0;
        for (std::size_t j = 0; j < n_classes; ++j) {
            actual += m.confusion[k][j];
            predicted += m.confusion[j][k];
        }
        const std::size_t tp = m.confusion[k][k];
        const std::size_t denom = actual + predicted;
        const double f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
        m.per_class_f1.push_back(f1);
        f1_sum += f1;
    }
    m.macro_f1 = f1_sum / static_cast<double>(n_classes);
    return m;
}

void adam_step(const std::vector<NamedTensor>& params, AdamState& state, const TrainConfig& tc) {
    for (const auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        for (double g : t.grad()) {
            if (!std::isfinite(g)) fail(ErrorKind::non_finite, "non-finite gradient in parameter '" + name + "'");
        }
    }
    ++state.step;
    const double step = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(tc.beta1, step);
    const double correction2 = 1.0 - std::pow(tc.beta2, step);
    for (const auto& [name, t] : params) {
        Tensor param = t;
        auto w = param.mutable_values();
        auto& m = state.m[name];
        auto& v = state.v[name];
        m.resize(w.size(), 0.0);
        v.resize(w.size(), 0.0);
        const bool has = param.has_grad();
        const auto g = has ? param.grad() : std::span<const double>{};
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = has ? g[i] : 0.0;
            m[i] = tc.beta1 * m[i] + (1.0 - tc.beta1) * gi;
            v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * gi * gi;
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            w[i] -= tc.learning_rate * m_hat / (std::sqrt(v_hat) + tc.adam_eps);
        }
    }
}

EvalResult evaluate(const Model& model, const Split& split, std::size_t batch_size) {
    if (split.size() == 0) fail(ErrorKind::config, "cannot evaluate an empty split");
    if (batch_size == 0) fail(ErrorKind::config, "evaluation batch size must be >= 1");
    NoGradGuard no_grad;
    EvalResult r;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < split.size(); start += batch_size) {
        const std::size_t end = std::min(split.size(), start + batch_size);
        std::vector<std::size_t> idx(end - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        const auto labels = split.labels_at(idx);
        const ForwardResult f = adapted_forward(model, split.images(idx));
        for (double l : row_losses(f.logits, labels)) loss_sum += l;
        const auto pred = argmax_rows(f.logits);
        r.predictions.insert(r.predictions.end(), pred.begin(), pred.end());
    }
    r.loss = loss_sum / static_cast<double>(split.size());
    r.metrics = classification_metrics(r.predictions, split.labels, model.config.n_classes);
    return r;
}

TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& tc) {
    tc.validate();
    check_compatible(dataset, model.config);
    if (dataset.train.size() == 0 || dataset.val.size() == 0) {
        fail(ErrorKind::config, "training needs non-empty train and val splits");
    }
    TrainResult result;
    result.backbone_checksum_before = model.backbone.checksum();
    const auto params = trainable_registry(model.bank, model.config.mode);
    const bool probe = tc.check_orthogonality && orthogonalizing(model.config.mode);
    AdamState adam;
    const std::size_t n = dataset.train.size();

    for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::vector<double> sample_loss(n, 0.0);
        std::vector<std::size_t> sample_pred(n, 0);
        for (const auto& batch : batch_iter(n, tc.batch_size, tc.seed, epoch)) {
            const auto labels = dataset.train.labels_at(batch);
            for (const auto& p : params) Tensor(p.tensor).zero_grad();
            ForwardOptions options;
            options.measure_orthogonality = probe;
            const ForwardResult f = adapted_forward(model, dataset.train.images(batch), options);
            const Tensor loss = cross_entropy(f.logits, labels);
            if (!std::isfinite(loss.item())) {
                fail(ErrorKind::non_finite, "non-finite training loss at epoch " + std::to_string(epoch));
            }
            for (const auto& layer : f.ortho) {
                if (layer.stats.max_abs_cos_nondegenerate >= tc.ortho_tolerance) {
                    fail(ErrorKind::invariant,
                         "orthogonality violated at epoch " + std::to_string(epoch) + ", layer " +
                             std::to_string(layer.layer) + " (" + layer.modality + "): |cos| = " +
                             std::to_string(layer.stats.max_abs_cos_nondegenerate));
                }
                result.ortho.merge(layer.stats);
                ++result.ortho_checks;
            }
            const auto losses = row_losses(f.logits, labels);
            const auto preds = argmax_rows(f.logits);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                sample_loss[batch[i]] = losses[i];
                sample_pred[batch[i]] = preds[i];
            }
            if (!params.empty()) {
                loss.backward();
                adam_step(params, adam, tc);
            }
        }
        EpochRecord rec;
        rec.epoch = epoch;
        double total = 0.0;
        for (double l : sample_loss) total += l;
        rec.train_loss = total / static_cast<double>(n);
        const ClassMetrics tm = classification_metrics(sample_pred, dataset.train.labels,
                                                       model.config.n_classes);
        rec.train_acc = tm.accuracy;
        rec.train_f1 = tm.macro_f1;
        if (epoch % tc.metrics_every == 0 || epoch == tc.epochs) {
            rec.val = evaluate(model, dataset.val);
            if (rec.val->metrics.accuracy > result.best_val_acc) {
                result.best_val_acc = rec.val->metrics.accuracy;
                result.best_epoch = epoch;
                result.best_bank = snapshot(model.bank.named());
            }
        }
        result.history.push_back(std::move(rec));
    }

    // Put the best-validation weights back (no-op for the frozen mode, whose
    // bank never changes).
    const auto current = model.bank.named();
    for (std::size_t i = 0; i < current.size(); ++i) {
        const auto src = result.best_bank[i].tensor.values();
        Tensor dst = current[i].tensor;
        std::copy(src.begin(), src.end(), dst.mutable_values().begin());
    }
    result.backbone_checksum_after = model.backbone.checksum();
    return result;
}

std::string metrics_csv(const TrainResult& result) {
    std::string out = "epoch,split,loss,acc,f1\n";
    char line[160];
    for (const auto& rec : result.history) {
        std::snprintf(line, sizeof line, "%zu,train,%.6f,%.6f,%.6f\n", rec.epoch, rec.train_loss,
                      rec.train_acc, rec.train_f1);
        out += line;
        if (rec.val) {
            std::snprintf(line, sizeof line, "%zu,val,%.6f,%.6f,%.6f\n", rec.epoch, rec.val->loss,
                          rec.val->metrics.accuracy, rec.val->metrics.macro_f1);
            out += line;
        }
    }
    return out;
}

}  // namespace nearl
