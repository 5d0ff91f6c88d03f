#include "facetouch/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "facetouch/adam.hpp"
#include "facetouch/errors.hpp"

namespace facetouch {

void TrainConfig::validate() const {
    if (epochs < 1) throw ContractViolation("TrainConfig: epochs must be >= 1");
    const int min_batch = regime == Regime::scl ? 2 : 1;
    if (batch < min_batch)
        throw ContractViolation("TrainConfig: batch size must be >= " + std::to_string(min_batch));
    if (!(lr > 0.0)) throw ContractViolation("TrainConfig: lr must be positive");
    if (!(tau > 0.0)) throw ContractViolation("TrainConfig: tau must be positive");
    if (sl_loss == SlLoss::focal) {
        if (focal_gamma < 0.0) throw ContractViolation("TrainConfig: focal gamma must be >= 0");
        if (!(focal_alpha > 0.0)) throw ContractViolation("TrainConfig: focal alpha must be > 0");
    }
    if (std::fabs(train_frac + test_frac - 1.0) > 1e-9 || train_frac <= 0.0 || test_frac <= 0.0)
        throw ContractViolation("TrainConfig: split fractions must be positive and sum to 1");
    augment.validate();
    encoder.validate();
}

std::string TrainConfig::loss_variant_name() const {
    if (regime == Regime::scl)
        return supcon_variant == SupConVariant::mean_in_log ? "supcon-printed" : "supcon-logout";
    return sl_loss == SlLoss::ce ? "ce" : "focal";
}

namespace {

// substream tags for independent randomness sources
constexpr uint64_t kShufTag = 0xE0;
constexpr uint64_t kAugTag = 0xA0;
constexpr uint64_t kDropTag = 0xD0;
constexpr uint64_t kHeadTag = 0xC0;

template <class T>
void fill_row(Tensor<T>& x, int row, const Image& img, int input_size) {
    const Image* src = &img;
    Image resized;
    if (img.w != input_size || img.h != input_size) {
        resized = resize(img, input_size, input_size);
        src = &resized;
    }
    T* dst = x.data.data() + size_t(row) * input_size * input_size;
    for (size_t i = 0; i < src->px.size(); ++i) dst[i] = T(src->px[i]);
}

std::vector<int> shuffled_ids(std::vector<int> ids, RngState rng) {
    for (size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.uniform_int(i)]);
    return ids;
}

template <class T>
double sl_step(FaceTouchModel<T>& model, AdamState<T>& adam, const Tensor<T>& x,
               const std::vector<int>& labels, const TrainConfig& cfg) {
    Tape<T> t(true);
    const BoundParams<T> bound = bind_params(t, model.params());
    const auto ev = model.encode_t(t, bound, t.leaf(x));
    const Var logits = model.classify_logits_t(t, bound, ev.r);
    // cross-entropy is the gamma=0, alpha=1 point of the focal family; sharing the
    // path makes that reduction exact rather than approximate
    const double gamma = cfg.sl_loss == SlLoss::ce ? 0.0 : cfg.focal_gamma;
    const double alpha = cfg.sl_loss == SlLoss::ce ? 1.0 : cfg.focal_alpha;
    const Var probs = ops::softmax(t, logits);
    const Var p1 = ops::column(t, probs, 1);
    const Var loss = op_focal(t, p1, labels, gamma, alpha);
    const double lv = double(t.value(loss).scalar());
    t.backward(loss);
    const GradMap<T> grads = collect_grads(t, bound, model.params());
    adam_step(adam, model.params(), grads);
    return lv;
}

}  // namespace

template <class T>
Tensor<T> make_batch(const CropDataset& ds, const std::vector<int>& ids, int input_size) {
    if (ids.empty()) throw ContractViolation("make_batch: empty id list");
    Tensor<T> x({int(ids.size()), 1, input_size, input_size});
    for (size_t i = 0; i < ids.size(); ++i)
        fill_row(x, int(i), ds.images[size_t(ids[i])], input_size);
    return x;
}

template <class T>
EvalResult evaluate(const FaceTouchModel<T>& model, const CropDataset& ds, int split) {
    const std::vector<int> ids = ds.ids_of_split(split);
    if (ids.empty()) throw ContractViolation("evaluate: empty split");
    const int S = model.config().input_size;

    EvalResult out;
    out.labels.reserve(ids.size());
    out.scores.reserve(ids.size());
    const size_t chunk = 256;
    for (size_t at = 0; at < ids.size(); at += chunk) {
        std::vector<int> part(ids.begin() + long(at),
                              ids.begin() + long(std::min(ids.size(), at + chunk)));
        const Tensor<T> x = make_batch<T>(ds, part, S);
        const Tensor<T> probs = model.classify_batch(model.encode_batch(x));
        for (size_t i = 0; i < part.size(); ++i) {
            out.labels.push_back(ds.labels[size_t(part[i])]);
            out.scores.push_back(double(probs.data[i * 2 + 1]));
        }
    }
    out.report = scores_to_report(out.labels, out.scores, 0.5);
    return out;
}

template <class T>
std::vector<LossPoint> train_scl_stage1(FaceTouchModel<T>& model, const CropDataset& ds,
                                        const TrainConfig& cfg, int* skipped, int* total) {
    cfg.validate();
    const std::vector<int> train_ids = ds.ids_of_split(kSplitTrain);
    if (train_ids.empty()) throw ContractViolation("train_scl_stage1: empty training split");
    const int S = model.config().input_size;
    RngState root(cfg.seed);

    AdamState<T> adam;
    adam.lr = T(cfg.lr);
    std::vector<LossPoint> curve;
    int n_skip = 0, n_total = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<int> order =
            shuffled_ids(train_ids, root.substream(kShufTag, uint64_t(epoch), 1));
        int step = 0;
        for (size_t at = 0; at < order.size(); at += size_t(cfg.batch), ++step) {
            const std::vector<int> ids(order.begin() + long(at),
                                       order.begin() + long(std::min(order.size(), at + size_t(cfg.batch))));
            if (ids.size() < 2) continue;
            const int B = int(ids.size());
            ++n_total;

            // [originals ‖ augmented views] with duplicated labels
            Tensor<T> x({2 * B, 1, S, S});
            std::vector<int> labels(size_t(2 * B));
            for (int i = 0; i < B; ++i) {
                const Image& img = ds.images[size_t(ids[size_t(i)])];
                fill_row(x, i, img, S);
                RngState ar = root.substream(kAugTag, uint64_t(epoch),
                                             uint64_t(ids[size_t(i)]) + 1);
                const Image view = augment_view(img, cfg.augment, ar);
                fill_row(x, B + i, view, S);
                labels[size_t(i)] = ds.labels[size_t(ids[size_t(i)])];
                labels[size_t(B + i)] = labels[size_t(i)];
            }

            Tape<T> t(true);
            const BoundParams<T> bound = bind_params(t, model.params());
            const auto ev = model.encode_t(t, bound, t.leaf(std::move(x)));
            RngState drop = root.substream(kDropTag, uint64_t(epoch), uint64_t(step) + 1);
            const Var z = model.project_t(t, bound, ev.r, Mode::train, &drop);
            Var loss;
            try {
                loss = op_supcon(t, z, labels, cfg.tau, cfg.supcon_variant);
            } catch (const ContractViolation& e) {
                if (std::string(e.what()).find("no positive pairs") == std::string::npos) throw;
                ++n_skip;
                continue;
            }
            const double lv = double(t.value(loss).scalar());
            t.backward(loss);
            const GradMap<T> grads = collect_grads(t, bound, model.params());
            adam_step(adam, model.params(), grads);
            curve.push_back(LossPoint{epoch + 1, step + 1, lv});
        }
    }

    if (skipped) *skipped = n_skip;
    if (total) *total = n_total;
    if (n_total > 0 && n_skip * 10 > n_total)
        throw Error("train_scl_stage1: " + std::to_string(n_skip) + " of " +
                    std::to_string(n_total) + " batches had no positive pair");
    return curve;
}

template <class T>
std::vector<LossPoint> train_scl_stage2(FaceTouchModel<T>& model, const CropDataset& ds,
                                        const TrainConfig& cfg) {
    cfg.validate();
    const std::vector<int> train_ids = ds.ids_of_split(kSplitTrain);
    if (train_ids.empty()) throw ContractViolation("train_scl_stage2: empty training split");
    RngState root(cfg.seed);

    // freeze the representation, restart the classifier head
    model.params().set_trainable_prefix("enc.", false);
    model.params().set_trainable_prefix("proj.", false);
    {
        RngState hr = root.substream(kHeadTag, 0, 0);
        Tensor<T>& hw = model.params().value("cls.hidden.w");
        const double std = std::sqrt(2.0 / double(model.config().embed_dim));
        for (auto& v : hw.data) v = T(hr.normal() * std);
        auto zero = [&](const std::string& n) {
            Tensor<T>& p = model.params().value(n);
            std::fill(p.data.begin(), p.data.end(), T(0));
        };
        zero("cls.hidden.b");
        zero("cls.out.w");
        zero("cls.out.b");
    }

    // the encoder is frozen: embed the training split once, in eval mode
    const int S = model.config().input_size;
    const Tensor<T> r_all = model.encode_batch(make_batch<T>(ds, train_ids, S));
    const int D = model.config().embed_dim;

    AdamState<T> adam;
    adam.lr = T(cfg.lr);
    std::vector<LossPoint> curve;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> rows(train_ids.size());
        for (size_t i = 0; i < rows.size(); ++i) rows[i] = int(i);
        rows = shuffled_ids(std::move(rows), root.substream(kShufTag, uint64_t(epoch), 2));
        int step = 0;
        for (size_t at = 0; at < rows.size(); at += size_t(cfg.batch), ++step) {
            const size_t end = std::min(rows.size(), at + size_t(cfg.batch));
            const int B = int(end - at);
            Tensor<T> r({B, D});
            std::vector<int> labels(static_cast<size_t>(B), 0);
            for (int i = 0; i < B; ++i) {
                const int row = rows[at + size_t(i)];
                std::copy_n(r_all.data.data() + size_t(row) * D, D,
                            r.data.data() + size_t(i) * D);
                labels[size_t(i)] = ds.labels[size_t(train_ids[size_t(row)])];
            }

            Tape<T> t(true);
            const BoundParams<T> bound = bind_params(t, model.params());
            const Var logits = model.classify_logits_t(t, bound, t.leaf(std::move(r)));
            const Var loss = op_cross_entropy(t, logits, labels);
            const double lv = double(t.value(loss).scalar());
            t.backward(loss);
            const GradMap<T> grads = collect_grads(t, bound, model.params());
            adam_step(adam, model.params(), grads);
            curve.push_back(LossPoint{epoch + 1, step + 1, lv});
        }
    }
    return curve;
}

template <class T>
std::vector<LossPoint> train_sl(FaceTouchModel<T>& model, const CropDataset& ds,
                                const TrainConfig& cfg) {
    cfg.validate();
    const std::vector<int> train_ids = ds.ids_of_split(kSplitTrain);
    if (train_ids.empty()) throw ContractViolation("train_sl: empty training split");
    const int S = model.config().input_size;
    RngState root(cfg.seed);

    AdamState<T> adam;
    adam.lr = T(cfg.lr);
    std::vector<LossPoint> curve;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<int> order =
            shuffled_ids(train_ids, root.substream(kShufTag, uint64_t(epoch), 3));
        int step = 0;
        for (size_t at = 0; at < order.size(); at += size_t(cfg.batch), ++step) {
            const std::vector<int> ids(order.begin() + long(at),
                                       order.begin() + long(std::min(order.size(), at + size_t(cfg.batch))));
            std::vector<int> labels(ids.size());
            for (size_t i = 0; i < ids.size(); ++i) labels[i] = ds.labels[size_t(ids[i])];
            const Tensor<T> x = make_batch<T>(ds, ids, S);
            const double lv = sl_step(model, adam, x, labels, cfg);
            if (!std::isfinite(lv)) throw Error("train_sl: non-finite loss at epoch " +
                                                std::to_string(epoch + 1));
            curve.push_back(LossPoint{epoch + 1, step + 1, lv});
        }
    }
    return curve;
}

template <class T>
TrainResult<T> run_training(const CropDataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    EncoderConfig ec = cfg.encoder;
    ec.seed = cfg.seed;

    // resize once up front when the encoder runs at a different resolution
    const CropDataset* data = &ds;
    CropDataset resized;
    if (ds.manifest.width != ec.input_size || ds.manifest.height != ec.input_size) {
        resized = ds;
        for (Image& img : resized.images) img = resize(img, ec.input_size, ec.input_size);
        resized.manifest.width = resized.manifest.height = ec.input_size;
        data = &resized;
    }

    TrainResult<T> out{FaceTouchModel<T>(ec), {}, {}, 0, 0, {}, {}};
    if (cfg.regime == Regime::scl) {
        out.stage1_curve =
            train_scl_stage1(out.model, *data, cfg, &out.skipped_batches, &out.total_batches);
        out.curve = train_scl_stage2(out.model, *data, cfg);
    } else {
        out.curve = train_sl(out.model, *data, cfg);
        out.total_batches = int(out.curve.size());
    }
    out.train_eval = evaluate(out.model, *data, kSplitTrain);
    out.test_eval = evaluate(out.model, *data, kSplitTest);
    return out;
}

std::string loss_curve_to_csv(const std::vector<LossPoint>& curve) {
    std::string out = "epoch,step,loss\n";
    char buf[96];
    for (const LossPoint& p : curve) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g\n", p.epoch, p.step, p.loss);
        out += buf;
    }
    return out;
}

#define FT_INSTANTIATE(T)                                                                        \
    template Tensor<T> make_batch<T>(const CropDataset&, const std::vector<int>&, int);         \
    template EvalResult evaluate<T>(const FaceTouchModel<T>&, const CropDataset&, int);         \
    template std::vector<LossPoint> train_scl_stage1<T>(FaceTouchModel<T>&, const CropDataset&, \
                                                        const TrainConfig&, int*, int*);        \
    template std::vector<LossPoint> train_scl_stage2<T>(FaceTouchModel<T>&, const CropDataset&, \
                                                        const TrainConfig&);                    \
    template std::vector<LossPoint> train_sl<T>(FaceTouchModel<T>&, const CropDataset&,         \
                                                const TrainConfig&);                            \
    template TrainResult<T> run_training<T>(const CropDataset&, const TrainConfig&);

FT_INSTANTIATE(float)
FT_INSTANTIATE(double)
#undef FT_INSTANTIATE

}  // namespace facetouch
