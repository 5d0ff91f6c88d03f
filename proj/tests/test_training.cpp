#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "facetouch/train.hpp"

#include "support.hpp"

using namespace facetouch;
namespace fs = std::filesystem;

namespace {

EncoderConfig tiny_encoder() {
    EncoderConfig ec;
    ec.input_size = 16;
    ec.widths = {4, 8};
    ec.embed_dim = 8;
    ec.seed = 3;
    return ec;
}

EncoderConfig small_encoder() {
    EncoderConfig ec;
    ec.input_size = 32;
    ec.widths = {8, 16, 32};
    ec.embed_dim = 32;
    ec.proj_dropout = 0.0;  // desk-scale contrastive runs train from scratch
    ec.seed = 3;
    return ec;
}

TrainConfig base_config(Regime regime, const EncoderConfig& ec) {
    TrainConfig cfg;
    cfg.regime = regime;
    cfg.encoder = ec;
    cfg.batch = 32;
    cfg.epochs = 3;
    cfg.seed = 21;
    return cfg;
}

const CropDataset& crops_small() {
    static const CropDataset ds = gen_crop_dataset(160, 0.35, 11, 32);
    return ds;
}

const CropDataset& crops_learn() {
    static const CropDataset ds = gen_crop_dataset(1280, 0.35, 12, 64);
    return ds;
}

std::vector<unsigned char> prefix_bytes(const ParamSet<float>& ps, const std::string& prefix) {
    std::vector<unsigned char> out;
    for (size_t i = 0; i < ps.size(); ++i) {
        const auto& e = ps.entry(i);
        if (e.name.rfind(prefix, 0) != 0) continue;
        const size_t at = out.size();
        const size_t n = e.value.data.size() * sizeof(float);
        out.resize(at + n);
        std::memcpy(out.data() + at, e.value.data.data(), n);
    }
    return out;
}

// mean cosine similarity over same-class or cross-class row pairs
double mean_pair_cos(const Tensor<float>& e, const std::vector<int>& labels, bool same) {
    const int n = e.dim(0), d = e.dim(1);
    std::vector<double> norm(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int k = 0; k < d; ++k) s += double(e.data[size_t(i) * d + k]) * e.data[size_t(i) * d + k];
        norm[size_t(i)] = std::sqrt(s);
    }
    double acc = 0;
    long cnt = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if ((labels[size_t(i)] == labels[size_t(j)]) != same) continue;
            double dot = 0;
            for (int k = 0; k < d; ++k)
                dot += double(e.data[size_t(i) * d + k]) * e.data[size_t(j) * d + k];
            acc += dot / (norm[size_t(i)] * norm[size_t(j)]);
            ++cnt;
        }
    REQUIRE(cnt > 0);
    return acc / double(cnt);
}

double epoch_mean(const std::vector<LossPoint>& curve, int epoch) {
    double acc = 0;
    int cnt = 0;
    for (const auto& p : curve)
        if (p.epoch == epoch) {
            acc += p.loss;
            ++cnt;
        }
    REQUIRE(cnt > 0);
    return acc / cnt;
}

std::vector<unsigned char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                      std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig cfg = base_config(Regime::scl, tiny_encoder());
    CHECK_NOTHROW(cfg.validate());

    TrainConfig bad = cfg;
    bad.batch = 1;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);  // SCL needs pairs
    bad.regime = Regime::sl;
    CHECK_NOTHROW(bad.validate());  // batch 1 is legal for SL
    bad.batch = 0;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);

    bad = cfg;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);

    bad = cfg;
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);

    bad = cfg;
    bad.tau = 0.0;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);

    bad = cfg;
    bad.train_frac = 0.7;  // 0.7 + 0.2 != 1
    CHECK_THROWS_AS(bad.validate(), ContractViolation);

    bad = base_config(Regime::sl, tiny_encoder());
    bad.sl_loss = SlLoss::focal;
    bad.focal_gamma = -1.0;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
    bad.focal_gamma = 2.0;
    bad.focal_alpha = 0.0;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
    bad.focal_alpha = 0.25;
    CHECK_NOTHROW(bad.validate());

    // gamma is only vetted when the focal loss is actually selected
    bad.sl_loss = SlLoss::ce;
    bad.focal_gamma = -1.0;
    CHECK_NOTHROW(bad.validate());

    bad = cfg;
    bad.augment.translate_frac = 0.9;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);

    bad = cfg;
    bad.encoder.proj_dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);

    CHECK(base_config(Regime::scl, tiny_encoder()).loss_variant_name() == "supcon-printed");
    TrainConfig lv = base_config(Regime::scl, tiny_encoder());
    lv.supcon_variant = SupConVariant::log_mean_out;
    CHECK(lv.loss_variant_name() == "supcon-logout");
    lv.regime = Regime::sl;
    CHECK(lv.loss_variant_name() == "ce");
    lv.sl_loss = SlLoss::focal;
    CHECK(lv.loss_variant_name() == "focal");

    // paper defaults survive in the config
    TrainConfig defaults;
    CHECK(defaults.epochs == 50);
    CHECK(defaults.batch == 256);
    CHECK(defaults.lr == doctest::Approx(0.001));
    CHECK(defaults.tau == doctest::Approx(0.05));
    CHECK(defaults.train_frac == doctest::Approx(0.8));
    CHECK(defaults.test_frac == doctest::Approx(0.2));
}

TEST_CASE("augment identity, involution, determinism") {
    const Image img = crops_small().images.at(2);

    AugmentSpec ident;
    ident.flip_prob = 0.0;
    ident.translate_frac = 0.0;
    ident.scale_min = ident.scale_max = 1.0;
    ident.brightness = 0.0;
    RngState r1(9);
    const Image same = augment_view(img, ident, r1);
    REQUIRE(same.px.size() == img.px.size());
    CHECK(std::memcmp(same.px.data(), img.px.data(), img.px.size() * sizeof(float)) == 0);

    AugmentSpec fliponly = ident;
    fliponly.flip_prob = 1.0;
    RngState r2(9), r3(10);
    const Image once = augment_view(img, fliponly, r2);
    const Image twice = augment_view(once, fliponly, r3);
    CHECK(std::memcmp(twice.px.data(), img.px.data(), img.px.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(once.px.data(), img.px.data(), img.px.size() * sizeof(float)) != 0);

    const Image mirrored = hflip(hflip(img));
    CHECK(std::memcmp(mirrored.px.data(), img.px.data(), img.px.size() * sizeof(float)) == 0);

    AugmentSpec full;  // defaults exercise every op
    RngState a(77), b(77), c(78);
    const Image va = augment_view(img, full, a);
    const Image vb = augment_view(img, full, b);
    const Image vc = augment_view(img, full, c);
    CHECK(std::memcmp(va.px.data(), vb.px.data(), va.px.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(va.px.data(), vc.px.data(), va.px.size() * sizeof(float)) != 0);
    CHECK(va.w == img.w);
    CHECK(va.h == img.h);
    for (float v : va.px) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    AugmentSpec bad;
    bad.scale_min = 0.0;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
    bad = AugmentSpec{};
    bad.flip_prob = 1.5;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
    bad = AugmentSpec{};
    bad.scale_max = 0.5;  // below scale_min
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("make_batch shapes, scaling and errors") {
    const CropDataset& ds = crops_small();
    const std::vector<int> ids{0, 3, 5};
    const Tensor<float> x = make_batch<float>(ds, ids, 16);
    REQUIRE(x.shape == std::vector<int>({3, 1, 16, 16}));
    for (float v : x.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    // native resolution rows are copied, not resampled
    const Tensor<float> native = make_batch<float>(ds, {0}, 32);
    const Image& img0 = ds.images[0];
    REQUIRE(native.data.size() == img0.px.size());
    CHECK(std::memcmp(native.data.data(), img0.px.data(), img0.px.size() * sizeof(float)) == 0);

    CHECK_THROWS_AS(make_batch<float>(ds, {}, 16), ContractViolation);
}

TEST_CASE("sl training: finite curve, layout, ce/focal identity") {
    const CropDataset& ds = crops_small();
    TrainConfig cfg = base_config(Regime::sl, tiny_encoder());

    TrainResult<float> res = run_training<float>(ds, cfg);
    const int n_train = int(ds.manifest.n_train);
    const int steps_per_epoch = (n_train + cfg.batch - 1) / cfg.batch;
    REQUIRE(int(res.curve.size()) == cfg.epochs * steps_per_epoch);
    for (const auto& p : res.curve) {
        CHECK(std::isfinite(p.loss));
        CHECK(p.epoch >= 1);
        CHECK(p.epoch <= cfg.epochs);
        CHECK(p.step >= 1);
        CHECK(p.step <= steps_per_epoch);
    }
    CHECK(res.stage1_curve.empty());
    CHECK(res.skipped_batches == 0);
    CHECK(int(res.test_eval.labels.size()) == int(ds.manifest.n_test));
    CHECK(int(res.train_eval.labels.size()) == n_train);

    // cross-entropy is exactly the gamma=0, alpha=1 focal point
    TrainConfig focal0 = cfg;
    focal0.sl_loss = SlLoss::focal;
    focal0.focal_gamma = 0.0;
    focal0.focal_alpha = 1.0;
    TrainResult<float> resf = run_training<float>(ds, focal0);
    REQUIRE(resf.curve.size() == res.curve.size());
    for (size_t i = 0; i < res.curve.size(); ++i)
        CHECK(resf.curve[i].loss == res.curve[i].loss);

    // a real gamma changes the trajectory
    TrainConfig focal2 = focal0;
    focal2.focal_gamma = 2.0;
    TrainResult<float> resf2 = run_training<float>(ds, focal2);
    bool differs = false;
    for (size_t i = 0; i < res.curve.size() && !differs; ++i)
        differs = resf2.curve[i].loss != res.curve[i].loss;
    CHECK(differs);
}

TEST_CASE("sl training learns the crops") {
    TrainConfig cfg = base_config(Regime::sl, small_encoder());
    cfg.epochs = 30;
    cfg.lr = 3e-3;
    const TrainResult<float> res = run_training<float>(crops_learn(), cfg);

    CHECK(epoch_mean(res.curve, cfg.epochs) < epoch_mean(res.curve, 1));
    CHECK(res.test_eval.report.accuracy >= 0.85);
}

TEST_CASE("scl stage 1: curve drops, nothing skipped, nothing frozen") {
    const CropDataset& ds = crops_small();
    TrainConfig cfg = base_config(Regime::scl, tiny_encoder());
    cfg.encoder.proj_dropout = 0.0;
    cfg.epochs = 10;
    cfg.lr = 3e-3;

    FaceTouchModel<float> model(cfg.encoder);
    int skipped = -1, total = -1;
    const std::vector<LossPoint> curve = train_scl_stage1(model, ds, cfg, &skipped, &total);

    const int n_train = int(ds.manifest.n_train);
    const int steps_per_epoch = (n_train + cfg.batch - 1) / cfg.batch;
    CHECK(skipped == 0);
    CHECK(total == cfg.epochs * steps_per_epoch);
    REQUIRE(int(curve.size()) == total);
    for (const auto& p : curve) CHECK(std::isfinite(p.loss));
    CHECK(epoch_mean(curve, 5) < epoch_mean(curve, 1));

    // stage 1 leaves every parameter trainable
    for (size_t i = 0; i < model.params().size(); ++i) CHECK(model.params().entry(i).trainable);
}

TEST_CASE("scl stage 1 separates the held-out classes") {
    const CropDataset& ds = crops_learn();
    TrainConfig cfg = base_config(Regime::scl, small_encoder());
    cfg.epochs = 8;
    cfg.lr = 3e-3;

    CropDataset at_input = ds;
    for (Image& img : at_input.images)
        img = resize(img, cfg.encoder.input_size, cfg.encoder.input_size);
    at_input.manifest.width = at_input.manifest.height = cfg.encoder.input_size;

    FaceTouchModel<float> model(cfg.encoder);
    train_scl_stage1(model, at_input, cfg);

    const std::vector<int> test_ids = at_input.ids_of_split(kSplitTest);
    std::vector<int> labels;
    for (int id : test_ids) labels.push_back(at_input.labels[size_t(id)]);
    const Tensor<float> x = make_batch<float>(at_input, test_ids, cfg.encoder.input_size);
    const Tensor<float> r = model.encode_batch(x);
    const int d = r.dim(1);
    Tensor<float> z({r.dim(0), 128});
    for (int i = 0; i < r.dim(0); ++i) {
        std::vector<float> row(r.data.begin() + size_t(i) * d, r.data.begin() + size_t(i + 1) * d);
        const std::vector<float> zi = model.project(row);
        REQUIRE(int(zi.size()) == 128);
        std::copy(zi.begin(), zi.end(), z.data.begin() + size_t(i) * 128);
    }

    CHECK(mean_pair_cos(z, labels, true) > mean_pair_cos(z, labels, false));
    CHECK(mean_pair_cos(r, labels, true) > mean_pair_cos(r, labels, false));
}

TEST_CASE("scl stage 2: representation frozen, projection unused") {
    const CropDataset& ds = crops_small();
    TrainConfig cfg = base_config(Regime::scl, tiny_encoder());
    cfg.epochs = 2;

    FaceTouchModel<float> model(cfg.encoder);
    train_scl_stage1(model, ds, cfg);

    const std::vector<unsigned char> enc_before = prefix_bytes(model.params(), "enc.");
    const std::vector<unsigned char> proj_before = prefix_bytes(model.params(), "proj.");
    const std::vector<unsigned char> cls_before = prefix_bytes(model.params(), "cls.");

    model.reset_proj_invocations();
    TrainConfig stage2 = cfg;
    stage2.epochs = 4;
    const std::vector<LossPoint> curve = train_scl_stage2(model, ds, stage2);

    CHECK(prefix_bytes(model.params(), "enc.") == enc_before);
    CHECK(prefix_bytes(model.params(), "proj.") == proj_before);
    CHECK(prefix_bytes(model.params(), "cls.") != cls_before);
    CHECK(model.proj_invocations() == 0);

    for (size_t i = 0; i < model.params().size(); ++i) {
        const auto& e = model.params().entry(i);
        const bool head = e.name.rfind("cls.", 0) == 0;
        CHECK(e.trainable == head);
    }

    REQUIRE(!curve.empty());
    for (const auto& p : curve) CHECK(std::isfinite(p.loss));
    CHECK(epoch_mean(curve, stage2.epochs) < epoch_mean(curve, 1));

    // inference after stage 2 still leaves the projection untouched
    evaluate(model, ds, kSplitTest);
    CHECK(model.proj_invocations() == 0);
}

TEST_CASE("evaluate: oracle cases and split errors") {
    EncoderConfig ec = tiny_encoder();
    FaceTouchModel<float> model(ec);

    CropDataset toy;
    toy.manifest.width = toy.manifest.height = ec.input_size;
    for (int i = 0; i < 16; ++i) {
        // checkerboards of varying cell size, so embeddings spread well apart
        Image img(ec.input_size, ec.input_size, 1);
        const int px = 1 + i % 4, py = 1 + i / 4;
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) img.at(x, y, 0) = float((x / px + y / py) % 2);
        toy.images.push_back(std::move(img));
        toy.labels.push_back(i < 4 ? 1 : 0);
        toy.split.push_back(kSplitTest);
    }

    // force the head to predict negative everywhere: accuracy = 12/16, recall 0
    {
        Tensor<float>& b = model.params().value("cls.out.b");
        b.data[0] = 10.0f;
        b.data[1] = -10.0f;
    }
    EvalResult neg = evaluate(model, toy, kSplitTest);
    CHECK(neg.report.accuracy == 0.75);
    CHECK(neg.report.recall == 0.0);
    CHECK(neg.report.counts.tp == 0);
    CHECK(neg.report.counts.tn == 12);

    // a classifier that happens to match every label scores perfectly; the
    // output bias is recentred on the median logit so predictions are mixed
    {
        Tensor<float>& b = model.params().value("cls.out.b");
        b.data[0] = 0.0f;
        b.data[1] = 0.0f;
        Tensor<float>& w = model.params().value("cls.out.w");
        RngState wr(8);
        for (float& v : w.data) v = float(wr.normal() * 0.02);
    }
    EvalResult first = evaluate(model, toy, kSplitTest);
    std::vector<double> diffs;
    for (double s : first.scores) diffs.push_back(std::log(s / (1.0 - s)));
    std::vector<double> sorted = diffs;
    std::sort(sorted.begin(), sorted.end());
    const double mid = 0.5 * (sorted[7] + sorted[8]);
    model.params().value("cls.out.b").data[1] = float(-mid);

    EvalResult probe = evaluate(model, toy, kSplitTest);
    int n_pos_pred = 0;
    for (size_t i = 0; i < probe.scores.size(); ++i) {
        toy.labels[size_t(i)] = probe.scores[i] >= 0.5 ? 1 : 0;
        n_pos_pred += toy.labels[size_t(i)];
    }
    REQUIRE(n_pos_pred > 0);
    REQUIRE(n_pos_pred < int(toy.labels.size()));
    EvalResult perfect = evaluate(model, toy, kSplitTest);
    CHECK(perfect.report.accuracy == 1.0);
    CHECK(perfect.report.f1 == 1.0);

    // reported F1 is consistent with reported precision and recall
    const auto& r = perfect.report;
    CHECK(std::fabs(r.f1 - 2.0 * r.precision * r.recall / (r.precision + r.recall)) < 1e-12);

    CHECK_THROWS_AS(evaluate(model, toy, kSplitTrain), ContractViolation);
}

TEST_CASE("identical configs give bit-identical checkpoints") {
    const fs::path dir = fs::temp_directory_path() / "ft_train_test";
    fs::create_directories(dir);

    const CropDataset& ds = crops_small();
    for (Regime regime : {Regime::sl, Regime::scl}) {
        TrainConfig cfg = base_config(regime, tiny_encoder());
        cfg.epochs = 2;
        TrainProvenance prov{regime == Regime::sl ? "sl" : "scl", cfg.loss_variant_name(),
                             cfg.seed, cfg.epochs};

        const TrainResult<float> a = run_training<float>(ds, cfg);
        const TrainResult<float> b = run_training<float>(ds, cfg);
        const fs::path pa = dir / "a.ftck", pb = dir / "b.ftck";
        save_checkpoint(pa.string(), a.model, prov);
        save_checkpoint(pb.string(), b.model, prov);
        CHECK(file_bytes(pa) == file_bytes(pb));
        CHECK(loss_curve_to_csv(a.curve) == loss_curve_to_csv(b.curve));

        TrainConfig other = cfg;
        other.seed = cfg.seed + 1;
        const TrainResult<float> c = run_training<float>(ds, other);
        save_checkpoint(pb.string(), c.model, prov);
        CHECK(file_bytes(pa) != file_bytes(pb));
    }
    fs::remove_all(dir);
}

TEST_CASE("training rejects an empty split") {
    CropDataset ds = gen_crop_dataset(12, 0.5, 3, 32);
    for (int& s : ds.split) s = kSplitTest;  // no training rows left
    TrainConfig cfg = base_config(Regime::sl, tiny_encoder());
    FaceTouchModel<float> model(cfg.encoder);
    CHECK_THROWS_AS(train_sl(model, ds, cfg), ContractViolation);
    CHECK_THROWS_AS(train_scl_stage1(model, ds, cfg), ContractViolation);
    CHECK_THROWS_AS(train_scl_stage2(model, ds, cfg), ContractViolation);
}

TEST_CASE("loss curve csv layout") {
    std::vector<LossPoint> curve{{1, 1, 0.5}, {1, 2, 0.25}, {2, 1, 0.125}};
    const std::string csv = loss_curve_to_csv(curve);
    CHECK(csv == "epoch,step,loss\n1,1,0.5\n1,2,0.25\n2,1,0.125\n");
}
