#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "facetouch/battery.hpp"
#include "facetouch/dataset.hpp"
#include "facetouch/image.hpp"
#include "facetouch/metrics.hpp"
#include "facetouch/model.hpp"
#include "facetouch/pipeline.hpp"
#include "facetouch/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace facetouch;

namespace {

// ---------------------------------------------------------------- config ---

ordered_json defaults_for(const std::string& sub) {
    if (sub == "gen-data")
        return ordered_json{{"kind", "crops"},
                            {"n", 1000},
                            {"positive_fraction", 0.22},
                            {"size", 64},
                            {"seed", std::uint64_t{7}},
                            {"scenes",
                             {{"count", 20},
                              {"min_figures", 1},
                              {"max_figures", 3},
                              {"occlusion_rate", 0.0},
                              {"width", 256},
                              {"height", 256}}}};
    if (sub == "train")
        return ordered_json{{"data", ""},
                            {"regime", "sl"},
                            {"loss", ""},
                            {"precision", "f32"},
                            {"epochs", 50},
                            {"batch", 256},
                            {"lr", 0.001},
                            {"tau", 0.05},
                            {"focal_gamma", 2.0},
                            {"focal_alpha", 1.0},
                            {"seed", std::uint64_t{7}},
                            {"encoder",
                             {{"input_size", 64},
                              {"widths", std::vector<int>{16, 32, 64}},
                              {"embed_dim", 64},
                              {"proj_dropout", 0.5},
                              {"seed", std::uint64_t{1}}}},
                            {"augment",
                             {{"flip_prob", 0.5},
                              {"translate_frac", 0.1},
                              {"scale_min", 0.9},
                              {"scale_max", 1.1},
                              {"brightness", 0.2}}}};
    if (sub == "eval")
        return ordered_json{
            {"ckpt", ""}, {"data", ""}, {"split", "test"}, {"threshold", 0.5}};
    if (sub == "infer" || sub == "stream") {
        ordered_json j{{"ckpt", ""},
                       {"pipeline",
                        {{"anonymize", true},
                         {"threshold", 0.5},
                         {"blur_sigma", 2.0},
                         {"attention_overlay", false},
                         {"fallback_enabled", true},
                         {"seed", std::uint64_t{0}}}},
                       {"truth_csv", ""},
                       {"detector",
                        {{"miss_rate", 0.0}, {"fp_rate", 0.0}, {"seed", std::uint64_t{0}}}}};
        j[sub == "infer" ? "image" : "frames"] = "";
        return j;
    }
    if (sub == "gradcheck")
        return ordered_json{{"seeds", 20}, {"start_seed", std::uint64_t{1}}, {"tol", 1e-6}};
    if (sub == "gradcam")
        return ordered_json{{"ckpt", ""}, {"image", ""}, {"target", 1}, {"layer", ""}};
    throw ContractViolation("no defaults for subcommand " + sub);
}

bool same_kind(const ordered_json& a, const ordered_json& b) {
    if (a.is_number() && b.is_number()) return true;
    if (a.is_boolean() && b.is_boolean()) return true;
    if (a.is_string() && b.is_string()) return true;
    if (a.is_array() && b.is_array()) return true;
    if (a.is_object() && b.is_object()) return true;
    return false;
}

void deep_merge(ordered_json& base, const ordered_json& patch, const std::string& prefix) {
    for (const auto& [k, v] : patch.items()) {
        if (!base.contains(k)) throw ConfigError(prefix + k, "unknown config key");
        ordered_json& tgt = base[k];
        if (tgt.is_object() && v.is_object()) {
            deep_merge(tgt, v, prefix + k + ".");
            continue;
        }
        if (!same_kind(tgt, v))
            throw ConfigError(prefix + k, "wrong value type (expected " +
                                              std::string(tgt.type_name()) + ")");
        tgt = v;
    }
}

ordered_json* dotted_node(ordered_json& root, const std::string& path) {
    ordered_json* cur = &root;
    std::size_t pos = 0;
    while (pos <= path.size()) {
        const std::size_t dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (!cur->is_object() || !cur->contains(key)) return nullptr;
        cur = &(*cur)[key];
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    return cur;
}

void apply_set(ordered_json& cfg, const std::string& kv) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError(kv, "--set expects key=value");
    const std::string path = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    ordered_json* node = dotted_node(cfg, path);
    if (!node || node->is_object()) throw ConfigError(path, "unknown config key");
    try {
        if (node->is_boolean()) {
            if (raw == "true" || raw == "1")
                *node = true;
            else if (raw == "false" || raw == "0")
                *node = false;
            else
                throw ConfigError(path, "expected a boolean, got '" + raw + "'");
        } else if (node->is_number_unsigned()) {
            *node = std::uint64_t(std::stoull(raw));
        } else if (node->is_number_integer()) {
            *node = std::int64_t(std::stoll(raw));
        } else if (node->is_number_float()) {
            *node = std::stod(raw);
        } else if (node->is_string()) {
            *node = raw;
        } else if (node->is_array()) {
            const ordered_json parsed = ordered_json::parse(raw);
            if (!parsed.is_array()) throw ConfigError(path, "expected a JSON array");
            *node = parsed;
        } else {
            throw ConfigError(path, "value cannot be set");
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError(path, "cannot parse value '" + raw + "'");
    }
}

// A config file is either a bare config object or a previous run's manifest
// (re-run support: the effective config is echoed under "config").
ordered_json load_config_file(const std::string& path, const std::string& sub) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path, std::string("invalid JSON: ") + e.what());
    }
    if (j.is_object() && j.contains("subcommand") && j.contains("config")) {
        if (j.at("subcommand").get<std::string>() != sub)
            throw ConfigError("config", "manifest belongs to subcommand '" +
                                            j.at("subcommand").get<std::string>() + "'");
        return j.at("config");
    }
    return j;
}

// typed getters with the dotted field path in every error
template <class T>
T jget(const ordered_json& cfg, const std::string& path) {
    ordered_json copy = cfg;
    ordered_json* node = dotted_node(copy, path);
    if (!node) throw ConfigError(path, "missing config key");
    try {
        return node->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(path, "wrong value type");
    }
}

void require_range(bool ok, const std::string& path, const std::string& msg) {
    if (!ok) throw ConfigError(path, msg);
}

// ------------------------------------------------------------- manifests ---

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

void write_run_manifest(const fs::path& out_dir, const std::string& sub,
                        const ordered_json& cfg, const ordered_json& inputs,
                        const std::vector<std::string>& outputs) {
    ordered_json j;
    j["schema_version"] = 1;
    j["subcommand"] = sub;
    j["config"] = cfg;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    write_text(out_dir / "run_manifest.json", j.dump(2) + "\n");
}

// ------------------------------------------------------------ truth csv ----

std::string truth_to_csv(const std::vector<std::pair<std::string, OracleTruth>>& rows) {
    std::string out = "frame,class,cx,cy,w,h\n";
    char line[256];
    auto emit = [&](const std::string& frame, const char* cls, const NormBox& b) {
        std::snprintf(line, sizeof line, "%s,%s,%.17g,%.17g,%.17g,%.17g\n", frame.c_str(), cls,
                      b.cx, b.cy, b.w, b.h);
        out += line;
    };
    for (const auto& [frame, truth] : rows) {
        for (const Detection& d : truth.humans) emit(frame, "human", d.box);
        for (const Detection& d : truth.faces) emit(frame, "face", d.box);
    }
    return out;
}

std::map<std::string, OracleTruth> parse_truth_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::map<std::string, OracleTruth> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 || line.empty()) continue;  // header
        std::vector<std::string> cols;
        std::size_t pos = 0;
        while (true) {
            const std::size_t comma = line.find(',', pos);
            cols.push_back(line.substr(pos, comma == std::string::npos ? comma : comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (cols.size() != 6) throw ParseError("truth csv: expected 6 columns", lineno);
        Detection d;
        if (cols[1] == "face")
            d.cls = DetClass::face;
        else if (cols[1] == "human")
            d.cls = DetClass::human;
        else
            throw ParseError("truth csv: class must be face or human", lineno);
        try {
            d.box.cx = std::stod(cols[2]);
            d.box.cy = std::stod(cols[3]);
            d.box.w = std::stod(cols[4]);
            d.box.h = std::stod(cols[5]);
        } catch (const std::exception&) {
            throw ParseError("truth csv: malformed number", lineno);
        }
        OracleTruth& t = out[cols[0]];
        (d.cls == DetClass::face ? t.faces : t.humans).push_back(d);
    }
    return out;
}

// ----------------------------------------------------------- checkpoints ---

int checkpoint_dtype(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char hdr[9];
    if (!f.read(hdr, 9)) throw ParseError("checkpoint: truncated header", 0);
    if (std::memcmp(hdr, "FTCK", 4) != 0) throw ParseError("checkpoint: bad magic", 0);
    return int(static_cast<unsigned char>(hdr[8]));
}

template <class Fn>
void with_checkpoint(const std::string& path, Fn&& fn) {
    const int tag = checkpoint_dtype(path);
    TrainProvenance prov;
    if (tag == 4) {
        const FaceTouchModel<float> m = load_checkpoint<float>(path, &prov);
        fn(m, prov);
    } else if (tag == 8) {
        const FaceTouchModel<double> m = load_checkpoint<double>(path, &prov);
        fn(m, prov);
    } else {
        throw ParseError("checkpoint: unknown dtype tag", 8);
    }
}

// ------------------------------------------------------------- handlers ----

void run_gen_data(const ordered_json& cfg, const fs::path& out) {
    const std::string kind = jget<std::string>(cfg, "kind");
    std::vector<std::string> outputs;
    if (kind == "crops") {
        const int n = jget<int>(cfg, "n");
        const double pf = jget<double>(cfg, "positive_fraction");
        const int size = jget<int>(cfg, "size");
        require_range(n >= 1, "n", "must be >= 1");
        require_range(pf >= 0.0 && pf <= 1.0, "positive_fraction", "must be in [0,1]");
        require_range(size >= 8, "size", "must be >= 8");
        const CropDataset ds = gen_crop_dataset(n, pf, jget<std::uint64_t>(cfg, "seed"), size);
        save_dataset(out.string(), ds);
        outputs = {"manifest.json", "labels.csv", "images/"};
        std::printf("gen-data: %d crops (%d positive), hash %s\n", ds.manifest.n,
                    ds.manifest.n_pos, ds.manifest.content_hash.c_str());
        write_run_manifest(out, "gen-data", cfg,
                           ordered_json{{"dataset_hash", ds.manifest.content_hash}}, outputs);
        return;
    }
    if (kind == "scenes") {
        const int count = jget<int>(cfg, "scenes.count");
        const int min_f = jget<int>(cfg, "scenes.min_figures");
        const int max_f = jget<int>(cfg, "scenes.max_figures");
        const double occ = jget<double>(cfg, "scenes.occlusion_rate");
        const int width = jget<int>(cfg, "scenes.width");
        const int height = jget<int>(cfg, "scenes.height");
        require_range(count >= 1, "scenes.count", "must be >= 1");
        require_range(occ >= 0.0 && occ <= 1.0, "scenes.occlusion_rate", "must be in [0,1]");
        const std::uint64_t seed = jget<std::uint64_t>(cfg, "seed");
        fs::create_directories(out / "frames");
        std::vector<std::pair<std::string, OracleTruth>> rows;
        for (int i = 0; i < count; ++i) {
            const std::uint64_t si = RngState(seed).substream(0x5CE4E2, std::uint64_t(i)).seed();
            const SceneSample scene = gen_scene(min_f, max_f, occ, si, width, height);
            char name[32];
            std::snprintf(name, sizeof name, "f%04d", i);
            write_image((out / "frames" / (std::string(name) + ".pgm")).string(), scene.image);
            rows.emplace_back(name, truth_from_scene(scene));
        }
        write_text(out / "truth.csv", truth_to_csv(rows));
        outputs = {"frames/", "truth.csv"};
        std::printf("gen-data: %d scenes at occlusion %.3g\n", count, occ);
        write_run_manifest(out, "gen-data", cfg, ordered_json::object(), outputs);
        return;
    }
    throw ConfigError("kind", "must be 'crops' or 'scenes'");
}

TrainConfig train_config_from_json(const ordered_json& cfg) {
    TrainConfig tc;
    const std::string regime = jget<std::string>(cfg, "regime");
    if (regime == "sl")
        tc.regime = Regime::sl;
    else if (regime == "scl")
        tc.regime = Regime::scl;
    else
        throw ConfigError("regime", "must be 'sl' or 'scl'");

    std::string loss = jget<std::string>(cfg, "loss");
    if (loss.empty()) loss = tc.regime == Regime::sl ? "ce" : "supcon-printed";
    if (loss == "ce" || loss == "focal") {
        if (tc.regime != Regime::sl)
            throw ConfigError("loss", "'" + loss + "' requires regime 'sl'");
        tc.sl_loss = loss == "ce" ? SlLoss::ce : SlLoss::focal;
    } else if (loss == "supcon-printed" || loss == "supcon-logout") {
        if (tc.regime != Regime::scl)
            throw ConfigError("loss", "'" + loss + "' requires regime 'scl'");
        tc.supcon_variant =
            loss == "supcon-printed" ? SupConVariant::mean_in_log : SupConVariant::log_mean_out;
    } else {
        throw ConfigError("loss", "must be ce, focal, supcon-printed or supcon-logout");
    }

    tc.epochs = jget<int>(cfg, "epochs");
    tc.batch = jget<int>(cfg, "batch");
    tc.lr = jget<double>(cfg, "lr");
    tc.tau = jget<double>(cfg, "tau");
    tc.focal_gamma = jget<double>(cfg, "focal_gamma");
    tc.focal_alpha = jget<double>(cfg, "focal_alpha");
    tc.seed = jget<std::uint64_t>(cfg, "seed");
    tc.encoder.input_size = jget<int>(cfg, "encoder.input_size");
    tc.encoder.widths = jget<std::vector<int>>(cfg, "encoder.widths");
    tc.encoder.embed_dim = jget<int>(cfg, "encoder.embed_dim");
    tc.encoder.proj_dropout = jget<double>(cfg, "encoder.proj_dropout");
    tc.encoder.seed = jget<std::uint64_t>(cfg, "encoder.seed");
    tc.augment.flip_prob = jget<double>(cfg, "augment.flip_prob");
    tc.augment.translate_frac = jget<double>(cfg, "augment.translate_frac");
    tc.augment.scale_min = jget<double>(cfg, "augment.scale_min");
    tc.augment.scale_max = jget<double>(cfg, "augment.scale_max");
    tc.augment.brightness = jget<double>(cfg, "augment.brightness");
    try {
        tc.validate();
    } catch (const ContractViolation& e) {
        throw ConfigError("train", e.what());
    }
    return tc;
}

template <class T>
void run_train_typed(const ordered_json& cfg, const fs::path& out, const TrainConfig& tc,
                     const CropDataset& ds) {
    const TrainResult<T> res = run_training<T>(ds, tc);

    TrainProvenance prov;
    prov.regime = tc.regime == Regime::sl ? "sl" : "scl";
    prov.loss_variant = tc.loss_variant_name();
    prov.seed = tc.seed;
    prov.epochs = tc.epochs;
    save_checkpoint((out / "model.ftck").string(), res.model, prov);

    std::vector<std::string> outputs = {"model.ftck", "metrics.json", "roc.csv"};
    if (tc.regime == Regime::scl) {
        write_text(out / "loss_curve_stage1.csv", loss_curve_to_csv(res.stage1_curve));
        write_text(out / "loss_curve_stage2.csv", loss_curve_to_csv(res.curve));
        outputs.push_back("loss_curve_stage1.csv");
        outputs.push_back("loss_curve_stage2.csv");
    } else {
        write_text(out / "loss_curve.csv", loss_curve_to_csv(res.curve));
        outputs.push_back("loss_curve.csv");
    }
    write_text(out / "metrics.json", report_to_json(res.test_eval.report) + "\n");
    write_text(out / "roc.csv", roc_to_csv(res.test_eval.report.roc));

    std::printf("train: %s/%s test accuracy %.4f auc %.4f\n", prov.regime.c_str(),
                prov.loss_variant.c_str(), res.test_eval.report.accuracy,
                res.test_eval.report.auc);
    write_run_manifest(out, "train", cfg,
                       ordered_json{{"dataset_hash", ds.manifest.content_hash}}, outputs);
}

void run_train(const ordered_json& cfg, const fs::path& out) {
    const std::string data = jget<std::string>(cfg, "data");
    if (data.empty()) throw ConfigError("data", "path to a generated dataset is required");
    const TrainConfig tc = train_config_from_json(cfg);
    const CropDataset ds = load_dataset(data);
    const std::string precision = jget<std::string>(cfg, "precision");
    if (precision == "f32")
        run_train_typed<float>(cfg, out, tc, ds);
    else if (precision == "f64")
        run_train_typed<double>(cfg, out, tc, ds);
    else
        throw ConfigError("precision", "must be 'f32' or 'f64'");
}

void run_eval(const ordered_json& cfg, const fs::path& out) {
    const std::string ckpt = jget<std::string>(cfg, "ckpt");
    const std::string data = jget<std::string>(cfg, "data");
    if (ckpt.empty()) throw ConfigError("ckpt", "checkpoint path is required");
    if (data.empty()) throw ConfigError("data", "dataset path is required");
    const std::string split_name = jget<std::string>(cfg, "split");
    int split = kSplitTest;
    if (split_name == "train")
        split = kSplitTrain;
    else if (split_name != "test")
        throw ConfigError("split", "must be 'train' or 'test'");
    const double threshold = jget<double>(cfg, "threshold");
    require_range(threshold > 0 && threshold < 1, "threshold", "must be in (0,1)");

    const CropDataset ds = load_dataset(data);
    with_checkpoint(ckpt, [&](const auto& model, const TrainProvenance& prov) {
        const EvalResult ev = evaluate(model, ds, split);
        const MetricReport rep = scores_to_report(ev.labels, ev.scores, threshold);
        write_text(out / "metrics.json", report_to_json(rep) + "\n");
        write_text(out / "roc.csv", roc_to_csv(rep.roc));
        std::printf("eval: %s split accuracy %.4f f1 %.4f auc %.4f\n", split_name.c_str(),
                    rep.accuracy, rep.f1, rep.auc);
        write_run_manifest(out, "eval", cfg,
                           ordered_json{{"dataset_hash", ds.manifest.content_hash},
                                        {"ckpt_regime", prov.regime},
                                        {"ckpt_loss", prov.loss_variant}},
                           {"metrics.json", "roc.csv"});
    });
}

PipelineConfig pipeline_config_from_json(const ordered_json& cfg) {
    PipelineConfig pc;
    pc.anonymize = jget<bool>(cfg, "pipeline.anonymize");
    pc.threshold = jget<double>(cfg, "pipeline.threshold");
    pc.blur_sigma = jget<double>(cfg, "pipeline.blur_sigma");
    pc.attention_overlay = jget<bool>(cfg, "pipeline.attention_overlay");
    pc.fallback_enabled = jget<bool>(cfg, "pipeline.fallback_enabled");
    pc.seed = jget<std::uint64_t>(cfg, "pipeline.seed");
    try {
        pc.validate();
    } catch (const ContractViolation& e) {
        throw ConfigError("pipeline", e.what());
    }
    return pc;
}

// oracle when ground truth is on disk, whole-frame fallback otherwise
struct DetectorChoice {
    OracleDetector oracle;
    WholeFrameDetector whole;
    std::map<std::string, OracleTruth> truth;
    bool use_oracle = false;

    DetectorChoice(const ordered_json& cfg)
        : oracle(jget<double>(cfg, "detector.miss_rate"), jget<double>(cfg, "detector.fp_rate"),
                 jget<std::uint64_t>(cfg, "detector.seed")) {
        const std::string truth_csv = jget<std::string>(cfg, "truth_csv");
        if (!truth_csv.empty()) {
            truth = parse_truth_csv(truth_csv);
            use_oracle = true;
        }
    }
    DetectorPort& port() {
        if (use_oracle) return oracle;
        return whole;
    }
    void point_at(const std::string& frame_id) {
        if (!use_oracle) return;
        const auto it = truth.find(frame_id);
        oracle.set_truth(it == truth.end() ? OracleTruth{} : it->second);
    }
};

void run_infer(const ordered_json& cfg, const fs::path& out) {
    const std::string ckpt = jget<std::string>(cfg, "ckpt");
    const std::string image_path = jget<std::string>(cfg, "image");
    if (ckpt.empty()) throw ConfigError("ckpt", "checkpoint path is required");
    if (image_path.empty()) throw ConfigError("image", "input image is required");
    const PipelineConfig pc = pipeline_config_from_json(cfg);

    DetectorChoice det(cfg);
    const std::string frame_id = fs::path(image_path).stem().string();
    det.point_at(frame_id);
    const Image frame = read_image(image_path);

    with_checkpoint(ckpt, [&](const auto& model, const TrainProvenance& prov) {
        Image scrubbed;
        const FrameResult res = cascade_step(frame, frame_id, det.port(), model, pc, &scrubbed);
        write_image((out / "annotated.ppm").string(), annotate(scrubbed, res, pc.attention_overlay));
        write_results_jsonl((out / "results.jsonl").string(), {res});
        std::printf("infer: %s, %zu crop(s)\n", to_string(res.path), res.crops.size());
        for (const CropRecord& rec : res.crops)
            std::printf("  p(touch)=%.4f verdict=%s blurred=%s\n", rec.probability,
                        rec.verdict ? "touch" : "no-touch", rec.blurred ? "yes" : "no");
        write_run_manifest(out, "infer", cfg,
                           ordered_json{{"ckpt_regime", prov.regime},
                                        {"ckpt_loss", prov.loss_variant}},
                           {"annotated.ppm", "results.jsonl"});
    });
}

void run_stream_cmd(const ordered_json& cfg, const fs::path& out) {
    const std::string ckpt = jget<std::string>(cfg, "ckpt");
    const std::string frames_dir = jget<std::string>(cfg, "frames");
    if (ckpt.empty()) throw ConfigError("ckpt", "checkpoint path is required");
    if (frames_dir.empty()) throw ConfigError("frames", "frame directory is required");
    const PipelineConfig pc = pipeline_config_from_json(cfg);

    DetectorChoice det(cfg);
    const std::vector<StreamFrame> frames = list_frames(frames_dir);

    with_checkpoint(ckpt, [&](const auto& model, const TrainProvenance& prov) {
        ThroughputReport rep;
        const std::vector<FrameResult> results =
            run_stream(frames, det.port(), model, pc, (out / "frames").string(), &rep,
                       [&](int, const StreamFrame& f) { det.point_at(f.id); });
        write_results_jsonl((out / "results.jsonl").string(), results);
        write_throughput_json((out / "throughput.json").string(), rep);
        std::printf("stream: %d frame(s), %d errored, %.1f fps\n", rep.frames, rep.errored,
                    rep.fps);
        write_run_manifest(out, "stream", cfg,
                           ordered_json{{"ckpt_regime", prov.regime},
                                        {"ckpt_loss", prov.loss_variant}},
                           {"frames/", "results.jsonl", "throughput.json"});
    });
}

void run_gradcheck(const ordered_json& cfg, const fs::path& out) {
    const int seeds = jget<int>(cfg, "seeds");
    const std::uint64_t start = jget<std::uint64_t>(cfg, "start_seed");
    const double tol = jget<double>(cfg, "tol");
    require_range(seeds >= 1, "seeds", "must be >= 1");
    require_range(tol > 0, "tol", "must be positive");

    ordered_json rows = ordered_json::array();
    double worst = 0.0;
    int failures = 0;
    for (int s = 0; s < seeds; ++s) {
        const std::uint64_t seed = start + std::uint64_t(s);
        auto record = [&](const char* battery, const std::string& name, double err, bool ok) {
            rows.push_back({{"battery", battery}, {"case", name}, {"seed", seed},
                            {"max_rel_err", err}, {"pass", ok}});
            worst = std::max(worst, err);
            if (!ok) ++failures;
        };
        for (const BatteryResult& r : layer_grad_battery(seed, tol))
            record("layer", r.name, r.report.max_rel_err, r.report.pass);
        for (const BatteryResult& r : loss_grad_battery(seed, tol))
            record("loss", r.name, r.report.max_rel_err, r.report.pass);
        const double det_err = detection_grad_fd(seed);
        record("loss", "detection", det_err, det_err <= tol);
    }

    ordered_json j;
    j["tolerance"] = tol;
    j["seeds"] = seeds;
    j["worst_rel_err"] = worst;
    j["failures"] = failures;
    j["cases"] = std::move(rows);
    write_text(out / "gradcheck.json", j.dump(2) + "\n");
    std::printf("gradcheck: %d seed(s), worst relative error %.3g, tolerance %.3g\n", seeds,
                worst, tol);
    write_run_manifest(out, "gradcheck", cfg, ordered_json::object(), {"gradcheck.json"});
    if (failures > 0)
        throw Error("gradcheck: " + std::to_string(failures) + " case(s) above tolerance");
}

void run_gradcam(const ordered_json& cfg, const fs::path& out) {
    const std::string ckpt = jget<std::string>(cfg, "ckpt");
    const std::string image_path = jget<std::string>(cfg, "image");
    if (ckpt.empty()) throw ConfigError("ckpt", "checkpoint path is required");
    if (image_path.empty()) throw ConfigError("image", "input image is required");
    const int target = jget<int>(cfg, "target");
    require_range(target == 0 || target == 1, "target", "must be 0 or 1");
    const std::string layer = jget<std::string>(cfg, "layer");

    with_checkpoint(ckpt, [&](const auto& model, const TrainProvenance& prov) {
        const int S = model.config().input_size;
        const Image input = resize(to_gray(read_image(image_path)), S, S);
        const Image cam = model.gradcam(input, target, layer);
        write_image((out / "cam.pgm").string(), cam);
        Image overlay = to_rgb(input);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const float a = 0.5f * cam.at(x, y);
                overlay.at(x, y, 0) = overlay.at(x, y, 0) * (1 - a) + a;
            }
        write_image((out / "overlay.ppm").string(), overlay);
        float peak = 0;
        for (float v : cam.px) peak = std::max(peak, v);
        std::printf("gradcam: class %d over %s, peak %.3f\n", target,
                    layer.empty() ? model.last_conv_stage().c_str() : layer.c_str(), peak);
        write_run_manifest(out, "gradcam", cfg,
                           ordered_json{{"ckpt_regime", prov.regime},
                                        {"ckpt_loss", prov.loss_variant}},
                           {"cam.pgm", "overlay.ppm"});
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FaceTouch: contrastive face-touch recognition toolkit"};
    app.require_subcommand(1);

    struct SubSpec {
        CLI::App* cmd = nullptr;
        std::string config_path;
        std::vector<std::string> sets;
        std::string out_dir;
        // dedicated flag storage; applied as overrides when the flag was used
        std::vector<std::pair<CLI::Option*, std::function<std::string()>>> flags;
    };
    std::map<std::string, SubSpec> subs;

    auto add_sub = [&](const std::string& name, const std::string& desc) -> SubSpec& {
        SubSpec& s = subs[name];
        s.cmd = app.add_subcommand(name, desc);
        s.cmd->add_option("--config", s.config_path,
                          "JSON config file (or a previous run_manifest.json)");
        s.cmd->add_option("--set", s.sets, "override a config value, dotted key=value")
            ->take_all();
        s.cmd->add_option("--out", s.out_dir, "output directory")->required();
        return s;
    };
    auto bind = [&](SubSpec& s, const std::string& flag, const std::string& key,
                    const std::string& desc) {
        auto value = std::make_shared<std::string>();
        CLI::Option* opt = s.cmd->add_option(flag, *value, desc);
        s.flags.emplace_back(opt, [key, value]() { return key + "=" + *value; });
    };

    {
        SubSpec& s = add_sub("gen-data", "generate a synthetic crop dataset or scene frames");
        bind(s, "--kind", "kind", "crops | scenes");
        bind(s, "--n", "n", "number of crop samples");
        bind(s, "--positive-fraction", "positive_fraction", "fraction of touch positives");
        bind(s, "--size", "size", "crop side length in pixels");
        bind(s, "--seed", "seed", "generator seed");
        bind(s, "--scenes", "scenes.count", "number of scene frames");
        bind(s, "--occlusion", "scenes.occlusion_rate", "face occlusion probability");
    }
    {
        SubSpec& s = add_sub("train", "train a model (sl or scl regime)");
        bind(s, "--data", "data", "dataset directory from gen-data");
        bind(s, "--regime", "regime", "sl | scl");
        bind(s, "--loss", "loss", "ce | focal | supcon-printed | supcon-logout");
        bind(s, "--epochs", "epochs", "training epochs");
        bind(s, "--batch", "batch", "batch size");
        bind(s, "--lr", "lr", "Adam learning rate");
        bind(s, "--tau", "tau", "contrastive temperature");
        bind(s, "--seed", "seed", "training seed");
        bind(s, "--precision", "precision", "f32 | f64");
    }
    {
        SubSpec& s = add_sub("eval", "evaluate a checkpoint on a dataset split");
        bind(s, "--ckpt", "ckpt", "model checkpoint");
        bind(s, "--data", "data", "dataset directory");
        bind(s, "--split", "split", "train | test");
        bind(s, "--threshold", "threshold", "decision threshold");
    }
    {
        SubSpec& s = add_sub("infer", "run the cascade on a single frame");
        bind(s, "--ckpt", "ckpt", "model checkpoint");
        bind(s, "--image", "image", "input frame (ppm/pgm)");
        bind(s, "--truth", "truth_csv", "ground-truth csv for the oracle detector");
        bind(s, "--threshold", "pipeline.threshold", "touch decision threshold");
        bind(s, "--no-anonymize", "pipeline.anonymize", "disable face blurring (pass false)");
        bind(s, "--overlay", "pipeline.attention_overlay", "attention overlay (true/false)");
    }
    {
        SubSpec& s = add_sub("stream", "run the cascade over a frame directory");
        bind(s, "--ckpt", "ckpt", "model checkpoint");
        bind(s, "--frames", "frames", "directory of ppm/pgm frames");
        bind(s, "--truth", "truth_csv", "ground-truth csv for the oracle detector");
        bind(s, "--threshold", "pipeline.threshold", "touch decision threshold");
        bind(s, "--overlay", "pipeline.attention_overlay", "attention overlay (true/false)");
    }
    {
        SubSpec& s = add_sub("gradcheck", "finite-difference check of every layer and loss");
        bind(s, "--seeds", "seeds", "number of seeds to sweep");
        bind(s, "--tol", "tol", "relative error tolerance");
    }
    {
        SubSpec& s = add_sub("gradcam", "export a Grad-CAM map for one image");
        bind(s, "--ckpt", "ckpt", "model checkpoint");
        bind(s, "--image", "image", "input image");
        bind(s, "--target", "target", "class to explain (0 or 1)");
        bind(s, "--layer", "layer", "conv stage name (default: last)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: cli: %s\n", e.what());
        std::fputs(app.help().c_str(), stderr);
        return 2;
    }

    const std::string sub = app.get_subcommands().front()->get_name();
    SubSpec& spec = subs.at(sub);
    try {
        ordered_json cfg = defaults_for(sub);
        if (!spec.config_path.empty())
            deep_merge(cfg, load_config_file(spec.config_path, sub), "");
        for (const std::string& kv : spec.sets) apply_set(cfg, kv);
        for (const auto& [opt, render] : spec.flags)
            if (opt->count() > 0) apply_set(cfg, render());

        const fs::path out(spec.out_dir);
        fs::create_directories(out);
        if (sub == "gen-data")
            run_gen_data(cfg, out);
        else if (sub == "train")
            run_train(cfg, out);
        else if (sub == "eval")
            run_eval(cfg, out);
        else if (sub == "infer")
            run_infer(cfg, out);
        else if (sub == "stream")
            run_stream_cmd(cfg, out);
        else if (sub == "gradcheck")
            run_gradcheck(cfg, out);
        else if (sub == "gradcam")
            run_gradcam(cfg, out);
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: config: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
