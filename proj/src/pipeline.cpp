#include "facetouch/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace facetouch {

namespace {

using clock_type = std::chrono::steady_clock;

double ms_since(clock_type::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock_type::now() - t0).count();
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001B3ull;
    }
    return h;
}

struct PixelRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
};

PixelRect box_rect(const NormBox& box, int w, int h) {
    if (!(box.w > 0) || !(box.h > 0))
        throw ContractViolation("box extents must be positive");
    PixelRect r;
    r.x0 = std::clamp(static_cast<int>(std::floor((box.cx - box.w / 2) * w)), 0, w - 1);
    r.y0 = std::clamp(static_cast<int>(std::floor((box.cy - box.h / 2) * h)), 0, h - 1);
    r.x1 = std::clamp(static_cast<int>(std::ceil((box.cx + box.w / 2) * w)), r.x0 + 1, w);
    r.y1 = std::clamp(static_cast<int>(std::ceil((box.cy + box.h / 2) * h)), r.y0 + 1, h);
    return r;
}

void check_detection(const Detection& d, DetClass requested) {
    if (d.cls != requested) throw ContractViolation("detector returned a detection of the wrong class");
    const NormBox& b = d.box;
    const bool finite = std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) &&
                        std::isfinite(b.h);
    const double eps = 1e-9;
    if (!finite || b.w <= 0 || b.h <= 0 || b.cx - b.w / 2 < -eps || b.cx + b.w / 2 > 1 + eps ||
        b.cy - b.h / 2 < -eps || b.cy + b.h / 2 > 1 + eps)
        throw ContractViolation("detection box must lie inside the frame");
    if (!std::isfinite(d.confidence) || d.confidence < 0 || d.confidence > 1)
        throw ContractViolation("detection confidence must be finite in [0,1]");
}

}  // namespace

const char* to_string(DetClass c) { return c == DetClass::face ? "face" : "human"; }

const char* to_string(PathTaken p) {
    switch (p) {
        case PathTaken::face_path: return "face-path";
        case PathTaken::human_path: return "human-path";
        default: return "no-detection";
    }
}

std::vector<Detection> DetectorPort::detect(const Image& frame, DetClass cls) {
    (cls == DetClass::face ? face_calls_ : human_calls_) += 1;
    std::vector<Detection> out = run(frame, cls);
    for (const Detection& d : out) check_detection(d, cls);
    return out;
}

OracleTruth truth_from_scene(const SceneSample& scene) {
    OracleTruth t;
    for (const SceneFigure& fig : scene.figures) {
        t.humans.push_back({DetClass::human, fig.human_box, 1.0});
        if (fig.face_visible) t.faces.push_back({DetClass::face, fig.face_box, 1.0});
    }
    return t;
}

OracleDetector::OracleDetector(double miss_rate, double fp_rate, std::uint64_t seed)
    : miss_rate_(miss_rate), fp_rate_(fp_rate), rng_(RngState(seed).substream(0x0DAC1E)) {
    if (miss_rate < 0 || miss_rate > 1 || fp_rate < 0 || fp_rate > 1)
        throw ContractViolation("OracleDetector: rates must be in [0,1]");
}

std::vector<Detection> OracleDetector::run(const Image&, DetClass cls) {
    const std::vector<Detection>& truth = cls == DetClass::face ? truth_.faces : truth_.humans;
    std::vector<Detection> out;
    for (const Detection& d : truth) {
        if (miss_rate_ > 0 && rng_.bernoulli(miss_rate_)) continue;
        out.push_back(d);
    }
    for (int i = 0; i < 3 && fp_rate_ > 0 && rng_.bernoulli(fp_rate_); ++i) {
        Detection d;
        d.cls = cls;
        d.box.w = rng_.uniform(0.08, 0.3);
        d.box.h = rng_.uniform(0.08, 0.3);
        d.box.cx = rng_.uniform(d.box.w / 2, 1 - d.box.w / 2);
        d.box.cy = rng_.uniform(d.box.h / 2, 1 - d.box.h / 2);
        d.confidence = rng_.uniform(0.5, 1.0);
        out.push_back(d);
    }
    return out;
}

std::vector<Detection> WholeFrameDetector::run(const Image&, DetClass cls) {
    if (cls != answers_) return {};
    return {{cls, NormBox{0.5, 0.5, 1.0, 1.0}, 1.0}};
}

void PipelineConfig::validate() const {
    if (!(blur_sigma > 0) || !std::isfinite(blur_sigma))
        throw ContractViolation("PipelineConfig: blur sigma must be positive");
    if (!(threshold > 0) || !(threshold < 1))
        throw ContractViolation("PipelineConfig: threshold must be in (0,1)");
}

Letterboxed letterbox_crop(const Image& frame, const NormBox& box, int size) {
    if (size < 1) throw ContractViolation("letterbox_crop: size must be >= 1");
    const PixelRect r = box_rect(box, frame.w, frame.h);
    Image sub(r.x1 - r.x0, r.y1 - r.y0, frame.c);
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x)
            for (int ch = 0; ch < frame.c; ++ch) sub.at(x - r.x0, y - r.y0, ch) = frame.at(x, y, ch);
    sub = to_gray(sub);

    Letterboxed lb;
    const double scale = double(size) / std::max(sub.w, sub.h);
    lb.cw = std::max(1, static_cast<int>(std::lround(sub.w * scale)));
    lb.ch = std::max(1, static_cast<int>(std::lround(sub.h * scale)));
    lb.ox = (size - lb.cw) / 2;
    lb.oy = (size - lb.ch) / 2;
    const Image content = resize(sub, lb.cw, lb.ch);
    lb.image = Image(size, size, 1, 0.0f);
    for (int y = 0; y < lb.ch; ++y)
        for (int x = 0; x < lb.cw; ++x) lb.image.at(lb.ox + x, lb.oy + y) = content.at(x, y);
    return lb;
}

Image blur_region(const Image& img, const NormBox& box, double sigma, RngState& rng) {
    if (!(sigma > 0) || !std::isfinite(sigma))
        throw ContractViolation("blur_region: sigma must be positive");
    const PixelRect r = box_rect(box, img.w, img.h);

    const int rad = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * rad + 1));
    double ksum = 0;
    for (int i = -rad; i <= rad; ++i) {
        k[static_cast<std::size_t>(i + rad)] = std::exp(-0.5 * (double(i) * i) / (sigma * sigma));
        ksum += k[static_cast<std::size_t>(i + rad)];
    }
    for (double& v : k) v /= ksum;

    // horizontal pass over the rows the vertical pass will read
    const int hy0 = std::max(0, r.y0 - rad);
    const int hy1 = std::min(img.h, r.y1 + rad);
    Image hpass(r.x1 - r.x0, hy1 - hy0, img.c);
    for (int y = hy0; y < hy1; ++y)
        for (int x = r.x0; x < r.x1; ++x)
            for (int ch = 0; ch < img.c; ++ch) {
                double acc = 0;
                for (int dx = -rad; dx <= rad; ++dx)
                    acc += k[static_cast<std::size_t>(dx + rad)] *
                           img.at(std::clamp(x + dx, 0, img.w - 1), y, ch);
                hpass.at(x - r.x0, y - hy0, ch) = static_cast<float>(acc);
            }

    // region statistics of the original pixels set the noise strength
    std::vector<double> mean(static_cast<std::size_t>(img.c), 0.0);
    std::vector<double> sq(static_cast<std::size_t>(img.c), 0.0);
    const double count = double(r.x1 - r.x0) * double(r.y1 - r.y0);
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x)
            for (int ch = 0; ch < img.c; ++ch) {
                mean[static_cast<std::size_t>(ch)] += img.at(x, y, ch);
                sq[static_cast<std::size_t>(ch)] += double(img.at(x, y, ch)) * img.at(x, y, ch);
            }
    std::vector<double> sd(static_cast<std::size_t>(img.c), 0.0);
    for (int ch = 0; ch < img.c; ++ch) {
        mean[static_cast<std::size_t>(ch)] /= count;
        const double var = sq[static_cast<std::size_t>(ch)] / count -
                           mean[static_cast<std::size_t>(ch)] * mean[static_cast<std::size_t>(ch)];
        sd[static_cast<std::size_t>(ch)] = std::sqrt(std::max(0.0, var));
    }

    Image out = img;
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x)
            for (int ch = 0; ch < img.c; ++ch) {
                double acc = 0;
                for (int dy = -rad; dy <= rad; ++dy) {
                    const int yy = std::clamp(y + dy, 0, img.h - 1);
                    acc += k[static_cast<std::size_t>(dy + rad)] * hpass.at(x - r.x0, yy - hy0, ch);
                }
                acc += rng.normal() * 0.5 * sd[static_cast<std::size_t>(ch)];
                out.at(x, y, ch) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
    return out;
}

template <class T>
FrameResult cascade_step(const Image& frame, const std::string& frame_id, DetectorPort& det,
                         const FaceTouchModel<T>& model, const PipelineConfig& cfg,
                         Image* out_frame) {
    cfg.validate();
    if (frame.w < 1 || frame.h < 1) throw ContractViolation("cascade_step: empty frame");

    FrameResult res;
    res.frame_id = frame_id;
    const auto t_total = clock_type::now();

    auto t0 = clock_type::now();
    std::vector<Detection> dets = det.detect(frame, DetClass::face);
    if (!dets.empty()) {
        res.path = PathTaken::face_path;
    } else if (cfg.fallback_enabled) {
        dets = det.detect(frame, DetClass::human);
        res.path = dets.empty() ? PathTaken::no_detection : PathTaken::human_path;
    } else {
        res.path = PathTaken::no_detection;
    }
    res.timing.detect_ms = ms_since(t0);

    const int S = model.config().input_size;
    const bool blur_faces = res.path == PathTaken::face_path && cfg.anonymize;

    t0 = clock_type::now();
    std::vector<Letterboxed> crops;
    crops.reserve(dets.size());
    for (const Detection& d : dets) crops.push_back(letterbox_crop(frame, d.box, S));

    if (!dets.empty()) {
        Tensor<T> x({int(dets.size()), 1, S, S});
        for (std::size_t i = 0; i < crops.size(); ++i)
            for (std::size_t p = 0; p < crops[i].image.px.size(); ++p)
                x.data[i * crops[i].image.px.size() + p] = static_cast<T>(crops[i].image.px[p]);
        const Tensor<T> probs = model.classify_batch(model.encode_batch(x));
        for (std::size_t i = 0; i < dets.size(); ++i) {
            CropRecord rec;
            rec.box = dets[i].box;
            rec.confidence = dets[i].confidence;
            rec.probability = double(probs.data[i * 2 + 1]);
            rec.verdict = rec.probability >= cfg.threshold;
            rec.blurred = blur_faces;
            res.crops.push_back(rec);
        }
        if (cfg.attention_overlay) {
            for (std::size_t i = 0; i < dets.size(); ++i) {
                const Letterboxed& lb = crops[i];
                const Image full = model.gradcam(lb.image, res.crops[i].verdict ? 1 : 0);
                Image content(lb.cw, lb.ch, 1);
                for (int y = 0; y < lb.ch; ++y)
                    for (int x2 = 0; x2 < lb.cw; ++x2)
                        content.at(x2, y) = full.at(lb.ox + x2, lb.oy + y);
                res.crops[i].attention_index = int(res.attention.size());
                res.attention.push_back(std::move(content));
            }
        }
    }
    res.timing.classify_ms = ms_since(t0);

    t0 = clock_type::now();
    Image scrubbed = frame;
    if (blur_faces) {
        RngState rng = RngState(cfg.seed).substream(fnv1a(frame_id), 0xB1);
        for (const Detection& d : dets) scrubbed = blur_region(scrubbed, d.box, cfg.blur_sigma, rng);
    }
    res.timing.blur_ms = ms_since(t0);
    if (out_frame) *out_frame = std::move(scrubbed);

    res.timing.total_ms = ms_since(t_total);
    return res;
}

Image annotate(const Image& frame, const FrameResult& result, bool attention_overlay) {
    Image out = to_rgb(frame);
    for (const CropRecord& rec : result.crops) {
        const PixelRect r = box_rect(rec.box, out.w, out.h);

        if (attention_overlay && rec.attention_index >= 0) {
            const Image& map = result.attention[static_cast<std::size_t>(rec.attention_index)];
            const Image heat = resize(map, r.x1 - r.x0, r.y1 - r.y0);
            for (int y = r.y0; y < r.y1; ++y)
                for (int x = r.x0; x < r.x1; ++x) {
                    const float a = 0.5f * heat.at(x - r.x0, y - r.y0);
                    out.at(x, y, 0) = out.at(x, y, 0) * (1 - a) + a;
                }
        }

        const float red = rec.verdict ? 1.0f : 0.0f;
        const float green = rec.verdict ? 0.0f : 1.0f;
        auto paint = [&](int x, int y) {
            out.at(x, y, 0) = red;
            out.at(x, y, 1) = green;
            out.at(x, y, 2) = 0.0f;
        };
        for (int x = r.x0; x < r.x1; ++x) {
            paint(x, r.y0);
            paint(x, r.y1 - 1);
        }
        for (int y = r.y0; y < r.y1; ++y) {
            paint(r.x0, y);
            paint(r.x1 - 1, y);
        }
    }

    const std::uint64_t h = fnv1a(result.frame_id);
    for (int i = 0; i < std::min(8, out.w); ++i) {
        const float v = float((h >> (8 * i)) & 0xFF) / 255.0f;
        for (int ch = 0; ch < out.c; ++ch) out.at(i, 0, ch) = v;
    }
    return out;
}

std::vector<StreamFrame> list_frames(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<StreamFrame> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext != ".ppm" && ext != ".pgm") continue;
        out.push_back({entry.path().stem().string(), entry.path().string()});
    }
    std::sort(out.begin(), out.end(),
              [](const StreamFrame& a, const StreamFrame& b) { return a.path < b.path; });
    return out;
}

template <class T>
std::vector<FrameResult> run_stream(const std::vector<StreamFrame>& frames, DetectorPort& det,
                                    const FaceTouchModel<T>& model, const PipelineConfig& cfg,
                                    const std::string& out_dir, ThroughputReport* report,
                                    const std::function<void(int, const StreamFrame&)>& before_frame) {
    cfg.validate();
    namespace fs = std::filesystem;
    if (!out_dir.empty()) fs::create_directories(out_dir);

    ThroughputReport rep;
    const auto t_wall = clock_type::now();
    std::vector<FrameResult> results;
    results.reserve(frames.size());

    for (std::size_t i = 0; i < frames.size(); ++i) {
        const StreamFrame& f = frames[i];
        if (before_frame) before_frame(int(i), f);
        FrameResult r;
        try {
            const Image img = read_image(f.path);
            Image scrubbed;
            r = cascade_step(img, f.id, det, model, cfg, &scrubbed);
            const auto t0 = clock_type::now();
            const Image ann = annotate(scrubbed, r, cfg.attention_overlay);
            rep.annotate_ms += ms_since(t0);
            if (!out_dir.empty()) write_image((fs::path(out_dir) / (f.id + ".ppm")).string(), ann);
        } catch (const Error& e) {
            r = FrameResult{};
            r.frame_id = f.id;
            r.errored = true;
            r.error = e.what();
            rep.errored += 1;
        }
        rep.detect_ms += r.timing.detect_ms;
        rep.classify_ms += r.timing.classify_ms;
        rep.blur_ms += r.timing.blur_ms;
        results.push_back(std::move(r));
    }

    rep.frames = int(frames.size());
    rep.wall_ms = ms_since(t_wall);
    rep.fps = rep.wall_ms > 0 ? 1000.0 * double(rep.frames) / rep.wall_ms : 0.0;
    if (report) *report = rep;
    return results;
}

void write_results_jsonl(const std::string& path, const std::vector<FrameResult>& results) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const FrameResult& r : results) {
        nlohmann::ordered_json j;
        j["schema_version"] = 1;
        j["frame"] = r.frame_id;
        j["path"] = to_string(r.path);
        j["errored"] = r.errored;
        if (r.errored) j["error"] = r.error;
        nlohmann::ordered_json crops = nlohmann::ordered_json::array();
        for (const CropRecord& c : r.crops) {
            nlohmann::ordered_json jc;
            jc["box"] = {{"cx", c.box.cx}, {"cy", c.box.cy}, {"w", c.box.w}, {"h", c.box.h}};
            jc["confidence"] = c.confidence;
            jc["probability"] = c.probability;
            jc["verdict"] = c.verdict;
            jc["blurred"] = c.blurred;
            jc["attention"] = c.attention_index;
            crops.push_back(std::move(jc));
        }
        j["crops"] = std::move(crops);
        out << j.dump() << "\n";
    }
}

void write_throughput_json(const std::string& path, const ThroughputReport& rep) {
    nlohmann::ordered_json j;
    j["frames"] = rep.frames;
    j["errored"] = rep.errored;
    j["wall_ms"] = rep.wall_ms;
    j["fps"] = rep.fps;
    j["stage_ms"] = {{"detect", rep.detect_ms},
                     {"classify", rep.classify_ms},
                     {"blur", rep.blur_ms},
                     {"annotate", rep.annotate_ms}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

template FrameResult cascade_step<float>(const Image&, const std::string&, DetectorPort&,
                                         const FaceTouchModel<float>&, const PipelineConfig&,
                                         Image*);
template FrameResult cascade_step<double>(const Image&, const std::string&, DetectorPort&,
                                          const FaceTouchModel<double>&, const PipelineConfig&,
                                          Image*);
template std::vector<FrameResult> run_stream<float>(
    const std::vector<StreamFrame>&, DetectorPort&, const FaceTouchModel<float>&,
    const PipelineConfig&, const std::string&, ThroughputReport*,
    const std::function<void(int, const StreamFrame&)>&);
template std::vector<FrameResult> run_stream<double>(
    const std::vector<StreamFrame>&, DetectorPort&, const FaceTouchModel<double>&,
    const PipelineConfig&, const std::string&, ThroughputReport*,
    const std::function<void(int, const StreamFrame&)>&);

}  // namespace facetouch
