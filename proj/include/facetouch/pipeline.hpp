#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "facetouch/image.hpp"
#include "facetouch/model.hpp"
#include "facetouch/rng.hpp"
#include "facetouch/synth.hpp"

namespace facetouch {

enum class DetClass { face, human };
const char* to_string(DetClass c);

struct Detection {
    DetClass cls = DetClass::face;
    NormBox box;  // normalized, fully inside the frame
    double confidence = 1.0;
};

// Pluggable detector behind the cascade. detect() validates every returned
// Detection (requested class only, box inside the frame, finite confidence
// in [0,1]) and counts invocations per class, so tests can assert the
// cascade's exclusivity contract on any implementation.
class DetectorPort {
public:
    virtual ~DetectorPort() = default;

    std::vector<Detection> detect(const Image& frame, DetClass cls);

    std::uint64_t calls(DetClass cls) const {
        return cls == DetClass::face ? face_calls_ : human_calls_;
    }
    void reset_counters() { face_calls_ = human_calls_ = 0; }

protected:
    virtual std::vector<Detection> run(const Image& frame, DetClass cls) = 0;

private:
    std::uint64_t face_calls_ = 0;
    std::uint64_t human_calls_ = 0;
};

// Ground-truth rows for one frame.
struct OracleTruth {
    std::vector<Detection> faces;
    std::vector<Detection> humans;
};
OracleTruth truth_from_scene(const SceneSample& scene);

// Detector backed by synthetic ground truth. With the rates at zero it
// returns the truth exactly; otherwise each true detection is dropped with
// probability miss_rate and spurious boxes are injected with probability
// fp_rate per call, all drawn from the seeded stream.
class OracleDetector : public DetectorPort {
public:
    explicit OracleDetector(double miss_rate = 0.0, double fp_rate = 0.0,
                            std::uint64_t seed = 0);

    void set_truth(OracleTruth truth) { truth_ = std::move(truth); }

protected:
    std::vector<Detection> run(const Image& frame, DetClass cls) override;

private:
    OracleTruth truth_;
    double miss_rate_;
    double fp_rate_;
    RngState rng_;
};

// Degenerate stand-in used when no ground truth is available: answers one
// class with a single whole-frame detection at confidence 1 and stays
// silent for the other.
class WholeFrameDetector : public DetectorPort {
public:
    explicit WholeFrameDetector(DetClass answers = DetClass::human) : answers_(answers) {}

protected:
    std::vector<Detection> run(const Image& frame, DetClass cls) override;

private:
    DetClass answers_;
};

enum class PathTaken { face_path, human_path, no_detection };
const char* to_string(PathTaken p);

struct CropRecord {
    NormBox box;             // source detection in frame coordinates
    double confidence = 0;   // detector confidence
    double probability = 0;  // touch probability from the classifier
    bool verdict = false;    // probability >= threshold
    bool blurred = false;
    int attention_index = -1;  // into FrameResult::attention, -1 when absent
};

struct StageTiming {
    double detect_ms = 0;
    double classify_ms = 0;
    double blur_ms = 0;
    double total_ms = 0;
};

struct FrameResult {
    std::string frame_id;
    PathTaken path = PathTaken::no_detection;
    bool errored = false;
    std::string error;
    std::vector<CropRecord> crops;
    std::vector<Image> attention;  // Grad-CAM maps, crop input sized, in [0,1]
    StageTiming timing;
};

struct PipelineConfig {
    bool anonymize = true;
    double threshold = 0.5;
    double blur_sigma = 2.0;
    bool attention_overlay = false;
    bool fallback_enabled = true;  // human detector when no face is found
    std::uint64_t seed = 0;        // blur noise stream

    void validate() const;
};

// Aspect-preserving crop for the classifier: the box content is resized so
// its long side fits `size` and centered on a zero canvas. Offsets locate
// the content for attention-map alignment.
struct Letterboxed {
    Image image;  // grayscale, size x size
    int ox = 0, oy = 0;  // top-left of the content
    int cw = 0, ch = 0;  // content extent
};
Letterboxed letterbox_crop(const Image& frame, const NormBox& box, int size);

// Gaussian blur (separable, radius 3*sigma) of the pixels inside `box`,
// plus zero-mean Gaussian noise with std 0.5 * the region's own std,
// clamped to [0,1]. Pixels outside the box are untouched.
Image blur_region(const Image& img, const NormBox& box, double sigma, RngState& rng);

// Fig. 1 control flow over one frame: face detector first; the human
// detector runs only when no face was found (and fallback is enabled).
// Every detected box is classified independently. On the face path with
// anonymization on, faces are blurred before the frame leaves the pipeline;
// `out_frame`, when given, receives that privacy-scrubbed frame.
template <class T>
FrameResult cascade_step(const Image& frame, const std::string& frame_id, DetectorPort& det,
                         const FaceTouchModel<T>& model, const PipelineConfig& cfg,
                         Image* out_frame = nullptr);

// Verdict boxes (red touch / green no-touch) and the optional attention
// overlay drawn onto `frame`, which must already be the cascade's output.
// Every annotated frame carries a frame-id stamp: an 8 pixel strip at the
// top-left whose intensities encode the FNV-1a hash of the id.
Image annotate(const Image& frame, const FrameResult& result, bool attention_overlay);

struct StreamFrame {
    std::string id;    // file stem
    std::string path;
};
// PPM/PGM files of `dir` in lexical order.
std::vector<StreamFrame> list_frames(const std::string& dir);

struct ThroughputReport {
    int frames = 0;
    int errored = 0;
    double wall_ms = 0;
    double fps = 0;
    double detect_ms = 0;    // totals across frames
    double classify_ms = 0;
    double blur_ms = 0;
    double annotate_ms = 0;
};

// Ordered single-threaded drive of the cascade. A frame that fails to load
// or process yields an errored FrameResult and the stream continues.
// Annotated frames are written to out_dir (skipped for errored frames and
// when out_dir is empty). `before_frame` runs ahead of each step so a
// ground-truth-backed detector can be pointed at the frame's truth.
template <class T>
std::vector<FrameResult> run_stream(
    const std::vector<StreamFrame>& frames, DetectorPort& det, const FaceTouchModel<T>& model,
    const PipelineConfig& cfg, const std::string& out_dir, ThroughputReport* report = nullptr,
    const std::function<void(int, const StreamFrame&)>& before_frame = {});

// One FrameResult per line; schema_version 1. Stage timings are measured
// wall clock and therefore live in the throughput report, not here, so a
// re-run with the same seed reproduces the file byte for byte.
void write_results_jsonl(const std::string& path, const std::vector<FrameResult>& results);
void write_throughput_json(const std::string& path, const ThroughputReport& report);

}  // namespace facetouch
