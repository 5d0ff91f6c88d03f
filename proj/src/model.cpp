#include "facetouch/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "facetouch/errors.hpp"
#include "facetouch/kernels.hpp"

namespace facetouch {

void EncoderConfig::validate() const {
    if (widths.empty()) throw ContractViolation("EncoderConfig: widths must be non-empty");
    for (int w : widths)
        if (w <= 0) throw ContractViolation("EncoderConfig: stage widths must be positive");
    const int pool = 1 << stages();
    if (input_size < pool * 2 || input_size % pool != 0)
        throw ContractViolation("EncoderConfig: input_size must be a multiple of " +
                                std::to_string(pool) + " and at least " + std::to_string(2 * pool));
    if (embed_dim <= 0) throw ContractViolation("EncoderConfig: embed_dim must be positive");
    if (embed_dim != widths.back())
        throw ContractViolation(
            "EncoderConfig: embed_dim must equal the last stage width (global average pool)");
    if (proj_dropout < 0.0 || proj_dropout >= 1.0)
        throw ContractViolation("EncoderConfig: proj_dropout must be in [0, 1)");
}

namespace {

template <class T>
Tensor<T> he_normal(const std::vector<int>& shape, int fan_in, RngState rng) {
    Tensor<T> t(shape);
    const double std = std::sqrt(2.0 / double(fan_in));
    for (auto& v : t.data) v = T(rng.normal() * std);
    return t;
}

}  // namespace

template <class T>
FaceTouchModel<T>::FaceTouchModel(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    init_params();
}

template <class T>
void FaceTouchModel<T>::init_params() {
    RngState root(cfg_.seed);
    int ci = 1;
    for (int s = 0; s < cfg_.stages(); ++s) {
        const int co = cfg_.widths[size_t(s)];
        const std::string base = "enc.stage" + std::to_string(s);
        params_.add(base + ".w",
                    he_normal<T>({co, ci, 3, 3}, ci * 9, root.substream(1, uint64_t(s), 0)));
        params_.add(base + ".b", Tensor<T>({co}));
        ci = co;
    }
    const int d = cfg_.embed_dim;
    params_.add("proj.fc.w", he_normal<T>({128, d}, d, root.substream(2, 0, 0)));
    params_.add("proj.fc.b", Tensor<T>({128}));
    params_.add("cls.hidden.w", he_normal<T>({512, d}, d, root.substream(3, 0, 0)));
    params_.add("cls.hidden.b", Tensor<T>({512}));
    // zero-init output layer: an untrained head reports [0.5, 0.5]
    params_.add("cls.out.w", Tensor<T>({2, 512}));
    params_.add("cls.out.b", Tensor<T>({2}));
}

template <class T>
std::string FaceTouchModel<T>::last_conv_stage() const {
    return "enc.stage" + std::to_string(cfg_.stages() - 1);
}

template <class T>
void FaceTouchModel<T>::check_input(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != cfg_.input_size ||
        x.dim(3) != cfg_.input_size)
        throw ContractViolation("encoder input must be [B,1," + std::to_string(cfg_.input_size) +
                                "," + std::to_string(cfg_.input_size) + "], got " + x.shape_str());
}

template <class T>
typename FaceTouchModel<T>::EncodeVars FaceTouchModel<T>::encode_t(Tape<T>& t,
                                                                   const BoundParams<T>& bound,
                                                                   Var x, int capture_stage) const {
    check_input(t.value(x));
    if (capture_stage == -1) capture_stage = cfg_.stages() - 1;
    if (capture_stage < 0 || capture_stage >= cfg_.stages())
        throw ContractViolation("encode_t: capture stage out of range");

    EncodeVars out;
    Var cur = x;
    for (int s = 0; s < cfg_.stages(); ++s) {
        const std::string base = "enc.stage" + std::to_string(s);
        cur = ops::conv2d(t, cur, bound.at(base + ".w"), bound.at(base + ".b"));
        cur = ops::relu(t, cur);
        if (s == capture_stage) out.stage_act = cur;
        cur = ops::maxpool2(t, cur);
    }
    out.r = ops::global_avg_pool(t, cur);
    return out;
}

template <class T>
Var FaceTouchModel<T>::project_t(Tape<T>& t, const BoundParams<T>& bound, Var r, Mode mode,
                                 RngState* rng) const {
    ++proj_invocations_;
    Var h = ops::dense(t, r, bound.at("proj.fc.w"), bound.at("proj.fc.b"));
    h = ops::relu(t, h);
    h = ops::dropout(t, h, cfg_.proj_dropout, mode, rng);
    return ops::l2_normalize(t, h);
}

template <class T>
Var FaceTouchModel<T>::classify_logits_t(Tape<T>& t, const BoundParams<T>& bound, Var r) const {
    Var h = ops::dense(t, r, bound.at("cls.hidden.w"), bound.at("cls.hidden.b"));
    h = ops::relu(t, h);
    return ops::dense(t, h, bound.at("cls.out.w"), bound.at("cls.out.b"));
}

template <class T>
Tensor<T> FaceTouchModel<T>::encode_batch(const Tensor<T>& x) const {
    Tape<T> t(false);
    const BoundParams<T> bound = bind_params(t, params_);
    const EncodeVars v = encode_t(t, bound, t.leaf(x));
    return t.value(v.r);
}

template <class T>
Tensor<T> FaceTouchModel<T>::image_to_tensor(const Image& img) const {
    if (img.c != 1)
        throw ContractViolation("encoder expects grayscale input; convert with to_gray first");
    if (img.w != cfg_.input_size || img.h != cfg_.input_size)
        throw ContractViolation("encoder input must be " + std::to_string(cfg_.input_size) + "x" +
                                std::to_string(cfg_.input_size) + ", got " +
                                std::to_string(img.w) + "x" + std::to_string(img.h));
    Tensor<T> x({1, 1, img.h, img.w});
    for (size_t i = 0; i < img.px.size(); ++i) x.data[i] = T(img.px[i]);
    return x;
}

template <class T>
std::vector<T> FaceTouchModel<T>::encode(const Image& img) const {
    const Tensor<T> r = encode_batch(image_to_tensor(img));
    return r.data;
}

template <class T>
Tensor<T> FaceTouchModel<T>::classify_batch(const Tensor<T>& r) const {
    Tape<T> t(false);
    const BoundParams<T> bound = bind_params(t, params_);
    const Var logits = classify_logits_t(t, bound, t.leaf(r));
    return t.value(ops::softmax(t, logits));
}

template <class T>
std::array<T, 2> FaceTouchModel<T>::classify(const std::vector<T>& r) const {
    Tensor<T> rt({1, int(r.size())});
    rt.data = r;
    const Tensor<T> p = classify_batch(rt);
    return {p.data[0], p.data[1]};
}

template <class T>
std::vector<T> FaceTouchModel<T>::project(const std::vector<T>& r) const {
    Tape<T> t(false);
    const BoundParams<T> bound = bind_params(t, params_);
    Tensor<T> rt({1, int(r.size())});
    rt.data = r;
    const Var z = project_t(t, bound, t.leaf(rt), Mode::eval, nullptr);
    return t.value(z).data;
}

template <class T>
Tensor<T> FaceTouchModel<T>::stage_activation(const Image& img, int stage) const {
    Tape<T> t(false);
    const BoundParams<T> bound = bind_params(t, params_);
    const EncodeVars v = encode_t(t, bound, t.leaf(image_to_tensor(img)), stage);
    Tensor<T> act = t.value(v.stage_act);
    act.shape.erase(act.shape.begin());  // drop the unit batch dim
    return act;
}

template <class T>
Image FaceTouchModel<T>::gradcam(const Image& img, int target_class,
                                 const std::string& layer) const {
    if (target_class != 0 && target_class != 1)
        throw ContractViolation("gradcam: target class must be 0 or 1");
    int stage = cfg_.stages() - 1;
    if (!layer.empty()) {
        bool found = false;
        for (int s = 0; s < cfg_.stages(); ++s)
            if (layer == "enc.stage" + std::to_string(s)) {
                stage = s;
                found = true;
            }
        if (!found)
            throw ContractViolation("gradcam: '" + layer + "' is not a convolutional stage");
    }

    Tape<T> t(true);
    const BoundParams<T> bound = bind_params(t, params_);
    const EncodeVars v = encode_t(t, bound, t.leaf(image_to_tensor(img)), stage);
    const Var logits = classify_logits_t(t, bound, v.r);
    const Var score = ops::mean_all(t, ops::column(t, logits, target_class));
    t.backward(score);

    const Tensor<T>& act = t.value(v.stage_act);
    const Tensor<T> dact = t.grad_or_zero(v.stage_act);
    const int C = act.dim(1), h = act.dim(2), w = act.dim(3);
    const int hw = h * w;

    std::vector<T> cam(size_t(hw), T(0));
    for (int k = 0; k < C; ++k) {
        const T* a = act.data.data() + size_t(k) * hw;
        const T* g = dact.data.data() + size_t(k) * hw;
        T alpha = 0;
        for (int i = 0; i < hw; ++i) alpha += g[i];
        alpha /= T(hw);
        for (int i = 0; i < hw; ++i) cam[size_t(i)] += alpha * a[i];
    }
    for (T& v2 : cam) v2 = std::max(v2, T(0));

    std::vector<float> camf(cam.begin(), cam.end());
    Image out(cfg_.input_size, cfg_.input_size, 1);
    kernels::bilinear_resize(camf.data(), 1, h, w, out.px.data(), cfg_.input_size,
                             cfg_.input_size);

    float mx = 0;
    for (float x : out.px) mx = std::max(mx, x);
    if (mx > 0)
        for (float& x : out.px) x = std::max(0.0f, x / mx);
    return out;
}

// ---- checkpoint container ----
// "FTCK" | u32 version | u8 sizeof(T) | u32 json length | header JSON |
// raw little-endian tensor payloads in header order.

namespace {

template <class V>
void write_raw(std::ofstream& f, const V& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class V>
V read_raw(std::istream& f, const char* what) {
    V v{};
    if (!f.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw ParseError(std::string("checkpoint: truncated ") + what, size_t(f.tellg()));
    return v;
}

}  // namespace

template <class T>
void save_checkpoint(const std::string& path, const FaceTouchModel<T>& model,
                     const TrainProvenance& prov) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["dtype"] = sizeof(T) == 4 ? "float32" : "float64";
    j["encoder"] = {{"input_size", model.config().input_size},
                    {"widths", model.config().widths},
                    {"embed_dim", model.config().embed_dim},
                    {"proj_dropout", model.config().proj_dropout},
                    {"seed", model.config().seed}};
    j["provenance"] = {{"regime", prov.regime},
                       {"loss_variant", prov.loss_variant},
                       {"seed", prov.seed},
                       {"epochs", prov.epochs}};
    nlohmann::json tensors = nlohmann::json::array();
    const ParamSet<T>& p = model.params();
    for (size_t i = 0; i < p.size(); ++i) {
        const auto& e = p.entry(i);
        tensors.push_back({{"name", e.name}, {"shape", e.value.shape}, {"trainable", e.trainable}});
    }
    j["tensors"] = std::move(tensors);
    const std::string header = j.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write("FTCK", 4);
    write_raw(f, uint32_t(1));
    write_raw(f, uint8_t(sizeof(T)));
    write_raw(f, uint32_t(header.size()));
    f.write(header.data(), std::streamsize(header.size()));
    for (size_t i = 0; i < p.size(); ++i) {
        const auto& e = p.entry(i);
        f.write(reinterpret_cast<const char*>(e.value.data.data()),
                std::streamsize(e.value.data.size() * sizeof(T)));
    }
    if (!f) throw IoError("short write to " + path);
}

template <class T>
FaceTouchModel<T> load_checkpoint(const std::string& path, TrainProvenance* prov) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "FTCK", 4) != 0)
        throw ParseError("checkpoint: bad magic", 0);
    const auto version = read_raw<uint32_t>(f, "version");
    if (version != 1) throw ParseError("checkpoint: unsupported version", 4);
    const auto tsize = read_raw<uint8_t>(f, "dtype tag");
    if (tsize != sizeof(T)) throw ParseError("checkpoint: dtype does not match requested type", 8);
    const auto hlen = read_raw<uint32_t>(f, "header length");
    std::string header(hlen, '\0');
    if (!f.read(header.data(), hlen)) throw ParseError("checkpoint: truncated header", 13);

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what(), 13);
    }

    EncoderConfig cfg;
    TrainProvenance p;
    try {
        cfg.input_size = j.at("encoder").at("input_size").get<int>();
        cfg.widths = j.at("encoder").at("widths").get<std::vector<int>>();
        cfg.embed_dim = j.at("encoder").at("embed_dim").get<int>();
        cfg.proj_dropout = j.at("encoder").at("proj_dropout").get<double>();
        cfg.seed = j.at("encoder").at("seed").get<uint64_t>();
        p.regime = j.at("provenance").at("regime").get<std::string>();
        p.loss_variant = j.at("provenance").at("loss_variant").get<std::string>();
        p.seed = j.at("provenance").at("seed").get<uint64_t>();
        p.epochs = j.at("provenance").at("epochs").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what(), 13);
    }

    FaceTouchModel<T> model(cfg);
    ParamSet<T>& ps = model.params();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != ps.size())
        throw ParseError("checkpoint: tensor count does not match architecture", 13);
    for (size_t i = 0; i < tensors.size(); ++i) {
        const std::string name = tensors[i].at("name").get<std::string>();
        const auto shape = tensors[i].at("shape").get<std::vector<int>>();
        if (!ps.has(name)) throw ParseError("checkpoint: unknown tensor " + name, 13);
        Tensor<T>& dst = ps.value(name);
        if (shape != dst.shape)
            throw ParseError("checkpoint: shape mismatch for " + name, 13);
        if (!f.read(reinterpret_cast<char*>(dst.data.data()),
                    std::streamsize(dst.data.size() * sizeof(T))))
            throw ParseError("checkpoint: truncated tensor payload for " + name,
                             size_t(f.tellg()));
        ps.set_trainable(name, tensors[i].at("trainable").get<bool>());
    }
    f.peek();
    if (!f.eof()) throw ParseError("checkpoint: trailing bytes", size_t(f.tellg()));
    if (prov) *prov = p;
    return model;
}

template class FaceTouchModel<float>;
template class FaceTouchModel<double>;
template void save_checkpoint<float>(const std::string&, const FaceTouchModel<float>&,
                                     const TrainProvenance&);
template void save_checkpoint<double>(const std::string&, const FaceTouchModel<double>&,
                                      const TrainProvenance&);
template FaceTouchModel<float> load_checkpoint<float>(const std::string&, TrainProvenance*);
template FaceTouchModel<double> load_checkpoint<double>(const std::string&, TrainProvenance*);

}  // namespace facetouch
