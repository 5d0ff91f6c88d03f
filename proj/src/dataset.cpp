#include "facetouch/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "facetouch/errors.hpp"
#include "facetouch/rng.hpp"

namespace facetouch {
namespace {

constexpr const char* kCsvHeader = "sample_id,split,label,box_class,cx,cy,w,h";

std::string split_name(int s) { return s == kSplitTrain ? "train" : "test"; }

void append_box_row(std::string& out, int64_t id, int split, int label, const char* cls,
                    const NormBox& b) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld,%s,%d,%s,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(id), split_name(split).c_str(), label, cls, double(b.cx),
                  double(b.cy), double(b.w), double(b.h));
    out += buf;
}

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_bytes(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(data.data(), std::streamsize(data.size()));
    if (!out) throw IoError("short write to " + path);
}

std::string hash_string(uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string image_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "crop_%05d.pgm", i);
    return buf;
}

}  // namespace

std::vector<int> CropDataset::ids_of_split(int s) const {
    std::vector<int> out;
    for (size_t i = 0; i < split.size(); ++i)
        if (split[i] == s) out.push_back(int(i));
    return out;
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t dataset_content_hash(const CropDataset& ds) {
    uint64_t h = 14695981039346656037ull;
    for (const Image& img : ds.images) {
        const std::vector<std::uint8_t> bytes = encode_netpbm(img);
        h = fnv1a64(bytes.data(), bytes.size(), h);
    }
    const std::string csv = labels_to_csv(ds);
    return fnv1a64(csv.data(), csv.size(), h);
}

CropDataset gen_crop_dataset(int n, double positive_fraction, uint64_t seed, int crop_size) {
    if (n < 10) throw ContractViolation("gen_crop_dataset: n must be >= 10");
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
        throw ContractViolation("gen_crop_dataset: positive_fraction must be in (0, 1)");

    const int n_pos = int(std::lround(positive_fraction * n));
    RngState root(seed);

    std::vector<int> labels(size_t(n), 0);
    for (int i = 0; i < n_pos; ++i) labels[size_t(i)] = 1;
    RngState shuf = root.substream(2, 0, 0);
    for (size_t i = labels.size(); i > 1; --i)
        std::swap(labels[i - 1], labels[shuf.uniform_int(i)]);

    CropDataset ds;
    ds.images.resize(size_t(n));
    ds.labels = labels;
    ds.split.assign(size_t(n), kSplitTrain);
    ds.boxes.resize(size_t(n));
    ds.figs.resize(size_t(n));

    for (int i = 0; i < n; ++i) {
        RngState flags = root.substream(5, uint64_t(i), 0);
        const bool hard = labels[size_t(i)] == 0 && flags.bernoulli(0.35);
        CropSample s = gen_crop(crop_size, labels[size_t(i)], hard, root.substream(3, uint64_t(i), 0));
        ds.images[size_t(i)] = std::move(s.image);
        ds.boxes[size_t(i)] = figure_boxes(s.fig, crop_size, crop_size);
        ds.figs[size_t(i)] = s.fig;
    }

    for (int cls = 0; cls < 2; ++cls) {
        std::vector<int> ids;
        for (int i = 0; i < n; ++i)
            if (labels[size_t(i)] == cls) ids.push_back(i);
        RngState sp = root.substream(4, uint64_t(cls), 0);
        for (size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[sp.uniform_int(i)]);
        const size_t n_train = size_t(std::lround(0.8 * double(ids.size())));
        for (size_t i = 0; i < ids.size(); ++i)
            ds.split[size_t(ids[i])] = i < n_train ? kSplitTrain : kSplitTest;
    }

    DatasetManifest& m = ds.manifest;
    m.seed = seed;
    m.n = n;
    m.positive_fraction = positive_fraction;
    m.n_pos = n_pos;
    m.n_neg = n - n_pos;
    m.n_train = int(std::count(ds.split.begin(), ds.split.end(), kSplitTrain));
    m.n_test = n - m.n_train;
    m.width = crop_size;
    m.height = crop_size;
    m.channels = 1;
    m.content_hash = hash_string(dataset_content_hash(ds));
    return ds;
}

std::string labels_to_csv(const CropDataset& ds) {
    std::string out = kCsvHeader;
    out += '\n';
    for (size_t i = 0; i < ds.images.size(); ++i) {
        const auto id = int64_t(i);
        const int sp = ds.split[i], lb = ds.labels[i];
        const FigureBoxes& b = ds.boxes[i];
        append_box_row(out, id, sp, lb, "human", b.human);
        append_box_row(out, id, sp, lb, "face", b.face);
        append_box_row(out, id, sp, lb, "hand", b.hand_l);
        append_box_row(out, id, sp, lb, "hand", b.hand_r);
    }
    return out;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

double parse_coord(const std::string& field, const char* what, size_t line_no) {
    if (field.empty())
        throw ParseError(std::string("labels csv: empty ") + what + " on line", line_no);
    const char* begin = field.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end != begin + field.size() || !std::isfinite(v))
        throw ParseError(std::string("labels csv: non-numeric ") + what + " on line", line_no);
    if (v < 0.0 || v > 1.0)
        throw ParseError(std::string("labels csv: ") + what + " out of [0, 1] on line", line_no);
    return v;
}

int64_t parse_id(const std::string& field, size_t line_no) {
    int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || v < 0)
        throw ParseError("labels csv: bad sample_id on line", line_no);
    return v;
}

}  // namespace

std::vector<LabelRow> parse_labels_csv(const std::string& text) {
    if (text.empty()) throw ParseError("labels csv: empty file", 0);
    std::vector<LabelRow> rows;
    size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string line = text.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = nl + 1;
        ++line_no;
        if (line_no == 1) {
            if (line != kCsvHeader) throw ParseError("labels csv: unknown column header", 1);
            continue;
        }
        if (line.empty()) continue;
        const std::vector<std::string> f = split_fields(line);
        if (f.size() != 8) throw ParseError("labels csv: expected 8 fields on line", line_no);
        LabelRow row;
        row.sample_id = parse_id(f[0], line_no);
        if (f[1] == "train")
            row.split = kSplitTrain;
        else if (f[1] == "test")
            row.split = kSplitTest;
        else
            throw ParseError("labels csv: bad split on line", line_no);
        if (f[2] == "0")
            row.label = 0;
        else if (f[2] == "1")
            row.label = 1;
        else
            throw ParseError("labels csv: bad label on line", line_no);
        if (f[3] != "human" && f[3] != "face" && f[3] != "hand")
            throw ParseError("labels csv: unknown box_class on line", line_no);
        row.box_class = f[3];
        row.box.cx = float(parse_coord(f[4], "cx", line_no));
        row.box.cy = float(parse_coord(f[5], "cy", line_no));
        row.box.w = float(parse_coord(f[6], "w", line_no));
        row.box.h = float(parse_coord(f[7], "h", line_no));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError("labels csv: no data rows", line_no);
    return rows;
}

void save_dataset(const std::string& dir, const CropDataset& ds) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());

    for (size_t i = 0; i < ds.images.size(); ++i)
        write_image((fs::path(dir) / "images" / image_name(int(i))).string(), ds.images[i]);
    write_file_bytes((fs::path(dir) / "labels.csv").string(), labels_to_csv(ds));

    nlohmann::json j;
    j["format_version"] = ds.manifest.format_version;
    j["kind"] = "facetouch-crops";
    j["seed"] = ds.manifest.seed;
    j["n"] = ds.manifest.n;
    j["positive_fraction"] = ds.manifest.positive_fraction;
    j["counts"] = {{"pos", ds.manifest.n_pos},
                   {"neg", ds.manifest.n_neg},
                   {"train", ds.manifest.n_train},
                   {"test", ds.manifest.n_test}};
    j["image"] = {{"width", ds.manifest.width},
                  {"height", ds.manifest.height},
                  {"channels", ds.manifest.channels}};
    j["content_hash"] = ds.manifest.content_hash;
    write_file_bytes((fs::path(dir) / "manifest.json").string(), j.dump(2) + "\n");
}

CropDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest_text = read_file_bytes((fs::path(dir) / "manifest.json").string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(manifest_text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("manifest.json: ") + e.what(), 0);
    }

    CropDataset ds;
    try {
        DatasetManifest& m = ds.manifest;
        m.format_version = j.at("format_version").get<int>();
        m.seed = j.at("seed").get<uint64_t>();
        m.n = j.at("n").get<int>();
        m.positive_fraction = j.at("positive_fraction").get<double>();
        m.n_pos = j.at("counts").at("pos").get<int>();
        m.n_neg = j.at("counts").at("neg").get<int>();
        m.n_train = j.at("counts").at("train").get<int>();
        m.n_test = j.at("counts").at("test").get<int>();
        m.width = j.at("image").at("width").get<int>();
        m.height = j.at("image").at("height").get<int>();
        m.channels = j.at("image").at("channels").get<int>();
        m.content_hash = j.at("content_hash").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("manifest.json: ") + e.what(), 0);
    }
    if (ds.manifest.format_version != 1)
        throw ParseError("manifest.json: unsupported format_version", 0);
    if (ds.manifest.n <= 0) throw ParseError("manifest.json: bad sample count", 0);

    uint64_t h = 14695981039346656037ull;
    ds.images.resize(size_t(ds.manifest.n));
    for (int i = 0; i < ds.manifest.n; ++i) {
        const std::string bytes =
            read_file_bytes((fs::path(dir) / "images" / image_name(i)).string());
        h = fnv1a64(bytes.data(), bytes.size(), h);
        ds.images[size_t(i)] =
            decode_netpbm(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size());
        if (ds.images[size_t(i)].w != ds.manifest.width ||
            ds.images[size_t(i)].h != ds.manifest.height ||
            ds.images[size_t(i)].c != ds.manifest.channels)
            throw IoError("dataset image " + image_name(i) + " does not match manifest shape");
    }

    const std::string csv = read_file_bytes((fs::path(dir) / "labels.csv").string());
    h = fnv1a64(csv.data(), csv.size(), h);
    if (hash_string(h) != ds.manifest.content_hash)
        throw IoError("dataset content hash mismatch");

    const std::vector<LabelRow> rows = parse_labels_csv(csv);
    ds.labels.assign(size_t(ds.manifest.n), 0);
    ds.split.assign(size_t(ds.manifest.n), kSplitTrain);
    ds.boxes.assign(size_t(ds.manifest.n), FigureBoxes{});
    int64_t current = -1;
    int hand_index = 0;
    for (size_t r = 0; r < rows.size(); ++r) {
        const LabelRow& row = rows[r];
        const size_t line_no = r + 2;
        if (row.sample_id >= ds.manifest.n)
            throw ParseError("labels csv: sample_id out of range on line", line_no);
        if (row.box_class == "human") {
            if (row.sample_id != current + 1)
                throw ParseError("labels csv: samples out of order on line", line_no);
            current = row.sample_id;
            hand_index = 0;
            ds.labels[size_t(current)] = row.label;
            ds.split[size_t(current)] = row.split;
            ds.boxes[size_t(current)].human = row.box;
        } else {
            if (row.sample_id != current)
                throw ParseError("labels csv: box row before its human row on line", line_no);
            if (row.label != ds.labels[size_t(current)] || row.split != ds.split[size_t(current)])
                throw ParseError("labels csv: inconsistent sample metadata on line", line_no);
            if (row.box_class == "face") {
                ds.boxes[size_t(current)].face = row.box;
            } else {
                if (hand_index == 0)
                    ds.boxes[size_t(current)].hand_l = row.box;
                else
                    ds.boxes[size_t(current)].hand_r = row.box;
                ++hand_index;
            }
        }
    }
    if (current + 1 != ds.manifest.n)
        throw ParseError("labels csv: sample count does not match manifest", 0);
    return ds;
}

}  // namespace facetouch
