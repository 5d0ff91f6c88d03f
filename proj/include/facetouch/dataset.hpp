#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facetouch/image.hpp"
#include "facetouch/synth.hpp"

namespace facetouch {

constexpr int kSplitTrain = 0;
constexpr int kSplitTest = 1;

struct DatasetManifest {
    int format_version = 1;
    uint64_t seed = 0;
    int n = 0;
    double positive_fraction = 0.0;
    int n_pos = 0, n_neg = 0, n_train = 0, n_test = 0;
    int width = 0, height = 0, channels = 0;
    std::string content_hash;  // "fnv1a64:<16 hex digits>"
};

struct CropDataset {
    std::vector<Image> images;
    std::vector<int> labels;
    std::vector<int> split;  // kSplitTrain / kSplitTest
    std::vector<FigureBoxes> boxes;
    std::vector<FigureSpec> figs;  // in-memory only, empty after load_dataset
    DatasetManifest manifest;

    std::vector<int> ids_of_split(int s) const;
};

// Deterministic crop dataset: n samples at crop_size x crop_size grayscale,
// lround(n * positive_fraction) positives, stratified 80/20 train/test split.
CropDataset gen_crop_dataset(int n, double positive_fraction, uint64_t seed, int crop_size = 64);

uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 14695981039346656037ull);
uint64_t dataset_content_hash(const CropDataset& ds);

// One CSV row per box; a "human" row opens a sample, its face/hand rows follow.
struct LabelRow {
    int64_t sample_id = 0;
    int split = kSplitTrain;
    int label = 0;
    std::string box_class;
    NormBox box;
};

std::string labels_to_csv(const CropDataset& ds);
std::vector<LabelRow> parse_labels_csv(const std::string& text);

void save_dataset(const std::string& dir, const CropDataset& ds);
CropDataset load_dataset(const std::string& dir);

}  // namespace facetouch
