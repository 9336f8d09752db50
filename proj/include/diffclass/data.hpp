#pragma once

#include "diffclass/rng.hpp"
#include "diffclass/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cv {
class Mat;
}

namespace diffclass {

inline constexpr int kPartCount = 6;
inline constexpr int kTestPart = 5;
inline constexpr int kFoldCount = 5;

struct ManifestRecord {
    std::string image_id;
    std::string path;  // relative to the manifest root
    std::string label;
    std::optional<int> fold;  // 0..5, 5 is the held-out test sixth
    std::string group;        // optional grouping key (patient, lesion); empty = none
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::vector<std::string> classes;  // ordered vocabulary
    std::filesystem::path root;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
    int label_index(const std::string& label) const;  // -1 when absent
    std::vector<int> labels() const;
    std::vector<std::size_t> class_counts() const;
    std::filesystem::path image_path(const ManifestRecord& r) const { return root / r.path; }
    bool has_folds() const;

    // Throws IntegrityError when an invariant is broken.
    void validate() const;

    // Records whose fold is in `parts`, in manifest order.
    DatasetManifest select_parts(const std::vector<int>& parts) const;
};

// Column mapping from a source CSV onto the canonical manifest fields. The
// default instance reads the canonical `image_id,path,label,fold` layout.
struct CsvSchema {
    std::string id_column = "image_id";
    std::string path_column = "path";  // empty: path = path_prefix + id + path_suffix
    std::string label_column = "label";
    std::string fold_column = "fold";
    bool fold_required = false;
    std::string group_column;  // optional
    char delimiter = ',';
    std::string path_prefix;
    std::string path_suffix;
    std::vector<std::string> class_order;  // empty: order of first appearance
    std::map<std::string, int> fold_map;   // raw fold value -> canonical 0..5
    std::map<std::string, std::string> label_map;  // raw label -> canonical name
};

// Reads an adapter config (JSON) into a schema.
CsvSchema load_adapter(const std::filesystem::path& path);

DatasetManifest load_manifest(const std::filesystem::path& csv, const std::filesystem::path& image_root,
                              const CsvSchema& schema = {});
void write_manifest(const std::filesystem::path& csv, const DatasetManifest& manifest);

std::vector<std::string> parse_csv_line(const std::string& line, char delimiter = ',');

struct SplitResult {
    DatasetManifest manifest;  // folds assigned
    std::array<std::vector<std::size_t>, kPartCount> parts;
    std::vector<std::string> warnings;
    bool used_provided_folds = false;

    const std::vector<std::size_t>& test() const { return parts[kTestPart]; }
};

// Six-way partition: part 5 is the test sixth, parts 0..4 the CV folds.
// Provided fold assignments are used verbatim. Records sharing a non-empty
// group key always land in the same part.
SplitResult split_sixths(const DatasetManifest& manifest, std::uint64_t seed, bool stratify = true);

struct ClassMapping {
    std::map<std::string, std::string> pairs;  // source -> target
    std::vector<std::string> targets;          // target vocabulary, in order

    static ClassMapping load(const std::filesystem::path& path);
    static ClassMapping identity(const std::vector<std::string>& classes);
    // Applies `first`, then `second`.
    static ClassMapping compose(const ClassMapping& first, const ClassMapping& second);
    void validate() const;
};

// MEL, BCC, SCC -> cancer; ACK, SEK, NEV -> non-cancer.
ClassMapping cancer_binary_mapping();

DatasetManifest remap_classes(const DatasetManifest& manifest, const ClassMapping& mapping);

struct IntersectResult {
    DatasetManifest manifest;
    std::size_t dropped = 0;
};

IntersectResult intersect_classes(const DatasetManifest& manifest,
                                  const std::vector<std::string>& allowed);

// Reads a JSON array of class names, or an object with a "classes" array.
std::vector<std::string> load_vocabulary(const std::filesystem::path& path);

// Order used for the six skin-lesion classes throughout reports.
const std::vector<std::string>& skin_lesion_classes();

struct PreprocessConfig {
    int size = 224;
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};
    bool operator==(const PreprocessConfig&) const = default;
};

// Decode -> bilinear resize to size x size -> [0, 1] -> per-channel
// standardization. Output is (3, size, size), RGB order.
Tensor preprocess(const std::filesystem::path& image_file, const PreprocessConfig& cfg = {});
// Same for an already decoded 8-bit BGR or grayscale image.
Tensor preprocess_image(const cv::Mat& image, const PreprocessConfig& cfg = {});

struct Sample {
    std::string image_id;
    Tensor image;
    int label = -1;
};

std::vector<Sample> load_samples(const DatasetManifest& manifest, const PreprocessConfig& cfg);

struct ToyConfig {
    int classes = 3;
    int per_class = 200;
    int size = 32;
    std::uint64_t seed = 7;
    double noise = 1.0;  // scales pixel noise and blob jitter; 0 gives one image per class
};

// Renders one synthetic image (8-bit BGR): a disc whose hue and position are
// set by the class, over a noisy gray background.
cv::Mat render_toy_image(int label, int classes, int size, double noise, Rng& rng);

// Writes images/<id>.png and manifest.csv under `out_dir`.
DatasetManifest synth_toy_dataset(const ToyConfig& cfg, const std::filesystem::path& out_dir);

// FNV-1a over the manifest rows and the bytes of every referenced image.
std::string dataset_checksum(const DatasetManifest& manifest);

}  // namespace diffclass
