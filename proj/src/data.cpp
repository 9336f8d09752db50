#include "diffclass/data.hpp"

#include "diffclass/error.hpp"
#include "diffclass/rng.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace diffclass {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + '"';
}

std::optional<int> parse_int(const std::string& s)
{
    int v = 0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end) {
        return std::nullopt;
    }
    return v;
}

std::string read_file_bytes(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + p.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

// ---------------------------------------------------------------- manifest

int DatasetManifest::label_index(const std::string& label) const
{
    const auto it = std::find(classes.begin(), classes.end(), label);
    return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
}

std::vector<int> DatasetManifest::labels() const
{
    std::vector<int> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        out.push_back(label_index(r.label));
    }
    return out;
}

std::vector<std::size_t> DatasetManifest::class_counts() const
{
    std::vector<std::size_t> counts(classes.size(), 0);
    for (int l : labels()) {
        if (l >= 0) {
            ++counts[static_cast<std::size_t>(l)];
        }
    }
    return counts;
}

bool DatasetManifest::has_folds() const
{
    return !records.empty() &&
           std::all_of(records.begin(), records.end(), [](const auto& r) { return r.fold.has_value(); });
}

void DatasetManifest::validate() const
{
    if (std::set<std::string>(classes.begin(), classes.end()).size() != classes.size()) {
        throw IntegrityError("class vocabulary contains duplicates");
    }
    std::unordered_set<std::string> ids;
    for (const auto& r : records) {
        if (!ids.insert(r.image_id).second) {
            throw IntegrityError("duplicate image_id '" + r.image_id + "'");
        }
        if (label_index(r.label) < 0) {
            throw IntegrityError("record '" + r.image_id + "' has label '" + r.label +
                                 "' outside the vocabulary");
        }
        if (r.fold && (*r.fold < 0 || *r.fold >= kPartCount)) {
            throw IntegrityError("record '" + r.image_id + "' has fold " + std::to_string(*r.fold) +
                                 " (folds are 0..5)");
        }
    }
}

DatasetManifest DatasetManifest::select_parts(const std::vector<int>& parts) const
{
    DatasetManifest out;
    out.classes = classes;
    out.root = root;
    for (const auto& r : records) {
        if (r.fold && std::find(parts.begin(), parts.end(), *r.fold) != parts.end()) {
            out.records.push_back(r);
        }
    }
    return out;
}

std::vector<std::string> parse_csv_line(const std::string& line, char delimiter)
{
    std::vector<std::string> tokens;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (c == '"') {
            if (quoted && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else {
                quoted = !quoted;
            }
        } else if (c == delimiter && !quoted) {
            tokens.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    tokens.push_back(trim(cur));
    return tokens;
}

CsvSchema load_adapter(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read adapter config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw SchemaError("adapter config " + path.string() + " is not valid JSON: " + e.what());
    }
    CsvSchema s;
    try {
        const json cols = j.value("columns", json::object());
        s.id_column = cols.value("id", s.id_column);
        s.path_column = cols.value("path", s.path_column);
        s.label_column = cols.value("label", s.label_column);
        if (cols.contains("fold")) {
            s.fold_column = cols.at("fold").is_null() ? "" : cols.at("fold").get<std::string>();
            s.fold_required = !s.fold_column.empty();
        }
        s.group_column = cols.value("group", s.group_column);
        const std::string delim = j.value("delimiter", std::string(","));
        if (delim.size() != 1) {
            throw SchemaError("adapter delimiter must be a single character");
        }
        s.delimiter = delim[0];
        s.path_prefix = j.value("path_prefix", s.path_prefix);
        s.path_suffix = j.value("path_suffix", s.path_suffix);
        s.class_order = j.value("class_order", s.class_order);
        s.fold_map = j.value("fold_map", s.fold_map);
        s.label_map = j.value("label_map", s.label_map);
    } catch (const json::exception& e) {
        throw SchemaError("adapter config " + path.string() + ": " + e.what());
    }
    return s;
}

DatasetManifest load_manifest(const fs::path& csv, const fs::path& image_root, const CsvSchema& schema)
{
    std::ifstream in(csv);
    if (!in) {
        throw IoError("cannot read manifest " + csv.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw SchemaError("manifest " + csv.string() + " is empty");
    }
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) {
        line.erase(0, 3);  // UTF-8 BOM
    }
    const auto header = parse_csv_line(line, schema.delimiter);
    auto column = [&](const std::string& name, bool required) -> int {
        if (name.empty()) {
            return -1;
        }
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            if (required) {
                throw SchemaError("manifest " + csv.string() + " has no column '" + name + "'");
            }
            return -1;
        }
        return static_cast<int>(it - header.begin());
    };
    const int id_col = column(schema.id_column, true);
    const int path_col = column(schema.path_column, !schema.path_column.empty());
    const int label_col = column(schema.label_column, true);
    const int fold_col = column(schema.fold_column, schema.fold_required);
    const int group_col = column(schema.group_column, !schema.group_column.empty());

    DatasetManifest m;
    m.root = image_root;
    m.classes = schema.class_order;
    const bool fixed_order = !schema.class_order.empty();
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = parse_csv_line(line, schema.delimiter);
        auto field = [&](int col) -> const std::string& {
            if (col >= static_cast<int>(fields.size())) {
                throw SchemaError("manifest " + csv.string() + " row " + std::to_string(row) +
                                  " has too few fields");
            }
            return fields[static_cast<std::size_t>(col)];
        };
        ManifestRecord r;
        r.image_id = field(id_col);
        r.path = path_col >= 0 ? field(path_col) : schema.path_prefix + r.image_id + schema.path_suffix;
        r.label = field(label_col);
        if (const auto it = schema.label_map.find(r.label); it != schema.label_map.end()) {
            r.label = it->second;
        }
        if (fold_col >= 0 && !field(fold_col).empty()) {
            const std::string& raw = field(fold_col);
            if (const auto it = schema.fold_map.find(raw); it != schema.fold_map.end()) {
                r.fold = it->second;
            } else if (const auto v = parse_int(raw)) {
                r.fold = *v;
            } else {
                throw IntegrityError("record '" + r.image_id + "' has non-integer fold '" + raw + "'");
            }
        }
        if (group_col >= 0) {
            r.group = field(group_col);
        }
        if (m.label_index(r.label) < 0) {
            if (fixed_order) {
                throw IntegrityError("record '" + r.image_id + "' has label '" + r.label +
                                     "' outside the configured class order");
            }
            m.classes.push_back(r.label);
        }
        m.records.push_back(std::move(r));
    }
    m.validate();
    return m;
}

void write_manifest(const fs::path& csv, const DatasetManifest& manifest)
{
    if (csv.has_parent_path()) {
        fs::create_directories(csv.parent_path());
    }
    std::ofstream out(csv, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write manifest " + csv.string());
    }
    const bool groups = std::any_of(manifest.records.begin(), manifest.records.end(),
                                    [](const auto& r) { return !r.group.empty(); });
    out << "image_id,path,label,fold" << (groups ? ",group" : "") << '\n';
    for (const auto& r : manifest.records) {
        out << csv_field(r.image_id) << ',' << csv_field(r.path) << ',' << csv_field(r.label) << ','
            << (r.fold ? std::to_string(*r.fold) : "");
        if (groups) {
            out << ',' << csv_field(r.group);
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------- splitting

SplitResult split_sixths(const DatasetManifest& manifest, std::uint64_t seed, bool stratify)
{
    if (manifest.size() < static_cast<std::size_t>(kPartCount)) {
        throw std::invalid_argument("six-way split needs at least 6 records, got " +
                                    std::to_string(manifest.size()));
    }
    SplitResult out;
    out.manifest = manifest;
    auto& recs = out.manifest.records;

    const std::size_t assigned =
        static_cast<std::size_t>(std::count_if(recs.begin(), recs.end(), [](const auto& r) { return r.fold.has_value(); }));
    if (assigned == recs.size()) {
        out.used_provided_folds = true;
    } else if (assigned != 0) {
        throw IntegrityError("manifest assigns folds to only " + std::to_string(assigned) + " of " +
                             std::to_string(recs.size()) + " records");
    } else {
        // Units are groups when group keys exist, single records otherwise.
        std::vector<std::vector<std::size_t>> units;
        std::unordered_map<std::string, std::size_t> group_unit;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            if (recs[i].group.empty()) {
                units.push_back({i});
                continue;
            }
            const auto [it, inserted] = group_unit.try_emplace(recs[i].group, units.size());
            if (inserted) {
                units.emplace_back();
            }
            units[it->second].push_back(i);
        }

        std::vector<std::vector<std::size_t>> strata;
        if (stratify) {
            strata.resize(manifest.classes.size());
            for (std::size_t u = 0; u < units.size(); ++u) {
                const int label = manifest.label_index(recs[units[u].front()].label);
                strata[static_cast<std::size_t>(label)].push_back(u);
            }
        } else {
            strata.emplace_back(units.size());
            std::iota(strata[0].begin(), strata[0].end(), std::size_t{0});
        }

        Rng rng(derive_seed(seed, 0x5eed));
        std::size_t offset = 0;
        for (std::size_t s = 0; s < strata.size(); ++s) {
            auto& stratum = strata[s];
            if (stratify && !stratum.empty() && stratum.size() < static_cast<std::size_t>(kPartCount)) {
                out.warnings.push_back("class '" + manifest.classes[s] + "' has only " +
                                       std::to_string(stratum.size()) +
                                       " samples; some parts will not contain it");
            }
            std::shuffle(stratum.begin(), stratum.end(), rng);
            for (std::size_t i = 0; i < stratum.size(); ++i) {
                const int part = static_cast<int>((offset + i) % kPartCount);
                for (std::size_t rec : units[stratum[i]]) {
                    recs[rec].fold = part;
                }
            }
            offset = (offset + stratum.size()) % kPartCount;
        }
    }

    for (std::size_t i = 0; i < recs.size(); ++i) {
        out.parts[static_cast<std::size_t>(*recs[i].fold)].push_back(i);
    }
    for (int p = 0; p < kPartCount; ++p) {
        if (out.parts[static_cast<std::size_t>(p)].empty()) {
            out.warnings.push_back("part " + std::to_string(p) + " is empty");
        }
    }
    return out;
}

// ---------------------------------------------------------------- class mapping

void ClassMapping::validate() const
{
    if (targets.empty()) {
        throw std::invalid_argument("class mapping has an empty target vocabulary");
    }
    for (const auto& [src, dst] : pairs) {
        if (std::find(targets.begin(), targets.end(), dst) == targets.end()) {
            throw std::invalid_argument("class mapping target '" + dst + "' (from '" + src +
                                        "') is not in the target vocabulary");
        }
    }
}

ClassMapping ClassMapping::load(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read class mapping " + path.string());
    }
    ClassMapping m;
    try {
        const json j = json::parse(in);
        m.pairs = j.at("pairs").get<std::map<std::string, std::string>>();
        m.targets = j.at("targets").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw SchemaError("class mapping " + path.string() + ": " + e.what());
    }
    m.validate();
    return m;
}

ClassMapping ClassMapping::identity(const std::vector<std::string>& classes)
{
    ClassMapping m;
    m.targets = classes;
    for (const auto& c : classes) {
        m.pairs[c] = c;
    }
    return m;
}

ClassMapping ClassMapping::compose(const ClassMapping& first, const ClassMapping& second)
{
    ClassMapping m;
    m.targets = second.targets;
    for (const auto& [src, mid] : first.pairs) {
        const auto it = second.pairs.find(mid);
        if (it != second.pairs.end()) {
            m.pairs[src] = it->second;
        }
    }
    return m;
}

ClassMapping cancer_binary_mapping()
{
    ClassMapping m;
    m.targets = {"cancer", "non-cancer"};
    for (const char* c : {"MEL", "BCC", "SCC"}) {
        m.pairs[c] = "cancer";
    }
    for (const char* c : {"ACK", "SEK", "NEV"}) {
        m.pairs[c] = "non-cancer";
    }
    return m;
}

DatasetManifest remap_classes(const DatasetManifest& manifest, const ClassMapping& mapping)
{
    mapping.validate();
    DatasetManifest out = manifest;
    out.classes = mapping.targets;
    for (auto& r : out.records) {
        const auto it = mapping.pairs.find(r.label);
        if (it == mapping.pairs.end()) {
            throw std::invalid_argument("class mapping has no entry for label '" + r.label + "'");
        }
        r.label = it->second;
    }
    return out;
}

IntersectResult intersect_classes(const DatasetManifest& manifest,
                                  const std::vector<std::string>& allowed)
{
    if (allowed.empty()) {
        throw std::invalid_argument("allowed vocabulary is empty");
    }
    const std::set<std::string> keep(allowed.begin(), allowed.end());
    IntersectResult out;
    out.manifest.root = manifest.root;
    for (const auto& c : manifest.classes) {
        if (keep.count(c)) {
            out.manifest.classes.push_back(c);
        }
    }
    for (const auto& r : manifest.records) {
        if (keep.count(r.label)) {
            out.manifest.records.push_back(r);
        } else {
            ++out.dropped;
        }
    }
    if (out.manifest.records.empty()) {
        throw InvalidState("class intersection leaves no records");
    }
    return out;
}

std::vector<std::string> load_vocabulary(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read vocabulary " + path.string());
    }
    try {
        const json j = json::parse(in);
        return j.is_array() ? j.get<std::vector<std::string>>()
                            : j.at("classes").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw SchemaError("vocabulary " + path.string() + ": " + e.what());
    }
}

const std::vector<std::string>& skin_lesion_classes()
{
    static const std::vector<std::string> classes{"ACK", "BCC", "MEL", "NEV", "SCC", "SEK"};
    return classes;
}

// ---------------------------------------------------------------- images

Tensor preprocess_image(const cv::Mat& image, const PreprocessConfig& cfg)
{
    if (image.empty()) {
        throw std::invalid_argument("cannot preprocess an empty image");
    }
    if (cfg.size <= 0) {
        throw std::invalid_argument("preprocess size must be positive");
    }
    cv::Mat bgr;
    if (image.channels() == 1) {
        cv::cvtColor(image, bgr, cv::COLOR_GRAY2BGR);
    } else if (image.channels() == 4) {
        cv::cvtColor(image, bgr, cv::COLOR_BGRA2BGR);
    } else {
        bgr = image;
    }
    cv::Mat scaled;
    double depth_scale = 1.0 / 255.0;
    if (bgr.depth() == CV_16U) {
        depth_scale = 1.0 / 65535.0;
    } else if (bgr.depth() == CV_32F || bgr.depth() == CV_64F) {
        depth_scale = 1.0;  // float input is taken to be in [0, 1] already
    }
    bgr.convertTo(scaled, CV_64FC3, depth_scale);
    cv::Mat resized;
    if (scaled.rows != cfg.size || scaled.cols != cfg.size) {
        cv::resize(scaled, resized, cv::Size(cfg.size, cfg.size), 0, 0, cv::INTER_LINEAR);
    } else {
        resized = scaled;
    }

    Tensor out({3, cfg.size, cfg.size});
    for (int y = 0; y < cfg.size; ++y) {
        const auto* row = resized.ptr<cv::Vec3d>(y);
        for (int x = 0; x < cfg.size; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = row[x][2 - c];  // BGR -> RGB
                out.at(c, y, x) = (v - cfg.mean[c]) / cfg.std[c];
            }
        }
    }
    return out;
}

Tensor preprocess(const fs::path& image_file, const PreprocessConfig& cfg)
{
    const cv::Mat img = cv::imread(image_file.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
    if (img.empty()) {
        throw IoError("cannot decode image " + image_file.string());
    }
    return preprocess_image(img, cfg);
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, const PreprocessConfig& cfg)
{
    std::vector<Sample> out;
    out.reserve(manifest.size());
    for (const auto& r : manifest.records) {
        out.push_back({r.image_id, preprocess(manifest.image_path(r), cfg), manifest.label_index(r.label)});
    }
    return out;
}

// ---------------------------------------------------------------- toy data

cv::Mat render_toy_image(int label, int classes, int size, double noise, Rng& rng)
{
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double hue = static_cast<double>(label) / classes;
    // HSV(hue, 0.85, 0.95) -> RGB
    auto channel = [&](double n) {
        const double k = std::fmod(n + hue * 6.0, 6.0);
        return 0.95 - 0.95 * 0.85 * std::max(0.0, std::min({k, 4.0 - k, 1.0}));
    };
    const double rgb[3] = {channel(5.0), channel(3.0), channel(1.0)};

    const double angle = 2.0 * std::numbers::pi * label / classes;
    const double cy = size / 2.0 + 0.22 * size * std::sin(angle) + noise * 0.04 * size * gauss(rng);
    const double cx = size / 2.0 + 0.22 * size * std::cos(angle) + noise * 0.04 * size * gauss(rng);
    const double radius = size * 0.2 * (1.0 + noise * 0.1 * gauss(rng));
    double color[3];
    for (int c = 0; c < 3; ++c) {
        color[c] = rgb[c] + noise * 0.04 * gauss(rng);
    }

    cv::Mat img(size, size, CV_8UC3);
    for (int y = 0; y < size; ++y) {
        auto* row = img.ptr<cv::Vec3b>(y);
        for (int x = 0; x < size; ++x) {
            const double dy = y + 0.5 - cy;
            const double dx = x + 0.5 - cx;
            const bool inside = dy * dy + dx * dx <= radius * radius;
            for (int c = 0; c < 3; ++c) {
                const double base = inside ? color[c] : 0.5;
                const double v = base + noise * 0.05 * gauss(rng);
                row[x][2 - c] = cv::saturate_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
        }
    }
    return img;
}

DatasetManifest synth_toy_dataset(const ToyConfig& cfg, const fs::path& out_dir)
{
    if (cfg.classes < 2 || cfg.per_class < kPartCount || cfg.size < 16 || cfg.noise < 0.0) {
        throw std::invalid_argument("toy dataset needs classes >= 2, per_class >= 6, size >= 16, noise >= 0");
    }
    fs::create_directories(out_dir / "images");
    DatasetManifest m;
    m.root = out_dir;
    for (int c = 0; c < cfg.classes; ++c) {
        m.classes.push_back(fmt::format("class{}", c));
    }
    Rng rng(derive_seed(cfg.seed, 0x70f));
    for (int c = 0; c < cfg.classes; ++c) {
        for (int i = 0; i < cfg.per_class; ++i) {
            ManifestRecord r;
            r.image_id = fmt::format("toy_c{}_{:05d}", c, i);
            r.path = "images/" + r.image_id + ".png";
            r.label = m.classes[static_cast<std::size_t>(c)];
            const cv::Mat img = render_toy_image(c, cfg.classes, cfg.size, cfg.noise, rng);
            if (!cv::imwrite((out_dir / r.path).string(), img)) {
                throw IoError("cannot write " + (out_dir / r.path).string());
            }
            m.records.push_back(std::move(r));
        }
    }
    write_manifest(out_dir / "manifest.csv", m);
    return m;
}

std::string dataset_checksum(const DatasetManifest& manifest)
{
    std::uint64_t h = fnv1a64("diffclass-dataset");
    for (const auto& c : manifest.classes) {
        h = fnv1a64(c + '\n', h);
    }
    for (const auto& r : manifest.records) {
        h = fnv1a64(r.image_id + ',' + r.path + ',' + r.label + ',' +
                        (r.fold ? std::to_string(*r.fold) : "") + '\n',
                    h);
        const fs::path p = manifest.image_path(r);
        if (fs::exists(p)) {
            h = fnv1a64(read_file_bytes(p), h);
        }
    }
    return fmt::format("{:016x}", h);
}

}  // namespace diffclass
