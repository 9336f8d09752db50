#include "support.hpp"

#include "diffclass/error.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <map>
#include <set>

using namespace diffclass;
namespace fs = std::filesystem;

namespace {

DatasetManifest make_manifest(const std::vector<std::pair<std::string, int>>& counts)
{
    DatasetManifest m;
    for (const auto& [label, n] : counts) {
        m.classes.push_back(label);
        for (int i = 0; i < n; ++i) {
            m.records.push_back({label + "_" + std::to_string(i), label + "/" + std::to_string(i) + ".png", label,
                                 std::nullopt, ""});
        }
    }
    return m;
}

// Every record lands in exactly one part, and `parts` agrees with the folds.
void check_partition(const SplitResult& s, std::size_t n)
{
    std::vector<int> seen(n, 0);
    for (int p = 0; p < kPartCount; ++p) {
        for (std::size_t i : s.parts[static_cast<std::size_t>(p)]) {
            REQUIRE(i < n);
            ++seen[i];
            REQUIRE(s.manifest.records[i].fold == p);
        }
    }
    for (int v : seen) {
        REQUIRE(v == 1);
    }
}

std::array<double, 3> mean_color(const Tensor& image)
{
    std::array<double, 3> m{};
    const int hw = image.dim(1) * image.dim(2);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < image.dim(1); ++y) {
            for (int x = 0; x < image.dim(2); ++x) {
                m[c] += image.at(c, y, x) / hw;
            }
        }
    }
    return m;
}

// Fraction of `test` classified correctly by the nearest class centroid of
// mean colors over `train`.
double nearest_centroid_accuracy(const std::vector<Sample>& train, const std::vector<Sample>& test, int classes)
{
    std::vector<std::array<double, 3>> centroid(static_cast<std::size_t>(classes), std::array<double, 3>{});
    std::vector<int> count(static_cast<std::size_t>(classes), 0);
    for (const auto& s : train) {
        const auto m = mean_color(s.image);
        for (int c = 0; c < 3; ++c) {
            centroid[s.label][c] += m[c];
        }
        ++count[s.label];
    }
    for (int k = 0; k < classes; ++k) {
        for (int c = 0; c < 3; ++c) {
            centroid[k][c] /= count[k];
        }
    }
    int correct = 0;
    for (const auto& s : test) {
        const auto m = mean_color(s.image);
        int best = 0;
        double best_d = 1e300;
        for (int k = 0; k < classes; ++k) {
            double d = 0.0;
            for (int c = 0; c < 3; ++c) {
                d += (m[c] - centroid[k][c]) * (m[c] - centroid[k][c]);
            }
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        correct += best == s.label ? 1 : 0;
    }
    return static_cast<double>(correct) / test.size();
}

}  // namespace

TEST_CASE("load a canonical manifest")
{
    testing::TempDir dir("load");
    testing::write_text(dir.path / "m.csv",
                        "image_id,path,label,fold\n"
                        "a,img/a.png,cat,0\n"
                        "b,img/b.png,dog,\n"
                        "c,\"img/c, copy.png\",cat,5\n");
    const auto m = load_manifest(dir.path / "m.csv", dir.path / "images");
    REQUIRE(m.size() == 3);
    CHECK(m.classes == std::vector<std::string>{"cat", "dog"});
    CHECK(m.records[0].fold == 0);
    CHECK_FALSE(m.records[1].fold.has_value());
    CHECK(m.records[2].path == "img/c, copy.png");
    CHECK(m.image_path(m.records[0]) == dir.path / "images" / "img/a.png");
    CHECK(m.labels() == std::vector<int>{0, 1, 0});
    CHECK(m.class_counts() == std::vector<std::size_t>{2, 1});
    CHECK_FALSE(m.has_folds());

    CsvSchema ordered;
    ordered.class_order = {"dog", "cat"};
    CHECK(load_manifest(dir.path / "m.csv", dir.path, ordered).classes == ordered.class_order);
    ordered.class_order = {"dog"};
    CHECK_THROWS_AS(load_manifest(dir.path / "m.csv", dir.path, ordered), IntegrityError);
}

TEST_CASE("manifest load errors")
{
    testing::TempDir dir("loaderr");
    testing::write_text(dir.path / "fold7.csv", "image_id,path,label,fold\na,a.png,x,7\n");
    CHECK_THROWS_AS(load_manifest(dir.path / "fold7.csv", dir.path), IntegrityError);

    testing::write_text(dir.path / "nolabel.csv", "image_id,path,fold\na,a.png,1\n");
    try {
        load_manifest(dir.path / "nolabel.csv", dir.path);
        FAIL("expected a schema error");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("'label'") != std::string::npos);
    }

    testing::write_text(dir.path / "dup.csv", "image_id,path,label,fold\na,a.png,x,1\na,b.png,y,2\n");
    CHECK_THROWS_AS(load_manifest(dir.path / "dup.csv", dir.path), IntegrityError);

    testing::write_text(dir.path / "badfold.csv", "image_id,path,label,fold\na,a.png,x,one\n");
    CHECK_THROWS_AS(load_manifest(dir.path / "badfold.csv", dir.path), IntegrityError);

    testing::write_text(dir.path / "short.csv", "image_id,path,label,fold\na,a.png\n");
    CHECK_THROWS_AS(load_manifest(dir.path / "short.csv", dir.path), SchemaError);

    CHECK_THROWS_AS(load_manifest(dir.path / "absent.csv", dir.path), IoError);
    testing::write_text(dir.path / "empty.csv", "");
    CHECK_THROWS_AS(load_manifest(dir.path / "empty.csv", dir.path), SchemaError);
}

TEST_CASE("PAD-style metadata loads through the repository adapter")
{
    const fs::path configs = DIFFCLASS_CONFIG_DIR;
    const auto schema = load_adapter(configs / "adapters" / "pad_ufes_20.json");
    CHECK(schema.path_column.empty());
    testing::TempDir dir("pad");
    // Rows in an order different from the configured vocabulary.
    std::string csv = "patient_id,img_id,diagnostic,age\n";
    int n = 0;
    for (const char* label : {"SEK", "NEV", "ACK", "SCC", "MEL", "BCC", "BCC"}) {
        csv += "P" + std::to_string(n) + ",PAT_" + std::to_string(n) + ".png," + label + ",50\n";
        ++n;
    }
    testing::write_text(dir.path / "metadata.csv", csv);
    const auto m = load_manifest(dir.path / "metadata.csv", dir.path, schema);
    CHECK(m.classes == std::vector<std::string>{"ACK", "BCC", "MEL", "NEV", "SCC", "SEK"});
    CHECK(m.classes == skin_lesion_classes());
    CHECK(m.size() == 7);
    CHECK(m.records[0].path == "PAT_0.png");

    for (const char* name : {"hiba.json", "p_ndb_ufes.json"}) {
        CHECK_NOTHROW(load_adapter(configs / "adapters" / name));
    }
    const auto hiba = load_adapter(configs / "adapters" / "hiba.json");
    CHECK(hiba.label_map.size() == 6);
    CHECK(load_vocabulary(configs / "vocab" / "pad_ufes_20.json") == skin_lesion_classes());
    const auto binary = ClassMapping::load(configs / "mappings" / "cancer_binary.json");
    CHECK(binary.pairs == cancer_binary_mapping().pairs);
    CHECK(binary.targets == cancer_binary_mapping().targets);

    testing::write_text(dir.path / "bad.json", "{not json");
    CHECK_THROWS_AS(load_adapter(dir.path / "bad.json"), SchemaError);
    CHECK_THROWS_AS(load_adapter(dir.path / "none.json"), IoError);
}

TEST_CASE("CSV quoting round trip")
{
    CHECK(parse_csv_line("a,\"b,c\",\"d \"\"e\"\"\",") == std::vector<std::string>{"a", "b,c", "d \"e\"", ""});
    CHECK(parse_csv_line("x;y", ';') == std::vector<std::string>{"x", "y"});
    testing::TempDir dir("rt");
    DatasetManifest m;
    m.classes = {"a,b", "q\"uote"};
    m.records = {{"id,1", "p/1.png", "a,b", 3, "g1"}, {"id\"2", "p/2.png", "q\"uote", std::nullopt, ""}};
    write_manifest(dir.path / "out" / "m.csv", m);
    CsvSchema schema;
    schema.group_column = "group";
    const auto back = load_manifest(dir.path / "out" / "m.csv", dir.path, schema);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.records[i].image_id == m.records[i].image_id);
        CHECK(back.records[i].path == m.records[i].path);
        CHECK(back.records[i].label == m.records[i].label);
        CHECK(back.records[i].fold == m.records[i].fold);
        CHECK(back.records[i].group == m.records[i].group);
    }
    CHECK(back.classes == m.classes);
}

TEST_CASE("balanced six-way split")
{
    const auto m = make_manifest({{"a", 200}, {"b", 200}, {"c", 200}});
    const auto s = split_sixths(m, 42);
    CHECK_FALSE(s.used_provided_folds);
    check_partition(s, m.size());
    for (const auto& part : s.parts) {
        CHECK(part.size() == 100);
    }
    CHECK(s.test().size() == 100);
    CHECK(s.warnings.empty());
    CHECK(s.manifest.has_folds());
    // Same seed, same assignment; another seed moves records.
    const auto again = split_sixths(m, 42);
    CHECK(again.parts == s.parts);
    CHECK(split_sixths(m, 43).parts != s.parts);
    // The recorded folds are reused verbatim.
    const auto reused = split_sixths(s.manifest, 999);
    CHECK(reused.used_provided_folds);
    CHECK(reused.parts == s.parts);
}

TEST_CASE("split is a stratified partition for random manifests")
{
    Rng rng(5);
    for (int trial = 0; trial < 500; ++trial) {
        const int classes = 1 + static_cast<int>(rng() % 6);
        std::vector<std::pair<std::string, int>> counts;
        int total = 0;
        for (int c = 0; c < classes; ++c) {
            const int n = static_cast<int>(rng() % 40);
            counts.push_back({"k" + std::to_string(c), n});
            total += n;
        }
        if (total < 6) {
            counts[0].second += 6;
        }
        const auto m = make_manifest(counts);
        const bool stratify = trial % 5 != 0;
        const auto s = split_sixths(m, rng(), stratify);
        check_partition(s, m.size());
        std::size_t smallest = m.size();
        std::size_t largest = 0;
        for (const auto& part : s.parts) {
            smallest = std::min(smallest, part.size());
            largest = std::max(largest, part.size());
        }
        REQUIRE(largest - smallest <= 1);
        if (stratify) {
            for (int c = 0; c < classes; ++c) {
                std::array<int, kPartCount> per{};
                for (const auto& r : s.manifest.records) {
                    if (r.label == counts[c].first) {
                        ++per[static_cast<std::size_t>(*r.fold)];
                    }
                }
                const auto [lo, hi] = std::minmax_element(per.begin(), per.end());
                REQUIRE(*hi - *lo <= 1);
            }
        }
    }
}

TEST_CASE("provided PAD folds are used verbatim")
{
    const std::vector<std::pair<std::string, std::array<int, 2>>> table{
        {"ACK", {608, 122}}, {"BCC", {704, 141}}, {"MEL", {44, 9}},
        {"NEV", {204, 40}},  {"SCC", {160, 32}},  {"SEK", {196, 39}}};
    DatasetManifest m;
    m.classes = skin_lesion_classes();
    int id = 0;
    for (const auto& [label, n] : table) {
        for (int i = 0; i < n[0] + n[1]; ++i) {
            const int fold = i < n[1] ? kTestPart : i % kFoldCount;
            m.records.push_back({"PAT_" + std::to_string(id++), "x.png", label, fold, ""});
        }
    }
    const auto s = split_sixths(m, 1);
    CHECK(s.used_provided_folds);
    CHECK(s.test().size() == 383);
    std::size_t train = 0;
    for (int p = 0; p < kFoldCount; ++p) {
        train += s.parts[static_cast<std::size_t>(p)].size();
    }
    CHECK(train == 1916);
    CHECK(m.select_parts({kTestPart}).size() == 383);
    CHECK(m.select_parts({0, 1, 2, 3, 4}).size() == 1916);

    m.records[10].fold.reset();
    CHECK_THROWS_AS(split_sixths(m, 1), IntegrityError);
}

TEST_CASE("split edge cases")
{
    CHECK_THROWS_AS(split_sixths(make_manifest({{"a", 5}}), 1), std::invalid_argument);

    // A rare class triggers a warning but no empty part.
    const auto rare = split_sixths(make_manifest({{"common", 30}, {"rare", 3}}), 2);
    check_partition(rare, 33);
    REQUIRE(rare.warnings.size() == 1);
    CHECK(rare.warnings[0].find("rare") != std::string::npos);
    for (const auto& part : rare.parts) {
        CHECK_FALSE(part.empty());
    }

    // Records sharing a group key stay together.
    auto grouped = make_manifest({{"a", 60}, {"b", 60}});
    for (std::size_t i = 0; i < grouped.size(); ++i) {
        grouped.records[i].group = "patient" + std::to_string(i / 4);
    }
    const auto g = split_sixths(grouped, 3);
    check_partition(g, grouped.size());
    std::map<std::string, std::set<int>> parts_of;
    for (const auto& r : g.manifest.records) {
        parts_of[r.group].insert(*r.fold);
    }
    for (const auto& [group, parts] : parts_of) {
        CHECK(parts.size() == 1);
    }
}

TEST_CASE("binary cancer remap")
{
    auto m = make_manifest({{"ACK", 3}, {"BCC", 2}, {"MEL", 2}, {"NEV", 1}, {"SCC", 1}, {"SEK", 2}});
    m.records[0].fold = 4;
    for (std::size_t i = 1; i < m.size(); ++i) {
        m.records[i].fold = static_cast<int>(i % 6);
    }
    const auto binary = remap_classes(m, cancer_binary_mapping());
    CHECK(binary.classes == std::vector<std::string>{"cancer", "non-cancer"});
    REQUIRE(binary.size() == m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto& before = m.records[i];
        const auto& after = binary.records[i];
        CHECK(after.fold == before.fold);
        CHECK(after.image_id == before.image_id);
        if (before.label == "MEL" || before.label == "BCC" || before.label == "SCC") {
            CHECK(after.label == "cancer");
        } else {
            CHECK(after.label == "non-cancer");
        }
    }
    binary.validate();

    const auto same = remap_classes(m, ClassMapping::identity(m.classes));
    CHECK(same.classes == m.classes);
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(same.records[i].label == m.records[i].label);
    }

    auto partial = cancer_binary_mapping();
    partial.pairs.erase("SEK");
    try {
        remap_classes(m, partial);
        FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("SEK") != std::string::npos);
    }
    ClassMapping broken;
    broken.targets = {"x"};
    broken.pairs = {{"ACK", "y"}};
    CHECK_THROWS_AS(remap_classes(m, broken), std::invalid_argument);
    broken.targets.clear();
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
}

TEST_CASE("composed remaps equal sequential remaps")
{
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const int n_src = 2 + static_cast<int>(rng() % 6);
        const int n_mid = 1 + static_cast<int>(rng() % 4);
        const int n_dst = 1 + static_cast<int>(rng() % 3);
        std::vector<std::pair<std::string, int>> counts;
        for (int i = 0; i < n_src; ++i) {
            counts.push_back({"s" + std::to_string(i), 1 + static_cast<int>(rng() % 5)});
        }
        const auto m = make_manifest(counts);
        ClassMapping first, second;
        for (int i = 0; i < n_mid; ++i) {
            first.targets.push_back("m" + std::to_string(i));
        }
        for (int i = 0; i < n_dst; ++i) {
            second.targets.push_back("d" + std::to_string(i));
        }
        for (int i = 0; i < n_src; ++i) {
            first.pairs["s" + std::to_string(i)] = first.targets[rng() % n_mid];
        }
        for (int i = 0; i < n_mid; ++i) {
            second.pairs["m" + std::to_string(i)] = second.targets[rng() % n_dst];
        }
        const auto twice = remap_classes(remap_classes(m, first), second);
        const auto once = remap_classes(m, ClassMapping::compose(first, second));
        REQUIRE(once.classes == twice.classes);
        for (std::size_t i = 0; i < m.size(); ++i) {
            REQUIRE(once.records[i].label == twice.records[i].label);
        }
    }
}

TEST_CASE("class intersection")
{
    // Ten clinical labels, six of them shared; 309 of 346 records survive.
    const std::vector<std::pair<std::string, int>> counts{
        {"ACK", 40}, {"BCC", 90}, {"MEL", 60}, {"NEV", 70}, {"SCC", 25}, {"SEK", 24},
        {"DF", 12},  {"VASC", 9}, {"LENTIGO", 10}, {"OTHER", 6}};
    const auto hiba = make_manifest(counts);
    REQUIRE(hiba.size() == 346);
    const auto r = intersect_classes(hiba, skin_lesion_classes());
    CHECK(r.manifest.size() == 309);
    CHECK(r.dropped == 37);
    CHECK(r.manifest.classes == skin_lesion_classes());
    r.manifest.validate();

    const auto all = intersect_classes(hiba, hiba.classes);
    CHECK(all.dropped == 0);
    CHECK(all.manifest.size() == hiba.size());
    CHECK(all.manifest.classes == hiba.classes);

    CHECK_THROWS_AS(intersect_classes(hiba, {"nothing", "here"}), InvalidState);
    CHECK_THROWS_AS(intersect_classes(hiba, {}), std::invalid_argument);
}

TEST_CASE("preprocessing")
{
    const PreprocessConfig cfg;
    SUBCASE("default output shape for any input size")
    {
        for (auto [h, w] : {std::pair{224, 224}, std::pair{31, 500}, std::pair{600, 17}, std::pair{1, 1}}) {
            const cv::Mat img(h, w, CV_8UC3, cv::Scalar(10, 200, 40));
            const auto t = preprocess_image(img, cfg);
            CHECK(t.shape() == std::vector<int>{3, 224, 224});
        }
    }
    SUBCASE("constant gray")
    {
        const cv::Mat img(40, 50, CV_32FC3, cv::Scalar(0.5, 0.5, 0.5));
        const auto t = preprocess_image(img, cfg);
        for (int c = 0; c < 3; ++c) {
            const double want = (0.5 - cfg.mean[c]) / cfg.std[c];
            for (int y = 0; y < 224; y += 7) {
                for (int x = 0; x < 224; x += 5) {
                    REQUIRE(std::abs(t.at(c, y, x) - want) < 1e-12);
                }
            }
        }
        // 8-bit 128 is the nearest byte to mid gray.
        const auto byte = preprocess_image(cv::Mat(8, 8, CV_8UC3, cv::Scalar(128, 128, 128)), cfg);
        CHECK(std::abs(byte.at(1, 3, 3) - (128.0 / 255.0 - cfg.mean[1]) / cfg.std[1]) < 1e-12);
    }
    SUBCASE("grayscale is replicated and channels are RGB")
    {
        testing::TempDir dir("gray");
        cv::Mat gray(20, 20, CV_8UC1);
        cv::randu(gray, 0, 255);
        cv::imwrite((dir.path / "g.png").string(), gray);
        PreprocessConfig plain;
        plain.size = 20;
        plain.mean = {0, 0, 0};
        plain.std = {1, 1, 1};
        for (const auto& t : {preprocess(dir.path / "g.png", plain), preprocess_image(gray, plain)}) {
            for (int y = 0; y < 20; ++y) {
                for (int x = 0; x < 20; ++x) {
                    REQUIRE(t.at(0, y, x) == t.at(1, y, x));
                    REQUIRE(t.at(0, y, x) == t.at(2, y, x));
                    REQUIRE(std::abs(t.at(0, y, x) - gray.at<std::uint8_t>(y, x) / 255.0) < 1e-15);
                }
            }
        }
        const cv::Mat red(4, 4, CV_8UC3, cv::Scalar(0, 0, 255));  // BGR
        const auto rt = preprocess_image(red, plain);
        CHECK(rt.at(0, 0, 0) == 1.0);
        CHECK(rt.at(2, 0, 0) == 0.0);
    }
    SUBCASE("undecodable file")
    {
        testing::TempDir dir("undec");
        testing::write_text(dir.path / "x.png", "definitely not a png");
        try {
            preprocess(dir.path / "x.png", cfg);
            FAIL("expected an I/O error");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find((dir.path / "x.png").string()) != std::string::npos);
        }
        CHECK_THROWS_AS(preprocess(dir.path / "missing.png", cfg), IoError);
        CHECK_THROWS_AS(preprocess_image(cv::Mat(), cfg), std::invalid_argument);
    }
}

TEST_CASE("toy dataset generation")
{
    testing::TempDir a("toya");
    testing::TempDir b("toyb");
    ToyConfig cfg;  // 3 classes, 200 each, 32 px, seed 7
    const auto ma = synth_toy_dataset(cfg, a.path);
    const auto mb = synth_toy_dataset(cfg, b.path);
    CHECK(ma.size() == 600);
    CHECK(ma.class_counts() == std::vector<std::size_t>{200, 200, 200});
    CHECK(fs::exists(a.path / "manifest.csv"));
    for (std::size_t i = 0; i < ma.size(); i += 37) {
        CHECK(testing::read_text(ma.image_path(ma.records[i])) == testing::read_text(mb.image_path(mb.records[i])));
    }
    CHECK(dataset_checksum(ma) == dataset_checksum(mb));
    const auto reloaded = load_manifest(a.path / "manifest.csv", a.path);
    CHECK(dataset_checksum(reloaded) == dataset_checksum(ma));

    testing::TempDir c("toyc");
    ToyConfig other = cfg;
    other.seed = 8;
    other.per_class = 6;
    const auto mc = synth_toy_dataset(other, c.path);
    CHECK(testing::read_text(mc.image_path(mc.records[0])) != testing::read_text(ma.image_path(ma.records[0])));

    // Mean color separates the classes: held-out sixth against the other five.
    PreprocessConfig pp;
    pp.size = 32;
    const auto split = split_sixths(ma, 1);
    const auto train = load_samples(split.manifest.select_parts({0, 1, 2, 3, 4}), pp);
    const auto test = load_samples(split.manifest.select_parts({kTestPart}), pp);
    CHECK(nearest_centroid_accuracy(train, test, 3) == 1.0);
}

TEST_CASE("noise-free toy images are perfectly separated by mean color")
{
    testing::TempDir dir("clean");
    ToyConfig cfg;
    cfg.classes = 5;
    cfg.per_class = 6;
    cfg.noise = 0.0;
    const auto m = synth_toy_dataset(cfg, dir.path);
    PreprocessConfig pp;
    pp.size = 32;
    const auto samples = load_samples(m, pp);
    CHECK(nearest_centroid_accuracy(samples, samples, 5) == 1.0);
    // Without noise every image of a class is identical.
    CHECK(testing::read_text(m.image_path(m.records[0])) == testing::read_text(m.image_path(m.records[5])));
}

TEST_CASE("invalid toy parameters")
{
    testing::TempDir dir("inv");
    for (auto mutate : std::vector<std::function<void(ToyConfig&)>>{
             [](ToyConfig& c) { c.classes = 1; }, [](ToyConfig& c) { c.per_class = 5; },
             [](ToyConfig& c) { c.size = 15; }, [](ToyConfig& c) { c.noise = -0.1; }}) {
        ToyConfig cfg;
        mutate(cfg);
        CHECK_THROWS_AS(synth_toy_dataset(cfg, dir.path), std::invalid_argument);
    }
}
