// diffclass command-line driver: prepare | train | crossval | eval.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.

#include "diffclass/data.hpp"
#include "diffclass/error.hpp"
#include "diffclass/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#ifndef DIFFCLASS_VERSION
#define DIFFCLASS_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace diffclass;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Errors in user-supplied arguments or config files.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

bool g_quiet = false;

template <typename... Args>
void info(fmt::format_string<Args...> f, Args&&... args)
{
    if (!g_quiet) {
        fmt::print(stderr, f, std::forward<Args>(args)...);
        std::fputc('\n', stderr);
    }
}

// Runs a data-handling step, reporting argument errors from data transforms
// (unmapped labels, empty vocabularies) as data errors.
template <typename F>
auto data_step(F&& f)
{
    try {
        return f();
    } catch (const std::invalid_argument& e) {
        throw IntegrityError(e.what());
    }
}

ordered_json read_json(const fs::path& p)
{
    std::ifstream in(p);
    if (!in) {
        throw UsageError("cannot read config file " + p.string());
    }
    try {
        return ordered_json::parse(in);
    } catch (const ordered_json::exception& e) {
        throw UsageError("config file " + p.string() + " is not valid JSON: " + e.what());
    }
}

void write_json(const fs::path& p, const ordered_json& j)
{
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
    std::ofstream out(p, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + p.string());
    }
    out << j.dump(2) << '\n';
}

fs::path make_run_dir(const std::string& explicit_dir, const std::string& root, std::uint64_t seed)
{
    fs::path dir;
    if (!explicit_dir.empty()) {
        dir = explicit_dir;
    } else {
        const std::time_t now = std::time(nullptr);
        std::tm tm{};
        localtime_r(&now, &tm);
        const std::string base = fmt::format("{:%Y%m%d-%H%M%S}-seed{}", tm, seed);
        dir = fs::path(root) / base;
        for (int k = 1; fs::exists(dir); ++k) {
            dir = fs::path(root) / fmt::format("{}-{}", base, k);
        }
    }
    fs::create_directories(dir);
    return dir;
}

// ------------------------------------------------------------------ options

struct ManifestArgs {
    std::string manifest;
    std::string image_root;
    std::uint64_t split_seed = 0;
    bool split_seed_set = false;
    std::string remap;  // train and crossval only; eval has its own transform list
};

void add_manifest_options(CLI::App* cmd, ManifestArgs& a)
{
    cmd->add_option("--manifest", a.manifest, "canonical manifest CSV (image_id,path,label,fold)")->required();
    cmd->add_option("--image-root", a.image_root, "image root (default: the manifest's directory)");
    cmd->add_option("--split-seed", a.split_seed, "seed for the six-way split when the manifest has no folds");
}

DatasetManifest load_canonical(const ManifestArgs& a, std::uint64_t fallback_seed, std::vector<std::string>* warnings)
{
    const fs::path csv = a.manifest;
    const fs::path root = a.image_root.empty() ? csv.parent_path() : fs::path(a.image_root);
    if (!root.empty() && !fs::is_directory(root)) {
        throw IoError("image root does not exist: " + root.string());
    }
    DatasetManifest m = load_manifest(csv, root);
    if (!a.remap.empty()) {
        const ClassMapping mapping = ClassMapping::load(a.remap);
        m = data_step([&] { return remap_classes(m, mapping); });
    }
    if (!m.has_folds()) {
        auto split = split_sixths(m, a.split_seed_set ? a.split_seed : fallback_seed);
        if (warnings) {
            *warnings = split.warnings;
        }
        m = std::move(split.manifest);
    }
    return m;
}

ordered_json dataset_entry(const std::string& role, const std::string& path, const DatasetManifest& m)
{
    ordered_json counts;
    const auto cc = m.class_counts();
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
        counts[m.classes[i]] = cc[i];
    }
    return {{"role", role},
            {"manifest", path},
            {"records", m.size()},
            {"class_counts", counts},
            {"checksum", dataset_checksum(m)}};
}

// Flags that override the resolved config only when given.
struct ConfigArgs {
    std::string config_file;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<double> lr;
    std::optional<double> lambda_dcg;
    bool freeze_dcg = false;
    std::optional<int> dcg_warmup;
    std::optional<std::string> augment;
    std::optional<std::string> class_weights;
    std::optional<int> checkpoint_every;
    std::optional<int> sampler_steps;
    std::optional<int> chains;
    std::optional<double> temperature;
    std::optional<std::string> sampler_init;
    std::optional<std::uint64_t> sampler_seed;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a, bool training)
{
    cmd->add_option("--config", a.config_file, "JSON config file (overrides preset defaults)");
    cmd->add_option("--seed", a.seed, "base seed for initialization, batch order and sampling");
    if (training) {
        cmd->add_option("--preset", a.preset, "desk | full")->check(CLI::IsMember({"desk", "full"}));
        cmd->add_option("--epochs", a.epochs)->check(CLI::PositiveNumber);
        cmd->add_option("--batch-size", a.batch_size)->check(CLI::PositiveNumber);
        cmd->add_option("--lr", a.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
        cmd->add_option("--lambda-dcg", a.lambda_dcg, "weight of the prior cross-entropy terms")
            ->check(CLI::NonNegativeNumber);
        cmd->add_flag("--freeze-dcg", a.freeze_dcg, "keep guidance weights fixed");
        cmd->add_option("--dcg-warmup", a.dcg_warmup, "guidance-only epochs before joint training")
            ->check(CLI::NonNegativeNumber);
        cmd->add_option("--augment", a.augment)->check(CLI::IsMember({"none", "hflip"}));
        cmd->add_option("--class-weights", a.class_weights)->check(CLI::IsMember({"inverse", "uniform"}));
        cmd->add_option("--checkpoint-every", a.checkpoint_every)->check(CLI::NonNegativeNumber);
    }
    cmd->add_option("--sampler-steps", a.sampler_steps, "reverse steps (0 = every step)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--chains", a.chains, "sampling chains averaged per image")->check(CLI::PositiveNumber);
    cmd->add_option("--temperature", a.temperature, "softmax temperature on the final label vector")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--sampler-init", a.sampler_init)->check(CLI::IsMember({"prior", "standard"}));
    cmd->add_option("--sampler-seed", a.sampler_seed, "sampling seed (default: --seed)");
}

PipelineConfig resolve_config(const ConfigArgs& a)
{
    try {
        ordered_json file = a.config_file.empty() ? ordered_json::object() : read_json(a.config_file);
        std::string preset = file.value("preset", std::string("desk"));
        if (!a.preset.empty()) {
            preset = a.preset;
        }
        file.erase("preset");
        PipelineConfig c = PipelineConfig::defaults(preset);
        apply_json(file, c);
        if (a.seed) {
            c.train.seed = *a.seed;
            c.sampler.seed = *a.seed;
        }
        if (a.epochs) c.train.epochs = *a.epochs;
        if (a.batch_size) c.train.batch_size = *a.batch_size;
        if (a.lr) c.train.learning_rate = *a.lr;
        if (a.lambda_dcg) c.train.lambda_dcg = *a.lambda_dcg;
        if (a.freeze_dcg) c.train.freeze_dcg = true;
        if (a.dcg_warmup) c.train.dcg_warmup_epochs = *a.dcg_warmup;
        if (a.augment) c.train.augmentation = parse_augmentation(*a.augment);
        if (a.class_weights) c.train.class_weights = parse_class_weight_mode(*a.class_weights);
        if (a.checkpoint_every) c.train.checkpoint_every = *a.checkpoint_every;
        if (a.sampler_steps) c.sampler.steps = *a.sampler_steps;
        if (a.chains) c.sampler.chains = *a.chains;
        if (a.temperature) c.sampler.temperature = *a.temperature;
        if (a.sampler_init) {
            ordered_json j{{"init", *a.sampler_init}};
            from_json(j, c.sampler);
        }
        if (a.sampler_seed) c.sampler.seed = *a.sampler_seed;
        c.train.validate();
        c.sampler.validate();
        return c;
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    } catch (const ordered_json::exception& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
}

ordered_json base_metadata(const std::string& command, const PipelineConfig& c)
{
    ordered_json m;
    m["command"] = command;
    m["version"] = DIFFCLASS_VERSION;
    m["config"] = to_json(c);
    m["seeds"] = {{"train", c.train.seed}, {"sampler", c.sampler.seed}};
    m["interpretations"] = {
        {"prior_shift", "mean of global and local priors; both priors are also denoiser inputs"},
        {"latent_width", "hidden width of the denoiser trunk"},
        {"roi_count", c.model.guidance.roi_count},
        {"crop_size", c.model.guidance.crop_size},
        {"sampling_chains", c.sampler.chains},
        {"augmentation", to_string(c.train.augmentation)},
        {"normalization", {{"mean", c.preprocess.mean}, {"std", c.preprocess.std}}},
    };
    return m;
}

// ------------------------------------------------------------------ prepare

struct PrepareArgs {
    std::vector<std::string> toy;
    std::string adapter;
    std::string metadata;
    std::string image_root;
    std::string out;
    std::uint64_t seed = 0;
    bool no_stratify = false;
};

int cmd_prepare(const PrepareArgs& a, bool toy_mode)
{
    if (toy_mode == !a.adapter.empty()) {
        throw UsageError("prepare needs exactly one of --toy or --adapter");
    }
    fs::path out = a.out;
    DatasetManifest manifest;
    std::uint64_t split_seed = a.seed;
    ordered_json meta{{"command", "prepare"}, {"version", DIFFCLASS_VERSION}};

    if (toy_mode) {
        ToyConfig tc;
        for (const auto& kv : a.toy) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) {
                throw UsageError("--toy expects key=value pairs, got '" + kv + "'");
            }
            const std::string key = kv.substr(0, eq);
            const std::string val = kv.substr(eq + 1);
            try {
                if (key == "C" || key == "classes") tc.classes = std::stoi(val);
                else if (key == "n" || key == "per_class") tc.per_class = std::stoi(val);
                else if (key == "size") tc.size = std::stoi(val);
                else if (key == "seed") tc.seed = std::stoull(val);
                else if (key == "noise") tc.noise = std::stod(val);
                else if (key == "out") out = val;
                else throw UsageError("unknown --toy key '" + key + "'");
            } catch (const std::logic_error&) {
                throw UsageError("bad value for --toy " + key + ": '" + val + "'");
            }
        }
        if (out.empty()) {
            throw UsageError("prepare --toy needs out=<dir> or --out");
        }
        try {
            manifest = synth_toy_dataset(tc, out);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        if (a.seed == 0) {
            split_seed = tc.seed;
        }
        meta["toy"] = {{"classes", tc.classes},
                       {"per_class", tc.per_class},
                       {"size", tc.size},
                       {"seed", tc.seed},
                       {"noise", tc.noise}};
    } else {
        const fs::path adapter_path = a.adapter;
        const CsvSchema schema = load_adapter(adapter_path);
        ordered_json adapter = read_json(adapter_path);
        const fs::path metadata = !a.metadata.empty() ? fs::path(a.metadata)
                                  : adapter.contains("metadata")
                                      ? fs::path(adapter.at("metadata").get<std::string>())
                                      : fs::path();
        const fs::path root = !a.image_root.empty() ? fs::path(a.image_root)
                              : adapter.contains("image_root")
                                  ? fs::path(adapter.at("image_root").get<std::string>())
                                  : fs::path();
        if (metadata.empty()) {
            throw UsageError("adapter needs a metadata CSV (--metadata or \"metadata\" in the adapter)");
        }
        if (root.empty() || !fs::is_directory(root)) {
            throw IoError("image root does not exist: " + (root.empty() ? std::string("<unset>") : root.string()));
        }
        if (out.empty()) {
            throw UsageError("prepare --adapter needs --out");
        }
        manifest = load_manifest(metadata, root, schema);
        // Paths in the written manifest are relative to the source image root.
        manifest.root = root;
        meta["adapter"] = adapter_path.string();
        meta["source"] = metadata.string();
        meta["image_root"] = fs::absolute(root).string();
    }

    SplitResult split = data_step([&] { return split_sixths(manifest, split_seed, !a.no_stratify); });
    for (const auto& w : split.warnings) {
        fmt::print(stderr, "warning: {}\n", w);
    }
    fs::create_directories(out);
    DatasetManifest written = split.manifest;
    if (!toy_mode) {
        // Store absolute paths so the manifest can live apart from the images.
        for (auto& r : written.records) {
            r.path = fs::absolute(manifest.root / r.path).lexically_normal().string();
        }
    }
    write_manifest(out / "manifest.csv", written);

    ordered_json parts = ordered_json::array();
    for (int p = 0; p < kPartCount; ++p) {
        parts.push_back(split.parts[static_cast<std::size_t>(p)].size());
    }
    meta["split"] = {{"seed", split_seed},
                     {"stratified", !a.no_stratify},
                     {"used_provided_folds", split.used_provided_folds},
                     {"part_sizes", parts},
                     {"test_records", split.test().size()},
                     {"train_records", split.manifest.size() - split.test().size()},
                     {"warnings", split.warnings}};
    meta["classes"] = split.manifest.classes;
    meta["dataset"] = dataset_entry("prepared", (out / "manifest.csv").string(), split.manifest);
    write_json(out / "prepare.json", meta);
    fmt::print("{} records, {} classes -> {}\n", split.manifest.size(), split.manifest.classes.size(),
               (out / "manifest.csv").string());
    return kOk;
}

// ------------------------------------------------------------------ train

struct RunArgs {
    std::string run_dir;
    std::string runs_root = "runs";
};

void add_run_options(CLI::App* cmd, RunArgs& a)
{
    cmd->add_option("--run-dir", a.run_dir, "output directory (default: <runs-root>/<timestamp>-seed<seed>)");
    cmd->add_option("--runs-root", a.runs_root, "parent of generated run directories");
}

TrainHooks logging_hooks(const fs::path& dir, const std::string& label, ordered_json ckpt_meta)
{
    const fs::path log_path = dir / "train_log.jsonl";
    std::ofstream(log_path, std::ios::trunc).close();
    TrainHooks hooks;
    hooks.on_epoch = [log_path, label](const EpochLog& e) {
        std::ofstream(log_path, std::ios::app) << to_json(e).dump() << '\n';
        info("{}epoch {:>3}  diffusion {:.5f}  wce_g {:.5f}  wce_l {:.5f}  total {:.5f}  ({:.1f}s)", label, e.epoch,
             e.diffusion, e.wce_global, e.wce_local, e.total, e.wall_time);
    };
    hooks.on_checkpoint = [dir, ckpt_meta](int epoch, Models& models) {
        ordered_json m = ckpt_meta;
        m["epoch"] = epoch;
        save_checkpoint(dir / fmt::format("checkpoint_epoch{}.dcls", epoch), models, m);
    };
    return hooks;
}

int cmd_train(const ManifestArgs& ma, const ConfigArgs& ca, const RunArgs& ra, int fold)
{
    PipelineConfig config = resolve_config(ca);
    std::vector<std::string> split_warnings;
    const DatasetManifest manifest = load_canonical(ma, config.train.seed, &split_warnings);
    for (const auto& w : split_warnings) {
        fmt::print(stderr, "warning: {}\n", w);
    }
    try {
        config.bind(manifest.classes);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const fs::path dir = make_run_dir(ra.run_dir, ra.runs_root, config.train.seed);

    ordered_json meta = base_metadata("train", config);
    meta["fold"] = fold;
    meta["seeds"]["fold"] = fold_seed(config.train.seed, fold);
    meta["datasets"] = ordered_json::array({dataset_entry("train", ma.manifest, manifest)});
    if (!ma.remap.empty()) {
        meta["remap"] = ma.remap;
    }
    write_json(dir / "config.json", to_json(config));
    write_json(dir / "metadata.json", meta);

    ordered_json ckpt_meta{{"fold", fold}, {"train", config.train}, {"dataset_checksum", meta["datasets"][0]["checksum"]}};
    TrainResult result;
    Models models = train_fold(manifest, fold, config, logging_hooks(dir, "", ckpt_meta), &result);
    ckpt_meta["epoch"] = config.train.epochs;
    save_checkpoint(dir / "checkpoint.dcls", models, ckpt_meta);
    fmt::print("trained fold {} for {} epochs ({} optimizer steps) -> {}\n", fold, config.train.epochs,
               result.optimizer_steps, dir.string());
    return kOk;
}

// ------------------------------------------------------------------ crossval

int cmd_crossval(const ManifestArgs& ma, const ConfigArgs& ca, const RunArgs& ra)
{
    PipelineConfig config = resolve_config(ca);
    std::vector<std::string> split_warnings;
    const DatasetManifest manifest = load_canonical(ma, config.train.seed, &split_warnings);
    for (const auto& w : split_warnings) {
        fmt::print(stderr, "warning: {}\n", w);
    }
    try {
        config.bind(manifest.classes);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const fs::path dir = make_run_dir(ra.run_dir, ra.runs_root, config.train.seed);

    ordered_json meta = base_metadata("crossval", config);
    ordered_json fold_seeds = ordered_json::array();
    for (int f = 0; f < kFoldCount; ++f) {
        fold_seeds.push_back(fold_seed(config.train.seed, f));
    }
    meta["seeds"]["folds"] = fold_seeds;
    meta["datasets"] = ordered_json::array({dataset_entry("crossval", ma.manifest, manifest)});
    if (!ma.remap.empty()) {
        meta["remap"] = ma.remap;
    }
    write_json(dir / "config.json", to_json(config));
    write_json(dir / "metadata.json", meta);

    std::vector<fs::path> log_paths;
    for (int f = 0; f < kFoldCount; ++f) {
        const fs::path fd = dir / fmt::format("fold{}", f);
        fs::create_directories(fd);
        std::ofstream(fd / "train_log.jsonl", std::ios::trunc).close();
        log_paths.push_back(fd / "train_log.jsonl");
    }
    CrossvalHooks hooks;
    hooks.on_epoch = [&](int fold, const EpochLog& e) {
        std::ofstream(log_paths[static_cast<std::size_t>(fold)], std::ios::app) << to_json(e).dump() << '\n';
        info("[fold {}] epoch {:>3}  diffusion {:.5f}  wce_g {:.5f}  wce_l {:.5f}  ({:.1f}s)", fold, e.epoch,
             e.diffusion, e.wce_global, e.wce_local, e.wall_time);
    };
    hooks.on_fold = [&](int fold, Models& models, const TrainResult&, const RunPredictions& run) {
        const fs::path fd = dir / fmt::format("fold{}", fold);
        save_checkpoint(fd / "checkpoint.dcls", models,
                        {{"fold", fold}, {"train", config.train}, {"epoch", config.train.epochs},
                         {"dataset_checksum", meta["datasets"][0]["checksum"]}});
        write_predictions(fd / "predictions.csv", run.rows, manifest.classes);
    };
    const EvalReport report = crossval(manifest, config, hooks);
    report.write(dir / "report");
    fmt::print("{}", report.summary());
    fmt::print("report -> {}\n", (dir / "report").string());
    return kOk;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
    std::vector<std::string> checkpoints;
    std::string remap;
    std::string intersect;
    bool test_part = false;
    bool fail_fast = false;
};

int cmd_eval(const ManifestArgs& ma, const ConfigArgs& ca, const EvalArgs& ea, const RunArgs& ra)
{
    PipelineConfig config = resolve_config(ca);
    const fs::path csv = ma.manifest;
    const fs::path root = ma.image_root.empty() ? csv.parent_path() : fs::path(ma.image_root);
    if (!root.empty() && !fs::is_directory(root)) {
        throw IoError("image root does not exist: " + root.string());
    }
    DatasetManifest manifest = load_manifest(csv, root);
    ordered_json transforms = ordered_json::array();
    if (!ea.intersect.empty()) {
        const auto vocab = load_vocabulary(ea.intersect);
        auto r = data_step([&] { return intersect_classes(manifest, vocab); });
        info("intersect: kept {} records, dropped {}", r.manifest.size(), r.dropped);
        transforms.push_back({{"intersect", ea.intersect}, {"kept", r.manifest.size()}, {"dropped", r.dropped}});
        manifest = std::move(r.manifest);
    }
    if (!ea.remap.empty()) {
        const ClassMapping mapping = ClassMapping::load(ea.remap);
        manifest = data_step([&] { return remap_classes(manifest, mapping); });
        transforms.push_back({{"remap", ea.remap}, {"classes", manifest.classes}});
    }
    if (ea.test_part) {
        if (!manifest.has_folds()) {
            throw IntegrityError("--test-part needs a manifest with fold assignments");
        }
        manifest = manifest.select_parts({kTestPart});
    }

    std::vector<Models> models;
    std::vector<std::string> names;
    ordered_json ckpts = ordered_json::array();
    for (std::size_t i = 0; i < ea.checkpoints.size(); ++i) {
        ordered_json cm;
        models.push_back(load_checkpoint(ea.checkpoints[i], &cm));
        names.push_back(fmt::format("model{}", i));
        ckpts.push_back({{"name", names.back()}, {"path", ea.checkpoints[i]}, {"metadata", cm}});
    }
    for (const auto& m : models) {
        if (m.config().classes != manifest.classes) {
            throw VocabularyMismatch(m.config().classes, manifest.classes);
        }
    }
    const fs::path dir = make_run_dir(ra.run_dir, ra.runs_root, config.sampler.seed);
    ordered_json meta = base_metadata("eval", config);
    meta.erase("config");
    meta["sampler"] = config.sampler;
    meta["preprocess"] = {{"mean", config.preprocess.mean}, {"std", config.preprocess.std}};
    meta["checkpoints"] = ckpts;
    meta["transforms"] = transforms;
    meta["datasets"] = ordered_json::array({dataset_entry("eval", ma.manifest, manifest)});
    write_json(dir / "metadata.json", meta);

    std::vector<const Models*> ptrs;
    for (const auto& m : models) {
        ptrs.push_back(&m);
    }
    BatchOptions opts;
    opts.preprocess = config.preprocess;
    opts.fail_fast = ea.fail_fast;
    std::vector<RunPredictions> preds;
    const EvalReport report = evaluate_models(ptrs, names, manifest, config.sampler, opts, &preds);
    for (const auto& p : preds) {
        write_predictions(dir / ("predictions_" + p.name + ".csv"), p.rows, manifest.classes);
    }
    report.write(dir / "report");
    fmt::print("{}", report.summary());
    fmt::print("report -> {}\n", (dir / "report").string());
    std::size_t failed = 0;
    for (const auto& p : preds) {
        for (const auto& r : p.rows) {
            failed += r.error.has_value();
        }
    }
    if (failed > 0) {
        fmt::print(stderr, "error: {} record evaluation(s) failed; see predictions files\n", failed);
        return kData;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"diffclass: diffusion-based image classification harness"};
    app.require_subcommand(1);
    app.set_version_flag("--version", DIFFCLASS_VERSION);
    app.add_flag("-q,--quiet", g_quiet, "suppress progress output");

    PrepareArgs pa;
    auto* prepare = app.add_subcommand("prepare", "build a canonical manifest and six-way split");
    prepare->add_option("--toy", pa.toy, "synthetic data: C=3 n=200 size=32 seed=7 noise=1 out=DIR")
        ->expected(0, -1);
    prepare->add_option("--adapter", pa.adapter, "adapter config (JSON) for a source metadata CSV");
    prepare->add_option("--metadata", pa.metadata, "source metadata CSV (overrides the adapter's)");
    prepare->add_option("--image-root", pa.image_root, "source image directory (overrides the adapter's)");
    prepare->add_option("--out", pa.out, "output directory");
    prepare->add_option("--seed", pa.seed, "split seed (toy default: the toy seed)");
    prepare->add_flag("--no-stratify", pa.no_stratify, "split without per-class stratification");

    ManifestArgs train_ma;
    ConfigArgs train_ca;
    RunArgs train_ra;
    int fold = 0;
    auto* train_cmd = app.add_subcommand("train", "train one fold model");
    add_manifest_options(train_cmd, train_ma);
    train_cmd->add_option("--remap", train_ma.remap, "class mapping (JSON) applied before training");
    train_cmd->add_option("--fold", fold, "held-out fold 0..4")->required()->check(CLI::Range(0, kFoldCount - 1));
    add_config_options(train_cmd, train_ca, true);
    add_run_options(train_cmd, train_ra);

    ManifestArgs cv_ma;
    ConfigArgs cv_ca;
    RunArgs cv_ra;
    auto* cv_cmd = app.add_subcommand("crossval", "train 5 fold models and report on the test sixth");
    add_manifest_options(cv_cmd, cv_ma);
    cv_cmd->add_option("--remap", cv_ma.remap, "class mapping (JSON) applied before splitting");
    add_config_options(cv_cmd, cv_ca, true);
    add_run_options(cv_cmd, cv_ra);

    ManifestArgs ev_ma;
    ConfigArgs ev_ca;
    RunArgs ev_ra;
    EvalArgs ea;
    auto* ev_cmd = app.add_subcommand("eval", "evaluate checkpoints on a manifest");
    add_manifest_options(ev_cmd, ev_ma);
    ev_cmd->add_option("--checkpoint", ea.checkpoints, "checkpoint file (repeatable)")->required();
    ev_cmd->add_option("--remap", ea.remap, "class mapping (JSON) applied to the manifest");
    ev_cmd->add_option("--intersect", ea.intersect, "vocabulary (JSON) to restrict the manifest to");
    ev_cmd->add_flag("--test-part", ea.test_part, "evaluate only the held-out test sixth");
    ev_cmd->add_flag("--fail-fast", ea.fail_fast, "stop at the first unreadable record");
    add_config_options(ev_cmd, ev_ca, false);
    add_run_options(ev_cmd, ev_ra);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        train_ma.split_seed_set = train_cmd->count("--split-seed") > 0;
        cv_ma.split_seed_set = cv_cmd->count("--split-seed") > 0;
        if (*prepare) {
            return cmd_prepare(pa, prepare->count("--toy") > 0);
        }
        if (*train_cmd) {
            return cmd_train(train_ma, train_ca, train_ra, fold);
        }
        if (*cv_cmd) {
            return cmd_crossval(cv_ma, cv_ca, cv_ra);
        }
        if (*ev_cmd) {
            return cmd_eval(ev_ma, ev_ca, ea, ev_ra);
        }
    } catch (const UsageError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kUsage;
    } catch (const VocabularyMismatch& e) {
        fmt::print(stderr, "error: vocabulary mismatch\n  checkpoint: {}\n  manifest:   {}\n",
                   fmt::join(e.model_classes(), ", "), fmt::join(e.manifest_classes(), ", "));
        return kData;
    } catch (const DataError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kData;
    } catch (const InvalidState& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kData;
    } catch (const NumericFailure& e) {
        fmt::print(stderr, "numeric failure: {}\n", e.what());
        return kNumeric;
    } catch (const std::invalid_argument& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kData;
    }
    return kUsage;
}
