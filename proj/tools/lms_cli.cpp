// lms: batch driver for label merge-and-split.
//
//   lms [--config cfg.json] [--out DIR] [--threads N] <subcommand> [options]
//
// Subcommands: support, plan, merge, influence, split, evaluate, sweep,
// phantom, perturb. Exit codes: 0 success, 2 input/validation error,
// 1 internal error. Failures print one JSON line on stderr.

#include "lms/lms.hpp"

#include "CLI11.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace lms;

namespace {

constexpr int config_version = 1;

struct PipelineConfig {
    std::vector<std::string> training;
    std::vector<std::string> predictions;
    std::vector<std::string> ground_truth;
    fs::path output_dir = "lms_out";
    fs::path support_dir;   // default <out>/support
    fs::path plan_path;     // default <out>/merge_plan.json
    fs::path influence_dir; // default <out>/influence
    double delta_d_mm = 10.0;
    double delta_v = 3.5;
    std::vector<Label> pins;
    Label background = 0;
    unsigned threads = 0;
    std::uint64_t seed = 0;
    std::vector<double> delta_d_list;
    std::vector<double> delta_v_list;
    nlohmann::json phantom = nlohmann::json::object();
    std::string perturb_kind = "boundary_jitter";
    unsigned perturb_radius = 1;

    fs::path support() const { return support_dir.empty() ? output_dir / "support" : support_dir; }
    fs::path plan() const { return plan_path.empty() ? output_dir / "merge_plan.json" : plan_path; }
    fs::path influence() const { return influence_dir.empty() ? output_dir / "influence" : influence_dir; }
};

void apply_config_file(PipelineConfig& c, const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::io, "cannot open config " + path.string());
    try {
        auto j = nlohmann::json::parse(in);
        if (j.value("version", config_version) != config_version)
            throw Error(ErrorKind::format, path.string() + ": unsupported config version");
        c.training = j.value("training", c.training);
        c.predictions = j.value("predictions", c.predictions);
        c.ground_truth = j.value("ground_truth", c.ground_truth);
        c.output_dir = j.value("output_dir", c.output_dir.string());
        c.support_dir = j.value("support_dir", c.support_dir.string());
        c.plan_path = j.value("plan", c.plan_path.string());
        c.influence_dir = j.value("influence_dir", c.influence_dir.string());
        c.delta_d_mm = j.value("delta_d_mm", c.delta_d_mm);
        c.delta_v = j.value("delta_v", c.delta_v);
        c.pins = j.value("pins", c.pins);
        c.background = j.value("background", c.background);
        c.threads = j.value("threads", c.threads);
        c.seed = j.value("seed", c.seed);
        c.delta_d_list = j.value("delta_d_list", c.delta_d_list);
        c.delta_v_list = j.value("delta_v_list", c.delta_v_list);
        c.phantom = j.value("phantom", c.phantom);
        c.perturb_kind = j.value("perturb_kind", c.perturb_kind);
        c.perturb_radius = j.value("perturb_radius", c.perturb_radius);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, path.string() + ": " + e.what());
    }
}

bool is_nifti(const fs::path& p)
{
    auto s = p.filename().string();
    return s.ends_with(".nii") || s.ends_with(".nii.gz");
}

std::string stem_of(const fs::path& p)
{
    auto s = p.filename().string();
    for (auto ext : {".nii.gz", ".nii"})
        if (s.ends_with(ext))
            return s.substr(0, s.size() - std::string(ext).size());
    return s;
}

/// Directories expand to their NIfTI files in name order; files pass through.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& entries, const std::string& what)
{
    if (entries.empty())
        throw Error(ErrorKind::invalid_argument, "no " + what + " inputs given");
    std::vector<fs::path> out;
    for (const auto& e : entries) {
        fs::path p(e);
        if (fs::is_directory(p)) {
            std::vector<fs::path> found;
            for (const auto& f : fs::directory_iterator(p))
                if (f.is_regular_file() && is_nifti(f.path()))
                    found.push_back(f.path());
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else if (fs::is_regular_file(p)) {
            out.push_back(p);
        } else {
            throw Error(ErrorKind::io, what + " input " + e + " does not exist");
        }
    }
    if (out.empty())
        throw Error(ErrorKind::invalid_argument, "no NIfTI files found among " + what + " inputs");
    return out;
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir))
        throw Error(ErrorKind::io, "cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out)
        throw Error(ErrorKind::io, "write failed: " + path.string());
}

void log(const std::string& msg) { std::cerr << "lms: " << msg << '\n'; }

// ---------------------------------------------------------------------------

int cmd_support(const PipelineConfig& c)
{
    auto files = expand_inputs(c.training, "training");
    SupportMapBuilder builder(c.threads);
    for (const auto& f : files)
        builder.add(load_label_volume(f), f.string());
    auto s = builder.finish();
    save_support_map(s, c.support());
    log("support: n_train=" + std::to_string(s.n_train()) + " labels=" + std::to_string(s.label_table().size())
        + " -> " + c.support().string());
    return 0;
}

int cmd_plan(const PipelineConfig& c)
{
    auto s = load_support_map(c.support());
    std::vector<Label> skip{c.background};
    auto d = min_distance_matrix(s, skip, c.threads);
    auto v = volume_ratio_matrix(s);
    MergeParams params{c.delta_d_mm, c.delta_v, c.pins, c.background};
    auto plan = plan_merge(d, v, params, s.training_hash());
    ensure_dir(c.plan().parent_path().empty() ? fs::path(".") : c.plan().parent_path());
    ensure_dir(c.output_dir);
    save_plan(plan, c.plan());
    write_text(c.output_dir / "distance_matrix.csv", to_csv(d));
    write_text(c.output_dir / "ratio_matrix.csv", to_csv(v));
    std::size_t n_ol = s.label_table().size() - (s.contains(c.background) ? 1 : 0);
    log("plan: " + std::to_string(n_ol) + " original labels -> " + std::to_string(plan.merged_count())
        + " merged labels (delta_d=" + nlohmann::json(c.delta_d_mm).dump() + " mm, delta_v=" + nlohmann::json(c.delta_v).dump()
        + ")");
    return 0;
}

int cmd_merge(const PipelineConfig& c)
{
    auto plan = load_plan(c.plan());
    auto files = expand_inputs(c.training, "merge");
    auto dir = c.output_dir / "merged";
    ensure_dir(dir);
    for (const auto& f : files) {
        auto merged = apply_merge(load_label_volume(f), plan, c.threads);
        save_volume(merged, dir / (stem_of(f) + "_merged.nii.gz"));
    }
    log("merge: " + std::to_string(files.size()) + " volumes -> " + dir.string());
    return 0;
}

int cmd_influence(const PipelineConfig& c)
{
    auto plan = load_plan(c.plan());
    auto s = load_support_map(c.support());
    if (!plan.training_hash.empty() && plan.training_hash != s.training_hash())
        throw Error(ErrorKind::digest_mismatch, "merge plan was built from a different training set than "
                                                    + c.support().string());
    auto maps = build_influence_maps(plan, s, c.threads);
    save_influence_maps(maps, plan, c.influence());
    log("influence: " + std::to_string(maps.size()) + " maps -> " + c.influence().string());
    return 0;
}

int cmd_split(const PipelineConfig& c)
{
    auto plan = load_plan(c.plan());
    auto maps = load_influence_maps(c.influence(), plan);
    auto files = expand_inputs(c.predictions, "prediction");
    auto dir = c.output_dir / "split";
    ensure_dir(dir);
    for (const auto& f : files) {
        auto out = split(load_label_volume(f), plan, maps, c.threads);
        auto stem = stem_of(f);
        if (stem.ends_with("_merged"))
            stem.resize(stem.size() - 7);
        save_volume(out, dir / (stem + "_split.nii.gz"));
    }
    log("split: " + std::to_string(files.size()) + " volumes -> " + dir.string());
    return 0;
}

std::string case_key(std::string stem)
{
    for (const std::string suffix : {"_split", "_merged"})
        if (stem.ends_with(suffix))
            stem.resize(stem.size() - suffix.size());
    return stem;
}

int cmd_evaluate(const PipelineConfig& c)
{
    auto preds = expand_inputs(c.predictions, "prediction");
    auto gts = expand_inputs(c.ground_truth, "ground truth");
    std::map<std::string, fs::path> gt_by_case;
    for (const auto& g : gts)
        gt_by_case[case_key(stem_of(g))] = g;

    auto dir = c.output_dir / "metrics";
    ensure_dir(dir);
    nlohmann::ordered_json cases = nlohmann::ordered_json::array();
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& p : preds) {
        auto key = case_key(stem_of(p));
        auto it = gt_by_case.find(key);
        if (it == gt_by_case.end())
            throw Error(ErrorKind::invalid_argument, "no ground truth for prediction " + p.string());
        auto r = report(load_label_volume(p), load_label_volume(it->second), c.background);
        write_text(dir / (key + ".csv"), report_csv(r));
        auto summary = report_summary(r);
        nlohmann::ordered_json entry = {{"case", key}};
        entry.update(summary);
        cases.push_back(entry);
        if (r.mean_dice) {
            sum += *r.mean_dice;
            ++n;
        }
    }
    nlohmann::ordered_json out = {
        {"version", 1},
        {"cases", cases},
        {"mean_of_case_mean_dice", n ? nlohmann::ordered_json(sum / double(n)) : nlohmann::ordered_json(nullptr)},
    };
    write_text(dir / "summary.json", out.dump(2) + "\n");
    log("evaluate: " + std::to_string(preds.size()) + " cases -> " + dir.string());
    return 0;
}

int cmd_sweep(const PipelineConfig& c)
{
    auto s = load_support_map(c.support());
    std::vector<Label> skip{c.background};
    auto d = min_distance_matrix(s, skip, c.threads);
    auto v = volume_ratio_matrix(s);
    auto dd = c.delta_d_list.empty() ? std::vector<double>{c.delta_d_mm} : c.delta_d_list;
    auto dv = c.delta_v_list.empty() ? std::vector<double>{c.delta_v} : c.delta_v_list;
    auto rows = sweep(d, v, dd, dv, c.pins, c.background, c.threads);
    ensure_dir(c.output_dir);
    write_text(c.output_dir / "sweep.csv", sweep_csv(rows));
    log("sweep: " + std::to_string(rows.size()) + " combinations -> " + (c.output_dir / "sweep.csv").string());
    return 0;
}

int cmd_phantom(const PipelineConfig& c)
{
    auto cfg = phantom_config_from_json(c.phantom);
    if (!c.phantom.contains("seed"))
        cfg.seed = c.seed;
    auto p = generate_phantom(cfg, c.threads);
    auto dir = c.output_dir / "phantom";
    ensure_dir(dir / "train");
    for (std::size_t i = 0; i < p.training.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "subject_%03zu.nii.gz", i);
        save_volume(p.training[i], dir / "train" / name);
    }
    nlohmann::ordered_json meta = {{"version", 1}, {"config", to_json(cfg)}, {"truth", to_json(p.truth)}};
    write_text(dir / "metadata.json", meta.dump(2) + "\n");
    log("phantom: " + std::to_string(p.training.size()) + " subjects -> " + dir.string());
    return 0;
}

int cmd_perturb(const PipelineConfig& c)
{
    PerturbKind kind;
    try {
        kind = nlohmann::json(c.perturb_kind).get<PerturbKind>();
    } catch (const nlohmann::json::exception&) {
        throw Error(ErrorKind::invalid_argument, "unknown perturbation kind " + c.perturb_kind);
    }
    if (nlohmann::json(kind).get<std::string>() != c.perturb_kind)
        throw Error(ErrorKind::invalid_argument, "unknown perturbation kind " + c.perturb_kind);
    auto files = expand_inputs(c.predictions, "perturb");
    auto dir = c.output_dir / "perturbed";
    ensure_dir(dir);
    for (std::size_t i = 0; i < files.size(); ++i) {
        auto out = perturb(load_label_volume(files[i]), kind, c.perturb_radius, c.seed + i, c.background);
        save_volume(out, dir / (stem_of(files[i]) + ".nii.gz"));
    }
    log("perturb: " + std::to_string(files.size()) + " volumes -> " + dir.string());
    return 0;
}

void print_error(std::string_view kind, const std::string& message)
{
    std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Label merge-and-split for high label-count segmentation volumes"};
    app.require_subcommand(1);

    std::optional<std::string> config_path, out_dir, support_dir, plan_path, influence_dir, perturb_kind;
    std::optional<unsigned> threads, perturb_radius;
    std::optional<double> delta_d, delta_v;
    std::optional<Label> background;
    std::optional<std::uint64_t> seed;
    std::vector<Label> pins;
    std::vector<std::string> training, predictions, ground_truth;
    std::vector<double> delta_d_list, delta_v_list;
    std::optional<std::string> phantom_layout;

    app.add_option("--config", config_path, "Pipeline config (JSON)");
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--threads", threads, "Worker threads (0 = all cores)");
    app.add_option("--background", background, "Background label ID");
    app.add_option("--seed", seed, "RNG seed");
    app.add_option("--support", support_dir, "Support bundle directory");
    app.add_option("--plan", plan_path, "Merge plan JSON");
    app.add_option("--influence", influence_dir, "Influence map directory");
    app.add_option("--delta-d", delta_d, "Distance threshold (mm)");
    app.add_option("--delta-v", delta_v, "Volume ratio threshold");
    app.add_option("--pin", pins, "Labels that must stay unmerged")->delimiter(',');
    app.fallthrough();

    auto* support = app.add_subcommand("support", "Build the label support map from training segmentations");
    support->add_option("inputs,--train", training, "Training label volumes or directories");

    auto* plan = app.add_subcommand("plan", "Distance/ratio matrices, graph colouring and merge plan");
    auto* merge = app.add_subcommand("merge", "Relabel volumes through a merge plan");
    merge->add_option("inputs", training, "Label volumes or directories to merge");

    auto* influence = app.add_subcommand("influence", "Build influence region maps for a merge plan");

    auto* split_cmd = app.add_subcommand("split", "Recover original labels from merged predictions");
    split_cmd->add_option("inputs,--pred", predictions, "Merged predictions or directories");

    auto* evaluate = app.add_subcommand("evaluate", "Per-label Dice and relative volume error");
    evaluate->add_option("--pred", predictions, "Predictions or directory");
    evaluate->add_option("--gt", ground_truth, "Ground truths or directory");

    auto* sweep_cmd = app.add_subcommand("sweep", "Merged label count over a grid of thresholds");
    sweep_cmd->add_option("--delta-d-list", delta_d_list, "Distance thresholds (mm)")->delimiter(',');
    sweep_cmd->add_option("--delta-v-list", delta_v_list, "Volume ratio thresholds")->delimiter(',');

    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom training set");
    phantom->add_option("--layout", phantom_layout, "Phantom layout (JSON file)");

    auto* perturb_cmd = app.add_subcommand("perturb", "Morphologically perturb label volumes");
    perturb_cmd->add_option("inputs", predictions, "Label volumes or directories");
    perturb_cmd->add_option("--kind", perturb_kind, "dilate | erode | boundary_jitter");
    perturb_cmd->add_option("--radius", perturb_radius, "Iterations (voxels)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return 2;
    }

    try {
        PipelineConfig c;
        if (config_path)
            apply_config_file(c, *config_path);
        if (out_dir)
            c.output_dir = *out_dir;
        if (support_dir)
            c.support_dir = *support_dir;
        if (plan_path)
            c.plan_path = *plan_path;
        if (influence_dir)
            c.influence_dir = *influence_dir;
        if (threads)
            c.threads = *threads;
        if (background)
            c.background = *background;
        if (seed)
            c.seed = *seed;
        if (delta_d)
            c.delta_d_mm = *delta_d;
        if (delta_v)
            c.delta_v = *delta_v;
        if (!pins.empty())
            c.pins = pins;
        if (!training.empty())
            c.training = training;
        if (!predictions.empty())
            c.predictions = predictions;
        if (!ground_truth.empty())
            c.ground_truth = ground_truth;
        if (!delta_d_list.empty())
            c.delta_d_list = delta_d_list;
        if (!delta_v_list.empty())
            c.delta_v_list = delta_v_list;
        if (perturb_kind)
            c.perturb_kind = *perturb_kind;
        if (perturb_radius)
            c.perturb_radius = *perturb_radius;
        if (phantom_layout) {
            std::ifstream in(*phantom_layout);
            if (!in)
                throw Error(ErrorKind::io, "cannot open phantom cfg " + *phantom_layout);
            try {
                c.phantom = nlohmann::json::parse(in);
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorKind::format, *phantom_layout + ": " + e.what());
            }
        }

        if (*support)
            return cmd_support(c);
        if (*plan)
            return cmd_plan(c);
        if (*merge)
            return cmd_merge(c);
        if (*influence)
            return cmd_influence(c);
        if (*split_cmd)
            return cmd_split(c);
        if (*evaluate)
            return cmd_evaluate(c);
        if (*sweep_cmd)
            return cmd_sweep(c);
        if (*phantom)
            return cmd_phantom(c);
        if (*perturb_cmd)
            return cmd_perturb(c);
        return 2;
    } catch (const Error& e) {
        print_error(to_string(e.kind()), e.what());
        return 2;
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        return 1;
    }
}
