#pragma once

#include "lms/error.hpp"
#include "lms/volume.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lms {

inline std::optional<double> dice(const LabelVolume& pred, const LabelVolume& gt, Label label)
{
    require_compatible(gt.meta(), pred.meta(), "prediction");
    std::size_t a = 0, b = 0, both = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        bool in_a = pred[i] == label, in_b = gt[i] == label;
        a += in_a;
        b += in_b;
        both += in_a && in_b;
    }
    if (a + b == 0)
        return std::nullopt;
    return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

/// Signed (|pred| - |gt|) / |gt|; undefined for an empty ground truth.
inline std::optional<double> relative_volume_error(const LabelVolume& pred, const LabelVolume& gt, Label label)
{
    require_compatible(gt.meta(), pred.meta(), "prediction");
    std::size_t a = 0, b = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        a += pred[i] == label;
        b += gt[i] == label;
    }
    if (b == 0)
        return std::nullopt;
    return (static_cast<double>(a) - static_cast<double>(b)) / static_cast<double>(b);
}

struct MetricsRow {
    Label label;
    std::optional<double> dice;
    std::optional<double> rel_vol_err;
    std::size_t gt_voxels;
    std::size_t pred_voxels;
};

struct MetricsReport {
    std::vector<MetricsRow> rows; // ascending label
    /// Mean dice over labels present in the ground truth; undefined if none.
    std::optional<double> mean_dice;
};

/// One tally pass over the voxels, then per-label metrics for every label in
/// either volume except background.
inline MetricsReport report(const LabelVolume& pred, const LabelVolume& gt, Label background = 0)
{
    require_compatible(gt.meta(), pred.meta(), "prediction");
    struct Tally {
        std::size_t pred = 0, gt = 0, both = 0;
    };
    std::map<Label, Tally> tally;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        ++tally[pred[i]].pred;
        ++tally[gt[i]].gt;
        if (pred[i] == gt[i])
            ++tally[gt[i]].both;
    }

    MetricsReport r;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [label, t] : tally) {
        if (label == background)
            continue;
        MetricsRow row{label, std::nullopt, std::nullopt, t.gt, t.pred};
        if (t.gt + t.pred > 0)
            row.dice = 2.0 * static_cast<double>(t.both) / static_cast<double>(t.gt + t.pred);
        if (t.gt > 0) {
            row.rel_vol_err = (static_cast<double>(t.pred) - static_cast<double>(t.gt)) / static_cast<double>(t.gt);
            sum += *row.dice;
            ++n;
        }
        r.rows.push_back(row);
    }
    if (n > 0)
        r.mean_dice = sum / static_cast<double>(n);
    return r;
}

inline std::string report_csv(const MetricsReport& r)
{
    std::string out = "label_id,dice,rel_vol_err,gt_voxels,pred_voxels\n";
    char buf[64];
    auto cell = [&](const std::optional<double>& v) -> std::string {
        if (!v)
            return "";
        std::snprintf(buf, sizeof buf, "%.6f", *v);
        return buf;
    };
    for (const auto& row : r.rows)
        out += std::to_string(row.label) + "," + cell(row.dice) + "," + cell(row.rel_vol_err) + ","
            + std::to_string(row.gt_voxels) + "," + std::to_string(row.pred_voxels) + "\n";
    return out;
}

inline nlohmann::ordered_json report_summary(const MetricsReport& r)
{
    std::size_t defined = 0;
    for (const auto& row : r.rows)
        defined += row.gt_voxels > 0;
    return {
        {"mean_dice", r.mean_dice ? nlohmann::ordered_json(*r.mean_dice) : nlohmann::ordered_json(nullptr)},
        {"labels_in_gt", defined},
        {"labels_reported", r.rows.size()},
        {"rel_vol_err_definition", "(pred_voxels - gt_voxels) / gt_voxels"},
        {"mean_definition", "mean dice over labels present in ground truth, background excluded"},
    };
}

} // namespace lms
