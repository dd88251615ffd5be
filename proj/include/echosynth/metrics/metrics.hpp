#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "echosynth/volume.hpp"

// Overlap and volume agreement between label volumes, and the mean +- std
// aggregation and table rendering used by the experiment reports.

namespace echosynth::metrics {

inline float dice(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t class_id) {
    check_same_grid(pred.dims, gt.dims, "dice");
    std::int64_t na = 0, nb = 0, inter = 0;
    for (std::size_t i = 0; i < pred.classes.size(); ++i) {
        const bool a = pred.classes[i] == class_id;
        const bool b = gt.classes[i] == class_id;
        na += a;
        nb += b;
        inter += a && b;
    }
    if (na + nb == 0) return 1.0f;
    return static_cast<float>(2.0 * static_cast<double>(inter) / static_cast<double>(na + nb));
}

// 1 - ||A| - |B|| / (|A| + |B|) counted over the union of the given classes;
// position-blind by construction.
inline float volume_similarity(const LabelVolume& pred, const LabelVolume& gt,
                               const std::vector<std::uint8_t>& class_set) {
    check_same_grid(pred.dims, gt.dims, "volume_similarity");
    if (class_set.empty()) throw std::invalid_argument("volume_similarity: class_set is empty");
    std::array<bool, 256> member{};
    for (std::uint8_t c : class_set) member[c] = true;
    std::int64_t na = 0, nb = 0;
    for (std::size_t i = 0; i < pred.classes.size(); ++i) {
        na += member[pred.classes[i]];
        nb += member[gt.classes[i]];
    }
    if (na + nb == 0) return 1.0f;
    const std::int64_t diff = na > nb ? na - nb : nb - na;
    return static_cast<float>(1.0 - static_cast<double>(diff) / static_cast<double>(na + nb));
}

struct Aggregate {
    double mean;
    double stddev;  // population convention, divide by n
};

inline Aggregate aggregate(const std::vector<float>& xs) {
    if (xs.empty()) throw std::invalid_argument("aggregate: empty score list");
    double mean = 0.0;
    for (float x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (float x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

inline std::string format_mean_std(double mean, double stddev) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f ± %.3f", mean, stddev);
    return buf;
}

struct StructureScore {
    std::string case_id;
    std::uint8_t structure;
    float dice;
    std::optional<float> vs;
};

struct AggregateRow {
    std::string model;
    std::string structure;  // "LV", "LA", "MYO", or "Heart Volume" for the volume-similarity row
    double mean;
    double stddev;
    int n;
};

enum class TableLayout { validation, test };

// Renders one column per model and one row per structure, cells formatted as
// "mean ± std" with the best mean per row starred. The test layout requires a
// "Heart Volume" row, which reports volume similarity over all structures
// together.
inline std::string report_tables(const std::vector<AggregateRow>& rows, TableLayout layout) {
    if (rows.empty()) throw std::invalid_argument("report_tables: no rows");

    std::vector<std::string> models;
    for (const auto& r : rows) {
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    }

    const std::array<std::string, 4> canonical = {"LV", "LA", "MYO", "Heart Volume"};
    std::vector<std::string> labels;
    for (const auto& c : canonical) {
        for (const auto& r : rows) {
            if (r.structure == c) {
                labels.push_back(c);
                break;
            }
        }
    }
    for (const auto& r : rows) {
        if (std::find(labels.begin(), labels.end(), r.structure) == labels.end()) {
            labels.push_back(r.structure);
        }
    }
    if (layout == TableLayout::test &&
        std::find(labels.begin(), labels.end(), "Heart Volume") == labels.end()) {
        throw std::invalid_argument("report_tables: test layout requires a 'Heart Volume' row");
    }

    auto find_cell = [&](const std::string& label, const std::string& model) -> const AggregateRow& {
        for (const auto& r : rows) {
            if (r.structure == label && r.model == model) return r;
        }
        throw std::invalid_argument("report_tables: missing cell for model '" + model + "', row '" +
                                    label + "'");
    };

    // cells[row][col]; col 0 is the row label
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"Structure"};
    for (const auto& m : models) header.push_back(m);
    cells.push_back(header);
    for (const auto& label : labels) {
        std::vector<std::string> line{label};
        double best = -1.0;
        for (const auto& m : models) best = std::max(best, find_cell(label, m).mean);
        for (const auto& m : models) {
            const auto& r = find_cell(label, m);
            std::string cell = format_mean_std(r.mean, r.stddev);
            if (r.mean == best) cell += " *";
            line.push_back(std::move(cell));
        }
        cells.push_back(std::move(line));
    }

    // column widths in display characters; the ± glyph is 2 bytes in UTF-8
    auto display_width = [](const std::string& s) {
        std::size_t w = 0;
        for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
        return w;
    };
    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& line : cells) {
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], display_width(line[c]));
    }

    std::string out;
    for (std::size_t li = 0; li < cells.size(); ++li) {
        const auto& line = cells[li];
        for (std::size_t c = 0; c < line.size(); ++c) {
            out += line[c];
            if (c + 1 < line.size()) {
                out.append(width[c] - display_width(line[c]), ' ');
                out += "  ";
            }
        }
        out += '\n';
        if (li == 0) {
            std::size_t total = 0;
            for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c + 1 < width.size() ? 2 : 0);
            out.append(total, '-');
            out += '\n';
        }
    }
    return out;
}

inline void save_scores_csv(const std::filesystem::path& path, const std::vector<StructureScore>& scores) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_scores_csv: cannot open " + path.string());
    f << "case,structure,dice,vs\n";
    char buf[160];
    for (const auto& s : scores) {
        if (s.vs.has_value()) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g\n", s.case_id.c_str(),
                          class_name(s.structure), static_cast<double>(s.dice),
                          static_cast<double>(*s.vs));
        } else {
            std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,\n", s.case_id.c_str(), class_name(s.structure),
                          static_cast<double>(s.dice));
        }
        f << buf;
    }
    if (!f.good()) throw std::runtime_error("save_scores_csv: write failed for " + path.string());
}

inline void save_aggregates_csv(const std::filesystem::path& path, const std::vector<AggregateRow>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_aggregates_csv: cannot open " + path.string());
    f << "model,structure,mean,std,n\n";
    char buf[200];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g,%d\n", r.model.c_str(), r.structure.c_str(),
                      r.mean, r.stddev, r.n);
        f << buf;
    }
    if (!f.good()) throw std::runtime_error("save_aggregates_csv: write failed for " + path.string());
}

inline std::vector<AggregateRow> load_aggregates_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_aggregates_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line) || line != "model,structure,mean,std,n") {
        throw std::runtime_error("load_aggregates_csv: unexpected header in " + path.string());
    }
    std::vector<AggregateRow> rows;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::array<std::string, 5> fields;
        std::size_t start = 0;
        for (int i = 0; i < 4; ++i) {
            const std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                throw std::runtime_error("load_aggregates_csv: malformed line " + std::to_string(lineno) +
                                         " in " + path.string());
            }
            fields[static_cast<std::size_t>(i)] = line.substr(start, comma - start);
            start = comma + 1;
        }
        fields[4] = line.substr(start);
        try {
            rows.push_back({fields[0], fields[1], std::stod(fields[2]), std::stod(fields[3]),
                            std::stoi(fields[4])});
        } catch (const std::exception&) {
            throw std::runtime_error("load_aggregates_csv: malformed line " + std::to_string(lineno) + " in " +
                                     path.string());
        }
    }
    return rows;
}

}  // namespace echosynth::metrics
