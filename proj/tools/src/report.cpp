#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>
#include <sstream>
#include <string>

#include "ugp/errors.hpp"
#include "ugp_cli/commands.hpp"

namespace ugp::cli {

namespace {

std::vector<eval::PairOutcome> read_outcomes(const fs::path &path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open results file " + path.string());
    std::vector<eval::PairOutcome> out;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_number);
        try {
            const auto j = nlohmann::json::parse(line);
            eval::PairOutcome o;
            o.distance_class = j.at("distance_class").get<int>();
            o.estimated = j.at("estimated").get<bool>();
            o.rre = j.at("rre").get<double>();
            o.rte = j.at("rte").get<double>();
            out.push_back(o);
        } catch (const nlohmann::json::exception &e) {
            throw DataError(where + ": " + e.what());
        }
    }
    return out;
}

std::string num(double v) {
    if (!std::isfinite(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::ofstream open_csv(const fs::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

struct Curve {
    std::string label;
    std::vector<std::pair<double, double>> points;  // threshold, recall %
};

void write_svg(const fs::path &path, const std::string &x_label, const std::vector<Curve> &curves) {
    constexpr double W = 480, H = 320, L = 56, R = 16, T = 16, B = 44;
    double x_max = 0.0;
    for (const auto &c : curves)
        for (const auto &[x, y] : c.points) x_max = std::max(x_max, x);
    if (x_max <= 0.0) x_max = 1.0;
    const auto px = [&](double x) { return L + (W - L - R) * x / x_max; };
    const auto py = [&](double y) { return H - B - (H - T - B) * y / 100.0; };
    static const char *colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#000000"};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << W - R << "\" y2=\"" << py(0)
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << L << "\" y2=\"" << py(100)
        << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double y = 25.0 * k;
        out << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << y
            << "</text>\n";
        const double x = x_max * k / 4.0;
        out << "<text x=\"" << px(x) << "\" y=\"" << py(0) + 16 << "\" font-size=\"11\" text-anchor=\"middle\">"
            << num(x).substr(0, 5) << "</text>\n";
    }
    out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 8 << "\" font-size=\"12\" text-anchor=\"middle\">"
        << x_label << "</text>\n";
    out << "<text x=\"14\" y=\"" << (T + H - B) / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << (T + H - B) / 2 << ")\">recall (%)</text>\n";
    for (std::size_t c = 0; c < curves.size(); ++c) {
        const char *color = colors[c % std::size(colors)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto &[x, y] : curves[c].points) out << px(x) << ',' << py(y) << ' ';
        out << "\"/>\n";
        out << "<text x=\"" << W - R - 4 << "\" y=\"" << py(100) + 14 * (c + 1) << "\" font-size=\"11\" fill=\"" << color
            << "\" text-anchor=\"end\">" << curves[c].label << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace

EvalSummary cmd_eval(const EvalOptions &options) {
    if (options.results.empty()) throw InvalidArgument("eval: no results files");
    std::map<int, std::vector<eval::PairOutcome>> by_class;
    std::size_t pairs = 0;
    for (const auto &path : options.results)
        for (auto o : read_outcomes(path)) {
            o.rr_success = o.estimated && eval::rr_success(o.rre, o.rte, options.thresholds);
            by_class[o.distance_class].push_back(o);
            ++pairs;
        }
    if (pairs == 0) throw DataError("eval: results files contain no records");

    EvalSummary summary;
    summary.pairs = pairs;
    summary.recall = eval::rr_and_mrr(by_class);
    std::vector<eval::PairOutcome> all;
    for (const auto &[cls, outcomes] : by_class) {
        summary.errors[cls] = eval::starred_errors(outcomes);
        all.insert(all.end(), outcomes.begin(), outcomes.end());
    }
    const eval::ErrorSummary overall = eval::starred_errors(all);

    std::error_code ec;
    fs::create_directories(options.out, ec);
    if (ec) throw DataError("cannot create directory " + options.out.string());

    auto csv = open_csv(options.out / "summary.csv");
    csv << "class,pairs,RRE,RTE,RRE*,RTE*,RR,mRR\n";
    for (const auto &[cls, outcomes] : by_class) {
        const auto &e = summary.errors.at(cls);
        csv << cls << ',' << outcomes.size() << ',' << num(e.rre) << ',' << num(e.rte) << ',' << num(e.rre_star) << ','
            << num(e.rte_star) << ',' << num(100.0 * summary.recall.per_class.at(cls)) << ",\n";
    }
    csv << "mean," << pairs << ',' << num(overall.rre) << ',' << num(overall.rte) << ',' << num(overall.rre_star) << ','
        << num(overall.rte_star) << ",," << num(100.0 * summary.recall.mrr) << '\n';

    // recall against one threshold while the other stays at its headline value
    auto sweep = open_csv(options.out / "sweep.csv");
    sweep << "axis,threshold,class,recall\n";
    std::vector<Curve> rre_curves, rte_curves;
    for (const bool rotation : {true, false}) {
        auto &curves = rotation ? rre_curves : rte_curves;
        for (const auto &[cls, outcomes] : by_class) curves.push_back({std::to_string(cls) + " m", {}});
        curves.push_back({"mean", {}});
        for (int k = 1; k <= 20; ++k) {
            eval::Thresholds t = options.thresholds;
            double &axis = rotation ? t.rre_deg : t.rte_m;
            axis *= k / 10.0;
            double mean = 0.0;
            std::size_t c = 0;
            for (const auto &[cls, outcomes] : by_class) {
                std::size_t ok = 0;
                for (const auto &o : outcomes) ok += (o.estimated && eval::rr_success(o.rre, o.rte, t)) ? 1 : 0;
                const double recall = 100.0 * static_cast<double>(ok) / static_cast<double>(outcomes.size());
                sweep << (rotation ? "rre" : "rte") << ',' << num(axis) << ',' << cls << ',' << num(recall) << '\n';
                curves[c++].points.emplace_back(axis, recall);
                mean += recall;
            }
            mean /= static_cast<double>(by_class.size());
            sweep << (rotation ? "rre" : "rte") << ',' << num(axis) << ",mean," << num(mean) << '\n';
            curves.back().points.emplace_back(axis, mean);
        }
    }
    if (options.plots) {
        write_svg(options.out / "recall_rre.svg", "RRE threshold (deg)", rre_curves);
        write_svg(options.out / "recall_rte.svg", "RTE threshold (m)", rte_curves);
    }
    spdlog::info("evaluated {} pairs in {} classes, mRR {:.2f}%", pairs, by_class.size(), 100.0 * summary.recall.mrr);
    return summary;
}

}  // namespace ugp::cli
