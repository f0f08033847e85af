#include "armt/panel_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "armt/error.hpp"

namespace armt {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

} // namespace

std::vector<std::string> split_row(std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

SeriesPanel read_panel(std::istream& in, int min_length) {
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::pair<int, double>>> rows;

    while (std::getline(in, line)) {
        ++line_no;
        const auto body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        const auto cells = split_row(body);
        if (!have_header) {
            if (cells.size() != 3 || cells[0] != "unit_id" || cells[1] != "time" || cells[2] != "value") {
                throw InvalidInput(fmt::format("line {}: expected header 'unit_id,time,value'", line_no));
            }
            have_header = true;
            continue;
        }
        if (cells.size() != 3) throw InvalidInput(fmt::format("line {}: expected 3 columns, got {}", line_no, cells.size()));
        int time = 0;
        const auto& ts = cells[1];
        if (auto [p, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), time); ec != std::errc{} || p != ts.data() + ts.size()) {
            throw InvalidInput(fmt::format("line {}: time '{}' is not an integer", line_no, ts));
        }
        double value = 0.0;
        try {
            std::size_t used = 0;
            value = std::stod(cells[2], &used);
            if (used != cells[2].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw InvalidInput(fmt::format("line {}: value '{}' is not a number", line_no, cells[2]));
        }
        auto [it, inserted] = rows.try_emplace(cells[0]);
        if (inserted) order.push_back(cells[0]);
        it->second.emplace_back(time, value);
    }
    if (!have_header) throw InvalidInput("panel input has no header row");

    std::vector<ObservedSeries> series;
    series.reserve(order.size());
    for (const auto& id : order) {
        auto& obs = rows[id];
        std::stable_sort(obs.begin(), obs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        ObservedSeries s;
        s.unit_id = id;
        for (const auto& [t, x] : obs) {
            if (!s.times.empty() && s.times.back() == t) {
                throw InvalidInput(fmt::format("unit '{}' has two observations at time {}", id, t));
            }
            s.times.push_back(t);
            s.values.push_back(x);
        }
        series.push_back(std::move(s));
    }
    return admit_panel(std::move(series), min_length);
}

SeriesPanel read_panel(const std::filesystem::path& path, int min_length) {
    std::ifstream in(path);
    if (!in) throw InvalidInput(fmt::format("cannot open panel file '{}'", path.string()));
    try {
        return read_panel(in, min_length);
    } catch (const InvalidInput& e) {
        throw InvalidInput(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void write_panel(std::ostream& out, const SeriesPanel& panel, const std::vector<std::string>& preamble) {
    for (const auto& line : preamble) fmt::print(out, "# {}\n", line);
    fmt::print(out, "unit_id,time,value\n");
    for (const auto& s : panel.series) {
        for (std::size_t k = 0; k < s.times.size(); ++k) fmt::print(out, "{},{},{}\n", s.unit_id, s.times[k], s.values[k]);
    }
}

} // namespace armt
