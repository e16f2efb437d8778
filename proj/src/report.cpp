#include "brio/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "brio/common.hpp"
#include "json.hpp"

namespace brio::report {

using nlohmann::json;

void Table::add_row(std::vector<Cell> row) {
    if (row.size() != columns.size()) {
        throw Error("report table '" + name + "': row has " + std::to_string(row.size()) + " cells, expected " +
                    std::to_string(columns.size()));
    }
    rows.push_back(std::move(row));
}

Table& Report::table(const std::string& name, std::vector<std::string> columns) {
    tables.push_back({name, std::move(columns), {}});
    return tables.back();
}

const Table& Report::find(const std::string& name) const {
    for (const auto& t : tables) {
        if (t.name == name) return t;
    }
    throw Error("report has no table '" + name + "'");
}

namespace {

json cell_json(const Cell& c) {
    if (const auto* s = std::get_if<std::string>(&c)) return *s;
    if (const auto* i = std::get_if<std::int64_t>(&c)) return *i;
    const double d = std::get<double>(c);
    if (!std::isfinite(d)) return nullptr;
    return d;
}

Cell json_cell(const json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number_integer()) return j.get<std::int64_t>();
    if (j.is_null()) return std::nan("");
    return j.get<double>();
}

std::string cell_text(const Cell& c) {
    if (const auto* s = std::get_if<std::string>(&c)) return *s;
    if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
    const double d = std::get<double>(c);
    if (std::isnan(d)) return "nan";
    if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", d);
    return buf;
}

}  // namespace

std::string to_json(const Report& r) {
    json tables = json::array();
    for (const auto& t : r.tables) {
        json rows = json::array();
        for (const auto& row : t.rows) {
            json jr = json::array();
            for (const auto& c : row) jr.push_back(cell_json(c));
            rows.push_back(std::move(jr));
        }
        tables.push_back({{"name", t.name}, {"columns", t.columns}, {"rows", std::move(rows)}});
    }
    json j{{"kind", r.kind},
           {"version", std::string(kVersion)},
           {"config", r.config},
           {"tables", std::move(tables)},
           {"notes", r.notes}};
    return j.dump(2) + "\n";
}

Report from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        Report r;
        r.kind = j.at("kind").get<std::string>();
        r.config = j.at("config").get<std::string>();
        r.notes = j.at("notes").get<std::vector<std::string>>();
        for (const auto& jt : j.at("tables")) {
            Table& t = r.table(jt.at("name").get<std::string>(), jt.at("columns").get<std::vector<std::string>>());
            for (const auto& jr : jt.at("rows")) {
                std::vector<Cell> row;
                for (const auto& c : jr) row.push_back(json_cell(c));
                t.add_row(std::move(row));
            }
        }
        return r;
    } catch (const json::exception& e) {
        throw Error(std::string("malformed report: ") + e.what());
    }
}

std::string to_text(const Report& r) {
    std::ostringstream out;
    out << "# " << r.kind << " (" << kVersion << ")\n";
    for (const auto& t : r.tables) {
        out << "\n## " << t.name << "\n";
        std::vector<std::size_t> width(t.columns.size());
        std::vector<std::vector<std::string>> cells;
        for (std::size_t c = 0; c < t.columns.size(); ++c) width[c] = t.columns[c].size();
        for (const auto& row : t.rows) {
            std::vector<std::string> line;
            for (std::size_t c = 0; c < row.size(); ++c) {
                line.push_back(cell_text(row[c]));
                width[c] = std::max(width[c], line.back().size());
            }
            cells.push_back(std::move(line));
        }
        auto emit = [&](const std::vector<std::string>& line) {
            for (std::size_t c = 0; c < line.size(); ++c) {
                out << (c ? "  " : "") << line[c] << std::string(width[c] - line[c].size(), ' ');
            }
            out << "\n";
        };
        emit(t.columns);
        for (const auto& line : cells) emit(line);
    }
    if (!r.notes.empty()) {
        out << "\n";
        for (const auto& n : r.notes) out << "note: " << n << "\n";
    }
    return out.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write(const std::filesystem::path& dir, const std::string& stem, const Report& r) {
    write_text_file(dir / (stem + ".json"), to_json(r));
    write_text_file(dir / (stem + ".txt"), to_text(r));
}

}  // namespace brio::report
