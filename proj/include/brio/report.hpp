#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace brio::report {

inline constexpr std::string_view kVersion = "brio " BRIO_VERSION;

using Cell = std::variant<std::string, double, std::int64_t>;

struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;

    void add_row(std::vector<Cell> row);
};

struct Report {
    std::string kind;
    std::string config;  // resolved configuration text
    std::vector<Table> tables;
    std::vector<std::string> notes;

    Table& table(const std::string& name, std::vector<std::string> columns);
    const Table& find(const std::string& name) const;
};

/// Pretty-printed JSON with sorted keys. Doubles use the shortest
/// round-trip form; non-finite values become null.
std::string to_json(const Report& r);
Report from_json(const std::string& text);
/// Aligned plain-text rendering, doubles to 4 decimals.
std::string to_text(const Report& r);

/// Writes <stem>.json and <stem>.txt under dir.
void write(const std::filesystem::path& dir, const std::string& stem, const Report& r);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace brio::report
