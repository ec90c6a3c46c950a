#ifndef SCORELAB_IO_HPP
#define SCORELAB_IO_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scorelab {

// All CSV output uses 17 significant digits so files round-trip doubles.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void ensure_parent_dir(const std::string& path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

struct CsvWriter {
    std::ofstream out;

    CsvWriter(const std::string& path, const std::vector<std::string>& header) {
        ensure_parent_dir(path);
        out.open(path);
        if (!out) throw std::runtime_error("cannot open " + path);
        for (std::size_t i = 0; i < header.size(); ++i)
            out << (i ? "," : "") << header[i];
        out << "\n";
    }
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i)
            out << (i ? "," : "") << cells[i];
        out << "\n";
    }
};

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const std::size_t pos = line.find(',', start);
            if (pos == std::string::npos) {
                cells.push_back(line.substr(start));
                break;
            }
            cells.push_back(line.substr(start, pos - start));
            start = pos + 1;
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

// Log-spaced grid helper used by training-time and lambda grids.
inline std::vector<double> log_spaced(double lo, double hi, int n) {
    if (n < 2 || lo <= 0.0 || hi <= lo)
        throw std::invalid_argument("log_spaced needs n >= 2 and 0 < lo < hi");
    std::vector<double> g(n);
    const double l0 = std::log(lo), l1 = std::log(hi);
    for (int i = 0; i < n; ++i)
        g[i] = std::exp(l0 + (l1 - l0) * i / (n - 1));
    return g;
}

} // namespace scorelab

#endif // SCORELAB_IO_HPP
