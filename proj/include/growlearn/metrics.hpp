// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cstdio>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "growlearn/error.hpp"

namespace growlearn {

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

/// Metric value rounded to 12 significant digits for display, so that
/// 0.8 - 0.9 prints as -0.1.
inline std::string format_metric(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    std::string out(buf);
    return out == "-0" ? "0" : out;
}

inline std::optional<double> parse_double(std::string_view s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

/// T x T accuracy matrix. R(i, j) is the test accuracy on dataset j after
/// training through dataset i (0-based). Entries with j <= i are the usual
/// lower triangle; R(i, i + 1) is the forward probe. `b_bar(i)` is the
/// accuracy of an untrained model on dataset i. Entries are write-once.
class ResultMatrix {
public:
    explicit ResultMatrix(std::size_t tasks = 0) : t_(tasks), r_(tasks * tasks), b_(tasks) {}

    [[nodiscard]] std::size_t tasks() const noexcept { return t_; }

    void record(std::size_t i, std::size_t j, double accuracy) {
        check_accuracy(accuracy);
        if (i >= t_ || j >= t_ || j > i + 1)
            throw InputError("result entry (" + std::to_string(i) + ", " + std::to_string(j) + ") outside the " +
                             std::to_string(t_) + "-task structure");
        auto& slot = r_[i * t_ + j];
        if (slot) throw StateError("result entry (" + std::to_string(i) + ", " + std::to_string(j) + ") already recorded");
        slot = accuracy;
    }

    void record_baseline(std::size_t i, double accuracy) {
        check_accuracy(accuracy);
        if (i >= t_) throw InputError("baseline index " + std::to_string(i) + " out of range");
        if (b_[i]) throw StateError("baseline " + std::to_string(i) + " already recorded");
        b_[i] = accuracy;
    }

    [[nodiscard]] std::optional<double> at(std::size_t i, std::size_t j) const {
        if (i >= t_ || j >= t_) throw InputError("result entry out of range");
        return r_[i * t_ + j];
    }

    [[nodiscard]] std::optional<double> baseline(std::size_t i) const {
        if (i >= t_) throw InputError("baseline index out of range");
        return b_[i];
    }

    [[nodiscard]] double require(std::size_t i, std::size_t j) const {
        const auto v = at(i, j);
        if (!v) throw StateError("result entry (" + std::to_string(i) + ", " + std::to_string(j) + ") missing");
        return *v;
    }

    [[nodiscard]] bool row_complete(std::size_t i) const {
        for (std::size_t j = 0; j <= i && j < t_; ++j)
            if (!r_[i * t_ + j]) return false;
        return true;
    }

private:
    static void check_accuracy(double a) {
        if (!(a >= 0.0 && a <= 1.0)) throw InputError("accuracy " + format_double(a) + " outside [0, 1]");
    }

    std::size_t t_;
    std::vector<std::optional<double>> r_;
    std::vector<std::optional<double>> b_;
};

class UndefinedMetric : public StateError {
    using StateError::StateError;
};

/// Average accuracy over all datasets after the last one: (1/T) sum_i R(T, i).
inline double aac(const ResultMatrix& r) {
    const std::size_t t = r.tasks();
    if (t == 0) throw UndefinedMetric("average accuracy of an empty result matrix");
    double s = 0.0;
    for (std::size_t i = 0; i < t; ++i) s += r.require(t - 1, i);
    return s / static_cast<double>(t);
}

/// Backward transfer: (1/(T-1)) sum_{i<T} (R(T, i) - R(i, i)).
inline double bwt(const ResultMatrix& r) {
    const std::size_t t = r.tasks();
    if (t < 2) throw UndefinedMetric("backward transfer needs at least two datasets");
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < t; ++i) s += r.require(t - 1, i) - r.require(i, i);
    return s / static_cast<double>(t - 1);
}

enum class FwtBounds {
    /// sum over i = 2..T (1-based)
    standard,
    /// sum over i = 2..T-1, as sometimes printed; empty for T = 2
    literal,
};

/// Forward transfer: (1/(T-1)) sum_i (R(i-1, i) - b_bar(i)).
inline double fwt(const ResultMatrix& r, FwtBounds bounds = FwtBounds::standard) {
    const std::size_t t = r.tasks();
    if (t < 2) throw UndefinedMetric("forward transfer needs at least two datasets");
    const std::size_t last = bounds == FwtBounds::standard ? t : t - 1; // exclusive, 0-based
    double s = 0.0;
    for (std::size_t i = 1; i < last; ++i) {
        const auto b = r.baseline(i);
        if (!b) throw StateError("random-init baseline for dataset " + std::to_string(i + 1) + " missing");
        s += r.require(i - 1, i) - *b;
    }
    return s / static_cast<double>(t - 1);
}

// ---------------------------------------------------------------------------
// results.csv: header "row,task1..taskT", rows "after_task<i>", then a
// "b_bar" row. Missing entries are empty cells; values round-trip exactly.

inline std::string to_csv(const ResultMatrix& r) {
    std::ostringstream os;
    const std::size_t t = r.tasks();
    os << "row";
    for (std::size_t j = 0; j < t; ++j) os << ",task" << j + 1;
    os << '\n';
    for (std::size_t i = 0; i < t; ++i) {
        os << "after_task" << i + 1;
        for (std::size_t j = 0; j < t; ++j) {
            os << ',';
            if (auto v = r.at(i, j)) os << format_double(*v);
        }
        os << '\n';
    }
    os << "b_bar";
    for (std::size_t j = 0; j < t; ++j) {
        os << ',';
        if (auto v = r.baseline(j)) os << format_double(*v);
    }
    os << '\n';
    return os.str();
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    cells.push_back(cur);
    return cells;
}

} // namespace detail

/// Parses results.csv; throws FormatError on any malformed content.
inline ResultMatrix from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r") continue;
        rows.push_back(detail::split_csv_line(line));
    }
    if (rows.empty()) throw FormatError("results csv is empty");
    const auto& header = rows.front();
    if (header.empty() || header[0] != "row") throw FormatError("results csv: missing header");
    const std::size_t t = header.size() - 1;
    if (t == 0) throw FormatError("results csv: no task columns");
    for (std::size_t j = 0; j < t; ++j)
        if (header[j + 1] != "task" + std::to_string(j + 1)) throw FormatError("results csv: bad column " + header[j + 1]);
    if (rows.size() != t + 2) throw FormatError("results csv: expected " + std::to_string(t + 2) + " lines");
    ResultMatrix r(t);
    for (std::size_t i = 0; i <= t; ++i) {
        const auto& row = rows[i + 1];
        const bool base = i == t;
        const std::string expect = base ? "b_bar" : "after_task" + std::to_string(i + 1);
        if (row.size() != t + 1 || row[0] != expect) throw FormatError("results csv: bad row '" + row[0] + "'");
        for (std::size_t j = 0; j < t; ++j) {
            if (row[j + 1].empty()) continue;
            const auto v = parse_double(row[j + 1]);
            if (!v) throw FormatError("results csv: bad number '" + row[j + 1] + "'");
            try {
                if (base) r.record_baseline(j, *v);
                else r.record(i, j, *v);
            } catch (const Error& e) {
                throw FormatError(std::string("results csv: ") + e.what());
            }
        }
    }
    return r;
}

} // namespace growlearn
