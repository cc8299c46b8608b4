#pragma once

// Minimal deterministic SVG emitters for report plots. Numbers are printed
// with fmt_g so identical inputs always produce identical bytes.

#include <string>
#include <vector>

namespace knlab::svg {

// vertical bars around a zero baseline; negative values hang downwards
std::string bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                      const std::string& title);

// diverging heatmap (white at zero, red positive, blue negative),
// rows x columns with label gutters
std::string heatmap(const std::vector<std::vector<double>>& grid,
                    const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::string& title);

void write_file(const std::string& path, const std::string& content);

}  // namespace knlab::svg
