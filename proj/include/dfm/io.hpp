#pragma once

#include "dfm/core.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dfm {

// Header row: time label then series names. First column: time index. Empty cell = missing.
Panel ingest_csv(const std::filesystem::path& path);
Panel parse_csv(const std::string& text, const std::string& source = "<input>");

// Values written in shortest round-trip form so re-ingestion is exact.
void emit_csv(const Panel& panel, const std::filesystem::path& path);
std::string panel_csv(const Panel& panel);

std::string format_sig(double v, int digits = 6);
std::string format_roundtrip(double v);

// Matrix table with a leading label column; 6 significant digits.
void write_matrix_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const std::vector<std::string>& row_labels, const Matrix& m);

// Little-endian int64 rows, int64 cols, then row-major doubles.
void write_sidecar(const std::filesystem::path& path, const Matrix& m);
Matrix read_sidecar(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace dfm
