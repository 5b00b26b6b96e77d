#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace triage {

/// Seeded generator for imbalanced flow-like alert CSVs.
///
/// Each file mimics the layout of public flow datasets: an id column, two
/// text columns (protocol and attack family) that ingestion must drop, 40
/// numeric columns and a 0/1 `label`. Malicious flows form a tight cluster
/// inside broad benign traffic, carry heavier byte and duration tails and a
/// sign-agreement pattern no linear model can use; one column is constant and
/// the rest are weak per-flow statistics.
struct SyntheticOptions {
    std::size_t rows = 5000;
    std::uint64_t seed = 7;
    double malicious_rate = 0.2;
    std::string id_prefix = "flow-";
};

[[nodiscard]] std::string synthetic_csv(const SyntheticOptions& options);

void write_synthetic_csv(const std::filesystem::path& path, const SyntheticOptions& options);

}  // namespace triage
