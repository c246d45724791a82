#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "plora/fed.hpp"

namespace plora {

inline constexpr const char* kRoundsCsvVersion = "# plora-rounds v1";
inline constexpr const char* kRoundsCsvHeader = "round,stage,accuracy,bits_up,bits_down,cum_bits,cum_flops";

/// Per-round log; accuracy is empty on rounds skipped by the eval stride.
std::string rounds_csv(const std::vector<RoundRecord>& records);
std::vector<RoundRecord> parse_rounds_csv(const std::string& text);

/// JSON run summary: accuracies, trainable counts, cost totals and the cost
/// formulas used.
std::string summary_json(const ExperimentReport& report);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace plora
