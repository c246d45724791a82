#include "plora/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "plora/errors.hpp"

namespace plora {

std::string rounds_csv(const std::vector<RoundRecord>& records) {
    std::string out = std::string(kRoundsCsvVersion) + "\n" + kRoundsCsvHeader + "\n";
    char buf[256];
    for (const auto& r : records) {
        char acc[32] = "";
        if (r.accuracy) std::snprintf(acc, sizeof acc, "%.6f", *r.accuracy);
        std::snprintf(buf, sizeof buf, "%zu,%d,%s,%llu,%llu,%llu,%llu\n", r.round, r.stage, acc,
                      static_cast<unsigned long long>(r.bits_up),
                      static_cast<unsigned long long>(r.bits_down),
                      static_cast<unsigned long long>(r.cum_bits),
                      static_cast<unsigned long long>(r.cum_flops));
        out += buf;
    }
    return out;
}

std::vector<RoundRecord> parse_rounds_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kRoundsCsvVersion) {
        throw DataError("rounds.csv: missing or unsupported version line");
    }
    if (!std::getline(in, line) || line != kRoundsCsvHeader) throw DataError("rounds.csv: bad header");
    std::vector<RoundRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != 7) throw DataError("rounds.csv: expected 7 columns: " + line);
        try {
            RoundRecord r;
            r.round = std::stoull(cells[0]);
            r.stage = std::stoi(cells[1]);
            if (!cells[2].empty()) r.accuracy = std::stod(cells[2]);
            r.bits_up = std::stoull(cells[3]);
            r.bits_down = std::stoull(cells[4]);
            r.cum_bits = std::stoull(cells[5]);
            r.cum_flops = std::stoull(cells[6]);
            out.push_back(r);
        } catch (const std::logic_error&) {
            throw DataError("rounds.csv: bad row: " + line);
        }
    }
    return out;
}

namespace {

nlohmann::ordered_json trainable_json(const TrainableCount& c) {
    return {{"count", c.count}, {"total", c.total}, {"density", c.density()}};
}

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::string summary_json(const ExperimentReport& rep) {
    const FedConfig& c = rep.config;
    char hash[20];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(rep.dataset_hash));
    nlohmann::ordered_json j;
    j["schema"] = "plora-summary v1";
    j["cost_formulas"] = cost_formulas();
    j["algorithm"] = to_string(c.algorithm);
    j["seed"] = c.seed;
    j["dataset_hash"] = hash;
    j["federation"] = {{"clients", c.clients},
                       {"participants", c.participants},
                       {"local_epochs", c.local_epochs},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"aggregation", to_string(c.aggregation)}};
    j["rounds"] = {{"stage1", rep.stage1_rounds},
                   {"stage2", rep.stage2_rounds},
                   {"total", rep.stage1_rounds + rep.stage2_rounds}};
    j["trainable"] = {{"stage1", trainable_json(rep.stage1_trainable)},
                      {"stage2", trainable_json(rep.stage2_trainable)}};
    j["accuracy"] = {{"initial", rep.initial_accuracy},
                     {"stage1", optional_json(rep.stage1_accuracy)},
                     {"primed", optional_json(rep.primed_accuracy)},
                     {"final", rep.final_accuracy}};
    const CostLedger& l = rep.ledger;
    const double seconds = wallclock_model(l, c.bandwidth_up, c.bandwidth_down, c.flops_rate);
    j["communication"] = {{"bits_per_param", l.bits_per_param()},
                          {"bits_up", l.bits_up()},
                          {"bits_down", l.bits_down()},
                          {"bits_total", l.bits_total()},
                          {"bits_up_sparse_encoding", l.bits_up_sparse()},
                          {"gbits_total", static_cast<double>(l.bits_total()) / 1e9}};
    j["compute"] = {{"flops", l.flops()},
                    {"bandwidth_up", c.bandwidth_up},
                    {"bandwidth_down", c.bandwidth_down},
                    {"flops_rate", c.flops_rate},
                    {"wallclock_seconds", seconds},
                    {"wallclock_minutes", seconds / 60.0}};
    return j.dump(2) + "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace plora
