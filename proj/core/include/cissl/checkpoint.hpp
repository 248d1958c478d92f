#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "cissl/config.hpp"
#include "cissl/trainer.hpp"

namespace cissl {

// Metric history CSV: iter, the step losses, acceptance_rate, contrastive
// (0/1), balanced_accuracy, bank_size, recall_0..recall_{K-1}. Doubles are
// written in shortest round-trip form, so a read gives back equal rows.
std::vector<std::string> history_header(std::size_t num_classes);
std::vector<std::string> history_fields(const HistoryRow& row);
void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows,
                       std::size_t num_classes);
std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path);

// Directory layout:
//   params.bin    parameter snapshot
//   velocity.bin  momentum buffers, when any exist
//   bank.csv      feature bank
//   state.json    iteration, generator state, freeze flags
//   history.csv   metric history
void save_checkpoint(const TrainState& state, const std::filesystem::path& dir);

// Rebuilds the state for cfg's model shape; resuming from it follows the
// same trajectory as the run that saved it.
TrainState load_checkpoint(const std::filesystem::path& dir, const ExperimentConfig& cfg);

}  // namespace cissl
