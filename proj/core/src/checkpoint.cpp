#include "cissl/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "cissl/csv.hpp"

namespace cissl {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr std::size_t kFixedColumns = 11;

const char* const kGroupNames[] = {"extractor", "backbone_head", "aux_head", "projector"};

}  // namespace

std::vector<std::string> history_header(std::size_t num_classes) {
  std::vector<std::string> h{"iter",        "loss_s",          "loss_u",           "loss_cls",
                             "loss_consis", "loss_bacon",      "loss_total",       "acceptance_rate",
                             "contrastive", "balanced_accuracy", "bank_size"};
  for (std::size_t k = 0; k < num_classes; ++k) h.push_back("recall_" + std::to_string(k));
  return h;
}

std::vector<std::string> history_fields(const HistoryRow& row) {
  using csv::format_double;
  std::vector<std::string> f{std::to_string(row.iter),
                             format_double(row.step.loss_s),
                             format_double(row.step.loss_u),
                             format_double(row.step.loss_cls),
                             format_double(row.step.loss_consis),
                             format_double(row.step.loss_bacon),
                             format_double(row.step.loss_total),
                             format_double(row.step.acceptance_rate),
                             row.step.contrastive_active ? "1" : "0",
                             format_double(row.balanced_accuracy),
                             std::to_string(row.bank_size)};
  for (double r : row.recall) f.push_back(format_double(r));
  return f;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows,
                       std::size_t num_classes) {
  csv::Table t;
  t.header = history_header(num_classes);
  for (const auto& r : rows) t.rows.push_back(history_fields(r));
  csv::write(path, t);
}

std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  if (t.header.size() < kFixedColumns || t.header[0] != "iter") {
    throw std::runtime_error("'" + path.string() + "': not a metric history");
  }
  std::vector<HistoryRow> out;
  for (const auto& f : t.rows) {
    HistoryRow r;
    r.iter = static_cast<std::size_t>(csv::parse_int(f[0]));
    r.step.loss_s = csv::parse_double(f[1]);
    r.step.loss_u = csv::parse_double(f[2]);
    r.step.loss_cls = csv::parse_double(f[3]);
    r.step.loss_consis = csv::parse_double(f[4]);
    r.step.loss_bacon = csv::parse_double(f[5]);
    r.step.loss_total = csv::parse_double(f[6]);
    r.step.acceptance_rate = csv::parse_double(f[7]);
    r.step.contrastive_active = f[8] == "1";
    r.balanced_accuracy = csv::parse_double(f[9]);
    r.bank_size = static_cast<std::size_t>(csv::parse_int(f[10]));
    for (std::size_t k = kFixedColumns; k < f.size(); ++k) r.recall.push_back(csv::parse_double(f[k]));
    out.push_back(std::move(r));
  }
  return out;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_parameters(state.model, dir / "params.bin");

  const auto params = state.model.parameters();
  bool any_velocity = false;
  for (const auto& p : params) any_velocity = any_velocity || !p.param->velocity.empty();
  std::filesystem::remove(dir / "velocity.bin");
  if (any_velocity) {
    std::vector<const Tensor2D*> v;
    for (const auto& p : params) v.push_back(&p.param->velocity);
    write_tensor_file(dir / "velocity.bin", v);
  }

  save_bank_csv(state.bank, dir / "bank.csv");
  write_history_csv(dir / "history.csv", state.history, state.model.shape().num_classes);

  nlohmann::ordered_json j;
  j["version"] = kCheckpointVersion;
  j["iter"] = state.iter;
  j["rng_state"] = state.rng.state();
  j["bank_dim"] = state.bank.dim();
  for (int g = 0; g < 4; ++g) {
    j["frozen"][kGroupNames[g]] = state.model.is_frozen(static_cast<ParamGroup>(g));
  }
  std::ofstream os(dir / "state.json");
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write '" + (dir / "state.json").string() + "'");
}

TrainState load_checkpoint(const std::filesystem::path& dir, const ExperimentConfig& cfg) {
  std::ifstream is(dir / "state.json");
  if (!is) throw std::runtime_error("no checkpoint in '" + dir.string() + "'");
  const auto j = nlohmann::json::parse(is);
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version in '" + dir.string() + "'");
  }

  TrainState s = init_state(cfg);
  s.iter = j.at("iter").get<std::size_t>();
  s.rng = Rng(j.at("rng_state").get<std::uint64_t>());
  load_parameters(s.model, dir / "params.bin");
  for (int g = 0; g < 4; ++g) {
    s.model.set_frozen(static_cast<ParamGroup>(g), j.at("frozen").at(kGroupNames[g]).get<bool>());
  }

  if (std::filesystem::exists(dir / "velocity.bin")) {
    auto v = read_tensor_file(dir / "velocity.bin");
    auto params = s.model.parameters();
    if (v.size() != params.size()) throw std::runtime_error("velocity.bin does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) params[i].param->velocity = std::move(v[i]);
  }

  s.bank = load_bank_csv(dir / "bank.csv");
  if (s.bank.dim() != cfg.model_shape().feature_dim()) {
    // An empty bank file still records the width through bank_dim.
    if (s.bank.size() != 0) throw std::runtime_error("bank width does not match the model");
    s.bank = FeatureBank(j.at("bank_dim").get<std::size_t>());
  }
  s.history = read_history_csv(dir / "history.csv");
  return s;
}

}  // namespace cissl
