#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pcsi/channel_model.hpp"
#include "pcsi/queueing_sim.hpp"

namespace pcsi::config {

/// Invalid experiment description; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimulationSettings {
  sim::Count horizon{10'000};
  std::size_t replicas{1};
  std::vector<sim::Count> levels;
  double burn_in_fraction{0.2};
  sim::Count sample_stride{0};
  bool record_trace{false};
  std::vector<sim::Count> initial_queue;
};

struct EstimationSettings {
  std::string method{"direct"};  // direct | importance | both
  std::string view{"stationary"};  // stationary | first_hitting (direct method)
  std::vector<sim::Count> levels;
  std::size_t replicas{16};
  sim::Count horizon{100'000};
  sim::Count cycle_cap{1'000'000};
  std::size_t is_replicas{100'000};
  std::optional<std::vector<double>> tilt;  // empty: argmin of the minimized upper bound
  double tolerance{0.2};  // relative tolerance of the fitted exponent against J*
};

struct BoundsSettings {
  bool jstar{true};
  bool upper_bound{true};
  bool subset_upper_bound{true};
  std::size_t multistarts{64};
  double grid_resolution{0.01};
  std::size_t grid_cap{200'000};
  std::size_t max_users{12};
};

struct ExperimentConfig {
  ExperimentConfig(JointChannelDistribution ch, SubsetSystem sub)
      : channel(std::move(ch)), subsets(std::move(sub)) {}

  std::size_t num_users{0};
  Eigen::VectorXd arrival_rates;
  JointChannelDistribution channel;
  SubsetSystem subsets;
  std::string policy{"max_exp"};
  SimulationSettings simulation;
  EstimationSettings estimation;
  BoundsSettings bounds;
  std::uint64_t seed{1};
  std::string output_dir{"out"};
  std::string canonical;  // canonical JSON text of the input
  std::string hash;       // FNV-1a 64 of `canonical`, 16 hex digits

  sim::SystemModel model() const;
};

/// Parses and validates a JSON experiment description. Every channel and
/// subset invariant is checked here; failures throw ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// FNV-1a 64-bit hash as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& data);

}  // namespace pcsi::config
