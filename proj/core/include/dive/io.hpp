#ifndef DIVE_IO_HPP
#define DIVE_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dive/compare.hpp"
#include "dive/fast.hpp"
#include "dive/mstep.hpp"
#include "dive/synthetic.hpp"
#include "dive/types.hpp"

namespace dive {

// ---- dataset files --------------------------------------------------------
//
// Values: dense float64 little-endian binary with a 16-byte header
// ("DIVEMTRX", u32 rows, u32 cols), or CSV with a header row; the reader
// sniffs the magic. Rows: CSV subject_id,visit_id,age. Adjacency: CSV edge
// list l1,l2 (0-indexed); missing reverse edges are symmetrized with a
// warning on stderr.

void save_values_binary(const std::string& path, const Eigen::MatrixXd& values);
void save_values_csv(const std::string& path, const Eigen::MatrixXd& values);
Eigen::MatrixXd load_values(const std::string& path);

void save_rows_csv(const std::string& path, const std::vector<Dataset::Row>& rows);
void save_adjacency_csv(const std::string& path,
                        const std::vector<std::vector<std::int32_t>>& adjacency);

Dataset load_dataset(const std::string& values_path, const std::string& rows_path,
                     const std::string& adjacency_path);

// ---- ground truth files ---------------------------------------------------

void save_ground_truth(const std::string& dir, const GroundTruth& truth,
                       const std::vector<std::int64_t>& subject_ids);
GroundTruth load_ground_truth(const Dataset& data, const std::string& labels_path,
                              const std::string& stages_path,
                              const std::string& trajectories_path);

std::vector<std::int32_t> load_label_file(const std::string& path, std::int64_t expected_count);

// ---- covariates -----------------------------------------------------------

void save_covariates_csv(const std::string& path, const Dataset& data,
                         const std::vector<Covariate>& covariates);
std::vector<Covariate> load_covariates_csv(const std::string& path, const Dataset& data);

// ---- model checkpoints ----------------------------------------------------

struct DatasetFingerprint {
  std::uint32_t rows = 0;
  std::uint32_t vertices = 0;
  std::uint64_t hash = 0;

  bool operator==(const DatasetFingerprint&) const = default;
};

DatasetFingerprint dataset_fingerprint(const Dataset& data);

struct ModelCheckpoint {
  int version = 1;
  DatasetFingerprint fingerprint;
  ModelState model;
};

// Human-readable text with hex-float payloads, so round trips are bitwise.
void save_model(const std::string& path, const ModelState& model,
                const DatasetFingerprint& fingerprint);
ModelCheckpoint load_model(const std::string& path);

// ---- run outputs ----------------------------------------------------------

void write_trace_csv(const std::string& path, const FitReport& report);
void write_trajectories_csv(const std::string& path, const ModelState& model,
                            const Dataset& data, int samples = 101);
void write_stages_csv(const std::string& path, const ModelState& model, const Dataset& data);
void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, double>>& metrics);
void write_comparison_csv(const std::string& path, const ComparisonReport& report);
void write_audit_csv(const std::string& path, const EquivalenceReport& report);

// ---- scenario configs -----------------------------------------------------

std::string scenario_to_json(const ScenarioConfig& config);
ScenarioConfig scenario_from_json_file(const std::string& path);
void save_scenario_json(const std::string& path, const ScenarioConfig& config);

}  // namespace dive

#endif
