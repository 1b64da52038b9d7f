#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace seqmi {

// Longitudinal mixed-type data layout. Visits are indexed 1..p in messages
// and in the partition sets; storage is 0-based.

enum class VisitType { Continuous, Binary, Ordinal, Nominal, Count };

struct VisitTypeSpec {
  VisitType type = VisitType::Continuous;
  int levels = 0;  // K for binary (2), ordinal, nominal; unused otherwise

  bool discrete() const {
    return type == VisitType::Binary || type == VisitType::Ordinal ||
           type == VisitType::Nominal || type == VisitType::Count;
  }
};

struct SubjectRecord {
  std::string id;
  Eigen::VectorXd x;                    // covariates; x[0] == 1 when intercept requested
  Eigen::VectorXd y;                    // length p; meaningful only where observed
  std::vector<std::uint8_t> observed;   // per visit
  int s = 0;                            // last observed visit index (1-based), 0 if none
  int arm = 0;                          // treatment indicator, identified with the last covariate
  int orig_index = 0;                   // input row order, for stable output
};

struct Dataset {
  std::vector<SubjectRecord> subjects;
  int p = 0;
  int q = 0;
  std::vector<VisitTypeSpec> visit_types;
  std::string id_name = "id";
  std::vector<std::string> covariate_names;  // excludes the implicit intercept
  std::vector<std::string> response_names;

  int n() const { return static_cast<int>(subjects.size()); }
};

// Per-subject split of missing cells: intermittent discrete (B_d), intermittent
// continuous (B_c), post-dropout (W); all 1-based and sorted ascending.
struct MissingnessPartition {
  std::vector<std::vector<int>> B_d, B_c, W;
  std::vector<int> n_j;  // n_j[j-1] = #subjects with s >= j
};

struct ColumnSchema {
  std::string id_column = "id";
  std::vector<std::string> covariate_columns;
  std::vector<std::string> response_columns;
  std::vector<VisitTypeSpec> visit_types;
  std::string missing_token = "NA";
  bool add_intercept = true;
};

MissingnessPartition classify_missingness(const Dataset& data);

// Stable sort by descending dropout pattern; returns the sorted dataset and n_j.
std::pair<Dataset, std::vector<int>> sort_monotone(const Dataset& data);

Dataset load_dataset(const std::string& path, const ColumnSchema& schema);

// Writes the dataset in input row order using the load schema conventions.
// Doubles are printed with enough digits to round-trip bit-exactly.
void write_dataset(const std::string& path, const Dataset& data,
                   const std::string& missing_token = "NA");

}  // namespace seqmi
