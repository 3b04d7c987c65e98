#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <vector>

#include "assortmax/common.hpp"

namespace assortmax {

// Item ids are 1-based; 0 is the no-purchase option. An assortment is a
// sorted list of distinct item ids.
using Assortment = std::vector<int>;

// Ground-truth world: type/item dimensions, assortment cap, revenues,
// type distribution and preference matrix.
struct Instance {
  int m = 0;  // number of customer types
  int n = 0;  // number of items
  int K = 0;  // assortment size cap
  Eigen::MatrixXd W;           // m x n expected revenues, >= 0
  Eigen::VectorXd mu_star;     // length m, sums to 1
  Eigen::MatrixXd theta_star;  // m x n preference parameters

  // Throws InvalidInput if any structural invariant fails.
  void validate() const;
};

// One transactional observation (i_t, j_t, S_t).
struct Observation {
  int t = 0;        // interaction index
  int type_id = 0;  // 1..m
  int choice = 0;   // 0 = no purchase, otherwise in S
  Assortment assortment;
};

// Append-only list of observations.
class ObservationLog {
 public:
  void append(Observation obs);

  const std::vector<Observation>& observations() const { return obs_; }
  int size() const { return static_cast<int>(obs_.size()); }
  bool empty() const { return obs_.empty(); }

  // Number of observations per type (1-based lookup).
  int count_for_type(int type_id) const;

  // CSV with header `t,type,choice,assortment`; assortment is a
  // `;`-separated item-id list. Round-trips exactly.
  void write_csv(std::ostream& out) const;
  static ObservationLog read_csv(std::istream& in);

 private:
  std::vector<Observation> obs_;
  std::vector<int> type_counts_;
};

// Checks id ranges and distinctness; throws InvalidInput on violation.
void validate_assortment(const Assortment& s, int n);
void validate_observation(const Observation& obs, int m, int n);

}  // namespace assortmax
