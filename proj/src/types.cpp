#include "assortmax/types.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace assortmax {

void Instance::validate() const {
  if (m <= 0 || n <= 0) throw InvalidInput("Instance: m and n must be positive");
  if (K < 1 || K > n) throw InvalidInput("Instance: K must satisfy 1 <= K <= n");
  if (W.rows() != m || W.cols() != n) throw InvalidInput("Instance: W must be m x n");
  if (mu_star.size() != m) throw InvalidInput("Instance: mu_star must have length m");
  if (theta_star.rows() != m || theta_star.cols() != n)
    throw InvalidInput("Instance: theta_star must be m x n");
  if (!W.allFinite() || (W.array() < 0.0).any())
    throw InvalidInput("Instance: W entries must be finite and >= 0");
  if (!theta_star.allFinite()) throw InvalidInput("Instance: theta_star entries must be finite");
  if ((mu_star.array() < 0.0).any()) throw InvalidInput("Instance: mu_star entries must be >= 0");
  if (std::abs(mu_star.sum() - 1.0) > 1e-12)
    throw InvalidInput("Instance: mu_star must sum to 1 within 1e-12");
}

void validate_assortment(const Assortment& s, int n) {
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] < 1 || s[k] > n) throw InvalidInput("assortment: item id out of range");
    if (k > 0 && s[k] <= s[k - 1]) throw InvalidInput("assortment: ids must be sorted and distinct");
  }
}

void validate_observation(const Observation& obs, int m, int n) {
  if (obs.type_id < 1 || obs.type_id > m) throw InvalidInput("observation: type id out of range");
  validate_assortment(obs.assortment, n);
  if (obs.choice != 0 &&
      !std::binary_search(obs.assortment.begin(), obs.assortment.end(), obs.choice))
    throw InvalidInput("observation: choice must be 0 or a member of the assortment");
}

void ObservationLog::append(Observation obs) {
  if (obs.type_id < 1) throw InvalidInput("ObservationLog: type id must be >= 1");
  if (static_cast<std::size_t>(obs.type_id) > type_counts_.size())
    type_counts_.resize(obs.type_id, 0);
  ++type_counts_[obs.type_id - 1];
  obs_.push_back(std::move(obs));
}

int ObservationLog::count_for_type(int type_id) const {
  if (type_id < 1 || static_cast<std::size_t>(type_id) > type_counts_.size()) return 0;
  return type_counts_[type_id - 1];
}

void ObservationLog::write_csv(std::ostream& out) const {
  out << "t,type,choice,assortment\n";
  for (const Observation& obs : obs_) {
    out << obs.t << ',' << obs.type_id << ',' << obs.choice << ',';
    for (std::size_t k = 0; k < obs.assortment.size(); ++k) {
      if (k > 0) out << ';';
      out << obs.assortment[k];
    }
    out << '\n';
  }
}

ObservationLog ObservationLog::read_csv(std::istream& in) {
  ObservationLog log;
  std::string line;
  if (!std::getline(in, line) || line != "t,type,choice,assortment")
    throw InvalidInput("ObservationLog: bad or missing CSV header");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    Observation obs;
    char comma;
    if (!(row >> obs.t >> comma >> obs.type_id >> comma >> obs.choice >> comma))
      throw InvalidInput("ObservationLog: parse error at line " + std::to_string(lineno));
    std::string items;
    row >> items;
    std::istringstream item_stream(items);
    std::string token;
    while (std::getline(item_stream, token, ';'))
      if (!token.empty()) obs.assortment.push_back(std::stoi(token));
    log.append(std::move(obs));
  }
  return log;
}

}  // namespace assortmax
