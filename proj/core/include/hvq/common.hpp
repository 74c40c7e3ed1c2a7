#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>
#include <vector>

namespace hvq {

// All dense math is double precision, row-major (token index = row).
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Bad wiring: dimension mismatches, invalid hyperparameters, malformed setups.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad data fed to a correctly configured component (NaNs, wrong splits, ...).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A metric was requested on data for which it is not defined.
class UndefinedMetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_config(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}
inline void require_input(bool ok, const std::string& msg) {
  if (!ok) throw InputError(msg);
}

}  // namespace hvq
