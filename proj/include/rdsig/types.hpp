#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rdsig {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Advisory conditions that do not abort a computation ("zero_variance",
// "ba_not_converged", ...). Kept sorted and unique so output is stable.
class Flags {
public:
    void set(const std::string& flag);
    void merge(const Flags& other);
    bool has(const std::string& flag) const;
    bool empty() const { return items_.empty(); }
    const std::vector<std::string>& items() const { return items_; }
    std::string joined(char sep = ';') const;

private:
    std::vector<std::string> items_;
};

}  // namespace rdsig
