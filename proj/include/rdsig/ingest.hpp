#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rdsig/types.hpp"

namespace rdsig {

// Ordered set of K >= 2 distinct class names; position is the class index.
class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(std::vector<std::string> labels);

    // One label per line; order defines the index. Trailing blank lines are ignored.
    static LabelSet read(std::istream& in);
    static LabelSet read_file(const std::filesystem::path& path);

    std::size_t size() const { return labels_.size(); }
    const std::string& name(std::size_t i) const { return labels_.at(i); }
    const std::vector<std::string>& names() const { return labels_; }
    std::optional<std::size_t> index_of(const std::string& label) const;

    friend bool operator==(const LabelSet& a, const LabelSet& b) { return a.labels_ == b.labels_; }

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct BlockRef {
    std::string system;
    std::string family;
    std::string experiment;
    std::string condition;

    auto operator<=>(const BlockRef&) const = default;
};

struct TrialRecord {
    BlockRef block;
    std::size_t true_class = 0;
    std::size_t response_class = 0;
    std::int64_t count = 1;
};

struct ConfusionCounts {
    BlockRef key;
    CountMatrix counts;  // row = true class, column = response
    LabelSet labels;

    std::size_t k() const { return static_cast<std::size_t>(counts.rows()); }
    std::int64_t total() const { return counts.sum(); }
    std::int64_t row_total(std::size_t i) const { return counts.row(static_cast<Eigen::Index>(i)).sum(); }
    void validate() const;
};

// Trial CSV: system,family,experiment,condition,true_class,response_class[,count].
// Counts CSV is the same layout with the count column mandatory.
std::vector<TrialRecord> load_trials(std::istream& in, const LabelSet& labels);
std::vector<TrialRecord> load_trials_file(const std::filesystem::path& path, const LabelSet& labels);

// One matrix per distinct (system, family, experiment, condition), sorted by key.
std::vector<ConfusionCounts> aggregate_counts(const std::vector<TrialRecord>& records, const LabelSet& labels);

// Sum of several blocks' counts under a new key (used to pool conditions).
ConfusionCounts pool_counts(const std::vector<const ConfusionCounts*>& parts, BlockRef key);

// Counts CSV, one row per nonzero cell, blocks in key order, cells row-major.
void write_counts_csv(std::ostream& out, const std::vector<ConfusionCounts>& blocks);

}  // namespace rdsig
