#include "rdsig/ingest.hpp"

#include <charconv>
#include <fstream>
#include <map>

#include "rdsig/csv.hpp"

namespace rdsig {

namespace {

constexpr const char* kColumns[] = {"system", "family", "experiment", "condition", "true_class", "response_class",
                                    "count"};

std::string row_context(std::size_t line, const std::string& field) {
    return "row " + std::to_string(line) + ", field '" + field + "'";
}

}  // namespace

LabelSet::LabelSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() < 2) throw Error("label set needs at least 2 labels, got " + std::to_string(labels_.size()));
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i].empty()) throw Error("empty label at position " + std::to_string(i + 1));
        if (!index_.emplace(labels_[i], i).second) throw Error("duplicate label '" + labels_[i] + "'");
    }
}

LabelSet LabelSet::read(std::istream& in) {
    std::vector<std::string> labels;
    std::string line;
    std::size_t blank_run = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            ++blank_run;
            continue;
        }
        if (blank_run && !labels.empty()) throw Error("blank line inside labels file");
        blank_run = 0;
        labels.push_back(line);
    }
    return LabelSet(std::move(labels));
}

LabelSet LabelSet::read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open labels file '" + path.string() + "'");
    try {
        return read(in);
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

std::optional<std::size_t> LabelSet::index_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void ConfusionCounts::validate() const {
    if (counts.rows() != counts.cols()) throw Error("confusion matrix is not square");
    if (static_cast<std::size_t>(counts.rows()) != labels.size()) throw Error("confusion matrix size does not match labels");
    if ((counts.array() < 0).any()) throw Error("negative confusion count");
    if (counts.sum() <= 0) throw Error("confusion matrix has no positive row");
}

std::vector<TrialRecord> load_trials(std::istream& in, const LabelSet& labels) {
    csv::Reader reader(in);
    auto header = reader.next();
    if (!header) throw Error("empty trial file");
    const std::size_t ncols = header->size();
    if (ncols != 6 && ncols != 7) throw Error("header must have 6 or 7 columns, got " + std::to_string(ncols));
    for (std::size_t c = 0; c < ncols; ++c) {
        if ((*header)[c] != kColumns[c])
            throw Error("header column " + std::to_string(c + 1) + " must be '" + kColumns[c] + "', got '" +
                        (*header)[c] + "'");
    }

    std::vector<TrialRecord> out;
    while (auto row = reader.next()) {
        const std::size_t line = reader.line();
        if (row->size() != ncols)
            throw Error("row " + std::to_string(line) + ": expected " + std::to_string(ncols) + " fields, got " +
                        std::to_string(row->size()));
        const auto& f = *row;
        TrialRecord rec;
        rec.block = BlockRef{f[0], f[1], f[2], f[3]};
        for (int c = 0; c < 4; ++c)
            if (f[c].empty()) throw Error(row_context(line, kColumns[c]) + ": empty value");
        auto ti = labels.index_of(f[4]);
        if (!ti) throw Error(row_context(line, "true_class") + ": unknown label '" + f[4] + "'");
        auto ri = labels.index_of(f[5]);
        if (!ri) throw Error(row_context(line, "response_class") + ": unknown label '" + f[5] + "'");
        rec.true_class = *ti;
        rec.response_class = *ri;
        if (ncols == 7) {
            const std::string& s = f[6];
            std::int64_t v = 0;
            auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 1)
                throw Error(row_context(line, "count") + ": expected a positive integer, got '" + s + "'");
            rec.count = v;
        }
        out.push_back(std::move(rec));
    }
    if (out.empty()) throw Error("trial file has a header but no data rows");
    return out;
}

std::vector<TrialRecord> load_trials_file(const std::filesystem::path& path, const LabelSet& labels) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open input file '" + path.string() + "'");
    try {
        return load_trials(in, labels);
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

std::vector<ConfusionCounts> aggregate_counts(const std::vector<TrialRecord>& records, const LabelSet& labels) {
    const auto k = static_cast<Eigen::Index>(labels.size());
    std::map<BlockRef, CountMatrix> acc;
    for (const auto& r : records) {
        if (r.true_class >= labels.size() || r.response_class >= labels.size()) throw Error("record label out of range");
        auto [it, fresh] = acc.try_emplace(r.block);
        if (fresh) it->second = CountMatrix::Zero(k, k);
        it->second(static_cast<Eigen::Index>(r.true_class), static_cast<Eigen::Index>(r.response_class)) += r.count;
    }
    std::vector<ConfusionCounts> out;
    out.reserve(acc.size());
    for (auto& [key, m] : acc) out.push_back(ConfusionCounts{key, std::move(m), labels});
    return out;
}

ConfusionCounts pool_counts(const std::vector<const ConfusionCounts*>& parts, BlockRef key) {
    if (parts.empty()) throw Error("nothing to pool");
    ConfusionCounts out{std::move(key), CountMatrix::Zero(parts[0]->counts.rows(), parts[0]->counts.cols()),
                        parts[0]->labels};
    for (const auto* p : parts) {
        if (!(p->labels == out.labels)) throw Error("cannot pool blocks with different label sets");
        out.counts += p->counts;
    }
    return out;
}

void write_counts_csv(std::ostream& out, const std::vector<ConfusionCounts>& blocks) {
    out << "system,family,experiment,condition,true_class,response_class,count\n";
    for (const auto& b : blocks) {
        for (Eigen::Index i = 0; i < b.counts.rows(); ++i)
            for (Eigen::Index j = 0; j < b.counts.cols(); ++j) {
                if (b.counts(i, j) == 0) continue;
                out << csv::join({b.key.system, b.key.family, b.key.experiment, b.key.condition,
                                  b.labels.name(static_cast<std::size_t>(i)), b.labels.name(static_cast<std::size_t>(j)),
                                  std::to_string(b.counts(i, j))})
                    << '\n';
            }
    }
}

}  // namespace rdsig
