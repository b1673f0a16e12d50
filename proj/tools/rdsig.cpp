#include <omp.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rdsig/channel.hpp"
#include "rdsig/cost_inference.hpp"
#include "rdsig/csv.hpp"
#include "rdsig/ingest.hpp"
#include "rdsig/rd_solver.hpp"
#include "rdsig/serialize.hpp"
#include "rdsig/signatures.hpp"
#include "rdsig/stats.hpp"
#include "rdsig/synth.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rdsig;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitFlagged = 2;

// ---------------------------------------------------------------- config

// JSON config reader for CLI11: nested objects address subcommands, arrays
// feed multi-value options. Values the user passes on the command line win.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override {
        return {};  // locks are written from the option registry instead
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw CLI::ConversionError("config is not valid JSON: " + std::string(e.what()));
        }
        if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
        if (j.contains("schema_version") && j["schema_version"] != io::kSchemaVersion)
            throw CLI::ConversionError("unsupported config schema_version");
        std::vector<CLI::ConfigItem> items;
        collect(j, {}, items);
        return items;
    }

private:
    static std::string scalar(const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    }

    static void collect(const json& obj, const std::vector<std::string>& parents,
                        std::vector<CLI::ConfigItem>& items) {
        for (const auto& [key, value] : obj.items()) {
            if (parents.empty() && (key == "schema_version" || key == "command")) continue;
            // null, "" and [] leave an option at its default
            if (value.is_null() || (value.is_string() && value.get<std::string>().empty()) ||
                (value.is_array() && value.empty()))
                continue;
            if (value.is_object()) {
                auto sub = parents;
                sub.push_back(key);
                collect(value, sub, items);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            } else {
                item.inputs.push_back(scalar(value));
            }
            items.push_back(std::move(item));
        }
    }
};

// Every option is registered together with a reader of its resolved value,
// so the lock records exactly what a run used.
class Registry {
public:
    template <class T>
    CLI::Option* option(CLI::App* app, const std::string& name, T& var, const std::string& desc) {
        entries_.emplace_back(name, [&var] { return json(var); });
        return app->add_option("--" + name, var, desc);
    }
    CLI::Option* flag(CLI::App* app, const std::string& name, bool& var, const std::string& desc) {
        entries_.emplace_back(name, [&var] { return json(var); });
        return app->add_flag("--" + name, var, desc);
    }
    json values() const {
        json j = json::object();
        for (const auto& [name, get] : entries_) j[name] = get();
        return j;
    }

private:
    std::vector<std::pair<std::string, std::function<json()>>> entries_;
};

// ---------------------------------------------------------------- outputs

// Files are written to a temporary sibling and renamed into place. Every
// file and directory created by a run is remembered so a failed run can
// remove what it produced.
class Outputs {
public:
    void set_root(fs::path root) { root_ = std::move(root); }
    const fs::path& root() const { return root_; }

    void write(const fs::path& rel, const std::string& content) {
        const fs::path path = root_ / rel;
        make_dirs(path.parent_path());
        const fs::path tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error("cannot write '" + tmp.string() + "'");
            out << content;
            out.close();
            if (!out) throw Error("write failed for '" + tmp.string() + "'");
        }
        std::error_code ec;
        fs::rename(tmp, path, ec);
        if (ec) {
            fs::remove(tmp, ec);
            throw Error("cannot move output into place at '" + path.string() + "'");
        }
        std::lock_guard lock(mu_);
        files_.push_back(path);
    }

    void rollback() {
        std::error_code ec;
        for (auto it = files_.rbegin(); it != files_.rend(); ++it) fs::remove(*it, ec);
        for (auto it = dirs_.rbegin(); it != dirs_.rend(); ++it)
            if (fs::is_directory(*it, ec) && fs::is_empty(*it, ec)) fs::remove(*it, ec);
        files_.clear();
        dirs_.clear();
    }

private:
    void make_dirs(const fs::path& dir) {
        std::lock_guard lock(mu_);
        std::vector<fs::path> missing;
        for (fs::path p = dir; !p.empty(); p = p.parent_path()) {
            std::error_code ec;
            if (fs::exists(p, ec)) {
                if (!fs::is_directory(p, ec)) throw Error("output path '" + p.string() + "' is not a directory");
                break;
            }
            missing.push_back(p);
            if (p == p.parent_path()) break;
        }
        for (auto it = missing.rbegin(); it != missing.rend(); ++it) {
            std::error_code ec;
            fs::create_directory(*it, ec);
            if (ec) throw Error("cannot create output directory '" + it->string() + "': " + ec.message());
            dirs_.push_back(*it);
        }
    }

    fs::path root_;
    std::vector<fs::path> files_;
    std::vector<fs::path> dirs_;
    std::mutex mu_;
};

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw Error(path.string() + ": invalid JSON: " + e.what());
    }
}

// Names become path components; bytes outside [A-Za-z0-9_-] and a leading
// dot are percent-encoded, which keeps the mapping one-to-one.
std::string path_component(const std::string& name) {
    if (name.empty()) return "%";
    std::string out;
    for (std::size_t i = 0; i < name.size(); ++i) {
        const auto c = static_cast<unsigned char>(name[i]);
        const bool plain = std::isalnum(c) || c == '_' || c == '-' || (c == '.' && i > 0);
        if (plain) {
            out += static_cast<char>(c);
        } else {
            static const char* hex = "0123456789ABCDEF";
            out += '%';
            out += hex[c >> 4];
            out += hex[c & 15];
        }
    }
    return out;
}

// Runs body(i) for every unit, in parallel; the first failure (in unit
// order) is rethrown with its unit name.
void for_each_unit(std::size_t n, const std::function<std::string(std::size_t)>& name,
                   const std::function<void(std::size_t)>& body) {
    std::vector<std::string> errors(n);
    const auto count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < count; ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] = e.what();
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!errors[i].empty()) throw Error(name(i) + ": " + errors[i]);
}

// ---------------------------------------------------------------- settings

struct Globals {
    std::string labels;
    std::string out = "rdsig_out";
    int threads = 0;
    std::uint64_t seed = 1;
};

struct GridOptions {
    double lo = 1e-2;
    double hi = 1e3;
    int n = 64;
    double ba_tol = 1e-10;
    int ba_max_iters = 5000;
    std::string prior_mode = "empirical";

    void add(CLI::App* app, Registry& reg) {
        reg.option(app, "grid-lo", lo, "smallest inverse temperature")->capture_default_str();
        reg.option(app, "grid-hi", hi, "largest inverse temperature")->capture_default_str();
        reg.option(app, "grid-n", n, "number of log-spaced grid points")->capture_default_str();
        reg.option(app, "ba-tol", ba_tol, "Blahut-Arimoto sup-norm tolerance on q(y)")->capture_default_str();
        reg.option(app, "ba-max-iters", ba_max_iters, "Blahut-Arimoto sweep limit")->capture_default_str();
        reg.option(app, "prior-mode", prior_mode, "class prior for tracing: empirical or uniform")
            ->check(CLI::IsMember({"empirical", "uniform"}))
            ->capture_default_str();
    }
    LambdaGrid grid() const { return lambda_grid(lo, hi, n); }
    BASettings ba() const {
        BASettings s;
        s.tol = ba_tol;
        s.max_iters = ba_max_iters;
        s.validate();
        return s;
    }
    PriorMode mode() const { return prior_mode == "uniform" ? PriorMode::uniform : PriorMode::empirical; }
};

LabelSet require_labels(const Globals& g) {
    if (g.labels.empty()) throw Error("--labels is required for this command");
    return LabelSet::read_file(g.labels);
}

std::vector<ConfusionCounts> load_blocks(const std::vector<std::string>& inputs, const LabelSet& labels) {
    if (inputs.empty()) throw Error("no --input files given");
    std::vector<TrialRecord> records;
    for (const auto& path : inputs) {
        auto part = load_trials_file(path, labels);
        records.insert(records.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return aggregate_counts(records, labels);
}

std::string block_name(const BlockRef& b) {
    std::string s = "system '" + b.system + "', experiment '" + b.experiment + "'";
    if (!b.condition.empty()) s += ", condition '" + b.condition + "'";
    return s;
}

void check_families(const std::vector<ConfusionCounts>& blocks) {
    std::map<std::string, std::string> family_of;
    for (const auto& b : blocks) {
        auto [it, fresh] = family_of.emplace(b.key.system, b.key.family);
        if (!fresh && it->second != b.key.family)
            throw Error("system '" + b.key.system + "' appears in families '" + it->second + "' and '" +
                        b.key.family + "'");
    }
}

// ---------------------------------------------------------------- fit units

enum class Grouping { per_experiment, per_condition };

Grouping parse_grouping(const std::string& s) {
    if (s == "per-experiment") return Grouping::per_experiment;
    if (s == "per-condition") return Grouping::per_condition;
    throw Error("unknown grouping '" + s + "'");
}

BlockRef unit_key(const BlockRef& block, Grouping g) {
    BlockRef k = block;
    if (g == Grouping::per_experiment) k.condition.clear();
    return k;
}

fs::path unit_dir(const BlockRef& unit) {
    fs::path p = fs::path(path_component(unit.system)) / path_component(unit.experiment);
    if (!unit.condition.empty()) p /= path_component(unit.condition);
    return p;
}

struct FitStore {
    Grouping grouping = Grouping::per_experiment;
    std::map<BlockRef, FitResult> fits;

    // Unit fit covering a block. Family is part of the stored key, so the
    // lookup uses it too.
    const FitResult* find(const BlockRef& block) const {
        auto it = fits.find(unit_key(block, grouping));
        return it == fits.end() ? nullptr : &it->second;
    }
};

fs::path fits_dir(const std::string& fits, const Globals& g) {
    return fits.empty() ? fs::path(g.out) / "fits" : fs::path(fits);
}

FitStore load_fits(const fs::path& dir, const LabelSet& labels) {
    const fs::path index_path = dir / "index.json";
    if (!fs::exists(index_path)) throw Error("no fit artifacts: '" + index_path.string() + "' is missing");
    const json index = read_json(index_path);
    if (index.value("schema_version", 0) != io::kSchemaVersion) throw Error(index_path.string() + ": unsupported schema");
    FitStore store;
    store.grouping = parse_grouping(index.at("grouping").get<std::string>());
    for (const auto& u : index.at("units")) {
        const BlockRef key{u.at("system").get<std::string>(), u.at("family").get<std::string>(),
                           u.at("experiment").get<std::string>(), u.at("condition").get<std::string>()};
        const fs::path rho_path = dir / u.at("path").get<std::string>() / "rho.json";
        if (!fs::exists(rho_path)) throw Error("fit artifact '" + rho_path.string() + "' is missing");
        const json rj = read_json(rho_path);
        if (rj.at("labels").get<std::vector<std::string>>() != labels.names())
            throw Error(rho_path.string() + ": label set differs from --labels");
        try {
            store.fits.emplace(key, io::fit_from_json(rj));
        } catch (const std::exception& e) {
            throw Error(rho_path.string() + ": " + e.what());
        }
    }
    return store;
}

// Every block must be covered by a fit; the error lists all absent units.
void require_coverage(const FitStore& store, const std::vector<ConfusionCounts>& blocks) {
    std::set<BlockRef> absent;
    for (const auto& b : blocks)
        if (!store.find(b.key)) absent.insert(unit_key(b.key, store.grouping));
    if (absent.empty()) return;
    std::string msg = "missing fit artifacts for " + std::to_string(absent.size()) + " unit(s):";
    for (const auto& u : absent) msg += "\n  " + block_name(u);
    throw Error(msg);
}

// ---------------------------------------------------------------- commands

struct IngestCmd {
    std::vector<std::string> input;

    int run(const Globals& g, Outputs& out) const {
        const LabelSet labels = require_labels(g);
        const auto blocks = load_blocks(input, labels);
        std::ostringstream ss;
        write_counts_csv(ss, blocks);
        out.write("counts.csv", ss.str());
        std::cout << "ingested " << blocks.size() << " block(s)\n";
        return kExitOk;
    }
};

struct SynthCmd {
    int k = 4;
    std::int64_t trials = 2000;
    std::vector<std::string> systems = {"sysA:famA:3", "sysB:famB:2"};
    std::vector<std::string> experiments = {"exp1"};
    std::vector<std::string> conditions = {"c0", "c1", "c2"};
    double decay = 0.7;
    double cost_lo = 0.2;
    double cost_hi = 2.0;

    struct SystemSpec {
        std::string name;
        std::string family;
        double lambda = 1.0;
    };

    static SystemSpec parse_system(const std::string& s) {
        const auto a = s.find(':');
        const auto b = a == std::string::npos ? a : s.find(':', a + 1);
        if (b == std::string::npos) throw Error("--system expects name:family:lambda, got '" + s + "'");
        SystemSpec spec{s.substr(0, a), s.substr(a + 1, b - a - 1), 0.0};
        const std::string lam = s.substr(b + 1);
        std::size_t used = 0;
        try {
            spec.lambda = std::stod(lam, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != lam.size() || !(spec.lambda > 0) || spec.name.empty() || spec.family.empty())
            throw Error("--system expects name:family:lambda with lambda > 0, got '" + s + "'");
        return spec;
    }

    // Seeds for nested indices, folded through splitmix64.
    static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
        std::uint64_t h = splitmix64(seed);
        for (auto v : path) h = splitmix64(h ^ splitmix64(v + 0x51ED27ULL));
        return h;
    }

    int run(const Globals& g, Outputs& out) const {
        const LabelSet labels = g.labels.empty() ? numbered_labels(static_cast<std::size_t>(k))
                                                 : LabelSet::read_file(g.labels);
        if (trials <= 0) throw Error("--trials must be positive");
        if (systems.empty() || experiments.empty() || conditions.empty())
            throw Error("need at least one system, experiment and condition");
        if (!(decay > 0)) throw Error("--decay must be positive");
        std::vector<SystemSpec> specs;
        for (const auto& s : systems) specs.push_back(parse_system(s));

        const std::size_t kk = labels.size();
        const Vector prior = Vector::Constant(static_cast<Eigen::Index>(kk), 1.0 / static_cast<double>(kk));
        std::vector<ConfusionCounts> blocks;
        json truth;
        truth["schema_version"] = io::kSchemaVersion;
        truth["generator"] = kGeneratorName;
        truth["seed"] = g.seed;
        truth["labels"] = labels.names();
        truth["experiments"] = json::array();
        truth["observers"] = json::array();
        for (std::size_t e = 0; e < experiments.size(); ++e) {
            const CostMatrix rho = random_cost_matrix(kk, derive(g.seed, {0, e}), cost_lo, cost_hi);
            truth["experiments"].push_back({{"name", experiments[e]}, {"rho", io::matrix_json(rho.values())}});
            for (std::size_t s = 0; s < specs.size(); ++s) {
                double lambda = specs[s].lambda;
                for (std::size_t c = 0; c < conditions.size(); ++c) {
                    const std::uint64_t obs_seed = derive(g.seed, {1, e, s, c});
                    const auto obs = make_observer(rho, lambda, prior, obs_seed);
                    const BlockRef key{specs[s].name, specs[s].family, experiments[e], conditions[c]};
                    blocks.push_back(sample_counts(obs, trials, labels, key));
                    truth["observers"].push_back({{"system", key.system},
                                                  {"family", key.family},
                                                  {"experiment", key.experiment},
                                                  {"condition", key.condition},
                                                  {"lambda", lambda},
                                                  {"seed", obs_seed}});
                    lambda *= decay;
                }
            }
        }
        std::sort(blocks.begin(), blocks.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
        for (std::size_t i = 1; i < blocks.size(); ++i)
            if (blocks[i].key == blocks[i - 1].key) throw Error("duplicate block: " + block_name(blocks[i].key));

        std::string label_text;
        for (const auto& l : labels.names()) label_text += l + "\n";
        std::ostringstream counts;
        write_counts_csv(counts, blocks);
        out.write("labels.txt", label_text);
        out.write("counts.csv", counts.str());
        out.write("truth.json", dump_json(truth));
        std::cout << "synthesized " << blocks.size() << " block(s)\n";
        return kExitOk;
    }
};

struct FitCmd {
    std::vector<std::string> input;
    std::string grouping = "per-experiment";
    double tau_sym = 1.0;
    double tau_asym = 10.0;
    int max_iters = 500;
    GridOptions grid;

    int run(const Globals& g, Outputs& out) const {
        const LabelSet labels = require_labels(g);
        const Grouping grp = parse_grouping(grouping);
        PriorConfig prior;
        prior.tau_sym = tau_sym;
        prior.tau_asym = tau_asym;
        prior.validate();
        FitOptions opt;
        opt.optimizer.max_iters = max_iters;
        const LambdaGrid lambdas = grid.grid();
        const BASettings ba = grid.ba();

        const auto blocks = load_blocks(input, labels);
        check_families(blocks);
        std::map<BlockRef, std::vector<const ConfusionCounts*>> groups;
        for (const auto& b : blocks) groups[unit_key(b.key, grp)].push_back(&b);
        std::vector<BlockRef> units;
        for (const auto& [key, parts] : groups) units.push_back(key);

        std::vector<FitResult> fits(units.size());
        std::vector<RDCurve> curves(units.size());
        for_each_unit(
            units.size(), [&](std::size_t i) { return block_name(units[i]); },
            [&](std::size_t i) {
                const ConfusionCounts pooled = pool_counts(groups[units[i]], units[i]);
                fits[i] = fit_cost_matrix(pooled, prior, opt);
                laplace_stderr(fits[i], pooled);
                curves[i] = trace_curve(fits[i].rho_map, channel_from_counts(pooled, grid.mode()).prior, lambdas, ba);
            });

        bool flagged = false;
        json index;
        index["schema_version"] = io::kSchemaVersion;
        index["grouping"] = grouping;
        index["units"] = json::array();
        for (std::size_t i = 0; i < units.size(); ++i) {
            const fs::path dir = fs::path("fits") / unit_dir(units[i]);
            std::ostringstream curve_csv;
            io::write_curve_csv(curve_csv, curves[i]);
            out.write(dir / "rho.json", dump_json(io::fit_json(fits[i], labels, units[i])));
            out.write(dir / "curve.csv", curve_csv.str());
            out.write(dir / "curve.json", dump_json(io::curve_json(curves[i], &labels)));
            const bool unit_flagged = !fits[i].converged || !fits[i].flags.empty();
            flagged = flagged || unit_flagged;
            index["units"].push_back({{"system", units[i].system},
                                      {"family", units[i].family},
                                      {"experiment", units[i].experiment},
                                      {"condition", units[i].condition},
                                      {"path", unit_dir(units[i]).generic_string()},
                                      {"converged", fits[i].converged},
                                      {"flags", fits[i].flags.items()}});
            if (unit_flagged)
                std::cerr << "warning: " << block_name(units[i]) << ": " << fits[i].flags.joined() << "\n";
        }
        out.write(fs::path("fits") / "index.json", dump_json(index));
        std::cout << "fitted " << units.size() << " unit(s)\n";
        return flagged ? kExitFlagged : kExitOk;
    }
};

// Curves per system x block under the covering unit's cost matrix.
std::vector<RDCurve> block_curves(const std::vector<ConfusionCounts>& blocks, const FitStore& store,
                                  const GridOptions& grid) {
    const LambdaGrid lambdas = grid.grid();
    const BASettings ba = grid.ba();
    std::vector<RDCurve> curves(blocks.size());
    for_each_unit(
        blocks.size(), [&](std::size_t i) { return block_name(blocks[i].key); },
        [&](std::size_t i) {
            const FitResult& fit = *store.find(blocks[i].key);
            curves[i] = trace_curve(fit.rho_map, channel_from_counts(blocks[i], grid.mode()).prior, lambdas, ba);
        });
    return curves;
}

bool curve_converged(const RDCurve& c) {
    return std::all_of(c.points.begin(), c.points.end(), [](const RDPoint& p) { return p.converged; });
}

fs::path block_dir(const BlockRef& b) {
    return fs::path(path_component(b.system)) / path_component(b.experiment) / path_component(b.condition);
}

struct TraceCmd {
    std::vector<std::string> input;
    std::string fits;
    GridOptions grid;

    int run(const Globals& g, Outputs& out) const {
        const LabelSet labels = require_labels(g);
        const auto blocks = load_blocks(input, labels);
        const FitStore store = load_fits(fits_dir(fits, g), labels);
        require_coverage(store, blocks);
        const auto curves = block_curves(blocks, store, grid);
        bool flagged = false;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const fs::path dir = fs::path("curves") / block_dir(blocks[i].key);
            std::ostringstream csv_text;
            io::write_curve_csv(csv_text, curves[i]);
            json cj = io::curve_json(curves[i], &labels);
            cj["block"] = {{"system", blocks[i].key.system},
                           {"family", blocks[i].key.family},
                           {"experiment", blocks[i].key.experiment},
                           {"condition", blocks[i].key.condition}};
            out.write(dir / "curve.csv", csv_text.str());
            out.write(dir / "curve.json", dump_json(cj));
            flagged = flagged || !curve_converged(curves[i]);
        }
        std::cout << "traced " << blocks.size() << " curve(s)\n";
        return flagged ? kExitFlagged : kExitOk;
    }
};

struct SignaturesCmd {
    std::vector<std::string> input;
    std::string fits;
    std::string normalize_by = "experiment";
    int bins = kDefaultBins;
    GridOptions grid;

    int run(const Globals& g, Outputs& out) const {
        const LabelSet labels = require_labels(g);
        if (bins < 1) throw Error("--bins must be at least 1");
        const auto blocks = load_blocks(input, labels);
        check_families(blocks);
        const FitStore store = load_fits(fits_dir(fits, g), labels);
        require_coverage(store, blocks);
        const auto curves = block_curves(blocks, store, grid);

        SignatureTable table(blocks.size());
        std::vector<bool> usable(blocks.size(), false);
        std::vector<RDSignature> sigs;
        std::vector<std::string> groups;
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto& key = blocks[i].key;
            SignatureRow& row = table[i];
            row.system = key.system;
            row.family = key.family;
            row.block = {key.experiment, key.condition};
            row.accuracy = accuracy(channel_from_counts(blocks[i], PriorMode::empirical));
            const FitResult& fit = *store.find(key);
            row.flags.merge(fit.flags);
            if (!fit.converged) row.flags.set("fit_not_converged");
            if (!curve_converged(curves[i])) row.flags.set("ba_not_converged");
            const double nan = std::numeric_limits<double>::quiet_NaN();
            row.beta_median = row.beta_mean = row.kappa = row.auc = row.beta_n = row.kappa_n = nan;
            try {
                const RDSignature s = extract_signature(curves[i], row.accuracy);
                row.beta_median = s.beta_median;
                row.beta_mean = s.beta_mean;
                row.kappa = s.kappa;
                row.auc = s.auc;
                usable[i] = true;
                sigs.push_back(s);
                groups.push_back(normalize_by == "all" ? std::string("all") : key.experiment);
                rows.push_back(i);
            } catch (const Error&) {
                row.flags.set("degenerate_frontier");
            }
        }
        const auto normalized = normalize_signatures(sigs, groups);
        for (std::size_t n = 0; n < rows.size(); ++n) {
            SignatureRow& row = table[rows[n]];
            row.beta_n = normalized[n].beta_n;
            row.kappa_n = normalized[n].kappa_n;
            row.flags.merge(normalized[n].flags);
        }

        std::vector<FitDiagnostics> diags(blocks.size());
        for_each_unit(
            blocks.size(), [&](std::size_t i) { return block_name(blocks[i].key); },
            [&](std::size_t i) {
                const FitResult& fit = *store.find(blocks[i].key);
                if (!fit.converged) {
                    diags[i].flags.set("fit_not_converged");
                    const double nan = std::numeric_limits<double>::quiet_NaN();
                    diags[i].rmse_conf_prob = diags[i].rmse_emp = diags[i].rmse_genexp = diags[i].genexp_slope = nan;
                    return;
                }
                diags[i] = rmse_diagnostics(blocks[i], fit, inference_ba_settings(), bins);
            });

        std::ostringstream sig_csv;
        io::write_signatures_csv(sig_csv, table);
        std::ostringstream diag_csv;
        diag_csv << "system,family,experiment,condition,rmse_conf_prob,rmse_emp,rmse_genexp,genexp_slope,flags\n";
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto& k = blocks[i].key;
            const auto& d = diags[i];
            diag_csv << csv::join({k.system, k.family, k.experiment, k.condition, csv::format_finite(d.rmse_conf_prob),
                                   csv::format_finite(d.rmse_emp), csv::format_finite(d.rmse_genexp),
                                   csv::format_finite(d.genexp_slope), d.flags.joined()})
                     << '\n';
        }
        out.write("signatures.csv", sig_csv.str());
        out.write("diagnostics.csv", diag_csv.str());

        const bool flagged = std::any_of(table.begin(), table.end(), [](const auto& r) { return !r.flags.empty(); });
        std::cout << "wrote " << table.size() << " signature row(s)\n";
        return flagged ? kExitFlagged : kExitOk;
    }
};

struct Contrast {
    std::string a;
    std::string b;
    int level = 1;
    std::vector<std::string> metrics;
    std::string fdr_set;
    std::size_t line = 0;
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

// Contrasts CSV: a,b,level,metrics,fdr_set. Metrics are ';'-separated.
// Level 1 compares systems, level 2 families; level 3 fits the
// fixed-effects regressions with `a` as the reference family and b empty.
std::vector<Contrast> read_contrasts(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open contrasts file '" + path.string() + "'");
    csv::Reader reader(in);
    const std::vector<std::string> cols = {"a", "b", "level", "metrics", "fdr_set"};
    auto header = reader.next();
    if (!header || *header != cols) throw Error(path.string() + ": header must be a,b,level,metrics,fdr_set");
    std::vector<Contrast> out;
    while (auto row = reader.next()) {
        const std::string ctx = path.string() + ": row " + std::to_string(reader.line());
        if (row->size() != cols.size()) throw Error(ctx + ": expected 5 fields");
        Contrast c;
        c.a = (*row)[0];
        c.b = (*row)[1];
        c.fdr_set = (*row)[4];
        c.line = reader.line();
        const std::string& lv = (*row)[2];
        if (lv != "1" && lv != "2" && lv != "3") throw Error(ctx + ", field 'level': expected 1, 2 or 3, got '" + lv + "'");
        c.level = lv[0] - '0';
        for (const auto& m : split((*row)[3], ';')) {
            if (!is_known_metric(m)) throw Error(ctx + ", field 'metrics': unknown metric '" + m + "'");
            c.metrics.push_back(m);
        }
        if (c.a.empty()) throw Error(ctx + ", field 'a': empty");
        if (c.level < 3 && c.b.empty()) throw Error(ctx + ", field 'b': empty");
        if (c.level == 3 && !c.b.empty()) throw Error(ctx + ", field 'b': must be empty for level 3");
        out.push_back(std::move(c));
    }
    if (out.empty()) throw Error(path.string() + ": no contrasts");
    return out;
}

struct CompareCmd {
    std::string signatures;
    std::string contrasts;
    std::string wilcoxon = "auto";

    int run(const Globals& g, Outputs& out) const {
        const fs::path sig_path = signatures.empty() ? fs::path(g.out) / "signatures.csv" : fs::path(signatures);
        if (contrasts.empty()) throw Error("--contrasts is required");
        SignatureTable table;
        {
            std::ifstream in(sig_path);
            if (!in) throw Error("cannot open signatures table '" + sig_path.string() + "'");
            try {
                table = io::read_signatures_csv(in);
            } catch (const std::exception& e) {
                throw Error(sig_path.string() + ": " + e.what());
            }
        }
        const auto list = read_contrasts(contrasts);
        const WilcoxonMode mode = wilcoxon == "exact"    ? WilcoxonMode::exact
                                  : wilcoxon == "normal" ? WilcoxonMode::normal
                                                         : WilcoxonMode::automatic;
        std::set<std::string> systems, families;
        for (const auto& r : table) {
            systems.insert(r.system);
            families.insert(r.family);
        }

        std::vector<PairedTestResult> results;
        json regressions = json::array();
        for (const auto& c : list) {
            const std::string ctx = fs::path(contrasts).string() + ": row " + std::to_string(c.line);
            const auto& known = c.level == 1 ? systems : families;
            const char* kind = c.level == 1 ? "system" : "family";
            for (const auto* id : {&c.a, &c.b}) {
                if (id->empty()) continue;
                if (!known.count(*id)) throw Error(ctx + ": unknown " + std::string(kind) + " '" + *id + "'");
            }
            for (const auto& metric : c.metrics) {
                if (c.level == 3) {
                    try {
                        json entry;
                        entry["reference_family"] = c.a;
                        entry["outcome"] = metric;
                        entry["fdr_set"] = c.fdr_set;
                        entry["fixed_effects"] = io::regression_json(fe_regression(table, metric, c.a));
                        entry["interaction"] = io::nested_json(nested_interaction_test(table, metric, c.a));
                        regressions.push_back(std::move(entry));
                    } catch (const std::exception& e) {
                        throw Error(ctx + ", metric '" + metric + "': " + e.what());
                    }
                    continue;
                }
                try {
                    auto r = paired_compare(c.a, c.b, metric, table,
                                            c.level == 1 ? PairingLevel::system : PairingLevel::family, mode);
                    r.fdr_set = c.fdr_set;
                    results.push_back(std::move(r));
                } catch (const std::exception& e) {
                    throw Error(ctx + ", metric '" + metric + "': " + e.what());
                }
            }
        }
        assign_q_values(results);

        std::ostringstream cmp_csv;
        io::write_comparison_csv(cmp_csv, results);
        out.write("comparison.csv", cmp_csv.str());
        out.write("comparison.json", dump_json(io::comparison_json(results)));
        if (!regressions.empty()) {
            json rj;
            rj["schema_version"] = io::kSchemaVersion;
            rj["regressions"] = std::move(regressions);
            out.write("regression.json", dump_json(rj));
        }
        const bool flagged = std::any_of(results.begin(), results.end(),
                                         [](const auto& r) { return !r.ok() || !r.flags.empty(); });
        std::cout << "ran " << results.size() << " paired test(s)\n";
        return flagged ? kExitFlagged : kExitOk;
    }
};

std::string severity_svg(const std::vector<std::string>& levels,
                         const std::vector<std::pair<std::string, std::vector<double>>>& series) {
    const double w = 640, h = 400, left = 70, right = 150, top = 30, bottom = 60;
    double lo = 0, hi = 0;
    bool any = false;
    for (const auto& [name, ys] : series)
        for (double y : ys)
            if (std::isfinite(y)) {
                lo = any ? std::min(lo, y) : y;
                hi = any ? std::max(hi, y) : y;
                any = true;
            }
    if (!any || hi - lo < 1e-12) {
        lo -= 1;
        hi += 1;
    }
    const auto xpos = [&](std::size_t i) {
        return levels.size() < 2 ? left + (w - left - right) / 2
                                 : left + (w - left - right) * static_cast<double>(i) /
                                              static_cast<double>(levels.size() - 1);
    };
    const auto ypos = [&](double y) { return top + (h - top - bottom) * (hi - y) / (hi - lo); };
    const auto f = [](double v) { return csv::format_double(std::round(v * 100) / 100); };
    const auto esc = [](const std::string& s) {
        std::string o;
        for (char c : s) {
            if (c == '<') o += "&lt;";
            else if (c == '>') o += "&gt;";
            else if (c == '&') o += "&amp;";
            else if (c == '"') o += "&quot;";
            else o += c;
        }
        return o;
    };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f(w) << "\" height=\"" << f(h) << "\">\n";
    s << "<line x1=\"" << f(left) << "\" y1=\"" << f(h - bottom) << "\" x2=\"" << f(w - right) << "\" y2=\""
      << f(h - bottom) << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << f(left) << "\" y1=\"" << f(top) << "\" x2=\"" << f(left) << "\" y2=\"" << f(h - bottom)
      << "\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < levels.size(); ++i)
        s << "<text x=\"" << f(xpos(i)) << "\" y=\"" << f(h - bottom + 18) << "\" text-anchor=\"middle\">"
          << esc(levels[i]) << "</text>\n";
    s << "<text x=\"" << f(left - 8) << "\" y=\"" << f(ypos(hi)) << "\" text-anchor=\"end\">" << f(hi) << "</text>\n";
    s << "<text x=\"" << f(left - 8) << "\" y=\"" << f(ypos(lo)) << "\" text-anchor=\"end\">" << f(lo) << "</text>\n";
    s << "<text x=\"" << f((left + w - right) / 2) << "\" y=\"" << f(h - 15)
      << "\" text-anchor=\"middle\">noise level</text>\n";
    s << "<text x=\"20\" y=\"" << f((top + h - bottom) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 20 "
      << f((top + h - bottom) / 2) << ")\">beta</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& [name, ys] = series[k];
        const char* color = palette[k % (sizeof(palette) / sizeof(palette[0]))];
        std::string pts;
        for (std::size_t i = 0; i < ys.size(); ++i) {
            if (!std::isfinite(ys[i])) continue;
            if (!pts.empty()) pts += ' ';
            pts += f(xpos(i)) + "," + f(ypos(ys[i]));
        }
        s << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << color << "\"/>\n";
        s << "<text x=\"" << f(w - right + 10) << "\" y=\"" << f(top + 18 * static_cast<double>(k + 1)) << "\" fill=\""
          << color << "\">" << esc(name) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

struct SeverityCmd {
    std::vector<std::string> input;
    std::string fits;
    std::vector<std::string> order;
    double alpha = 0.5;
    bool svg = false;

    int run(const Globals& g, Outputs& out) const {
        const LabelSet labels = require_labels(g);
        if (order.empty()) throw Error("--order is required (conditions from least to most severe)");
        if (!(alpha >= 0)) throw Error("--alpha must be nonnegative");
        const auto blocks = load_blocks(input, labels);

        std::set<std::string> present;
        for (const auto& b : blocks) present.insert(b.key.condition);
        std::map<std::string, std::size_t> rank;
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (!present.count(order[i])) throw Error("unknown condition '" + order[i] + "' in --order");
            if (!rank.emplace(order[i], i).second) throw Error("condition '" + order[i] + "' repeated in --order");
        }

        const FitStore store = load_fits(fits_dir(fits, g), labels);

        // Series per (system, family, experiment), levels in declared order.
        std::map<BlockRef, std::vector<const ConfusionCounts*>> series;
        for (const auto& b : blocks)
            if (rank.count(b.key.condition)) series[unit_key(b.key, Grouping::per_experiment)].push_back(&b);
        std::set<std::string> experiments;
        for (const auto& [key, parts] : series) experiments.insert(key.experiment);

        std::ostringstream table;
        std::ostringstream plot;
        table << "system,family,experiment,level,beta,flags\n";
        plot << "system,level,beta\n";
        std::vector<std::pair<std::string, std::vector<double>>> lines;
        bool flagged = false;
        for (auto& [key, parts] : series) {
            std::sort(parts.begin(), parts.end(),
                      [&](const auto* a, const auto* b) { return rank[a->key.condition] < rank[b->key.condition]; });
            // Per-condition fits: the least severe level's matrix serves the series.
            const FitResult* fit = store.find(parts.front()->key);
            if (!fit) throw Error("missing fit artifacts for " + block_name(unit_key(parts.front()->key, store.grouping)));
            std::vector<ConfusionCounts> levels;
            for (const auto* p : parts) levels.push_back(*p);
            const auto pts = severity_beta(levels, fit->rho_map, alpha);
            const std::string name = experiments.size() > 1 ? key.system + "@" + key.experiment : key.system;
            std::vector<double> ys(order.size(), std::numeric_limits<double>::quiet_NaN());
            for (const auto& pt : pts) {
                table << csv::join({key.system, key.family, key.experiment, pt.level, csv::format_finite(pt.beta),
                                    pt.flags.joined()})
                      << '\n';
                plot << csv::join({name, pt.level, csv::format_finite(pt.beta)}) << '\n';
                ys[rank[pt.level]] = pt.beta;
                flagged = flagged || !pt.flags.empty();
            }
            lines.emplace_back(name, std::move(ys));
        }
        out.write("severity.csv", table.str());
        out.write("severity_plot.csv", plot.str());
        if (svg) out.write("severity.svg", severity_svg(order, lines));
        std::cout << "severity slopes for " << series.size() << " series\n";
        return flagged ? kExitFlagged : kExitOk;
    }
};

// Summary of whatever artifacts exist in a run directory.
struct ReportCmd {
    std::string from;

    int run(const Globals& g, Outputs& out) const {
        const fs::path dir = from.empty() ? fs::path(g.out) : fs::path(from);
        if (!fs::is_directory(dir)) throw Error("run directory '" + dir.string() + "' does not exist");
        std::ostringstream md;
        md << "# rdsig report\n\n";
        bool found = false;

        if (fs::exists(dir / "fits" / "index.json")) {
            found = true;
            const json index = read_json(dir / "fits" / "index.json");
            md << "## Fits (" << index.at("grouping").get<std::string>() << ")\n\n";
            md << "| system | family | experiment | condition | converged | flags |\n|---|---|---|---|---|---|\n";
            for (const auto& u : index.at("units")) {
                std::string flags;
                for (const auto& f : u.at("flags")) flags += (flags.empty() ? "" : ";") + f.get<std::string>();
                md << "| " << u.at("system").get<std::string>() << " | " << u.at("family").get<std::string>() << " | "
                   << u.at("experiment").get<std::string>() << " | " << u.at("condition").get<std::string>() << " | "
                   << (u.at("converged").get<bool>() ? "yes" : "no") << " | " << flags << " |\n";
            }
            md << "\n";
        }
        if (fs::exists(dir / "signatures.csv")) {
            found = true;
            std::ifstream in(dir / "signatures.csv");
            const auto table = io::read_signatures_csv(in);
            std::map<std::string, std::vector<const SignatureRow*>> by_system;
            for (const auto& r : table) by_system[r.system].push_back(&r);
            md << "## Signatures (block medians)\n\n";
            md << "| system | blocks | accuracy | beta_median | kappa | auc |\n|---|---|---|---|---|---|\n";
            for (const auto& [sys, rows] : by_system) {
                const auto med = [&](auto get) {
                    std::vector<double> v;
                    for (const auto* r : rows)
                        if (std::isfinite(get(*r))) v.push_back(get(*r));
                    return v.empty() ? std::string() : csv::format_double(median(v));
                };
                md << "| " << sys << " | " << rows.size() << " | " << med([](const auto& r) { return r.accuracy; })
                   << " | " << med([](const auto& r) { return r.beta_median; }) << " | "
                   << med([](const auto& r) { return r.kappa; }) << " | " << med([](const auto& r) { return r.auc; })
                   << " |\n";
            }
            md << "\n";
        }
        for (const auto& [file, title] : {std::pair{"comparison.csv", "Paired comparisons"},
                                          std::pair{"severity.csv", "Severity slopes"}}) {
            if (!fs::exists(dir / file)) continue;
            found = true;
            std::ifstream in(dir / file);
            csv::Reader reader(in);
            auto header = reader.next();
            if (!header) continue;
            md << "## " << title << "\n\n|";
            for (const auto& h : *header) md << ' ' << h << " |";
            md << "\n|";
            for (std::size_t i = 0; i < header->size(); ++i) md << "---|";
            md << "\n";
            while (auto row = reader.next()) {
                md << "|";
                for (const auto& f : *row) md << ' ' << f << " |";
                md << "\n";
            }
            md << "\n";
        }
        if (!found) throw Error("no artifacts found in '" + dir.string() + "'");
        out.write("report.md", md.str());
        std::cout << "wrote report.md\n";
        return kExitOk;
    }
};

std::string absolute(const std::string& p) {
    return p.empty() ? p : fs::absolute(p).lexically_normal().string();
}

void absolutize(std::vector<std::string>& paths) {
    for (auto& p : paths) p = absolute(p);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Behavioral rate-distortion signatures: channels, cost inference, frontiers and statistics"};
    app.require_subcommand(1);
    app.fallthrough();
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON run config (a config.lock.json from an earlier run)");

    Globals g;
    Registry globals;
    globals.option(&app, "labels", g.labels, "labels file, one class name per line");
    globals.option(&app, "out", g.out, "output directory")->capture_default_str();
    globals.option(&app, "threads", g.threads, "worker threads (0 = all cores)")->capture_default_str();
    globals.option(&app, "seed", g.seed, "seed for synthetic data")->capture_default_str();

    std::map<std::string, Registry> regs;
    std::map<std::string, std::function<int(Outputs&)>> runners;
    std::vector<std::function<void()>> resolvers;

    IngestCmd ingest;
    {
        auto* sub = app.add_subcommand("ingest", "aggregate trial CSV files into a counts CSV");
        auto& r = regs["ingest"];
        r.option(sub, "input", ingest.input, "trial or counts CSV files");
        runners["ingest"] = [&](Outputs& o) { return ingest.run(g, o); };
        resolvers.push_back([&] { absolutize(ingest.input); });
    }
    SynthCmd synth;
    {
        auto* sub = app.add_subcommand("synth", "sample counts from rate-distortion optimal observers");
        auto& r = regs["synth"];
        r.option(sub, "k", synth.k, "number of classes when --labels is not given")->capture_default_str();
        r.option(sub, "trials", synth.trials, "trials per class and block")->capture_default_str();
        r.option(sub, "system", synth.systems, "observer as name:family:lambda (repeatable)");
        r.option(sub, "experiment", synth.experiments, "experiment names (one cost matrix each)");
        r.option(sub, "conditions", synth.conditions, "conditions in increasing severity");
        r.option(sub, "decay", synth.decay, "inverse temperature factor per condition step")->capture_default_str();
        r.option(sub, "cost-lo", synth.cost_lo, "smallest raw off-diagonal cost")->capture_default_str();
        r.option(sub, "cost-hi", synth.cost_hi, "largest raw off-diagonal cost")->capture_default_str();
        runners["synth"] = [&](Outputs& o) { return synth.run(g, o); };
    }
    FitCmd fit;
    {
        auto* sub = app.add_subcommand("fit", "infer cost matrices and trace their frontiers");
        auto& r = regs["fit"];
        r.option(sub, "input", fit.input, "counts CSV files");
        r.option(sub, "grouping", fit.grouping, "fit unit: per-experiment or per-condition")
            ->check(CLI::IsMember({"per-experiment", "per-condition"}))
            ->capture_default_str();
        r.option(sub, "tau-sym", fit.tau_sym, "prior precision on the symmetric part")->capture_default_str();
        r.option(sub, "tau-asym", fit.tau_asym, "prior precision on the antisymmetric part")->capture_default_str();
        r.option(sub, "max-iters", fit.max_iters, "optimizer iteration limit")->capture_default_str();
        fit.grid.add(sub, r);
        runners["fit"] = [&](Outputs& o) { return fit.run(g, o); };
        resolvers.push_back([&] { absolutize(fit.input); });
    }
    TraceCmd trace;
    {
        auto* sub = app.add_subcommand("trace", "trace one frontier per system and block from fitted costs");
        auto& r = regs["trace"];
        r.option(sub, "input", trace.input, "counts CSV files");
        r.option(sub, "fits", trace.fits, "fit artifact directory (default OUT/fits)");
        trace.grid.add(sub, r);
        runners["trace"] = [&](Outputs& o) { return trace.run(g, o); };
        resolvers.push_back([&] {
            absolutize(trace.input);
            trace.fits = absolute(trace.fits);
        });
    }
    SignaturesCmd sigs;
    {
        auto* sub = app.add_subcommand("signatures", "signature table (slope, curvature, area) per system and block");
        auto& r = regs["signatures"];
        r.option(sub, "input", sigs.input, "counts CSV files");
        r.option(sub, "fits", sigs.fits, "fit artifact directory (default OUT/fits)");
        r.option(sub, "normalize-by", sigs.normalize_by, "normalization group: experiment or all")
            ->check(CLI::IsMember({"experiment", "all"}))
            ->capture_default_str();
        r.option(sub, "bins", sigs.bins, "bins for the generalization-gradient diagnostics")->capture_default_str();
        sigs.grid.add(sub, r);
        runners["signatures"] = [&](Outputs& o) { return sigs.run(g, o); };
        resolvers.push_back([&] {
            absolutize(sigs.input);
            sigs.fits = absolute(sigs.fits);
        });
    }
    CompareCmd compare;
    {
        auto* sub = app.add_subcommand("compare", "block-paired tests, FDR control and fixed-effects regressions");
        auto& r = regs["compare"];
        r.option(sub, "signatures", compare.signatures, "signatures table (default OUT/signatures.csv)");
        r.option(sub, "contrasts", compare.contrasts, "contrasts CSV: a,b,level,metrics,fdr_set");
        r.option(sub, "wilcoxon", compare.wilcoxon, "signed-rank p-values: auto, exact or normal")
            ->check(CLI::IsMember({"auto", "exact", "normal"}))
            ->capture_default_str();
        runners["compare"] = [&](Outputs& o) { return compare.run(g, o); };
        resolvers.push_back([&] {
            compare.signatures = absolute(compare.signatures);
            compare.contrasts = absolute(compare.contrasts);
        });
    }
    SeverityCmd severity;
    {
        auto* sub = app.add_subcommand("severity", "log-probability slope per noise level");
        auto& r = regs["severity"];
        r.option(sub, "input", severity.input, "counts CSV files");
        r.option(sub, "fits", severity.fits, "fit artifact directory (default OUT/fits)");
        r.option(sub, "order", severity.order, "conditions from least to most severe");
        r.option(sub, "alpha", severity.alpha, "additive smoothing pseudocount")->capture_default_str();
        r.flag(sub, "svg", severity.svg, "also write severity.svg");
        runners["severity"] = [&](Outputs& o) { return severity.run(g, o); };
        resolvers.push_back([&] {
            absolutize(severity.input);
            severity.fits = absolute(severity.fits);
        });
    }
    ReportCmd report;
    {
        auto* sub = app.add_subcommand("report", "markdown summary of a run directory");
        auto& r = regs["report"];
        r.option(sub, "from", report.from, "run directory to summarize (default OUT)");
        runners["report"] = [&](Outputs& o) { return report.run(g, o); };
        resolvers.push_back([&] { report.from = absolute(report.from); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitError;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    Outputs outputs;
    try {
        if (g.threads < 0) throw Error("--threads must be nonnegative");
        if (g.threads > 0) omp_set_num_threads(g.threads);
        g.labels = absolute(g.labels);
        g.out = absolute(g.out);
        for (auto& resolve : resolvers) resolve();
        outputs.set_root(g.out);

        json lock = globals.values();
        lock["schema_version"] = io::kSchemaVersion;
        lock["command"] = command;
        lock[command] = regs[command].values();
        // The latest command's lock sits at the top; every command's lock is
        // also kept under locks/ so a shared run directory can replay each stage.
        outputs.write("config.lock.json", dump_json(lock));
        outputs.write(fs::path("locks") / (command + ".config.lock.json"), dump_json(lock));

        return runners[command](outputs);
    } catch (const std::exception& e) {
        outputs.rollback();
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
}
