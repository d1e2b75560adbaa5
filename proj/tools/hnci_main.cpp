// hnci: confidence intervals for the average direct treatment effect on the
// treated under network interference, and Monte Carlo confidence sets for the
// interference neighborhood size.
//
// Subcommands: validate, adet, k0, simulate. Reports go to stdout as JSON
// (CSV for study tables); diagnostics go to stderr. Exit codes: 0 success,
// 1 input/parse errors, 2 assumption violations.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "hnci/estimators.hpp"
#include "hnci/k0infer.hpp"
#include "hnci/sfl.hpp"
#include "hnci/simharness.hpp"

using nlohmann::json;

namespace {

constexpr int kExitError = 1;
constexpr int kExitAssumption = 2;

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::uint64_t h = 1469598103934665603ULL;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

std::string input_hash(const std::string& nodes, const std::string& edges) {
    std::ostringstream os;
    os << std::hex << (fnv1a_file(nodes) ^ (fnv1a_file(edges) * 0x9e3779b97f4a7c15ULL));
    return os.str();
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

struct NodeTable {
    std::vector<std::uint8_t> z;
    std::vector<double> y;
    std::vector<double> p;
};

NodeTable read_nodes(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw hnci::parse_error("cannot open nodes file: " + path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw hnci::parse_error(path + ": empty file");
    ++lineno;
    if (split_fields(line) != std::vector<std::string>{"node_id", "z", "y", "p"})
        throw hnci::parse_error(path + ":1: expected header 'node_id,z,y,p'");

    struct Row {
        std::uint8_t z;
        double y, p;
    };
    std::vector<std::optional<Row>> rows;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_fields(line);
        const std::string where = path + ":" + std::to_string(lineno);
        if (f.size() != 4) throw hnci::parse_error(where + ": expected 4 fields");
        try {
            const std::size_t id = std::stoul(f[0]);
            const int zv = std::stoi(f[1]);
            if (zv != 0 && zv != 1) throw hnci::parse_error(where + ": z must be 0 or 1");
            const Row row{static_cast<std::uint8_t>(zv), std::stod(f[2]), std::stod(f[3])};
            if (id >= rows.size()) rows.resize(id + 1);
            if (rows[id]) throw hnci::parse_error(where + ": duplicate node_id " + f[0]);
            rows[id] = row;
        } catch (const std::invalid_argument&) {
            throw hnci::parse_error(where + ": malformed number");
        } catch (const std::out_of_range&) {
            throw hnci::parse_error(where + ": number out of range");
        }
    }
    NodeTable t;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i])
            throw hnci::schema_error(path + ": node ids must be dense 0..n-1; missing " +
                                     std::to_string(i));
        t.z.push_back(rows[i]->z);
        t.y.push_back(rows[i]->y);
        t.p.push_back(rows[i]->p);
    }
    if (t.z.empty()) throw hnci::schema_error(path + ": no nodes");
    return t;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> read_edges(const std::string& path,
                                                                std::size_t n) {
    std::ifstream in(path);
    if (!in) throw hnci::parse_error("cannot open edges file: " + path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw hnci::parse_error(path + ": empty file");
    ++lineno;
    if (split_fields(line) != std::vector<std::string>{"u", "v"})
        throw hnci::parse_error(path + ":1: expected header 'u,v'");
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_fields(line);
        const std::string where = path + ":" + std::to_string(lineno);
        if (f.size() != 2) throw hnci::parse_error(where + ": expected 2 fields");
        std::uint32_t u, v;
        try {
            u = static_cast<std::uint32_t>(std::stoul(f[0]));
            v = static_cast<std::uint32_t>(std::stoul(f[1]));
        } catch (const std::exception&) {
            throw hnci::parse_error(where + ": malformed node id");
        }
        if (u >= n || v >= n) throw hnci::parse_error(where + ": node id out of range");
        if (u == v) throw hnci::parse_error(where + ": self loop");
        const auto key = std::minmax(u, v);
        if (!seen.insert({key.first, key.second}).second)
            throw hnci::parse_error(where + ": duplicate edge");
        edges.emplace_back(u, v);
    }
    return edges;
}

struct MappingFlags {
    std::string kind = "count-bucket";
    long long bucket_width = 2;
    double step = 0.05;

    hnci::ExposureMapping build() const {
        if (kind == "count-bucket") return hnci::ExposureMapping::treated_count_bucket(bucket_width);
        if (kind == "prop-bucket") return hnci::ExposureMapping::treated_proportion_bucket(step);
        if (kind == "raw") return hnci::ExposureMapping::raw_treated_proportion();
        throw hnci::schema_error("unknown mapping kind: " + kind);
    }

    void attach(CLI::App* cmd) {
        cmd->add_option("--mapping", kind, "Exposure mapping: count-bucket, prop-bucket, raw")
            ->check(CLI::IsMember({"count-bucket", "prop-bucket", "raw"}))
            ->capture_default_str();
        cmd->add_option("--bucket-width", bucket_width, "Width for count-bucket")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--step", step, "Step for prop-bucket")
            ->check(CLI::Range(1e-9, 1.0))
            ->capture_default_str();
    }
};

void emit(const json& j, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::ofstream out(out_path);
        if (!out) throw hnci::error("cannot write " + out_path);
        out << j.dump(2) << "\n";
    }
}

json adet_report_json(const hnci::AdetReport& r) {
    json diag;
    diag["kappa_d32"] = r.kappa_d32;
    diag["violations"] = r.violations;
    return json{{"tau_hat", r.tau_hat},
                {"ci", {r.ci_lo, r.ci_hi}},
                {"width", r.width()},
                {"alpha", r.alpha},
                {"method", hnci::to_string(r.method)},
                {"estimator", hnci::to_string(r.estimator)},
                {"k", r.k},
                {"width_components",
                 {{"group_quadratic", r.w_group_quad},
                  {"treated_term", r.w_treated},
                  {"dr_propensity_term", r.w_dr_propensity}}},
                {"sigma2_hat", r.sigma2_hat},
                {"group_count_used", r.group_count_used},
                {"diagnostics", diag}};
}

int cmd_validate(const std::string& nodes_path, const std::string& edges_path,
                 const MappingFlags& mf, int max_k, double kappa_threshold,
                 const std::string& out_path) {
    const auto nodes = read_nodes(nodes_path);
    const auto edges = read_edges(edges_path, nodes.z.size());
    const auto g = hnci::InterferenceGraph::build(nodes.z.size(), edges, nodes.z, nodes.y, nodes.p);

    json j;
    j["command"] = "validate";
    j["input_hash"] = input_hash(nodes_path, edges_path);
    j["n"] = g.size();
    j["n1"] = g.treated_count();
    j["n0"] = g.untreated_count();
    std::size_t dmin = g.size(), dmax = 0, dsum = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        dmin = std::min(dmin, g.degree(i));
        dmax = std::max(dmax, g.degree(i));
        dsum += g.degree(i);
    }
    j["degree"] = {{"min", dmin},
                   {"max", dmax},
                   {"mean", static_cast<double>(dsum) / static_cast<double>(g.size())}};
    double pmin = 1.0, pmax = 0.0;
    for (const auto p : g.p()) {
        pmin = std::min(pmin, p);
        pmax = std::max(pmax, p);
    }
    j["propensity"] = {{"min", pmin}, {"max", pmax}};

    const auto mapping = mf.build();
    json per_k = json::array();
    bool any_warning = false;
    for (int k = 0; k <= max_k; ++k) {
        const auto part = hnci::build_partition(g, mapping, k);
        const double kd = hnci::kappa_diagnostic(part);
        const bool warn = kd > kappa_threshold;
        any_warning = any_warning || warn || !part.violations.empty();
        per_k.push_back({{"k", k},
                         {"groups", part.group_count()},
                         {"kappa_d32", kd},
                         {"kappa_warning", warn},
                         {"violations", part.violations}});
    }
    j["per_k"] = per_k;
    j["warnings"] = any_warning;
    emit(j, out_path);
    return 0;
}

int cmd_adet(const std::string& nodes_path, const std::string& edges_path, const MappingFlags& mf,
             int k, const std::string& method, const std::string& estimator, double alpha,
             bool strict, std::uint64_t seed, const hnci::SflConfig& sfl_flags, double mstar,
             const std::string& out_path) {
    const auto nodes = read_nodes(nodes_path);
    const auto edges = read_edges(edges_path, nodes.z.size());
    const auto g = hnci::InterferenceGraph::build(nodes.z.size(), edges, nodes.z, nodes.y, nodes.p);

    json j;
    j["command"] = "adet";
    j["seed"] = seed;
    j["input_hash"] = input_hash(nodes_path, edges_path);

    if (method == "pooled") {
        const auto rep = hnci::pooled_adet_ci(g, mf.build(), k, alpha);
        j["report"] = adet_report_json(rep);
        emit(j, out_path);
        return 0;
    }

    const auto part = hnci::build_partition(g, mf.build(), k);
    if (!part.violations.empty()) {
        json viol;
        viol["violating_treated_nodes"] = part.violations;
        viol["message"] = "balanced-features assumption fails at k = " + std::to_string(k);
        j["assumption_violation"] = viol;
        if (strict) {
            std::cerr << j.dump(2) << "\n";
            return kExitAssumption;
        }
    }
    const auto fit = hnci::ols_fit(g, part);
    const bool dr = estimator == "dr";
    hnci::AdetReport rep;
    if (method == "sfl") {
        const auto sol = hnci::dc_solve(part.gather(g.y()), part, sfl_flags);
        rep = hnci::adet_sfl(g, part, sol, alpha,
                             dr ? hnci::Estimator::doubly_robust
                                : hnci::Estimator::outcome_regression);
        j["sfl"] = {{"converged", sol.converged},
                    {"merged_groups", sol.merged.size()},
                    {"dc_iterations", sol.objective_trace.size()},
                    {"degenerate_fit", sol.degenerate_fit},
                    {"box_violation", sol.box_violation}};
        if (mstar > 0.0) {
            const hnci::SflConfig resolved = sfl_flags.resolved(g.size());
            const double cmin =
                hnci::restricted_eigenvalue_diag(part.gather(g.y()), part, sol.merged);
            const double threshold = resolved.lambda2 > 0.0
                                         ? resolved.lambda1 / resolved.lambda2 * (2.0 * mstar + 1.0)
                                         : 0.0;
            j["sfl"]["restricted_eigenvalue"] = {{"c_min", cmin},
                                                 {"threshold", threshold},
                                                 {"satisfied", cmin > threshold}};
        }
    } else {
        rep = dr ? hnci::adet_dr(g, part, fit, alpha) : hnci::adet_or(g, part, fit, alpha);
    }
    j["report"] = adet_report_json(rep);
    if (rep.kappa_d32 > 1.0)
        std::cerr << "warning: kappa*d(k)^{3/2} = " << rep.kappa_d32
                  << " exceeds 1; the CI asymptotics are strained\n";
    emit(j, out_path);
    return 0;
}

int cmd_k0(const std::string& nodes_path, const std::string& edges_path, const MappingFlags& mf,
           const std::string& candidate_mode, hnci::K0Config cfg, const std::string& out_path) {
    const auto nodes = read_nodes(nodes_path);
    const auto edges = read_edges(edges_path, nodes.z.size());
    const auto g = hnci::InterferenceGraph::build(nodes.z.size(), edges, nodes.z, nodes.y, nodes.p);
    const auto parts = hnci::build_partitions(g, mf.build(), cfg.k_max);

    std::vector<int> candidate;
    if (candidate_mode == "range") {
        for (int k = 0; k <= cfg.k_max; ++k) candidate.push_back(k);
    } else {
        candidate = hnci::build_candidate_set(g.y(), parts, cfg);
    }
    const auto cs = hnci::confidence_set(g.y(), parts, candidate, cfg);

    json j;
    j["command"] = "k0";
    j["seed"] = cfg.seed;
    j["input_hash"] = input_hash(nodes_path, edges_path);
    j["candidate_mode"] = candidate_mode;
    j["candidate_set"] = cs.candidate_set;
    j["retained"] = cs.retained;
    json fh = json::object();
    for (std::size_t i = 0; i < cs.candidate_set.size(); ++i)
        fh[std::to_string(cs.candidate_set[i])] = cs.f_hat[i];
    j["f_hat"] = fh;
    j["k_hat_obs"] = cs.k_hat_obs;
    j["k_alpha_star"] = cs.k_alpha_star;
    j["recommended_k"] = cs.k_alpha_star; // conservative upper bound for `adet --k`
    j["exact_fit"] = cs.exact_fit;
    emit(j, out_path);
    return 0;
}

int cmd_simulate(const std::string& preset, int k0, int repetitions, int replications,
                 std::uint64_t seed, const std::string& out_path, const std::string& csv_path) {
    hnci::StudyResult result;
    if (preset == "table1") {
        hnci::SimDesign d = hnci::SimDesign::table1();
        if (repetitions > 0) d.repetitions = repetitions;
        if (seed) d.seed = seed;
        result = hnci::run_adet_study(
            d, {{hnci::Method::pooled, hnci::Estimator::outcome_regression}}, {0, 1, 2, 3, 4, 5},
            0.05);
    } else if (preset == "table2") {
        hnci::SimDesign d = hnci::SimDesign::table2_setting1();
        if (repetitions > 0) d.repetitions = repetitions;
        if (replications > 0) d.replications = replications;
        if (seed) d.seed = seed;
        const std::vector<hnci::MethodSpec> methods = {
            {hnci::Method::ols, hnci::Estimator::outcome_regression},
            {hnci::Method::sfl, hnci::Estimator::outcome_regression},
            {hnci::Method::ols, hnci::Estimator::doubly_robust},
            {hnci::Method::sfl, hnci::Estimator::doubly_robust}};
        result = hnci::run_adet_study(d, methods, {0, 1, 2, 3, 4}, 0.05);
    } else if (preset == "table3") {
        hnci::SimDesign d = hnci::SimDesign::table3_setting1(k0);
        if (repetitions > 0) d.repetitions = repetitions;
        if (seed) d.seed = seed;
        hnci::K0Config cfg;
        cfg.k_max = 4;
        result = hnci::run_k0_study(d, cfg);
    } else {
        throw hnci::schema_error("unknown preset: " + preset);
    }
    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw hnci::error("cannot write " + csv_path);
        out << result.to_csv();
    }
    if (out_path.empty()) {
        std::cout << result.to_json_string() << "\n";
    } else {
        std::ofstream out(out_path);
        if (!out) throw hnci::error("cannot write " + out_path);
        out << result.to_json_string() << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"High-dimensional network causal inference"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from a config file (flags override)");

    std::string nodes_path, edges_path, out_path, csv_path;
    MappingFlags mf;
    int k = 0, max_k = 3;
    double alpha = 0.05, kappa_threshold = 1.0, mstar = 0.0;
    bool strict = false;
    std::uint64_t seed = 0;
    std::string method = "ols", estimator = "or", candidate_mode = "repro";
    hnci::SflConfig sfl_flags;
    hnci::K0Config k0cfg;
    std::string preset = "table2";
    int sim_k0 = 2, repetitions = 0, replications = 0;
    std::vector<double> lambda_grid, lambda_prime_grid;

    auto add_io = [&](CLI::App* cmd) {
        cmd->add_option("--nodes", nodes_path, "Nodes CSV (node_id,z,y,p)")->required();
        cmd->add_option("--edges", edges_path, "Edges CSV (u,v)")->required();
        cmd->add_option("--out", out_path, "Write the JSON report here instead of stdout");
    };

    auto* validate = app.add_subcommand("validate", "Check inputs and assumption diagnostics");
    add_io(validate);
    mf.attach(validate);
    validate->add_option("--max-k", max_k, "Diagnose k = 0..max-k")->capture_default_str();
    validate->add_option("--kappa-threshold", kappa_threshold, "Warning cutoff for kappa*d^{3/2}")
        ->capture_default_str();

    auto* adet = app.add_subcommand("adet", "Confidence interval for the ADET");
    add_io(adet);
    mf.attach(adet);
    adet->add_option("--k", k, "Neighborhood size (a conservative upper bound)")->required();
    adet->add_option("--method", method, "ols, sfl, or pooled")
        ->check(CLI::IsMember({"ols", "sfl", "pooled"}))
        ->capture_default_str();
    adet->add_option("--estimator", estimator, "or (outcome regression) or dr (doubly robust)")
        ->check(CLI::IsMember({"or", "dr"}))
        ->capture_default_str();
    adet->add_option("--alpha", alpha, "Significance level")->capture_default_str();
    adet->add_flag("--strict", strict, "Abort on balanced-features violations");
    adet->add_option("--seed", seed, "Seed recorded in the report");
    adet->add_option("--lambda1", sfl_flags.lambda1, "SFL fusion strength (default (1/30)/sqrt(n))");
    adet->add_option("--lambda2", sfl_flags.lambda2, "SFL clip level (default (1/30)/sqrt(n))");
    adet->add_option("--rho", sfl_flags.rho, "ADMM penalty")->capture_default_str();
    adet->add_option("--merge-tol", sfl_flags.group_merge_tol,
                     "Coefficient merge tolerance (default lambda2/2)");
    adet->add_option("--mstar", mstar,
                     "Report the restricted-eigenvalue diagnostic against this M*");

    auto* k0cmd = app.add_subcommand("k0", "Confidence set for the neighborhood size");
    add_io(k0cmd);
    mf.attach(k0cmd);
    k0cmd->add_option("--candidate-mode", candidate_mode, "repro (Monte Carlo) or range (0..max-k)")
        ->check(CLI::IsMember({"repro", "range"}))
        ->capture_default_str();
    k0cmd->add_option("--max-k", k0cfg.k_max, "Largest k considered")->capture_default_str();
    k0cmd->add_option("--B", k0cfg.B, "Monte Carlo copies for the candidate set")
        ->capture_default_str();
    k0cmd->add_option("--J", k0cfg.J, "Monte Carlo copies per F-hat estimate")
        ->capture_default_str();
    k0cmd->add_option("--alpha", k0cfg.alpha, "Significance level")->capture_default_str();
    k0cmd->add_option("--seed", k0cfg.seed, "Monte Carlo seed")->capture_default_str();
    k0cmd->add_option("--lambda-grid", lambda_grid, "Explicit candidate-set penalty grid")
        ->delimiter(',');
    k0cmd->add_option("--lambda-prime-grid", lambda_prime_grid, "Explicit nuclear penalty grid")
        ->delimiter(',');
    k0cmd->add_flag("--permissive-lambda", k0cfg.permissive_lambda,
                    "Keep every grid lambda instead of the BIC-filtered subset");

    auto* sim = app.add_subcommand("simulate", "Run a replication study");
    sim->add_option("--preset", preset, "table1, table2, or table3")
        ->check(CLI::IsMember({"table1", "table2", "table3"}))
        ->capture_default_str();
    sim->add_option("--k0", sim_k0, "True neighborhood size for table3")->capture_default_str();
    sim->add_option("--repetitions", repetitions, "Override the preset's repetition count");
    sim->add_option("--replications", replications, "Override the preset's replication count");
    sim->add_option("--seed", seed, "Study seed");
    sim->add_option("--out", out_path, "Write the JSON study result here instead of stdout");
    sim->add_option("--csv", csv_path, "Also write the row-per-cell CSV table here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate->parsed())
            return cmd_validate(nodes_path, edges_path, mf, max_k, kappa_threshold, out_path);
        if (adet->parsed())
            return cmd_adet(nodes_path, edges_path, mf, k, method, estimator, alpha, strict, seed,
                            sfl_flags, mstar, out_path);
        if (k0cmd->parsed()) {
            k0cfg.lambda_grid = lambda_grid;
            k0cfg.lambda_prime_grid = lambda_prime_grid;
            return cmd_k0(nodes_path, edges_path, mf, candidate_mode, k0cfg, out_path);
        }
        if (sim->parsed())
            return cmd_simulate(preset, sim_k0, repetitions, replications, seed, out_path,
                                csv_path);
    } catch (const hnci::unmatched_treated_error& e) {
        std::cerr << "assumption violation: " << e.what() << "\n";
        return kExitAssumption;
    } catch (const hnci::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return 0;
}
