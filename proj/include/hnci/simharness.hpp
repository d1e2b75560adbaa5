#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hnci/estimators.hpp"
#include "hnci/k0infer.hpp"
#include "hnci/rng.hpp"

namespace hnci {

enum class GraphonKind { er, sbm_blocks };

// Interference function presets. `linear_features` is
//   f_i = sum_l coef[l] * T_{i,l} / max_i T_{i,l}
// over the mapping's feature coordinates at depth l = 1..k0 with per-network
// normalizers; `staircase_k3` is the ceil-bucketed three-depth staircase with
// geometrically decaying weights, normalized by the per-depth maximum raw
// treated proportion.
enum class InterferenceKind { none, linear_features, staircase_k3 };

struct InterferenceFn {
    InterferenceKind kind = InterferenceKind::none;
    std::vector<double> coef;
};

struct SimDesign {
    std::size_t n = 1000;
    GraphonKind graphon = GraphonKind::er;
    double er_p = 0.02;
    double propensity_lo = 0.03, propensity_hi = 0.06; // lo == hi: constant
    double tau_lo = 0.6, tau_hi = 0.8;                 // lo == hi: constant
    ExposureMapping mapping = ExposureMapping::treated_count_bucket(4);
    int k0 = 2;
    InterferenceFn interference;
    double noise_sd = 0.5;
    int repetitions = 20;   // outer: redraw graph, treatments, tau
    int replications = 200; // inner: redraw outcome noise only
    std::uint64_t seed = 1;

    // Named designs from the synthetic studies.
    static SimDesign table1();                    // staircase, k0 = 3, pooled-OLS study
    static SimDesign table2_setting1();           // ER graphon, count-bucket mapping, k0 = 2
    static SimDesign table3_setting1(int k0_true);
};

struct OutcomeDraw {
    std::vector<double> y;
    double true_tau = 0.0; // sum z_i tau_i / sum z_i for this repetition
    bool degenerate_max = false; // some feature coordinate had max 0
};

InterferenceGraph generate_graph(const SimDesign& design, Rng& rng);

// Interference values are a deterministic function of (graph, z); they are
// computed once per repetition and shared across noise replications.
std::vector<double> interference_values(const InterferenceGraph& g, const SimDesign& design,
                                        bool* degenerate_max = nullptr);

OutcomeDraw generate_outcomes(const InterferenceGraph& g, const SimDesign& design,
                              const std::vector<double>& tau_i,
                              const std::vector<double>& f_values, Rng& rng);

struct MethodSpec {
    Method method = Method::ols;
    Estimator estimator = Estimator::outcome_regression;
    std::string label() const { return to_string(estimator) + "-" + to_string(method); }
};

struct AdetCell {
    std::string method;
    int k = 0;
    double coverage = 0.0;
    double mean_width = 0.0;
    double width_se = 0.0;
    std::size_t n_ok = 0, n_err = 0;
    bool degenerate = false;
    std::vector<double> per_rep_coverage;   // one entry per repetition
    std::vector<double> per_rep_mean_width;
};

struct K0Cell {
    std::string mode; // "range" (Conf1) or "repro" (Conf2)
    int k0_true = 0;
    double coverage = 0.0;
    double mean_cardinality = 0.0;
    double upper_bound_rate = 0.0; // P(k0 <= k_alpha_star)
    std::size_t reps = 0;
};

struct StudyResult {
    std::vector<AdetCell> adet_cells;
    std::vector<K0Cell> k0_cells;
    std::uint64_t seed = 0;

    std::string to_json_string() const;
    std::string to_csv() const;
};

StudyResult run_adet_study(const SimDesign& design, const std::vector<MethodSpec>& methods,
                           const std::vector<int>& k_values, double alpha);

// Per repetition: one outcome draw and one confidence set per mode. Range
// mode uses S_B = {0..k_max}; repro mode builds S_B per Monte Carlo.
struct K0StudyOptions {
    bool run_range = true;  // Conf1
    bool run_repro = true;  // Conf2
};

StudyResult run_k0_study(const SimDesign& design, const K0Config& config,
                         const K0StudyOptions& options = {});

} // namespace hnci
