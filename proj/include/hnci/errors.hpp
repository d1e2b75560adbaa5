#pragma once

#include <stdexcept>
#include <string>

namespace hnci {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct all_treated_error : error {
    all_treated_error() : error("no untreated nodes: cannot build exposure groups") {}
};

struct insufficient_dof_error : error {
    using error::error;
};

struct unmatched_treated_error : error {
    using error::error;
};

struct no_treated_nodes_error : error {
    no_treated_nodes_error() : error("no treated nodes: ADET is undefined") {}
};

struct propensity_at_boundary_error : error {
    using error::error;
};

struct rank_deficient_error : error {
    using error::error;
};

struct mismatched_inputs_error : error {
    using error::error;
};

struct degenerate_residual_error : error {
    using error::error;
};

struct exact_fit_error : error {
    using error::error;
};

struct parse_error : error {
    using error::error;
};

struct schema_error : error {
    using error::error;
};

} // namespace hnci
