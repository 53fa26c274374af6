#pragma once

#include <vector>

#include "otmatch/encoders.hpp"
#include "otmatch/grid.hpp"

namespace otmatch {

/// N x M matrix of pairwise Euclidean distances, row-major.
struct CostMatrix {
    int n = 0;
    int m = 0;
    std::vector<double> entries;  // entries[i * m + j]

    double at(int i, int j) const { return entries[i * m + j]; }
    double& at(int i, int j) { return entries[i * m + j]; }
};

/// A coupling over the transportation polytope plus its cost.
struct TransportPlan {
    int n = 0;
    int m = 0;
    std::vector<double> coupling;   // row-major, >= 0
    double objective = 0.0;         // <C, p>
    double marginal_residual = 0.0; // max |row/col sums - S/D|

    double at(int i, int j) const { return coupling[i * m + j]; }
};

struct SinkhornConfig {
    double lambda = 1.0;  // entropic regularization weight
    int iterations = 1000;
    bool log_domain = true;
    bool early_stop = false;       // optional residual-based stop
    double early_stop_tol = 1e-9;

    void validate() const {
        if (!(lambda > 0.0))
            throw std::invalid_argument("SinkhornConfig: lambda must be positive");
        if (iterations < 1)
            throw std::invalid_argument("SinkhornConfig: iterations must be >= 1");
    }
};

CostMatrix build_cost(const SupplierSet& suppliers, const DemanderSet& demanders);

/// Exact EMD by the transportation simplex (MODI with Bland's entering rule).
TransportPlan emd_exact(const std::vector<double>& supply,
                        const std::vector<double>& demand,
                        const CostMatrix& cost);
TransportPlan emd_exact(const SupplierSet& s, const DemanderSet& d, const CostMatrix& c);

/// Fixed-iteration Sinkhorn scaling for the entropy-regularized plan.
/// The objective reported is <C, p_reg>, the unregularized cost of the
/// regularized plan.
TransportPlan sinkhorn(const std::vector<double>& supply,
                       const std::vector<double>& demand,
                       const CostMatrix& cost,
                       const SinkhornConfig& cfg);
TransportPlan sinkhorn(const SupplierSet& s, const DemanderSet& d, const CostMatrix& c,
                       const SinkhornConfig& cfg);

/// Forward Sinkhorn plus the reverse-mode gradient of <C, p_reg> with respect
/// to the supply vector, obtained by backpropagating through the unrolled
/// log-domain scaling loop. Entries with zero supply get zero gradient.
struct SinkhornGradResult {
    TransportPlan plan;
    std::vector<double> grad_supply;  // d objective / d supply, length N
};
SinkhornGradResult sinkhorn_with_grad(const std::vector<double>& supply,
                                      const std::vector<double>& demand,
                                      const CostMatrix& cost,
                                      const SinkhornConfig& cfg);

}  // namespace otmatch
