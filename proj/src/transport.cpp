#include "otmatch/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace otmatch {

namespace {

constexpr double kBalanceTol = 1e-9;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_balanced(const std::vector<double>& supply, const std::vector<double>& demand) {
    if (supply.empty() || demand.empty())
        throw std::invalid_argument("transport: empty marginals");
    double ss = std::accumulate(supply.begin(), supply.end(), 0.0);
    double sd = std::accumulate(demand.begin(), demand.end(), 0.0);
    if (std::abs(ss - sd) > kBalanceTol)
        throw BalanceError("transport: supply and demand totals differ by " +
                           std::to_string(std::abs(ss - sd)));
    for (double v : supply)
        if (v < 0.0) throw std::invalid_argument("transport: negative supply");
    for (double v : demand)
        if (v < 0.0) throw std::invalid_argument("transport: negative demand");
}

double plan_residual(const TransportPlan& plan, const std::vector<double>& supply,
                     const std::vector<double>& demand) {
    double worst = 0.0;
    for (int i = 0; i < plan.n; ++i) {
        double s = 0.0;
        for (int j = 0; j < plan.m; ++j) s += plan.at(i, j);
        worst = std::max(worst, std::abs(s - supply[i]));
    }
    for (int j = 0; j < plan.m; ++j) {
        double s = 0.0;
        for (int i = 0; i < plan.n; ++i) s += plan.at(i, j);
        worst = std::max(worst, std::abs(s - demand[j]));
    }
    return worst;
}

}  // namespace

CostMatrix build_cost(const SupplierSet& suppliers, const DemanderSet& demanders) {
    if (suppliers.masses.empty() || demanders.masses.empty())
        throw std::invalid_argument("build_cost: empty sets");
    CostMatrix c;
    c.n = static_cast<int>(suppliers.locations.size());
    c.m = static_cast<int>(demanders.locations.size());
    c.entries.resize(static_cast<size_t>(c.n) * c.m);
    for (int i = 0; i < c.n; ++i) {
        auto [sx, sy] = suppliers.locations[i];
        for (int j = 0; j < c.m; ++j) {
            auto [dx, dy] = demanders.locations[j];
            c.at(i, j) = std::hypot(dx - sx, dy - sy);
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Exact EMD: transportation simplex on the compacted problem. The basis is a
// spanning tree over supplier/demander nodes; entering variables follow
// Bland's rule, which rules out cycling on degenerate bases.
// ---------------------------------------------------------------------------

namespace {

struct SimplexState {
    int n, m;
    const CostMatrix* cost;
    std::vector<double> flow;        // n*m, basic values (0 allowed)
    std::vector<char> basic;         // n*m flags
    std::vector<double> u, v;        // potentials

    double& f(int i, int j) { return flow[i * m + j]; }
    char& b(int i, int j) { return basic[i * m + j]; }
    double c(int i, int j) const { return cost->at(i, j); }
};

// Northwest-corner start; keeps exactly n+m-1 basic cells by adding a
// zero-flow cell when supply and demand exhaust together.
void northwest_corner(SimplexState& st, std::vector<double> supply,
                      std::vector<double> demand) {
    int i = 0, j = 0;
    while (i < st.n && j < st.m) {
        double q = std::min(supply[i], demand[j]);
        st.f(i, j) = q;
        st.b(i, j) = 1;
        supply[i] -= q;
        demand[j] -= q;
        bool last = (i == st.n - 1) && (j == st.m - 1);
        if (supply[i] <= demand[j] && i < st.n - 1) {
            ++i;
        } else if (j < st.m - 1) {
            ++j;
        } else if (!last) {
            ++i;
        } else {
            break;
        }
    }
}

// Potentials from the basis tree: u_i + v_j = c_ij on basic cells.
void compute_potentials(SimplexState& st) {
    std::fill(st.u.begin(), st.u.end(), std::numeric_limits<double>::quiet_NaN());
    std::fill(st.v.begin(), st.v.end(), std::numeric_limits<double>::quiet_NaN());
    st.u[0] = 0.0;
    bool progress = true;
    while (progress) {
        progress = false;
        for (int i = 0; i < st.n; ++i) {
            for (int j = 0; j < st.m; ++j) {
                if (!st.b(i, j)) continue;
                bool ku = !std::isnan(st.u[i]);
                bool kv = !std::isnan(st.v[j]);
                if (ku && !kv) {
                    st.v[j] = st.c(i, j) - st.u[i];
                    progress = true;
                } else if (!ku && kv) {
                    st.u[i] = st.c(i, j) - st.v[j];
                    progress = true;
                }
            }
        }
    }
}

// Unique cycle through (ei, ej) alternating basic cells; returned as a cell
// sequence starting at the entering cell (+,-,+,-,...). Found by DFS over the
// bipartite basis graph.
bool find_cycle(SimplexState& st, int ei, int ej, std::vector<std::pair<int, int>>& cycle) {
    // parent pointers over nodes: rows 0..n-1, cols n..n+m-1
    const int nn = st.n + st.m;
    std::vector<int> parent(nn, -2);
    std::vector<int> stack;
    int start = ei;          // row node of the entering cell
    int target = st.n + ej;  // col node
    parent[start] = -1;
    stack.push_back(start);
    while (!stack.empty()) {
        int node = stack.back();
        stack.pop_back();
        if (node < st.n) {
            int i = node;
            for (int j = 0; j < st.m; ++j) {
                if (!st.b(i, j)) continue;
                int next = st.n + j;
                if (parent[next] == -2) {
                    parent[next] = node;
                    stack.push_back(next);
                }
            }
        } else {
            int j = node - st.n;
            for (int i = 0; i < st.n; ++i) {
                if (!st.b(i, j)) continue;
                if (parent[i] == -2) {
                    parent[i] = node;
                    stack.push_back(i);
                }
            }
        }
    }
    if (parent[target] == -2) return false;

    // walk target -> start, then prepend the entering cell
    std::vector<int> nodes;
    for (int node = target; node != -1; node = parent[node]) nodes.push_back(node);
    std::reverse(nodes.begin(), nodes.end());  // start ... target
    cycle.clear();
    cycle.emplace_back(ei, ej);
    // nodes alternate row/col starting at row `ei`; consecutive pairs are basic cells
    for (size_t k = 0; k + 1 < nodes.size(); ++k) {
        int a = nodes[k], b2 = nodes[k + 1];
        int i = a < st.n ? a : b2;
        int j = (a < st.n ? b2 : a) - st.n;
        cycle.emplace_back(i, j);
    }
    std::reverse(cycle.begin() + 1, cycle.end());
    return true;
}

}  // namespace

TransportPlan emd_exact(const std::vector<double>& supply_in,
                        const std::vector<double>& demand_in, const CostMatrix& cost) {
    check_balanced(supply_in, demand_in);
    if (static_cast<int>(supply_in.size()) != cost.n ||
        static_cast<int>(demand_in.size()) != cost.m)
        throw std::invalid_argument("emd_exact: cost shape mismatch");
    for (double e : cost.entries)
        if (!(e >= 0.0) || !std::isfinite(e))
            throw std::invalid_argument("emd_exact: cost must be finite and nonnegative");

    // compact away zero-mass rows/cols; their plan entries are zero
    std::vector<int> rmap, cmap;
    for (int i = 0; i < cost.n; ++i)
        if (supply_in[i] > 0.0) rmap.push_back(i);
    for (int j = 0; j < cost.m; ++j)
        if (demand_in[j] > 0.0) cmap.push_back(j);

    TransportPlan plan;
    plan.n = cost.n;
    plan.m = cost.m;
    plan.coupling.assign(static_cast<size_t>(cost.n) * cost.m, 0.0);
    if (rmap.empty() || cmap.empty()) {
        plan.marginal_residual = plan_residual(plan, supply_in, demand_in);
        return plan;
    }

    SimplexState st;
    st.n = static_cast<int>(rmap.size());
    st.m = static_cast<int>(cmap.size());
    CostMatrix sub;
    sub.n = st.n;
    sub.m = st.m;
    sub.entries.resize(static_cast<size_t>(st.n) * st.m);
    for (int i = 0; i < st.n; ++i)
        for (int j = 0; j < st.m; ++j)
            sub.at(i, j) = cost.at(rmap[i], cmap[j]);
    st.cost = &sub;
    st.flow.assign(static_cast<size_t>(st.n) * st.m, 0.0);
    st.basic.assign(static_cast<size_t>(st.n) * st.m, 0);
    st.u.resize(st.n);
    st.v.resize(st.m);

    std::vector<double> supply(st.n), demand(st.m);
    for (int i = 0; i < st.n; ++i) supply[i] = supply_in[rmap[i]];
    for (int j = 0; j < st.m; ++j) demand[j] = demand_in[cmap[j]];

    northwest_corner(st, supply, demand);

    const double reduced_tol = 1e-12;
    std::vector<std::pair<int, int>> cycle;
    const long max_pivots = 200000L + 50L * st.n * st.m;
    for (long pivot = 0;; ++pivot) {
        if (pivot > max_pivots)
            throw NumericError("emd_exact: pivot limit exceeded");
        compute_potentials(st);
        int ei = -1, ej = -1;
        // Bland: first cell (row-major) with negative reduced cost
        for (int i = 0; i < st.n && ei < 0; ++i)
            for (int j = 0; j < st.m; ++j)
                if (!st.b(i, j) && st.c(i, j) - st.u[i] - st.v[j] < -reduced_tol) {
                    ei = i;
                    ej = j;
                    break;
                }
        if (ei < 0) break;  // optimal

        if (!find_cycle(st, ei, ej, cycle))
            throw NumericError("emd_exact: basis lost tree structure");
        // odd positions lose flow
        double theta = std::numeric_limits<double>::infinity();
        size_t leave = 0;
        for (size_t k = 1; k < cycle.size(); k += 2) {
            double fval = st.f(cycle[k].first, cycle[k].second);
            if (fval < theta) {
                theta = fval;
                leave = k;
            }
        }
        for (size_t k = 0; k < cycle.size(); ++k) {
            auto [i, j] = cycle[k];
            st.f(i, j) += (k % 2 == 0) ? theta : -theta;
        }
        st.b(ei, ej) = 1;
        st.b(cycle[leave].first, cycle[leave].second) = 0;
        st.f(cycle[leave].first, cycle[leave].second) = 0.0;
    }

    double objective = 0.0;
    for (int i = 0; i < st.n; ++i) {
        for (int j = 0; j < st.m; ++j) {
            double fval = st.f(i, j);
            if (fval != 0.0) {
                plan.coupling[rmap[i] * cost.m + cmap[j]] = fval;
                objective += fval * sub.at(i, j);
            }
        }
    }
    plan.objective = objective;
    plan.marginal_residual = plan_residual(plan, supply_in, demand_in);
    return plan;
}

TransportPlan emd_exact(const SupplierSet& s, const DemanderSet& d, const CostMatrix& c) {
    return emd_exact(s.masses, d.masses, c);
}

// ---------------------------------------------------------------------------
// Sinkhorn scaling. One iteration = a row update followed by a column update.
// Log-domain path works with dual iterates u, v where
// log p_ij = u_i + v_j - lambda * C_ij.
// ---------------------------------------------------------------------------

namespace {

struct CompactProblem {
    std::vector<int> rows, cols;   // active (positive-mass) indices
    std::vector<double> s, d;      // compacted marginals
    std::vector<double> ls, ld;    // their logs
    std::vector<double> a;         // -lambda * C, compacted row-major
    int n = 0, m = 0;
};

CompactProblem compact(const std::vector<double>& supply, const std::vector<double>& demand,
                       const CostMatrix& cost, double lambda) {
    CompactProblem p;
    for (int i = 0; i < cost.n; ++i)
        if (supply[i] > 0.0) p.rows.push_back(i);
    for (int j = 0; j < cost.m; ++j)
        if (demand[j] > 0.0) p.cols.push_back(j);
    p.n = static_cast<int>(p.rows.size());
    p.m = static_cast<int>(p.cols.size());
    p.s.resize(p.n);
    p.ls.resize(p.n);
    p.d.resize(p.m);
    p.ld.resize(p.m);
    for (int i = 0; i < p.n; ++i) {
        p.s[i] = supply[p.rows[i]];
        p.ls[i] = std::log(p.s[i]);
    }
    for (int j = 0; j < p.m; ++j) {
        p.d[j] = demand[p.cols[j]];
        p.ld[j] = std::log(p.d[j]);
    }
    p.a.resize(static_cast<size_t>(p.n) * p.m);
    for (int i = 0; i < p.n; ++i)
        for (int j = 0; j < p.m; ++j)
            p.a[i * p.m + j] = -lambda * cost.at(p.rows[i], p.cols[j]);
    return p;
}

inline double lse(const double* vals, int count) {
    double mx = kNegInf;
    for (int k = 0; k < count; ++k) mx = std::max(mx, vals[k]);
    if (mx == kNegInf) return kNegInf;
    double s = 0.0;
    for (int k = 0; k < count; ++k) s += std::exp(vals[k] - mx);
    return mx + std::log(s);
}

// Runs T log-domain iterations; if `history` is non-null it receives the u
// and v iterates for the reverse pass (u[t], v[t] for t = 1..T; v[0] = 0).
void log_domain_iterate(const CompactProblem& p, int iterations, bool early_stop,
                        double tol, std::vector<double>& u, std::vector<double>& v,
                        std::vector<std::vector<double>>* u_hist,
                        std::vector<std::vector<double>>* v_hist, int* done) {
    const int n = p.n, m = p.m;
    u.assign(n, 0.0);
    v.assign(m, 0.0);
    std::vector<double> tmp(std::max(n, m));
    int t = 0;
    for (; t < iterations; ++t) {
        // u_i = ls_i - LSE_j(a_ij + v_j)
        for (int i = 0; i < n; ++i) {
            const double* ai = &p.a[i * m];
            for (int j = 0; j < m; ++j) tmp[j] = ai[j] + v[j];
            u[i] = p.ls[i] - lse(tmp.data(), m);
        }
        // v_j = ld_j - LSE_i(a_ij + u_i)
        double delta = 0.0;
        for (int j = 0; j < m; ++j) {
            for (int i = 0; i < n; ++i) tmp[i] = p.a[i * m + j] + u[i];
            double nv = p.ld[j] - lse(tmp.data(), n);
            delta = std::max(delta, std::abs(nv - v[j]));
            v[j] = nv;
        }
        if (u_hist) u_hist->push_back(u);
        if (v_hist) v_hist->push_back(v);
        if (early_stop && delta < tol) {
            ++t;
            break;
        }
    }
    if (done) *done = t;
}

TransportPlan assemble_plan(const CompactProblem& p, const std::vector<double>& u,
                            const std::vector<double>& v, const CostMatrix& cost,
                            const std::vector<double>& supply,
                            const std::vector<double>& demand) {
    TransportPlan plan;
    plan.n = cost.n;
    plan.m = cost.m;
    plan.coupling.assign(static_cast<size_t>(cost.n) * cost.m, 0.0);
    double objective = 0.0;
    for (int i = 0; i < p.n; ++i) {
        for (int j = 0; j < p.m; ++j) {
            double pij = std::exp(u[i] + v[j] + p.a[i * p.m + j]);
            plan.coupling[p.rows[i] * cost.m + p.cols[j]] = pij;
            objective += pij * cost.at(p.rows[i], p.cols[j]);
        }
    }
    plan.objective = objective;
    plan.marginal_residual = plan_residual(plan, supply, demand);
    return plan;
}

TransportPlan sinkhorn_linear_domain(const CompactProblem& p, const SinkhornConfig& cfg,
                                     const CostMatrix& cost,
                                     const std::vector<double>& supply,
                                     const std::vector<double>& demand) {
    const int n = p.n, m = p.m;
    std::vector<double> kmat(static_cast<size_t>(n) * m);
    for (size_t k = 0; k < kmat.size(); ++k) kmat[k] = std::exp(p.a[k]);
    std::vector<double> av(n, 1.0), bv(m, 1.0);
    for (int t = 0; t < cfg.iterations; ++t) {
        for (int i = 0; i < n; ++i) {
            double kb = 0.0;
            for (int j = 0; j < m; ++j) kb += kmat[i * m + j] * bv[j];
            av[i] = p.s[i] / kb;
        }
        for (int j = 0; j < m; ++j) {
            double ka = 0.0;
            for (int i = 0; i < n; ++i) ka += kmat[i * m + j] * av[i];
            bv[j] = p.d[j] / ka;
        }
        for (int i = 0; i < n; ++i)
            if (!std::isfinite(av[i]))
                throw NumericError(
                    "sinkhorn: scaling overflow/underflow at lambda*C scale; "
                    "use log_domain=true");
        for (int j = 0; j < m; ++j)
            if (!std::isfinite(bv[j]))
                throw NumericError(
                    "sinkhorn: scaling overflow/underflow at lambda*C scale; "
                    "use log_domain=true");
    }
    std::vector<double> u(n), v(m);
    for (int i = 0; i < n; ++i) u[i] = std::log(av[i]);
    for (int j = 0; j < m; ++j) v[j] = std::log(bv[j]);
    return assemble_plan(p, u, v, cost, supply, demand);
}

}  // namespace

TransportPlan sinkhorn(const std::vector<double>& supply, const std::vector<double>& demand,
                       const CostMatrix& cost, const SinkhornConfig& cfg) {
    cfg.validate();
    check_balanced(supply, demand);
    if (static_cast<int>(supply.size()) != cost.n ||
        static_cast<int>(demand.size()) != cost.m)
        throw std::invalid_argument("sinkhorn: cost shape mismatch");

    CompactProblem p = compact(supply, demand, cost, cfg.lambda);
    if (p.n == 0 || p.m == 0) {
        TransportPlan plan;
        plan.n = cost.n;
        plan.m = cost.m;
        plan.coupling.assign(static_cast<size_t>(cost.n) * cost.m, 0.0);
        plan.marginal_residual = plan_residual(plan, supply, demand);
        return plan;
    }
    if (!cfg.log_domain) return sinkhorn_linear_domain(p, cfg, cost, supply, demand);

    std::vector<double> u, v;
    log_domain_iterate(p, cfg.iterations, cfg.early_stop, cfg.early_stop_tol, u, v, nullptr,
                       nullptr, nullptr);
    return assemble_plan(p, u, v, cost, supply, demand);
}

TransportPlan sinkhorn(const SupplierSet& s, const DemanderSet& d, const CostMatrix& c,
                       const SinkhornConfig& cfg) {
    return sinkhorn(s.masses, d.masses, c, cfg);
}

SinkhornGradResult sinkhorn_with_grad(const std::vector<double>& supply,
                                      const std::vector<double>& demand,
                                      const CostMatrix& cost, const SinkhornConfig& cfg) {
    cfg.validate();
    check_balanced(supply, demand);
    if (static_cast<int>(supply.size()) != cost.n ||
        static_cast<int>(demand.size()) != cost.m)
        throw std::invalid_argument("sinkhorn_with_grad: cost shape mismatch");

    CompactProblem p = compact(supply, demand, cost, cfg.lambda);
    SinkhornGradResult out;
    out.grad_supply.assign(cost.n, 0.0);
    if (p.n == 0 || p.m == 0) {
        out.plan.n = cost.n;
        out.plan.m = cost.m;
        out.plan.coupling.assign(static_cast<size_t>(cost.n) * cost.m, 0.0);
        out.plan.marginal_residual = plan_residual(out.plan, supply, demand);
        return out;
    }

    const int n = p.n, m = p.m;
    std::vector<std::vector<double>> u_hist, v_hist;
    u_hist.reserve(cfg.iterations);
    v_hist.reserve(cfg.iterations);
    std::vector<double> u, v;
    int T = 0;
    log_domain_iterate(p, cfg.iterations, cfg.early_stop, cfg.early_stop_tol, u, v, &u_hist,
                       &v_hist, &T);
    out.plan = assemble_plan(p, u, v, cost, supply, demand);

    // Reverse pass. Adjoints of the dual iterates; at the end, d obj / d ls_i
    // accumulates from every row update (u^t_i = ls_i - LSE_j(a_ij + v^{t-1}_j)).
    std::vector<double> ubar(n, 0.0), vbar(m, 0.0), lsbar(n, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* ai = &p.a[i * m];
        double s = 0.0;
        for (int j = 0; j < m; ++j) {
            double pij = std::exp(u[i] + v[j] + ai[j]);
            double cij = cost.at(p.rows[i], p.cols[j]);
            s += cij * pij;
            vbar[j] += cij * pij;
        }
        ubar[i] = s;
    }

    std::vector<double> colden(m), tmp(std::max(n, m));
    for (int t = T - 1; t >= 0; --t) {
        const std::vector<double>& ut = u_hist[t];

        // column update backward: v^t_j = ld_j - LSE_i(a_ij + u^t_i)
        // d v^t_j / d u^t_i = -softmax_i(a_ij + u^t_i)
        for (int j = 0; j < m; ++j) {
            double mx = kNegInf;
            for (int i = 0; i < n; ++i) mx = std::max(mx, p.a[i * m + j] + ut[i]);
            double den = 0.0;
            for (int i = 0; i < n; ++i) den += std::exp(p.a[i * m + j] + ut[i] - mx);
            colden[j] = den;
            tmp[j] = mx;
        }
        for (int i = 0; i < n; ++i) {
            double acc = ubar[i];
            const double* ai = &p.a[i * m];
            for (int j = 0; j < m; ++j)
                acc -= vbar[j] * std::exp(ai[j] + ut[i] - tmp[j]) / colden[j];
            ubar[i] = acc;
        }

        // row update backward: u^t_i = ls_i - LSE_j(a_ij + v^{t-1}_j)
        // d u^t_i / d v^{t-1}_j = -softmax_j(a_ij + v^{t-1}_j); v^{-1} = 0
        for (int i = 0; i < n; ++i) lsbar[i] += ubar[i];
        std::fill(vbar.begin(), vbar.end(), 0.0);
        if (t > 0) {
            const std::vector<double>& vprev = v_hist[t - 1];
            for (int i = 0; i < n; ++i) {
                const double* ai = &p.a[i * m];
                double mx = kNegInf;
                for (int j = 0; j < m; ++j) mx = std::max(mx, ai[j] + vprev[j]);
                double den = 0.0;
                for (int j = 0; j < m; ++j) den += std::exp(ai[j] + vprev[j] - mx);
                double ub = ubar[i];
                for (int j = 0; j < m; ++j)
                    vbar[j] -= ub * std::exp(ai[j] + vprev[j] - mx) / den;
            }
        }
        std::fill(ubar.begin(), ubar.end(), 0.0);
    }

    for (int i = 0; i < n; ++i)
        out.grad_supply[p.rows[i]] = lsbar[i] / p.s[i];  // d/ds of ls = log s
    return out;
}

}  // namespace otmatch
