#pragma once

// Primal network simplex for uncapacitated transportation problems.
// Spanning-tree representation with thread / reverse-thread lists,
// block-search pivoting and strongly feasible leaving-arc selection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "swarmfield/errors.hpp"

namespace swarmfield {

struct TransportSolution {
    double cost = 0.0;
    /// Flow on arc (i, j) stored as flow[i * n_sinks + j].
    std::vector<double> flow;
    /// Duals with f_i + g_j <= c_ij and equality on the support.
    std::vector<double> f;
    std::vector<double> g;
    std::size_t iterations = 0;
    /// Mass left on artificial arcs (round-off imbalance).
    double artificial_flow = 0.0;
};

namespace detail {

class NetworkSimplex {
public:
    NetworkSimplex(const std::vector<double>& supply, const std::vector<double>& demand,
                   const std::vector<double>& cost, std::size_t max_iterations)
        : ns_(static_cast<int>(supply.size())), nt_(static_cast<int>(demand.size())), max_iter_(max_iterations) {
        node_num_ = ns_ + nt_;
        arc_num_ = ns_ * nt_;
        all_arc_num_ = arc_num_ + node_num_;
        root_ = node_num_;
        const std::size_t an = static_cast<std::size_t>(all_arc_num_);
        source_.resize(an);
        target_.resize(an);
        cost_.resize(an);
        flow_.assign(an, 0.0);
        state_.assign(an, kLower);
        supply_.resize(static_cast<std::size_t>(node_num_) + 1, 0.0);
        for (int i = 0; i < ns_; ++i) supply_[i] = supply[i];
        for (int j = 0; j < nt_; ++j) supply_[ns_ + j] = -demand[j];

        double max_cost = 0.0;
        for (int i = 0; i < ns_; ++i) {
            for (int j = 0; j < nt_; ++j) {
                const int e = i * nt_ + j;
                source_[e] = i;
                target_[e] = ns_ + j;
                cost_[e] = cost[e];
                max_cost = std::max(max_cost, std::abs(cost[e]));
            }
        }
        art_cost_ = (max_cost + 1.0) * node_num_;
        eps_ = 1e-12 * (max_cost + 1.0);
        block_size_ = std::max(static_cast<int>(std::sqrt(static_cast<double>(arc_num_))), 10);
    }

    TransportSolution solve() {
        init();
        std::size_t iter = 0;
        while (find_entering_arc()) {
            if (++iter > max_iter_) fail(ErrorKind::SolverStall, "network simplex exceeded its iteration cap");
            find_join_node();
            const bool change = find_leaving_arc();
            if (delta_ >= kInf) fail(ErrorKind::InvalidArgument, "transport problem is unbounded");
            change_flow(change);
            if (change) {
                update_tree_structure();
                update_potential();
            }
        }
        TransportSolution out;
        out.iterations = iter;
        out.flow.assign(static_cast<std::size_t>(arc_num_), 0.0);
        for (int e = 0; e < arc_num_; ++e) {
            out.flow[e] = flow_[e];
            out.cost += flow_[e] * cost_[e];
        }
        for (int e = arc_num_; e < all_arc_num_; ++e) out.artificial_flow += std::abs(flow_[e]);
        out.f.resize(ns_);
        out.g.resize(nt_);
        // Reduced cost c + pi_s - pi_t >= 0 gives f = -pi_s, g = pi_t.
        for (int i = 0; i < ns_; ++i) out.f[i] = -pi_[i];
        for (int j = 0; j < nt_; ++j) out.g[j] = pi_[ns_ + j];
        return out;
    }

private:
    static constexpr int kUpper = -1;
    static constexpr int kTree = 0;
    static constexpr int kLower = 1;
    static constexpr int kDirUp = 1;
    static constexpr int kDirDown = -1;
    static constexpr double kInf = std::numeric_limits<double>::infinity();

    void init() {
        const std::size_t nn = static_cast<std::size_t>(node_num_) + 1;
        parent_.assign(nn, -1);
        pred_.assign(nn, -1);
        thread_.assign(nn, 0);
        rev_thread_.assign(nn, 0);
        succ_num_.assign(nn, 0);
        last_succ_.assign(nn, 0);
        pred_dir_.assign(nn, 0);
        pi_.assign(nn, 0.0);

        parent_[root_] = -1;
        pred_[root_] = -1;
        thread_[root_] = 0;
        rev_thread_[0] = root_;
        succ_num_[root_] = node_num_ + 1;
        last_succ_[root_] = root_ - 1;
        pi_[root_] = 0.0;

        for (int u = 0, e = arc_num_; u != node_num_; ++u, ++e) {
            parent_[u] = root_;
            pred_[u] = e;
            thread_[u] = u + 1;
            rev_thread_[u + 1] = u;
            succ_num_[u] = 1;
            last_succ_[u] = u;
            state_[e] = kTree;
            if (supply_[u] >= 0.0) {
                pred_dir_[u] = kDirUp;
                pi_[u] = 0.0;
                source_[e] = u;
                target_[e] = root_;
                flow_[e] = supply_[u];
                cost_[e] = 0.0;
            } else {
                pred_dir_[u] = kDirDown;
                pi_[u] = art_cost_;
                source_[e] = root_;
                target_[e] = u;
                flow_[e] = -supply_[u];
                cost_[e] = art_cost_;
            }
        }
        next_arc_ = 0;
    }

    double reduced(int e) const { return state_[e] * (cost_[e] + pi_[source_[e]] - pi_[target_[e]]); }

    bool find_entering_arc() {
        double min = -eps_;
        int cnt = block_size_;
        int e;
        bool found = false;
        for (e = next_arc_; e != arc_num_; ++e) {
            const double c = reduced(e);
            if (c < min) {
                min = c;
                in_arc_ = e;
                found = true;
            }
            if (--cnt == 0) {
                if (found) {
                    next_arc_ = e + 1 == arc_num_ ? 0 : e + 1;
                    return true;
                }
                cnt = block_size_;
            }
        }
        for (e = 0; e != next_arc_; ++e) {
            const double c = reduced(e);
            if (c < min) {
                min = c;
                in_arc_ = e;
                found = true;
            }
            if (--cnt == 0) {
                if (found) {
                    next_arc_ = e + 1;
                    return true;
                }
                cnt = block_size_;
            }
        }
        if (!found) return false;
        next_arc_ = e == arc_num_ ? 0 : e;
        return true;
    }

    void find_join_node() {
        int u = source_[in_arc_];
        int v = target_[in_arc_];
        while (u != v) {
            if (succ_num_[u] < succ_num_[v]) {
                u = parent_[u];
            } else {
                v = parent_[v];
            }
        }
        join_ = u;
    }

    bool find_leaving_arc() {
        int first;
        int second;
        if (state_[in_arc_] == kLower) {
            first = source_[in_arc_];
            second = target_[in_arc_];
        } else {
            first = target_[in_arc_];
            second = source_[in_arc_];
        }
        delta_ = kInf;
        int result = 0;
        for (int u = first; u != join_; u = parent_[u]) {
            const int e = pred_[u];
            const double d = pred_dir_[u] == kDirDown ? kInf : flow_[e];
            if (d < delta_) {
                delta_ = d;
                u_out_ = u;
                result = 1;
            }
        }
        for (int u = second; u != join_; u = parent_[u]) {
            const int e = pred_[u];
            const double d = pred_dir_[u] == kDirUp ? kInf : flow_[e];
            if (d <= delta_) {
                delta_ = d;
                u_out_ = u;
                result = 2;
            }
        }
        if (result == 1) {
            u_in_ = first;
            v_in_ = second;
        } else {
            u_in_ = second;
            v_in_ = first;
        }
        return result != 0;
    }

    void change_flow(bool change) {
        if (delta_ > 0.0) {
            const double val = state_[in_arc_] * delta_;
            flow_[in_arc_] += val;
            for (int u = source_[in_arc_]; u != join_; u = parent_[u]) flow_[pred_[u]] -= pred_dir_[u] * val;
            for (int u = target_[in_arc_]; u != join_; u = parent_[u]) flow_[pred_[u]] += pred_dir_[u] * val;
        }
        if (change) {
            state_[in_arc_] = kTree;
            const int out = pred_[u_out_];
            flow_[out] = std::max(flow_[out], 0.0);
            state_[out] = kLower;
        } else {
            state_[in_arc_] = -state_[in_arc_];
        }
    }

    void update_tree_structure() {
        const int old_rev_thread = rev_thread_[u_out_];
        const int old_succ_num = succ_num_[u_out_];
        const int old_last_succ = last_succ_[u_out_];
        v_out_ = parent_[u_out_];

        if (u_in_ == u_out_) {
            parent_[u_in_] = v_in_;
            pred_[u_in_] = in_arc_;
            pred_dir_[u_in_] = u_in_ == source_[in_arc_] ? kDirUp : kDirDown;
            if (thread_[v_in_] != u_out_) {
                int after = thread_[old_last_succ];
                thread_[old_rev_thread] = after;
                rev_thread_[after] = old_rev_thread;
                after = thread_[v_in_];
                thread_[v_in_] = u_out_;
                rev_thread_[u_out_] = v_in_;
                thread_[old_last_succ] = after;
                rev_thread_[after] = old_last_succ;
            }
        } else {
            const int thread_continue = old_rev_thread == v_in_ ? thread_[old_last_succ] : thread_[v_in_];
            int stem = u_in_;
            int par_stem = v_in_;
            int last = last_succ_[u_in_];
            int after = thread_[last];
            thread_[v_in_] = u_in_;
            dirty_revs_.clear();
            dirty_revs_.push_back(v_in_);
            while (stem != u_out_) {
                const int next_stem = parent_[stem];
                thread_[last] = next_stem;
                dirty_revs_.push_back(last);

                const int before = rev_thread_[stem];
                thread_[before] = after;
                rev_thread_[after] = before;

                parent_[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = last_succ_[stem] == last_succ_[par_stem] ? rev_thread_[par_stem] : last_succ_[stem];
                after = thread_[last];
            }
            parent_[u_out_] = par_stem;
            thread_[last] = thread_continue;
            rev_thread_[thread_continue] = last;
            last_succ_[u_out_] = last;

            if (old_rev_thread != v_in_) {
                thread_[old_rev_thread] = after;
                rev_thread_[after] = old_rev_thread;
            }
            for (int u : dirty_revs_) rev_thread_[thread_[u]] = u;

            int tmp_sc = 0;
            const int tmp_ls = last_succ_[u_out_];
            for (int u = u_out_, p = parent_[u]; u != u_in_; u = p, p = parent_[u]) {
                pred_[u] = pred_[p];
                pred_dir_[u] = -pred_dir_[p];
                tmp_sc += succ_num_[u] - succ_num_[p];
                succ_num_[u] = tmp_sc;
                last_succ_[p] = tmp_ls;
            }
            pred_[u_in_] = in_arc_;
            pred_dir_[u_in_] = u_in_ == source_[in_arc_] ? kDirUp : kDirDown;
            succ_num_[u_in_] = old_succ_num;
        }

        const int up_limit_out = last_succ_[join_] == v_in_ ? join_ : -1;
        const int last_succ_out = last_succ_[u_out_];
        for (int u = v_in_; u != -1 && last_succ_[u] == v_in_; u = parent_[u]) last_succ_[u] = last_succ_out;

        if (join_ != old_rev_thread && v_in_ != old_rev_thread) {
            for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u]) {
                last_succ_[u] = old_rev_thread;
            }
        } else if (last_succ_out != old_last_succ) {
            for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u]) {
                last_succ_[u] = last_succ_out;
            }
        }

        for (int u = v_in_; u != join_; u = parent_[u]) succ_num_[u] += old_succ_num;
        for (int u = v_out_; u != join_; u = parent_[u]) succ_num_[u] -= old_succ_num;
    }

    void update_potential() {
        const double sigma = pi_[v_in_] - pi_[u_in_] - pred_dir_[u_in_] * cost_[in_arc_];
        const int end = thread_[last_succ_[u_in_]];
        for (int u = u_in_; u != end; u = thread_[u]) pi_[u] += sigma;
    }

    int ns_;
    int nt_;
    std::size_t max_iter_;
    int node_num_ = 0;
    int arc_num_ = 0;
    int all_arc_num_ = 0;
    int root_ = 0;
    int block_size_ = 10;
    int next_arc_ = 0;
    double art_cost_ = 0.0;
    double eps_ = 0.0;

    std::vector<int> source_;
    std::vector<int> target_;
    std::vector<double> cost_;
    std::vector<double> flow_;
    std::vector<signed char> state_;
    std::vector<double> supply_;

    std::vector<int> parent_;
    std::vector<int> pred_;
    std::vector<int> thread_;
    std::vector<int> rev_thread_;
    std::vector<int> succ_num_;
    std::vector<int> last_succ_;
    std::vector<int> pred_dir_;
    std::vector<double> pi_;
    std::vector<int> dirty_revs_;

    int in_arc_ = 0;
    int join_ = 0;
    int u_in_ = 0;
    int v_in_ = 0;
    int u_out_ = 0;
    int v_out_ = 0;
    double delta_ = 0.0;
};

}  // namespace detail

/// Exact transportation LP: min sum c_ij x_ij, row sums = supply,
/// column sums = demand. `cost` is row-major supply x demand.
inline TransportSolution solve_transport(const std::vector<double>& supply, const std::vector<double>& demand,
                                         const std::vector<double>& cost, std::size_t max_iterations = 0) {
    require(!supply.empty() && !demand.empty(), "transport: empty marginals");
    require(cost.size() == supply.size() * demand.size(), "transport: cost matrix size mismatch");
    for (double s : supply) require(s >= 0.0 && std::isfinite(s), "transport: negative or non-finite supply");
    for (double d : demand) require(d >= 0.0 && std::isfinite(d), "transport: negative or non-finite demand");
    if (max_iterations == 0) max_iterations = 1000 * (supply.size() + demand.size()) + 100000;
    detail::NetworkSimplex ns(supply, demand, cost, max_iterations);
    return ns.solve();
}

}  // namespace swarmfield
