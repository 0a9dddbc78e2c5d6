#pragma once

// Primal network simplex for the uncapacitated transportation problem on a
// complete bipartite graph. The spanning-tree bookkeeping (thread / reverse
// thread / successor counts / last successor) follows the classic layout
// used by LEMON; arcs are implicit so only per-arc state and flow are stored.

#include "laot/common.hpp"

#include <cstdint>
#include <vector>

namespace laot::discrete::detail {

class NetworkSimplex {
 public:
  enum class Status { optimal, infeasible, unbounded, pivot_limit };

  // supply_s: n_s source masses, demand_t: n_t target masses. `cost` and
  // `flow` are n_s x n_t column-major arrays; flow is overwritten.
  NetworkSimplex(const Vector& supply_s, const Vector& demand_t, const double* cost,
                 double* flow);

  Status run(std::int64_t max_pivots, double time_budget_seconds);

  std::int64_t pivots() const { return pivots_; }
  double elapsed_seconds() const { return elapsed_; }
  // Node potentials; reduced cost of arc (i, j) is C_ij + pi_i - pi_{n_s + j}.
  double potential(int node) const { return pi_[static_cast<std::size_t>(node)]; }
  // Residual mass left on artificial arcs after termination.
  double artificial_flow() const;

  // Structural self-check of the spanning tree; used by tests.
  bool tree_is_consistent() const;
  void set_validate_each_pivot(bool on) { validate_each_pivot_ = on; }

 private:
  static constexpr std::int8_t kStateTree = 0;
  static constexpr std::int8_t kStateLower = 1;
  static constexpr int kDirUp = 1;
  static constexpr int kDirDown = -1;

  int source_of(std::int64_t e) const {
    return e < arc_num_ ? static_cast<int>(e % ns_) : art_source_[static_cast<std::size_t>(e - arc_num_)];
  }
  int target_of(std::int64_t e) const {
    return e < arc_num_ ? static_cast<int>(ns_ + e / ns_) : art_target_[static_cast<std::size_t>(e - arc_num_)];
  }
  double cost_of(std::int64_t e) const {
    return e < arc_num_ ? cost_[e] : art_cost_[static_cast<std::size_t>(e - arc_num_)];
  }
  double& flow_of(std::int64_t e) {
    return e < arc_num_ ? flow_[e] : art_flow_[static_cast<std::size_t>(e - arc_num_)];
  }

  void init();
  bool find_entering_arc();
  void find_join_node();
  bool find_leaving_arc();
  void change_flow();
  void update_tree_structure();
  void update_potential();

  int ns_;
  int nt_;
  int node_num_;
  int root_;
  std::int64_t arc_num_;
  const double* cost_;
  double* flow_;

  std::vector<double> supply_;
  std::vector<double> pi_;
  std::vector<int> parent_;
  std::vector<std::int64_t> pred_;
  std::vector<int> thread_;
  std::vector<int> rev_thread_;
  std::vector<int> succ_num_;
  std::vector<int> last_succ_;
  std::vector<int> pred_dir_;
  std::vector<int> dirty_revs_;
  std::vector<std::int8_t> state_;

  std::vector<int> art_source_;
  std::vector<int> art_target_;
  std::vector<double> art_cost_;
  std::vector<double> art_flow_;

  double art_cost_value_ = 0.0;
  std::int64_t block_size_ = 0;
  std::int64_t next_arc_ = 0;

  std::int64_t in_arc_ = -1;
  int join_ = -1;
  int u_in_ = -1;
  int v_in_ = -1;
  int u_out_ = -1;
  int v_out_ = -1;
  double delta_ = 0.0;

  std::int64_t pivots_ = 0;
  double elapsed_ = 0.0;
  bool validate_each_pivot_ = false;
};

}  // namespace laot::discrete::detail
