#include "network_simplex.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace laot::discrete::detail {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Relative threshold on reduced costs below which an arc is considered
// eligible to enter the basis.
constexpr double kPivotEps = 1e-13;
constexpr std::int64_t kMinBlockSize = 10;
constexpr std::int64_t kClockEvery = 1024;

}  // namespace

NetworkSimplex::NetworkSimplex(const Vector& supply_s, const Vector& demand_t,
                               const double* cost, double* flow)
    : ns_(static_cast<int>(supply_s.size())),
      nt_(static_cast<int>(demand_t.size())),
      node_num_(ns_ + nt_),
      root_(ns_ + nt_),
      arc_num_(static_cast<std::int64_t>(ns_) * nt_),
      cost_(cost),
      flow_(flow) {
  supply_.resize(static_cast<std::size_t>(node_num_ + 1));
  for (int i = 0; i < ns_; ++i) supply_[i] = supply_s[i];
  for (int j = 0; j < nt_; ++j) supply_[ns_ + j] = -demand_t[j];
  init();
}

void NetworkSimplex::init() {
  const auto nodes = static_cast<std::size_t>(node_num_ + 1);
  pi_.assign(nodes, 0.0);
  parent_.assign(nodes, -1);
  pred_.assign(nodes, -1);
  thread_.assign(nodes, 0);
  rev_thread_.assign(nodes, 0);
  succ_num_.assign(nodes, 0);
  last_succ_.assign(nodes, 0);
  pred_dir_.assign(nodes, 0);
  state_.assign(static_cast<std::size_t>(arc_num_ + node_num_), kStateLower);
  art_source_.assign(static_cast<std::size_t>(node_num_), 0);
  art_target_.assign(static_cast<std::size_t>(node_num_), 0);
  art_cost_.assign(static_cast<std::size_t>(node_num_), 0.0);
  art_flow_.assign(static_cast<std::size_t>(node_num_), 0.0);
  std::fill(flow_, flow_ + arc_num_, 0.0);

  double max_cost = 0.0;
  for (std::int64_t e = 0; e < arc_num_; ++e) max_cost = std::max(max_cost, std::abs(cost_[e]));
  art_cost_value_ = (max_cost + 1.0) * node_num_;

  double sum_supply = 0.0;
  for (int u = 0; u < node_num_; ++u) sum_supply += supply_[u];

  parent_[root_] = -1;
  pred_[root_] = -1;
  thread_[root_] = 0;
  rev_thread_[0] = root_;
  succ_num_[root_] = node_num_ + 1;
  last_succ_[root_] = root_ - 1;
  supply_[root_] = -sum_supply;
  pi_[root_] = 0.0;

  for (int u = 0; u < node_num_; ++u) {
    const std::int64_t e = arc_num_ + u;
    const auto a = static_cast<std::size_t>(u);
    parent_[u] = root_;
    pred_[u] = e;
    thread_[u] = u + 1;
    rev_thread_[u + 1] = u;
    succ_num_[u] = 1;
    last_succ_[u] = u;
    state_[static_cast<std::size_t>(e)] = kStateTree;
    if (supply_[u] >= 0.0) {
      pred_dir_[u] = kDirUp;
      pi_[u] = 0.0;
      art_source_[a] = u;
      art_target_[a] = root_;
      art_flow_[a] = supply_[u];
      art_cost_[a] = 0.0;
    } else {
      pred_dir_[u] = kDirDown;
      pi_[u] = art_cost_value_;
      art_source_[a] = root_;
      art_target_[a] = u;
      art_flow_[a] = -supply_[u];
      art_cost_[a] = art_cost_value_;
    }
  }

  block_size_ = std::max<std::int64_t>(
      static_cast<std::int64_t>(std::sqrt(static_cast<double>(arc_num_))), kMinBlockSize);
  next_arc_ = 0;
}

// Block search pivot rule over the real arcs.
bool NetworkSimplex::find_entering_arc() {
  if (arc_num_ == 0) return false;
  double best = 0.0;
  std::int64_t cnt = block_size_;
  std::int64_t e = next_arc_;
  std::int64_t i = e % ns_;
  std::int64_t j = e / ns_;
  const double* pi_t = pi_.data() + ns_;
  for (std::int64_t step = 0; step < arc_num_; ++step) {
    const double c = state_[static_cast<std::size_t>(e)] * (cost_[e] + pi_[i] - pi_t[j]);
    if (c < best) {
      best = c;
      in_arc_ = e;
    }
    ++e;
    if (++i == ns_) {
      i = 0;
      ++j;
    }
    if (e == arc_num_) {
      e = 0;
      i = 0;
      j = 0;
    }
    if (--cnt == 0) {
      if (best < 0.0) {
        const double scale = std::max({std::abs(pi_[source_of(in_arc_)]),
                                       std::abs(pi_[target_of(in_arc_)]),
                                       std::abs(cost_of(in_arc_)), 1.0});
        if (best < -kPivotEps * scale) {
          next_arc_ = e;
          return true;
        }
      }
      cnt = block_size_;
    }
  }
  if (best < 0.0) {
    const double scale = std::max({std::abs(pi_[source_of(in_arc_)]),
                                   std::abs(pi_[target_of(in_arc_)]),
                                   std::abs(cost_of(in_arc_)), 1.0});
    if (best < -kPivotEps * scale) {
      next_arc_ = e;
      return true;
    }
  }
  return false;
}

void NetworkSimplex::find_join_node() {
  int u = source_of(in_arc_);
  int v = target_of(in_arc_);
  while (u != v) {
    if (succ_num_[u] < succ_num_[v]) {
      u = parent_[u];
    } else {
      v = parent_[v];
    }
  }
  join_ = u;
}

bool NetworkSimplex::find_leaving_arc() {
  // Entering arcs are always at their lower bound (all capacities infinite),
  // so flow is pushed from source to target along the entering arc.
  const int first = source_of(in_arc_);
  const int second = target_of(in_arc_);
  delta_ = kInf;
  int result = 0;
  for (int u = first; u != join_; u = parent_[u]) {
    const double d = pred_dir_[u] == kDirUp ? flow_of(pred_[u]) : kInf;
    if (d < delta_) {
      delta_ = d;
      u_out_ = u;
      result = 1;
    }
  }
  for (int u = second; u != join_; u = parent_[u]) {
    const double d = pred_dir_[u] == kDirDown ? flow_of(pred_[u]) : kInf;
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

void NetworkSimplex::change_flow() {
  if (delta_ > 0.0) {
    const double val = delta_;
    flow_of(in_arc_) += val;
    for (int u = source_of(in_arc_); u != join_; u = parent_[u]) {
      flow_of(pred_[u]) -= pred_dir_[u] * val;
    }
    for (int u = target_of(in_arc_); u != join_; u = parent_[u]) {
      flow_of(pred_[u]) += pred_dir_[u] * val;
    }
  }
  state_[static_cast<std::size_t>(in_arc_)] = kStateTree;
  const std::int64_t out_arc = pred_[u_out_];
  state_[static_cast<std::size_t>(out_arc)] = kStateLower;
  flow_of(out_arc) = 0.0;
}

void NetworkSimplex::update_tree_structure() {
  const int old_rev_thread = rev_thread_[u_out_];
  const int old_succ_num = succ_num_[u_out_];
  const int old_last_succ = last_succ_[u_out_];
  v_out_ = parent_[u_out_];

  if (u_in_ == u_out_) {
    parent_[u_in_] = v_in_;
    pred_[u_in_] = in_arc_;
    pred_dir_[u_in_] = u_in_ == source_of(in_arc_) ? kDirUp : kDirDown;

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
    // When old_rev_thread == v_in, join and v_out coincide.
    const int thread_continue =
        old_rev_thread == v_in_ ? thread_[old_last_succ] : thread_[v_in_];

    // Re-hang the stem (nodes between u_in and u_out) below v_in.
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

    for (const int u : dirty_revs_) rev_thread_[thread_[u]] = u;

    // Reverse pred arcs along the stem and fix successor counts.
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
    pred_dir_[u_in_] = u_in_ == source_of(in_arc_) ? kDirUp : kDirDown;
    succ_num_[u_in_] = old_succ_num;
  }

  const int up_limit_out = last_succ_[join_] == v_in_ ? join_ : -1;
  const int last_succ_out = last_succ_[u_out_];
  for (int u = v_in_; u != -1 && last_succ_[u] == v_in_; u = parent_[u]) {
    last_succ_[u] = last_succ_out;
  }

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

void NetworkSimplex::update_potential() {
  const double sigma = pi_[v_in_] - pi_[u_in_] - pred_dir_[u_in_] * cost_of(in_arc_);
  const int end = thread_[last_succ_[u_in_]];
  for (int u = u_in_; u != end; u = thread_[u]) pi_[u] += sigma;
}

NetworkSimplex::Status NetworkSimplex::run(std::int64_t max_pivots, double time_budget_seconds) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto seconds_since_start = [&] {
    return std::chrono::duration<double>(clock::now() - start).count();
  };

  while (find_entering_arc()) {
    if (pivots_ >= max_pivots) {
      elapsed_ = seconds_since_start();
      return Status::pivot_limit;
    }
    find_join_node();
    if (!find_leaving_arc() || delta_ == kInf) {
      elapsed_ = seconds_since_start();
      return Status::unbounded;
    }
    change_flow();
    update_tree_structure();
    update_potential();
    ++pivots_;
    if (validate_each_pivot_ && !tree_is_consistent()) {
      throw NumericalFailure("network simplex: spanning tree corrupted at pivot " +
                             std::to_string(pivots_));
    }
    if (time_budget_seconds > 0.0 && pivots_ % kClockEvery == 0) {
      const double t = seconds_since_start();
      if (t > time_budget_seconds) {
        elapsed_ = t;
        throw TimeBudgetExceeded("network simplex exceeded its time budget after " +
                                     std::to_string(pivots_) + " pivots",
                                 t);
      }
    }
  }
  elapsed_ = seconds_since_start();

  double total_supply = 0.0;
  for (int u = 0; u < ns_; ++u) total_supply += std::max(supply_[u], 0.0);
  if (artificial_flow() > 1e-8 * std::max(1.0, total_supply)) return Status::infeasible;
  return Status::optimal;
}

double NetworkSimplex::artificial_flow() const {
  double s = 0.0;
  for (const double f : art_flow_) s += std::abs(f);
  return s;
}

bool NetworkSimplex::tree_is_consistent() const {
  const int total = node_num_ + 1;
  // Thread must be a single cycle through every node starting at the root.
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(total));
  std::vector<char> seen(static_cast<std::size_t>(total), 0);
  int u = root_;
  for (int step = 0; step < total; ++step) {
    if (seen[u]) return false;
    seen[u] = 1;
    order.push_back(u);
    if (rev_thread_[thread_[u]] != u) return false;
    u = thread_[u];
  }
  if (u != root_) return false;

  std::vector<int> position(static_cast<std::size_t>(total));
  for (int k = 0; k < total; ++k) position[order[k]] = k;

  for (int v = 0; v < total; ++v) {
    if (v == root_) continue;
    const int p = parent_[v];
    if (p < 0) return false;
    const std::int64_t e = pred_[v];
    if (state_[static_cast<std::size_t>(e)] != kStateTree) return false;
    const int s = source_of(e);
    const int t = target_of(e);
    if (pred_dir_[v] == kDirUp && !(s == v && t == p)) return false;
    if (pred_dir_[v] == kDirDown && !(s == p && t == v)) return false;
  }
  // Subtrees are contiguous thread segments of length succ_num ending at last_succ.
  for (int v = 0; v < total; ++v) {
    const int len = succ_num_[v];
    const int start = position[v];
    if (len < 1 || start + len > total) return false;
    if (order[start + len - 1] != last_succ_[v]) return false;
    for (int k = start + 1; k < start + len; ++k) {
      int w = order[k];
      while (w != -1 && w != v) w = parent_[w];
      if (w != v) return false;
    }
    if (start + len < total) {
      int w = order[start + len];
      while (w != -1 && w != v) w = parent_[w];
      if (w == v) return false;
    }
  }
  return true;
}

}  // namespace laot::discrete::detail
