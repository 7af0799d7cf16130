//! Primal network simplex for the balanced transportation problem.
//!
//! Nodes `0..m` are sources (supply `a_i`), `m..m+n` are sinks (demand `b_j`) and
//! node `m+n` is an artificial root. The initial basis hangs every node off the
//! root through an uncapacitated artificial arc of cost `ART`, which is strongly
//! feasible; the leaving-arc rule keeps it so, which rules out cycling on the
//! heavily degenerate assignment instances.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
/// Potentials are rebuilt from the tree every this many pivots to stop drift.
const REFRESH_EVERY: usize = 64;

pub(crate) struct Solution {
    /// `(i, j, flow)` for every real arc carrying positive flow.
    pub flows: Vec<(usize, usize, f64)>,
    /// Row duals `f_i` and column duals `g_j` with `f_i + g_j <= c_ij`.
    pub row_dual: Vec<f64>,
    pub col_dual: Vec<f64>,
    pub pivots: usize,
}

struct Tree<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    art_cost: f64,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// `true` when `pred[u]` points from `u` to its parent.
    up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    first_child: Vec<usize>,
    next_sib: Vec<usize>,
    prev_sib: Vec<usize>,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
}

impl<'a> Tree<'a> {
    fn root(&self) -> usize {
        self.m + self.n
    }

    fn real_arcs(&self) -> usize {
        self.m * self.n
    }

    #[inline]
    fn source(&self, arc: usize) -> usize {
        let real = self.real_arcs();
        if arc < real {
            arc / self.n
        } else {
            let u = arc - real;
            if u < self.m {
                u
            } else {
                self.root()
            }
        }
    }

    #[inline]
    fn target(&self, arc: usize) -> usize {
        let real = self.real_arcs();
        if arc < real {
            self.m + arc % self.n
        } else {
            let u = arc - real;
            if u < self.m {
                self.root()
            } else {
                u
            }
        }
    }

    #[inline]
    fn arc_cost(&self, arc: usize) -> f64 {
        if arc < self.real_arcs() {
            self.cost[arc]
        } else {
            self.art_cost
        }
    }

    fn detach(&mut self, u: usize) {
        let p = self.parent[u];
        let (prev, next) = (self.prev_sib[u], self.next_sib[u]);
        if prev != NONE {
            self.next_sib[prev] = next;
        } else if p != NONE {
            self.first_child[p] = next;
        }
        if next != NONE {
            self.prev_sib[next] = prev;
        }
        self.prev_sib[u] = NONE;
        self.next_sib[u] = NONE;
    }

    fn attach(&mut self, u: usize, p: usize) {
        self.parent[u] = p;
        let head = self.first_child[p];
        self.next_sib[u] = head;
        self.prev_sib[u] = NONE;
        if head != NONE {
            self.prev_sib[head] = u;
        }
        self.first_child[p] = u;
    }

    /// Sets potentials and depths of the subtree below `top` from its parent link.
    fn relabel_subtree(&mut self, top: usize, stack: &mut Vec<usize>) {
        stack.clear();
        stack.push(top);
        while let Some(u) = stack.pop() {
            let p = self.parent[u];
            if p != NONE {
                let a = self.pred[u];
                let c = self.arc_cost(a);
                // reduced cost c + pi[source] - pi[target] vanishes on tree arcs
                self.pi[u] = if self.up[u] { self.pi[p] - c } else { self.pi[p] + c };
                self.depth[u] = self.depth[p] + 1;
            }
            let mut ch = self.first_child[u];
            while ch != NONE {
                stack.push(ch);
                ch = self.next_sib[ch];
            }
        }
    }

    fn refresh_potentials(&mut self, stack: &mut Vec<usize>) {
        let root = self.root();
        self.pi[root] = 0.0;
        self.depth[root] = 0;
        self.relabel_subtree(root, stack);
        // shift so that real-node potentials stay small; only differences matter
        let off = self.pi[0];
        for p in &mut self.pi {
            *p -= off;
        }
    }

    #[inline]
    fn reduced_cost(&self, arc: usize) -> f64 {
        self.arc_cost(arc) + self.pi[self.source(arc)] - self.pi[self.target(arc)]
    }
}

/// Solves `min <C, P>` over `P >= 0` with row sums `supply` and column sums `demand`.
pub(crate) fn solve(cost: &[f64], supply: &[f64], demand: &[f64]) -> Result<Solution> {
    let m = supply.len();
    let n = demand.len();
    if cost.len() != m * n {
        return Err(Error::DimensionMismatch { expected: m * n, got: cost.len() });
    }
    let max_cost = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let node_count = m + n + 1;
    let arc_count = m * n + m + n;
    let art_cost = (max_cost + 1.0) * (m + n) as f64;
    let tol = 1e-11 * (max_cost + 1.0);

    let mut t = Tree {
        m,
        n,
        cost,
        art_cost,
        parent: vec![NONE; node_count],
        pred: vec![NONE; node_count],
        up: vec![false; node_count],
        depth: vec![0; node_count],
        pi: vec![0.0; node_count],
        first_child: vec![NONE; node_count],
        next_sib: vec![NONE; node_count],
        prev_sib: vec![NONE; node_count],
        flow: vec![0.0; arc_count],
        in_tree: vec![false; arc_count],
    };
    let root = t.root();
    for u in (0..m + n).rev() {
        let arc = m * n + u;
        t.attach(u, root);
        t.pred[u] = arc;
        t.in_tree[arc] = true;
        if u < m {
            t.up[u] = true;
            t.flow[arc] = supply[u];
        } else {
            t.up[u] = false;
            t.flow[arc] = demand[u - m];
        }
    }
    let mut stack = Vec::with_capacity(node_count);
    t.refresh_potentials(&mut stack);

    let block = ((arc_count as f64).sqrt() as usize).max(16).min(arc_count);
    let mut next_arc = 0usize;
    let mut pivots = 0usize;
    let mut path = Vec::new();
    let max_pivots = 50 * arc_count + 100_000;

    loop {
        // block search pricing
        let mut best = NONE;
        let mut best_rc = -tol;
        let mut scanned = 0usize;
        let mut in_block = 0usize;
        while scanned < arc_count {
            let a = next_arc;
            next_arc += 1;
            if next_arc == arc_count {
                next_arc = 0;
            }
            scanned += 1;
            in_block += 1;
            if !t.in_tree[a] {
                let rc = t.reduced_cost(a);
                if rc < best_rc {
                    best_rc = rc;
                    best = a;
                }
            }
            if in_block == block {
                if best != NONE {
                    break;
                }
                in_block = 0;
            }
        }
        if best == NONE {
            // confirm against freshly rebuilt potentials before declaring optimality
            t.refresh_potentials(&mut stack);
            let any = (0..arc_count).any(|a| !t.in_tree[a] && t.reduced_cost(a) < -tol);
            if any {
                continue;
            }
            break;
        }

        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Solver(format!("network simplex exceeded {max_pivots} pivots")));
        }
        let entering = best;
        let s = t.source(entering);
        let tg = t.target(entering);

        let (mut a, mut b) = (s, tg);
        while a != b {
            if t.depth[a] > t.depth[b] {
                a = t.parent[a];
            } else if t.depth[b] > t.depth[a] {
                b = t.parent[b];
            } else {
                a = t.parent[a];
                b = t.parent[b];
            }
        }
        let join = a;

        // last blocking arc in cycle orientation (join -> s -> tg -> join)
        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut from_source_side = true;
        let mut u = s;
        while u != join {
            if t.up[u] {
                let d = t.flow[t.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                    from_source_side = true;
                }
            }
            u = t.parent[u];
        }
        let mut u = tg;
        while u != join {
            if !t.up[u] {
                let d = t.flow[t.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    from_source_side = false;
                }
            }
            u = t.parent[u];
        }
        if u_out == NONE {
            return Err(Error::Solver("unbounded pivot in transportation problem".into()));
        }

        if delta > 0.0 {
            t.flow[entering] += delta;
            let mut u = s;
            while u != join {
                let a = t.pred[u];
                if t.up[u] {
                    t.flow[a] -= delta;
                } else {
                    t.flow[a] += delta;
                }
                u = t.parent[u];
            }
            let mut u = tg;
            while u != join {
                let a = t.pred[u];
                if t.up[u] {
                    t.flow[a] += delta;
                } else {
                    t.flow[a] -= delta;
                }
                u = t.parent[u];
            }
        }
        let leaving = t.pred[u_out];
        t.flow[leaving] = 0.0;

        let (u_in, v_in) = if from_source_side { (s, tg) } else { (tg, s) };

        // reverse the path u_in -> ... -> u_out and hang it below v_in
        path.clear();
        let mut w = u_in;
        loop {
            path.push((w, t.pred[w], t.up[w]));
            if w == u_out {
                break;
            }
            w = t.parent[w];
        }
        for &(w, _, _) in &path {
            t.detach(w);
        }
        t.attach(u_in, v_in);
        t.pred[u_in] = entering;
        t.up[u_in] = t.source(entering) == u_in;
        for k in 1..path.len() {
            let (w, _, _) = path[k];
            let (prev, prev_pred, prev_up) = path[k - 1];
            t.attach(w, prev);
            t.pred[w] = prev_pred;
            t.up[w] = !prev_up;
        }
        t.in_tree[leaving] = false;
        t.in_tree[entering] = true;

        if pivots.is_multiple_of(REFRESH_EVERY) {
            t.refresh_potentials(&mut stack);
        } else {
            t.relabel_subtree(u_in, &mut stack);
        }
    }

    let artificial: f64 = t.flow[m * n..].iter().sum();
    let scale = supply.iter().sum::<f64>().max(1.0);
    if artificial > 1e-9 * scale {
        return Err(Error::Solver(format!("infeasible marginals (artificial flow {artificial:e})")));
    }

    let mut flows = Vec::with_capacity(m + n);
    for i in 0..m {
        for j in 0..n {
            let f = t.flow[i * n + j];
            if f > 0.0 {
                flows.push((i, j, f));
            }
        }
    }
    let row_dual = (0..m).map(|i| -t.pi[i]).collect();
    let col_dual = (0..n).map(|j| t.pi[m + j]).collect();
    Ok(Solution { flows, row_dual, col_dual, pivots })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective(sol: &Solution, cost: &[f64], n: usize) -> f64 {
        sol.flows.iter().map(|&(i, j, f)| f * cost[i * n + j]).sum()
    }

    #[test]
    fn two_by_two_swap() {
        let cost = [1.0, 0.0, 0.0, 1.0];
        let sol = solve(&cost, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!(objective(&sol, &cost, 2).abs() < 1e-15);
    }

    #[test]
    fn unequal_sizes_and_weights() {
        // 1D points, cost |x-y|^2; monotone coupling is optimal
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.5, 2.5];
        let a = [0.2, 0.3, 0.5];
        let b = [0.6, 0.4];
        let cost: Vec<f64> = xs.iter().flat_map(|x| ys.iter().map(move |y| (x - y) * (x - y))).collect();
        let sol = solve(&cost, &a, &b).unwrap();
        // monotone: 0.2 of x0->y0, 0.3 of x1->y0, 0.1 of x2->y0, 0.4 of x2->y1
        let expected = 0.2 * 0.25 + 0.3 * 0.25 + 0.1 * 2.25 + 0.4 * 0.25;
        assert!((objective(&sol, &cost, 2) - expected).abs() < 1e-14);
        for &(i, j, f) in &sol.flows {
            assert!(f >= 0.0);
            assert!((sol.row_dual[i] + sol.col_dual[j] - cost[i * 2 + j]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_identity_assignment() {
        let n = 40;
        let cost: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { 1.0 }).collect();
        let w = vec![1.0 / n as f64; n];
        let sol = solve(&cost, &w, &w).unwrap();
        assert!(objective(&sol, &cost, n).abs() < 1e-14);
    }
}
