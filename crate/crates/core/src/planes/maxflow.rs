//! Dinic max-flow on real capacities, with the minimum cut read off the
//! final residual graph.

use std::collections::VecDeque;

/// Residual capacities at or below this are treated as saturated.
const EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: f64,
    rev: usize,
}

#[derive(Debug, Clone)]
pub struct FlowGraph {
    adj: Vec<Vec<Arc>>,
    level: Vec<i32>,
    cursor: Vec<usize>,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
            level: vec![0; nodes],
            cursor: vec![0; nodes],
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Adds a directed arc `u → v`. Non-positive capacities are ignored.
    pub fn add_edge(&mut self, u: usize, v: usize, cap: f64) {
        if !(cap > 0.0) || u == v {
            return;
        }
        let ru = self.adj[v].len();
        let rv = self.adj[u].len();
        self.adj[u].push(Arc { to: v, cap, rev: ru });
        self.adj[v].push(Arc { to: u, cap: 0.0, rev: rv });
    }

    /// Adds arcs in both directions with the given capacities.
    pub fn add_edge_pair(&mut self, u: usize, v: usize, cap_uv: f64, cap_vu: f64) {
        if u == v {
            return;
        }
        let cap_uv = cap_uv.max(0.0);
        let cap_vu = cap_vu.max(0.0);
        if cap_uv == 0.0 && cap_vu == 0.0 {
            return;
        }
        let ru = self.adj[v].len();
        let rv = self.adj[u].len();
        self.adj[u].push(Arc { to: v, cap: cap_uv, rev: ru });
        self.adj[v].push(Arc { to: u, cap: cap_vu, rev: rv });
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for a in &self.adj[u] {
                if a.cap > EPS && self.level[a.to] < 0 {
                    self.level[a.to] = self.level[u] + 1;
                    queue.push_back(a.to);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, u: usize, t: usize, pushed: f64) -> f64 {
        if u == t {
            return pushed;
        }
        while self.cursor[u] < self.adj[u].len() {
            let i = self.cursor[u];
            let (to, cap) = (self.adj[u][i].to, self.adj[u][i].cap);
            if cap > EPS && self.level[to] == self.level[u] + 1 {
                let got = self.dfs(to, t, pushed.min(cap));
                if got > 0.0 {
                    self.adj[u][i].cap -= got;
                    let rev = self.adj[u][i].rev;
                    self.adj[to][rev].cap += got;
                    return got;
                }
            }
            self.cursor[u] += 1;
        }
        0.0
    }

    /// Maximum flow value from `s` to `t`.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut flow = 0.0;
        while self.bfs(s, t) {
            self.cursor.iter_mut().for_each(|c| *c = 0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= 0.0 {
                    break;
                }
                flow += f;
            }
        }
        flow
    }

    /// After [`max_flow`](Self::max_flow): whether each node lies on the
    /// source side of the minimum cut.
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for a in &self.adj[u] {
                if a.cap > EPS && !seen[a.to] {
                    seen[a.to] = true;
                    stack.push(a.to);
                }
            }
        }
        seen
    }
}
