//! Laakso graphs `G_m`: six scaled copies of `G_{m-1}`, four glued in a cycle
//! with the remaining two hanging off the cycle's entry and exit.

use std::collections::VecDeque;
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::FiniteMetricSpace;
use crate::rational::{self, Rational};

pub const MAX_LEVEL: usize = 6;
/// Levels up to this one cache the full hop-distance matrix.
pub const MATRIX_LEVEL: usize = 4;

/// Positions of the level-1 pattern. The cycle is `a -> b0 -> c` and
/// `a -> b1 -> c`; `r` and `s` are the pendant ends.
const PATTERN_NAMES: [&str; 6] = ["r", "a", "b0", "b1", "c", "s"];
/// Copy `j` replaces pattern edge `PATTERN_EDGES[j]` (oriented away from the root).
const PATTERN_EDGES: [(usize, usize); 6] = [(0, 1), (1, 2), (2, 4), (1, 3), (3, 4), (4, 5)];
/// Hop level of each pattern position, in units of the copy length.
const PATTERN_LEVELS: [u64; 6] = [0, 1, 2, 2, 3, 4];

#[derive(Clone, Debug, Serialize)]
pub struct LaaksoVertex {
    pub id: usize,
    /// Copy indices from the top level down, then the pattern position.
    pub address: String,
    /// Hop distance from the root (units of `4^-m`).
    pub level: u64,
}

#[derive(Debug)]
pub struct LaaksoGraph {
    m: usize,
    vertices: Vec<LaaksoVertex>,
    /// Directed away from the root.
    edges: Vec<(usize, usize)>,
    root: usize,
    sink: usize,
    out: Vec<Vec<usize>>,
    adj: Vec<Vec<usize>>,
    hop_matrix: OnceLock<Vec<u32>>,
}

struct Proto {
    n: usize,
    address: Vec<String>,
    level: Vec<u64>,
    edges: Vec<(usize, usize)>,
    root: usize,
    sink: usize,
}

fn proto(m: usize) -> Proto {
    if m == 0 {
        return Proto {
            n: 2,
            address: vec!["r".into(), "s".into()],
            level: vec![0, 1],
            edges: vec![(0, 1)],
            root: 0,
            sink: 1,
        };
    }
    let sub = proto(m - 1);
    let unit = 4u64.pow(m as u32 - 1);
    let mut address: Vec<String> = PATTERN_NAMES.iter().map(|s| s.to_string()).collect();
    let mut level: Vec<u64> = PATTERN_LEVELS.iter().map(|l| l * unit).collect();
    let mut edges = Vec::with_capacity(sub.edges.len() * 6);
    for (j, &(start, end)) in PATTERN_EDGES.iter().enumerate() {
        let mut map = vec![usize::MAX; sub.n];
        map[sub.root] = start;
        map[sub.sink] = end;
        for v in 0..sub.n {
            if v != sub.root && v != sub.sink {
                map[v] = address.len();
                address.push(format!("{j}.{}", sub.address[v]));
                level.push(level[start] + sub.level[v]);
            }
        }
        edges.extend(sub.edges.iter().map(|&(u, v)| (map[u], map[v])));
    }
    Proto { n: address.len(), address, level, edges, root: 0, sink: 5 }
}

impl LaaksoGraph {
    pub fn build(m: usize) -> Result<Self> {
        if m > MAX_LEVEL {
            return Err(Error::TooLarge { what: "Laakso level", value: m, limit: MAX_LEVEL });
        }
        let p = proto(m);
        let mut out = vec![Vec::new(); p.n];
        let mut adj = vec![Vec::new(); p.n];
        for &(u, v) in &p.edges {
            out[u].push(v);
            adj[u].push(v);
            adj[v].push(u);
        }
        let vertices = (0..p.n)
            .map(|id| LaaksoVertex { id, address: p.address[id].clone(), level: p.level[id] })
            .collect();
        Ok(Self { m, vertices, edges: p.edges, root: p.root, sink: p.sink, out, adj, hop_matrix: OnceLock::new() })
    }

    pub fn level(&self) -> usize {
        self.m
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[LaaksoVertex] {
        &self.vertices
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    /// Hop distance from the root along the orientation.
    pub fn vertex_level(&self, v: usize) -> u64 {
        self.vertices[v].level
    }

    /// Number of edges on every root-to-sink path, `4^m`.
    pub fn path_length(&self) -> u64 {
        4u64.pow(self.m as u32)
    }

    /// Length of each edge, `4^-m`.
    pub fn edge_length(&self) -> Rational {
        rational::ratio(1, self.path_length() as i64)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn out_neighbors(&self, v: usize) -> &[usize] {
        &self.out[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    /// Directed edges, each from the endpoint closer to the root.
    pub fn orient(&self) -> Vec<(usize, usize)> {
        self.edges.clone()
    }

    /// BFS hop distances from `src` in the undirected graph.
    pub fn hops_from(&self, src: usize) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.vertex_count()];
        let mut queue = VecDeque::from([src]);
        dist[src] = 0;
        while let Some(u) = queue.pop_front() {
            for &w in &self.adj[u] {
                if dist[w] == u32::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// All-pairs hop matrix, row-major. Only for `m <= MATRIX_LEVEL`.
    pub fn hop_matrix(&self) -> Option<&[u32]> {
        if self.m > MATRIX_LEVEL {
            return None;
        }
        Some(self.hop_matrix.get_or_init(|| {
            let n = self.vertex_count();
            let mut all = Vec::with_capacity(n * n);
            for s in 0..n {
                all.extend(self.hops_from(s));
            }
            all
        }))
    }

    pub fn hop_distance(&self, u: usize, v: usize) -> u32 {
        match self.hop_matrix() {
            Some(mat) => mat[u * self.vertex_count() + v],
            None => self.hops_from(u)[v],
        }
    }

    /// Shortest-path distance with edges of length `4^-m`.
    pub fn distance(&self, u: usize, v: usize) -> Rational {
        rational::ratio(self.hop_distance(u, v) as i64, self.path_length() as i64)
    }

    /// Exact finite metric space on all vertices, labeled by address.
    pub fn metric_space(&self) -> Result<FiniteMetricSpace> {
        if self.m > MATRIX_LEVEL {
            return Err(Error::TooLarge { what: "Laakso level for a dense metric", value: self.m, limit: MATRIX_LEVEL });
        }
        let n = self.vertex_count();
        let rows = (0..n).map(|u| (0..n).map(|v| self.distance(u, v)).collect()).collect();
        FiniteMetricSpace::exact(self.vertices.iter().map(|v| v.address.clone()).collect(), rows)
    }

    /// Greedy covers of `B(x, r)` by balls of radius `r/2` centered in the ball,
    /// for every vertex `x` and every radius. Counts are upper bounds on the
    /// optimal cover number.
    pub fn doubling_check(&self, radii: &[Rational]) -> DoublingReport {
        let n = self.vertex_count();
        let scale = rational::int(self.path_length() as i64);
        let mut samples = Vec::new();
        for r in radii {
            let r_hops = r * &scale;
            let mut worst = 0usize;
            let mut worst_center = 0usize;
            for x in 0..n {
                let dx = self.hops_from(x);
                let ball: Vec<usize> = (0..n).filter(|&y| rational::int(dx[y] as i64) <= r_hops).collect();
                let mut covered = vec![false; n];
                let mut count = 0;
                for &c in &ball {
                    if covered[c] {
                        continue;
                    }
                    count += 1;
                    let dc = self.hops_from(c);
                    for &y in &ball {
                        if rational::int(2 * dc[y] as i64) <= r_hops {
                            covered[y] = true;
                        }
                    }
                }
                if count > worst {
                    worst = count;
                    worst_center = x;
                }
            }
            samples.push(DoublingSample { radius: rational::format(r), worst_center, greedy_count: worst });
        }
        let max_count = samples.iter().map(|s| s.greedy_count).max().unwrap_or(0);
        DoublingReport { m: self.m, samples, max_count, upper_bound_only: true }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "m": self.m,
            "vertices": self.vertices,
            "edges": self.edges,
            "root": self.root,
            "sink": self.sink,
        })
    }

    pub fn to_dot(&self) -> String {
        let mut s = format!("digraph laakso_{} {{\n  rankdir=LR;\n", self.m);
        for v in &self.vertices {
            s.push_str(&format!("  {} [label=\"{}\"];\n", v.id, v.address));
        }
        for (u, v) in &self.edges {
            s.push_str(&format!("  {u} -> {v};\n"));
        }
        s.push_str("}\n");
        s
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DoublingSample {
    pub radius: String,
    pub worst_center: usize,
    pub greedy_count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DoublingReport {
    pub m: usize,
    pub samples: Vec<DoublingSample>,
    pub max_count: usize,
    /// Greedy counts bound the optimal cover from above only.
    pub upper_bound_only: bool,
}
