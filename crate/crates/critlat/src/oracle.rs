//! Exact combinatorial and linear-algebra ground truth on tiny instances.
//!
//! Everything here is computed either in exact rational arithmetic or by two
//! independent exact routes (enumeration vs determinant), so the Monte Carlo
//! modules can be validated beyond statistical doubt.

use crate::error::{Error, Result};
use crate::wilson::WiredGraph;
use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::HashMap;

pub type Rational = Ratio<BigInt>;

pub const ENUMERATION_VERTEX_CAP: usize = 12;

/// Small undirected multigraph with a designated root. Vertices are
/// `0..vertices`; parallel edges are distinct.
#[derive(Clone, Debug)]
pub struct SmallGraph {
    pub vertices: usize,
    pub root: u32,
    pub edges: Vec<(u32, u32)>,
}

impl SmallGraph {
    pub fn new(vertices: usize, root: u32, edges: Vec<(u32, u32)>) -> Self {
        assert!((root as usize) < vertices);
        assert!(edges.iter().all(|&(u, v)| {
            (u as usize) < vertices && (v as usize) < vertices && u != v
        }));
        SmallGraph {
            vertices,
            root,
            edges,
        }
    }

    /// Complete graph K_k with vertex `root` as root.
    pub fn complete(k: usize, root: u32) -> Self {
        let mut edges = Vec::new();
        for u in 0..k as u32 {
            for v in u + 1..k as u32 {
                edges.push((u, v));
            }
        }
        SmallGraph::new(k, root, edges)
    }

    /// `k x k` grid wired to a single root: every edge from a cell leaving
    /// the grid becomes a parallel-capable edge to the root (vertex `k*k`).
    pub fn wired_grid(k: usize) -> Self {
        let n = k * k;
        let root = n as u32;
        let mut edges = Vec::new();
        let id = |r: usize, c: usize| (r * k + c) as u32;
        for r in 0..k {
            for c in 0..k {
                let u = id(r, c);
                // four lattice directions; interior edges once, exits to root
                if c + 1 < k {
                    edges.push((u, id(r, c + 1)));
                } else {
                    edges.push((u, root));
                }
                if c == 0 {
                    edges.push((u, root));
                }
                if r + 1 < k {
                    edges.push((u, id(r + 1, c)));
                } else {
                    edges.push((u, root));
                }
                if r == 0 {
                    edges.push((u, root));
                }
            }
        }
        SmallGraph::new(n + 1, root, edges)
    }

    pub fn degree(&self, v: u32) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == v || b == v)
            .count()
    }

    /// Adjacency in the `WiredGraph` form used by the Wilson sampler.
    pub fn to_wired(&self) -> WiredGraph {
        let mut adj = vec![Vec::new(); self.vertices];
        for (id, &(u, v)) in self.edges.iter().enumerate() {
            adj[u as usize].push((v, id as u32));
            adj[v as usize].push((u, id as u32));
        }
        WiredGraph {
            root: self.root,
            adj,
            n_edges: self.edges.len() as u32,
        }
    }

    /// Edge-list text format: one `u v` pair per line, `#root r` directive,
    /// blank lines and `#`-comments ignored.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut root: Option<u32> = None;
        let mut edges = Vec::new();
        let mut max_v = 0u32;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#root") {
                root = Some(
                    rest.trim()
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad root line: {line}")))?,
                );
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let u: u32 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad edge line: {line}")))?;
            let v: u32 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad edge line: {line}")))?;
            max_v = max_v.max(u).max(v);
            edges.push((u, v));
        }
        let root = root.ok_or_else(|| Error::Parse("missing #root directive".into()))?;
        Ok(SmallGraph::new((max_v.max(root) + 1) as usize, root, edges))
    }
}

// ---------------------------------------------------------------------------
// Spanning trees

/// All spanning trees as edge-index sets. Errors above the vertex cap.
pub fn enumerate_spanning_trees(g: &SmallGraph) -> Result<Vec<Vec<u32>>> {
    if g.vertices > ENUMERATION_VERTEX_CAP {
        return Err(Error::EnumerationCap {
            vertices: g.vertices,
            cap: ENUMERATION_VERTEX_CAP,
        });
    }
    let need = g.vertices - 1;
    let m = g.edges.len();
    let mut out = Vec::new();
    let mut chosen: Vec<u32> = Vec::with_capacity(need);
    fn rec(
        g: &SmallGraph,
        start: usize,
        need: usize,
        chosen: &mut Vec<u32>,
        out: &mut Vec<Vec<u32>>,
    ) {
        if chosen.len() == need {
            if is_spanning_tree(g, chosen) {
                out.push(chosen.clone());
            }
            return;
        }
        let remaining = need - chosen.len();
        for e in start..=g.edges.len().saturating_sub(remaining) {
            chosen.push(e as u32);
            rec(g, e + 1, need, chosen, out);
            chosen.pop();
        }
    }
    if need <= m {
        rec(g, 0, need, &mut chosen, &mut out);
    }
    Ok(out)
}

fn is_spanning_tree(g: &SmallGraph, edge_ids: &[u32]) -> bool {
    let mut parent: Vec<u32> = (0..g.vertices as u32).collect();
    fn find(parent: &mut [u32], mut v: u32) -> u32 {
        while parent[v as usize] != v {
            parent[v as usize] = parent[parent[v as usize] as usize];
            v = parent[v as usize];
        }
        v
    }
    let mut merged = 0;
    for &e in edge_ids {
        let (u, v) = g.edges[e as usize];
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru == rv {
            return false;
        }
        parent[ru as usize] = rv;
        merged += 1;
    }
    merged == g.vertices - 1
}

/// Number of spanning trees by the matrix-tree theorem: determinant of the
/// root-reduced Laplacian, exact integer arithmetic (fraction-free Bareiss).
pub fn matrix_tree_count(g: &SmallGraph) -> BigInt {
    let n = g.vertices;
    // index map skipping the root
    let mut idx = vec![usize::MAX; n];
    let mut k = 0;
    for v in 0..n {
        if v as u32 != g.root {
            idx[v] = k;
            k += 1;
        }
    }
    let mut lap = vec![vec![BigInt::zero(); k]; k];
    for &(u, v) in &g.edges {
        if u != g.root && v != g.root {
            let (iu, iv) = (idx[u as usize], idx[v as usize]);
            lap[iu][iv] -= 1;
            lap[iv][iu] -= 1;
        }
        if u != g.root {
            let iu = idx[u as usize];
            lap[iu][iu] += 1;
        }
        if v != g.root {
            let iv = idx[v as usize];
            lap[iv][iv] += 1;
        }
    }
    bareiss_determinant(lap)
}

fn bareiss_determinant(mut m: Vec<Vec<BigInt>>) -> BigInt {
    let n = m.len();
    if n == 0 {
        return BigInt::one();
    }
    let mut sign = BigInt::one();
    let mut prev = BigInt::one();
    for k in 0..n - 1 {
        if m[k][k].is_zero() {
            let swap = (k + 1..n).find(|&r| !m[r][k].is_zero());
            match swap {
                Some(r) => {
                    m.swap(k, r);
                    sign = -sign;
                }
                None => return BigInt::zero(),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let num = &m[i][j] * &m[k][k] - &m[i][k] * &m[k][j];
                m[i][j] = num / &prev;
            }
        }
        prev = m[k][k].clone();
    }
    sign * m[n - 1][n - 1].clone()
}

/// Parent edge id per non-root vertex (in vertex order) for a spanning tree
/// given as an edge-id set. Canonical tree signature shared with the Wilson
/// sampler's `Forest::signature`.
pub fn tree_signature(g: &SmallGraph, edge_ids: &[u32]) -> Vec<u32> {
    let parents = root_tree(g, edge_ids);
    (0..g.vertices as u32)
        .filter(|&v| v != g.root)
        .map(|v| parents[v as usize].1)
        .collect()
}

/// (parent vertex, parent edge id) per vertex when the tree is rooted.
fn root_tree(g: &SmallGraph, edge_ids: &[u32]) -> Vec<(u32, u32)> {
    let mut adj: Vec<Vec<(u32, u32)>> = vec![Vec::new(); g.vertices];
    for &e in edge_ids {
        let (u, v) = g.edges[e as usize];
        adj[u as usize].push((v, e));
        adj[v as usize].push((u, e));
    }
    let mut parent = vec![(u32::MAX, u32::MAX); g.vertices];
    let mut stack = vec![g.root];
    let mut seen = vec![false; g.vertices];
    seen[g.root as usize] = true;
    while let Some(u) = stack.pop() {
        for &(v, e) in &adj[u as usize] {
            if !seen[v as usize] {
                seen[v as usize] = true;
                parent[v as usize] = (u, e);
                stack.push(v);
            }
        }
    }
    parent
}

/// Unique tree path from `start` to the root, as a vertex sequence
/// (both endpoints included).
pub fn tree_path(g: &SmallGraph, edge_ids: &[u32], start: u32) -> Vec<u32> {
    let parents = root_tree(g, edge_ids);
    let mut path = vec![start];
    let mut v = start;
    while v != g.root {
        v = parents[v as usize].0;
        path.push(v);
    }
    path
}

/// Exact LERW law via Wilson's correspondence: P(eta = beta) is the fraction
/// of spanning trees whose start-to-root path is beta. Probabilities sum to
/// exactly one in rational arithmetic.
pub fn exact_lerw_law(g: &SmallGraph, start: u32) -> Result<HashMap<Vec<u32>, Rational>> {
    let trees = enumerate_spanning_trees(g)?;
    let total = BigInt::from(trees.len());
    let mut counts: HashMap<Vec<u32>, BigInt> = HashMap::new();
    for t in &trees {
        *counts.entry(tree_path(g, t, start)).or_insert_with(BigInt::zero) += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(k, c)| (k, Rational::new(c, total.clone())))
        .collect())
}

// ---------------------------------------------------------------------------
// Exact linear algebra

/// Scalar usable in the dense Gaussian solver.
pub trait SolveScalar:
    Clone
    + PartialEq
    + Zero
    + One
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
{
    /// Pivot weight; exact scalars only need zero vs nonzero.
    fn pivot_mag(&self) -> f64;
}

impl SolveScalar for f64 {
    fn pivot_mag(&self) -> f64 {
        self.abs()
    }
}

impl SolveScalar for Rational {
    fn pivot_mag(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.to_f64().map(f64::abs).unwrap_or(1.0).max(1e-300)
        }
    }
}

/// Dense Gaussian elimination with partial pivoting, generic over the scalar.
pub fn solve_dense<T: SolveScalar>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = a.len();
    assert!(a.iter().all(|row| row.len() == n) && b.len() == n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .pivot_mag()
                .partial_cmp(&a[j][col].pivot_mag())
                .unwrap()
        })?;
        if a[pivot][col].pivot_mag() == 0.0 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            if a[row][col].is_zero() {
                continue;
            }
            let f = a[row][col].clone() / a[col][col].clone();
            for k in col..n {
                let sub = f.clone() * a[col][k].clone();
                a[row][k] = a[row][k].clone() - sub;
            }
            let sub = f * b[col].clone();
            b[row] = b[row].clone() - sub;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row].clone();
        for k in row + 1..n {
            acc = acc - a[row][k].clone() * x[k].clone();
        }
        x[row] = acc / a[row][row].clone();
    }
    Some(x)
}

/// Exact probability that the walk from `start` hits a vertex of `targets`
/// before being absorbed at the root. Rational arithmetic up to the
/// enumeration cap, f64 beyond it.
pub fn exact_hitting(g: &SmallGraph, targets: &[bool], start: u32) -> Rational {
    assert_eq!(targets.len(), g.vertices);
    if targets[start as usize] {
        return Rational::one();
    }
    if start == g.root {
        return Rational::zero();
    }
    // unknowns: vertices that are neither root nor target
    let mut idx = vec![usize::MAX; g.vertices];
    let mut free = Vec::new();
    for v in 0..g.vertices {
        if v as u32 != g.root && !targets[v] {
            idx[v] = free.len();
            free.push(v as u32);
        }
    }
    let n = free.len();
    let mut a = vec![vec![Rational::zero(); n]; n];
    let mut b = vec![Rational::zero(); n];
    for (i, &v) in free.iter().enumerate() {
        let deg = BigInt::from(g.degree(v));
        a[i][i] = Rational::one();
        for &(x, y) in &g.edges {
            let other = if x == v {
                y
            } else if y == v {
                x
            } else {
                continue;
            };
            let w = Rational::new(BigInt::one(), deg.clone());
            if targets[other as usize] {
                b[i] += w;
            } else if other != g.root {
                a[i][idx[other as usize]] -= w;
            }
        }
    }
    let x = solve_dense(a, b).expect("hitting system is nonsingular");
    x[idx[start as usize]].clone()
}

/// Exact Green function on the graph absorbed at the root: expected visits
/// to `y` by the walk from `x`.
pub fn exact_green(g: &SmallGraph, x: u32, y: u32) -> Rational {
    if x == g.root || y == g.root {
        return Rational::zero();
    }
    let mut idx = vec![usize::MAX; g.vertices];
    let mut free = Vec::new();
    for v in 0..g.vertices {
        if v as u32 != g.root {
            idx[v] = free.len();
            free.push(v as u32);
        }
    }
    let n = free.len();
    // (I - Q) z = e_y, z[x] = expected visits to y from x
    let mut a = vec![vec![Rational::zero(); n]; n];
    let mut b = vec![Rational::zero(); n];
    b[idx[y as usize]] = Rational::one();
    for (i, &v) in free.iter().enumerate() {
        let deg = BigInt::from(g.degree(v));
        a[i][i] = Rational::one();
        for &(p, q) in &g.edges {
            let other = if p == v {
                q
            } else if q == v {
                p
            } else {
                continue;
            };
            if other != g.root {
                a[i][idx[other as usize]] -= Rational::new(BigInt::one(), deg.clone());
            }
        }
    }
    let z = solve_dense(a, b).expect("green system is nonsingular");
    z[idx[x as usize]].clone()
}

/// Exact avoidance probability used by the two-sided sampler's tiny-graph
/// validation: the walk from `start`, after its first step, reaches the root
/// without visiting any vertex of `forbidden`.
pub fn exact_avoidance(g: &SmallGraph, forbidden: &[bool], start: u32) -> Rational {
    // f(v) = P(reach root before hitting forbidden), averaged over the
    // first step out of `start`
    let mut reach = vec![Rational::zero(); g.vertices];
    for v in 0..g.vertices as u32 {
        if v == g.root {
            reach[v as usize] = Rational::one();
        } else if !forbidden[v as usize] {
            reach[v as usize] = Rational::one() - exact_hitting(g, forbidden, v);
        }
    }
    let deg = BigInt::from(g.degree(start));
    let mut total = Rational::zero();
    for &(u, v) in &g.edges {
        let other = if u == start {
            v
        } else if v == start {
            u
        } else {
            continue;
        };
        if other == g.root {
            total += Rational::new(BigInt::one(), deg.clone());
        } else if !forbidden[other as usize] {
            total += reach[other as usize].clone() * Rational::new(BigInt::one(), deg.clone());
        }
    }
    total
}
