//! Simple-random-walk paths, chronological loop-erasure, loop-free times and
//! occupancy indexes for O(1) intersection queries.

use crate::error::{Error, Result};
use crate::lattice::{point_map, Point, PointMap, Region};
use crate::rng::{Rng, SeedStream};
use std::io::{Read, Write};

/// Nearest-neighbor path on `Z^d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Walk {
    sites: Vec<Point>,
}

impl Walk {
    pub fn new(sites: Vec<Point>) -> Self {
        debug_assert!(!sites.is_empty());
        debug_assert!(sites
            .windows(2)
            .all(|w| w[0].sub(&w[1]).norm2() == 1));
        Walk { sites }
    }

    pub fn sites(&self) -> &[Point] {
        &self.sites
    }

    pub fn start(&self) -> &Point {
        &self.sites[0]
    }

    pub fn end(&self) -> &Point {
        self.sites.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.sites.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.sites[0].dim()
    }

    /// Compact binary format: magic, dimension, length, start coordinates,
    /// then one direction code (`0..2d-1`) per step.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"CLWK")?;
        w.write_all(&[self.dim() as u8])?;
        w.write_all(&(self.sites.len() as u64).to_le_bytes())?;
        for i in 0..self.dim() {
            w.write_all(&self.sites[0].coord(i).to_le_bytes())?;
        }
        for pair in self.sites.windows(2) {
            let diff = pair[1].sub(&pair[0]);
            let mut code = None;
            for dir in 0..2 * self.dim() {
                if pair[0].neighbor(dir) == pair[1] {
                    code = Some(dir as u8);
                    break;
                }
            }
            let _ = diff;
            w.write_all(&[code.expect("consecutive sites are neighbors")])?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"CLWK" {
            return Err(Error::Parse("bad walk magic".into()));
        }
        let mut db = [0u8; 1];
        r.read_exact(&mut db)?;
        let d = db[0] as usize;
        let mut lb = [0u8; 8];
        r.read_exact(&mut lb)?;
        let len = u64::from_le_bytes(lb) as usize;
        let mut coords = vec![0i32; d];
        for c in coords.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *c = i32::from_le_bytes(b);
        }
        let mut sites = Vec::with_capacity(len);
        let mut p = Point::new(&coords);
        sites.push(p);
        for _ in 1..len {
            let mut b = [0u8; 1];
            r.read_exact(&mut b)?;
            if b[0] as usize >= 2 * d {
                return Err(Error::Parse(format!("bad step code {}", b[0])));
            }
            p = p.neighbor(b[0] as usize);
            sites.push(p);
        }
        Ok(Walk::new(sites))
    }

    /// Debug CSV: one site per row.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let names: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        writeln!(w, "index,{}", names.join(","))?;
        for (i, p) in self.sites.iter().enumerate() {
            let row: Vec<String> = p.coords().iter().map(|c| c.to_string()).collect();
            writeln!(w, "{},{}", i, row.join(","))?;
        }
        Ok(())
    }
}

/// Self-avoiding nearest-neighbor path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Saw {
    sites: Vec<Point>,
}

impl Saw {
    pub fn new(sites: Vec<Point>) -> Self {
        debug_assert!(sites
            .windows(2)
            .all(|w| w[0].sub(&w[1]).norm2() == 1));
        debug_assert!({
            let mut seen = crate::lattice::point_set();
            sites.iter().all(|p| seen.insert(p.key()))
        });
        Saw { sites }
    }

    pub fn sites(&self) -> &[Point] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Drop the first site (used for `Gamma_n`: loop-erasure minus the origin).
    pub fn without_first(&self) -> Saw {
        Saw {
            sites: self.sites[1..].to_vec(),
        }
    }

    pub fn reversed(&self) -> Saw {
        let mut sites = self.sites.clone();
        sites.reverse();
        Saw { sites }
    }
}

/// Point -> smallest visit index over a path; `O(1)` membership.
#[derive(Clone, Debug, Default)]
pub struct Occupancy {
    map: PointMap<u32>,
    max_norm2: i64,
}

impl Occupancy {
    pub fn from_sites(sites: &[Point]) -> Self {
        let mut map = point_map();
        let mut max_norm2 = -1;
        for (i, p) in sites.iter().enumerate() {
            map.entry(p.key()).or_insert(i as u32);
            max_norm2 = max_norm2.max(p.norm2());
        }
        Occupancy { map, max_norm2 }
    }

    pub fn from_walk(w: &Walk) -> Self {
        Self::from_sites(w.sites())
    }

    pub fn from_saw(s: &Saw) -> Self {
        Self::from_sites(s.sites())
    }

    pub fn empty() -> Self {
        Occupancy {
            map: point_map(),
            max_norm2: -1,
        }
    }

    #[inline]
    pub fn contains(&self, p: &Point) -> bool {
        p.norm2() <= self.max_norm2 && self.map.contains_key(&p.key())
    }

    #[inline]
    pub fn contains_key(&self, key: u128, norm2: i64) -> bool {
        norm2 <= self.max_norm2 && self.map.contains_key(&key)
    }

    pub fn first_visit(&self, p: &Point) -> Option<u32> {
        self.map.get(&p.key()).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Largest exact `|x|^2` over indexed sites (`-1` when empty).
    pub fn max_norm2(&self) -> i64 {
        self.max_norm2
    }

    pub fn remove(&mut self, p: &Point) {
        self.map.remove(&p.key());
    }
}

/// First-exit indices `sigma_n = min{j : S_j not in C_n}` per shell index.
#[derive(Clone, Debug)]
pub struct StoppingTimes {
    sigma: Vec<usize>,
}

impl StoppingTimes {
    /// `sigma(n)` when the walk attained it.
    pub fn sigma(&self, n: usize) -> Option<usize> {
        self.sigma.get(n).copied()
    }

    pub fn attained(&self) -> usize {
        self.sigma.len()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.sigma
    }
}

// ---------------------------------------------------------------------------
// Stepping

/// Position plus incrementally maintained `|x|^2`.
#[derive(Clone, Debug)]
pub struct Walker {
    p: Point,
    n2: i64,
}

impl Walker {
    pub fn new(p: Point) -> Self {
        let n2 = p.norm2();
        Walker { p, n2 }
    }

    #[inline]
    pub fn pos(&self) -> &Point {
        &self.p
    }

    #[inline]
    pub fn norm2(&self) -> i64 {
        self.n2
    }

    #[inline]
    pub fn step_dir(&mut self, dir: usize) {
        let axis = dir >> 1;
        let sign: i32 = if dir & 1 == 0 { 1 } else { -1 };
        self.n2 += 2 * (sign as i64) * (self.p.coord(axis) as i64) + 1;
        *self = Walker {
            p: self.p.step(axis, sign),
            n2: self.n2,
        };
    }

    #[inline]
    pub fn step_random(&mut self, rng: &mut Rng) {
        let dir = rng.below(2 * self.p.dim() as u64) as usize;
        self.step_dir(dir);
    }
}

// ---------------------------------------------------------------------------
// Operations

/// SRW from `start` run until it leaves `region`, wired-boundary convention:
/// the last site is the first one outside. A start already outside yields the
/// single-point walk. Exceeding `cap` steps is an error (never a silent
/// truncation).
pub fn srw_until_exit(
    start: &Point,
    region: &Region,
    seed: SeedStream,
    cap: u64,
) -> Result<Walk> {
    let mut rng = seed.rng();
    srw_until_exit_rng(start, region, &mut rng, cap)
}

pub fn srw_until_exit_rng(
    start: &Point,
    region: &Region,
    rng: &mut Rng,
    cap: u64,
) -> Result<Walk> {
    let mut sites = vec![*start];
    if !region.contains(start) {
        return Ok(Walk::new(sites));
    }
    let two_d = 2 * start.dim() as u64;
    let mut cur = *start;
    for _ in 0..cap {
        cur = cur.neighbor(rng.below(two_d) as usize);
        sites.push(cur);
        if !region.contains(&cur) {
            return Ok(Walk::new(sites));
        }
    }
    Err(Error::CapExceeded {
        cap,
        partial_len: sites.len(),
    })
}

/// SRW of exactly `k` steps.
pub fn srw_fixed_steps(start: &Point, k: usize, seed: SeedStream) -> Walk {
    let mut rng = seed.rng();
    let two_d = 2 * start.dim() as u64;
    let mut sites = Vec::with_capacity(k + 1);
    let mut cur = *start;
    sites.push(cur);
    for _ in 0..k {
        cur = cur.neighbor(rng.below(two_d) as usize);
        sites.push(cur);
    }
    Walk::new(sites)
}

/// Chronological loop-erasure: on a revisit, erase the loop just closed.
/// Preserves endpoints; idempotent on self-avoiding input; `O(length)`.
pub fn loop_erase(walk: &Walk) -> Saw {
    let mut le = StreamingLoopErase::new();
    for p in walk.sites() {
        le.push(*p);
    }
    le.finish()
}

/// Incremental chronological loop-erasure; lets callers erase loops from
/// walks too long to materialize.
#[derive(Clone, Debug, Default)]
pub struct StreamingLoopErase {
    path: Vec<Point>,
    pos: PointMap<u32>,
}

impl StreamingLoopErase {
    pub fn new() -> Self {
        StreamingLoopErase {
            path: Vec::new(),
            pos: point_map(),
        }
    }

    pub fn push(&mut self, p: Point) {
        match self.pos.get(&p.key()) {
            Some(&j) => {
                for q in self.path.drain(j as usize + 1..) {
                    self.pos.remove(&q.key());
                }
            }
            None => {
                self.pos.insert(p.key(), self.path.len() as u32);
                self.path.push(p);
            }
        }
    }

    pub fn current(&self) -> &[Point] {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }

    pub fn finish(self) -> Saw {
        Saw::new(self.path)
    }
}

/// Indices `j` with `walk[0..=j]` and `walk[j+1..]` sharing no site.
/// Two-pass occupancy sweep, `O(length)` expected.
pub fn loop_free_times(walk: &Walk) -> Vec<usize> {
    let sites = walk.sites();
    let n = sites.len();
    if n == 0 {
        return Vec::new();
    }
    // multiset of the suffix, set of the prefix, count of shared keys
    let mut suffix: PointMap<u32> = point_map();
    for p in &sites[1..] {
        *suffix.entry(p.key()).or_insert(0) += 1;
    }
    let mut prefix = crate::lattice::point_set();
    let mut shared = 0usize;
    let mut out = Vec::new();

    let enter_prefix =
        |key: u128, prefix: &mut crate::lattice::PointSet, suffix: &PointMap<u32>, shared: &mut usize| {
            if prefix.insert(key) && suffix.contains_key(&key) {
                *shared += 1;
            }
        };

    enter_prefix(sites[0].key(), &mut prefix, &suffix, &mut shared);
    if shared == 0 {
        out.push(0);
    }
    for j in 1..n {
        // move sites[j] from the suffix into the prefix
        let key = sites[j].key();
        let cnt = suffix.get_mut(&key).unwrap();
        *cnt -= 1;
        if *cnt == 0 {
            suffix.remove(&key);
            if prefix.contains(&key) {
                shared -= 1;
            }
        }
        enter_prefix(key, &mut prefix, &suffix, &mut shared);
        if shared == 0 {
            out.push(j);
        }
    }
    out
}

/// Smallest index `i` (respecting `skip_first`) with `walk[i]` in `target`.
pub fn first_intersection(walk: &Walk, target: &Occupancy, skip_first: bool) -> Option<usize> {
    let from = usize::from(skip_first);
    walk.sites()[from..]
        .iter()
        .position(|p| target.contains(p))
        .map(|i| i + from)
}

/// Shell exit times `sigma_0..sigma_nmax` along the walk (prefix if the walk
/// is too short to exit `C_nmax`).
pub fn shell_stopping_times(walk: &Walk, n_max: usize) -> StoppingTimes {
    let mut sigma = Vec::with_capacity(n_max + 1);
    let mut n = 0usize;
    for (j, p) in walk.sites().iter().enumerate() {
        let norm2 = p.norm2();
        while n <= n_max && !crate::lattice::in_shell_ball(norm2, n as i32) {
            sigma.push(j);
            n += 1;
        }
        if n > n_max {
            break;
        }
    }
    StoppingTimes { sigma }
}
