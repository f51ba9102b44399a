//! Integer-lattice geometry: points of `Z^d`, Euclidean balls and shells with
//! wired boundaries, and fast point-keyed hash containers.
//!
//! Conventions: the norm is always Euclidean, `|x|^2` is carried as an exact
//! integer, and comparisons against real radii (`e^n`) put the exact integer
//! on the left. Shell balls follow `C_n = {|z| < e^n}` and `A_N = {|x| <= N}`.

use crate::error::{Error, Result};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::{BuildHasherDefault, Hasher};

pub const MAX_D: usize = 8;

/// Site of `Z^d`. Coordinates beyond `d` are zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Point {
    c: [i32; MAX_D],
    d: u8,
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl Point {
    pub fn origin(d: usize) -> Self {
        assert!((2..=MAX_D).contains(&d));
        Point {
            c: [0; MAX_D],
            d: d as u8,
        }
    }

    pub fn new(coords: &[i32]) -> Self {
        assert!((2..=MAX_D).contains(&coords.len()));
        let mut c = [0; MAX_D];
        c[..coords.len()].copy_from_slice(coords);
        Point {
            c,
            d: coords.len() as u8,
        }
    }

    /// Unit vector `+e_axis` (0-based).
    pub fn unit(d: usize, axis: usize) -> Self {
        let mut p = Point::origin(d);
        p.c[axis] = 1;
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.c[..self.d as usize]
    }

    #[inline]
    pub fn coord(&self, axis: usize) -> i32 {
        self.c[axis]
    }

    /// Exact squared Euclidean norm.
    #[inline]
    pub fn norm2(&self) -> i64 {
        let mut s = 0i64;
        for i in 0..self.d as usize {
            s += (self.c[i] as i64) * (self.c[i] as i64);
        }
        s
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        (self.norm2() as f64).sqrt()
    }

    /// Step one unit along `axis` in direction `sign` (+1/-1).
    #[inline]
    pub fn step(&self, axis: usize, sign: i32) -> Self {
        let mut p = *self;
        p.c[axis] += sign;
        p
    }

    /// Neighbor in canonical direction code `dir` in `0..2d`:
    /// `+e_1, -e_1, +e_2, -e_2, ...`
    #[inline]
    pub fn neighbor(&self, dir: usize) -> Self {
        let axis = dir >> 1;
        let sign = if dir & 1 == 0 { 1 } else { -1 };
        self.step(axis, sign)
    }

    pub fn add(&self, other: &Point) -> Self {
        let mut p = *self;
        for i in 0..self.d as usize {
            p.c[i] += other.c[i];
        }
        p
    }

    pub fn sub(&self, other: &Point) -> Self {
        let mut p = *self;
        for i in 0..self.d as usize {
            p.c[i] -= other.c[i];
        }
        p
    }

    pub fn scale(&self, k: i32) -> Self {
        let mut p = *self;
        for i in 0..self.d as usize {
            p.c[i] *= k;
        }
        p
    }

    /// Injective packing into 128 bits (16 bits per signed coordinate).
    /// Panics in debug builds if a coordinate exceeds +-32767.
    #[inline]
    pub fn key(&self) -> u128 {
        let mut k: u128 = self.d as u128;
        for i in 0..self.d as usize {
            debug_assert!(self.c[i].unsigned_abs() < 1 << 15);
            k = (k << 16) | ((self.c[i] as u16) as u128);
        }
        k
    }
}

/// The `2d` nearest neighbors in canonical order `+e_1, -e_1, ..., +e_d, -e_d`.
pub fn neighbors(x: &Point) -> Vec<Point> {
    (0..2 * x.dim()).map(|dir| x.neighbor(dir)).collect()
}

// ---------------------------------------------------------------------------
// Fast point-keyed containers (multiplicative hash over the packed key).

#[derive(Default, Clone)]
pub struct PointHasher {
    state: u64,
}

impl Hasher for PointHasher {
    #[inline]
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state = (self.state ^ b as u64).wrapping_mul(0x100_0000_01B3);
        }
    }
    #[inline]
    fn write_u128(&mut self, k: u128) {
        let lo = k as u64;
        let hi = (k >> 64) as u64;
        let mut h = lo.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ hi.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
        h ^= h >> 29;
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        self.state = h ^ (h >> 32);
    }
    #[inline]
    fn finish(&self) -> u64 {
        self.state
    }
}

pub type BuildPointHasher = BuildHasherDefault<PointHasher>;
pub type PointMap<V> = HashMap<u128, V, BuildPointHasher>;
pub type PointSet = HashSet<u128, BuildPointHasher>;

pub fn point_map<V>() -> PointMap<V> {
    HashMap::default()
}

pub fn point_set() -> PointSet {
    HashSet::default()
}

// ---------------------------------------------------------------------------
// Regions

/// Finite region of `Z^d` with a wired outer boundary.
#[derive(Clone, Debug)]
pub enum Region {
    /// `A_N = {x : |x| <= radius}`.
    EuclideanBall { radius: f64, d: usize },
    /// `C_n = {z : |z| < e^n}`.
    ShellBall { index: i32, d: usize },
    /// `A(m,n) = {z : e^m <= |z| < e^n}`.
    Annulus { m: i32, n: i32, d: usize },
    /// Explicit finite site set.
    Explicit { points: Vec<Point>, d: usize },
}

/// Enumeration guard for boundary/interior scans.
pub const DEFAULT_SITE_BUDGET: u64 = 5_000_000;

impl Region {
    pub fn ball(radius: f64, d: usize) -> Self {
        Region::EuclideanBall { radius, d }
    }

    pub fn shell_ball(index: i32, d: usize) -> Self {
        Region::ShellBall { index, d }
    }

    pub fn annulus(m: i32, n: i32, d: usize) -> Self {
        Region::Annulus { m, n, d }
    }

    pub fn explicit(points: Vec<Point>, d: usize) -> Self {
        Region::Explicit { points, d }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::EuclideanBall { d, .. }
            | Region::ShellBall { d, .. }
            | Region::Annulus { d, .. }
            | Region::Explicit { d, .. } => *d,
        }
    }

    #[inline]
    pub fn contains(&self, x: &Point) -> bool {
        let n2 = x.norm2() as f64;
        match self {
            Region::EuclideanBall { radius, .. } => n2 <= radius * radius,
            Region::ShellBall { index, .. } => n2 < (2.0 * *index as f64).exp(),
            Region::Annulus { m, n, .. } => {
                n2 >= (2.0 * *m as f64).exp() && n2 < (2.0 * *n as f64).exp()
            }
            Region::Explicit { points, .. } => points.iter().any(|p| p == x),
        }
    }

    /// Outer real radius bound used for enumeration boxes.
    pub(crate) fn radius_bound(&self) -> f64 {
        match self {
            Region::EuclideanBall { radius, .. } => *radius,
            Region::ShellBall { index, .. } => (*index as f64).exp(),
            Region::Annulus { n, .. } => (*n as f64).exp(),
            Region::Explicit { points, .. } => points
                .iter()
                .map(|p| p.norm())
                .fold(0.0, f64::max),
        }
    }

    fn estimated_sites(&self) -> u64 {
        let r = self.radius_bound() + 1.0;
        let d = self.dim() as i32;
        (2.0 * r + 1.0).powi(d).min(u64::MAX as f64) as u64
    }

    /// Enumerate interior points. Errors when the bounding box exceeds `budget`.
    pub fn interior_points(&self, budget: u64) -> Result<Vec<Point>> {
        if let Region::Explicit { points, .. } = self {
            return Ok(points.clone());
        }
        let est = self.estimated_sites();
        if est > budget {
            return Err(Error::RegionTooLarge {
                estimate: est,
                budget,
            });
        }
        let d = self.dim();
        let r = self.radius_bound().ceil() as i32;
        let mut out = Vec::new();
        let mut coords = vec![-r; d];
        'outer: loop {
            let p = Point::new(&coords);
            if self.contains(&p) {
                out.push(p);
            }
            for i in 0..d {
                coords[i] += 1;
                if coords[i] <= r {
                    continue 'outer;
                }
                coords[i] = -r;
            }
            break;
        }
        Ok(out)
    }

    /// Outer vertex boundary: points outside the region adjacent to a point
    /// inside it. Wired samplers identify all of these to a single root.
    pub fn boundary(&self, budget: u64) -> Result<Vec<Point>> {
        let interior = self.interior_points(budget)?;
        let inside: PointSet = interior.iter().map(|p| p.key()).collect();
        let mut seen = point_set();
        let mut out = Vec::new();
        for p in &interior {
            for dir in 0..2 * self.dim() {
                let q = p.neighbor(dir);
                if !inside.contains(&q.key()) && seen.insert(q.key()) {
                    out.push(q);
                }
            }
        }
        Ok(out)
    }
}

/// Shell membership helper: true iff `|z| < e^n`, exact integer on the left.
#[inline]
pub fn in_shell_ball(norm2: i64, n: i32) -> bool {
    (norm2 as f64) < (2.0 * n as f64).exp()
}

/// Membership predicate with the radius thresholds precomputed, for walk
/// loops that already carry `|x|^2` incrementally.
#[derive(Clone, Debug)]
pub struct QuickRegion {
    lo: f64,
    hi: f64,
    hi_inclusive: bool,
    explicit: Option<PointSet>,
}

impl QuickRegion {
    #[inline]
    pub fn contains(&self, norm2: i64, x: &Point) -> bool {
        if let Some(set) = &self.explicit {
            return set.contains(&x.key());
        }
        let v = norm2 as f64;
        v >= self.lo
            && if self.hi_inclusive {
                v <= self.hi
            } else {
                v < self.hi
            }
    }
}

impl Region {
    pub fn quick(&self) -> QuickRegion {
        let (lo, hi, hi_inclusive, explicit) = match self {
            Region::EuclideanBall { radius, .. } => (-1.0, radius * radius, true, None),
            Region::ShellBall { index, .. } => (-1.0, (2.0 * *index as f64).exp(), false, None),
            Region::Annulus { m, n, .. } => (
                (2.0 * *m as f64).exp(),
                (2.0 * *n as f64).exp(),
                false,
                None,
            ),
            Region::Explicit { points, .. } => (
                0.0,
                0.0,
                false,
                Some(points.iter().map(|p| p.key()).collect()),
            ),
        };
        QuickRegion {
            lo,
            hi,
            hi_inclusive,
            explicit,
        }
    }

    /// Safety cap for exit walks: vastly above the `R^2` expected exit time.
    pub fn step_cap(&self) -> u64 {
        let r = self.radius_bound();
        ((r * r + 100.0) * 1e6) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbors_canonical() {
        let o = Point::origin(4);
        let ns = neighbors(&o);
        assert_eq!(ns.len(), 8);
        for n in &ns {
            assert_eq!(n.norm2(), 1);
        }
        assert_eq!(ns[0], Point::new(&[1, 0, 0, 0]));
        assert_eq!(ns[1], Point::new(&[-1, 0, 0, 0]));
        assert_eq!(ns[7], Point::new(&[0, 0, 0, -1]));
    }

    #[test]
    fn neighbors_symmetric() {
        let x = Point::new(&[1, 0, 0, 0]);
        let ns = neighbors(&x);
        assert!(ns.contains(&Point::origin(4)));
        assert!(ns.contains(&Point::new(&[2, 0, 0, 0])));
        assert!(neighbors(&ns[0]).contains(&x));
    }

    #[test]
    fn a1_interior_in_z4() {
        let r = Region::ball(1.0, 4);
        let pts = r.interior_points(1_000).unwrap();
        assert_eq!(pts.len(), 9);
        assert!(pts.iter().all(|p| p.norm2() <= 1));
    }

    #[test]
    fn c0_is_origin_with_unit_boundary() {
        let r = Region::shell_ball(0, 4);
        let pts = r.interior_points(1_000).unwrap();
        assert_eq!(pts, vec![Point::origin(4)]);
        let b = r.boundary(1_000).unwrap();
        assert_eq!(b.len(), 8);
        assert!(b.iter().all(|p| p.norm2() == 1));
    }

    #[test]
    fn ball_count_matches_brute_force_scan() {
        // independent oracle: scan the full bounding box and count |x| <= N
        let n = 10i64;
        let d = 4;
        let mut count = 0u64;
        for a in -n..=n {
            for b in -n..=n {
                for c in -n..=n {
                    for e in -n..=n {
                        if a * a + b * b + c * c + e * e <= n * n {
                            count += 1;
                        }
                    }
                }
            }
        }
        let r = Region::ball(n as f64, d);
        assert_eq!(r.interior_points(1_000_000).unwrap().len() as u64, count);
    }

    #[test]
    fn boundary_disjoint_from_interior_and_adjacent() {
        let r = Region::ball(3.0, 3);
        let interior: PointSet = r
            .interior_points(100_000)
            .unwrap()
            .iter()
            .map(|p| p.key())
            .collect();
        for b in r.boundary(100_000).unwrap() {
            assert!(!interior.contains(&b.key()));
            assert!(neighbors(&b).iter().any(|q| interior.contains(&q.key())));
        }
    }

    #[test]
    fn oversized_region_errors() {
        let r = Region::shell_ball(9, 4);
        assert!(matches!(
            r.boundary(DEFAULT_SITE_BUDGET),
            Err(Error::RegionTooLarge { .. })
        ));
    }

    #[test]
    fn annulus_membership() {
        let r = Region::annulus(0, 1, 4);
        // e^0 = 1 <= |z| < e^1
        assert!(!r.contains(&Point::origin(4)));
        assert!(r.contains(&Point::new(&[1, 0, 0, 0])));
        assert!(r.contains(&Point::new(&[1, 1, 1, 0]))); // |z| = sqrt 3 < e
        assert!(!r.contains(&Point::new(&[2, 2, 0, 0]))); // |z| = 2.83 > e
    }
}
