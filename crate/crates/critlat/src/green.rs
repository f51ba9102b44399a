//! Lattice Green functions: the free walk via a modified-Bessel time
//! integral, Dirichlet (absorbed) versions via conjugate-gradient solves or
//! visit counting, and their bi-harmonic convolutions.

use crate::error::{Error, Result};
use crate::estimate::{pairwise_sum, Estimate};
use crate::lattice::{point_map, Point, PointMap, Region};
use crate::rng::SeedStream;
use crate::stats::{gamma_p, ln_gamma};
use crate::walk::Walker;
use rayon::prelude::*;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

/// Interior-site cap for the exact Dirichlet mode; larger regions must use
/// Monte Carlo visit counting.
pub const DEFAULT_EXACT_SITES: u64 = 500_000;

/// Leading free-Green coefficient `C_d = d Gamma(d/2) / ((d-2) pi^{d/2})`,
/// so `G(x) ~ C_d |x|^{2-d}`.
pub fn free_green_constant(d: usize) -> f64 {
    let df = d as f64;
    df * ln_gamma(df / 2.0).exp() / ((df - 2.0) * PI.powf(df / 2.0))
}

/// Surface area of the unit sphere in `R^d`.
pub(crate) fn sphere_area(d: usize) -> f64 {
    let df = d as f64;
    2.0 * PI.powf(df / 2.0) / ln_gamma(df / 2.0).exp()
}

// ---------------------------------------------------------------------------
// Scaled modified Bessel functions

/// `e^{-z} I_k(z)` for `k = 0..=k_max` by Miller's downward recurrence,
/// normalized with `I_0 + 2 sum_k I_k = e^z`.
pub fn bessel_i_scaled(k_max: usize, z: f64) -> Vec<f64> {
    let mut out = vec![0.0; k_max + 1];
    bessel_i_scaled_into(k_max, z, &mut out);
    out
}

fn bessel_i_scaled_into(k_max: usize, z: f64, out: &mut [f64]) {
    debug_assert!(z >= 0.0 && out.len() == k_max + 1);
    if z < 1e-14 {
        out.fill(0.0);
        out[0] = 1.0;
        return;
    }
    let start = k_max + (2.0 * z.sqrt()) as usize + 40;
    out.fill(0.0);
    let mut above = 0.0f64; // unnormalized value at order k+1
    let mut here = 1e-300; // at order k
    let mut sum = 0.0f64;
    for k in (1..=start).rev() {
        if k <= k_max {
            out[k] = here;
        }
        sum += 2.0 * here;
        let below = above + (2.0 * k as f64 / z) * here;
        above = here;
        here = below;
        if here > 1e250 {
            above *= 1e-250;
            here *= 1e-250;
            sum *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    sum += here;
    out[0] = here;
    for v in out.iter_mut() {
        *v /= sum;
    }
}

// ---------------------------------------------------------------------------
// Quadrature helpers

fn adaptive_simpson<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Integrate on `[0, t_max]` over geometrically growing panels.
fn panel_integrate<F: FnMut(f64) -> f64>(f: &mut F, t_max: f64, tol: f64) -> f64 {
    let mut edges = vec![0.0, 1.0f64.min(t_max)];
    while *edges.last().unwrap() < t_max {
        let next = (edges.last().unwrap() * 3.0).min(t_max);
        edges.push(next);
    }
    let per_panel = tol / edges.len() as f64;
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += adaptive_simpson(f, w[0], w[1], per_panel);
    }
    total
}

/// `int_{t0}^inf t^{-mu} e^{-a/t} dt` for `mu > 1`, closed form via the
/// regularized incomplete gamma.
fn tail_moment(a: f64, t0: f64, mu: f64) -> f64 {
    let nu = mu - 1.0;
    debug_assert!(nu > 0.0 && t0 > 0.0);
    if a < 1e-12 {
        t0.powf(-nu) / nu
    } else {
        ln_gamma(nu).exp() * gamma_p(nu, a / t0) / a.powf(nu)
    }
}

/// `e^{-t} prod_i I_{|x_i|}(t/d)`: transition density of the continuous-time
/// walk, whose time integrals give the Green functions.
fn heat_product(orders: &[usize], k_max: usize, t: f64, df: f64, buf: &mut Vec<f64>) -> f64 {
    buf.resize(k_max + 1, 0.0);
    bessel_i_scaled_into(k_max, t / df, buf);
    orders.iter().map(|&k| buf[k]).product()
}

// ---------------------------------------------------------------------------
// Free Green function

/// `G(x)`: expected visits to `x` by the free walk from the origin, `d >= 3`.
/// One-dimensional time integral of the Bessel product, with the large-time
/// tail summed in closed form.
pub fn green_free(x: &Point, tol: f64) -> Result<f64> {
    let d = x.dim();
    if d < 3 {
        return Err(Error::Dimension(d));
    }
    assert!(tol > 0.0);
    let df = d as f64;
    let n2 = x.norm2() as f64;
    let a = df * n2 / 2.0;
    let t_max = (30.0 * n2).max(60.0);
    let orders: Vec<usize> = x.coords().iter().map(|c| c.unsigned_abs() as usize).collect();
    let k_max = orders.iter().copied().max().unwrap();
    let mut buf = Vec::new();
    let mut f = |t: f64| heat_product(&orders, k_max, t, df, &mut buf);
    let numeric = panel_integrate(&mut f, t_max, 0.5 * tol);
    let pref = (df / (2.0 * PI)).powf(df / 2.0);
    let tail = pref
        * (tail_moment(a, t_max, df / 2.0)
            + df * df / 8.0 * tail_moment(a, t_max, df / 2.0 + 1.0));
    Ok(numeric + tail)
}

/// Monte Carlo `G(0)`: visits to the origin before leaving `|x| <= kill_radius`,
/// plus the analytic remainder `C_d |exit|^{2-d}` for visits after.
pub fn green_free_mc(d: usize, kill_radius: f64, samples: u64, seed: SeedStream) -> Estimate {
    let r2 = kill_radius * kill_radius;
    let cd = free_green_constant(d);
    let p = (2.0 - d as f64) / 2.0;
    let vals: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.child(i).rng();
            let mut w = Walker::new(Point::origin(d));
            let mut visits = 1.0f64;
            loop {
                w.step_random(&mut rng);
                let n2 = w.norm2();
                if n2 as f64 > r2 {
                    return visits + cd * (n2 as f64).powf(p);
                }
                if n2 == 0 {
                    visits += 1.0;
                }
            }
        })
        .collect();
    Estimate::from_samples(&vals, seed.key())
}

/// `G^2(x,y) = sum_z G(x,z) G(z,y)` for `d >= 5`, as the first time moment of
/// the transition density.
pub fn g2_free(x: &Point, y: &Point, tol: f64) -> Result<f64> {
    let d = x.dim();
    if d == 4 {
        return Err(Error::G2FreeDivergent);
    }
    if d < 5 {
        return Err(Error::DimensionTooLow { need: 5, got: d });
    }
    let delta = x.sub(y);
    let df = d as f64;
    let n2 = delta.norm2() as f64;
    let a = df * n2 / 2.0;
    let t_max = (30.0 * n2).max(200.0);
    let orders: Vec<usize> = delta
        .coords()
        .iter()
        .map(|c| c.unsigned_abs() as usize)
        .collect();
    let k_max = orders.iter().copied().max().unwrap();
    let mut buf = Vec::new();
    let mut f = |t: f64| t * heat_product(&orders, k_max, t, df, &mut buf);
    let numeric = panel_integrate(&mut f, t_max, 0.5 * tol);
    let pref = (df / (2.0 * PI)).powf(df / 2.0);
    let tail = pref
        * (tail_moment(a, t_max, df / 2.0 - 1.0)
            + df * df / 8.0 * tail_moment(a, t_max, df / 2.0));
    Ok(numeric + tail)
}

// ---------------------------------------------------------------------------
// Cached free-Green evaluator

/// Memoized free Green function: exact quadrature per symmetry class up to a
/// radius, then the two-term asymptotic with a fitted anisotropic correction.
/// Immutable after build; shareable across threads.
#[derive(Clone, Debug)]
pub struct GreenCache {
    d: usize,
    exact_norm2_cap: i64,
    table: HashMap<u64, f64>,
    c_d: f64,
    alpha: f64,
    beta: f64,
}

fn class_key(sorted: &[i32]) -> u64 {
    let mut k = 0u64;
    for &v in sorted {
        debug_assert!((0..256).contains(&v));
        k = (k << 8) | v as u64;
    }
    k
}

fn class_key_of(x: &Point) -> u64 {
    let mut c: Vec<i32> = x.coords().iter().map(|v| v.abs()).collect();
    c.sort_unstable();
    class_key(&c)
}

/// Non-decreasing coordinate tuples of length `d` with `|x| <= r`: one
/// representative per lattice symmetry class.
fn sorted_classes(d: usize, r: u32) -> Vec<Vec<i32>> {
    fn rec(d: usize, min: i32, rem: i64, cur: &mut Vec<i32>, out: &mut Vec<Vec<i32>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        let mut v = min;
        while (v as i64) * (v as i64) <= rem {
            cur.push(v);
            rec(d, v, rem - (v as i64) * (v as i64), cur, out);
            cur.pop();
            v += 1;
        }
    }
    let mut out = Vec::new();
    rec(d, 0, (r as i64) * (r as i64), &mut Vec::with_capacity(d), &mut out);
    out
}

/// Lattice points in the symmetry class of a sorted tuple: permutations of
/// the multiset times sign choices of the nonzero entries.
pub fn class_multiplicity(sorted: &[i32]) -> u64 {
    let d = sorted.len();
    let mut perms: u64 = (1..=d as u64).product();
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j < d && sorted[j] == sorted[i] {
            j += 1;
        }
        perms /= (1..=(j - i) as u64).product::<u64>();
        i = j;
    }
    let nonzero = sorted.iter().filter(|&&v| v != 0).count() as u32;
    perms << nonzero
}

impl GreenCache {
    pub fn build(d: usize, exact_radius: u32, tol: f64) -> Result<Self> {
        if d < 3 {
            return Err(Error::Dimension(d));
        }
        assert!((1..256).contains(&exact_radius));
        let classes = sorted_classes(d, exact_radius);
        let vals: Vec<(u64, f64)> = classes
            .par_iter()
            .map(|c| {
                let g = green_free(&Point::new(c), tol).expect("d checked above");
                (class_key(c), g)
            })
            .collect();
        let table: HashMap<u64, f64> = vals.iter().copied().collect();
        let c_d = free_green_constant(d);
        // fit the |x|^{-d} correction (alpha + beta * sum x_i^4/|x|^4) on the
        // outer part of the exact window
        let fit_lo = (0.7 * exact_radius as f64).powi(2);
        let df = d as f64;
        let (mut s1, mut sk, mut skk, mut su, mut sku) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (c, (_, g)) in classes.iter().zip(&vals) {
            let n2: i64 = c.iter().map(|&v| (v as i64) * (v as i64)).sum();
            let n2f = n2 as f64;
            if n2f < fit_lo {
                continue;
            }
            let quart: f64 = c.iter().map(|&v| (v as f64).powi(4)).sum();
            let k = quart / (n2f * n2f);
            let u = (g - c_d * n2f.powf((2.0 - df) / 2.0)) * n2f.powf(df / 2.0);
            s1 += 1.0;
            sk += k;
            skk += k * k;
            su += u;
            sku += k * u;
        }
        let det = s1 * skk - sk * sk;
        let (alpha, beta) = if det.abs() > 1e-12 {
            ((su * skk - sku * sk) / det, (s1 * sku - sk * su) / det)
        } else {
            (0.0, 0.0)
        };
        Ok(GreenCache {
            d,
            exact_norm2_cap: (exact_radius as i64).pow(2),
            table,
            c_d,
            alpha,
            beta,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn value(&self, x: &Point) -> f64 {
        let n2 = x.norm2();
        if n2 <= self.exact_norm2_cap {
            self.table[&class_key_of(x)]
        } else {
            self.asymptotic(x, n2)
        }
    }

    #[inline]
    fn asymptotic(&self, x: &Point, n2: i64) -> f64 {
        let n2f = n2 as f64;
        let s = n2f.sqrt();
        let quart: f64 = x.coords().iter().map(|&c| {
            let cf = c as f64;
            cf * cf * cf * cf
        }).sum();
        let k = quart / (n2f * n2f);
        self.c_d * s.powi(2 - self.d as i32) + (self.alpha + self.beta * k) * s.powi(-(self.d as i32))
    }
}

// ---------------------------------------------------------------------------
// Dirichlet Green functions

/// Exact Dirichlet Green solver on a finite region: the walk is absorbed on
/// first exit. Columns are computed by plain conjugate gradients on `I - P`
/// (symmetric positive definite, unit diagonal) to residual 1e-10.
pub struct DirichletGreen {
    d: usize,
    points: Vec<Point>,
    index: PointMap<u32>,
    /// `2d` entries per site; `u32::MAX` marks an absorbing neighbor.
    nbr: Vec<u32>,
}

impl DirichletGreen {
    pub fn new(region: &Region, max_sites: u64) -> Result<Self> {
        let box_budget = max_sites.saturating_mul(64);
        let points = region.interior_points(box_budget).map_err(|e| match e {
            Error::RegionTooLarge { estimate, .. } => Error::ExactModeBudget {
                sites: estimate,
                budget: max_sites,
            },
            other => other,
        })?;
        if points.len() as u64 > max_sites {
            return Err(Error::ExactModeBudget {
                sites: points.len() as u64,
                budget: max_sites,
            });
        }
        let d = region.dim();
        let mut index: PointMap<u32> = point_map();
        for (i, p) in points.iter().enumerate() {
            index.insert(p.key(), i as u32);
        }
        let mut nbr = vec![u32::MAX; points.len() * 2 * d];
        for (i, p) in points.iter().enumerate() {
            for dir in 0..2 * d {
                if let Some(&j) = index.get(&p.neighbor(dir).key()) {
                    nbr[i * 2 * d + dir] = j;
                }
            }
        }
        Ok(DirichletGreen {
            d,
            points,
            index,
            nbr,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn vertex(&self, p: &Point) -> Option<u32> {
        self.index.get(&p.key()).copied()
    }

    /// `out = (I - P) v` with absorbing boundary.
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let two_d = 2 * self.d;
        let inv = 1.0 / two_d as f64;
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = 0.0;
            for &j in &self.nbr[i * two_d..(i + 1) * two_d] {
                if j != u32::MAX {
                    acc += v[j as usize];
                }
            }
            *o = v[i] - inv * acc;
        });
    }

    /// Full column `G(x, .)` over the interior.
    pub fn solve_from(&self, x: &Point) -> Result<Vec<f64>> {
        let vx = self
            .vertex(x)
            .ok_or_else(|| Error::OutsideRegion(x.to_string()))?;
        let n = self.points.len();
        let mut b = vec![0.0; n];
        b[vx as usize] = 1.0;
        let mut sol = vec![0.0; n];
        let mut r = b;
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rs = det_dot(&r, &r);
        for _ in 0..10 * n as u64 + 200 {
            if rs.sqrt() <= 1e-10 {
                return Ok(sol);
            }
            self.apply(&p, &mut ap);
            let alpha = rs / det_dot(&p, &ap);
            for i in 0..n {
                sol[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rs_new = det_dot(&r, &r);
            let beta = rs_new / rs;
            rs = rs_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        Err(Error::Invalid("conjugate gradients stalled".into()))
    }

    pub fn green(&self, x: &Point, y: &Point) -> Result<f64> {
        let vy = match (self.vertex(x), self.vertex(y)) {
            (Some(_), Some(b)) => b,
            _ => return Ok(0.0),
        };
        let col = self.solve_from(x)?;
        Ok(col[vy as usize])
    }

    /// `G_N^2(x,y)`: two Dirichlet solves and one inner product.
    pub fn g2(&self, x: &Point, y: &Point) -> Result<f64> {
        if self.vertex(x).is_none() || self.vertex(y).is_none() {
            return Ok(0.0);
        }
        let gx = self.solve_from(x)?;
        let gy = if x == y { gx.clone() } else { self.solve_from(y)? };
        Ok(det_dot(&gx, &gy))
    }

    /// Largest discrete-Laplacian residual of a solved column away from its
    /// source site.
    pub fn laplacian_residual(&self, col: &[f64], source: &Point) -> f64 {
        let src = self.vertex(source);
        let two_d = 2 * self.d;
        let inv = 1.0 / two_d as f64;
        let mut worst = 0.0f64;
        for i in 0..col.len() {
            if Some(i as u32) == src {
                continue;
            }
            let mut acc = 0.0;
            for &j in &self.nbr[i * two_d..(i + 1) * two_d] {
                if j != u32::MAX {
                    acc += col[j as usize];
                }
            }
            worst = worst.max((col[i] - inv * acc).abs());
        }
        worst
    }

    /// Symmetric Green table over the given source points (parallel over
    /// sources, deterministic entry order).
    pub fn table(&self, sources: &[Point], tol: f64, domain: &str) -> Result<GreenTable> {
        let cols: Vec<Vec<f64>> = sources
            .par_iter()
            .map(|x| self.solve_from(x))
            .collect::<Result<_>>()?;
        let mut t = GreenTable::new(domain, self.d, Method::Solve, tol);
        for (i, x) in sources.iter().enumerate() {
            for y in sources.iter() {
                let vy = self.vertex(y).unwrap() as usize;
                t.push(*x, *y, cols[i][vy]);
            }
        }
        Ok(t)
    }
}

/// Deterministic dot product: fixed 4096-element chunking with a pairwise
/// reduction over chunk sums, independent of thread count.
fn det_dot(a: &[f64], b: &[f64]) -> f64 {
    let partials: Vec<f64> = a
        .par_chunks(4096)
        .zip(b.par_chunks(4096))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    pairwise_sum(&partials)
}

/// One Dirichlet value without keeping the solver.
pub fn green_dirichlet(region: &Region, x: &Point, y: &Point, max_sites: u64) -> Result<f64> {
    DirichletGreen::new(region, max_sites)?.green(x, y)
}

/// Monte Carlo Dirichlet value: visits to `y` before the walk from `x` leaves
/// the region.
pub fn green_dirichlet_mc(
    region: &Region,
    x: &Point,
    y: &Point,
    samples: u64,
    seed: SeedStream,
) -> Result<Estimate> {
    if !region.contains(x) || !region.contains(y) {
        return Ok(Estimate::exact(0.0, seed.key()));
    }
    let two_d = 2 * x.dim();
    let ykey = y.key();
    let vals: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.child(i).rng();
            let mut p = *x;
            let mut visits = if p.key() == ykey { 1.0 } else { 0.0 };
            loop {
                p = p.neighbor(rng.below(two_d as u64) as usize);
                if !region.contains(&p) {
                    return visits;
                }
                if p.key() == ykey {
                    visits += 1.0;
                }
            }
        })
        .collect();
    Ok(Estimate::from_samples(&vals, seed.key()))
}

pub fn g2_dirichlet(region: &Region, x: &Point, y: &Point, max_sites: u64) -> Result<f64> {
    DirichletGreen::new(region, max_sites)?.g2(x, y)
}

/// `sum_{z in region} G(x,z) G(z,y)` with free Green factors: the middle term
/// of the `G_N^2 <= G~_N^2 <= G^2` chain.
pub fn g2_tilde(region: &Region, x: &Point, y: &Point, cache: &GreenCache, budget: u64) -> Result<f64> {
    let pts = region.interior_points(budget)?;
    let vals: Vec<f64> = pts
        .par_iter()
        .map(|z| cache.value(&x.sub(z)) * cache.value(&z.sub(y)))
        .collect();
    Ok(pairwise_sum(&vals))
}

/// Brute-force check value for `g2_free`: truncated lattice sum of
/// `G(z-delta) G(z)` over `|z| <= z_radius` plus the continuum tail
/// `C_d^2 S_{d-1} Z^{4-d} / (d-4)` (exact at leading order because
/// `|z|^{2-d}` averaged over a sphere enclosing `delta` is the center value).
pub fn g2_free_lattice_sum(delta: &Point, cache: &GreenCache, z_radius: u32) -> f64 {
    let d = delta.dim();
    let r = z_radius as i32;
    let r2 = (z_radius as i64) * (z_radius as i64);
    let partial: Vec<f64> = (-r..=r)
        .into_par_iter()
        .map(|a| {
            let mut acc = 0.0;
            let mut coords = vec![0i32; d];
            coords[0] = a;
            for c in coords[1..].iter_mut() {
                *c = -r;
            }
            'outer: loop {
                let p = Point::new(&coords);
                if p.norm2() <= r2 {
                    acc += cache.value(&p.sub(delta)) * cache.value(&p);
                }
                for i in 1..d {
                    coords[i] += 1;
                    if coords[i] <= r {
                        continue 'outer;
                    }
                    coords[i] = -r;
                }
                break;
            }
            acc
        })
        .collect();
    let cd = free_green_constant(d);
    let tail = cd * cd * sphere_area(d) * (z_radius as f64).powi(4 - d as i32) / (d as f64 - 4.0);
    pairwise_sum(&partial) + tail
}

// ---------------------------------------------------------------------------
// Shell biharmonic values

/// Closed form `(8/pi^2)(n - log |w|)` for the shell biharmonic value at `w`.
pub fn g2_hat_surrogate(n: i32, w: &Point) -> Result<f64> {
    let region = Region::shell_ball(n, w.dim());
    if !region.contains(w) {
        return Err(Error::OutsideRegion(w.to_string()));
    }
    if w.norm2() == 0 {
        return Err(Error::Invalid("surrogate undefined at the origin".into()));
    }
    Ok(8.0 / (PI * PI) * (n as f64 - w.norm().ln()))
}

/// `sum_{z in C_n} G(0,z) G_n(w,z)`: free Green against a Dirichlet solve on
/// the shell ball.
pub fn g2_hat(n: i32, w: &Point, max_sites: u64, tol: f64) -> Result<f64> {
    let d = w.dim();
    let region = Region::shell_ball(n, d);
    if !region.contains(w) {
        return Err(Error::OutsideRegion(w.to_string()));
    }
    let dg = DirichletGreen::new(&region, max_sites)?;
    let col = dg.solve_from(w)?;
    let cache = GreenCache::build(d, (n as f64).exp().ceil() as u32 + 1, tol)?;
    let vals: Vec<f64> = dg
        .points()
        .par_iter()
        .zip(col.par_iter())
        .map(|(z, gn)| cache.value(z) * gn)
        .collect();
    Ok(pairwise_sum(&vals))
}

// ---------------------------------------------------------------------------
// The squared-Green log sum and its limit constant

#[derive(Clone, Debug)]
pub struct LambdaReport {
    /// `f(r_max)`, the converged value of the log-corrected squared-Green sum.
    pub lambda: f64,
    /// `(r, f(r))` at r = 20, 40, ... for convergence inspection.
    pub sequence: Vec<(u32, f64)>,
}

/// `f(r) = sum_{|x| <= r} G(x)^2 - (8/pi^2) log r` in d = 4, evaluated over
/// lattice symmetry classes (exact quadrature near the origin, fitted
/// asymptotic beyond).
pub fn lambda_constant(r_max: u32) -> Result<LambdaReport> {
    if r_max < 20 {
        return Err(Error::Invalid(format!("rMax = {r_max} < 20")));
    }
    let cache = GreenCache::build(4, 20, 1e-9)?;
    let mut checkpoints: Vec<u32> = (1..).map(|k| 20 * k).take_while(|&r| r < r_max).collect();
    checkpoints.push(r_max);
    let cp2: Vec<i64> = checkpoints.iter().map(|&r| (r as i64) * (r as i64)).collect();
    let rmax2 = *cp2.last().unwrap();
    let partial: Vec<Vec<f64>> = (0..=r_max as i64)
        .into_par_iter()
        .map(|a| {
            let mut bins = vec![0.0f64; checkpoints.len()];
            let a2 = a * a;
            if 4 * a2 > rmax2 {
                return bins;
            }
            let bmax = isqrt((rmax2 - a2) / 3);
            for b in a..=bmax {
                let ab2 = a2 + b * b;
                let cmax = isqrt((rmax2 - ab2) / 2);
                for c in b..=cmax {
                    let abc2 = ab2 + c * c;
                    let emax = isqrt(rmax2 - abc2);
                    for e in c..=emax {
                        let n2 = abc2 + e * e;
                        let cls = [a as i32, b as i32, c as i32, e as i32];
                        let g = cache.value(&Point::new(&cls));
                        let m = class_multiplicity(&cls) as f64;
                        let bin = cp2.partition_point(|&q| q < n2);
                        bins[bin] += m * g * g;
                    }
                }
            }
            bins
        })
        .collect();
    let k = checkpoints.len();
    let mut cum = vec![0.0f64; k];
    for bins in &partial {
        for (c, b) in cum.iter_mut().zip(bins) {
            *c += b;
        }
    }
    for i in 1..k {
        cum[i] += cum[i - 1];
    }
    let slope = 8.0 / (PI * PI);
    let sequence: Vec<(u32, f64)> = checkpoints
        .iter()
        .zip(&cum)
        .map(|(&r, &s)| (r, s - slope * (r as f64).ln()))
        .collect();
    Ok(LambdaReport {
        lambda: sequence.last().unwrap().1,
        sequence,
    })
}

fn isqrt(v: i64) -> i64 {
    if v < 0 {
        return -1;
    }
    let mut r = (v as f64).sqrt() as i64;
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    while r * r > v {
        r -= 1;
    }
    r
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Quadrature,
    Solve,
    MonteCarlo,
}

impl Method {
    fn tag(self) -> u8 {
        match self {
            Method::Quadrature => 0,
            Method::Solve => 1,
            Method::MonteCarlo => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            0 => Method::Quadrature,
            1 => Method::Solve,
            2 => Method::MonteCarlo,
            other => return Err(Error::Parse(format!("bad method tag {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Quadrature => "quadrature",
            Method::Solve => "solve",
            Method::MonteCarlo => "montecarlo",
        }
    }
}

/// Immutable table of computed Green values with provenance.
#[derive(Clone, Debug)]
pub struct GreenTable {
    pub domain: String,
    pub d: usize,
    pub method: Method,
    pub tol: f64,
    pub entries: Vec<(Point, Point, f64)>,
}

impl GreenTable {
    pub fn new(domain: &str, d: usize, method: Method, tol: f64) -> Self {
        GreenTable {
            domain: domain.to_string(),
            d,
            method,
            tol,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, x: Point, y: Point, value: f64) {
        self.entries.push((x, y, value));
    }

    pub fn get(&self, x: &Point, y: &Point) -> Option<f64> {
        self.entries
            .iter()
            .find(|(a, b, _)| (a == x && b == y) || (a == y && b == x))
            .map(|&(_, _, v)| v)
    }

    /// Worst asymmetry |G(x,y) - G(y,x)| over stored mirrored pairs.
    pub fn max_asymmetry(&self) -> f64 {
        let mut by_pair: HashMap<(u128, u128), f64> = HashMap::new();
        let mut worst = 0.0f64;
        for (x, y, v) in &self.entries {
            if let Some(&w) = by_pair.get(&(y.key(), x.key())) {
                worst = worst.max((w - v).abs());
            }
            by_pair.insert((x.key(), y.key()), *v);
        }
        worst
    }

    pub fn cache_key(&self) -> String {
        format!(
            "{}|{}|{}|{:e}",
            self.d,
            self.domain,
            self.method.name(),
            self.tol
        )
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "x,y,value,method,tol")?;
        for (x, y, v) in &self.entries {
            let xs: Vec<String> = x.coords().iter().map(|c| c.to_string()).collect();
            let ys: Vec<String> = y.coords().iter().map(|c| c.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{},{}",
                xs.join(" "),
                ys.join(" "),
                v,
                self.method.name(),
                self.tol
            )?;
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"CLGT")?;
        let dom = self.domain.as_bytes();
        w.write_all(&(dom.len() as u16).to_le_bytes())?;
        w.write_all(dom)?;
        w.write_all(&[self.d as u8, self.method.tag()])?;
        w.write_all(&self.tol.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (x, y, v) in &self.entries {
            for c in x.coords().iter().chain(y.coords()) {
                w.write_all(&c.to_le_bytes())?;
            }
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"CLGT" {
            return Err(Error::Parse("bad table magic".into()));
        }
        let mut lb = [0u8; 2];
        r.read_exact(&mut lb)?;
        let mut dom = vec![0u8; u16::from_le_bytes(lb) as usize];
        r.read_exact(&mut dom)?;
        let mut hdr = [0u8; 2];
        r.read_exact(&mut hdr)?;
        let (d, method) = (hdr[0] as usize, Method::from_tag(hdr[1])?);
        let mut f8 = [0u8; 8];
        r.read_exact(&mut f8)?;
        let tol = f64::from_le_bytes(f8);
        r.read_exact(&mut f8)?;
        let count = u64::from_le_bytes(f8);
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut coords = vec![0i32; 2 * d];
            for c in coords.iter_mut() {
                let mut b4 = [0u8; 4];
                r.read_exact(&mut b4)?;
                *c = i32::from_le_bytes(b4);
            }
            r.read_exact(&mut f8)?;
            entries.push((
                Point::new(&coords[..d]),
                Point::new(&coords[d..]),
                f64::from_le_bytes(f8),
            ));
        }
        Ok(GreenTable {
            domain: String::from_utf8(dom).map_err(|_| Error::Parse("bad domain".into()))?,
            d,
            method,
            tol,
            entries,
        })
    }
}

/// A Green table tagged with which squared-kernel variant it holds.
#[derive(Clone, Debug)]
pub struct BiharmonicTable {
    /// "g2" | "g2_dirichlet" | "g2_tilde" | "g2_hat"
    pub variant: String,
    pub table: GreenTable,
}

impl BiharmonicTable {
    pub fn new(variant: &str, table: GreenTable) -> Self {
        BiharmonicTable {
            variant: variant.to_string(),
            table,
        }
    }

    /// Entrywise `self <= other + slack` on shared pairs.
    pub fn dominated_by(&self, other: &BiharmonicTable, slack: f64) -> bool {
        self.table.entries.iter().all(|(x, y, v)| {
            other
                .table
                .get(x, y)
                .map(|w| *v <= w + slack)
                .unwrap_or(true)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_known_values() {
        // I_0(1) e^{-1}, I_1(1) e^{-1}
        let b = bessel_i_scaled(1, 1.0);
        assert!((b[0] - 0.465_759_607_593_6).abs() < 1e-12, "{}", b[0]);
        assert!((b[1] - 0.207_910_415_349_7).abs() < 1e-12, "{}", b[1]);
        // normalization: scaled I_0 + 2 sum I_k = 1
        for &z in &[0.5f64, 5.0, 80.0, 2000.0] {
            let b = bessel_i_scaled((4.0 * z.sqrt()) as usize + 20, z);
            let s = b[0] + 2.0 * b[1..].iter().sum::<f64>();
            // partial sum, so slightly under 1
            assert!(s <= 1.0 + 1e-12 && s > 0.999, "z={z} s={s}");
        }
    }

    #[test]
    fn green_origin_d4_and_d3() {
        let g4 = green_free(&Point::origin(4), 1e-9).unwrap();
        assert!((g4 - 1.239_467).abs() < 5e-4, "G(0) d=4 = {g4}");
        // d=3 expected visits constant (Watson): 1.516386...
        let g3 = green_free(&Point::origin(3), 1e-9).unwrap();
        assert!((g3 - 1.516_386).abs() < 5e-4, "G(0) d=3 = {g3}");
    }

    #[test]
    fn green_tail_closed_form_consistent() {
        // same value whether the analytic tail starts at 60 or the numeric
        // range is extended well past it
        let orders = [0usize; 4];
        let mut buf = Vec::new();
        let mut f = |t: f64| heat_product(&orders, 0, t, 4.0, &mut buf);
        let near = panel_integrate(&mut f, 60.0, 1e-10)
            + 0.405_284_734_5 * (tail_moment(0.0, 60.0, 2.0) + 2.0 * tail_moment(0.0, 60.0, 3.0));
        let far = panel_integrate(&mut f, 6000.0, 1e-10)
            + 0.405_284_734_5
                * (tail_moment(0.0, 6000.0, 2.0) + 2.0 * tail_moment(0.0, 6000.0, 3.0));
        assert!((near - far).abs() < 5e-6, "near={near} far={far}");
    }

    #[test]
    fn green_symmetric_under_lattice_symmetries() {
        let a = green_free(&Point::new(&[3, -1, 2, 0]), 1e-10).unwrap();
        let b = green_free(&Point::new(&[0, 2, 1, 3]), 1e-10).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn green_matches_leading_asymptotic_at_20() {
        let g = green_free(&Point::new(&[20, 0, 0, 0]), 1e-10).unwrap();
        let lead = free_green_constant(4) / 400.0;
        assert!((lead - 5.066e-4).abs() < 1e-6);
        assert!((g / lead - 1.0).abs() < 0.01, "G = {g}, leading = {lead}");
    }

    #[test]
    fn low_dimension_rejected() {
        assert!(matches!(
            green_free(&Point::origin(2), 1e-6),
            Err(Error::Dimension(2))
        ));
    }

    #[test]
    fn mc_origin_green_agrees_with_quadrature() {
        let exact = green_free(&Point::origin(4), 1e-9).unwrap();
        let mc = green_free_mc(4, 12.0, 150_000, SeedStream::from_root(31));
        let diff = (mc.value - exact).abs();
        assert!(
            diff < 3.5 * mc.stderr + 1e-3,
            "mc {} vs exact {exact} (se {})",
            mc.value,
            mc.stderr
        );
    }

    #[test]
    fn dirichlet_single_site_is_one() {
        let dg = DirichletGreen::new(&Region::shell_ball(0, 4), 100).unwrap();
        let o = Point::origin(4);
        assert_eq!(dg.len(), 1);
        assert!((dg.green(&o, &o).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_symmetric_and_harmonic() {
        let region = Region::ball(4.0, 4);
        let dg = DirichletGreen::new(&region, 10_000).unwrap();
        let x = Point::new(&[1, 0, 0, 0]);
        let y = Point::new(&[0, -2, 1, 0]);
        let gxy = dg.green(&x, &y).unwrap();
        let gyx = dg.green(&y, &x).unwrap();
        assert!((gxy - gyx).abs() < 1e-9, "{gxy} vs {gyx}");
        let col = dg.solve_from(&x).unwrap();
        assert!(dg.laplacian_residual(&col, &x) < 1e-8);
    }

    #[test]
    fn dirichlet_matches_rational_oracle() {
        use num_traits::ToPrimitive;
        let region = Region::ball(2.0, 3);
        let (wg, index) = crate::wilson::WiredGraph::from_region(&region, 10_000).unwrap();
        let mut edges = Vec::new();
        for (u, inc) in wg.adj.iter().enumerate() {
            for &(v, id) in inc {
                if edges.len() <= id as usize {
                    edges.resize(id as usize + 1, (0, 0));
                }
                if (u as u32) < v || v == wg.root {
                    edges[id as usize] = (u as u32, v);
                }
            }
        }
        let sg = crate::oracle::SmallGraph::new(wg.vertex_count(), wg.root, edges);
        let dg = DirichletGreen::new(&region, 10_000).unwrap();
        let x = Point::new(&[1, 0, 0]);
        let y = Point::new(&[0, 1, 0]);
        let exact = crate::oracle::exact_green(&sg, index.vertex(&x).unwrap(), index.vertex(&y).unwrap());
        let solved = dg.green(&x, &y).unwrap();
        assert!((solved - exact.to_f64().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn dirichlet_row_sum_is_mean_exit_time() {
        let dg = DirichletGreen::new(&Region::ball(10.0, 4), 100_000).unwrap();
        let col = dg.solve_from(&Point::origin(4)).unwrap();
        let total: f64 = col.iter().sum();
        assert!((90.0..125.0).contains(&total), "row sum {total}");
    }

    #[test]
    fn dirichlet_monotone_and_below_free() {
        let x = Point::new(&[1, 0, 0, 0]);
        let y = Point::new(&[0, 1, 0, 0]);
        let g4 = green_dirichlet(&Region::ball(4.0, 4), &x, &y, 10_000).unwrap();
        let g6 = green_dirichlet(&Region::ball(6.0, 4), &x, &y, 50_000).unwrap();
        let free = green_free(&x.sub(&y), 1e-10).unwrap();
        assert!(g4 <= g6 + 1e-12 && g6 <= free + 1e-12, "{g4} {g6} {free}");
    }

    #[test]
    fn mc_dirichlet_agrees_with_solve() {
        let region = Region::ball(3.0, 4);
        let x = Point::origin(4);
        let y = Point::new(&[1, 1, 0, 0]);
        let exact = green_dirichlet(&region, &x, &y, 10_000).unwrap();
        let mc = green_dirichlet_mc(&region, &x, &y, 100_000, SeedStream::from_root(17)).unwrap();
        assert!(
            (mc.value - exact).abs() < 4.0 * mc.stderr,
            "mc {} exact {exact} se {}",
            mc.value,
            mc.stderr
        );
    }

    #[test]
    fn g2_dirichlet_bounds_and_symmetry() {
        let region = Region::ball(4.0, 4);
        let dg = DirichletGreen::new(&region, 10_000).unwrap();
        let x = Point::new(&[1, 0, 0, 0]);
        let y = Point::new(&[0, 0, 2, 0]);
        let q = dg.g2(&x, &y).unwrap();
        assert!((q - dg.g2(&y, &x).unwrap()).abs() < 1e-9);
        let lower = dg.green(&x, &y).unwrap() * dg.green(&y, &y).unwrap();
        assert!(q >= lower - 1e-12 && lower >= 0.0);
    }

    #[test]
    fn g2_free_rejects_d4_and_scales_in_d5() {
        assert!(matches!(
            g2_free(&Point::origin(4), &Point::origin(4), 1e-6),
            Err(Error::G2FreeDivergent)
        ));
        let o = Point::origin(5);
        let u = Point::new(&[10, 0, 0, 0, 0]);
        let u2 = Point::new(&[20, 0, 0, 0, 0]);
        let a = g2_free(&u, &o, 1e-9).unwrap();
        let b = g2_free(&u2, &o, 1e-9).unwrap();
        assert!((b / a - 0.5).abs() < 0.05 * 0.5, "ratio {}", b / a);
        let c = g2_free(&o, &u, 1e-9).unwrap();
        assert!((a - c).abs() < 1e-9);
    }

    #[test]
    fn g2_free_matches_lattice_sum() {
        let delta = Point::new(&[6, 0, 0, 0, 0]);
        let direct = g2_free(&delta, &Point::origin(5), 1e-9).unwrap();
        let cache = GreenCache::build(5, 8, 1e-8).unwrap();
        let summed = g2_free_lattice_sum(&delta, &cache, 25);
        assert!(
            (summed / direct - 1.0).abs() < 0.01,
            "sum {summed} vs quadrature {direct}"
        );
    }

    #[test]
    fn cache_matches_quadrature_past_exact_window() {
        let cache = GreenCache::build(4, 12, 1e-9).unwrap();
        for coords in [[17, 3, -2, 1], [20, 0, 0, 0], [10, 10, 10, 1]] {
            let p = Point::new(&coords);
            let exact = green_free(&p, 1e-10).unwrap();
            let approx = cache.value(&p);
            assert!(
                ((approx - exact) / exact).abs() < 2e-3,
                "{coords:?}: {approx} vs {exact}"
            );
        }
        // inside the window the cache is the quadrature value
        let p = Point::new(&[2, -1, 0, 0]);
        assert!((cache.value(&p) - green_free(&p, 1e-9).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn surrogate_shell_values() {
        let w = Point::new(&[1, 0, 0, 0]);
        let v = g2_hat_surrogate(1, &w).unwrap();
        assert!((v - 8.0 / (PI * PI)).abs() < 1e-12);
        assert!(g2_hat_surrogate(0, &Point::new(&[5, 0, 0, 0])).is_err());
    }

    #[test]
    fn g2_hat_tracks_surrogate_small_shell() {
        // coarse check at n=2; the strict n=3 comparison is the ignored test
        let w = Point::new(&[3, 0, 0, 0]);
        let exact = g2_hat(2, &w, 50_000, 1e-8).unwrap();
        let sur = g2_hat_surrogate(2, &w).unwrap();
        assert!(
            (exact / sur - 1.0).abs() < 0.35,
            "exact {exact} surrogate {sur}"
        );
    }

    #[test]
    #[ignore = "about a minute: 8e5-site solve"]
    fn g2_hat_surrogate_band_at_n3() {
        for coords in [[3, 0, 0, 0], [5, 2, 0, 0], [7, 0, 0, 0]] {
            let w = Point::new(&coords);
            let exact = g2_hat(3, &w, 1_000_000, 1e-8).unwrap();
            let sur = g2_hat_surrogate(3, &w).unwrap();
            let n2 = w.norm2() as f64;
            let band = 0.10 * sur + n2.ln() / n2;
            assert!(
                (exact - sur).abs() <= band,
                "{coords:?}: exact {exact} surrogate {sur} band {band}"
            );
        }
    }

    #[test]
    fn multiplicities() {
        assert_eq!(class_multiplicity(&[0, 0, 0, 0]), 1);
        assert_eq!(class_multiplicity(&[0, 0, 0, 1]), 8); // +-e_i
        assert_eq!(class_multiplicity(&[1, 2, 3, 4]), 384);
        assert_eq!(class_multiplicity(&[1, 1, 2, 2]), 6 * 16);
    }

    #[test]
    fn class_sum_counts_ball_points() {
        // multiplicities over classes reproduce the raw point count
        let r = 6u32;
        let total: u64 = sorted_classes(4, r)
            .iter()
            .filter(|c| c.iter().map(|&v| (v as i64) * (v as i64)).sum::<i64>() <= 36)
            .map(|c| class_multiplicity(c))
            .sum();
        let raw = Region::ball(r as f64, 4).interior_points(100_000).unwrap().len() as u64;
        assert_eq!(total, raw);
    }

    #[test]
    fn lambda_sequence_settles() {
        let rep = lambda_constant(60).unwrap();
        assert_eq!(rep.sequence.len(), 3);
        let f40 = rep.sequence[1].1;
        let f60 = rep.sequence[2].1;
        assert!((f40 - f60).abs() < 0.08, "f40 {f40} f60 {f60}");
        assert!(rep.lambda.is_finite());
    }

    #[test]
    fn table_roundtrip_and_symmetry_check() {
        let mut t = GreenTable::new("free", 4, Method::Quadrature, 1e-8);
        let x = Point::new(&[1, 0, 0, 0]);
        let y = Point::new(&[0, 1, 0, 0]);
        t.push(x, y, 0.25);
        t.push(y, x, 0.25);
        assert_eq!(t.max_asymmetry(), 0.0);
        assert_eq!(t.get(&x, &y), Some(0.25));
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        let back = GreenTable::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.entries.len(), 2);
        assert_eq!(back.domain, "free");
        assert_eq!(back.method, Method::Quadrature);
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("x,y,value,method,tol\n"));
        assert!(text.contains("1 0 0 0,0 1 0 0,0.25,quadrature"));
    }

    #[test]
    fn biharmonic_chain_on_samples_d5() {
        let region = Region::ball(3.0, 5);
        let dg = DirichletGreen::new(&region, 10_000).unwrap();
        let cache = GreenCache::build(5, 8, 1e-8).unwrap();
        let o = Point::origin(5);
        for coords in [[1, 0, 0, 0, 0], [1, 1, 0, 0, 0], [2, 0, 0, 0, 0]] {
            let x = Point::new(&coords);
            let a = dg.g2(&x, &o).unwrap();
            let b = g2_tilde(&region, &x, &o, &cache, 100_000).unwrap();
            let c = g2_free(&x, &o, 1e-8).unwrap();
            assert!(a <= b + 1e-9 && b <= c + 1e-9, "{coords:?}: {a} {b} {c}");
        }
    }
}
