//! Rejection sampler for a two-sided self-avoiding path through the origin:
//! a backward branch `η = LE(W[0,σ_n])` paired with an independent forward
//! walk accepted when it avoids `η ∖ {0}` up to its own exit of `C_n`. The
//! acceptance probability is then exactly `E[Z_n]`, which ties the sampler to
//! the escape estimators for cross-validation.

use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::lattice::Point;
use crate::lerw::{le_walk_to_exit, shell_cap, shell_quick};
use crate::rng::SeedStream;
use crate::walk::{Occupancy, Saw, StreamingLoopErase, Walker};
use rayon::prelude::*;
use std::io::Write;

const D: usize = 4;

fn origin() -> Point {
    Point::origin(D)
}

#[derive(Clone, Debug)]
pub struct TwoSidedPath {
    /// Backward branch, origin first, exit site of `C_n` last.
    pub past: Saw,
    /// Loop-erased forward walk, origin first, its own exit site last.
    pub future: Saw,
    pub n: i32,
    /// Rejection attempts consumed for this sample (the accepted one
    /// included).
    pub attempts: u64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SamplerStats {
    pub accepted: u64,
    pub attempted: u64,
}

impl SamplerStats {
    pub fn rate(&self) -> f64 {
        if self.attempted == 0 {
            return 0.0;
        }
        self.accepted as f64 / self.attempted as f64
    }

    pub fn rate_stderr(&self) -> f64 {
        if self.attempted == 0 {
            return 0.0;
        }
        let r = self.rate();
        (r * (1.0 - r) / self.attempted as f64).sqrt()
    }

    pub fn merge(&mut self, other: &SamplerStats) {
        self.accepted += other.accepted;
        self.attempted += other.attempted;
    }
}

/// One rejection attempt: fresh `η`, fresh forward walk, accept iff the
/// forward walk stays off `η ∖ {0}` until it leaves `C_n`. Returns the pair
/// on acceptance.
fn attempt(n: i32, seed: SeedStream) -> Result<Option<(Saw, Saw)>> {
    let quick = shell_quick(n);
    let cap = shell_cap(n);
    let mut rng = seed.child(0).rng();
    let eta = le_walk_to_exit(&origin(), &quick, &mut rng, cap)?;
    let mut target = Occupancy::from_saw(&eta);
    target.remove(&origin());

    let mut rng = seed.child(1).rng();
    let mut wk = Walker::new(origin());
    let mut le = StreamingLoopErase::new();
    le.push(*wk.pos());
    for _ in 0..cap {
        wk.step_random(&mut rng);
        if target.contains_key(wk.pos().key(), wk.norm2()) {
            return Ok(None);
        }
        le.push(*wk.pos());
        if !quick.contains(wk.norm2(), wk.pos()) {
            return Ok(Some((eta, le.finish())));
        }
    }
    Err(Error::CapExceeded {
        cap,
        partial_len: le.len(),
    })
}

pub fn sample_two_sided(n: i32, seed: SeedStream, max_attempts: u64) -> Result<TwoSidedPath> {
    assert!(n >= 1);
    for t in 0..max_attempts {
        if let Some((past, future)) = attempt(n, seed.child(t))? {
            return Ok(TwoSidedPath {
                past,
                future,
                n,
                attempts: t + 1,
            });
        }
    }
    Err(Error::AttemptsExhausted {
        attempts: max_attempts,
        accepted: 0,
    })
}

/// Draws `samples` independent two-sided paths. The per-sample rejection
/// loops are independent streams, so results are identical for any worker
/// count.
pub fn sample_many(
    n: i32,
    samples: u64,
    seed: SeedStream,
    max_attempts: u64,
) -> Result<(Vec<TwoSidedPath>, SamplerStats)> {
    let paths: Result<Vec<TwoSidedPath>> = (0..samples)
        .into_par_iter()
        .map(|i| sample_two_sided(n, seed.child(i), max_attempts))
        .collect();
    let paths = paths?;
    let stats = SamplerStats {
        accepted: samples,
        attempted: paths.iter().map(|p| p.attempts).sum(),
    };
    Ok((paths, stats))
}

/// Unconditional acceptance indicator over independent single attempts; its
/// mean is exactly the escape expectation `E[Z_n]` at guard `C_n`.
pub fn acceptance_probe(n: i32, trials: u64, seed: SeedStream) -> Result<Estimate> {
    let vals: Result<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| Ok(f64::from(attempt(n, seed.child(i))?.is_some())))
        .collect();
    Ok(Estimate::from_samples(&vals?, seed.key()))
}

// ---------------------------------------------------------------------------
// Exact validation on small graphs

#[derive(Clone, Debug)]
pub struct TinyValidation {
    /// Total-variation distance between the accepted backward-branch law and
    /// the exact conditional law.
    pub tv: f64,
    pub exact_rate: f64,
    pub empirical_rate: Estimate,
    pub accepted: u64,
}

/// Runs the same rejection scheme on a wired graph where both the
/// branch law and the acceptance probability have closed rational forms:
/// the accepted-η law must match `P(η) P(avoid η | η)` renormalized.
pub fn validate_marginal_tiny(
    g: &crate::oracle::SmallGraph,
    start: u32,
    samples: u64,
    seed: SeedStream,
) -> Result<TinyValidation> {
    use crate::wilson::{graph_walk_until, loop_erase_vertices};
    use num_traits::ToPrimitive;
    use std::collections::HashMap;

    let wired = g.to_wired();
    let mut absorb = vec![false; g.vertices];
    absorb[g.root as usize] = true;

    let exact_eta = crate::oracle::exact_lerw_law(g, start)?;
    let mut exact_joint: HashMap<Vec<u32>, f64> = HashMap::new();
    let mut exact_rate = 0.0;
    for (eta, p) in &exact_eta {
        let mut forbidden = vec![false; g.vertices];
        for &v in &eta[1..eta.len() - 1] {
            forbidden[v as usize] = true;
        }
        let q = crate::oracle::exact_avoidance(g, &forbidden, start);
        let w = p.to_f64().unwrap() * q.to_f64().unwrap();
        exact_rate += w;
        if w > 0.0 {
            exact_joint.insert(eta.clone(), w);
        }
    }
    for w in exact_joint.values_mut() {
        *w /= exact_rate;
    }

    let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
    let mut accepted = 0u64;
    let mut indicators = Vec::with_capacity(samples as usize);
    for i in 0..samples {
        let s = seed.child(i);
        let mut rng = s.child(0).rng();
        let eta = loop_erase_vertices(&graph_walk_until(&wired, start, &absorb, &mut rng));
        let mut forbidden = vec![false; g.vertices];
        for &v in &eta[1..eta.len() - 1] {
            forbidden[v as usize] = true;
        }
        let mut rng = s.child(1).rng();
        let walk = graph_walk_until(&wired, start, &absorb, &mut rng);
        let ok = walk[1..].iter().all(|&v| !forbidden[v as usize]);
        indicators.push(f64::from(ok));
        if ok {
            accepted += 1;
            *counts.entry(eta).or_insert(0) += 1;
        }
    }
    Ok(TinyValidation {
        tv: crate::stats::tv_distance(&counts, accepted, &exact_joint),
        exact_rate,
        empirical_rate: Estimate::from_samples(&indicators, seed.key()),
        accepted,
    })
}

// ---------------------------------------------------------------------------
// Stationarity diagnostics

#[derive(Clone, Debug)]
pub struct StationarityProbe {
    /// First-step direction counts of the backward branch (axis-major:
    /// `+e1, -e1, ..., -e4`).
    pub past_dirs: [u64; 2 * D],
    pub future_dirs: [u64; 2 * D],
    /// p-value of the 2 x 8 homogeneity chi-square between the two rows.
    pub homogeneity_p: f64,
}

fn dir_index(step: &Point) -> usize {
    for i in 0..D {
        match step.coord(i) {
            1 => return 2 * i,
            -1 => return 2 * i + 1,
            _ => {}
        }
    }
    panic!("not a unit step");
}

pub fn stationarity_probe(paths: &[TwoSidedPath]) -> StationarityProbe {
    let mut past = [0u64; 2 * D];
    let mut future = [0u64; 2 * D];
    for p in paths {
        past[dir_index(&p.past.sites()[1].sub(&p.past.sites()[0]))] += 1;
        future[dir_index(&p.future.sites()[1].sub(&p.future.sites()[0]))] += 1;
    }
    let total = 2.0 * paths.len() as f64;
    let mut stat = 0.0;
    for j in 0..2 * D {
        let col = (past[j] + future[j]) as f64;
        if col == 0.0 {
            continue;
        }
        for row in [&past, &future] {
            let expect = col * (paths.len() as f64) / total;
            let d = row[j] as f64 - expect;
            stat += d * d / expect;
        }
    }
    StationarityProbe {
        past_dirs: past,
        future_dirs: future,
        homogeneity_p: crate::stats::chi_square_p(stat, (2 * D - 1) as f64),
    }
}

// ---------------------------------------------------------------------------
// Output

/// One row per site: `sample_id,side,position,x1,x2,x3,x4`.
pub fn write_paths_csv<W: Write>(paths: &[TwoSidedPath], w: &mut W) -> Result<()> {
    writeln!(w, "sample_id,side,position,x1,x2,x3,x4")?;
    for (id, p) in paths.iter().enumerate() {
        for (side, saw) in [("past", &p.past), ("future", &p.future)] {
            for (pos, site) in saw.sites().iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    id,
                    side,
                    pos,
                    site.coord(0),
                    site.coord(1),
                    site.coord(2),
                    site.coord(3)
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{Horizon, NestedConfig};
    use crate::lattice::in_shell_ball;

    fn root(r: u64) -> SeedStream {
        SeedStream::from_root(r)
    }

    #[test]
    fn accepted_pairs_satisfy_constraints() {
        let n = 2;
        let (paths, stats) = sample_many(n, 40, root(1), 10_000).unwrap();
        assert_eq!(stats.accepted, 40);
        assert!(stats.attempted >= 40);
        for p in &paths {
            assert_eq!(p.past.sites()[0], origin());
            assert_eq!(p.future.sites()[0], origin());
            for saw in [&p.past, &p.future] {
                let (last, rest) = saw.sites().split_last().unwrap();
                assert!(!in_shell_ball(last.norm2(), n));
                assert!(rest.iter().all(|q| in_shell_ball(q.norm2(), n)));
            }
            let past_occ = Occupancy::from_saw(&p.past);
            for q in &p.future.sites()[1..] {
                assert!(!past_occ.contains(q), "future re-enters past at {q:?}");
            }
        }
    }

    #[test]
    fn acceptance_rate_equals_escape_expectation() {
        // the accept event and the escape event are the same event by
        // construction when the escape walk is stopped at the same shell
        let probe = acceptance_probe(2, 4_000, root(2)).unwrap();
        let cfg = NestedConfig {
            outer: 250,
            inner: 16,
            guard_delta: 0,
            horizon: Horizon::ShellExit,
        };
        let zn = crate::lerw::estimate_zn(2, &cfg, root(3)).unwrap();
        assert!(
            probe.consistent_with(&zn, 3.0),
            "accept rate {} +- {} vs E[Z] {} +- {}",
            probe.value,
            probe.stderr,
            zn.value,
            zn.stderr
        );
    }

    #[test]
    fn marginal_matches_exact_law_on_wired_grid() {
        let g = crate::oracle::SmallGraph::wired_grid(2);
        let rep = validate_marginal_tiny(&g, 0, 120_000, root(4)).unwrap();
        assert!(rep.tv < 0.02, "TV = {}", rep.tv);
        assert!(
            (rep.empirical_rate.value - rep.exact_rate).abs()
                < 3.0 * rep.empirical_rate.stderr,
            "rate {} vs exact {}",
            rep.empirical_rate.value,
            rep.exact_rate
        );
    }

    #[test]
    fn exhausted_attempts_error() {
        match sample_two_sided(2, root(5), 0) {
            Err(Error::AttemptsExhausted { attempts, accepted }) => {
                assert_eq!((attempts, accepted), (0, 0));
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn sampler_reproducible_and_pool_independent() {
        let (a, sa) = sample_many(2, 20, root(6), 10_000).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let (b, sb) = pool.install(|| sample_many(2, 20, root(6), 10_000).unwrap());
        assert_eq!(sa.attempted, sb.attempted);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.past, y.past);
            assert_eq!(x.future, y.future);
        }
    }

    #[test]
    fn first_steps_homogeneous_between_sides() {
        let (paths, _) = sample_many(2, 600, root(7), 10_000).unwrap();
        let probe = stationarity_probe(&paths);
        assert_eq!(probe.past_dirs.iter().sum::<u64>(), 600);
        assert_eq!(probe.future_dirs.iter().sum::<u64>(), 600);
        assert!(probe.homogeneity_p > 1e-3, "p = {}", probe.homogeneity_p);
    }

    #[test]
    fn acceptance_decreases_with_shell_index() {
        let a2 = acceptance_probe(2, 1_500, root(8)).unwrap();
        let a3 = acceptance_probe(3, 1_500, root(9)).unwrap();
        assert!(
            a3.value < a2.value + 3.0 * a2.combined_stderr(&a3),
            "{} vs {}",
            a2.value,
            a3.value
        );
    }

    #[test]
    fn csv_schema() {
        let p = sample_two_sided(1, root(10), 10_000).unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&[p], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "sample_id,side,position,x1,x2,x3,x4");
        assert!(lines.next().unwrap().starts_with("0,past,0,0,0,0,0"));
        assert!(text.contains("0,future,0,0,0,0,0"));
        assert!(text.ends_with('\n'));
    }
}
