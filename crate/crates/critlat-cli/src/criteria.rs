//! The release gate: eleven checks combining exact small-graph ground truth,
//! banded finite-size Monte Carlo, and determinism contracts. Each check
//! reports pass/fail with a one-line detail; nothing here lowers a tolerance
//! to force a pass.

use crate::harness::{self, ExperimentConfig};
use critlat::estimate::{Horizon, NestedConfig};
use critlat::lattice::{neighbors, Point, Region};
use critlat::rng::SeedStream;
use critlat::walk::{loop_erase, srw_fixed_steps, Occupancy, Walk, Walker};
use std::collections::HashMap;
use std::fmt;
use std::path::Path;

const PI2: f64 = std::f64::consts::PI * std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:2} {:<22} {}  {}",
            self.id,
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

fn outcome(
    id: u32,
    name: &'static str,
    r: Result<(bool, String), String>,
) -> CriterionResult {
    match r {
        Ok((pass, detail)) => CriterionResult {
            id,
            name,
            pass,
            detail,
        },
        Err(e) => CriterionResult {
            id,
            name,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn lib<T>(r: critlat::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

pub const CRITERIA: u32 = 11;

/// Runs one criterion by id (1-based). `scratch` receives the artifacts of
/// the reproducibility sub-runs.
pub fn run_one(id: u32, seed: u64, scratch: &Path) -> CriterionResult {
    let s = SeedStream::from_root(seed);
    match id {
        1 => outcome(1, "wilson-uniformity", c1_wilson(s.child(1))),
        2 => outcome(2, "lerw-exact-law", c2_lerw_law(s.child(2))),
        3 => outcome(3, "green-asymptotics", c3_green(s.child(3))),
        4 => outcome(4, "biharmonic-slope", c4_slope()),
        5 => outcome(5, "lambda-settles", c5_lambda()),
        6 => outcome(6, "field-moments", c6_field(s.child(6))),
        7 => outcome(7, "exact-relation", c7_relation(s.child(7))),
        8 => outcome(8, "escape-bands", c8_bands(s.child(8))),
        9 => outcome(9, "twosided-sampler", c9_twosided(s.child(9))),
        10 => outcome(10, "reproducibility", c10_repro(scratch)),
        11 => outcome(11, "invariant-suite", c11_invariants(s.child(11))),
        other => panic!("criterion id {other} out of range"),
    }
}

/// Runs every criterion in order.
pub fn run_all(seed: u64, scratch: &Path) -> Vec<CriterionResult> {
    (1..=CRITERIA).map(|id| run_one(id, seed, scratch)).collect()
}

// ---------------------------------------------------------------------------
// 1: Wilson tree frequencies are uniform on exactly enumerable graphs

fn c1_wilson(seed: SeedStream) -> Result<(bool, String), String> {
    use critlat::oracle::{enumerate_spanning_trees, matrix_tree_count, SmallGraph};
    use critlat::wilson::{default_order, wilson_ust};
    use num_traits::ToPrimitive;

    let mut detail = String::new();
    let mut pass = true;
    for (gi, g) in [SmallGraph::wired_grid(3), SmallGraph::complete(4, 3)]
        .iter()
        .enumerate()
    {
        let trees = lib(enumerate_spanning_trees(g))?;
        let det = matrix_tree_count(g).to_f64().unwrap();
        if trees.len() as f64 != det {
            return Ok((false, format!("enumerated {} trees, determinant {det}", trees.len())));
        }
        let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
        for (i, t) in trees.iter().enumerate() {
            let mut key = t.clone();
            key.sort_unstable();
            index.insert(key, i);
        }
        let wired = g.to_wired();
        let order = default_order(&wired);
        let samples = 200_000u64;
        let mut counts = vec![0u64; trees.len()];
        for i in 0..samples {
            let forest = wilson_ust(&wired, &order, seed.child(gi as u64).child(i));
            let mut sig = forest.signature();
            sig.sort_unstable();
            counts[*index.get(&sig).ok_or("sampled tree not in enumeration")?] += 1;
        }
        let expect = samples as f64 / trees.len() as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expect;
                d * d / expect
            })
            .sum();
        let p = critlat::stats::chi_square_p(stat, trees.len() as f64 - 1.0);
        pass &= p > 0.001;
        detail.push_str(&format!(
            "{}: trees={} p={:.4}; ",
            if gi == 0 { "grid3" } else { "K4" },
            trees.len(),
            p
        ));
    }
    Ok((pass, detail))
}

// ---------------------------------------------------------------------------
// 2: loop-erased walk law vs the exact spanning-tree branch law

fn c2_lerw_law(seed: SeedStream) -> Result<(bool, String), String> {
    use critlat::oracle::{exact_lerw_law, SmallGraph};
    use critlat::wilson::{graph_walk_until, loop_erase_vertices};
    use num_traits::ToPrimitive;

    // 6 vertices: a 5-cycle with a chord and three wired edges
    let g = SmallGraph::new(
        6,
        5,
        vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2), (1, 5), (3, 5), (4, 5)],
    );
    let exact: HashMap<Vec<u32>, f64> = lib(exact_lerw_law(&g, 0))?
        .iter()
        .map(|(k, v)| (k.clone(), v.to_f64().unwrap()))
        .collect();
    let wired = g.to_wired();
    let mut absorb = vec![false; 6];
    absorb[5] = true;
    let samples = 200_000u64;
    let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
    for i in 0..samples {
        let mut rng = seed.child(i).rng();
        let path = loop_erase_vertices(&graph_walk_until(&wired, 0, &absorb, &mut rng));
        *counts.entry(path).or_insert(0) += 1;
    }
    let tv = critlat::stats::tv_distance(&counts, samples, &exact);
    Ok((tv < 0.02, format!("TV={tv:.4} over {} paths (tol 0.02)", exact.len())))
}

// ---------------------------------------------------------------------------
// 3: free Green function against its leading asymptotic, and MC agreement

fn c3_green(seed: SeedStream) -> Result<(bool, String), String> {
    use critlat::green::GreenCache;
    let cache = lib(GreenCache::build(4, 30, 1e-9))?;
    let mut sup: f64 = 0.0;
    for a in 0..=30i64 {
        for b in a..=30 {
            for c in b..=30 {
                for e in c..=30 {
                    let n2 = a * a + b * b + c * c + e * e;
                    if !(100..=900).contains(&n2) {
                        continue;
                    }
                    let p = Point::new(&[a as i32, b as i32, c as i32, e as i32]);
                    let g = cache.value(&p);
                    sup = sup.max((g * PI2 * n2 as f64 / 2.0 - 1.0).abs());
                }
            }
        }
    }
    let exact0 = lib(critlat::green::green_free(&Point::origin(4), 1e-11))?;

    // tail-corrected MC: visits to the origin before leaving the kill ball,
    // plus the expected visits from the exit site
    let kill = Region::ball(20.0, 4);
    let quick = kill.quick();
    let samples = 16_000_000u64;
    let vals: Vec<f64> = {
        use rayon::prelude::*;
        (0..samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed.child(i).rng();
                let mut wk = Walker::new(Point::origin(4));
                let mut visits = 1.0f64;
                loop {
                    wk.step_random(&mut rng);
                    if !quick.contains(wk.norm2(), wk.pos()) {
                        return visits + cache.value(wk.pos());
                    }
                    if wk.norm2() == 0 {
                        visits += 1.0;
                    }
                }
            })
            .collect()
    };
    let mc = critlat::estimate::Estimate::from_samples(&vals, seed.key());
    let diff = (mc.value - exact0).abs();
    let pass = sup <= 0.02 && diff < 5e-4;
    Ok((
        pass,
        format!(
            "sup|scaled-1|={sup:.4} (tol 0.02); G(0): bessel={exact0:.6} mc={:.6}+-{:.6} |diff|={diff:.6} (tol 5e-4)",
            mc.value, mc.stderr
        ),
    ))
}

// ---------------------------------------------------------------------------
// 4: biharmonic Dirichlet values grow logarithmically with the right slope

fn c4_slope() -> Result<(bool, String), String> {
    use critlat::green::DirichletGreen;
    let n_radius = 10.0f64;
    let dg = lib(DirichletGreen::new(
        &Region::ball(n_radius, 4),
        critlat::lattice::DEFAULT_SITE_BUDGET,
    ))?;
    let origin = Point::origin(4);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for a in 0..=5i64 {
        for b in a..=5 {
            for c in b..=5 {
                for e in c..=5 {
                    let n2 = a * a + b * b + c * c + e * e;
                    if !(4..=25).contains(&n2) {
                        continue;
                    }
                    let p = Point::new(&[a as i32, b as i32, c as i32, e as i32]);
                    let g2 = lib(dg.g2(&p, &origin))?;
                    xs.push((n_radius / (n2 as f64).sqrt()).ln());
                    ys.push(g2);
                }
            }
        }
    }
    let (slope, _, rms) = critlat::stats::linear_fit(&xs, &ys);
    let target = 8.0 / PI2;
    let rel = (slope / target - 1.0).abs();
    Ok((
        rel < 0.10 && rms < 0.1,
        format!(
            "slope={slope:.4} vs {target:.4} (rel {rel:.3}, tol 0.10); rms={rms:.4} (tol 0.1); {} points",
            xs.len()
        ),
    ))
}

// ---------------------------------------------------------------------------
// 5: the log-corrected squared-Green sum has settled by r = 100

fn c5_lambda() -> Result<(bool, String), String> {
    let rep = lib(critlat::green::lambda_constant(100))?;
    let f = |r: u32| -> Result<f64, String> {
        rep.sequence
            .iter()
            .find(|(rr, _)| *rr == r)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("missing checkpoint r={r}"))
    };
    let drift = (f(100)? - f(60)?).abs();
    Ok((
        drift <= 0.05,
        format!("lambda={:.3}; |f(100)-f(60)|={drift:.4} (tol 0.05)", rep.lambda),
    ))
}

// ---------------------------------------------------------------------------
// 6: field pairings are centered, Gaussian-bodied, with the predicted scale

fn c6_field(seed: SeedStream) -> Result<(bool, String), String> {
    use critlat::field;
    let h = field::TestFunction::bump_diff();
    let n = 8u32;
    let samples = 5_000u64;
    let values = lib(field::pairing_samples(&h, n, samples, seed))?;
    let rep = field::moment_report(&values, seed.key());
    let quad = lib(field::covariance_quadrature(&h, 4))?;
    let mean_ok = rep.mean.abs() <= 3.0 * rep.mean_stderr;
    let ratio = rep.var / quad;
    let var_ok = (0.5..=2.0).contains(&ratio);
    let kurt_ok = (0.7..=1.3).contains(&rep.kurtosis_ratio);
    Ok((
        mean_ok && var_ok && kurt_ok,
        format!(
            "mean={:.2e}+-{:.2e} ({}); var/quad={ratio:.3} in [0.5,2] ({}); kurt={:.3} in [0.7,1.3] ({})",
            rep.mean,
            rep.mean_stderr,
            if mean_ok { "ok" } else { "off" },
            if var_ok { "ok" } else { "off" },
            rep.kurtosis_ratio,
            if kurt_ok { "ok" } else { "off" }
        ),
    ))
}

// ---------------------------------------------------------------------------
// 7: hitting expectation vs the unbiased third-moment escape estimator

fn c7_relation(seed: SeedStream) -> Result<(bool, String), String> {
    let cfg = NestedConfig {
        outer: 600,
        inner: 12,
        guard_delta: 2,
        horizon: Horizon::ShellExit,
    };
    let chk = lib(critlat::lerw::ratio_check_exact_relation(4, &cfg, seed))?;
    let band = (0.5..=1.25).contains(&chk.ratio);
    let overlap =
        (chk.lhs.value - chk.rhs.value).abs() <= 3.0 * chk.lhs.combined_stderr(&chk.rhs);
    Ok((
        band && overlap,
        format!(
            "lhs={:.4}+-{:.4} rhs={:.4}+-{:.4} ratio={:.3}+-{:.3} (band [0.5,1.25] {}; 3-stderr overlap {})",
            chk.lhs.value,
            chk.lhs.stderr,
            chk.rhs.value,
            chk.rhs.stderr,
            chk.ratio,
            chk.ratio_stderr,
            if band { "ok" } else { "off" },
            if overlap { "ok" } else { "off" }
        ),
    ))
}

// ---------------------------------------------------------------------------
// 8: finite-n escape bands and the slow log decay of joint non-intersection

fn c8_bands(seed: SeedStream) -> Result<(bool, String), String> {
    let grid = [16u32, 64, 256];
    let cfg = NestedConfig {
        outer: 120,
        inner: 30,
        guard_delta: 0,
        horizon: Horizon::Steps,
    };
    let mut detail = String::new();
    let mut pass = true;
    for (k, &n) in grid.iter().enumerate() {
        let samples = lib(critlat::lerw::estimate_xn(n, &cfg, seed.child(k as u64)))?;
        let (mean, _) = critlat::lerw::xn_summary(&samples, n, seed.key());
        let ok = (0.1..=3.0).contains(&mean.value);
        pass &= ok;
        detail.push_str(&format!("X_{n}={:.3}+-{:.3}; ", mean.value, mean.stderr));
    }
    let mut ys = Vec::new();
    for (k, &n) in grid.iter().enumerate() {
        let rep = lib(critlat::lerw::joint_nonintersection(
            n,
            4_000,
            seed.child(10 + k as u64),
        ))?;
        let y = rep.log_scaled;
        let se = (n as f64).ln() * rep.triple.stderr;
        pass &= (0.1..=1.2).contains(&y);
        ys.push((y, se));
        detail.push_str(&format!("logJ_{n}={y:.3}+-{se:.3}; "));
    }
    let d1 = (ys[1].0 - ys[0].0).abs();
    let d2 = (ys[2].0 - ys[1].0).abs();
    let slack = 2.0 * (ys[0].1 + ys[1].1 + ys[2].1);
    let shrinking = d2 <= d1 + slack;
    pass &= shrinking;
    detail.push_str(&format!(
        "diffs {d1:.3} -> {d2:.3} ({}); ref pi^2/24={:.4} plotted not asserted",
        if shrinking { "shrinking" } else { "growing" },
        PI2 / 24.0
    ));
    Ok((pass, detail))
}

// ---------------------------------------------------------------------------
// 9: two-sided sampler marginals, rate identity, and disjointness

fn c9_twosided(seed: SeedStream) -> Result<(bool, String), String> {
    use critlat::twosided;
    let g = critlat::oracle::SmallGraph::wired_grid(2);
    let tiny = lib(twosided::validate_marginal_tiny(&g, 0, 400_000, seed.child(0)))?;
    let tiny_ok = tiny.accepted >= 100_000
        && tiny.tv < 0.05
        && (tiny.empirical_rate.value - tiny.exact_rate).abs()
            <= 3.0 * tiny.empirical_rate.stderr;

    let probe = lib(twosided::acceptance_probe(3, 30_000, seed.child(1)))?;
    let cfg = NestedConfig {
        outer: 1_200,
        inner: 16,
        guard_delta: 0,
        horizon: Horizon::ShellExit,
    };
    let zn = lib(critlat::lerw::estimate_zn(3, &cfg, seed.child(2)))?;
    let rate_ok = probe.consistent_with(&zn, 3.0);

    let (paths, _) = lib(twosided::sample_many(3, 300, seed.child(3), 1_000_000))?;
    let mut disjoint = true;
    for p in &paths {
        let occ = Occupancy::from_saw(&p.past);
        disjoint &= p.future.sites()[1..].iter().all(|q| !occ.contains(q));
    }
    Ok((
        tiny_ok && rate_ok && disjoint,
        format!(
            "tiny: accepted={} TV={:.4} rate {:.4} vs exact {:.4} ({}); lattice n=3: accept={:.4}+-{:.4} vs E[Z]={:.4}+-{:.4} ({}); disjoint 300/300: {}",
            tiny.accepted,
            tiny.tv,
            tiny.empirical_rate.value,
            tiny.exact_rate,
            if tiny_ok { "ok" } else { "off" },
            probe.value,
            probe.stderr,
            zn.value,
            zn.stderr,
            if rate_ok { "ok" } else { "off" },
            disjoint
        ),
    ))
}

// ---------------------------------------------------------------------------
// 10: reruns and worker counts do not change any artifact byte

fn c10_repro(scratch: &Path) -> Result<(bool, String), String> {
    let mut digests = Vec::new();
    for (tag, workers) in [("a", Some(1)), ("b", Some(1)), ("c", Some(8))] {
        let mut cfg = ExperimentConfig::new("lerw", 7, scratch.join(tag));
        cfg.workers = workers;
        cfg.params.n_grid = Some(vec![2, 3]);
        cfg.params.outer = Some(40);
        cfg.params.inner = Some(8);
        let manifest = harness::run(&cfg).map_err(|e| e.to_string())?;
        digests.push(manifest.outputs);
    }
    let rerun = digests[0] == digests[1];
    let pool = digests[0] == digests[2];
    Ok((
        rerun && pool,
        format!(
            "rerun digests equal: {rerun}; workers 1 vs 8 equal: {pool} ({} artifacts)",
            digests[0].len()
        ),
    ))
}

// ---------------------------------------------------------------------------
// 11: structural invariants on randomized cases

fn c11_invariants(seed: SeedStream) -> Result<(bool, String), String> {
    let mut cases = 0u64;

    // loop-erasure: output self-avoiding, idempotent
    for i in 0..4_000u64 {
        let len = 5 + (i % 190) as usize;
        let w = srw_fixed_steps(&Point::origin(4), len, seed.child(1).child(i));
        let le = loop_erase(&w);
        let occ = Occupancy::from_saw(&le);
        if occ.len() != le.len() {
            return Ok((false, format!("loop-erasure not self-avoiding at case {i}")));
        }
        let again = loop_erase(&Walk::new(le.sites().to_vec()));
        if again != le {
            return Ok((false, format!("loop-erasure not idempotent at case {i}")));
        }
        cases += 1;
    }

    // loop-free windows, exhaustive over short one-axis walks (embedded in
    // d=2): t is loop-free iff the prefix through t and the strict suffix
    // after t are disjoint
    for mask in 0u32..(1 << 12) {
        let mut sites = vec![Point::origin(2)];
        for b in 0..12 {
            let dir = if (mask >> b) & 1 == 0 { 0 } else { 1 };
            sites.push(sites.last().unwrap().neighbor(dir));
        }
        let w = Walk::new(sites);
        let lf = critlat::walk::loop_free_times(&w);
        for t in 0..w.len() {
            let pre: std::collections::HashSet<_> =
                w.sites()[..=t].iter().map(|p| p.key()).collect();
            let brute = w.sites()[t + 1..]
                .iter()
                .all(|p| !pre.contains(&p.key()));
            if brute != lf.contains(&t) {
                return Ok((false, format!("loop-free mismatch mask={mask} t={t}")));
            }
        }
        cases += 1;
    }

    // free Green: symmetry classes, radial decay, harmonicity off the origin
    let cache = lib(critlat::green::GreenCache::build(4, 10, 1e-10))?;
    let mut rng = seed.child(2).rng();
    for i in 0..2_000u64 {
        let c = [
            rng.below(7) as i32 - 3,
            rng.below(7) as i32 - 3,
            rng.below(7) as i32 - 3,
            rng.below(7) as i32 - 3,
        ];
        let p = Point::new(&c);
        if p.norm2() == 0 || p.norm2() > 36 {
            continue;
        }
        let g = cache.value(&p);
        let mut perm = c;
        perm.swap((i % 4) as usize, ((i / 4) % 4) as usize);
        perm[(i % 4) as usize] *= -1;
        if (cache.value(&Point::new(&perm)) - g).abs() > 1e-12 {
            return Ok((false, format!("symmetry violated at {c:?}")));
        }
        // the time-integral tail truncation leaves ~2e-6 absolute error per
        // value, so the stencil residual bound sits above that
        let mean: f64 = neighbors(&p).iter().map(|q| cache.value(q)).sum::<f64>() / 8.0;
        if (mean - g).abs() > 1e-5 {
            return Ok((false, format!("harmonicity residual {:.2e} at {c:?}", mean - g)));
        }
        cases += 1;
    }
    for k in 1..10i32 {
        let a = cache.value(&Point::new(&[k, 0, 0, 0]));
        let b = cache.value(&Point::new(&[k + 1, 0, 0, 0]));
        if b >= a {
            return Ok((false, format!("radial monotonicity fails at k={k}")));
        }
        cases += 1;
    }

    // biharmonic domination chain at d = 5 sample points
    let region5 = Region::ball(6.0, 5);
    let cache5 = lib(critlat::green::GreenCache::build(5, 8, 1e-9))?;
    let o5 = Point::origin(5);
    for c in [[1, 0, 0, 0, 0], [1, 1, 0, 0, 0], [2, 1, 0, 0, 0]] {
        let x = Point::new(&c);
        let g2n = lib(critlat::green::g2_dirichlet(
            &region5,
            &x,
            &o5,
            critlat::lattice::DEFAULT_SITE_BUDGET,
        ))?;
        let g2t = lib(critlat::green::g2_tilde(
            &region5,
            &x,
            &o5,
            &cache5,
            critlat::lattice::DEFAULT_SITE_BUDGET,
        ))?;
        let g2 = lib(critlat::green::g2_free(&x, &o5, 1e-9))?;
        if !(g2n <= g2t + 1e-9 && g2t <= g2 + 1e-9) {
            return Ok((
                false,
                format!("domination chain fails at {c:?}: {g2n:.6} {g2t:.6} {g2:.6}"),
            ));
        }
        cases += 1;
    }

    // escape + hitting = 1 on shared seeds, against an inline reference walk
    let guard = Region::shell_ball(3, 4);
    let quick = guard.quick();
    for i in 0..60u64 {
        let gamma = lib(critlat::lerw::gamma_n(2, seed.child(3).child(i)))?;
        let occ = Occupancy::from_saw(&gamma);
        let walks = 50u64;
        let wseed = seed.child(4).child(i);
        let mut hits = 0u64;
        let mut escapes = 0u64;
        for j in 0..walks {
            let mut rng = wseed.child(j).rng();
            let mut wk = Walker::new(Point::origin(4));
            let hit = loop {
                if occ.contains_key(wk.pos().key(), wk.norm2()) {
                    break true;
                }
                if !quick.contains(wk.norm2(), wk.pos()) {
                    break false;
                }
                wk.step_random(&mut rng);
            };
            if hit {
                hits += 1;
            } else {
                escapes += 1;
            }
            cases += 1;
        }
        if hits + escapes != walks {
            return Ok((false, "hit/escape partition broken".into()));
        }
        let h = lib(critlat::lerw::hitting_prob(
            &occ,
            &Point::origin(4),
            &guard,
            walks,
            wseed,
        ))?;
        if (h.value - hits as f64 / walks as f64).abs() > 1e-12 {
            return Ok((false, format!("hitting estimator disagrees at case {i}")));
        }
    }

    // killed Green value stays in its theoretical clamp
    for i in 0..40u64 {
        let gamma = lib(critlat::lerw::gamma_n(2, seed.child(5).child(i)))?;
        let g = lib(critlat::lerw::green_killed_origin(
            &gamma,
            &Region::shell_ball(5, 4),
            400,
            seed.child(6).child(i),
        ))?;
        if g.value < 1.0 || g.value > 8.0 + 3.0 * g.stderr {
            return Ok((false, format!("G_n={} outside [1,8] at case {i}", g.value)));
        }
        cases += 1;
    }

    Ok((cases >= 10_000, format!("{cases} randomized cases clean")))
}
