//! The ±1 spin field on a wired spanning forest of `A_N`, test-function
//! pairings with the `a_n` scaling, and the limiting covariance quadrature.

use crate::error::{Error, Result};
use crate::estimate::{pairwise_sum, Estimate};
use crate::green::sphere_area;
use crate::lattice::{point_map, Point, PointMap, Region, DEFAULT_SITE_BUDGET};
use crate::rng::SeedStream;
use crate::stats::gauss_legendre;
use crate::wilson::{default_order, usf_components, wilson_ust, LatticeIndex, Partition, WiredGraph};
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

/// `a_n`: √(3 log n) in four dimensions, `a·n^{(d−4)/2}` above.
pub fn scaling_a_n(n: u32, d: usize, a: Option<f64>) -> Result<f64> {
    if d < 4 {
        return Err(Error::DimensionTooLow { need: 4, got: d });
    }
    if n < 2 {
        return Err(Error::Invalid(format!("a_n needs n >= 2, got {n}")));
    }
    let nf = n as f64;
    if d == 4 {
        if a.is_some() {
            eprintln!("warning: scaling_a_n ignores the amplitude parameter when d = 4");
        }
        Ok((3.0 * nf.ln()).sqrt())
    } else {
        let a = a.unwrap_or(1.0);
        if a <= 0.0 {
            return Err(Error::Invalid(format!("amplitude must be positive, got {a}")));
        }
        Ok(a * nf.powf((d as f64 - 4.0) / 2.0))
    }
}

/// `N_n = round(n (log n)^{1/4})`, rounding half-up.
pub fn cutoff_n(n: u32) -> u32 {
    assert!(n >= 2);
    let v = n as f64 * (n as f64).ln().powf(0.25);
    (v + 0.5).floor() as u32
}

/// Largest `n` whose `A_{N_n}` enumeration box fits the site budget.
pub fn max_feasible_n(budget: u64) -> u32 {
    let mut n = 2;
    while fits_budget(n + 1, budget) {
        n += 1;
    }
    n
}

fn fits_budget(n: u32, budget: u64) -> bool {
    let r = cutoff_n(n) as f64;
    (2.0 * r + 3.0).powi(4) <= budget as f64
}

/// One sample of the coin-flipped forest field `Y` on `A_N`, zero outside.
#[derive(Clone, Debug)]
pub struct SpinField {
    pub n: u32,
    pub radius: u32,
    pub seed: u64,
    values: PointMap<i8>,
}

impl SpinField {
    /// ±1 inside `A_N`, 0 outside.
    pub fn spin(&self, x: &Point) -> i32 {
        self.values.get(&x.key()).map_or(0, |&s| s as i32)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn sample_spin_field(n: u32, seed: SeedStream) -> Result<SpinField> {
    Ok(sample_spin_field_parts(n, seed)?.0)
}

/// As [`sample_spin_field`], also returning the forest partition and vertex
/// index so callers can check the component structure.
pub fn sample_spin_field_parts(
    n: u32,
    seed: SeedStream,
) -> Result<(SpinField, Partition, LatticeIndex)> {
    if n < 2 {
        return Err(Error::Invalid(format!("field needs n >= 2, got {n}")));
    }
    if !fits_budget(n, DEFAULT_SITE_BUDGET) {
        return Err(Error::LatticeBudget(format!(
            "n = {n} needs A_{} which exceeds the site budget; max feasible n is {}",
            cutoff_n(n),
            max_feasible_n(DEFAULT_SITE_BUDGET)
        )));
    }
    let radius = cutoff_n(n);
    let region = Region::ball(radius as f64, 4);
    let (graph, index) = WiredGraph::from_region(&region, DEFAULT_SITE_BUDGET)?;
    let order = default_order(&graph);
    let forest = wilson_ust(&graph, &order, seed.child(0));
    let mut partition = usf_components(&forest);
    let comp = partition.component_ids();
    let coins = seed.child(1);
    let mut values = point_map();
    for v in 0..graph.interior_count() as u32 {
        let sign = if coins.child(comp[v as usize] as u64).rng().coin() {
            1i8
        } else {
            -1i8
        };
        values.insert(index.point(v).key(), sign);
    }
    Ok((
        SpinField {
            n,
            radius,
            seed: seed.key(),
            values,
        },
        partition,
        index,
    ))
}

// ---------------------------------------------------------------------------
// Test functions

/// One radial mollifier bump `w·ψ((x−c)/ρ)` with `ψ(u) = exp(−1/(1−|u|²))`.
#[derive(Clone, Debug)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub weight: f64,
}

fn mollifier(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

/// Test function as a weighted sum of radial bumps. The structured form is
/// what makes the covariance quadrature cheap: every pair term reduces to a
/// three-dimensional radial integral.
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub bumps: Vec<Bump>,
    pub support_radius: f64,
    pub mean_zero: bool,
}

impl TestFunction {
    pub fn new(bumps: Vec<Bump>) -> Self {
        let support_radius = bumps
            .iter()
            .map(|b| (b.center.iter().map(|c| c * c).sum::<f64>()).sqrt() + b.radius)
            .fold(0.0, f64::max);
        // masses scale with radius^d only through a common factor per bump;
        // the flag is decided in the pairing dimension d = 4
        let total: f64 = bumps.iter().map(|b| b.weight * b.radius.powi(4)).sum();
        let scale: f64 = bumps
            .iter()
            .map(|b| (b.weight * b.radius.powi(4)).abs())
            .sum();
        let mean_zero = scale > 0.0 && total.abs() <= 1e-9 * scale;
        TestFunction {
            bumps,
            support_radius,
            mean_zero,
        }
    }

    /// The built-in mean-zero pair: bumps of opposite sign at `±(1/4)e₁`,
    /// support inside the unit ball.
    pub fn bump_diff() -> Self {
        TestFunction::new(vec![
            Bump {
                center: vec![0.25, 0.0, 0.0, 0.0],
                radius: 0.7,
                weight: 1.0,
            },
            Bump {
                center: vec![-0.25, 0.0, 0.0, 0.0],
                radius: 0.7,
                weight: -1.0,
            },
        ])
    }

    /// A single positive bump (not mean-zero).
    pub fn bump() -> Self {
        TestFunction::new(vec![Bump {
            center: vec![0.0; 4],
            radius: 0.7,
            weight: 1.0,
        }])
    }

    /// Opposite-sign bumps at `±(3/4)e₁`: disjoint supports a unit apart.
    pub fn far_pair() -> Self {
        TestFunction::new(vec![
            Bump {
                center: vec![0.75, 0.0, 0.0, 0.0],
                radius: 0.25,
                weight: 1.0,
            },
            Bump {
                center: vec![-0.75, 0.0, 0.0, 0.0],
                radius: 0.25,
                weight: -1.0,
            },
        ])
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        let bumps = self
            .bumps
            .iter()
            .map(|b| {
                let mut center = b.center.clone();
                for (c, s) in center.iter_mut().zip(shift) {
                    *c += s;
                }
                Bump {
                    center,
                    radius: b.radius,
                    weight: b.weight,
                }
            })
            .collect();
        TestFunction::new(bumps)
    }

    /// `h_λ(x) = λ⁴ h(λx)`.
    pub fn rescaled(&self, lambda: f64) -> Self {
        let bumps = self
            .bumps
            .iter()
            .map(|b| Bump {
                center: b.center.iter().map(|c| c / lambda).collect(),
                radius: b.radius / lambda,
                weight: b.weight * lambda.powi(4),
            })
            .collect();
        TestFunction::new(bumps)
    }

    pub fn combined(&self, alpha: f64, other: &TestFunction, beta: f64) -> Self {
        let mut bumps: Vec<Bump> = self
            .bumps
            .iter()
            .map(|b| Bump {
                weight: alpha * b.weight,
                ..b.clone()
            })
            .collect();
        bumps.extend(other.bumps.iter().map(|b| Bump {
            weight: beta * b.weight,
            ..b.clone()
        }));
        TestFunction::new(bumps)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for b in &self.bumps {
            let mut r2 = 0.0;
            for (i, &c) in b.center.iter().enumerate() {
                let xi = x.get(i).copied().unwrap_or(0.0);
                let d = (xi - c) / b.radius;
                r2 += d * d;
            }
            // coordinates beyond the bump's center length
            for &xi in x.iter().skip(b.center.len()) {
                let d = xi / b.radius;
                r2 += d * d;
            }
            total += b.weight * mollifier(r2);
        }
        total
    }

    /// `∫ h` in dimension `d` by radial quadrature.
    pub fn mass(&self, d: usize) -> f64 {
        self.bumps
            .iter()
            .map(|b| b.weight * b.radius.powi(d as i32) * unit_bump_mass(d))
            .sum()
    }
}

/// `∫_{R^d} ψ = S_{d−1} ∫₀¹ ψ(ρ) ρ^{d−1} dρ` for the unit mollifier.
fn unit_bump_mass(d: usize) -> f64 {
    let (xs, ws) = gauss_legendre(64, 0.0, 1.0);
    let radial: f64 = xs
        .iter()
        .zip(&ws)
        .map(|(&r, &w)| w * mollifier(r * r) * r.powi(d as i32 - 1))
        .sum();
    sphere_area(d) * radial
}

// ---------------------------------------------------------------------------
// Pairing

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PairingResult {
    pub value: f64,
    pub n: u32,
    pub radius: u32,
    pub a_n: f64,
    pub seed: u64,
}

/// `⟨h,φ_n⟩ = n^{−4} a_n Σ_{x∈L_n} h(x) Y_{nx}`, the Riemann sum for
/// `∫ h φ_n`, running over the support of `h`; sites outside `A_N`
/// contribute zero. The n^{−4} makes the second moment converge to the
/// log-kernel double integral (the variance of the sum grows like n^4 times
/// it otherwise, since spin correlations at macroscopic distance decay only
/// logarithmically).
pub fn pair(h: &TestFunction, field: &SpinField) -> PairingResult {
    let n = field.n;
    let a_n = scaling_a_n(n, 4, None).expect("n validated at field build");
    let reach = (n as f64 * h.support_radius).ceil() as i32;
    let mut terms = Vec::new();
    let mut x = [0.0f64; 4];
    let mut z = [0i32; 4];
    for a in -reach..=reach {
        z[0] = a;
        for b in -reach..=reach {
            z[1] = b;
            for c in -reach..=reach {
                z[2] = c;
                for e in -reach..=reach {
                    z[3] = e;
                    let p = Point::new(&z);
                    let spin = field.spin(&p);
                    if spin == 0 {
                        continue;
                    }
                    for i in 0..4 {
                        x[i] = z[i] as f64 / n as f64;
                    }
                    let hv = h.eval(&x);
                    if hv != 0.0 {
                        terms.push(hv * spin as f64);
                    }
                }
            }
        }
    }
    let value = (n as f64).powi(-4) * a_n * pairwise_sum(&terms);
    PairingResult {
        value,
        n,
        radius: field.radius,
        a_n,
        seed: field.seed,
    }
}

// ---------------------------------------------------------------------------
// Limiting covariance quadrature

/// Spherical mean of `−log|se₁ − tθ|` over `θ ∈ S³`; closed form.
fn log_kernel_mean(t: f64, s: f64) -> f64 {
    let (hi, lo) = if t >= s { (t, s) } else { (s, t) };
    if hi == 0.0 {
        return 0.0; // measure-zero corner, any finite value works
    }
    -(hi.ln() + lo * lo / (4.0 * hi * hi))
}

/// Spherical mean of `|se₁ − tθ|^{4−d}` over `θ ∈ S^{d−1}`, `d ≥ 5`,
/// by quadrature with the `sin^{d−2}` surface weight.
fn power_kernel_mean(t: f64, s: f64, d: usize, nodes: &(Vec<f64>, Vec<f64>)) -> f64 {
    let p = (4.0 - d as f64) / 2.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&phi, &w) in nodes.0.iter().zip(&nodes.1) {
        let weight = w * phi.sin().powi(d as i32 - 2);
        let q2 = t * t + s * s - 2.0 * t * s * phi.cos();
        num += weight * q2.max(1e-300).powf(p);
        den += weight;
    }
    num / den
}

/// `−∬ h(z)h(w) log|z−w| dz dw` (d = 4) or `∬ h(z)h(w)|z−w|^{4−d}` (d ≥ 5).
///
/// Each bump pair reduces to a radial triple integral over `(ρ, σ, φ)` with
/// the angular part of the kernel averaged in closed form (d = 4) or by a
/// separate polar quadrature (d ≥ 5), so the singularity at `z = w` never
/// meets a quadrature node head-on.
pub fn covariance_quadrature(h: &TestFunction, d: usize) -> Result<f64> {
    if d < 4 {
        return Err(Error::DimensionTooLow { need: 4, got: d });
    }
    if d == 4 && !h.mean_zero {
        return Err(Error::NotMeanZero);
    }
    let sphere = sphere_area(d);
    let angle_nodes = gauss_legendre(96, 0.0, std::f64::consts::PI);
    let kernel_nodes = gauss_legendre(128, 0.0, std::f64::consts::PI);
    // sin^{d-2} normalization of the angle between two uniform directions
    let angle_norm: f64 = angle_nodes
        .0
        .iter()
        .zip(&angle_nodes.1)
        .map(|(&phi, &w)| w * phi.sin().powi(d as i32 - 2))
        .sum();

    let mut total = 0.0;
    for bi in &h.bumps {
        for bj in &h.bumps {
            let sep: f64 = bi
                .center
                .iter()
                .zip(&bj.center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            // radial mass densities p(ρ) = S_{d−1} ψ(ρ/r) ρ^{d−1}
            let (ri, wi_) = gauss_legendre(48, 0.0, bi.radius);
            let (rj, wj_) = gauss_legendre(48, 0.0, bj.radius);
            let mut pair_term = 0.0;
            for (&rho, &wr) in ri.iter().zip(&wi_) {
                let pi_ = sphere * mollifier((rho / bi.radius).powi(2)) * rho.powi(d as i32 - 1);
                for (&sig, &ws) in rj.iter().zip(&wj_) {
                    let pj_ = sphere * mollifier((sig / bj.radius).powi(2)) * sig.powi(d as i32 - 1);
                    let mut angular = 0.0;
                    for (&phi, &wphi) in angle_nodes.0.iter().zip(&angle_nodes.1) {
                        let weight = wphi * phi.sin().powi(d as i32 - 2) / angle_norm;
                        let t2 = rho * rho + sig * sig - 2.0 * rho * sig * phi.cos();
                        let t = t2.max(0.0).sqrt();
                        let k = if d == 4 {
                            log_kernel_mean(t, sep)
                        } else {
                            power_kernel_mean(t, sep, d, &kernel_nodes)
                        };
                        angular += weight * k;
                    }
                    pair_term += wr * ws * pi_ * pj_ * angular;
                }
            }
            total += bi.weight * bj.weight * pair_term;
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Moment experiment

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MomentReport {
    pub mean: f64,
    pub mean_stderr: f64,
    pub var: f64,
    pub var_stderr: f64,
    pub m4: f64,
    pub m4_stderr: f64,
    pub kurtosis_ratio: f64,
    pub samples: u64,
    pub seed: u64,
}

pub fn moment_report(values: &[f64], seed: u64) -> MomentReport {
    let k = values.len() as f64;
    let mean = pairwise_sum(values) / k;
    let central =
        |p: i32| pairwise_sum(&values.iter().map(|v| (v - mean).powi(p)).collect::<Vec<_>>()) / k;
    let var = central(2) * k / (k - 1.0);
    let m4 = central(4);
    let m8 = central(8);
    MomentReport {
        mean,
        mean_stderr: (var / k).sqrt(),
        var,
        var_stderr: ((m4 - var * var).max(0.0) / k).sqrt(),
        m4,
        m4_stderr: ((m8 - m4 * m4).max(0.0) / k).sqrt(),
        kurtosis_ratio: m4 / (3.0 * var * var),
        samples: values.len() as u64,
        seed,
    }
}

/// Pairing values of `h` against `fieldSamples` independent fields.
pub fn pairing_samples(
    h: &TestFunction,
    n: u32,
    field_samples: u64,
    seed: SeedStream,
) -> Result<Vec<f64>> {
    (0..field_samples)
        .into_par_iter()
        .map(|i| {
            let field = sample_spin_field(n, seed.child(i))?;
            Ok(pair(h, &field).value)
        })
        .collect()
}

pub fn moment_experiment(
    h: &TestFunction,
    n: u32,
    field_samples: u64,
    seed: SeedStream,
) -> Result<MomentReport> {
    if field_samples < 100 {
        return Err(Error::Invalid(format!(
            "moment experiment needs at least 100 field samples, got {field_samples}"
        )));
    }
    let values = pairing_samples(h, n, field_samples, seed)?;
    Ok(moment_report(&values, seed.key()))
}

pub fn write_pairings_csv<W: Write>(values: &[f64], w: &mut W) -> Result<()> {
    writeln!(w, "sample_id,pairing_value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    Ok(())
}

/// Mean pairing estimate, for symmetry checks.
pub fn mean_estimate(values: &[f64], seed: u64) -> Estimate {
    Estimate::from_samples(values, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_n_formulas() {
        // n = 3 is close to e; check the exact formula instead of the rounded
        let v = scaling_a_n(1000, 4, None).unwrap();
        assert!((v - (3.0f64 * 1000f64.ln()).sqrt()).abs() < 1e-12);
        assert!((v - 4.552).abs() < 1e-3);
        let v6 = scaling_a_n(10, 6, Some(1.0)).unwrap();
        assert!((v6 - 10.0).abs() < 1e-12);
        assert!(matches!(
            scaling_a_n(10, 3, None),
            Err(Error::DimensionTooLow { need: 4, got: 3 })
        ));
    }

    #[test]
    fn cutoff_examples_and_monotone() {
        assert_eq!(cutoff_n(2), 2);
        assert_eq!(cutoff_n(100), 146);
        let mut prev = cutoff_n(2);
        for n in 3..=10_000 {
            let c = cutoff_n(n);
            assert!(c >= prev, "cutoff not monotone at n = {n}");
            prev = c;
        }
    }

    #[test]
    fn budget_error_names_max_n() {
        let big = 10_000;
        match sample_spin_field(big, SeedStream::from_root(1)) {
            Err(Error::LatticeBudget(msg)) => {
                let max = max_feasible_n(DEFAULT_SITE_BUDGET);
                assert!(msg.contains(&format!("max feasible n is {max}")));
                assert!(max >= 8, "max feasible n = {max}");
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn field_values_and_support() {
        let (field, _, index) = sample_spin_field_parts(4, SeedStream::from_root(7)).unwrap();
        assert_eq!(field.len(), index.len());
        for v in 0..index.len() as u32 {
            let s = field.spin(index.point(v));
            assert!(s == 1 || s == -1);
        }
        let outside = Point::new(&[field.radius as i32 + 1, 0, 0, 0]);
        assert_eq!(field.spin(&outside), 0);
    }

    #[test]
    fn spins_constant_per_component() {
        for rep in 0..5 {
            let (field, mut part, index) =
                sample_spin_field_parts(4, SeedStream::from_root(20 + rep)).unwrap();
            let n = index.len() as u32;
            for v in 0..n {
                for w in (v + 1)..n {
                    if part.same(v, w) {
                        assert_eq!(field.spin(index.point(v)), field.spin(index.point(w)));
                    }
                }
            }
        }
    }

    #[test]
    fn pairing_zero_function_and_linearity() {
        let field = sample_spin_field(4, SeedStream::from_root(3)).unwrap();
        let zero = TestFunction::new(vec![Bump {
            center: vec![0.0; 4],
            radius: 0.5,
            weight: 0.0,
        }]);
        assert_eq!(pair(&zero, &field).value, 0.0);

        let h1 = TestFunction::bump_diff();
        let h2 = TestFunction::bump();
        let combo = h1.combined(2.0, &h2, -3.0);
        let lhs = pair(&combo, &field).value;
        let rhs = 2.0 * pair(&h1, &field).value - 3.0 * pair(&h2, &field).value;
        assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn builtin_mass_is_zero() {
        let h = TestFunction::bump_diff();
        assert!(h.mean_zero);
        assert!(h.mass(4).abs() < 1e-10);
        assert!(!TestFunction::bump().mean_zero);
        assert!(TestFunction::bump().mass(4) > 0.0);
    }

    #[test]
    fn quadrature_requires_mean_zero_in_d4() {
        assert!(matches!(
            covariance_quadrature(&TestFunction::bump(), 4),
            Err(Error::NotMeanZero)
        ));
        assert!(matches!(
            covariance_quadrature(&TestFunction::bump_diff(), 3),
            Err(Error::DimensionTooLow { .. })
        ));
    }

    #[test]
    fn quadrature_positive_translation_invariant_and_scale_invariant() {
        let h = TestFunction::bump_diff();
        let base = covariance_quadrature(&h, 4).unwrap();
        assert!(base > 0.0, "variance form not positive: {base}");
        let shifted = covariance_quadrature(&h.translated(&[0.3, -0.2, 0.1, 0.0]), 4).unwrap();
        assert!(
            (shifted - base).abs() <= 1e-3 * base.abs(),
            "translation moved the integral: {base} vs {shifted}"
        );
        // with ∫h = 0 the log-kernel form is exactly invariant under
        // h → λ⁴ h(λ·)
        let scaled = covariance_quadrature(&h.rescaled(2.0), 4).unwrap();
        assert!(
            (scaled - base).abs() <= 2e-3 * base.abs(),
            "scaling law violated: {base} vs {scaled}"
        );
    }

    #[test]
    fn quadrature_matches_independent_monte_carlo() {
        // independent oracle: rejection-sample Z, W from the bump profile and
        // average the kernel directly
        let h = TestFunction::bump_diff();
        let quad = covariance_quadrature(&h, 4).unwrap();
        let mut rng = SeedStream::from_root(99).rng();
        let draw = |rng: &mut crate::rng::Rng| loop {
            let x: Vec<f64> = (0..4).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if r2 < 1.0 && rng.next_f64() * mollifier(0.0) < mollifier(r2) {
                return x;
            }
        };
        // draws live in the unit ball; map to one bump of radius 0.7 at
        // ±c and use the four-term expansion with signs
        let m = 0.7f64.powi(4) * unit_bump_mass(4);
        let samples = 200_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let z = draw(&mut rng);
            let w = draw(&mut rng);
            // sign pattern (+,+), (+,-), (-,+), (-,-) with centers ±0.25 e1
            for (sz, sw, sign) in [
                (0.25, 0.25, 1.0),
                (0.25, -0.25, -1.0),
                (-0.25, 0.25, -1.0),
                (-0.25, -0.25, 1.0),
            ] {
                let dx = 0.7 * (z[0] - w[0]) + sz - sw;
                let mut d2 = dx * dx;
                for i in 1..4 {
                    let di = 0.7 * (z[i] - w[i]);
                    d2 += di * di;
                }
                acc += sign * (-0.5) * d2.max(1e-300).ln();
            }
        }
        let mc = m * m * acc / samples as f64;
        assert!(
            (mc - quad).abs() < 0.05 * quad.abs().max(0.01),
            "quadrature {quad} vs MC {mc}"
        );
    }

    #[test]
    fn d5_quadrature_positive_and_sane() {
        let h = TestFunction::bump_diff();
        let v = covariance_quadrature(&h, 5).unwrap();
        assert!(v.is_finite());
        // the |z−w|^{-1} kernel is positive definite in d = 5
        assert!(v > 0.0, "d=5 form not positive: {v}");
    }

    #[test]
    fn moment_experiment_rejects_tiny_runs() {
        let h = TestFunction::bump_diff();
        assert!(matches!(
            moment_experiment(&h, 4, 10, SeedStream::from_root(1)),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn pairing_law_symmetric_sign_test() {
        let h = TestFunction::bump_diff();
        let values = pairing_samples(&h, 4, 600, SeedStream::from_root(5)).unwrap();
        let pos = values.iter().filter(|&&v| v > 0.0).count() as f64;
        let neg = values.iter().filter(|&&v| v < 0.0).count() as f64;
        let total = pos + neg;
        // two-sided sign test, normal approximation; reject only at p < 0.001
        let z = (pos - neg).abs() / total.sqrt();
        assert!(z < 3.29, "sign test z = {z} (pos {pos}, neg {neg})");
    }

    #[test]
    fn far_separated_dipoles_anticorrelate() {
        // dipoles aligned with the separation axis: the log-kernel cross
        // covariance (by polarization of the quadrature) is negative, and the
        // empirical product moment must agree in sign at 3 stderr
        let h1 = TestFunction::new(vec![
            Bump {
                center: vec![0.85, 0.0, 0.0, 0.0],
                radius: 0.3,
                weight: 1.0,
            },
            Bump {
                center: vec![0.35, 0.0, 0.0, 0.0],
                radius: 0.3,
                weight: -1.0,
            },
        ]);
        let h2 = h1.translated(&[-1.2, 0.0, 0.0, 0.0]);
        let sum = h1.combined(1.0, &h2, 1.0);
        let diff = h1.combined(1.0, &h2, -1.0);
        let pred = (covariance_quadrature(&sum, 4).unwrap()
            - covariance_quadrature(&diff, 4).unwrap())
            / 4.0;
        assert!(pred < 0.0, "predicted cross covariance {pred}");

        let root = SeedStream::from_root(31);
        let products: Vec<f64> = (0..4_000u64)
            .into_par_iter()
            .map(|i| {
                let field = sample_spin_field(6, root.child(i)).unwrap();
                pair(&h1, &field).value * pair(&h2, &field).value
            })
            .collect();
        let est = Estimate::from_samples(&products, root.key());
        assert!(
            est.value + 3.0 * est.stderr < 0.0,
            "cross moment {} +- {} vs predicted {pred}",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn field_moments_reproducible() {
        let h = TestFunction::bump_diff();
        let a = pairing_samples(&h, 4, 50, SeedStream::from_root(8)).unwrap();
        let b = pairing_samples(&h, 4, 50, SeedStream::from_root(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn product_moment_matches_component_probability() {
        // E[Y_x Y_y] = q_N(x,y): cross-check the field sampler against the
        // direct Wilson component estimate
        let n = 4;
        let radius = cutoff_n(n);
        let x = Point::new(&[1, 0, 0, 0]);
        let y = Point::new(&[0, 1, 0, 0]);
        let samples = 1500;
        let seed = SeedStream::from_root(31);
        let prods: Vec<f64> = (0..samples)
            .map(|i| {
                let f = sample_spin_field(n, seed.child(i)).unwrap();
                (f.spin(&x) * f.spin(&y)) as f64
            })
            .collect();
        let lhs = Estimate::from_samples(&prods, seed.key());
        let rhs = crate::wilson::same_component_prob(
            radius as f64,
            &x,
            &y,
            samples,
            SeedStream::from_root(32),
        )
        .unwrap();
        assert!(
            lhs.consistent_with(&rhs, 3.0),
            "E[YxYy] = {} vs q_N = {}",
            lhs.value,
            rhs.value
        );
    }
}
