//! Small statistical helpers: chi-square tail probabilities, total-variation
//! distance, least squares.

/// ln Gamma via the Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..500 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x) by Lentz continued fraction.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// p-value of a chi-square statistic with `dof` degrees of freedom.
pub fn chi_square_p(stat: f64, dof: f64) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    if dof > 2_000.0 {
        // Wilson-Hilferty: (x/k)^(1/3) is close to normal; the incomplete
        // gamma iterations stop converging at this scale
        let z = ((stat / dof).cbrt() - (1.0 - 2.0 / (9.0 * dof))) / (2.0 / (9.0 * dof)).sqrt();
        return 0.5 * erfc_simple(z / std::f64::consts::SQRT_2);
    }
    1.0 - gamma_p(dof / 2.0, stat / 2.0)
}

/// Abramowitz-Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
fn erfc_simple(x: f64) -> f64 {
    let sign = x < 0.0;
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let e = poly * (-x * x).exp();
    if sign {
        2.0 - e
    } else {
        e
    }
}

/// Chi-square uniformity test: observed counts against equal expected counts.
pub fn chi_square_uniform(counts: &[u64], total: u64) -> (f64, f64) {
    let k = counts.len() as f64;
    let expect = total as f64 / k;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expect;
            d * d / expect
        })
        .sum();
    (stat, chi_square_p(stat, k - 1.0))
}

/// Chi-square against arbitrary expected probabilities.
pub fn chi_square_expected(counts: &[u64], probs: &[f64], total: u64) -> (f64, f64) {
    assert_eq!(counts.len(), probs.len());
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * total as f64;
            let d = c as f64 - e;
            d * d / e
        })
        .sum();
    (stat, chi_square_p(stat, counts.len() as f64 - 1.0))
}

/// Total-variation distance between an empirical law (counts / total) and an
/// exact law, including exact-law mass never observed.
pub fn tv_distance<K: std::hash::Hash + Eq + Clone>(
    counts: &std::collections::HashMap<K, u64>,
    total: u64,
    exact: &std::collections::HashMap<K, f64>,
) -> f64 {
    let mut tv = 0.0;
    let t = total as f64;
    for (k, &p) in exact {
        let emp = counts.get(k).map(|&c| c as f64 / t).unwrap_or(0.0);
        tv += (emp - p).abs();
    }
    for (k, &c) in counts {
        if !exact.contains_key(k) {
            tv += c as f64 / t;
        }
    }
    tv / 2.0
}

/// Ordinary least squares for y = slope * x + intercept; returns
/// (slope, intercept, rms residual).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Gauss-Legendre nodes and weights on [a, b].
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = (((2 * j + 1) as f64) * x * p1 - (j as f64) * p2) / (j as f64 + 1.0);
            }
            let dp = n as f64 * (x * p0 - p1) / (x * x - 1.0);
            let dx = p0 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                let w = 2.0 / ((1.0 - x * x) * dp * dp);
                xs[i] = -x;
                ws[i] = w;
                xs[n - 1 - i] = x;
                ws[n - 1 - i] = w;
                break;
            }
        }
    }
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    for i in 0..n {
        xs[i] = mid + half * xs[i];
        ws[i] *= half;
    }
    (xs, ws)
}
