//! Distribution functions for the discretizers: error function, CDFs,
//! quantiles, and truncated means for the target families.
//!
//! Everything here is closed-form or series/continued-fraction, so the grid
//! construction is deterministic and accurate to near machine precision.

use crate::problems::Density1D;

/// erf via its Maclaurin series for |x| < 2.5 and a continued fraction for
/// the tail. Absolute error well below 1e-14 on the real line.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x < 2.5 {
        // erf(x) = 2/√π Σ (−1)^n x^{2n+1} / (n! (2n+1))
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        let mut n = 0usize;
        loop {
            n += 1;
            term *= -x2 / n as f64;
            let inc = term / (2 * n + 1) as f64;
            sum += inc;
            if inc.abs() < 1e-18 * sum.abs().max(1e-300) || n > 200 {
                break;
            }
        }
        (2.0 / std::f64::consts::PI.sqrt()) * sum
    } else {
        1.0 - erfc_tail(x)
    }
}

/// erfc for x ≥ 2.5 by the Laplace continued fraction (modified Lentz).
fn erfc_tail(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = tiny;
    let mut c = f;
    let mut d = 0.0;
    // CF: erfc(x) = exp(−x²)/√π · 1/(x + 1/2/(x + 1/(x + 3/2/(x + ...))))
    for i in 0..200 {
        let (a, b) = if i == 0 { (1.0, x) } else { (i as f64 / 2.0, x) };
        d = b + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / std::f64::consts::PI.sqrt() * f
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Mean of (X − b)⁺ for X ~ N(mean, std²).
pub fn normal_call(mean: f64, std: f64, b: f64) -> f64 {
    let z = (mean - b) / std;
    std * normal_pdf(z) + (mean - b) * normal_cdf(z)
}

/// CDF of Student's t with even df, via the classical finite sum in
/// x = t/√(df + t²).
pub fn student_t_cdf(df: u32, t: f64) -> f64 {
    assert!(df >= 2 && df % 2 == 0, "even df only");
    let x = t / (df as f64 + t * t).sqrt();
    let u = 1.0 - x * x;
    let mut coef = 1.0;
    let mut sum = 1.0;
    for j in 1..(df / 2) {
        coef *= (2.0 * j as f64 - 1.0) / (2.0 * j as f64);
        sum += coef * u.powi(j as i32);
    }
    0.5 + 0.5 * x * sum
}

pub fn student_t_pdf(df: u32, t: f64) -> f64 {
    let nu = df as f64;
    // Γ((ν+1)/2) / (√(νπ) Γ(ν/2)) for integer ν via lgamma-free products.
    let coeff = t_norm_const(df);
    coeff * (1.0 + t * t / nu).powf(-(nu + 1.0) / 2.0)
}

fn t_norm_const(df: u32) -> f64 {
    let nu = df as f64;
    // Γ(ν/2 + 1/2)/Γ(ν/2): for even ν both arguments are half-integers.
    let mut ratio = 1.0;
    // Γ(n + 1/2)/Γ(n) with n = ν/2: build both from Γ(1/2)=√π and Γ(1)=1.
    let n = df / 2;
    let mut num = std::f64::consts::PI.sqrt(); // Γ(1/2)
    for k in 0..n {
        num *= 0.5 + k as f64; // Γ(n + 1/2)
    }
    let mut den = 1.0; // Γ(1)
    for k in 1..n {
        den *= k as f64; // Γ(n)
    }
    ratio *= num / den;
    ratio / ((nu * std::f64::consts::PI).sqrt())
}

pub fn density_cdf(density: &Density1D, x: f64) -> f64 {
    match density {
        Density1D::Normal { mean, std } => normal_cdf((x - mean) / std),
        Density1D::NormalMixture { components } => {
            let total: f64 = components.iter().map(|c| c.weight).sum();
            components
                .iter()
                .map(|c| c.weight / total * normal_cdf((x - c.mean) / c.std))
                .sum()
        }
        Density1D::StudentT { df } => student_t_cdf(*df, x),
        Density1D::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
    }
}

/// Quantile by bisection on the CDF.
pub fn density_quantile(density: &Density1D, p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1)");
    let (mut lo, mut hi) = bracket(density);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if density_cdf(density, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn bracket(density: &Density1D) -> (f64, f64) {
    match density {
        Density1D::Normal { mean, std } => (mean - 40.0 * std, mean + 40.0 * std),
        Density1D::NormalMixture { components } => {
            let lo = components
                .iter()
                .map(|c| c.mean - 40.0 * c.std)
                .fold(f64::INFINITY, f64::min);
            let hi = components
                .iter()
                .map(|c| c.mean + 40.0 * c.std)
                .fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
        Density1D::StudentT { .. } => (-1e9, 1e9),
        Density1D::Uniform { lo, hi } => (*lo, *hi),
    }
}

/// ∫_a^b x dF restricted to the interval, NOT normalized by the mass.
fn partial_mean(density: &Density1D, a: f64, b: f64) -> f64 {
    match density {
        Density1D::Normal { mean, std } => {
            let za = if a.is_finite() { (a - mean) / std } else { f64::NEG_INFINITY };
            let zb = if b.is_finite() { (b - mean) / std } else { f64::INFINITY };
            let (pa, pb) = (tail_pdf(za), tail_pdf(zb));
            let (ca, cb) = (tail_cdf(za), tail_cdf(zb));
            mean * (cb - ca) + std * (pa - pb)
        }
        Density1D::NormalMixture { components } => {
            let total: f64 = components.iter().map(|c| c.weight).sum();
            components
                .iter()
                .map(|c| {
                    c.weight / total
                        * partial_mean(&Density1D::Normal { mean: c.mean, std: c.std }, a, b)
                })
                .sum()
        }
        Density1D::StudentT { df } => {
            let nu = *df as f64;
            let anti = |t: f64| -> f64 {
                if !t.is_finite() {
                    return 0.0;
                }
                // ∫ t (1+t²/ν)^{−(ν+1)/2} dt = −ν/(ν−1) (1+t²/ν)^{−(ν−1)/2}
                -nu / (nu - 1.0) * (1.0 + t * t / nu).powf(-(nu - 1.0) / 2.0)
            };
            t_norm_const(*df) * (anti(b) - anti(a))
        }
        Density1D::Uniform { lo, hi } => {
            let (a, b) = (a.max(*lo), b.min(*hi));
            if a >= b {
                return 0.0;
            }
            (b * b - a * a) / (2.0 * (hi - lo))
        }
    }
}

fn tail_pdf(z: f64) -> f64 {
    if z.is_finite() {
        normal_pdf(z)
    } else {
        0.0
    }
}

fn tail_cdf(z: f64) -> f64 {
    if z.is_finite() {
        normal_cdf(z)
    } else if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// A 1-D distribution reduced to weighted atoms.
#[derive(Debug, Clone)]
pub struct Discretized1D {
    pub points: Vec<f64>,
    pub masses: Vec<f64>,
}

impl Discretized1D {
    pub fn mean(&self) -> f64 {
        self.points.iter().zip(&self.masses).map(|(x, m)| x * m).sum()
    }

    /// Mean of (X − b)⁺ under the atoms.
    pub fn call_price(&self, b: f64) -> f64 {
        self.points
            .iter()
            .zip(&self.masses)
            .map(|(x, m)| (x - b).max(0.0) * m)
            .sum()
    }
}

/// Equal-mass quantile binning with atoms at conditional means: cell k is
/// (q_{k/g}, q_{(k+1)/g}] and its atom sits at E[X | X ∈ cell]. Preserves the
/// mean exactly (up to floating summation).
pub fn discretize(density: &Density1D, cells: usize) -> Discretized1D {
    assert!(cells >= 1);
    let mass = 1.0 / cells as f64;
    let mut points = Vec::with_capacity(cells);
    for k in 0..cells {
        let a = if k == 0 {
            f64::NEG_INFINITY
        } else {
            density_quantile(density, k as f64 * mass)
        };
        let b = if k + 1 == cells {
            f64::INFINITY
        } else {
            density_quantile(density, (k + 1) as f64 * mass)
        };
        points.push(partial_mean(density, a, b) / mass);
    }
    Discretized1D { points, masses: vec![mass; cells] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::MixtureComponent;

    #[test]
    fn erf_reference_values() {
        assert!((erf(0.0)).abs() < 1e-16);
        assert!((erf(1.0) - 0.8427007929497149).abs() < 1e-13);
        assert!((erf(2.0) - 0.9953222650189527).abs() < 1e-13);
        assert!((erf(3.0) - 0.9999779095030014).abs() < 1e-13);
        assert!((erf(-1.5) + 0.9661051464753107).abs() < 1e-13);
    }

    #[test]
    fn normal_cdf_and_quantile_are_inverse() {
        let d = Density1D::Normal { mean: 1.0, std: 2.0 };
        for p in [0.01, 0.2, 0.5, 0.77, 0.999] {
            let q = density_quantile(&d, p);
            assert!((density_cdf(&d, q) - p).abs() < 1e-11, "p={p}");
        }
        assert!((density_quantile(&d, 0.5) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn student_t_cdf_matches_quadrature() {
        // Simpson integration of the density as the independent check.
        let df = 8;
        let simpson = |b: f64| -> f64 {
            let (a, n) = (-60.0, 20_000);
            let h = (b - a) / n as f64;
            let mut s = student_t_pdf(df, a) + student_t_pdf(df, b);
            for i in 1..n {
                let x = a + i as f64 * h;
                s += student_t_pdf(df, x) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        for b in [-2.0, -0.5, 0.0, 0.3, 1.7, 4.0] {
            let exact = student_t_cdf(df, b);
            let quad = simpson(b);
            assert!((exact - quad).abs() < 1e-8, "b={b}: {exact} vs {quad}");
        }
    }

    #[test]
    fn student_t_cdf_symmetry() {
        for t in [0.1, 0.9, 2.3, 5.0] {
            let s = student_t_cdf(8, t) + student_t_cdf(8, -t);
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert!((student_t_cdf(8, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn discretization_preserves_means_exactly() {
        let mixture = Density1D::NormalMixture {
            components: vec![
                MixtureComponent { weight: 0.5, mean: -1.3, std: 0.5 },
                MixtureComponent { weight: 0.5, mean: 0.8, std: 0.7 },
            ],
        };
        for cells in [7, 40, 111] {
            let d = discretize(&mixture, cells);
            assert!((d.mean() - (-0.25)).abs() < 1e-9, "cells={cells}: {}", d.mean());
            assert!((d.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let normal = Density1D::Normal { mean: 0.7, std: 2.0 };
        let d = discretize(&normal, 33);
        assert!((d.mean() - 0.7).abs() < 1e-10);
        // Atoms are strictly increasing.
        assert!(d.points.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn discretized_variance_approaches_the_true_variance_from_below() {
        let normal = Density1D::Normal { mean: 0.0, std: 2.0 };
        let var = |d: &Discretized1D| -> f64 {
            d.points.iter().zip(&d.masses).map(|(x, m)| x * x * m).sum::<f64>()
        };
        let coarse = var(&discretize(&normal, 10));
        let fine = var(&discretize(&normal, 200));
        assert!(coarse < fine && fine < 4.0, "{coarse} {fine}");
        assert!(4.0 - fine < 0.01);
    }

    #[test]
    fn uniform_discretization_is_cell_midpoints() {
        let u = Density1D::Uniform { lo: 0.0, hi: 1.0 };
        let d = discretize(&u, 4);
        for (k, &p) in d.points.iter().enumerate() {
            assert!((p - (0.125 + 0.25 * k as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn call_prices_of_discretized_normal_match_closed_form() {
        let normal = Density1D::Normal { mean: 0.0, std: 2.0 };
        let d = discretize(&normal, 400);
        for b in [-3.0, -1.0, 0.0, 1.5, 4.0] {
            let exact = normal_call(0.0, 2.0, b);
            assert!((d.call_price(b) - exact).abs() < 2e-3, "b={b}");
        }
    }
}
