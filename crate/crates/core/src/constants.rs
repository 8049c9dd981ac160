//! Constants of the 20/60/20 split: the split probability `q̃`, truncated
//! normal moments and the variance constants `C`, `K` (and their one-sided
//! tilde versions) that normalise the test statistics.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{
    pdf_at_quantile, std_normal_cdf, std_normal_pdf, std_normal_quantile,
};

/// Every number derived from the 20/60/20 split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConstants {
    pub q_tilde: f64,
    /// `Φ⁻¹(q̃)`, the lower band boundary on the standard normal scale.
    pub x_tilde: f64,
    pub lambda1_tail: f64,
    pub lambda2_tail: f64,
    pub kappa_tail: f64,
    pub xi_tail: f64,
    pub lambda2_mid: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub c1_t: f64,
    pub c2_t: f64,
    pub c3_t: f64,
    pub k1_t: f64,
    pub k2_t: f64,
    pub k3_t: f64,
}

/// Residual of the split equation in `x = Φ⁻¹(q)`:
/// `-xΦ(x) - φ(x)(1 - 2Φ(x))`. It vanishes at `x = 0` and at `x̃ < 0`.
pub fn split_equation(x: f64) -> f64 {
    let p = std_normal_cdf(x);
    -x * p - std_normal_pdf(x) * (1.0 - 2.0 * p)
}

fn split_equation_deriv(x: f64) -> f64 {
    let p = std_normal_cdf(x);
    let d = std_normal_pdf(x);
    -p - 2.0 * x * d * p + 2.0 * d * d
}

/// Solves for `x̃ < 0` to the given residual tolerance; bisection brings the
/// bracket down, Newton finishes.
pub fn solve_x_tilde(tol: f64) -> Result<f64> {
    // f < 0 at -2 and f > 0 near -0.2; the trivial root x = 0 is excluded.
    let (mut lo, mut hi) = (-2.0_f64, -0.2_f64);
    if split_equation(lo).signum() == split_equation(hi).signum() {
        return Err(Error::Convergence("split equation not bracketed".into()));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if split_equation(mid).signum() == split_equation(lo).signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..50 {
        let f = split_equation(x);
        if f.abs() < tol {
            return Ok(x);
        }
        let step = f / split_equation_deriv(x);
        x -= step;
        if step.abs() < 1e-17 {
            break;
        }
    }
    let f = split_equation(x);
    if f.abs() < tol {
        Ok(x)
    } else {
        Err(Error::Convergence(format!(
            "split equation residual {f:e} above tolerance {tol:e}"
        )))
    }
}

/// The split probability `q̃ = Φ(x̃)` at which the lower-tail and central
/// conditional variances of a standard normal coincide.
pub fn solve_q_tilde() -> Result<f64> {
    solve_q_tilde_with_tol(1e-12)
}

pub fn solve_q_tilde_with_tol(tol: f64) -> Result<f64> {
    solve_x_tilde(tol).map(std_normal_cdf)
}

fn check_band(a: f64, b: f64) -> Result<()> {
    if !(0.0 <= a && a < b && b <= 1.0) {
        return Err(Error::domain(format!(
            "band requires 0 <= a < b <= 1, got ({a}, {b})"
        )));
    }
    Ok(())
}

fn quantile_or_inf(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        // p is strictly inside (0, 1) here.
        std_normal_quantile(p).unwrap_or(f64::NAN)
    }
}

/// `E[V | Φ⁻¹(a) < V < Φ⁻¹(b)]` for standard normal `V`.
pub fn lambda1(a: f64, b: f64) -> Result<f64> {
    check_band(a, b)?;
    Ok((pdf_at_quantile(a) - pdf_at_quantile(b)) / (b - a))
}

/// `E[V² | Φ⁻¹(a) < V < Φ⁻¹(b)]` for standard normal `V`.
pub fn lambda2(a: f64, b: f64) -> Result<f64> {
    check_band(a, b)?;
    let edge = |p: f64| {
        if p <= 0.0 || p >= 1.0 {
            0.0
        } else {
            let x = quantile_or_inf(p);
            x * std_normal_pdf(x)
        }
    };
    Ok(1.0 + (edge(a) - edge(b)) / (b - a))
}

/// Conditional moments `E[V^j | V ∈ (Φ⁻¹(a), Φ⁻¹(b))]` for `j = 0..=k` via
/// `M_j = (j-1)M_{j-2} + (α^{j-1}φ(α) - β^{j-1}φ(β))/(b-a)`.
fn truncated_moments_z(alpha: f64, beta: f64, mass: f64, k: usize) -> Vec<f64> {
    let edge = |x: f64, j: usize| {
        if x.is_infinite() {
            0.0
        } else {
            x.powi(j as i32) * std_normal_pdf(x)
        }
    };
    let mut m = vec![0.0; k + 1];
    m[0] = 1.0;
    if k >= 1 {
        m[1] = (edge(alpha, 0) - edge(beta, 0)) / mass;
    }
    for j in 2..=k {
        m[j] = (j - 1) as f64 * m[j - 2] + (edge(alpha, j - 1) - edge(beta, j - 1)) / mass;
    }
    m
}

/// `k`-th conditional moment of a standard normal on the probability band
/// `(a, b)`.
pub fn truncated_moment(k: usize, a: f64, b: f64) -> Result<f64> {
    check_band(a, b)?;
    let m = truncated_moments_z(quantile_or_inf(a), quantile_or_inf(b), b - a, k);
    Ok(m[k])
}

/// Third (`ξ`) or fourth (`κ`) conditional moment on the lower `q̃`-tail.
pub fn tail_moment(k: u32) -> Result<f64> {
    if k != 3 && k != 4 {
        return Err(Error::domain(format!("tail_moment supports k in {{3, 4}}, got {k}")));
    }
    truncated_moment(k as usize, 0.0, split_constants().q_tilde)
}

/// Band influence weights: `(1, -2, 1)` for the symmetric gap, `(1, -1, 0)`
/// for the one-sided statistics.
const SYMMETRIC: [f64; 3] = [1.0, -2.0, 1.0];
const ONE_SIDED: [f64; 3] = [1.0, -1.0, 0.0];

struct Band {
    a: f64,
    b: f64,
    alpha: f64,
    beta: f64,
    l1: f64,
    l2: f64,
}

impl Band {
    fn new(a: f64, b: f64) -> Result<Self> {
        Ok(Band {
            a,
            b,
            alpha: quantile_or_inf(a),
            beta: quantile_or_inf(b),
            l1: lambda1(a, b)?,
            l2: lambda2(a, b)?,
        })
    }

    fn mass(&self) -> f64 {
        self.b - self.a
    }

    // Constant part of the influence terms Z_1, Z_2 at a point v that lies
    // outside the band's interior boundaries (only indicator values matter).
    fn z_consts(&self, v: f64) -> (f64, f64) {
        let mut z1 = 0.0;
        let mut z2 = 0.0;
        if self.alpha.is_finite() {
            let ind = if v <= self.alpha { 1.0 } else { 0.0 };
            z1 += (ind - self.a) * (self.alpha - self.l1);
            z2 += (ind - self.a) * (self.alpha * self.alpha - self.l2);
        }
        if self.beta.is_finite() {
            let ind = if v <= self.beta { 1.0 } else { 0.0 };
            z1 += (self.b - ind) * (self.beta - self.l1);
            z2 += (self.b - ind) * (self.beta * self.beta - self.l2);
        }
        (z1, z2)
    }

    fn contains(&self, v: f64) -> bool {
        v > self.alpha && v < self.beta
    }
}

/// Variance of the influence function of `Σ_j w_j r̂_{A_j}` in the
/// configuration `X₁ = X₂ = V` (the `C₁`-type constant).
fn influence_variance(bands: &[Band; 3], w: [f64; 3]) -> f64 {
    let x = bands[1].alpha;
    let y = bands[1].beta;
    // Pieces of the real line on which every indicator is constant.
    let pieces = [
        (f64::NEG_INFINITY, x, x - 1.0),
        (x, y, 0.5 * (x + y)),
        (y, f64::INFINITY, y + 1.0),
    ];
    let mut mean = 0.0;
    let mut second = 0.0;
    for &(lo, hi, probe) in &pieces {
        // G(v) = c0 + c1 v + c2 v² on this piece.
        let (mut c0, mut c1, mut c2) = (0.0, 0.0, 0.0);
        for (band, &wj) in bands.iter().zip(&w) {
            if wj == 0.0 {
                continue;
            }
            let s = wj / band.mass();
            let (z1, z2) = band.z_consts(probe);
            c0 += s * (z2 - 2.0 * band.l1 * z1);
            if band.contains(probe) {
                c0 += s * (-band.l2 + 2.0 * band.l1 * band.l1);
                c1 += s * (-2.0 * band.l1);
                c2 += s;
            }
        }
        let p_lo = if lo.is_infinite() { 0.0 } else { std_normal_cdf(lo) };
        let p_hi = if hi.is_infinite() { 1.0 } else { std_normal_cdf(hi) };
        let mass = p_hi - p_lo;
        let m = truncated_moments_z(lo, hi, mass, 4);
        mean += mass * (c0 + c1 * m[1] + c2 * m[2]);
        second += mass
            * (c0 * c0
                + 2.0 * c0 * c1 * m[1]
                + (c1 * c1 + 2.0 * c0 * c2) * m[2]
                + 2.0 * c1 * c2 * m[3]
                + c2 * c2 * m[4]);
    }
    second - mean * mean
}

fn bands_at(q: f64) -> Result<[Band; 3]> {
    Ok([
        Band::new(0.0, q)?,
        Band::new(q, 1.0 - q)?,
        Band::new(1.0 - q, 1.0)?,
    ])
}

impl SplitConstants {
    /// All constants evaluated at an arbitrary split probability `q`.
    pub fn at_split(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 0.5) {
            return Err(Error::domain(format!("split probability must lie in (0, 0.5), got {q}")));
        }
        let bands = bands_at(q)?;
        let tail = &bands[0];
        let mid = &bands[1];
        let tail_var = tail.l2 - tail.l1 * tail.l1;
        let mid_var = mid.l2 - mid.l1 * mid.l1;

        let c1 = influence_variance(&bands, SYMMETRIC);
        let c2 = 2.0 * tail_var / q + 4.0 * mid_var / (1.0 - 2.0 * q);
        let c3 = 4.0 / q + 8.0 / (1.0 - 2.0 * q);
        let c1_t = influence_variance(&bands, ONE_SIDED);
        let c2_t = tail_var / q + mid_var / (1.0 - 2.0 * q);
        let c3_t = 2.0 * (1.0 - q) / (q * (1.0 - 2.0 * q));

        Ok(SplitConstants {
            q_tilde: q,
            x_tilde: tail.beta,
            lambda1_tail: tail.l1,
            lambda2_tail: tail.l2,
            kappa_tail: truncated_moment(4, 0.0, q)?,
            xi_tail: truncated_moment(3, 0.0, q)?,
            lambda2_mid: mid.l2,
            c1,
            c2,
            c3,
            k1: c1 - 4.0 * c2 + c3,
            k2: c2 - c3,
            k3: c3,
            c1_t,
            c2_t,
            c3_t,
            k1_t: c1_t - 4.0 * c2_t + c3_t,
            k2_t: c2_t - c3_t,
            k3_t: c3_t,
        })
    }
}

/// Constants at the exact root `q̃`.
pub fn compute_constants() -> Result<SplitConstants> {
    SplitConstants::at_split(solve_q_tilde()?)
}

/// Process-wide cached constants.
pub fn split_constants() -> &'static SplitConstants {
    static CELL: OnceLock<SplitConstants> = OnceLock::new();
    CELL.get_or_init(|| compute_constants().expect("split constants are computable"))
}

/// The long closed-form expressions for `C₁` and `C̃₁` transcribed term by
/// term from the printed derivation, evaluated at `q`. Kept as a
/// diagnostic: they do not reproduce the exact influence-function variance.
pub fn printed_c1_formulas(q: f64) -> Result<(f64, f64)> {
    let bands = bands_at(q)?;
    let a = bands[0].beta;
    let l11 = bands[0].l1;
    let l12 = bands[0].l2;
    let l22 = bands[1].l2;
    let l21 = bands[1].l1;
    let kappa1 = truncated_moment(4, 0.0, q)?;
    let kappa2 = truncated_moment(4, q, 1.0 - q)?;
    let xi1 = truncated_moment(3, 0.0, q)?;
    let mt = |lam: f64, k: i32| a.powi(k) - lam;
    let m111 = mt(l11, 1);
    let m122 = mt(l12, 2);
    let m121 = mt(l12, 1);
    let m222 = mt(l22, 2);
    let m221 = mt(l21, 1);
    let n1 = q - a;
    let n2 = q - a * a;
    let qq = q * (1.0 - q);
    let r = 1.0 - 2.0 * q;
    let inner = r * ((1.0 - q) * l11 + q * l22 - q - l11 * l22);

    let c1 = 2.0 * kappa1 + 4.0 * kappa2 - 8.0 * l11 * xi1
        + 2.0 * q * l12 * l12
        + 2.0 * qq * (m122 * m122 + 4.0 * m222 * m222)
        + 2.0 * (q * m122).powi(2)
        + 4.0 * q * l22 * l22
        + 8.0 * m222 * m221 * m221 * (l22 * (2.0 * q - l22) - q)
        + 8.0 * l11 * l11 * (2.0 * q * l12 - q * l11 * l11 + qq * m111)
        - 8.0 * l11 * (qq * m111 * m122 + a * a * m121 * m121 * m111)
        + 16.0 * l11 * n1 * (inner + n2 * r * l12);

    let c1_t = kappa1 + kappa2 - 4.0 * l11 * xi1
        + q * (l12 * l12 + l22 * l22)
        + qq * (m122 * m122 + 2.0 * m222 * m222)
        + 2.0 * m222 * m221 * m221 * (l22 * (2.0 * q - l22) - q)
        + 4.0 * l11 * l11 * (2.0 * q * l12 - q * l11 * l11 + qq * m111)
        + 4.0 * l11 * (qq * m111 * m122)
        + 4.0 * l11 * n1 * (inner + n2 * r)
        - 2.0 * n2 * (r * (q + l11 * l22 - (1.0 - q) * l11 - q * l22) + n2 * r * l12);
    Ok((c1, c1_t))
}

/// One internal-consistency check on a set of constants.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualCheck {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Internal-consistency checks: root residual, variance equilibrium at the
/// split, closed forms of `C₃`, the `K` identities and full-support moments.
/// Each passes when its absolute residual is at most `tol`.
pub fn residual_checks(c: &SplitConstants, tol: f64) -> Vec<ResidualCheck> {
    let q = c.q_tilde;
    let mid_var = lambda2(q, 1.0 - q).unwrap_or(f64::NAN);
    let mut out = Vec::new();
    let mut push = |name: &'static str, residual: f64| {
        out.push(ResidualCheck {
            name,
            residual,
            tolerance: tol,
            pass: residual.abs() <= tol,
        });
    };
    push("split_equation", split_equation(std_normal_quantile(q).unwrap_or(f64::NAN)));
    push(
        "tail_vs_mid_variance",
        (c.lambda2_tail - c.lambda1_tail * c.lambda1_tail) - mid_var,
    );
    push("c3_closed_form", c.c3 - (4.0 / q + 8.0 / (1.0 - 2.0 * q)));
    push("c3_t_closed_form", c.c3_t - 2.0 * (1.0 - q) / (q * (1.0 - 2.0 * q)));
    push("k1_identity", c.k1 - (c.c1 - 4.0 * c.c2 + c.c3));
    push("k2_identity", c.k2 - (c.c2 - c.c3));
    push("k3_identity", c.k3 - c.c3);
    push("k1_t_identity", c.k1_t - (c.c1_t - 4.0 * c.c2_t + c.c3_t));
    push("k2_t_identity", c.k2_t - (c.c2_t - c.c3_t));
    push("k3_t_identity", c.k3_t - c.c3_t);
    push("lambda1_full_support", lambda1(0.0, 1.0).unwrap_or(f64::NAN));
    push("lambda2_full_support", lambda2(0.0, 1.0).unwrap_or(f64::NAN) - 1.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x_tilde_is_negative_root() {
        let x = solve_x_tilde(1e-14).unwrap();
        assert!(x < 0.0);
        assert!(split_equation(x).abs() < 1e-14);
        assert!((x + 0.848_464_684_855_059_3).abs() < 1e-12);
    }

    #[test]
    fn root_is_stable_under_tighter_tolerance() {
        let q = solve_q_tilde().unwrap();
        let q_tight = solve_q_tilde_with_tol(1e-13).unwrap();
        assert!((q - q_tight).abs() < 1e-12);
    }

    #[test]
    fn split_ratio_is_twenty_sixty_twenty() {
        let q = solve_q_tilde().unwrap();
        assert!((q - 0.198).abs() < 5e-4);
        assert!((1.0 - 2.0 * q - 0.604).abs() < 1e-3);
    }

    #[test]
    fn full_support_moments() {
        assert_eq!(lambda1(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(lambda2(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(lambda2(0.0, 0.5).unwrap(), 1.0);
        assert!((truncated_moment(4, 0.0, 1.0).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(truncated_moment(3, 0.0, 1.0).unwrap(), 0.0);
        let q = split_constants().q_tilde;
        assert!(lambda1(q, 1.0 - q).unwrap().abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(lambda1(0.5, 0.5).is_err());
        assert!(lambda1(-0.1, 0.5).is_err());
        assert!(lambda2(0.2, 1.1).is_err());
        assert!(tail_moment(2).is_err());
        assert!(tail_moment(5).is_err());
        assert!(SplitConstants::at_split(0.5).is_err());
    }

    #[test]
    fn k_relations_hold_exactly() {
        let c = split_constants();
        assert_eq!(c.k1, c.c1 - 4.0 * c.c2 + c.c3);
        assert_eq!(c.k2, c.c2 - c.c3);
        assert_eq!(c.k3, c.c3);
        assert_eq!(c.k1_t, c.c1_t - 4.0 * c.c2_t + c.c3_t);
    }

    #[test]
    fn residual_checks_pass_and_detect_perturbation() {
        let c = *split_constants();
        assert!(residual_checks(&c, 1e-10).iter().all(|r| r.pass));
        let mut bad = c;
        bad.k1 += 1e-6;
        assert!(residual_checks(&bad, 1e-9).iter().any(|r| !r.pass));
    }

    #[test]
    fn printed_c1_differs_from_influence_variance() {
        let c = split_constants();
        let (printed, _) = printed_c1_formulas(c.q_tilde).unwrap();
        assert!(printed.is_finite());
        assert!((printed - c.c1).abs() > 1.0);
    }
}
