//! Bivariate copula families with standard normal margins: samplers, CDFs
//! and conditional distributions `∂C/∂u`.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::special::{
    brent, bvn_cdf, bvt_cdf, std_normal_cdf, std_normal_quantile, student_t_cdf,
    student_t_quantile, student_t_tail,
};

/// Smallest sample size accepted by [`BivariateSample::new`].
pub const MIN_SAMPLE_SIZE: usize = 4;

const EDGE: f64 = 1e-12;

/// Paired observations `(x1[i], x2[i])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BivariateSample {
    x1: Vec<f64>,
    x2: Vec<f64>,
}

impl BivariateSample {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>) -> Result<Self> {
        if x1.len() != x2.len() {
            return Err(Error::param(format!(
                "margins differ in length: {} vs {}",
                x1.len(),
                x2.len()
            )));
        }
        if x1.len() < MIN_SAMPLE_SIZE {
            return Err(Error::param(format!(
                "sample size {} below minimum {MIN_SAMPLE_SIZE}",
                x1.len()
            )));
        }
        if let Some(i) = x1.iter().chain(&x2).position(|v| !v.is_finite()) {
            let n = x1.len();
            let (col, row) = if i < n { (1, i) } else { (2, i - n) };
            return Err(Error::domain(format!(
                "non-finite value in margin {col} at row {row}"
            )));
        }
        Ok(BivariateSample { x1, x2 })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let (x1, x2) = pairs.iter().copied().unzip();
        Self::new(x1, x2)
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn x2(&self) -> &[f64] {
        &self.x2
    }

    pub fn n(&self) -> usize {
        self.x1.len()
    }

    /// The sample with its two margins exchanged.
    pub fn swapped(&self) -> Self {
        BivariateSample {
            x1: self.x2.clone(),
            x2: self.x1.clone(),
        }
    }

    /// Applies `x ↦ (s1·x1 + t1, s2·x2 + t2)` to every observation.
    pub fn affine(&self, s1: f64, t1: f64, s2: f64, t2: f64) -> Result<Self> {
        Self::new(
            self.x1.iter().map(|v| s1 * v + t1).collect(),
            self.x2.iter().map(|v| s2 * v + t2).collect(),
        )
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.x1, self.x2)
    }
}

/// A copula family together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CopulaSpec {
    Gaussian { rho: f64 },
    #[serde(alias = "t", alias = "studentt")]
    StudentT { rho: f64, nu: f64 },
    Frank { theta: f64 },
    Gumbel { theta: f64 },
    Joe { theta: f64 },
    Galambos { theta: f64 },
    #[serde(alias = "huslerreiss")]
    HuslerReiss { theta: f64 },
}

impl CopulaSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CopulaSpec::Gaussian { rho } => rho.abs() < 1.0,
            CopulaSpec::StudentT { rho, nu } => rho.abs() < 1.0 && nu > 0.0 && nu.is_finite(),
            CopulaSpec::Frank { theta } => theta != 0.0 && theta.is_finite(),
            CopulaSpec::Gumbel { theta } | CopulaSpec::Joe { theta } => {
                theta >= 1.0 && theta.is_finite()
            }
            CopulaSpec::Galambos { theta } | CopulaSpec::HuslerReiss { theta } => {
                theta > 0.0 && theta.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid copula parameters: {self:?}")))
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            CopulaSpec::Gaussian { .. } => "gaussian",
            CopulaSpec::StudentT { .. } => "student_t",
            CopulaSpec::Frank { .. } => "frank",
            CopulaSpec::Gumbel { .. } => "gumbel",
            CopulaSpec::Joe { .. } => "joe",
            CopulaSpec::Galambos { .. } => "galambos",
            CopulaSpec::HuslerReiss { .. } => "husler_reiss",
        }
    }

    /// Compact label such as `gumbel(theta=1.5)`.
    pub fn label(&self) -> String {
        match *self {
            CopulaSpec::Gaussian { rho } => format!("gaussian(rho={rho})"),
            CopulaSpec::StudentT { rho, nu } => format!("student_t(rho={rho},nu={nu})"),
            CopulaSpec::Frank { theta }
            | CopulaSpec::Gumbel { theta }
            | CopulaSpec::Joe { theta }
            | CopulaSpec::Galambos { theta }
            | CopulaSpec::HuslerReiss { theta } => {
                format!("{}(theta={theta})", self.family_name())
            }
        }
    }
}

/// The parameter grid of the power study.
pub fn table1_grid() -> Vec<(CopulaSpec, f64)> {
    let mut out = Vec::new();
    for nu in [3.0, 5.0, 10.0] {
        for rho in [0.0, 0.3, 0.5, 0.8] {
            out.push((CopulaSpec::StudentT { rho, nu }, rho));
        }
    }
    let labels = [0.3, 0.5, 0.8];
    let fams: [(fn(f64) -> CopulaSpec, [f64; 3]); 5] = [
        (|theta| CopulaSpec::Frank { theta }, [2.0, 3.7, 9.0]),
        (|theta| CopulaSpec::Gumbel { theta }, [1.25, 1.5, 2.5]),
        (|theta| CopulaSpec::Joe { theta }, [1.4, 1.9, 4.4]),
        (|theta| CopulaSpec::Galambos { theta }, [0.5, 0.8, 1.8]),
        (|theta| CopulaSpec::HuslerReiss { theta }, [0.85, 1.2, 2.4]),
    ];
    for (make, thetas) in fams {
        for (theta, rho) in thetas.into_iter().zip(labels) {
            out.push((make(theta), rho));
        }
    }
    out
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must lie in [0, 1], got {v}")))
    }
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must lie in (0, 1), got {v}")))
    }
}

fn integer_nu(nu: f64) -> Result<u32> {
    if nu.fract() == 0.0 && nu >= 1.0 && nu <= u32::MAX as f64 {
        Ok(nu as u32)
    } else {
        Err(Error::param(format!(
            "t copula CDF needs integer degrees of freedom, got {nu}"
        )))
    }
}

/// Normal-scale value of `u` with the boundary clamp applied.
fn z(u: f64) -> f64 {
    // Clamped into (0, 1), so the quantile is defined.
    std_normal_quantile(u.clamp(EDGE, 1.0 - EDGE)).unwrap_or(0.0)
}

/// Tail-accurate t quantile: `t_ν^{-1}(u)` for the clamped `u`.
fn t_score(u: f64, nu: f64) -> f64 {
    student_t_quantile(u.clamp(EDGE, 1.0 - EDGE), nu).unwrap_or(0.0)
}

/// Copula CDF `C(u, v)`.
pub fn cdf(spec: &CopulaSpec, u: f64, v: f64) -> Result<f64> {
    spec.validate()?;
    check_unit("u", u)?;
    check_unit("v", v)?;
    if u == 0.0 || v == 0.0 {
        return Ok(0.0);
    }
    if u == 1.0 {
        return Ok(v);
    }
    if v == 1.0 {
        return Ok(u);
    }
    let c = match *spec {
        CopulaSpec::Gaussian { rho } => bvn_cdf(z(u), z(v), rho),
        CopulaSpec::StudentT { rho, nu } => {
            bvt_cdf(t_score(u, nu), t_score(v, nu), rho, integer_nu(nu)?)
        }
        CopulaSpec::Frank { theta } => {
            let num = (-theta * u).exp_m1() * (-theta * v).exp_m1();
            -(num / (-theta).exp_m1()).ln_1p() / theta
        }
        CopulaSpec::Gumbel { theta } => {
            let a = (-u.ln()).powf(theta) + (-v.ln()).powf(theta);
            (-a.powf(1.0 / theta)).exp()
        }
        CopulaSpec::Joe { theta } => {
            let ub = (1.0 - u).powf(theta);
            let vb = (1.0 - v).powf(theta);
            1.0 - (ub + vb - ub * vb).powf(1.0 / theta)
        }
        CopulaSpec::Galambos { theta } => {
            let x = -u.ln();
            let y = -v.ln();
            let s = (x.powf(-theta) + y.powf(-theta)).powf(-1.0 / theta);
            (-x - y + s).exp()
        }
        CopulaSpec::HuslerReiss { theta } => {
            let x = -u.ln();
            let y = -v.ln();
            let l = (x / y).ln();
            let a = std_normal_cdf(1.0 / theta + 0.5 * theta * l);
            let b = std_normal_cdf(1.0 / theta - 0.5 * theta * l);
            (-x * a - y * b).exp()
        }
    };
    Ok(c.clamp(0.0, u.min(v)))
}

fn h_unchecked(spec: &CopulaSpec, u: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    if v >= 1.0 {
        return 1.0;
    }
    let h = match *spec {
        CopulaSpec::Gaussian { rho } => {
            std_normal_cdf((z(v) - rho * z(u)) / (1.0 - rho * rho).sqrt())
        }
        CopulaSpec::StudentT { rho, nu } => {
            let tu = t_score(u, nu);
            let tv = t_score(v, nu);
            let scale = ((nu + tu * tu) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
            student_t_cdf((tv - rho * tu) / scale, nu + 1.0)
        }
        CopulaSpec::Frank { theta } => {
            let eu = (-theta * u).exp();
            let bv = (-theta * v).exp_m1();
            eu * bv / ((-theta).exp_m1() + (-theta * u).exp_m1() * bv)
        }
        CopulaSpec::Gumbel { theta } => {
            let x = -u.ln();
            let y = -v.ln();
            let a = x.powf(theta) + y.powf(theta);
            let c = (-a.powf(1.0 / theta)).exp();
            c * a.powf(1.0 / theta - 1.0) * x.powf(theta - 1.0) / u
        }
        CopulaSpec::Joe { theta } => {
            let ub = (1.0 - u).powf(theta);
            let vb = (1.0 - v).powf(theta);
            let s = ub + vb - ub * vb;
            s.powf(1.0 / theta - 1.0) * (1.0 - u).powf(theta - 1.0) * (1.0 - vb)
        }
        CopulaSpec::Galambos { theta } => {
            let x = -u.ln();
            let y = -v.ln();
            let sum = x.powf(-theta) + y.powf(-theta);
            let c = (-x - y + sum.powf(-1.0 / theta)).exp();
            c / u * (1.0 - sum.powf(-1.0 / theta - 1.0) * x.powf(-theta - 1.0))
        }
        CopulaSpec::HuslerReiss { theta } => {
            let x = -u.ln();
            let y = -v.ln();
            let l = (x / y).ln();
            let a = std_normal_cdf(1.0 / theta + 0.5 * theta * l);
            let b = std_normal_cdf(1.0 / theta - 0.5 * theta * l);
            (-x * a - y * b).exp() / u * a
        }
    };
    h.clamp(0.0, 1.0)
}

/// Conditional distribution `∂C/∂u (u, v) = P(V ≤ v | U = u)`.
pub fn conditional_cdf(spec: &CopulaSpec, u: f64, v: f64) -> Result<f64> {
    spec.validate()?;
    check_open_unit("u", u)?;
    check_unit("v", v)?;
    Ok(h_unchecked(spec, u, v))
}

fn cq_unchecked(spec: &CopulaSpec, u: f64, p: f64) -> Result<f64> {
    match *spec {
        CopulaSpec::Gaussian { rho } => {
            let x = rho * z(u) + (1.0 - rho * rho).sqrt() * z(p);
            Ok(std_normal_cdf(x))
        }
        CopulaSpec::StudentT { rho, nu } => {
            let tu = t_score(u, nu);
            let scale = ((nu + tu * tu) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
            let t = rho * tu + scale * t_score(p, nu + 1.0);
            Ok(student_t_cdf(t, nu))
        }
        CopulaSpec::Frank { theta } => {
            let t = p * (-theta).exp_m1() / (1.0 + (1.0 - p) * (-theta * u).exp_m1());
            Ok((-t.ln_1p() / theta).clamp(0.0, 1.0))
        }
        CopulaSpec::Gumbel { theta } if theta == 1.0 => Ok(p),
        _ => brent(|v| h_unchecked(spec, u, v) - p, 0.0, 1.0, 1e-15, 200),
    }
}

/// The `v` solving `∂C/∂u (u, v) = p`.
pub fn conditional_quantile(spec: &CopulaSpec, u: f64, p: f64) -> Result<f64> {
    spec.validate()?;
    check_open_unit("u", u)?;
    check_open_unit("p", p)?;
    cq_unchecked(spec, u, p)
}

/// Draws one pair on the normal scale.
fn draw<R: Rng + ?Sized>(spec: &CopulaSpec, rng: &mut R) -> Result<(f64, f64)> {
    match *spec {
        CopulaSpec::Gaussian { rho } => {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            Ok((a, rho * a + (1.0 - rho * rho).sqrt() * b))
        }
        CopulaSpec::StudentT { rho, nu } => {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let chi = ChiSquared::new(nu).map_err(|e| Error::param(e.to_string()))?;
            let w: f64 = chi.sample(rng);
            let s = (w / nu).sqrt();
            let t1 = a / s;
            let t2 = (rho * a + (1.0 - rho * rho).sqrt() * b) / s;
            Ok((t_to_normal(t1, nu), t_to_normal(t2, nu)))
        }
        _ => {
            let u: f64 = rng.sample(Open01);
            let p: f64 = rng.sample(Open01);
            let u = u.clamp(EDGE, 1.0 - EDGE);
            let v = cq_unchecked(spec, u, p)?;
            Ok((z(u), z(v)))
        }
    }
}

/// `Φ⁻¹(t_ν(t))` computed from the smaller tail so that both signs keep
/// full relative accuracy.
fn t_to_normal(t: f64, nu: f64) -> f64 {
    let tail = student_t_tail(t, nu).max(1e-300);
    let x = std_normal_quantile(tail.min(0.5)).unwrap_or(0.0);
    if t <= 0.0 {
        x
    } else {
        -x
    }
}

/// Draws `n` pairs from `spec` using the supplied generator.
pub fn sample_with<R: Rng + ?Sized>(
    spec: &CopulaSpec,
    n: usize,
    rng: &mut R,
) -> Result<BivariateSample> {
    spec.validate()?;
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b) = draw(spec, rng)?;
        x1.push(a);
        x2.push(b);
    }
    BivariateSample::new(x1, x2)
}

/// Draws `n` pairs from `spec`; identical seeds give bit-identical samples.
pub fn sample(spec: &CopulaSpec, n: usize, seed: u64) -> Result<BivariateSample> {
    let mut r = rng::stream(seed, "copula-sample", 0);
    sample_with(spec, n, &mut r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_specs() -> Vec<CopulaSpec> {
        let mut v: Vec<CopulaSpec> = table1_grid().into_iter().map(|(s, _)| s).collect();
        v.push(CopulaSpec::Gaussian { rho: 0.6 });
        v.push(CopulaSpec::Frank { theta: -4.0 });
        v
    }

    #[test]
    fn json_round_trip() {
        for s in all_specs() {
            let js = serde_json::to_string(&s).unwrap();
            let back: CopulaSpec = serde_json::from_str(&js).unwrap();
            assert_eq!(s, back);
        }
        let s: CopulaSpec = serde_json::from_str(r#"{"family":"gumbel","theta":1.5}"#).unwrap();
        assert_eq!(s, CopulaSpec::Gumbel { theta: 1.5 });
        assert!(serde_json::from_str::<CopulaSpec>(r#"{"family":"gumbel","rho":1.5}"#).is_err());
    }

    #[test]
    fn parameter_validation() {
        assert!(CopulaSpec::Gumbel { theta: 0.9 }.validate().is_err());
        assert!(CopulaSpec::Joe { theta: 0.5 }.validate().is_err());
        assert!(CopulaSpec::Frank { theta: 0.0 }.validate().is_err());
        assert!(CopulaSpec::Galambos { theta: 0.0 }.validate().is_err());
        assert!(CopulaSpec::HuslerReiss { theta: -1.0 }.validate().is_err());
        assert!(CopulaSpec::Gaussian { rho: 1.0 }.validate().is_err());
        assert!(CopulaSpec::StudentT { rho: 0.2, nu: 0.0 }.validate().is_err());
        assert!(sample(&CopulaSpec::Gumbel { theta: 0.5 }, 10, 1).is_err());
    }

    #[test]
    fn uniform_margins_at_boundary() {
        for s in all_specs() {
            for &u in &[0.05, 0.3, 0.7, 0.99] {
                assert!((cdf(&s, u, 1.0).unwrap() - u).abs() < 1e-15, "{s:?}");
                assert_eq!(cdf(&s, u, 0.0).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn conditional_quantile_round_trip() {
        for s in all_specs() {
            for &u in &[0.02, 0.3, 0.5, 0.81, 0.97] {
                for &p in &[0.01, 0.25, 0.5, 0.9, 0.995] {
                    let v = conditional_quantile(&s, u, p).unwrap();
                    let back = conditional_cdf(&s, u, v).unwrap();
                    assert!((back - p).abs() < 1e-10, "{s:?} u={u} p={p} v={v} back={back}");
                }
            }
        }
    }

    #[test]
    fn determinism_and_sample_size_guard() {
        let s = CopulaSpec::Joe { theta: 1.9 };
        assert_eq!(sample(&s, 50, 9).unwrap(), sample(&s, 50, 9).unwrap());
        assert_ne!(sample(&s, 50, 9).unwrap(), sample(&s, 50, 10).unwrap());
        assert!(sample(&s, 3, 9).is_err());
    }

    #[test]
    fn sample_rejects_bad_input() {
        assert!(BivariateSample::new(vec![1.0; 5], vec![1.0; 4]).is_err());
        assert!(BivariateSample::new(vec![1.0, f64::NAN, 0.0, 2.0], vec![1.0; 4]).is_err());
    }
}
