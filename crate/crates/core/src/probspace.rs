//! The aleatory random vector `X`: independent marginal laws, densities,
//! sampling and the isoprobabilistic transform `T` to standard normal space.
//!
//! Components are independent by construction; dependence structures (Nataf /
//! copula transforms) are out of scope. All failure-probability machinery in
//! the other modules works in the transformed `u`-space, so the only contract
//! that matters here is that `T` and its inverse are an accurate pair.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Euler-Mascheroni constant, for the moment parameterization of the Gumbel law.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Standard normal density.
pub fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u - LN_SQRT_2PI).exp()
}

/// Standard normal log-density.
pub fn std_normal_log_pdf(u: f64) -> f64 {
    -0.5 * u * u - LN_SQRT_2PI
}

/// Standard normal CDF, accurate in both tails.
pub fn std_normal_cdf(u: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-u / std::f64::consts::SQRT_2)
}

/// Standard normal survival function `P(U > u)`.
pub fn std_normal_sf(u: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(u / std::f64::consts::SQRT_2)
}

/// Standard normal quantile with one Newton refinement step.
///
/// The refinement works on the tail-appropriate residual so that relative
/// accuracy is preserved far into the tails.
pub fn std_normal_quantile(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability out of range: {p}");
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let mut u = if p <= 0.5 {
        -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
    } else {
        std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * (1.0 - p))
    };
    let pdf = std_normal_pdf(u);
    if pdf > 0.0 {
        let resid = if p <= 0.5 {
            std_normal_cdf(u) - p
        } else {
            (1.0 - p) - std_normal_sf(u)
        };
        u -= resid / pdf;
    }
    u
}

/// A univariate marginal law, parameterized by its mean and standard deviation.
///
/// This is the shape consumed from run-config files, e.g.
/// `{"kind":"normal","mean":545.0,"sd":32.7}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    Gumbel { mean: f64, sd: f64 },
    LogNormal { mean: f64, sd: f64 },
}

impl Marginal {
    pub fn normal(mean: f64, sd: f64) -> Self {
        Marginal::Normal { mean, sd }
    }

    pub fn gumbel(mean: f64, sd: f64) -> Self {
        Marginal::Gumbel { mean, sd }
    }

    pub fn lognormal(mean: f64, sd: f64) -> Self {
        Marginal::LogNormal { mean, sd }
    }

    fn validate(&self) -> Result<()> {
        let (mean, sd) = match *self {
            Marginal::Normal { mean, sd }
            | Marginal::Gumbel { mean, sd }
            | Marginal::LogNormal { mean, sd } => (mean, sd),
        };
        if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
            return Err(Error::Parameter(format!(
                "marginal requires finite mean and sd > 0, got mean={mean}, sd={sd}"
            )));
        }
        if let Marginal::LogNormal { mean, .. } = *self {
            if mean <= 0.0 {
                return Err(Error::Parameter(
                    "lognormal marginal requires mean > 0".into(),
                ));
            }
        }
        Ok(())
    }

    /// Gumbel (max) location/scale implied by the mean/sd parameterization.
    fn gumbel_params(mean: f64, sd: f64) -> (f64, f64) {
        let scale = sd * 6.0_f64.sqrt() / std::f64::consts::PI;
        (mean - EULER_GAMMA * scale, scale)
    }

    fn lognormal_params(mean: f64, sd: f64) -> (f64, f64) {
        let sigma2 = (1.0 + (sd / mean).powi(2)).ln();
        (mean.ln() - 0.5 * sigma2, sigma2.sqrt())
    }

    fn in_support(&self, x: f64) -> bool {
        x.is_finite()
            && match *self {
                Marginal::Normal { .. } | Marginal::Gumbel { .. } => true,
                Marginal::LogNormal { .. } => x > 0.0,
            }
    }

    /// `u = Phi^{-1}(F(x))`, evaluated through the better-conditioned tail.
    fn to_u(&self, x: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => (x - mean) / sd,
            Marginal::Gumbel { mean, sd } => {
                let (loc, scale) = Self::gumbel_params(mean, sd);
                let z = (x - loc) / scale;
                let cdf = (-(-z).exp()).exp();
                if cdf <= 0.5 {
                    std_normal_quantile(cdf)
                } else {
                    // survival 1 - exp(-exp(-z)) without cancellation
                    let sf = -(-(-z).exp()).exp_m1();
                    -std_normal_quantile(sf)
                }
            }
            Marginal::LogNormal { mean, sd } => {
                let (mu, sigma) = Self::lognormal_params(mean, sd);
                (x.ln() - mu) / sigma
            }
        }
    }

    /// `x = F^{-1}(Phi(u))`.
    fn from_u(&self, u: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * u,
            Marginal::Gumbel { mean, sd } => {
                let (loc, scale) = Self::gumbel_params(mean, sd);
                // -ln F^{-1} argument: -ln(Phi(u)) through whichever tail is exact
                let neg_ln_p = if u <= 0.0 {
                    -std_normal_cdf(u).ln()
                } else {
                    -(-std_normal_sf(u)).ln_1p()
                };
                loc - scale * neg_ln_p.ln()
            }
            Marginal::LogNormal { mean, sd } => {
                let (mu, sigma) = Self::lognormal_params(mean, sd);
                (mu + sigma * u).exp()
            }
        }
    }

    /// Log density at `x`; `-inf` outside the support.
    pub fn log_pdf(&self, x: f64) -> f64 {
        if !self.in_support(x) {
            return f64::NEG_INFINITY;
        }
        match *self {
            Marginal::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - LN_SQRT_2PI - sd.ln()
            }
            Marginal::Gumbel { mean, sd } => {
                let (loc, scale) = Self::gumbel_params(mean, sd);
                let z = (x - loc) / scale;
                -z - (-z).exp() - scale.ln()
            }
            Marginal::LogNormal { mean, sd } => {
                let (mu, sigma) = Self::lognormal_params(mean, sd);
                let z = (x.ln() - mu) / sigma;
                -0.5 * z * z - LN_SQRT_2PI - sigma.ln() - x.ln()
            }
        }
    }

    /// CDF at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        if !x.is_finite() {
            return if x > 0.0 { 1.0 } else { 0.0 };
        }
        match *self {
            Marginal::Normal { mean, sd } => std_normal_cdf((x - mean) / sd),
            Marginal::Gumbel { mean, sd } => {
                let (loc, scale) = Self::gumbel_params(mean, sd);
                (-(-(x - loc) / scale).exp()).exp()
            }
            Marginal::LogNormal { .. } => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf(self.to_u(x))
                }
            }
        }
    }
}

/// The aleatory input vector: a product of independent marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomVector {
    marginals: Vec<Marginal>,
}

impl RandomVector {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::Parameter("random vector needs at least one marginal".into()));
        }
        for m in &marginals {
            m.validate()?;
        }
        Ok(RandomVector { marginals })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    /// Isoprobabilistic transform `u_i = Phi^{-1}(F_i(x_i))`.
    pub fn to_standard_normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        x.iter()
            .zip(&self.marginals)
            .enumerate()
            .map(|(i, (&xi, m))| {
                if !m.in_support(xi) {
                    return Err(Error::Domain {
                        component: i,
                        message: format!("x = {xi} outside support of {m:?}"),
                    });
                }
                Ok(m.to_u(xi))
            })
            .collect()
    }

    /// Inverse transform `x_i = F_i^{-1}(Phi(u_i))`.
    pub fn from_standard_normal(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.dim(), "dimension mismatch");
        u.iter()
            .zip(&self.marginals)
            .map(|(&ui, m)| m.from_u(ui))
            .collect()
    }

    /// Joint log density `log p_X(x)`; `-inf` outside the support.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        x.iter()
            .zip(&self.marginals)
            .map(|(&xi, m)| m.log_pdf(xi))
            .sum()
    }

    /// Draws `n` i.i.d. samples, one row per sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.from_standard_normal(&u)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::Parameter(format!(
                "expected {} components, got {got}",
                self.dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gumbel_load() -> Marginal {
        Marginal::gumbel(15.75, 0.4725)
    }

    /// Independent quantile oracle: bracketed bisection on the CDF.
    fn bisect_quantile(m: &Marginal, p: f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(m.cdf(lo) < p && m.cdf(hi) > p);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if m.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn standard_normal_is_identity() {
        let rv = RandomVector::new(vec![Marginal::normal(0.0, 1.0)]).unwrap();
        let u = rv.to_standard_normal(&[0.7]).unwrap();
        assert_relative_eq!(u[0], 0.7, max_relative = 1e-15);
        let x = rv.from_standard_normal(&[-2.3]);
        assert_relative_eq!(x[0], -2.3, max_relative = 1e-15);
    }

    #[test]
    fn normal_median_maps_to_zero() {
        let rv = RandomVector::new(vec![Marginal::normal(-0.5, 0.2)]).unwrap();
        let u = rv.to_standard_normal(&[-0.5]).unwrap();
        assert!(u[0].abs() < 1e-15);
    }

    #[test]
    fn gumbel_median_maps_to_zero() {
        let m = gumbel_load();
        // oracle: solve F(x) = 0.5 by bisection from the law's moments
        let median = bisect_quantile(&m, 0.5, 10.0, 25.0);
        let rv = RandomVector::new(vec![m]).unwrap();
        let u = rv.to_standard_normal(&[median]).unwrap();
        assert!(u[0].abs() < 1e-9, "u = {}", u[0]);
    }

    #[test]
    fn normal_quantile_identity() {
        let rv = RandomVector::new(vec![Marginal::normal(545.0, 32.7)]).unwrap();
        let x = rv.from_standard_normal(&[1.0]);
        assert_relative_eq!(x[0], 577.7, max_relative = 1e-12);
    }

    #[test]
    fn round_trip_on_random_points() {
        let rv = RandomVector::new(vec![
            Marginal::normal(-0.5, 0.2),
            gumbel_load(),
            Marginal::lognormal(3.0, 0.9),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let u: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
            let x = rv.from_standard_normal(&u);
            let u2 = rv.to_standard_normal(&x).unwrap();
            let x2 = rv.from_standard_normal(&u2);
            for i in 0..3 {
                let rel = (x2[i] - x[i]).abs() / (1.0 + x[i].abs());
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-8, "worst relative round-trip error {worst}");
    }

    #[test]
    fn log_density_values() {
        let rv1 = RandomVector::new(vec![Marginal::normal(0.0, 1.0)]).unwrap();
        assert_relative_eq!(rv1.log_density(&[0.0]), -LN_SQRT_2PI, max_relative = 1e-14);
        let rv2 = RandomVector::new(vec![
            Marginal::normal(0.0, 1.0),
            Marginal::normal(0.0, 1.0),
        ])
        .unwrap();
        assert_relative_eq!(
            rv2.log_density(&[0.0, 0.0]),
            -2.0 * LN_SQRT_2PI,
            max_relative = 1e-14
        );
    }

    #[test]
    fn outside_support_is_neg_infinity_not_error() {
        let rv = RandomVector::new(vec![Marginal::lognormal(1.0, 0.5)]).unwrap();
        assert_eq!(rv.log_density(&[-1.0]), f64::NEG_INFINITY);
        // but the transform reports which component failed
        let err = rv.to_standard_normal(&[-1.0]).unwrap_err();
        match err {
            Error::Domain { component, .. } => assert_eq!(component, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn gumbel_sample_mean_matches_moments() {
        let m = gumbel_load();
        let rv = RandomVector::new(vec![m]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000usize;
        let mean: f64 = rv.sample(&mut rng, n).iter().map(|x| x[0]).sum::<f64>() / n as f64;
        let se = 0.4725 / (n as f64).sqrt();
        assert!(
            (mean - 15.75).abs() < 3.0 * se,
            "mean {mean} vs 15.75 +- {}",
            3.0 * se
        );
    }

    #[test]
    fn transform_of_samples_is_standard_normal_by_ks() {
        let rv = RandomVector::new(vec![
            Marginal::normal(20.0, 0.6),
            gumbel_load(),
            Marginal::lognormal(5.0, 1.0),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000usize;
        let samples = rv.sample(&mut rng, n);
        for c in 0..rv.dim() {
            let mut us: Vec<f64> = samples
                .iter()
                .map(|x| rv.to_standard_normal(x).unwrap()[c])
                .collect();
            us.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut d: f64 = 0.0;
            for (i, &u) in us.iter().enumerate() {
                let f = std_normal_cdf(u);
                d = d.max((f - i as f64 / n as f64).abs());
                d = d.max(((i + 1) as f64 / n as f64 - f).abs());
            }
            // 1% critical value of the Kolmogorov statistic for large n
            let crit = 1.62762 / (n as f64).sqrt();
            assert!(d < crit, "component {c}: KS {d} >= {crit}");
        }
    }

    #[test]
    fn density_matches_cdf_derivative() {
        let cases: [(Marginal, Vec<f64>); 3] = [
            (Marginal::normal(-0.5, 0.2), vec![-0.7, -0.5, -0.1]),
            (gumbel_load(), vec![15.0, 15.75, 17.0]),
            (Marginal::lognormal(3.0, 0.9), vec![2.0, 3.0, 4.5]),
        ];
        for (m, points) in cases {
            for x in points {
                let h = 1e-5 * (1.0 + x.abs());
                let deriv = (m.cdf(x + h) - m.cdf(x - h)) / (2.0 * h);
                let pdf = m.log_pdf(x).exp();
                assert_relative_eq!(deriv, pdf, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn quantile_cdf_round_trip_precision() {
        for m in [Marginal::normal(1.0, 2.0), gumbel_load(), Marginal::lognormal(2.0, 0.4)] {
            for u in [-5.0, -2.0, -0.3, 0.0, 0.7, 2.5, 5.0] {
                let x = m.from_u(u);
                let p = m.cdf(x);
                let x2 = bisect_quantile(
                    &m,
                    p,
                    x - 2.0 * (1.0 + x.abs()),
                    x + 2.0 * (1.0 + x.abs()),
                );
                assert_relative_eq!(x2, x, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(RandomVector::new(vec![Marginal::normal(0.0, 0.0)]).is_err());
        assert!(RandomVector::new(vec![Marginal::normal(0.0, -1.0)]).is_err());
        assert!(RandomVector::new(vec![Marginal::lognormal(-2.0, 1.0)]).is_err());
        assert!(RandomVector::new(vec![]).is_err());
    }

    #[test]
    fn marginal_config_round_trip() {
        let m: Marginal = serde_json::from_str(r#"{"kind":"gumbel","mean":15.75,"sd":0.4725}"#).unwrap();
        assert_eq!(m, gumbel_load());
        let s = serde_json::to_string(&Marginal::normal(1.0, 0.5)).unwrap();
        assert!(s.contains(r#""kind":"normal""#), "{s}");
    }
}
