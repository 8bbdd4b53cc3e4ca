//! Linear stability of the recharge oscillator with the cubic damping
//! switched off.
//!
//! "Diverging" is the label for the growing linear regime. A planar linear
//! system cannot be chaotic, whatever the figure captions call it.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{fmt_f64, EnsoParams};
use crate::error::{Error, Result};
use crate::numerics::{eig2x2, Matrix};

/// Band on `Re(lambda)` treated as zero.
pub const CRITICAL_TOL: f64 = 1e-9;
/// Bisection stops once the bracket is narrower than this.
pub const BISECTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Dissipative,
    Critical,
    Diverging,
    NonOscillatory,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Dissipative => "dissipative",
            Regime::Critical => "critical",
            Regime::Diverging => "diverging",
            Regime::NonOscillatory => "non_oscillatory",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub mu: f64,
    pub eigenvalues: [Complex64; 2],
    pub regime: Regime,
    /// `2 pi / |Im lambda|` for a complex pair.
    pub period: Option<f64>,
}

impl StabilityResult {
    pub fn re_lambda(&self) -> f64 {
        self.eigenvalues[0].re
    }

    pub fn im_lambda(&self) -> f64 {
        self.eigenvalues[0].im.abs()
    }
}

/// Jacobian of the linearised model in state order `[T, h]`. `params.mu` is
/// ignored in favour of `mu`.
pub fn enso_jacobian(params: &EnsoParams, mu: f64) -> Matrix {
    let p = params;
    Matrix::from_rows(&[
        [-p.r, -mu * p.alpha * p.b0],
        [p.gamma, p.gamma * mu * p.b0 - p.c],
    ])
    .expect("2x2 literal")
}

pub fn classify(params: &EnsoParams, mu: f64) -> StabilityResult {
    let eigenvalues = eig2x2(&enso_jacobian(params, mu)).expect("2x2 jacobian");
    let (re, im) = (eigenvalues[0].re, eigenvalues[0].im.abs());
    let regime = if im == 0.0 {
        Regime::NonOscillatory
    } else if re < -CRITICAL_TOL {
        Regime::Dissipative
    } else if re > CRITICAL_TOL {
        Regime::Diverging
    } else {
        Regime::Critical
    };
    StabilityResult {
        mu,
        eigenvalues,
        regime,
        period: (im != 0.0).then(|| 2.0 * PI / im),
    }
}

/// Bisection over `[lo, hi]` for the zero of the mean real part of the
/// eigenvalues, `tr(J) / 2`. This is `Re(lambda)` whenever the pair is
/// complex, and it keeps tracking the Hopf condition when a real pair
/// appears inside the bracket.
pub fn find_critical_mu(params: &EnsoParams, lo: f64, hi: f64) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!("bad mu range [{lo}, {hi}]")));
    }
    let re = |mu: f64| {
        let j = enso_jacobian(params, mu);
        0.5 * (j[(0, 0)] + j[(1, 1)])
    };
    let (mut a, mut b) = (lo, hi);
    let fa = re(a);
    let fb = re(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoSignChange { lo, hi });
    }
    let mut fa_sign = fa.signum();
    while b - a >= BISECTION_TOL {
        let mid = 0.5 * (a + b);
        let fm = re(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == fa_sign {
            a = mid;
            fa_sign = fm.signum();
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

pub fn bifurcation_scan(params: &EnsoParams, mu_values: &[f64]) -> Result<Vec<StabilityResult>> {
    if mu_values.is_empty() {
        return Err(Error::InvalidArgument("empty mu scan".into()));
    }
    Ok(mu_values.iter().map(|&mu| classify(params, mu)).collect())
}

/// CSV `mu,re_lambda,im_lambda,regime,period`; the period is empty for a
/// real pair.
pub fn write_bifurcation_csv<W: Write>(results: &[StabilityResult], mut w: W) -> Result<()> {
    writeln!(w, "mu,re_lambda,im_lambda,regime,period")?;
    for r in results {
        let period = r.period.map(fmt_f64).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(r.mu),
            fmt_f64(r.re_lambda()),
            fmt_f64(r.im_lambda()),
            r.regime.as_str(),
            period
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_dopri5, SystemSpec};

    fn defaults() -> EnsoParams {
        EnsoParams::default()
    }

    #[test]
    fn jacobian_examples() {
        let j = enso_jacobian(&defaults(), 2.0 / 3.0);
        let tr = j[(0, 0)] + j[(1, 1)];
        let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
        assert!(tr.abs() < 1e-15);
        assert!((det - 0.09375).abs() < 1e-15);
        assert_eq!(enso_jacobian(&defaults(), 0.0).data(), &[-0.25, 0.0, 0.75, -1.0]);
        for mu in [0.1, 0.9, 3.0] {
            assert_eq!(enso_jacobian(&defaults(), mu)[(1, 0)], 0.75);
        }
    }

    #[test]
    fn regimes() {
        let r = classify(&defaults(), 0.5);
        assert_eq!(r.regime, Regime::Dissipative);
        assert!((r.re_lambda() + 0.15625).abs() < 1e-14);

        let r = classify(&defaults(), 2.0 / 3.0);
        assert_eq!(r.regime, Regime::Critical);
        assert!((r.im_lambda() - 0.09375f64.sqrt()).abs() < 1e-14);
        assert!((r.period.unwrap() - 20.52).abs() < 0.01);

        let r = classify(&defaults(), 0.8);
        assert_eq!(r.regime, Regime::Diverging);
        assert!((r.re_lambda() - 0.125).abs() < 1e-14);

        let r = classify(&defaults(), 0.0);
        assert_eq!(r.regime, Regime::NonOscillatory);
        assert_eq!(r.period, None);
    }

    #[test]
    fn critical_mu() {
        let mu = find_critical_mu(&defaults(), 0.3, 0.9).unwrap();
        assert!((mu - 2.0 / 3.0).abs() < 1e-6, "{mu}");
        let unit = EnsoParams {
            r: 1.0,
            c: 1.0,
            gamma: 1.0,
            b0: 1.0,
            ..defaults()
        };
        assert!((find_critical_mu(&unit, 0.5, 3.0).unwrap() - 2.0).abs() < 1e-6);
        for (r, c, gamma, b0) in [(0.1, 2.0, 0.3, 4.0), (1.0, 0.2, 2.0, 0.5), (0.7, 0.7, 1.5, 1.5)] {
            let p = EnsoParams { r, c, gamma, b0, ..defaults() };
            let exact = (r + c) / (gamma * b0);
            let mu = find_critical_mu(&p, 0.0, 4.0 * exact).unwrap();
            assert!((mu - exact).abs() < 1e-6);
        }
        assert!(matches!(
            find_critical_mu(&defaults(), 0.3, 0.6),
            Err(Error::NoSignChange { .. })
        ));
    }

    #[test]
    fn scan_and_csv() {
        let res = bifurcation_scan(&defaults(), &[0.5, 2.0 / 3.0, 0.8]).unwrap();
        let regimes: Vec<_> = res.iter().map(|r| r.regime).collect();
        assert_eq!(regimes, [Regime::Dissipative, Regime::Critical, Regime::Diverging]);
        let mut buf = Vec::new();
        write_bifurcation_csv(&res, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "mu,re_lambda,im_lambda,regime,period");
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first[0].parse::<f64>().unwrap(), 0.5);
        assert_eq!(first[1].parse::<f64>().unwrap(), -0.15625);
        assert!(lines[2].contains(",critical,"));
        assert!(bifurcation_scan(&defaults(), &[]).is_err());

        let real = bifurcation_scan(&defaults(), &[0.0]).unwrap();
        let mut buf = Vec::new();
        write_bifurcation_csv(&real, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().trim_end().ends_with("non_oscillatory,"));
    }

    #[test]
    fn characteristic_consistency() {
        for i in 0..=100 {
            let mu = i as f64 * 0.02;
            let j = enso_jacobian(&defaults(), mu);
            let [l1, l2] = classify(&defaults(), mu).eigenvalues;
            let tr = j[(0, 0)] + j[(1, 1)];
            let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
            assert!(((l1 + l2).re - tr).abs() < 1e-12);
            assert!(((l1 * l2).re - det).abs() < 1e-12);
            assert!((l1 * l2).im.abs() < 1e-12);
        }
    }

    // Peak |T| over the last simulated period relative to the first.
    fn amplitude_ratio(mu: f64) -> f64 {
        let p = EnsoParams { mu, ..defaults() };
        let period = classify(&p, mu).period.unwrap();
        let dt = 0.01;
        let tr = integrate_dopri5(&SystemSpec::Enso(p), &[1.0, 0.0], 0.0, 3.0 * period, dt, vec![]).unwrap();
        let n = tr.len();
        let per = (period / dt) as usize;
        let peak = |a: usize, b: usize| (a..b).map(|i| tr.state(i)[0].abs()).fold(0.0, f64::max);
        peak(n - per, n) / peak(0, per)
    }

    #[test]
    fn regime_matches_trajectory_growth() {
        assert!(amplitude_ratio(0.5) < 1.0);
        assert!(amplitude_ratio(0.8) > 1.0);
        assert!((amplitude_ratio(2.0 / 3.0) - 1.0).abs() < 1e-3);
    }
}
