//! Ball sizes that make the ambiguity set cover the truth with probability
//! `1 - delta`, and the excess-risk bounds that follow from them.

use serde::{Deserialize, Serialize};

use crate::error::{DroError, Result};

/// Inputs shared by all calibration formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInput {
    pub n: usize,
    pub delta: f64,
    /// `sup_z sqrt(k(z, z))`.
    #[serde(default = "one")]
    pub k_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default = "one_usize")]
    pub d: usize,
    /// Wasserstein concentration constants; both default to 1.
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
    /// Distance between training and test distributions, when they differ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl CalibrationInput {
    pub fn new(n: usize, delta: f64) -> Self {
        Self { n, delta, k_bound: 1.0, m: None, d: 1, c1: 1.0, c2: 1.0, shift: None }
    }

    pub fn with_dim(mut self, d: usize) -> Self {
        self.d = d;
        self
    }

    pub fn with_support(mut self, m: usize) -> Self {
        self.m = Some(m);
        self
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = Some(shift);
        self
    }

    pub fn with_kernel_bound(mut self, k: f64) -> Self {
        self.k_bound = k;
        self
    }

    pub fn with_w1_constants(mut self, c1: f64, c2: f64) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DroError::Validation(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.n == 0 {
            return Err(DroError::Validation("n must be >= 1".into()));
        }
        if self.d == 0 {
            return Err(DroError::Validation("d must be >= 1".into()));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(DroError::Validation("c1 and c2 must be positive".into()));
        }
        if let Some(s) = self.shift {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(DroError::Validation(format!("shift must be finite and nonnegative, got {s}")));
            }
        }
        Ok(())
    }

    fn shift(&self) -> f64 {
        self.shift.unwrap_or(0.0)
    }
}

/// `K / sqrt(n) * (1 + sqrt(2 ln(1/delta)))`, plus the shift.
pub fn mmd_ball_size(input: &CalibrationInput) -> Result<f64> {
    input.validate()?;
    if !(input.k_bound > 0.0) {
        return Err(DroError::Validation("kernel bound K must be positive".into()));
    }
    let n = input.n as f64;
    Ok(input.k_bound / n.sqrt() * (1.0 + (2.0 * (1.0 / input.delta).ln()).sqrt()) + input.shift())
}

/// Smallest `n` for which the Wasserstein radius formula applies.
pub fn w1_min_sample(input: &CalibrationInput) -> Result<f64> {
    input.validate()?;
    Ok((input.c1 / input.delta).ln() / input.c2)
}

/// `(ln(c1/delta) / (c2 n))^(1/max(d, 2))`, plus the shift.
pub fn w1_ball_size(input: &CalibrationInput) -> Result<f64> {
    let required = w1_min_sample(input)?;
    let n = input.n as f64;
    if n < required {
        return Err(DroError::Calibration(format!(
            "the Wasserstein radius needs n >= ln(c1/delta)/c2 = {required:.6}, got n = {}",
            input.n
        )));
    }
    let log_term = (input.c1 / input.delta).ln();
    let exponent = 1.0 / input.d.max(2) as f64;
    Ok((log_term / (input.c2 * n)).max(0.0).powf(exponent) + input.shift())
}

/// `(m + 2 ln(4/delta) + 2 sqrt(m ln(4/delta))) / n`.
pub fn chi2_ball_size(input: &CalibrationInput) -> Result<f64> {
    input.validate()?;
    let m = support(input)? as f64;
    let l = (4.0 / input.delta).ln();
    Ok((m + 2.0 * l + 2.0 * (m * l).sqrt()) / input.n as f64)
}

/// `ceil(1e6 m^2 / (p_min^3 delta^2))`, saturating at `u64::MAX`.
pub fn chi2_min_sample(input: &CalibrationInput, p_min: f64) -> Result<u64> {
    input.validate()?;
    if !(p_min > 0.0 && p_min <= 1.0) {
        return Err(DroError::Validation(format!("p_min must lie in (0, 1], got {p_min}")));
    }
    let m = support(input)? as f64;
    let value = (1e6 * m * m / (p_min.powi(3) * input.delta * input.delta)).ceil();
    Ok(if value >= u64::MAX as f64 { u64::MAX } else { value as u64 })
}

fn support(input: &CalibrationInput) -> Result<usize> {
    match input.m {
        Some(m) if m >= 1 => Ok(m),
        Some(_) => Err(DroError::Validation("support size m must be >= 1".into())),
        None => Err(DroError::Validation("support size m is required for the chi-square radius".into())),
    }
}

/// `2 M * mmd_ball_size`, with `M >= ||l(f*, .)||_H`.
pub fn mmd_excess_bound(input: &CalibrationInput, m_norm: f64) -> Result<f64> {
    if !(m_norm >= 0.0) {
        return Err(DroError::Validation(format!("RKHS norm bound must be nonnegative, got {m_norm}")));
    }
    Ok(mmd_ball_size(input)? * 2.0 * m_norm)
}

/// `2 ||l(f*, .)||_Lip * w1_ball_size`.
pub fn w1_excess_bound(input: &CalibrationInput, lipschitz: f64) -> Result<f64> {
    if !(lipschitz >= 0.0) {
        return Err(DroError::Validation(format!("Lipschitz bound must be nonnegative, got {lipschitz}")));
    }
    Ok(w1_ball_size(input)? * 2.0 * lipschitz)
}

/// `||l(f*, .)||_inf * (sqrt(eta) + sqrt(2 ln(2/delta) / n))` with the chi-square radius `eta`.
pub fn chi2_excess_bound(input: &CalibrationInput, sup_norm: f64) -> Result<f64> {
    if !(sup_norm >= 0.0) {
        return Err(DroError::Validation(format!("sup-norm bound must be nonnegative, got {sup_norm}")));
    }
    let eta = chi2_ball_size(input)?;
    let n = input.n as f64;
    Ok(sup_norm * (eta.sqrt() + (2.0 * (2.0 / input.delta).ln() / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevBound {
    pub bound: f64,
    pub argmin_r: f64,
}

/// `n^2` log-spaced radii from 1, the default search grid.
pub fn default_r_grid(n: usize) -> Vec<f64> {
    let top = (n as f64).powi(2).max(1.0).ln();
    let steps = 2000;
    (0..=steps).map(|i| (top * i as f64 / steps as f64).exp()).collect()
}

/// `2 inf_R { C (ln R)^(-d/16) + (R / sqrt(n)) (1 + sqrt(2 ln(1/delta))) }` over `r_grid`.
///
/// At `R = 1` the first term is infinite unless `C = 0`.
pub fn sobolev_bound(c: f64, d: usize, n: usize, delta: f64, r_grid: &[f64]) -> Result<SobolevBound> {
    if r_grid.is_empty() {
        return Err(DroError::Validation("empty R grid".into()));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(DroError::Validation(format!("approximation constant C must be finite and nonnegative, got {c}")));
    }
    if !(delta > 0.0 && delta < 1.0) || n == 0 {
        return Err(DroError::Validation("need 0 < delta < 1 and n >= 1".into()));
    }
    let slope = (1.0 + (2.0 * (1.0 / delta).ln()).sqrt()) / (n as f64).sqrt();
    let mut best = SobolevBound { bound: f64::INFINITY, argmin_r: r_grid[0] };
    for &r in r_grid {
        if !(r >= 1.0) {
            return Err(DroError::Validation(format!("grid radii must be >= 1, got {r}")));
        }
        let approx = if c == 0.0 { 0.0 } else { c * r.ln().powf(-(d as f64) / 16.0) };
        let value = approx + r * slope;
        if value < best.bound {
            best = SobolevBound { bound: value, argmin_r: r };
        }
    }
    best.bound *= 2.0;
    Ok(best)
}

/// JSON echo of a calibration, including the convention constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub family: String,
    pub eta: f64,
    pub formula: String,
    pub input: CalibrationInput,
}

/// Radius for `family` in `{mmd, w1, chi2}` with the formula used, for reports.
pub fn calibrate(family: &str, input: &CalibrationInput) -> Result<CalibrationReport> {
    let (eta, formula) = match family {
        "mmd" => (mmd_ball_size(input)?, "K/sqrt(n) * (1 + sqrt(2 ln(1/delta))) + shift"),
        "w1" => (w1_ball_size(input)?, "(ln(c1/delta) / (c2 n))^(1/max(d,2)) + shift"),
        "chi2" => (chi2_ball_size(input)?, "(m + 2 ln(4/delta) + 2 sqrt(m ln(4/delta))) / n"),
        other => return Err(DroError::Validation(format!("unknown family {other:?}; expected mmd, w1 or chi2"))),
    };
    Ok(CalibrationReport { family: family.into(), eta, formula: formula.into(), input: input.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mmd_examples() {
        let base = CalibrationInput::new(100, 0.05);
        let eta = mmd_ball_size(&base).unwrap();
        assert_abs_diff_eq!(eta, (1.0 + (2.0 * 20f64.ln()).sqrt()) / 10.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eta, 0.34478, epsilon = 1e-5);
        let near_one = CalibrationInput::new(100, 1.0 - 1e-12);
        assert_abs_diff_eq!(mmd_ball_size(&near_one).unwrap(), 0.1, epsilon = 1e-6);
        let shifted = base.clone().with_shift(0.5);
        assert_abs_diff_eq!(mmd_ball_size(&shifted).unwrap(), eta + 0.5, epsilon = 1e-15);
        assert!(mmd_ball_size(&CalibrationInput::new(100, 1.0)).is_err());
        assert!(mmd_ball_size(&CalibrationInput::new(100, 0.0)).is_err());
    }

    #[test]
    fn w1_examples() {
        let delta = (-1.0f64).exp();
        let two = CalibrationInput::new(100, delta).with_dim(2);
        assert_abs_diff_eq!(w1_ball_size(&two).unwrap(), 0.1, epsilon = 1e-12);
        let five = CalibrationInput::new(100, delta).with_dim(5);
        assert_abs_diff_eq!(w1_ball_size(&five).unwrap(), 0.39811, epsilon = 1e-5);
        let small = CalibrationInput::new(2, 0.01).with_dim(2);
        let err = w1_ball_size(&small).unwrap_err();
        assert!(matches!(err, DroError::Calibration(ref s) if s.contains("4.6")));
    }

    #[test]
    fn chi2_examples() {
        let five = CalibrationInput::new(100, 0.2).with_support(5);
        let l = 20f64.ln();
        assert_abs_diff_eq!(chi2_ball_size(&five).unwrap(), (5.0 + 2.0 * l + 2.0 * (5.0 * l).sqrt()) / 100.0, epsilon = 1e-15);
        assert_abs_diff_eq!(chi2_ball_size(&five).unwrap(), 0.18732, epsilon = 1e-5);
        let one = CalibrationInput::new(1, 0.5).with_support(1);
        let l8 = 8f64.ln();
        assert_abs_diff_eq!(chi2_ball_size(&one).unwrap(), 1.0 + 2.0 * l8 + 2.0 * l8.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(chi2_ball_size(&one).unwrap(), 8.04294, epsilon = 1e-5);
        let quad = CalibrationInput::new(400, 0.2).with_support(5);
        assert_eq!(chi2_ball_size(&quad).unwrap() * 4.0, chi2_ball_size(&five).unwrap());
        assert!(chi2_ball_size(&CalibrationInput::new(10, 0.2)).is_err());
    }

    #[test]
    fn chi2_min_sample_examples() {
        let input = CalibrationInput::new(1, 0.5).with_support(2);
        assert_eq!(chi2_min_sample(&input, 0.5).unwrap(), 128_000_000);
        let doubled = CalibrationInput::new(1, 0.5).with_support(4);
        assert_eq!(chi2_min_sample(&doubled, 0.5).unwrap(), 4 * 128_000_000);
        assert!(chi2_min_sample(&input, 0.0).is_err());
    }

    #[test]
    fn mmd_excess_bound_examples() {
        let input = CalibrationInput::new(100, 0.05);
        assert_eq!(mmd_excess_bound(&input, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(mmd_excess_bound(&input, 1.0).unwrap(), 0.689549, epsilon = 1e-6);
        assert_eq!(mmd_excess_bound(&input, 1.0).unwrap(), mmd_ball_size(&input).unwrap() * 2.0);
        let half = CalibrationInput::new(100, 0.025);
        assert!(mmd_excess_bound(&half, 1.0).unwrap() > mmd_excess_bound(&input, 1.0).unwrap());
        assert!(mmd_excess_bound(&input, -1.0).is_err());
    }

    #[test]
    fn sobolev_examples() {
        let (n, delta) = (400usize, 0.1);
        let slope = (1.0 + (2.0 * (1.0f64 / delta).ln()).sqrt()) / (n as f64).sqrt();
        let zero = sobolev_bound(0.0, 3, n, delta, &default_r_grid(n)).unwrap();
        assert_abs_diff_eq!(zero.bound, 2.0 * slope, epsilon = 1e-15);
        assert_eq!(zero.argmin_r, 1.0);

        let (c, d) = (0.3, 4usize);
        let plug = (n as f64).sqrt() * (n as f64).ln().powf(-(d as f64) / 16.0);
        let grid = vec![1.0, plug, 50.0];
        let b = sobolev_bound(c, d, n, delta, &grid).unwrap();
        let at_plug = 2.0 * (c * plug.ln().powf(-(d as f64) / 16.0) + plug * slope);
        assert!(b.bound <= at_plug);

        let coarse = sobolev_bound(c, d, n, delta, &default_r_grid(n)[..50]).unwrap();
        let fine = sobolev_bound(c, d, n, delta, &default_r_grid(n)).unwrap();
        assert!(fine.bound <= coarse.bound);
        assert!(sobolev_bound(c, d, n, delta, &[]).is_err());
    }

    #[test]
    fn report_echoes_constants() {
        let input = CalibrationInput::new(100, 0.1).with_dim(3);
        let r = calibrate("w1", &input).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"c1\":1.0") && json.contains("\"c2\":1.0"));
        assert!(calibrate("tv", &input).is_err());
    }
}
