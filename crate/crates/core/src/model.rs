//! Model definitions: magnitude partition, parameters, conditional
//! intensities and branching ratios.
//!
//! Two marked temporal point-process models for earthquake catalogues:
//!
//! * **Multidimensional fractional Hawkes process (MDFHP).** The magnitude
//!   range `[m0, 10]` is split into disjoint intervals; events in interval
//!   `i` form subprocess `i` and the subprocesses mutually excite through
//!   Mittag-Leffler kernels:
//!
//!   `lambda_i(t) = lambda0_i + sum_j alpha_ij sum_{l: t_l < t, M_l in I_j}
//!                  e^{gamma_ij (M_l - m0)} c_ij f_{beta_ij}(c_ij (t - t_l))`
//!
//!   where `f_b(x) = x^(b-1) E_{b,b}(-x^b)` is the Mittag-Leffler density.
//!   Marks within subprocess `i` follow a truncated exponential with slope
//!   `b_i` on the interval. **Subprocess 0 is the highest-magnitude
//!   interval** throughout this crate.
//!
//! * **ETAS** (epidemic-type aftershock sequence) as a reference model:
//!   `lambda(t) = mu + sum_l A e^{delta (M_l - m0)} (1 + (t - t_l)/c)^(-p)`
//!   with i.i.d. truncated-exponential marks on `[m0, 10]`.
//!
//! Intensity evaluation here is the direct O(history) form used by
//! simulation, diagnostics and tests; the fitting code has its own blocked
//! evaluation path over precomputed pair tables.

use serde::{Deserialize, Serialize};

use crate::mlf;

/// Upper magnitude bound of every catalogue: partitions span `[m0, 10]`.
pub const MAG_CEILING: f64 = 10.0;

/// Errors from model construction / validation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid magnitude partition: {0}")]
    Partition(String),
    #[error("invalid parameters: {0}")]
    Params(String),
}

/// A timestamped, magnitude-marked event. Times are in days from the
/// catalogue origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Occurrence time in days.
    pub t: f64,
    /// Magnitude mark.
    pub mag: f64,
}

/// Partition of the magnitude range `[m0, 10]` into `nb` disjoint intervals.
///
/// Boundaries are stored ascending as `[m0, cut_1, ..., cut_{nb-1}, 10]`, but
/// subprocess indices run from the top: **subprocess 0 is the highest
/// interval** `[cut_{nb-1}, 10]`, subprocess `nb-1` the lowest `[m0, cut_1)`.
/// Every interval is half-open `[lo, hi)` except the top one, which includes
/// the ceiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudePartition {
    boundaries: Vec<f64>,
}

impl MagnitudePartition {
    /// Build a partition from the catalogue floor `m0` and ascending interior
    /// cut points (may be empty for a single-subprocess model).
    pub fn new(m0: f64, cuts: &[f64]) -> Result<Self, ModelError> {
        let mut boundaries = Vec::with_capacity(cuts.len() + 2);
        boundaries.push(m0);
        boundaries.extend_from_slice(cuts);
        boundaries.push(MAG_CEILING);
        if !boundaries.iter().all(|b| b.is_finite()) {
            return Err(ModelError::Partition("non-finite boundary".into()));
        }
        if !boundaries.windows(2).all(|w| w[0] < w[1]) {
            return Err(ModelError::Partition(format!(
                "boundaries must be strictly ascending within [{m0}, {MAG_CEILING}]: {boundaries:?}"
            )));
        }
        Ok(MagnitudePartition { boundaries })
    }

    /// Number of subprocesses.
    pub fn len(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// True when the partition is a single interval.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Catalogue magnitude floor.
    pub fn m0(&self) -> f64 {
        self.boundaries[0]
    }

    /// Ascending boundaries `[m0, cuts.., 10]`.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Subprocess index for a magnitude, or `None` outside `[m0, 10]`.
    /// Index 0 is the highest interval.
    pub fn subprocess_of(&self, mag: f64) -> Option<usize> {
        let nb = self.len();
        if !(mag >= self.boundaries[0] && mag <= MAG_CEILING) {
            return None;
        }
        // Largest k with boundaries[k] <= mag; the ceiling maps into the top
        // interval.
        let k = self
            .boundaries
            .partition_point(|b| *b <= mag)
            .saturating_sub(1)
            .min(nb - 1);
        Some(nb - 1 - k)
    }

    /// Interval `[lo, hi)` of subprocess `i` (`hi = 10` for `i = 0`).
    pub fn interval(&self, i: usize) -> (f64, f64) {
        let nb = self.len();
        (self.boundaries[nb - 1 - i], self.boundaries[nb - i])
    }

    /// Width of subprocess `i`'s interval.
    pub fn width(&self, i: usize) -> f64 {
        let (lo, hi) = self.interval(i);
        hi - lo
    }
}

/// Parameters of the multidimensional fractional Hawkes process for `nb`
/// subprocesses. Matrix entries are row-major with `[i, j]` the effect **of
/// subprocess `j` on subprocess `i`**.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdfhpParams {
    /// Background rates, one per subprocess (events/day).
    pub lambda0: Vec<f64>,
    /// Branching weights `alpha[i*nb + j]`.
    pub alpha: Vec<f64>,
    /// Magnitude-boost exponents `gamma[i*nb + j]`.
    pub gamma: Vec<f64>,
    /// Kernel shapes `beta[i*nb + j]`, each in `(0, 1]`.
    pub beta: Vec<f64>,
    /// Kernel time scales `c[i*nb + j]` (1/days).
    pub c: Vec<f64>,
    /// Mark-density slopes, one per subprocess.
    pub b_mag: Vec<f64>,
}

impl MdfhpParams {
    /// Number of subprocesses implied by the vector lengths.
    pub fn n_subprocesses(&self) -> usize {
        self.lambda0.len()
    }

    /// Total free parameter count: `2 nb + 4 nb^2` minus nothing (all entries
    /// are estimated). Used for information criteria.
    pub fn n_parameters(&self) -> usize {
        let nb = self.n_subprocesses();
        2 * nb + 4 * nb * nb
    }

    /// Check shapes and positivity/range constraints.
    pub fn validate(&self) -> Result<(), ModelError> {
        let nb = self.n_subprocesses();
        let nn = nb * nb;
        if self.alpha.len() != nn
            || self.gamma.len() != nn
            || self.beta.len() != nn
            || self.c.len() != nn
            || self.b_mag.len() != nb
        {
            return Err(ModelError::Params(format!(
                "shape mismatch for {nb} subprocesses"
            )));
        }
        let pos = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !pos(&self.lambda0) || !pos(&self.c) || !pos(&self.b_mag) {
            return Err(ModelError::Params(
                "lambda0, c, b_mag must be positive and finite".into(),
            ));
        }
        if !self
            .alpha
            .iter()
            .chain(self.gamma.iter())
            .all(|x| x.is_finite() && *x >= 0.0)
        {
            return Err(ModelError::Params(
                "alpha, gamma must be non-negative and finite".into(),
            ));
        }
        if !self.beta.iter().all(|b| *b > 0.0 && *b <= 1.0) {
            return Err(ModelError::Params("beta must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// ETAS parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtasParams {
    /// Background rate (events/day).
    pub mu: f64,
    /// Omori amplitude `A`.
    pub a: f64,
    /// Magnitude-boost exponent.
    pub delta: f64,
    /// Omori time scale (days).
    pub c: f64,
    /// Omori decay exponent.
    pub p: f64,
    /// Mark-density slope.
    pub b_mag: f64,
}

impl EtasParams {
    /// Free parameter count (for information criteria).
    pub fn n_parameters(&self) -> usize {
        6
    }

    /// Check positivity constraints (`p` may be any positive value; `p < 1`
    /// gives a non-integrable kernel, which is legal on a finite window).
    pub fn validate(&self) -> Result<(), ModelError> {
        let strictly_pos = [self.mu, self.c, self.p, self.b_mag];
        let non_neg = [self.a, self.delta];
        if !strictly_pos.iter().all(|x| x.is_finite() && *x > 0.0)
            || !non_neg.iter().all(|x| x.is_finite() && *x >= 0.0)
        {
            return Err(ModelError::Params(
                "mu, c, p, b_mag must be positive; A, delta non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Multidimensional fractional Hawkes model: partition + parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdfhpModel {
    pub partition: MagnitudePartition,
    pub params: MdfhpParams,
}

impl MdfhpModel {
    pub fn new(partition: MagnitudePartition, params: MdfhpParams) -> Result<Self, ModelError> {
        params.validate()?;
        if params.n_subprocesses() != partition.len() {
            return Err(ModelError::Params(format!(
                "parameters sized for {} subprocesses, partition has {}",
                params.n_subprocesses(),
                partition.len()
            )));
        }
        Ok(MdfhpModel { partition, params })
    }

    /// Conditional intensity of subprocess `i` at time `t` given the events
    /// strictly before `t` (direct evaluation over the whole history).
    pub fn intensity(&self, history: &[Event], t: f64, i: usize) -> f64 {
        let nb = self.partition.len();
        let m0 = self.partition.m0();
        let mut lam = self.params.lambda0[i];
        for e in history {
            if e.t >= t {
                break; // history is time-ordered
            }
            let Some(j) = self.partition.subprocess_of(e.mag) else {
                continue;
            };
            let k = i * nb + j;
            let alpha = self.params.alpha[k];
            if alpha == 0.0 {
                continue;
            }
            let boost = (self.params.gamma[k] * (e.mag - m0)).exp();
            let dens = mlf::ml_density(self.params.beta[k], self.params.c[k], t - e.t)
                .expect("validated kernel parameters");
            lam += alpha * boost * dens;
        }
        lam
    }

    /// Sum of all subprocess intensities at `t`.
    pub fn total_intensity(&self, history: &[Event], t: f64) -> f64 {
        (0..self.partition.len())
            .map(|i| self.intensity(history, t, i))
            .sum()
    }

    /// Mark density of subprocess `i`: truncated exponential with slope
    /// `b_mag[i]` on the subprocess interval.
    pub fn mark_density(&self, i: usize, mag: f64) -> f64 {
        let (lo, hi) = self.partition.interval(i);
        if !(mag >= lo && mag <= hi) {
            return 0.0;
        }
        let b = self.params.b_mag[i];
        let width = hi - lo;
        b * (-b * (mag - lo)).exp() / -(-b * width).exp_m1()
    }

    /// Inverse mark CDF of subprocess `i` for `u` in `[0, 1)` (used by
    /// simulation).
    pub fn mark_quantile(&self, i: usize, u: f64) -> f64 {
        let (lo, hi) = self.partition.interval(i);
        let b = self.params.b_mag[i];
        let span = -(-b * (hi - lo)).exp_m1(); // 1 - e^(-b width)
        lo - (1.0 - u * span).ln() / b
    }

    /// Expected direct offspring matrix: entry `[i, j]` (row-major) is the
    /// mean number of subprocess-`i` events directly triggered by one
    /// subprocess-`j` event, averaging the magnitude boost over subprocess
    /// `j`'s mark density:
    ///
    /// `n_ij = alpha_ij (e^{(gamma_ij - b_j) w_j} - 1)
    ///         / ((gamma_ij - b_j) (1 - e^{-b_j w_j}))`
    ///
    /// with `w_j` the interval width, magnitudes measured from the interval's
    /// own lower edge, and the limit `alpha w / (1 - e^{-b w})` at
    /// `gamma = b`. The kernel integrates to 1 over infinite time, so no time
    /// factor appears.
    pub fn expected_offspring(&self) -> Vec<f64> {
        let nb = self.partition.len();
        let mut n = vec![0.0; nb * nb];
        for i in 0..nb {
            for j in 0..nb {
                let k = i * nb + j;
                let alpha = self.params.alpha[k];
                let gamma = self.params.gamma[k];
                let b = self.params.b_mag[j];
                let w = self.partition.width(j);
                let denom = -(-b * w).exp_m1(); // 1 - e^(-b w)
                let d = gamma - b;
                let ratio = if d.abs() * w < 1e-9 {
                    w // limit of (e^(d w) - 1) / d as d -> 0
                } else {
                    ((d * w).exp() - 1.0) / d
                };
                n[k] = alpha * ratio / denom;
            }
        }
        n
    }
}

/// ETAS model over `[m0, 10]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtasModel {
    pub m0: f64,
    pub params: EtasParams,
}

impl EtasModel {
    pub fn new(m0: f64, params: EtasParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(EtasModel { m0, params })
    }

    /// Conditional intensity at `t` given events strictly before `t`.
    pub fn intensity(&self, history: &[Event], t: f64) -> f64 {
        let p = &self.params;
        let mut lam = p.mu;
        for e in history {
            if e.t >= t {
                break;
            }
            lam += p.a * (p.delta * (e.mag - self.m0)).exp()
                * (1.0 + (t - e.t) / p.c).powf(-p.p);
        }
        lam
    }

    /// Integral of one event's kernel over `(0, s]`:
    /// `A c [(1 + s/c)^(1-p) - 1] / (1 - p)` (log form at `p = 1`).
    pub fn kernel_mass(&self, s: f64) -> f64 {
        let p = &self.params;
        if s <= 0.0 {
            return 0.0;
        }
        if (p.p - 1.0).abs() < 1e-12 {
            p.a * p.c * (1.0 + s / p.c).ln()
        } else {
            p.a * p.c * ((1.0 + s / p.c).powf(1.0 - p.p) - 1.0) / (1.0 - p.p)
        }
    }

    /// Truncated-exponential mark density on `[m0, 10]`.
    pub fn mark_density(&self, mag: f64) -> f64 {
        if !(mag >= self.m0 && mag <= MAG_CEILING) {
            return 0.0;
        }
        let b = self.params.b_mag;
        b * (-b * (mag - self.m0)).exp() / -(-b * (MAG_CEILING - self.m0)).exp_m1()
    }

    /// Inverse mark CDF for `u` in `[0, 1)`.
    pub fn mark_quantile(&self, u: f64) -> f64 {
        let b = self.params.b_mag;
        let span = -(-b * (MAG_CEILING - self.m0)).exp_m1();
        self.m0 - (1.0 - u * span).ln() / b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_band() -> MagnitudePartition {
        MagnitudePartition::new(4.0, &[4.35]).unwrap()
    }

    fn small_model() -> MdfhpModel {
        MdfhpModel::new(
            two_band(),
            MdfhpParams {
                lambda0: vec![0.05, 0.08],
                alpha: vec![0.04, 0.04, 0.12, 0.8],
                gamma: vec![1.3, 3.6, 1.2, 0.4],
                beta: vec![0.7, 0.67, 0.69, 0.62],
                c: vec![11.5, 0.46, 2.6, 0.065],
                b_mag: vec![2.5, 7.8],
            },
        )
        .unwrap()
    }

    #[test]
    fn partition_assigns_subprocesses_from_the_top() {
        let p = two_band();
        assert_eq!(p.len(), 2);
        assert_eq!(p.subprocess_of(4.0), Some(1));
        assert_eq!(p.subprocess_of(4.34), Some(1));
        assert_eq!(p.subprocess_of(4.35), Some(0));
        assert_eq!(p.subprocess_of(9.9), Some(0));
        assert_eq!(p.subprocess_of(10.0), Some(0));
        assert_eq!(p.subprocess_of(3.99), None);
        assert_eq!(p.subprocess_of(10.01), None);
        assert_eq!(p.interval(0), (4.35, 10.0));
        assert_eq!(p.interval(1), (4.0, 4.35));
    }

    #[test]
    fn partition_rejects_disorder() {
        assert!(MagnitudePartition::new(4.0, &[4.0]).is_err());
        assert!(MagnitudePartition::new(4.0, &[5.0, 4.5]).is_err());
        assert!(MagnitudePartition::new(4.0, &[10.0]).is_err());
        assert!(MagnitudePartition::new(11.0, &[]).is_err());
    }

    #[test]
    fn intensity_matches_hand_computation() {
        let m = small_model();
        let history = [
            Event { t: 1.0, mag: 5.0 },  // subprocess 0
            Event { t: 3.0, mag: 4.2 },  // subprocess 1
        ];
        let t = 4.5;
        let nb = 2;
        for i in 0..nb {
            let mut want = m.params.lambda0[i];
            // event 1: j = 0
            let k = i * nb;
            want += m.params.alpha[k]
                * (m.params.gamma[k] * 1.0).exp()
                * mlf::ml_density(m.params.beta[k], m.params.c[k], 3.5).unwrap();
            // event 2: j = 1
            let k = i * nb + 1;
            want += m.params.alpha[k]
                * (m.params.gamma[k] * 0.2).exp()
                * mlf::ml_density(m.params.beta[k], m.params.c[k], 1.5).unwrap();
            let got = m.intensity(&history, t, i);
            assert!(
                (got - want).abs() <= 1e-14 * want,
                "i={i}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn intensity_ignores_future_and_simultaneous_events() {
        let m = small_model();
        let history = [Event { t: 2.0, mag: 5.0 }, Event { t: 7.0, mag: 5.0 }];
        assert_eq!(
            m.intensity(&history, 2.0, 0),
            m.params.lambda0[0],
            "event at t contributes nothing at t"
        );
        let with_future = m.intensity(&history, 4.0, 0);
        let without = m.intensity(&history[..1], 4.0, 0);
        assert_eq!(with_future, without);
    }

    #[test]
    fn mark_density_integrates_to_one() {
        let m = small_model();
        for i in 0..2 {
            let (lo, hi) = m.partition.interval(i);
            let r = crate::quad::integrate(|x| m.mark_density(i, x), lo, hi, 1e-12, 0.0);
            assert!(
                (r.value - 1.0).abs() < 1e-10,
                "subprocess {i} mark density integrates to {}",
                r.value
            );
        }
        let e = EtasModel::new(
            4.0,
            EtasParams { mu: 0.1, a: 1.7, delta: 1.1, c: 0.02, p: 0.96, b_mag: 4.3 },
        )
        .unwrap();
        let r = crate::quad::integrate(|x| e.mark_density(x), 4.0, 10.0, 1e-12, 0.0);
        assert!((r.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mark_quantile_inverts_cdf() {
        let m = small_model();
        for i in 0..2 {
            let (lo, hi) = m.partition.interval(i);
            for &u in &[0.0, 0.1, 0.5, 0.9, 0.999] {
                let mag = m.mark_quantile(i, u);
                assert!(mag >= lo && mag <= hi, "quantile out of interval");
                // CDF(quantile(u)) = u
                let b = m.params.b_mag[i];
                let cdf = -(-b * (mag - lo)).exp_m1() / -(-b * (hi - lo)).exp_m1();
                assert!((cdf - u).abs() < 1e-12, "u={u}, got cdf {cdf}");
            }
        }
    }

    #[test]
    fn offspring_closed_forms() {
        // gamma = 0: the boost is 1 and the formula collapses to
        // alpha (1 - e^{-b w}) / (b (1 - e^{-b w})) = alpha / b.
        let mut m = small_model();
        for g in m.params.gamma.iter_mut() {
            *g = 0.0;
        }
        let n = m.expected_offspring();
        let nb = 2;
        for i in 0..nb {
            for j in 0..nb {
                let k = i * nb + j;
                let want = m.params.alpha[k] / m.params.b_mag[j];
                assert!(
                    (n[k] - want).abs() < 1e-12 * want,
                    "gamma=0 case: got {}, want {want}",
                    n[k]
                );
            }
        }

        // gamma = b: n = alpha w / (1 - e^{-b w}), and the formula must be
        // continuous through the removable singularity.
        let mut m = small_model();
        for (k, g) in m.params.gamma.iter_mut().enumerate() {
            *g = m.params.b_mag[k % 2];
        }
        let n_at = m.expected_offspring();
        for i in 0..nb {
            for j in 0..nb {
                let k = i * nb + j;
                let alpha = m.params.alpha[k];
                let b = m.params.b_mag[j];
                let w = m.partition.width(j);
                let want = alpha * w / (1.0 - (-b * w).exp());
                assert!(
                    (n_at[k] - want).abs() < 1e-9 * want,
                    "gamma=b case: got {}, want {want}",
                    n_at[k]
                );
            }
        }
        // Nudge gamma off the singular point: values must move smoothly.
        let mut m2 = m.clone();
        for g in m2.params.gamma.iter_mut() {
            *g += 1e-7;
        }
        let n_off = m2.expected_offspring();
        for k in 0..4 {
            assert!((n_off[k] - n_at[k]).abs() < 1e-5 * n_at[k]);
        }
    }

    #[test]
    fn etas_intensity_and_kernel_mass() {
        let e = EtasModel::new(
            4.0,
            EtasParams { mu: 0.119, a: 1.767, delta: 1.135, c: 0.022, p: 0.962, b_mag: 4.28 },
        )
        .unwrap();
        let history = [Event { t: 0.0, mag: 6.0 }];
        let lam = e.intensity(&history, 1.0);
        let want = 0.119 + 1.767 * (1.135_f64 * 2.0).exp() * (1.0_f64 + 1.0 / 0.022).powf(-0.962);
        assert!((lam - want).abs() < 1e-12 * want);

        // Kernel mass agrees with numerical integration of the kernel.
        let mass = e.kernel_mass(3.0);
        let r = crate::quad::integrate(
            |u| 1.767 * (1.0 + u / 0.022).powf(-0.962),
            0.0,
            3.0,
            1e-12,
            0.0,
        );
        assert!(
            (mass - r.value).abs() < 1e-9 * r.value,
            "mass {mass} vs quad {}",
            r.value
        );

        // p = 1 log form continuous with p near 1.
        let mut e1 = e.clone();
        e1.params.p = 1.0;
        let m1 = e1.kernel_mass(5.0);
        e1.params.p = 1.0 + 1e-9;
        let m2 = e1.kernel_mass(5.0);
        assert!((m1 - m2).abs() < 1e-6 * m1);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let p = two_band();
        let mut params = small_model().params;
        params.beta[2] = 1.2;
        assert!(MdfhpModel::new(p.clone(), params).is_err());
        let mut params = small_model().params;
        params.lambda0[0] = 0.0;
        assert!(MdfhpModel::new(p.clone(), params).is_err());
        let mut params = small_model().params;
        params.alpha[1] = -0.1;
        assert!(MdfhpModel::new(p, params).is_err());
        assert!(EtasModel::new(
            4.0,
            EtasParams { mu: 0.1, a: 1.0, delta: 1.0, c: 0.0, p: 1.0, b_mag: 2.0 }
        )
        .is_err());
    }
}
