//! Maximum-likelihood fitting, information criteria and asymptotic
//! confidence intervals for both models.
//!
//! The log-likelihood of a marked point process splits into three parts:
//! the summed log ground intensity at the events, the summed log mark
//! density, and the compensator (integrated intensity) over the window.
//! [`LogLik`] exposes all three so diagnostics can check them separately.
//!
//! Design notes for the hot path:
//!
//! * Event-pair time gaps enter the kernel only through `ln(c·Δt) =
//!   ln c + ln Δt`, so all `ln Δt` values are precomputed once per catalogue
//!   (grouped by source subprocess, row per target event) and shared across
//!   every likelihood evaluation. Kernel densities then come from the
//!   Chebyshev tables in `mlf::table` at a few tens of nanoseconds per pair.
//! * Kernel tables are memoised per thread keyed by the exact `β` bits, so
//!   line searches and finite-difference stencils that move one coordinate
//!   reuse the other tables.
//! * Mark slopes separate from the rest of the likelihood (the mark factor
//!   shares no parameters with the ground intensity), so each `B` is found
//!   from its own one-dimensional score equation and the simplex search only
//!   covers the ground parameters.
//!
//! Optimisation runs over log-transformed parameters: positivity for free,
//! and the observed information in log space is what the interval
//! construction wants anyway.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::catalog::Catalog;
use crate::mlf::table::MlKernelTable;
use crate::model::{Event, EtasParams, MagnitudePartition, MdfhpParams, ModelError};
use crate::optim::{self, OptimResult};

/// Errors from likelihood construction and fitting.
#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("catalogue is empty")]
    EmptyCatalog,
    #[error("event times must be strictly increasing")]
    UnsortedEvents,
    #[error("event magnitude {mag} has no subprocess (floor {m0})")]
    MagnitudeOutOfRange { mag: f64, m0: f64 },
    #[error("subprocess {subprocess} holds only {count} events; need at least 2")]
    TooFewEvents { subprocess: usize, count: usize },
    #[error("degenerate magnitude sample (no spread above the interval floor)")]
    DegenerateMarks,
}

/// Decomposed log-likelihood: `total = log_intensity + log_marks − Σ compensators`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLik {
    /// Σ over events of `ln λ_i(t_k | history)`.
    pub log_intensity: f64,
    /// Σ over events of `ln f_i(M_k)`.
    pub log_marks: f64,
    /// Integrated intensity over `[0, T]`, one entry per subprocess.
    pub compensators: Vec<f64>,
}

impl LogLik {
    /// Sentinel for invalid parameters: total is `−∞`.
    fn invalid() -> Self {
        LogLik { log_intensity: f64::NEG_INFINITY, log_marks: 0.0, compensators: Vec::new() }
    }

    /// The log-likelihood value.
    pub fn total(&self) -> f64 {
        self.log_intensity + self.log_marks - self.compensators.iter().sum::<f64>()
    }
}

/// Integrated intensity Λ_i(t) of a fixed parameter set over a fixed event
/// history, evaluated via the kernel CDF tables.
///
/// Both the likelihood compensator and the residual time transform go
/// through this one code path, so their values agree exactly.
pub struct MdfhpCompensator {
    nb: usize,
    lambda0: Vec<f64>,
    c: Vec<f64>,
    /// Source event times, grouped by subprocess, ascending.
    src_t: Vec<Vec<f64>>,
    /// Per (target i, source j): `α_ij e^{γ_ij (M_ℓ − M0)}` per source event.
    weight: Vec<Vec<f64>>,
    cdf: Vec<Rc<MlKernelTable>>,
}

impl MdfhpCompensator {
    pub fn new(
        partition: &MagnitudePartition,
        events: &[Event],
        params: &MdfhpParams,
    ) -> Result<Self, ModelError> {
        params.validate()?;
        let nb = partition.len();
        if params.n_subprocesses() != nb {
            return Err(ModelError::Params(format!(
                "parameter set is for {} subprocesses, partition has {nb}",
                params.n_subprocesses()
            )));
        }
        let m0 = partition.m0();
        let mut src_t = vec![Vec::new(); nb];
        let mut src_dm = vec![Vec::new(); nb];
        for e in events {
            let j = partition.subprocess_of(e.mag).ok_or_else(|| {
                ModelError::Params(format!("magnitude {} outside the partition", e.mag))
            })?;
            src_t[j].push(e.t);
            src_dm[j].push(e.mag - m0);
        }
        let mut weight = Vec::with_capacity(nb * nb);
        let mut cdf = Vec::with_capacity(nb * nb);
        for i in 0..nb {
            for j in 0..nb {
                let idx = i * nb + j;
                let (a, g) = (params.alpha[idx], params.gamma[idx]);
                weight.push(src_dm[j].iter().map(|dm| a * (g * dm).exp()).collect());
                cdf.push(MlKernelTable::cdf_cached(params.beta[idx]));
            }
        }
        Ok(MdfhpCompensator {
            nb,
            lambda0: params.lambda0.clone(),
            c: params.c.clone(),
            src_t,
            weight,
            cdf,
        })
    }

    /// Λ_i(t): integrated intensity of subprocess `i` from 0 to `t`, using
    /// only history strictly before `t`.
    pub fn at(&self, i: usize, t: f64) -> f64 {
        let mut acc = self.lambda0[i] * t;
        for j in 0..self.nb {
            let idx = i * self.nb + j;
            let ts = &self.src_t[j];
            let cut = ts.partition_point(|&s| s < t);
            let (c, w, tab) = (self.c[idx], &self.weight[idx], &self.cdf[idx]);
            let mut s = 0.0;
            for l in 0..cut {
                s += w[l] * tab.eval(c, t - ts[l]);
            }
            acc += s;
        }
        acc
    }
}

/// Integrated ETAS intensity Λ(t), shared by likelihood and residuals.
pub struct EtasCompensator {
    mu: f64,
    a: f64,
    c: f64,
    /// `1 − p`; the kernel mass is `c·expm1(q·ln(1+s/c))/q`, which is stable
    /// through `p = 1`.
    q: f64,
    src_t: Vec<f64>,
    weight: Vec<f64>,
}

impl EtasCompensator {
    pub fn new(m0: f64, events: &[Event], params: &EtasParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(EtasCompensator {
            mu: params.mu,
            a: params.a,
            c: params.c,
            q: 1.0 - params.p,
            src_t: events.iter().map(|e| e.t).collect(),
            weight: events.iter().map(|e| (params.delta * (e.mag - m0)).exp()).collect(),
        })
    }

    /// Kernel mass `∫_0^s (1 + u/c)^{−p} du`.
    fn mass(&self, s: f64) -> f64 {
        let l = (s / self.c).ln_1p();
        if self.q.abs() < 1e-14 {
            self.c * l
        } else {
            self.c * (self.q * l).exp_m1() / self.q
        }
    }

    /// Λ(t) using history strictly before `t`.
    pub fn at(&self, t: f64) -> f64 {
        let cut = self.src_t.partition_point(|&s| s < t);
        let mut acc = self.mu * t;
        for l in 0..cut {
            acc += self.a * self.weight[l] * self.mass(t - self.src_t[l]);
        }
        acc
    }
}

/// Precomputed likelihood evaluator for the multidimensional model.
pub struct MdfhpLikelihood {
    partition: MagnitudePartition,
    events: Vec<Event>,
    horizon: f64,
    membership: Vec<usize>,
    n_by_sub: Vec<usize>,
    /// Σ (M − interval floor) per subprocess — sufficient statistic for B.
    mark_dev_sum: Vec<f64>,
    /// Flattened `ln Δt` per source subprocess: row `k` holds the gaps from
    /// every earlier event of that subprocess to target event `k`.
    lndt: Vec<Vec<f64>>,
    row_off: Vec<Vec<usize>>,
}

impl MdfhpLikelihood {
    pub fn new(
        partition: MagnitudePartition,
        events: &[Event],
        horizon: f64,
    ) -> Result<Self, FitError> {
        if events.is_empty() {
            return Err(FitError::EmptyCatalog);
        }
        if events.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(FitError::UnsortedEvents);
        }
        let nb = partition.len();
        let n = events.len();
        let m0 = partition.m0();
        let mut membership = Vec::with_capacity(n);
        let mut n_by_sub = vec![0usize; nb];
        let mut mark_dev_sum = vec![0.0; nb];
        for e in events {
            let i = partition
                .subprocess_of(e.mag)
                .ok_or(FitError::MagnitudeOutOfRange { mag: e.mag, m0 })?;
            membership.push(i);
            n_by_sub[i] += 1;
            mark_dev_sum[i] += e.mag - partition.interval(i).0;
        }

        // ln Δt blocks: for each source subprocess j, row k lists ln(t_k −
        // t_ℓ) over that subprocess's events strictly before t_k. Rows are
        // contiguous in one flat vector with per-target offsets.
        let mut lndt: Vec<Vec<f64>> = vec![Vec::new(); nb];
        let mut row_off = vec![vec![0usize; n + 1]; nb];
        let mut src_t: Vec<Vec<f64>> = vec![Vec::new(); nb];
        for k in 0..n {
            let tk = events[k].t;
            for j in 0..nb {
                for &tl in &src_t[j] {
                    lndt[j].push((tk - tl).ln());
                }
                row_off[j][k + 1] = lndt[j].len();
            }
            src_t[membership[k]].push(tk);
        }

        Ok(MdfhpLikelihood {
            partition,
            events: events.to_vec(),
            horizon,
            membership,
            n_by_sub,
            mark_dev_sum,
            lndt,
            row_off,
        })
    }

    /// Convenience constructor from a catalogue and its cut points.
    pub fn from_catalog(cat: &Catalog, cuts: &[f64]) -> Result<Self, FitError> {
        let partition = MagnitudePartition::new(cat.m0, cuts)?;
        Self::new(partition, &cat.events, cat.horizon_t)
    }

    pub fn partition(&self) -> &MagnitudePartition {
        &self.partition
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Event count per subprocess.
    pub fn counts(&self) -> &[usize] {
        &self.n_by_sub
    }

    /// Decomposed log-likelihood at `params`; `total()` is `−∞` for invalid
    /// parameter vectors (the optimiser's rejection sentinel).
    pub fn loglik(&self, params: &MdfhpParams) -> LogLik {
        let nb = self.partition.len();
        if params.validate().is_err() || params.n_subprocesses() != nb {
            return LogLik::invalid();
        }
        let n = self.events.len();

        // Per-pair excitation weights and density tables.
        let comp = match MdfhpCompensator::new(&self.partition, &self.events, params) {
            Ok(c) => c,
            Err(_) => return LogLik::invalid(),
        };
        let dens: Vec<Rc<MlKernelTable>> =
            params.beta.iter().map(|&b| MlKernelTable::density_cached(b)).collect();
        let lnc: Vec<f64> = params.c.iter().map(|c| c.ln()).collect();

        let mut log_intensity = 0.0;
        for k in 0..n {
            let i = self.membership[k];
            let mut lam = params.lambda0[i];
            for j in 0..nb {
                let idx = i * nb + j;
                let row = &self.lndt[j][self.row_off[j][k]..self.row_off[j][k + 1]];
                let w = &comp.weight[idx];
                let tab = &dens[idx];
                let shift = lnc[idx];
                let mut s = 0.0;
                for (l, &ld) in row.iter().enumerate() {
                    s += w[l] * tab.eval_ln(shift + ld);
                }
                lam += params.c[idx] * s;
            }
            if !(lam > 0.0) || !lam.is_finite() {
                return LogLik::invalid();
            }
            log_intensity += lam.ln();
        }

        let log_marks = self.log_marks(&params.b_mag);
        if !log_marks.is_finite() {
            return LogLik::invalid();
        }
        let compensators = (0..nb).map(|i| comp.at(i, self.horizon)).collect();
        LogLik { log_intensity, log_marks, compensators }
    }

    /// Mark term from the per-subprocess sufficient statistics:
    /// Σ_i [n_i ln B_i − B_i S_i − n_i ln(1 − e^{−B_i w_i})].
    fn log_marks(&self, b_mag: &[f64]) -> f64 {
        let mut j_sum = 0.0;
        for i in 0..self.partition.len() {
            let (n_i, s_i) = (self.n_by_sub[i] as f64, self.mark_dev_sum[i]);
            let b = b_mag[i];
            let w = self.partition.width(i);
            j_sum += n_i * b.ln() - b * s_i - n_i * (-(-b * w).exp_m1()).ln();
        }
        j_sum
    }
}

/// Precomputed likelihood evaluator for the ETAS model.
pub struct EtasLikelihood {
    m0: f64,
    events: Vec<Event>,
    horizon: f64,
    /// Flattened Δt rows: row k lists `t_k − t_ℓ` for all ℓ < k.
    dt: Vec<f64>,
    off: Vec<usize>,
    mark_dev_sum: f64,
}

impl EtasLikelihood {
    pub fn new(m0: f64, events: &[Event], horizon: f64) -> Result<Self, FitError> {
        if events.is_empty() {
            return Err(FitError::EmptyCatalog);
        }
        if events.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(FitError::UnsortedEvents);
        }
        if let Some(e) = events.iter().find(|e| e.mag < m0) {
            return Err(FitError::MagnitudeOutOfRange { mag: e.mag, m0 });
        }
        let n = events.len();
        let mut dt = Vec::with_capacity(n * (n - 1) / 2);
        let mut off = vec![0usize; n + 1];
        for k in 0..n {
            for l in 0..k {
                dt.push(events[k].t - events[l].t);
            }
            off[k + 1] = dt.len();
        }
        let mark_dev_sum = events.iter().map(|e| e.mag - m0).sum();
        Ok(EtasLikelihood { m0, events: events.to_vec(), horizon, dt, off, mark_dev_sum })
    }

    pub fn from_catalog(cat: &Catalog) -> Result<Self, FitError> {
        Self::new(cat.m0, &cat.events, cat.horizon_t)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Decomposed log-likelihood; `total()` is `−∞` for invalid parameters.
    pub fn loglik(&self, params: &EtasParams) -> LogLik {
        if params.validate().is_err() {
            return LogLik::invalid();
        }
        let n = self.events.len();
        let comp = match EtasCompensator::new(self.m0, &self.events, params) {
            Ok(c) => c,
            Err(_) => return LogLik::invalid(),
        };
        let (mu, a, c, p) = (params.mu, params.a, params.c, params.p);

        let mut log_intensity = 0.0;
        for k in 0..n {
            let mut lam = mu;
            let row = &self.dt[self.off[k]..self.off[k + 1]];
            let mut s = 0.0;
            for (l, &d) in row.iter().enumerate() {
                s += comp.weight[l] * (-p * (d / c).ln_1p()).exp();
            }
            lam += a * s;
            if !(lam > 0.0) || !lam.is_finite() {
                return LogLik::invalid();
            }
            log_intensity += lam.ln();
        }

        let b = params.b_mag;
        let width = crate::model::MAG_CEILING - self.m0;
        let log_marks = n as f64 * b.ln() - b * self.mark_dev_sum
            - n as f64 * (-(-b * width).exp_m1()).ln();
        if !log_marks.is_finite() {
            return LogLik::invalid();
        }
        LogLik { log_intensity, log_marks, compensators: vec![comp.at(self.horizon)] }
    }
}

/// Closed-form-free MLE of the truncated-exponential slope on `[0, width]`
/// from the sufficient statistics `n` and `S = Σ deviations`.
///
/// Solves the score equation `n/B − S − n·w·e^{−Bw}/(1 − e^{−Bw}) = 0` by
/// bisection; as the sample mean approaches `w/2` the slope tends to 0, and
/// the bracket ends are returned when the root lies outside them.
pub fn truncated_exp_mle(n: usize, dev_sum: f64, width: f64) -> Result<f64, FitError> {
    if n == 0 || !(dev_sum > 0.0) || !(width > 0.0) {
        return Err(FitError::DegenerateMarks);
    }
    let nf = n as f64;
    let score = |b: f64| -> f64 {
        let x = b * width;
        // e^{−x}/(1−e^{−x}) = 1/(e^x − 1), stable via expm1 for small x.
        nf / b - dev_sum - nf * width / x.exp_m1()
    };
    let (lo, hi) = (1e-9, 1e6);
    let (slo, shi) = (score(lo), score(hi));
    if slo <= 0.0 {
        // Mean deviation at or above w/2: flattest slope representable.
        return Ok(lo);
    }
    if shi >= 0.0 {
        return Ok(hi);
    }
    Ok(optim::bisect(score, lo, hi, 1e-12).unwrap_or(lo))
}

/// AIC and BIC from a log-likelihood: `(−2ℓ + 2k, −2ℓ + k·ln N)`.
pub fn information_criteria(loglik: f64, n_params: usize, n_events: usize) -> (f64, f64) {
    let k = n_params as f64;
    (-2.0 * loglik + 2.0 * k, -2.0 * loglik + k * (n_events as f64).ln())
}

/// Canonical parameter ordering for the multidimensional model:
/// `lambda0_i`, then `alpha_ij`, `gamma_ij`, `beta_ij`, `c_ij` (row-major),
/// then `b_i`. Subprocess labels are 1-based with 1 = highest magnitudes.
pub fn mdfhp_param_names(nb: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(2 * nb + 4 * nb * nb);
    for i in 1..=nb {
        names.push(format!("lambda0_{i}"));
    }
    for block in ["alpha", "gamma", "beta", "c"] {
        for i in 1..=nb {
            for j in 1..=nb {
                names.push(format!("{block}_{i}{j}"));
            }
        }
    }
    for i in 1..=nb {
        names.push(format!("b_{i}"));
    }
    names
}

/// Canonical ETAS parameter ordering.
pub fn etas_param_names() -> Vec<String> {
    ["mu", "a", "delta", "c", "p", "b"].iter().map(|s| s.to_string()).collect()
}

/// Log-transform of the full parameter vector in canonical order.
pub fn pack_mdfhp(p: &MdfhpParams) -> Vec<f64> {
    p.lambda0
        .iter()
        .chain(&p.alpha)
        .chain(&p.gamma)
        .chain(&p.beta)
        .chain(&p.c)
        .chain(&p.b_mag)
        .map(|v| v.ln())
        .collect()
}

/// Inverse of [`pack_mdfhp`].
pub fn unpack_mdfhp(v: &[f64], nb: usize) -> MdfhpParams {
    let nn = nb * nb;
    let e = |r: std::ops::Range<usize>| v[r].iter().map(|x| x.exp()).collect::<Vec<f64>>();
    MdfhpParams {
        lambda0: e(0..nb),
        alpha: e(nb..nb + nn),
        gamma: e(nb + nn..nb + 2 * nn),
        beta: e(nb + 2 * nn..nb + 3 * nn),
        c: e(nb + 3 * nn..nb + 4 * nn),
        b_mag: e(nb + 4 * nn..2 * nb + 4 * nn),
    }
}

/// Log-transform of the ETAS parameter vector in canonical order.
pub fn pack_etas(p: &EtasParams) -> Vec<f64> {
    [p.mu, p.a, p.delta, p.c, p.p, p.b_mag].iter().map(|v| v.ln()).collect()
}

/// Inverse of [`pack_etas`].
pub fn unpack_etas(v: &[f64]) -> EtasParams {
    EtasParams {
        mu: v[0].exp(),
        a: v[1].exp(),
        delta: v[2].exp(),
        c: v[3].exp(),
        p: v[4].exp(),
        b_mag: v[5].exp(),
    }
}

/// Optimiser and interval settings for [`fit_mdfhp`] / [`fit_etas`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    /// Number of simplex starts: one from the heuristic initialisation plus
    /// `restarts − 1` log-uniform perturbations of it.
    pub restarts: usize,
    /// Seed for the restart perturbations.
    pub seed: u64,
    /// Simplex convergence tolerance (relative spread of objective values).
    pub nm_tol: f64,
    /// Evaluation budget per simplex start.
    pub nm_max_evals: usize,
    /// Run the quasi-Newton polish after the best simplex start.
    pub polish: bool,
    /// Iteration cap for the polish.
    pub polish_iters: usize,
    /// Compute the observed-information confidence intervals.
    pub compute_ci: bool,
    /// Two-sided interval level, e.g. 0.90.
    pub ci_level: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 10,
            seed: 1,
            nm_tol: 1e-9,
            nm_max_evals: 30_000,
            polish: true,
            polish_iters: 80,
            compute_ci: true,
            ci_level: 0.90,
        }
    }
}

/// Which model a [`FitResult`] holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FittedModel {
    Mdfhp { boundaries: Vec<f64>, params: MdfhpParams },
    Etas { m0: f64, params: EtasParams },
}

/// One optimisation stage in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// `"start k"` or `"polish"`.
    pub stage: String,
    pub evals: usize,
    /// Log-likelihood reached by this stage.
    pub loglik: f64,
    /// Running best across stages (nondecreasing).
    pub best_so_far: f64,
    pub converged: bool,
}

/// A fitted model with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FittedModel,
    pub loglik: f64,
    pub log_intensity: f64,
    pub log_marks: f64,
    pub compensators: Vec<f64>,
    pub aic: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_events: usize,
    /// Natural-scale estimates in canonical order (see the `*_param_names`
    /// functions).
    pub param_names: Vec<String>,
    pub estimates: Vec<f64>,
    /// Per-parameter interval at `ci_level`, `None` where the observed
    /// information was unusable.
    pub ci: Vec<Option<[f64; 2]>>,
    pub ci_level: f64,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    /// Content hash of the catalogue this was fitted on.
    pub fitted_on: String,
    pub seed: u64,
}

impl FitResult {
    /// Events per subprocess divided by total — the share diagnostic used
    /// by the cut sweep.
    pub fn params_mdfhp(&self) -> Option<&MdfhpParams> {
        match &self.model {
            FittedModel::Mdfhp { params, .. } => Some(params),
            FittedModel::Etas { .. } => None,
        }
    }

    pub fn params_etas(&self) -> Option<&EtasParams> {
        match &self.model {
            FittedModel::Etas { params, .. } => Some(params),
            FittedModel::Mdfhp { .. } => None,
        }
    }
}

/// Confidence intervals from the Hessian of the log-likelihood in log space.
///
/// Tries the full observed-information inverse first (Cholesky of `−H`);
/// if that is unavailable (indefinite or non-finite), falls back to
/// per-parameter curvatures, and reports `None` where even the diagonal is
/// unusable. Returns the intervals and whether the joint inverse was used.
pub fn ci_from_hessian(
    hess: &[Vec<f64>],
    log_theta: &[f64],
    level: f64,
) -> (Vec<Option<[f64; 2]>>, bool) {
    let n = log_theta.len();
    let z = statrs::distribution::Normal::new(0.0, 1.0)
        .expect("unit normal")
        .inverse_cdf(0.5 + level / 2.0);
    let neg: Vec<Vec<f64>> = hess
        .iter()
        .map(|row| row.iter().map(|v| -v).collect())
        .collect();
    let all_finite = neg.iter().flatten().all(|v| v.is_finite());
    let joint = if all_finite { optim::cholesky_inverse(&neg) } else { None };
    let used_joint = joint.is_some();
    let interval = |se: f64, lt: f64| -> Option<[f64; 2]> {
        if se.is_finite() && se >= 0.0 {
            Some([(lt - z * se).exp(), (lt + z * se).exp()])
        } else {
            None
        }
    };
    let cis = (0..n)
        .map(|i| {
            let var = match &joint {
                Some(cov) => cov[i][i],
                None => 1.0 / neg[i][i],
            };
            if var.is_finite() && var > 0.0 {
                interval(var.sqrt(), log_theta[i])
            } else {
                None
            }
        })
        .collect();
    (cis, used_joint)
}

/// Log-uniform perturbation of scale `s` around `x0`, deterministic in
/// `(seed, index)`.
fn perturbed_start(x0: &[f64], seed: u64, index: usize, scale: f64) -> Vec<f64> {
    let mut rng =
        ChaCha12Rng::seed_from_u64(seed.wrapping_add((index as u64).wrapping_mul(0x9E3779B97F4A7C15)));
    x0.iter().map(|&v| v + rng.gen_range(-scale..scale)).collect()
}

/// Search region for the simplex and polish, in log-parameter space. The box
/// sits far outside any plausible estimate (fitted seismicity parameters stay
/// within |log theta| <= ~7 including interval bounds); without it the
/// simplex can drift into regions where each objective evaluation becomes
/// arbitrarily expensive. The beta band keeps kernel-table construction in
/// its cheap regime: below ~0.05 the panel count grows like 1/beta, and
/// within ~1e-2 of 1 the branch-cut quadrature noise drives the builder to
/// its panel cap at seconds per table.
const SEARCH_LOG_BOX: f64 = 12.0;
const BETA_SEARCH_MIN: f64 = 0.05;
const BETA_SEARCH_MAX: f64 = 0.99;

/// Shared driver: multi-start simplex plus polish over a negated objective.
/// Returns the best point, the trace, and the convergence flag.
fn optimise<F, C>(
    neg_obj: F,
    x0: &[f64],
    clamp: C,
    opts: &FitOptions,
    mark_const: f64,
) -> (Vec<f64>, Vec<TraceEntry>, bool)
where
    F: Fn(&[f64]) -> f64 + Sync,
    C: Fn(&mut [f64]) + Sync,
{
    let starts = opts.restarts.max(1);
    let runs: Vec<(usize, OptimResult)> = (0..starts)
        .into_par_iter()
        .map(|r| {
            let mut start = if r == 0 {
                x0.to_vec()
            } else {
                perturbed_start(x0, opts.seed, r, 0.5)
            };
            clamp(&mut start);
            let res = optim::nelder_mead(|v| neg_obj(v), &start, 0.25, opts.nm_tol, opts.nm_max_evals);
            (r, res)
        })
        .collect();

    let mut runs = runs;
    runs.sort_by_key(|(r, _)| *r);
    let mut trace = Vec::with_capacity(starts + 1);
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    let mut best_ll = f64::NEG_INFINITY;
    for (r, res) in &runs {
        let ll = -res.f + mark_const;
        if best.as_ref().is_none_or(|(bf, _, _)| res.f < *bf) {
            best = Some((res.f, res.x.clone(), res.converged));
        }
        best_ll = best_ll.max(ll);
        trace.push(TraceEntry {
            stage: format!("start {r}"),
            evals: res.evals,
            loglik: ll,
            best_so_far: best_ll,
            converged: res.converged,
        });
    }
    let (best_f, best_x, nm_converged) = best.expect("at least one start");

    let mut converged = nm_converged;
    let mut x_final = best_x;
    if opts.polish && best_f.is_finite() {
        let res = optim::bfgs(|v| neg_obj(v), &x_final, 1e-5, 1e-5, opts.polish_iters);
        let ll = -res.f + mark_const;
        if res.f <= best_f {
            x_final = res.x;
            converged = converged || res.converged;
        }
        best_ll = best_ll.max(ll);
        trace.push(TraceEntry {
            stage: "polish".into(),
            evals: res.evals,
            loglik: ll,
            best_so_far: best_ll,
            converged: res.converged,
        });
    }
    (x_final, trace, converged)
}

/// Fit the multidimensional model to a catalogue at the given cut points.
pub fn fit_mdfhp(cat: &Catalog, cuts: &[f64], opts: &FitOptions) -> Result<FitResult, FitError> {
    let like = MdfhpLikelihood::from_catalog(cat, cuts)?;
    let nb = like.partition.len();
    for i in 0..nb {
        if like.n_by_sub[i] < 2 {
            return Err(FitError::TooFewEvents { subprocess: i + 1, count: like.n_by_sub[i] });
        }
    }

    // Mark slopes separate exactly: solve each B from its own score equation.
    let b_hat: Vec<f64> = (0..nb)
        .map(|i| truncated_exp_mle(like.n_by_sub[i], like.mark_dev_sum[i], like.partition.width(i)))
        .collect::<Result<_, _>>()?;
    let mark_const = like.log_marks(&b_hat);

    // Heuristic initialisation, centred on the plausible region.
    let t_total = like.horizon;
    let nn = nb * nb;
    let init = MdfhpParams {
        lambda0: like.n_by_sub.iter().map(|&n| 0.5 * n as f64 / t_total).collect(),
        alpha: vec![0.2; nn],
        gamma: vec![1.0; nn],
        beta: vec![0.7; nn],
        c: vec![1.0; nn],
        b_mag: b_hat.clone(),
    };
    let ground_dim = nb + 4 * nn;
    let x0: Vec<f64> = pack_mdfhp(&init)[..ground_dim].to_vec();

    let b_for_obj = b_hat.clone();
    let beta_range = nb + 2 * nn..nb + 3 * nn;
    let beta_obj_range = beta_range.clone();
    let like_ref = &like;
    let neg_obj = move |v: &[f64]| -> f64 {
        if v.iter().any(|x| !x.is_finite() || x.abs() > SEARCH_LOG_BOX)
            || v[beta_obj_range.clone()]
                .iter()
                .any(|x| *x < BETA_SEARCH_MIN.ln() || *x > BETA_SEARCH_MAX.ln())
        {
            return f64::INFINITY;
        }
        let mut full = v.to_vec();
        full.extend(b_for_obj.iter().map(|b| b.ln()));
        let p = unpack_mdfhp(&full, nb);
        let ll = like_ref.loglik(&p);
        let ground = ll.log_intensity - ll.compensators.iter().sum::<f64>();
        if ground.is_finite() { -ground } else { f64::INFINITY }
    };
    // Clamp perturbed starting betas into the interior of the search band so
    // most of the initial simplex evaluates finitely.
    let clamp = move |v: &mut [f64]| {
        for x in &mut v[beta_range.clone()] {
            *x = x.min(0.9f64.ln());
        }
    };

    let (x_ground, trace, converged) = optimise(neg_obj, &x0, clamp, opts, mark_const);
    let mut x_full = x_ground;
    x_full.extend(b_hat.iter().map(|b| b.ln()));
    let params = unpack_mdfhp(&x_full, nb);
    let ll = like.loglik(&params);

    let (ci, _) = if opts.compute_ci {
        let mut f_log = |v: &[f64]| like.loglik(&unpack_mdfhp(v, nb)).total();
        let hess = optim::hessian_fd(&mut f_log, &x_full, 1e-4);
        ci_from_hessian(&hess, &x_full, opts.ci_level)
    } else {
        (vec![None; x_full.len()], false)
    };

    let (aic, bic) = information_criteria(ll.total(), params.n_parameters(), like.events.len());
    Ok(FitResult {
        model: FittedModel::Mdfhp {
            boundaries: like.partition.boundaries().to_vec(),
            params: params.clone(),
        },
        loglik: ll.total(),
        log_intensity: ll.log_intensity,
        log_marks: ll.log_marks,
        compensators: ll.compensators,
        aic,
        bic,
        n_params: params.n_parameters(),
        n_events: like.events.len(),
        param_names: mdfhp_param_names(nb),
        estimates: x_full.iter().map(|v| v.exp()).collect(),
        ci,
        ci_level: opts.ci_level,
        converged,
        trace,
        fitted_on: cat.content_hash(),
        seed: opts.seed,
    })
}

/// Fit the ETAS model to a catalogue.
pub fn fit_etas(cat: &Catalog, opts: &FitOptions) -> Result<FitResult, FitError> {
    let like = EtasLikelihood::from_catalog(cat)?;
    let n = like.events.len();
    if n < 2 {
        return Err(FitError::TooFewEvents { subprocess: 1, count: n });
    }
    let width = crate::model::MAG_CEILING - like.m0;
    let b_hat = truncated_exp_mle(n, like.mark_dev_sum, width)?;
    let mark_const = n as f64 * b_hat.ln() - b_hat * like.mark_dev_sum
        - n as f64 * (-(-b_hat * width).exp_m1()).ln();

    let init = EtasParams {
        mu: 0.5 * n as f64 / like.horizon,
        a: 0.2,
        delta: 1.0,
        c: 0.1,
        p: 1.1,
        b_mag: b_hat,
    };
    let x0: Vec<f64> = pack_etas(&init)[..5].to_vec();

    let neg_obj = |v: &[f64]| -> f64 {
        if v.iter().any(|x| !x.is_finite() || x.abs() > SEARCH_LOG_BOX) {
            return f64::INFINITY;
        }
        let mut full = v.to_vec();
        full.push(b_hat.ln());
        let p = unpack_etas(&full);
        let ll = like.loglik(&p);
        let ground = ll.log_intensity - ll.compensators.iter().sum::<f64>();
        if ground.is_finite() { -ground } else { f64::INFINITY }
    };
    let clamp = |_: &mut [f64]| {};

    let (x_ground, trace, converged) = optimise(neg_obj, &x0, clamp, opts, mark_const);
    let mut x_full = x_ground;
    x_full.push(b_hat.ln());
    let params = unpack_etas(&x_full);
    let ll = like.loglik(&params);

    let (ci, _) = if opts.compute_ci {
        let mut f_log = |v: &[f64]| like.loglik(&unpack_etas(v)).total();
        let hess = optim::hessian_fd(&mut f_log, &x_full, 1e-4);
        ci_from_hessian(&hess, &x_full, opts.ci_level)
    } else {
        (vec![None; 6], false)
    };

    let (aic, bic) = information_criteria(ll.total(), 6, n);
    Ok(FitResult {
        model: FittedModel::Etas { m0: like.m0, params },
        loglik: ll.total(),
        log_intensity: ll.log_intensity,
        log_marks: ll.log_marks,
        compensators: ll.compensators,
        aic,
        bic,
        n_params: 6,
        n_events: n,
        param_names: etas_param_names(),
        estimates: x_full.iter().map(|v| v.exp()).collect(),
        ci,
        ci_level: opts.ci_level,
        converged,
        trace,
        fitted_on: cat.content_hash(),
        seed: opts.seed,
    })
}
