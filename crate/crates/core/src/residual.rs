//! Transformed-time residual diagnostics.
//!
//! If the fitted model is correct, the compensator values
//! `τ_k = Λ_j(t_k)` at the events of subprocess `j` form a unit-rate
//! Poisson process, and `U_k = 1 − e^{−(τ_k − τ_{k−1})}` are i.i.d.
//! Uniform[0,1]. Departures are scored three ways: the mean-removed path
//! `τ_k − k` against Kolmogorov–Smirnov bands, a KS uniformity test on the
//! `U_k`, and a Pearson test for serial correlation between `U_k` and
//! `U_{k+1}`.
//!
//! The compensators are the same code used inside the likelihood, so the
//! final transformed time of each subprocess agrees with the likelihood's
//! compensator term exactly.

use std::io::Write;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::catalog::Catalog;
use crate::estimate::{EtasCompensator, FitResult, FittedModel, MdfhpCompensator};
use crate::model::{EtasParams, Event, MagnitudePartition, MdfhpParams, ModelError};

/// Asymptotic two-sided KS band constant at the 5% level: the path
/// `τ_k − k` stays within `±1.3581·√N` with probability 0.95.
pub const KS_BAND_95: f64 = 1.3581;
/// Same at the 1% level.
pub const KS_BAND_99: f64 = 1.6276;

#[derive(Debug, thiserror::Error)]
pub enum ResidualError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("magnitude {mag} falls outside the model's magnitude range")]
    MagnitudeOutOfRange { mag: f64 },
    #[error("a margin of the (U_k, U_{{k+1}}) pairs has zero variance")]
    DegenerateVariance,
}

/// Per-subprocess transformed times and transformed uniform inter-event
/// times. ETAS results use a single stream at index 0.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ResidualSeries {
    /// `taus[j][k]` = compensator of subprocess `j` at its `k`-th event.
    pub taus: Vec<Vec<f64>>,
    /// `u[j][k]` = `1 − exp(−(τ_k − τ_{k−1}))`, with `τ_0 = 0`.
    pub u: Vec<Vec<f64>>,
}

impl ResidualSeries {
    fn from_taus(taus: Vec<Vec<f64>>) -> Self {
        let u = taus
            .iter()
            .map(|ts| {
                let mut prev = 0.0;
                ts.iter()
                    .map(|&tau| {
                        // Equality occurs only for an event at the time
                        // origin (τ = 0), where U = 0.
                        debug_assert!(tau >= prev, "transformed times must not decrease");
                        let v = -(-(tau - prev)).exp_m1();
                        prev = tau;
                        v
                    })
                    .collect()
            })
            .collect();
        ResidualSeries { taus, u }
    }

    /// Number of residual streams (subprocesses).
    pub fn n_streams(&self) -> usize {
        self.taus.len()
    }
}

/// Residuals of a multidimensional model with known parameters.
pub fn mdfhp_residuals(
    partition: &MagnitudePartition,
    params: &MdfhpParams,
    events: &[Event],
) -> Result<ResidualSeries, ResidualError> {
    let comp = MdfhpCompensator::new(partition, events, params)?;
    let mut taus = vec![Vec::new(); partition.len()];
    for e in events {
        let j = partition
            .subprocess_of(e.mag)
            .ok_or(ResidualError::MagnitudeOutOfRange { mag: e.mag })?;
        taus[j].push(comp.at(j, e.t));
    }
    Ok(ResidualSeries::from_taus(taus))
}

/// Residuals of an ETAS model with known parameters (single stream).
pub fn etas_residuals(
    m0: f64,
    params: &EtasParams,
    events: &[Event],
) -> Result<ResidualSeries, ResidualError> {
    let comp = EtasCompensator::new(m0, events, params)?;
    let taus = vec![events.iter().map(|e| comp.at(e.t)).collect()];
    Ok(ResidualSeries::from_taus(taus))
}

/// Residuals of a fitted model on a catalogue.
pub fn transformed_times(fit: &FitResult, cat: &Catalog) -> Result<ResidualSeries, ResidualError> {
    match &fit.model {
        FittedModel::Mdfhp { boundaries, params } => {
            let cuts = &boundaries[1..boundaries.len() - 1];
            let partition = MagnitudePartition::new(boundaries[0], cuts)?;
            mdfhp_residuals(&partition, params, &cat.events)
        }
        FittedModel::Etas { m0, params } => etas_residuals(*m0, params, &cat.events),
    }
}

/// Mean-removed residual path of stream `j`: points `(k, τ_k − k)` for
/// `k = 1..N_j`.
pub fn mean_removed_path(series: &ResidualSeries, j: usize) -> Vec<(usize, f64)> {
    series.taus[j]
        .iter()
        .enumerate()
        .map(|(i, &tau)| (i + 1, tau - (i + 1) as f64))
        .collect()
}

/// Band half-widths `(b_0.05·√n, b_0.01·√n)` accompanying a mean-removed
/// path of length `n`.
pub fn ks_band_levels(n: usize) -> (f64, f64) {
    let s = (n as f64).sqrt();
    (KS_BAND_95 * s, KS_BAND_99 * s)
}

/// Two-sided one-sample KS test of `u` against Uniform[0,1]: returns
/// `(D_n, p)` with the asymptotic Kolmogorov p-value.
pub fn ks_uniform_test(u: &[f64]) -> Result<(f64, f64), ResidualError> {
    if u.len() < 5 {
        return Err(ResidualError::TooFewValues { needed: 5, got: u.len() });
    }
    let n = u.len() as f64;
    let mut sorted = u.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        d = d.max(((i + 1) as f64 / n - x).abs());
        d = d.max((x - i as f64 / n).abs());
    }
    Ok((d, kolmogorov_p(n.sqrt() * d)))
}

/// One-sided variant: `D⁺ = max_k (k/n − u_(k))` (sensitive to the
/// empirical CDF running above the uniform, i.e. too-small `U`'s), with
/// `p = e^{−2 n D⁺²}`.
pub fn ks_uniform_test_one_sided(u: &[f64]) -> Result<(f64, f64), ResidualError> {
    if u.len() < 5 {
        return Err(ResidualError::TooFewValues { needed: 5, got: u.len() });
    }
    let n = u.len() as f64;
    let mut sorted = u.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        d = d.max((i + 1) as f64 / n - x);
    }
    Ok((d, (-2.0 * n * d * d).exp().min(1.0)))
}

/// Survival function of the Kolmogorov distribution,
/// `P(sup|B(t)| > z) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²z²}`.
fn kolmogorov_p(z: f64) -> f64 {
    if z < 1e-8 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-2.0 * (k as f64 * z).powi(2)).exp();
        p += if k % 2 == 1 { term } else { -term };
    }
    p.clamp(0.0, 1.0)
}

/// Pearson test for serial correlation between `U_k` and `U_{k+1}`:
/// returns `(t, p)` where `t = r·√(m−2)/√(1−r²)` over the `m = n−1`
/// adjacent pairs and `p` is two-sided from the t distribution with `m−2`
/// degrees of freedom.
pub fn pearson_serial_test(u: &[f64]) -> Result<(f64, f64), ResidualError> {
    if u.len() < 10 {
        return Err(ResidualError::TooFewValues { needed: 10, got: u.len() });
    }
    let x = &u[..u.len() - 1];
    let y = &u[1..];
    let (r, _) = pearson_r(x, y)?;
    let m = x.len() as f64;
    let t = r * (m - 2.0).sqrt() / (1.0 - r * r).max(f64::MIN_POSITIVE).sqrt();
    Ok((t, t_two_sided_p(t, m - 2.0)))
}

fn pearson_r(x: &[f64], y: &[f64]) -> Result<(f64, usize), ResidualError> {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    // Catch exact constants including summation round-off.
    if sxx / m < 1e-20 || syy / m < 1e-20 {
        return Err(ResidualError::DegenerateVariance);
    }
    Ok(((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0), x.len()))
}

fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Pearson correlation of event counts in unit transformed-time bins
/// between every pair of residual streams, with two-sided p-values.
/// Independent streams should show no correlation; this is reported as a
/// diagnostic, not gated.
pub fn cross_stream_correlation(
    series: &ResidualSeries,
) -> Vec<(usize, usize, f64, f64)> {
    let bins: Vec<Vec<f64>> = series
        .taus
        .iter()
        .map(|ts| {
            let n_bins = ts.last().map_or(0, |&t| t.floor() as usize);
            let mut counts = vec![0.0; n_bins];
            for &t in ts {
                let b = t.floor() as usize;
                if b < n_bins {
                    counts[b] += 1.0;
                }
            }
            counts
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..bins.len() {
        for j in i + 1..bins.len() {
            let m = bins[i].len().min(bins[j].len());
            if m < 10 {
                continue;
            }
            if let Ok((r, _)) = pearson_r(&bins[i][..m], &bins[j][..m]) {
                let mf = m as f64;
                let t = r * (mf - 2.0).sqrt() / (1.0 - r * r).max(f64::MIN_POSITIVE).sqrt();
                out.push((i, j, r, t_two_sided_p(t, mf - 2.0)));
            }
        }
    }
    out
}

/// Write stream `j` as CSV rows `k, tau, tau_minus_k, u`.
pub fn write_residual_csv<W: Write>(
    mut out: W,
    series: &ResidualSeries,
    j: usize,
) -> std::io::Result<()> {
    writeln!(out, "k,tau,tau_minus_k,u")?;
    for (k, (&tau, &u)) in series.taus[j].iter().zip(&series.u[j]).enumerate() {
        let k1 = k + 1;
        writeln!(out, "{k1},{tau},{},{u}", tau - k1 as f64)?;
    }
    Ok(())
}

/// Write stream `j` as a standalone SVG: the mean-removed path in black
/// over a solid zero line, dashed ±95% band lines, and dotted ±99% band
/// lines.
pub fn write_residual_svg<W: Write>(
    mut out: W,
    series: &ResidualSeries,
    j: usize,
    title: &str,
) -> std::io::Result<()> {
    let path = mean_removed_path(series, j);
    let n = path.len();
    let (b95, b99) = ks_band_levels(n);
    let y_abs = path
        .iter()
        .map(|&(_, v)| v.abs())
        .fold(b99, f64::max)
        * 1.08;
    let (w, h, ml, mr, mt, mb) = (900.0, 360.0, 55.0, 15.0, 30.0, 35.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let x_of = |k: f64| ml + pw * k / (n.max(1) as f64);
    let y_of = |v: f64| mt + ph * (1.0 - (v + y_abs) / (2.0 * y_abs));

    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">"
    )?;
    writeln!(
        out,
        "  <text x=\"{}\" y=\"18\" text-anchor=\"middle\">{title}</text>",
        ml + pw / 2.0
    )?;
    writeln!(
        out,
        "  <rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" \
         fill=\"none\" stroke=\"#333\"/>"
    )?;
    let hline = |v: f64, dash: &str| {
        format!(
            "  <line x1=\"{ml}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"#888\"{dash}/>",
            y = y_of(v),
            x2 = ml + pw,
        )
    };
    writeln!(out, "{}", hline(0.0, ""))?;
    for &(lvl, dash) in &[
        (b95, " stroke-dasharray=\"8 5\""),
        (-b95, " stroke-dasharray=\"8 5\""),
        (b99, " stroke-dasharray=\"2 4\""),
        (-b99, " stroke-dasharray=\"2 4\""),
    ] {
        writeln!(out, "{}", hline(lvl, dash))?;
    }
    if !path.is_empty() {
        write!(out, "  <polyline fill=\"none\" stroke=\"#000\" points=\"")?;
        for &(k, v) in &path {
            write!(out, "{:.2},{:.2} ", x_of(k as f64), y_of(v))?;
        }
        writeln!(out, "\"/>")?;
    }
    writeln!(
        out,
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">event number</text>",
        ml + pw / 2.0,
        h - 10.0
    )?;
    writeln!(
        out,
        "  <text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" \
         text-anchor=\"middle\">tau_k - k</text>",
        mt + ph / 2.0,
        mt + ph / 2.0
    )?;
    writeln!(out, "</svg>")?;
    Ok(())
}
