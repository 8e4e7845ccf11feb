//! Goodness-of-fit, information and decoding metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{gaussian_smooth, Direction, KinematicsVector, SpikeTrain, TuningModel};
use crate::resample::weighted_mean;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// Rescaled intervals `u_j`, ascending.
    pub rescaled_points: Vec<f64>,
    pub ks_stat: f64,
    pub band_halfwidth: f64,
    pub inside_band: bool,
}

/// How the spike bin itself enters the rescaled interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Rescaling {
    /// `τ_j = Σ λ[k]·Δt` over the bins after the previous spike up to and
    /// including the spike bin.
    Plain,
    /// Discrete-time correction: the spike bin contributes
    /// `−ln(1 − r·(1 − e^{−λΔt}))` with `r ~ U(0,1)`, which makes `u_j`
    /// exactly uniform when each bin spikes with probability `1 − e^{−λΔt}`.
    Jittered { seed: u64 },
}

/// Time-rescaling KS test of a binned train against per-bin intensities
/// (events/s). Bins with several events count as one spike.
pub fn ks_rescale(spikes: &SpikeTrain, lambda: &[f64], mode: Rescaling) -> Result<KsResult> {
    if lambda.len() != spikes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} intensities for {} bins",
            lambda.len(),
            spikes.len()
        )));
    }
    if let Some(i) = lambda.iter().position(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "intensity at bin {i} is {}",
            lambda[i]
        )));
    }
    let spike_bins: Vec<usize> = (0..spikes.len()).filter(|&k| spikes.counts[k] > 0).collect();
    if spike_bins.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 spikes, got {}",
            spike_bins.len()
        )));
    }
    let dt = spikes.bin_width;
    let mut rng = match mode {
        Rescaling::Jittered { seed } => Some(rng_from_seed(seed)),
        Rescaling::Plain => None,
    };
    let mut u: Vec<f64> = spike_bins
        .windows(2)
        .map(|w| {
            let q_spike = lambda[w[1]] * dt;
            let between: f64 = lambda[w[0] + 1..w[1]].iter().map(|l| l * dt).sum();
            let tau = match rng.as_mut() {
                None => between + q_spike,
                Some(rng) => {
                    let r: f64 = rng.random();
                    between - (r * (-q_spike).exp_m1()).ln_1p()
                }
            };
            -(-tau).exp_m1()
        })
        .collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let ks_stat = u
        .iter()
        .enumerate()
        .map(|(j, &uj)| (uj - (j as f64 + 0.5) / n).abs())
        .fold(0.0, f64::max);
    let band_halfwidth = 1.36 / n.sqrt();
    Ok(KsResult {
        rescaled_points: u,
        ks_stat,
        band_halfwidth,
        inside_band: ks_stat <= band_halfwidth,
    })
}

/// Where `p(ΔN = 1)` in the information sum comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeMarginal {
    /// `Σ_z p(z)·p(ΔN = 1 | z)`, consistent with the conditional model, so
    /// the sum is a true mutual information (nonnegative, zero when the
    /// intensity ignores `z`).
    #[default]
    ModelImplied,
    /// Fraction of bins with a spike in the observed train.
    SpikeFraction,
}

/// Upper clamp on the per-bin spike probability.
const P_SPIKE_MAX: f64 = 1.0 - 1e-12;

/// Mutual information (bits) between a bin's spike/no-spike outcome and the
/// modulation state, with `p(z)` from an equal-width histogram of `z`.
pub fn mutual_information(
    z: &[f64],
    spikes: &SpikeTrain,
    model: &TuningModel,
    n_bins_z: usize,
    marginal: SpikeMarginal,
) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::InsufficientData("empty modulation series".into()));
    }
    if z.len() != spikes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} states for {} bins",
            z.len(),
            spikes.len()
        )));
    }
    if n_bins_z == 0 {
        return Err(Error::InvalidArgument("n_bins_z must be >= 1".into()));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("z[{i}] is not finite")));
    }
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins_z as f64;
    let mut counts = vec![0usize; n_bins_z];
    for &v in z {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(n_bins_z - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    let n = z.len() as f64;
    let dt = spikes.bin_width;
    let (pz, p1): (Vec<f64>, Vec<f64>) = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(b, &c)| {
            let center = lo + (b as f64 + 0.5) * width;
            let p = (model.nonlinearity.intensity(center) * dt).min(P_SPIKE_MAX);
            (c as f64 / n, p)
        })
        .unzip();
    let p1_marg = match marginal {
        SpikeMarginal::ModelImplied => weighted_mean(&p1, &pz),
        SpikeMarginal::SpikeFraction => {
            spikes.counts.iter().filter(|&&c| c > 0).count() as f64 / spikes.len() as f64
        }
    };
    let term = |p_cond: f64, p_marg: f64| {
        if p_cond > 0.0 && p_marg > 0.0 {
            p_cond * (p_cond / p_marg).log2()
        } else {
            0.0
        }
    };
    Ok(pz
        .iter()
        .zip(&p1)
        .map(|(&w, &p)| w * (term(p, p1_marg) + term(1.0 - p, 1.0 - p1_marg)))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiSeries {
    pub window_centers: Vec<usize>,
    pub mi_bits: Vec<f64>,
}

/// Mutual information over sliding windows of `window_s` seconds that
/// overlap by `overlap_s` seconds.
pub fn mi_sliding(
    z: &[f64],
    spikes: &SpikeTrain,
    model: &TuningModel,
    window_s: f64,
    overlap_s: f64,
    n_bins_z: usize,
    marginal: SpikeMarginal,
) -> Result<MiSeries> {
    let dt = spikes.bin_width;
    let window = (window_s / dt).round() as usize;
    let step = ((window_s - overlap_s) / dt).round() as usize;
    if window == 0 || step == 0 || overlap_s < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "window {window_s} s with overlap {overlap_s} s gives no valid step"
        )));
    }
    if window > z.len() || z.len() != spikes.len() {
        return Err(Error::InsufficientData(format!(
            "window of {window} bins does not fit {} states / {} bins",
            z.len(),
            spikes.len()
        )));
    }
    let mut out = MiSeries {
        window_centers: Vec::new(),
        mi_bits: Vec::new(),
    };
    let mut start = 0;
    while start + window <= z.len() {
        let seg = spikes.slice(start, start + window);
        out.mi_bits
            .push(mutual_information(&z[start..start + window], &seg, model, n_bins_z, marginal)?);
        out.window_centers.push(start + window / 2);
        start += step;
    }
    Ok(out)
}

/// Indices sorted by decreasing information; ties keep ascending index.
pub fn rank_neurons(mi: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..mi.len()).collect();
    idx.sort_by(|&a, &b| mi[b].total_cmp(&mi[a]));
    idx
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean squared error divided by the (population) variance of the truth.
pub fn nmse_series(truth: &[f64], est: &[f64]) -> Result<f64> {
    if truth.len() != est.len() || truth.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "series lengths {} and {}",
            truth.len(),
            est.len()
        )));
    }
    let m = mean(truth);
    let var: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    if !(var > 0.0) {
        return Err(Error::DegenerateDesign("true series has zero variance".into()));
    }
    let sse: f64 = truth.iter().zip(est).map(|(t, e)| (t - e) * (t - e)).sum();
    Ok(sse / var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nmse {
    pub px: f64,
    pub py: f64,
    /// Mean of the two position dimensions.
    pub combined: f64,
}

pub fn nmse(truth: &[KinematicsVector], est: &[KinematicsVector]) -> Result<Nmse> {
    let col = |s: &[KinematicsVector], f: fn(&KinematicsVector) -> f64| s.iter().map(f).collect::<Vec<_>>();
    let px = nmse_series(&col(truth, |x| x.px), &col(est, |x| x.px))?;
    let py = nmse_series(&col(truth, |x| x.py), &col(est, |x| x.py))?;
    Ok(Nmse {
        px,
        py,
        combined: 0.5 * (px + py),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    /// Bins from the start of the series.
    At(usize),
    Never,
}

impl Convergence {
    /// Numeric value with `Never` censored at `cap`.
    pub fn bins_or(&self, cap: usize) -> usize {
        match *self {
            Convergence::At(t) => t.min(cap),
            Convergence::Never => cap,
        }
    }
}

/// Time for an error series to settle within 1/0.9 of its final level.
///
/// The final level is the mean of the last `window` bins; the series is
/// smoothed by forward means over `window` bins. The result is the first bin
/// from which every smoothed value stays at or below `final/0.9`. `Never`
/// when the error grows (opening window already below 0.9 × final) or when
/// the settled stretch is shorter than one window beyond the reference.
pub fn convergence_time(err: &[f64], window: usize) -> Result<Convergence> {
    if window == 0 || err.len() < 2 * window {
        return Err(Error::InsufficientData(format!(
            "series of {} bins is shorter than two windows of {window}",
            err.len()
        )));
    }
    let n_smooth = err.len() - window + 1;
    let mut smoothed = Vec::with_capacity(n_smooth);
    let mut acc: f64 = err[..window].iter().sum();
    smoothed.push(acc / window as f64);
    for t in 1..n_smooth {
        acc += err[t + window - 1] - err[t - 1];
        smoothed.push(acc / window as f64);
    }
    let final_level = mean(&err[err.len() - window..]);
    let threshold = final_level / 0.9;
    if smoothed[0] < 0.9 * final_level {
        return Ok(Convergence::Never);
    }
    let t0 = match smoothed.iter().rposition(|&s| s > threshold) {
        None => 0,
        Some(i) => i + 1,
    };
    if t0 + 2 * window > err.len() {
        return Ok(Convergence::Never);
    }
    Ok(Convergence::At(t0))
}

/// One-sided paired t-test of `mean(a − b) > 0`.
pub fn paired_right_tail_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need two equal samples of at least 3, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite paired difference".into()));
    }
    let n = d.len() as f64;
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if m > 0.0 { 0.0 } else { 1.0 });
    }
    let t = m / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(dist.sf(t))
}

/// Per-bin spike probability estimated by Gaussian smoothing of the binary
/// train (standard deviation `kernel_width_s`).
pub fn ground_truth_rate(spikes: &SpikeTrain, kernel_width_s: f64) -> Vec<f64> {
    let occupancy: Vec<f64> = spikes.counts.iter().map(|&c| c.min(1) as f64).collect();
    gaussian_smooth(&occupancy, kernel_width_s / spikes.bin_width)
}

/// Pearson correlation; `NaN` when either series is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Dot product of the position components `(K1, K2)`.
pub fn position_alignment(est: &Direction, truth: &Direction) -> f64 {
    est[0] * truth[0] + est[1] * truth[1]
}

/// First index from which every estimate lies in the open half-plane of
/// `truth`'s position tuning.
pub fn half_plane_entry(estimates: &[Direction], truth: &Direction) -> Option<usize> {
    match estimates
        .iter()
        .rposition(|k| position_alignment(k, truth) <= 0.0)
    {
        None if estimates.is_empty() => None,
        None => Some(0),
        Some(i) if i + 1 < estimates.len() => Some(i + 1),
        Some(_) => None,
    }
}
