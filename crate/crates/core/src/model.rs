//! Instantaneous linear-nonlinear-Poisson encoding model.
//!
//! A neuron's modulation state is the projection `z = Kᵀx` of the kinematics
//! vector `x = [px, py, vx, vy, 1]` on its hyper preferred direction `K`.
//! Firing intensity is `λ(z) = exp(a·z + b)` and the per-bin count is Poisson
//! with mean `λ·Δt`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector5};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{ensure_finite, Error, Result};

/// Hyper preferred direction over `[px, py, vx, vy, bias]`.
pub type Direction = Vector5<f64>;

/// Intensities are clamped here (events/s) so likelihoods stay finite when
/// particles run away.
pub const LAMBDA_MAX: f64 = 1000.0;

/// Bins whose smoothed rate is below this (events/s) carry no usable
/// log-rate and are skipped by the inverse-nonlinearity regression.
pub const LAMBDA_FLOOR: f64 = 1e-6;

/// Kinematics at one bin. The bias component of the 5-vector is implicit and
/// always exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicsVector {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
}

impl KinematicsVector {
    pub const fn new(px: f64, py: f64, vx: f64, vy: f64) -> Self {
        Self { px, py, vx, vy }
    }

    pub fn as_vector(&self) -> Direction {
        Direction::new(self.px, self.py, self.vx, self.vy, 1.0)
    }

    pub fn state(&self) -> [f64; 4] {
        [self.px, self.py, self.vx, self.vy]
    }

    pub fn from_state(s: &[f64; 4]) -> Self {
        Self::new(s[0], s[1], s[2], s[3])
    }

    pub fn is_finite(&self) -> bool {
        self.state().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicsSeries {
    /// Bin width in seconds.
    pub bin_width: f64,
    pub samples: Vec<KinematicsVector>,
}

impl KinematicsSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> KinematicsSeries {
        KinematicsSeries {
            bin_width: self.bin_width,
            samples: self.samples[start..end].to_vec(),
        }
    }
}

/// Per-bin event counts of one neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub bin_width: f64,
    pub counts: Vec<u32>,
}

impl SpikeTrain {
    pub fn new(bin_width: f64, counts: Vec<u32>) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bin width must be positive, got {bin_width}"
            )));
        }
        Ok(Self { bin_width, counts })
    }

    /// Binary ingestion: any bin with one or more events becomes 1.
    pub fn binarized(&self) -> SpikeTrain {
        SpikeTrain {
            bin_width: self.bin_width,
            counts: self.counts.iter().map(|&c| c.min(1)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn spike_count(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn slice(&self, start: usize, end: usize) -> SpikeTrain {
        SpikeTrain {
            bin_width: self.bin_width,
            counts: self.counts[start..end].to_vec(),
        }
    }
}

/// Exponential nonlinearity `λ(z) = exp(gain·z + offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub gain: f64,
    pub offset: f64,
}

impl Nonlinearity {
    pub const fn new(gain: f64, offset: f64) -> Self {
        Self { gain, offset }
    }

    /// Log-intensity, clamped at `ln(LAMBDA_MAX)`.
    #[inline]
    pub fn log_intensity(&self, z: f64) -> f64 {
        (self.gain * z + self.offset).min(LAMBDA_MAX.ln())
    }

    #[inline]
    pub fn intensity(&self, z: f64) -> f64 {
        self.log_intensity(z).exp()
    }

    /// Log of the Poisson probability of `dn` events in a bin of width `dt`
    /// given state `z`.
    #[inline]
    pub fn log_likelihood(&self, z: f64, dt: f64, dn: u32) -> f64 {
        let eta = self.log_intensity(z);
        let mean = eta.exp() * dt;
        match dn {
            0 => -mean,
            1 => eta + dt.ln() - mean,
            _ => dn as f64 * (eta + dt.ln()) - mean - ln_factorial(dn as u64),
        }
    }

    /// Inverse of the nonlinearity; `None` when the rate is below the floor
    /// or the gain is zero.
    pub fn invert(&self, rate: f64) -> Option<f64> {
        (rate >= LAMBDA_FLOOR && self.gain != 0.0).then(|| (rate.ln() - self.offset) / self.gain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningModel {
    pub direction: Direction,
    pub nonlinearity: Nonlinearity,
}

impl TuningModel {
    pub fn new(direction: Direction, nonlinearity: Nonlinearity) -> Self {
        Self {
            direction,
            nonlinearity,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.direction.iter().all(|v| v.is_finite())
            && self.nonlinearity.gain.is_finite()
            && self.nonlinearity.offset.is_finite()
    }
}

/// Piecewise-constant tuning of one neuron: `(start_bin, model)` segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSchedule {
    pub segments: Vec<(usize, TuningModel)>,
}

impl TuningSchedule {
    pub fn constant(model: TuningModel) -> Self {
        Self {
            segments: vec![(0, model)],
        }
    }

    pub fn new(segments: Vec<(usize, TuningModel)>) -> Result<Self> {
        match segments.first() {
            None => return Err(Error::InvalidArgument("empty tuning schedule".into())),
            Some((start, _)) if *start != 0 => {
                return Err(Error::InvalidArgument(format!(
                    "first schedule segment must start at bin 0, got {start}"
                )))
            }
            _ => {}
        }
        if segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument(
                "schedule start bins must be strictly increasing".into(),
            ));
        }
        if let Some((_, m)) = segments.iter().find(|(_, m)| !m.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite tuning {m:?}")));
        }
        Ok(Self { segments })
    }

    /// Model active at `bin`.
    pub fn at(&self, bin: usize) -> &TuningModel {
        let i = self.segments.partition_point(|(start, _)| *start <= bin);
        &self.segments[i.saturating_sub(1)].1
    }
}

/// `z = Kᵀx`.
pub fn modulation_state(direction: &Direction, x: &KinematicsVector) -> Result<f64> {
    ensure_finite("direction", direction.as_slice())?;
    ensure_finite("kinematics", &x.state())?;
    Ok(direction.dot(&x.as_vector()))
}

/// Intensity at `z`, with a flag set when the `LAMBDA_MAX` clamp was hit.
pub fn conditional_intensity(model: &TuningModel, z: f64) -> Result<(f64, bool)> {
    if !z.is_finite() {
        return Err(Error::InvalidArgument(format!("modulation state {z} not finite")));
    }
    let nl = model.nonlinearity;
    let raw = nl.gain * z + nl.offset;
    let saturated = raw > LAMBDA_MAX.ln();
    Ok((nl.intensity(z), saturated))
}

/// Poisson probability of `dn` events in a bin of width `dt` at rate `lambda`.
pub fn spike_probability(lambda: f64, dt: f64, dn: u32) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("intensity {lambda} must be >= 0")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("bin width {dt} must be > 0")));
    }
    let mean = lambda * dt;
    if mean == 0.0 {
        return Ok(if dn == 0 { 1.0 } else { 0.0 });
    }
    Ok((dn as f64 * mean.ln() - mean - ln_factorial(dn as u64)).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearityFit {
    pub nonlinearity: Nonlinearity,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood (up to a constant) after each accepted iterate,
    /// starting with the initial point.
    pub log_likelihood: Vec<f64>,
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 200;

/// Poisson maximum-likelihood fit of `(gain, offset)` given the modulation
/// states and counts. Newton iteration with step halving; the objective is
/// concave so the log-likelihood never decreases.
pub fn fit_nonlinearity(z: &[f64], spikes: &SpikeTrain) -> Result<NonlinearityFit> {
    if z.len() != spikes.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} states vs {} bins",
            z.len(),
            spikes.len()
        )));
    }
    if z.is_empty() {
        return Err(Error::InsufficientData("empty series".into()));
    }
    ensure_finite("z", z)?;
    let n = z.len() as f64;
    let z_mean = z.iter().sum::<f64>() / n;
    let z_var = z.iter().map(|v| (v - z_mean).powi(2)).sum::<f64>() / n;
    if z_var <= 1e-24 * (1.0 + z_mean * z_mean) {
        return Err(Error::DegenerateDesign(
            "modulation state series has zero variance".into(),
        ));
    }
    let total = spikes.spike_count();
    if total == 0 {
        return Err(Error::DegenerateDesign(
            "spike train is empty; offset diverges to -inf".into(),
        ));
    }
    let dt = spikes.bin_width;
    let counts: Vec<f64> = spikes.counts.iter().map(|&c| c as f64).collect();

    let log_lik = |a: f64, b: f64| -> f64 {
        z.iter()
            .zip(&counts)
            .map(|(&zi, &c)| {
                let eta = a * zi + b;
                c * eta - eta.exp() * dt
            })
            .sum()
    };

    let mut theta = Vector2::new(0.0, (total as f64 / (n * dt)).ln());
    let mut ll = log_lik(theta[0], theta[1]);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..NEWTON_MAX_ITERS {
        let mut grad = Vector2::zeros();
        let mut info = Matrix2::zeros();
        for (&zi, &c) in z.iter().zip(&counts) {
            let mu = (theta[0] * zi + theta[1]).exp() * dt;
            let r = c - mu;
            grad += Vector2::new(r * zi, r);
            info += Matrix2::new(mu * zi * zi, mu * zi, mu * zi, mu);
        }
        if grad.norm() < NEWTON_TOL {
            converged = true;
            break;
        }
        let Some(step) = info.cholesky().map(|ch| ch.solve(&grad)) else {
            return Err(Error::DegenerateDesign(
                "Fisher information is singular".into(),
            ));
        };
        iterations += 1;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = theta + step * scale;
            let cand_ll = log_lik(cand[0], cand[1]);
            if cand_ll.is_finite() && cand_ll >= ll {
                theta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        trace.push(ll);
        if !accepted {
            // No ascent possible at machine precision: at the optimum.
            converged = grad.norm() < 1e-6 * n.max(1.0);
            break;
        }
    }

    if !converged {
        log::warn!("nonlinearity fit did not converge after {iterations} iterations");
    }
    Ok(NonlinearityFit {
        nonlinearity: Nonlinearity::new(theta[0], theta[1]),
        iterations,
        converged,
        log_likelihood: trace,
    })
}

/// Gaussian smoothing with standard deviation `sigma_bins`, truncated at
/// ±3σ and renormalized near the edges.
pub fn gaussian_smooth(values: &[f64], sigma_bins: f64) -> Vec<f64> {
    smooth_strided(values, sigma_bins, 1)
}

/// [`gaussian_smooth`] evaluated only at every `stride`-th bin.
fn smooth_strided(values: &[f64], sigma_bins: f64, stride: usize) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    if sigma_bins <= 0.0 {
        return values.iter().step_by(stride).copied().collect();
    }
    let half = (3.0 * sigma_bins).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|d| (-0.5 * (d as f64 / sigma_bins).powi(2)).exp())
        .collect();
    let n = values.len() as isize;
    (0..n)
        .step_by(stride)
        .map(|i| {
            let lo = (i - half).max(0);
            let hi = (i + half).min(n - 1);
            let mut acc = 0.0;
            let mut norm = 0.0;
            for j in lo..=hi {
                let w = kernel[(j - i + half) as usize];
                acc += w * values[j as usize];
                norm += w;
            }
            acc / norm
        })
        .collect()
}

/// One windowed tuning estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowEstimate {
    pub center_bin: usize,
    pub direction: Direction,
    /// The normal equations were singular and the pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

/// Which components of `K` a windowed regression estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionTerms {
    All,
    /// Position and bias only; velocity components are reported as 0.
    /// Velocities of a lever task are near zero outside brief movements,
    /// which leaves their coefficients unidentifiable in short windows.
    Position,
}

impl RegressionTerms {
    pub fn indices(self) -> &'static [usize] {
        match self {
            RegressionTerms::All => &[0, 1, 2, 3, 4],
            RegressionTerms::Position => &[0, 1, 4],
        }
    }

    /// Zeroes the components this set leaves out.
    pub fn mask(self, k: &Direction) -> Direction {
        let mut out = Direction::zeros();
        for &i in self.indices() {
            out[i] = k[i];
        }
        out
    }
}

/// Smoothing width used for empirical rates (seconds).
pub const RATE_KERNEL_S: f64 = 0.6;

const REFINE_ITERS: usize = 8;

/// The refinement compares smoothed curves at every `σ/6`-th bin; they
/// barely change between those points.
fn refine_stride(sigma: f64) -> usize {
    ((sigma / 6.0).floor() as usize).max(1)
}
/// Smallest eigenvalue ratio accepted for a Gauss-Newton step.
const GN_CONDITION: f64 = 1e-10;
/// Relative singular-value cutoff for pseudo-inverse solves.
const SVD_RTOL: f64 = 1e-10;

/// Sliding-window recovery of `K` from known kinematics.
///
/// Each window's `K` is the least-squares fit of the smoothed model spike
/// probability `S[1 − exp(−λ(Kᵀx)Δt)]` to the smoothed binary train, with
/// `S` the Gaussian kernel of width `RATE_KERNEL_S`. Matching the two after
/// the same smoothing keeps the fit unbiased; mapping the smoothed rate back
/// through the log does not, because smoothing mixes rates across movements.
/// The starting point is that log-domain fit (smoothed rate through the
/// inverse nonlinearity against smoothed kinematics, bins with rates under
/// `LAMBDA_FLOOR` dropped), refined by Gauss-Newton.
pub fn spike_triggered_regression(
    kin: &KinematicsSeries,
    spikes: &SpikeTrain,
    nonlinearity: &Nonlinearity,
    window_s: f64,
    overlap_frac: f64,
    terms: RegressionTerms,
) -> Result<Vec<WindowEstimate>> {
    if kin.len() != spikes.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} kinematics vs {} bins",
            kin.len(),
            spikes.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(Error::InvalidArgument(format!(
            "overlap fraction {overlap_frac} outside [0, 1)"
        )));
    }
    let dt = spikes.bin_width;
    let window = (window_s / dt).round() as usize;
    if window < 2 || window > spikes.len() {
        return Err(Error::InsufficientData(format!(
            "window of {window} bins does not fit in {} bins",
            spikes.len()
        )));
    }
    let step = ((window as f64 * (1.0 - overlap_frac)).round() as usize).max(1);
    let sigma = RATE_KERNEL_S / dt;
    let idx = terms.indices();

    let occupancy: Vec<f64> = spikes.counts.iter().map(|&c| c.min(1) as f64).collect();
    let prob = gaussian_smooth(&occupancy, sigma);
    let target: Vec<Option<f64>> = prob
        .iter()
        .map(|&p| {
            let rate = -(1.0 - p.min(1.0 - 1e-12)).ln() / dt;
            nonlinearity.invert(rate)
        })
        .collect();
    let columns: Vec<Vec<f64>> = (0..4)
        .map(|c| {
            let col: Vec<f64> = kin.samples.iter().map(|s| s.state()[c]).collect();
            gaussian_smooth(&col, sigma)
        })
        .collect();

    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= spikes.len() {
        let rows: Vec<usize> = (start..start + window)
            .filter(|&k| target[k].is_some())
            .collect();
        let center_bin = start + window / 2;
        let (init, mut pseudo_inverse) = if rows.len() < idx.len() {
            (None, true)
        } else {
            let design = DMatrix::from_fn(rows.len(), idx.len(), |r, c| match idx[c] {
                4 => 1.0,
                j => columns[j][rows[r]],
            });
            let y = DVector::from_iterator(rows.len(), rows.iter().map(|&k| target[k].unwrap()));
            let (beta, pinv) = least_squares(&design, &y);
            (Some(beta), pinv)
        };
        // Spikeless or saturated windows start from the flat model at the
        // window's mean rate.
        let mut theta = init.unwrap_or_else(|| {
            let p = mean(&occupancy[start..start + window]).clamp(1e-6, 1.0 - 1e-6);
            let z = nonlinearity
                .invert(-(1.0 - p).ln() / dt)
                .unwrap_or(0.0);
            let mut t = DVector::zeros(idx.len());
            t[idx.len() - 1] = z;
            t
        });
        let x = &kin.samples[start..start + window];
        let p_hat = smooth_strided(&occupancy[start..start + window], sigma, refine_stride(sigma));
        pseudo_inverse |= refine_window(&mut theta, idx, x, &p_hat, nonlinearity, dt, sigma);
        let mut direction = Direction::zeros();
        for (c, &j) in idx.iter().enumerate() {
            direction[j] = theta[c];
        }
        if !direction.iter().all(|v| v.is_finite()) {
            log::warn!("window at bin {center_bin} gave a non-finite estimate");
        }
        out.push(WindowEstimate {
            center_bin,
            direction,
            pseudo_inverse,
        });
        start += step;
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn component(x: &KinematicsVector, j: usize) -> f64 {
    match j {
        4 => 1.0,
        j => x.state()[j],
    }
}

/// Smoothed model spike probability and its Jacobian columns.
fn smoothed_model(
    theta: &DVector<f64>,
    idx: &[usize],
    x: &[KinematicsVector],
    nl: &Nonlinearity,
    dt: f64,
    sigma: f64,
    with_jacobian: bool,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut p = Vec::with_capacity(x.len());
    let mut dp = Vec::with_capacity(x.len());
    for s in x {
        let z: f64 = idx.iter().enumerate().map(|(c, &j)| theta[c] * component(s, j)).sum();
        let q = nl.intensity(z) * dt;
        p.push(-(-q).exp_m1());
        let saturated = nl.log_intensity(z) >= LAMBDA_MAX.ln() || nl.log_intensity(z) <= LAMBDA_FLOOR.ln();
        dp.push(if saturated { 0.0 } else { (-q).exp() * q * nl.gain });
    }
    let stride = refine_stride(sigma);
    let m = smooth_strided(&p, sigma, stride);
    let jac = if with_jacobian {
        idx.iter()
            .map(|&j| {
                let col: Vec<f64> = x.iter().zip(&dp).map(|(s, d)| d * component(s, j)).collect();
                smooth_strided(&col, sigma, stride)
            })
            .collect()
    } else {
        Vec::new()
    };
    (m, jac)
}

/// Gauss-Newton with step halving on `Σ (p̂ − S[p(θ)])²`. Returns whether a
/// singular step had to be skipped.
fn refine_window(
    theta: &mut DVector<f64>,
    idx: &[usize],
    x: &[KinematicsVector],
    p_hat: &[f64],
    nl: &Nonlinearity,
    dt: f64,
    sigma: f64,
) -> bool {
    let sse = |m: &[f64]| m.iter().zip(p_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let (mut m, mut jac) = smoothed_model(theta, idx, x, nl, dt, sigma, true);
    let mut cost = sse(&m);
    let mut singular = false;
    for _ in 0..REFINE_ITERS {
        let k = idx.len();
        let gram = DMatrix::from_fn(k, k, |a, b| jac[a].iter().zip(&jac[b]).map(|(u, v)| u * v).sum());
        let rhs = DVector::from_fn(k, |a, _| {
            jac[a].iter().zip(p_hat.iter().zip(&m)).map(|(j, (ph, mm))| j * (ph - mm)).sum()
        });
        let delta = if condition_ok(&gram, GN_CONDITION) {
            match gram.clone().cholesky() {
                Some(c) => c.solve(&rhs),
                None => break,
            }
        } else {
            singular = true;
            let tol = SVD_RTOL * gram.amax();
            match gram.svd(true, true).solve(&rhs, tol) {
                Ok(d) => d,
                Err(_) => break,
            }
        };
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let trial = &*theta + &delta * step;
            let (mt, _) = smoothed_model(&trial, idx, x, nl, dt, sigma, false);
            let ct = sse(&mt);
            if ct < cost {
                *theta = trial;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
        let (mn, jn) = smoothed_model(theta, idx, x, nl, dt, sigma, true);
        let new_cost = sse(&mn);
        let done = cost - new_cost <= 1e-12 * cost;
        m = mn;
        jac = jn;
        cost = new_cost;
        if done {
            break;
        }
    }
    singular
}

/// Solves `min |Xβ − y|²` via the normal equations, falling back to the
/// SVD pseudo-inverse when they are singular.
fn least_squares(design: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, bool) {
    let gram = design.transpose() * design;
    let rhs = design.transpose() * y;
    if let Some(ch) = gram.clone().cholesky() {
        let beta = ch.solve(&rhs);
        if beta.iter().all(|v| v.is_finite()) && condition_ok(&gram, 1e-12) {
            return (beta, false);
        }
    }
    log::warn!("singular regression design; using pseudo-inverse");
    let svd = design.clone().svd(true, true);
    let tol = SVD_RTOL * svd.singular_values.max();
    let beta = svd
        .solve(y, tol)
        .unwrap_or_else(|_| DVector::zeros(design.ncols()));
    (beta, true)
}

fn condition_ok(gram: &DMatrix<f64>, ratio: f64) -> bool {
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().copied().fold(0.0f64, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > max * ratio
}
