//! Sequential Monte Carlo point-process decoding of the kinematics from the
//! spike trains of all neurons, given each neuron's current tuning.
//!
//! The stochastic state is `[px, py, vx, vy]`; the bias stays at 1. Particles
//! follow the linear dynamics `x_k = A·x_{k-1} + N(0, Q)` and are weighted by
//! the product of the neurons' Poisson likelihoods, computed as a sum of
//! logs.

use nalgebra::{DMatrix, Matrix4, SymmetricEigen, Vector4};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KinematicsSeries, KinematicsVector, SpikeTrain, TuningModel, TuningSchedule};
use crate::resample::{normalize_log_weights, systematic_resample};
use crate::seed::{rng_from_seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicsTransition {
    pub a: Matrix4<f64>,
    pub q: Matrix4<f64>,
}

impl KinematicsTransition {
    pub fn new(a: Matrix4<f64>, q: Matrix4<f64>) -> Result<Self> {
        if a.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("transition has non-finite entries".into()));
        }
        if (q - q.transpose()).amax() > 1e-12 * (1.0 + q.amax()) {
            return Err(Error::InvalidArgument("process covariance not symmetric".into()));
        }
        if q.symmetric_eigenvalues().min() < -1e-12 * (1.0 + q.amax()) {
            return Err(Error::InvalidArgument("process covariance not PSD".into()));
        }
        Ok(Self { a, q })
    }

    /// Matrix `L` with `L Lᵀ = Q`, valid for singular `Q`.
    fn noise_factor(&self, scale: f64) -> Matrix4<f64> {
        let eig = SymmetricEigen::new(self.q * scale);
        let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        eig.eigenvectors * Matrix4::from_diagonal(&sqrt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionFit {
    pub transition: KinematicsTransition,
    /// The lagged design was rank deficient and a pseudo-inverse was used.
    pub near_singular: bool,
}

/// Least squares `x_k ≈ A·x_{k-1}`; `Q` is the residual covariance,
/// symmetrized with negative eigenvalues floored at zero.
pub fn fit_kinematics_transition(kin: &KinematicsSeries) -> Result<TransitionFit> {
    let n = kin.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 kinematics samples, got {n}"
        )));
    }
    if let Some(i) = kin.samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("kinematics sample {i} not finite")));
    }
    let mut sxx = Matrix4::<f64>::zeros();
    let mut syx = Matrix4::<f64>::zeros();
    for w in kin.samples.windows(2) {
        let prev = Vector4::from(w[0].state());
        let next = Vector4::from(w[1].state());
        sxx.ger(1.0, &prev, &prev, 1.0);
        syx.ger(1.0, &next, &prev, 1.0);
    }
    let scale = sxx.amax().max(f64::MIN_POSITIVE);
    let eig = sxx.symmetric_eigenvalues();
    let near_singular = eig.min() <= 1e-10 * scale;
    let a = if near_singular {
        // Pseudo-inverse through the dynamic matrix type, which exposes the
        // tolerance-based SVD.
        let pinv = DMatrix::from_column_slice(4, 4, sxx.as_slice())
            .pseudo_inverse(1e-10 * scale)
            .map_err(|e| Error::DegenerateDesign(e.to_string()))?;
        syx * Matrix4::from_column_slice(pinv.as_slice())
    } else {
        syx * sxx.try_inverse().ok_or_else(|| Error::DegenerateDesign("singular design".into()))?
    };
    let mut q = Matrix4::<f64>::zeros();
    for w in kin.samples.windows(2) {
        let r = Vector4::from(w[1].state()) - a * Vector4::from(w[0].state());
        q.ger(1.0, &r, &r, 1.0);
    }
    q /= (n - 1) as f64;
    let q = floor_psd(&(0.5 * (q + q.transpose())));
    Ok(TransitionFit {
        transition: KinematicsTransition::new(a, q)?,
        near_singular,
    })
}

fn floor_psd(m: &Matrix4<f64>) -> Matrix4<f64> {
    let eig = SymmetricEigen::new(*m);
    let d = Matrix4::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    let out = eig.eigenvectors * d * eig.eigenvectors.transpose();
    0.5 * (out + out.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Particles (`N_x`).
    pub n_particles: usize,
    /// Multiplier on the fitted `Q` used for propagation.
    pub process_noise_scale: f64,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            n_particles: 1000,
            process_noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::Config(format!(
                "decoder n_particles must be >= 2, got {}",
                self.n_particles
            )));
        }
        if !(self.process_noise_scale >= 0.0 && self.process_noise_scale.is_finite()) {
            return Err(Error::Config(format!(
                "process_noise_scale must be >= 0, got {}",
                self.process_noise_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinParticleSet {
    pub states: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

/// Stepwise SMCPP decoder.
#[derive(Debug, Clone)]
pub struct KinematicsDecoder {
    a: Matrix4<f64>,
    noise: Matrix4<f64>,
    bin_width: f64,
    n: usize,
    states: Vec<Vector4<f64>>,
    log_w: Vec<f64>,
    rng: SimRng,
}

impl KinematicsDecoder {
    pub fn new(
        transition: &KinematicsTransition,
        cfg: &DecoderConfig,
        bin_width: f64,
        x0: KinematicsVector,
    ) -> Result<Self> {
        cfg.validate()?;
        if !x0.is_finite() {
            return Err(Error::InvalidArgument("initial kinematics not finite".into()));
        }
        if !(bin_width > 0.0) {
            return Err(Error::InvalidArgument(format!("bin width {bin_width} must be > 0")));
        }
        Ok(Self {
            a: transition.a,
            noise: transition.noise_factor(cfg.process_noise_scale),
            bin_width,
            n: cfg.n_particles,
            states: vec![Vector4::from(x0.state()); cfg.n_particles],
            log_w: vec![0.0; cfg.n_particles],
            rng: rng_from_seed(cfg.seed),
        })
    }

    /// Current (equally weighted, post-resampling) particle states.
    pub fn particles(&self) -> KinParticleSet {
        KinParticleSet {
            states: self.states.iter().map(|s| [s[0], s[1], s[2], s[3]]).collect(),
            weights: vec![1.0 / self.n as f64; self.n],
        }
    }

    /// Advances one bin given each neuron's count and tuning. Returns the
    /// weighted-mean estimate.
    pub fn step(&mut self, counts: &[u32], tunings: &[TuningModel]) -> KinematicsVector {
        debug_assert_eq!(counts.len(), tunings.len());
        let dt = self.bin_width;
        for (s, lw) in self.states.iter_mut().zip(self.log_w.iter_mut()) {
            let eps = Vector4::from_fn(|_, _| StandardNormal.sample(&mut self.rng));
            *s = self.a * *s + self.noise * eps;
            *lw = counts
                .iter()
                .zip(tunings)
                .map(|(&dn, t)| {
                    let k = &t.direction;
                    let z = k[0] * s[0] + k[1] * s[1] + k[2] * s[2] + k[3] * s[3] + k[4];
                    t.nonlinearity.log_likelihood(z, dt, dn)
                })
                .sum();
        }
        if !normalize_log_weights(&mut self.log_w) {
            log::debug!("kinematics weights degenerate; using uniform weights");
        }
        let w = &self.log_w;
        let mean = weighted_state_mean(&self.states, w);
        let idx = systematic_resample(w, self.n, &mut self.rng);
        self.states = idx.iter().map(|&i| self.states[i]).collect();
        KinematicsVector::new(mean[0], mean[1], mean[2], mean[3])
    }

    /// Normalized weights of the last step, before resampling.
    pub fn last_weights(&self) -> &[f64] {
        &self.log_w
    }
}

fn weighted_state_mean(states: &[Vector4<f64>], w: &[f64]) -> Vector4<f64> {
    // Anchored at the first particle so coincident particles give their exact
    // common value.
    let anchor = states[0];
    let shift = states
        .iter()
        .zip(w)
        .fold(Vector4::zeros(), |acc: Vector4<f64>, (s, &wi)| acc + wi * (s - anchor));
    anchor + shift
}

/// Decodes the whole recording. `tunings[n]` gives neuron `n`'s model at
/// every bin; `rng` seeds the particle filter.
pub fn smcpp_decode(
    spikes: &[SpikeTrain],
    tunings: &[TuningSchedule],
    transition: &KinematicsTransition,
    cfg: &DecoderConfig,
    bin_width: f64,
    n_bins: usize,
    x0: KinematicsVector,
) -> Result<Vec<KinematicsVector>> {
    if spikes.len() != tunings.len() {
        return Err(Error::InvalidArgument(format!(
            "{} spike trains vs {} tunings",
            spikes.len(),
            tunings.len()
        )));
    }
    if let Some(s) = spikes.iter().find(|s| s.len() != n_bins) {
        return Err(Error::InvalidArgument(format!(
            "spike train of {} bins, expected {n_bins}",
            s.len()
        )));
    }
    if let Some(s) = spikes.iter().find(|s| (s.bin_width - bin_width).abs() > 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "spike train bin width {} differs from {bin_width}",
            s.bin_width
        )));
    }
    let mut dec = KinematicsDecoder::new(transition, cfg, bin_width, x0)?;
    let mut counts = vec![0u32; spikes.len()];
    let mut models: Vec<TuningModel> = tunings.iter().map(|t| *t.at(0)).collect();
    let mut out = Vec::with_capacity(n_bins);
    for k in 0..n_bins {
        for (n, (s, t)) in spikes.iter().zip(tunings).enumerate() {
            counts[n] = s.counts[k];
            models[n] = *t.at(k);
        }
        out.push(dec.step(&counts, &models));
    }
    Ok(out)
}

/// Draws a trajectory from the linear-Gaussian dynamics (used to test the
/// transition fit).
pub fn simulate_linear_gaussian<R: Rng + ?Sized>(
    transition: &KinematicsTransition,
    x0: KinematicsVector,
    n: usize,
    bin_width: f64,
    rng: &mut R,
) -> KinematicsSeries {
    let l = transition.noise_factor(1.0);
    let mut x = Vector4::from(x0.state());
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        samples.push(KinematicsVector::new(x[0], x[1], x[2], x[3]));
        let eps = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
        x = transition.a * x + l * eps;
    }
    KinematicsSeries { bin_width, samples }
}
