//! Dual sequential Monte Carlo point-process baseline (DSMCPP).
//!
//! Tuning is tracked directly as a 5-dimensional random walk on `K` per
//! neuron, alternating each bin with the SMCPP kinematics step: first the
//! kinematics are decoded with the current `K̂`, then every neuron's `K`
//! particles take a random-walk step and are weighted by that neuron's
//! count given the freshly decoded kinematics.

use nalgebra::{Matrix5, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderConfig, KinematicsDecoder, KinematicsTransition};
use crate::error::{Error, Result};
use crate::model::{Direction, KinematicsVector, Nonlinearity, SpikeTrain, TuningModel};
use crate::resample::{normalize_log_weights, systematic_resample};
use crate::seed::{derive_seed, rng_from_seed, SimRng};

/// Covariance of successive differences between windowed `K` estimates,
/// symmetrized and floored to be positive semidefinite. Used as the
/// per-bin random-walk covariance.
pub fn fit_tuning_walk(windows: &[Direction]) -> Result<Matrix5<f64>> {
    if windows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 windowed estimates, got {}",
            windows.len()
        )));
    }
    if windows.iter().any(|k| k.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument("non-finite windowed estimate".into()));
    }
    let diffs: Vec<Direction> = windows.windows(2).map(|w| w[1] - w[0]).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().fold(Direction::zeros(), |a, d| a + d) / n;
    let mut cov = Matrix5::zeros();
    for d in &diffs {
        let c = d - mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    // A single difference has no spread to estimate; report its outer product
    // about zero instead of dividing by zero.
    if diffs.len() == 1 {
        let d = diffs[0];
        cov = d * d.transpose();
    } else {
        cov /= n - 1.0;
    }
    Ok(floor_psd(&(0.5 * (cov + cov.transpose()))))
}

fn floor_psd(m: &Matrix5<f64>) -> Matrix5<f64> {
    let eig = SymmetricEigen::new(*m);
    let d = Matrix5::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    let out = eig.eigenvectors * d * eig.eigenvectors.transpose();
    0.5 * (out + out.transpose())
}

fn psd_factor(m: &Matrix5<f64>) -> Matrix5<f64> {
    let eig = SymmetricEigen::new(*m);
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix5::from_diagonal(&sqrt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DsmcppConfig {
    pub n_tuning_particles: usize,
    pub n_kin_particles: usize,
    /// Multiplier on the walk covariance.
    pub walk_scale: f64,
    /// Multiplier on the kinematics process covariance.
    pub process_noise_scale: f64,
    pub seed: u64,
}

impl Default for DsmcppConfig {
    fn default() -> Self {
        Self {
            n_tuning_particles: 200,
            n_kin_particles: 1000,
            walk_scale: 1.0,
            process_noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl DsmcppConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tuning_particles < 2 {
            return Err(Error::Config(format!(
                "n_tuning_particles must be >= 2, got {}",
                self.n_tuning_particles
            )));
        }
        if !(self.walk_scale >= 0.0 && self.walk_scale.is_finite()) {
            return Err(Error::Config(format!(
                "walk_scale must be >= 0, got {}",
                self.walk_scale
            )));
        }
        self.decoder_config().validate()
    }

    fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            n_particles: self.n_kin_particles,
            process_noise_scale: self.process_noise_scale,
            seed: derive_seed(self.seed, "dsmcpp/kinematics"),
        }
    }
}

/// Random-walk particle filter over one neuron's `K`.
#[derive(Debug, Clone)]
struct TuningFilter {
    particles: Vec<Direction>,
    log_w: Vec<f64>,
    factor: Matrix5<f64>,
    nonlinearity: Nonlinearity,
    rng: SimRng,
}

impl TuningFilter {
    fn step(&mut self, x: &KinematicsVector, dn: u32, dt: f64) -> Direction {
        let v = x.as_vector();
        for (k, lw) in self.particles.iter_mut().zip(self.log_w.iter_mut()) {
            let eps = Direction::from_fn(|_, _| StandardNormal.sample(&mut self.rng));
            *k += self.factor * eps;
            *lw = self.nonlinearity.log_likelihood(k.dot(&v), dt, dn);
        }
        normalize_log_weights(&mut self.log_w);
        let anchor = self.particles[0];
        let khat = anchor
            + self
                .particles
                .iter()
                .zip(&self.log_w)
                .fold(Direction::zeros(), |a, (k, &w)| a + w * (k - anchor));
        let idx = systematic_resample(&self.log_w, self.particles.len(), &mut self.rng);
        self.particles = idx.iter().map(|&i| self.particles[i]).collect();
        khat
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsmcppOutput {
    /// `khat[n][k]`: neuron `n`'s tuning estimate after bin `k`.
    pub khat: Vec<Vec<Direction>>,
    pub xhat: Vec<KinematicsVector>,
    /// `zhat[n][k] = khat[n][k] · [xhat[k], 1]`.
    pub zhat: Vec<Vec<f64>>,
}

/// Runs the baseline over all bins, starting at the given tunings and
/// kinematics. The first `known.len()` bins have recorded kinematics, which
/// the tuning step uses in place of the decoded estimate.
pub fn dsmcpp_run(
    spikes: &[SpikeTrain],
    nonlinearities: &[Nonlinearity],
    transition: &KinematicsTransition,
    walk_covs: &[Matrix5<f64>],
    cfg: &DsmcppConfig,
    k0: &[Direction],
    x0: KinematicsVector,
    known: &[KinematicsVector],
) -> Result<DsmcppOutput> {
    cfg.validate()?;
    let n_neurons = spikes.len();
    if nonlinearities.len() != n_neurons || k0.len() != n_neurons || walk_covs.len() != n_neurons {
        return Err(Error::InvalidArgument(format!(
            "{n_neurons} spike trains, {} nonlinearities, {} initial tunings, {} walk covariances",
            nonlinearities.len(),
            k0.len(),
            walk_covs.len()
        )));
    }
    if let Some(n) = walk_covs.iter().position(|c| {
        c.iter().any(|v| !v.is_finite()) || c.symmetric_eigenvalues().min() < -1e-12 * (1.0 + c.amax())
    }) {
        return Err(Error::InvalidArgument(format!("walk covariance of neuron {n} not PSD")));
    }
    let n_bins = spikes.first().map_or(0, |s| s.len());
    let dt = spikes.first().map_or(0.01, |s| s.bin_width);
    if spikes.iter().any(|s| s.len() != n_bins || (s.bin_width - dt).abs() > 1e-12) {
        return Err(Error::InvalidArgument(
            "spike trains differ in length or bin width".into(),
        ));
    }

    let mut filters: Vec<TuningFilter> = (0..n_neurons)
        .map(|n| TuningFilter {
            particles: vec![k0[n]; cfg.n_tuning_particles],
            log_w: vec![0.0; cfg.n_tuning_particles],
            factor: psd_factor(&(walk_covs[n] * cfg.walk_scale)),
            nonlinearity: nonlinearities[n],
            rng: rng_from_seed(derive_seed(cfg.seed, &format!("dsmcpp/tuning/n{n}"))),
        })
        .collect();
    let mut decoder = KinematicsDecoder::new(transition, &cfg.decoder_config(), dt, x0)?;

    let mut khat: Vec<Vec<Direction>> = vec![Vec::with_capacity(n_bins); n_neurons];
    let mut zhat: Vec<Vec<f64>> = vec![Vec::with_capacity(n_bins); n_neurons];
    let mut xhat = Vec::with_capacity(n_bins);
    let mut current: Vec<TuningModel> = (0..n_neurons)
        .map(|n| TuningModel::new(k0[n], nonlinearities[n]))
        .collect();
    let mut counts = vec![0u32; n_neurons];
    for k in 0..n_bins {
        for (c, s) in counts.iter_mut().zip(spikes) {
            *c = s.counts[k];
        }
        let x = decoder.step(&counts, &current);
        for n in 0..n_neurons {
            let kn = filters[n].step(known.get(k).unwrap_or(&x), counts[n], dt);
            current[n].direction = kn;
            zhat[n].push(kn.dot(&x.as_vector()));
            khat[n].push(kn);
        }
        xhat.push(x);
    }
    Ok(DsmcppOutput { khat, xhat, zhat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::simulate_linear_gaussian;
    use nalgebra::{Matrix4, Vector5};
    use rand::Rng;

    #[test]
    fn constant_windows_give_zero_walk() {
        let k = Direction::new(0.1, 0.2, 0.0, 0.0, 0.5);
        assert_eq!(fit_tuning_walk(&[k; 10]).unwrap(), Matrix5::zeros());
    }

    #[test]
    fn single_window_rejected() {
        assert!(fit_tuning_walk(&[Direction::zeros()]).is_err());
        assert!(fit_tuning_walk(&[]).is_err());
    }

    #[test]
    fn recovers_increment_covariance() {
        let sd = Vector5::new(0.1, 0.05, 0.02, 0.02, 0.01);
        let mut rng = rng_from_seed(4);
        let mut k = Direction::zeros();
        let mut walk = vec![k];
        let n = 20_000;
        for _ in 0..n {
            k += Direction::from_fn(|i, _| {
                let e: f64 = StandardNormal.sample(&mut rng);
                sd[i] * e
            });
            walk.push(k);
        }
        let cov = fit_tuning_walk(&walk).unwrap();
        for i in 0..5 {
            let var = sd[i] * sd[i];
            // Standard error of a Gaussian sample variance: var·sqrt(2/(n-1)).
            let se = var * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((cov[(i, i)] - var).abs() < 3.0 * se, "dim {i}: {} vs {var}", cov[(i, i)]);
        }
    }

    fn toy_setup(n_bins: usize, seed: u64) -> (Vec<SpikeTrain>, Vec<Nonlinearity>, KinematicsTransition, Vec<Direction>) {
        let kt = KinematicsTransition::new(
            Matrix4::from_diagonal(&nalgebra::Vector4::new(0.99, 0.99, 0.0, 0.0)),
            Matrix4::from_diagonal(&nalgebra::Vector4::new(1e-3, 1e-3, 0.0, 0.0)),
        )
        .unwrap();
        let mut rng = rng_from_seed(seed);
        let kin = simulate_linear_gaussian(&kt, KinematicsVector::default(), n_bins, 0.01, &mut rng);
        let ks = vec![Direction::new(0.3, 0.1, 0.0, 0.0, 0.5), Direction::new(-0.1, 0.3, 0.0, 0.0, 0.5)];
        let nl = Nonlinearity::new(3.0, 1.5);
        let spikes = ks
            .iter()
            .map(|k| {
                let counts = kin
                    .samples
                    .iter()
                    .map(|x| {
                        let p = 1.0 - (-nl.intensity(k.dot(&x.as_vector())) * 0.01).exp();
                        (rng.random::<f64>() < p) as u32
                    })
                    .collect();
                SpikeTrain::new(0.01, counts).unwrap()
            })
            .collect();
        (spikes, vec![nl; 2], kt, ks)
    }

    #[test]
    fn zero_walk_freezes_tuning() {
        let (spikes, nls, kt, ks) = toy_setup(300, 1);
        let cfg = DsmcppConfig { n_kin_particles: 100, n_tuning_particles: 20, ..DsmcppConfig::default() };
        let out = dsmcpp_run(&spikes, &nls, &kt, &vec![Matrix5::zeros(); ks.len()], &cfg, &ks, KinematicsVector::default(), &[]).unwrap();
        for (n, k) in ks.iter().enumerate() {
            assert!(out.khat[n].iter().all(|kh| kh == k));
        }
    }

    #[test]
    fn zhat_is_the_projection() {
        let (spikes, nls, kt, ks) = toy_setup(200, 2);
        let cfg = DsmcppConfig { n_kin_particles: 100, n_tuning_particles: 20, ..DsmcppConfig::default() };
        let walk = Matrix5::identity() * 1e-5;
        let out = dsmcpp_run(&spikes, &nls, &kt, &vec![walk; ks.len()], &cfg, &ks, KinematicsVector::default(), &[]).unwrap();
        for n in 0..2 {
            for k in 0..200 {
                assert_eq!(out.zhat[n][k], out.khat[n][k].dot(&out.xhat[k].as_vector()));
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let (spikes, nls, kt, ks) = toy_setup(150, 3);
        let cfg = DsmcppConfig { n_kin_particles: 50, n_tuning_particles: 10, seed: 5, ..DsmcppConfig::default() };
        let walk = Matrix5::identity() * 1e-5;
        let a = dsmcpp_run(&spikes, &nls, &kt, &vec![walk; ks.len()], &cfg, &ks, KinematicsVector::default(), &[]).unwrap();
        let b = dsmcpp_run(&spikes, &nls, &kt, &vec![walk; ks.len()], &cfg, &ks, KinematicsVector::default(), &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let (spikes, nls, kt, ks) = toy_setup(10, 4);
        let cfg = DsmcppConfig::default();
        let x0 = KinematicsVector::default();
        assert!(dsmcpp_run(&spikes, &nls[..1], &kt, &vec![Matrix5::zeros(); ks.len()], &cfg, &ks, x0, &[]).is_err());
        assert!(dsmcpp_run(&spikes, &nls, &kt, &vec![-Matrix5::identity(); ks.len()], &cfg, &ks, x0, &[]).is_err());
        assert!(DsmcppConfig { n_tuning_particles: 1, ..cfg }.validate().is_err());
    }
}
