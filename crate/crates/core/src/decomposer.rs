//! Recovers a neuron's hyper preferred direction from its tracked modulation
//! states and the decoded kinematics by gradient descent on the mean squared
//! error `J = 1/(2T) Σ (ẑ_i − Kᵀx_i)²`.
//!
//! Each scheduled update treats the trailing history as one batch and runs
//! full-batch descent from the previous direction until the cost stops
//! moving. The batch is reduced once to its sufficient statistics
//! (`Σxxᵀ`, `Σẑx`, `Σẑ²`), so an iteration costs O(25) regardless of `T`.

use std::collections::VecDeque;

use nalgebra::Matrix5;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Direction, KinematicsVector, RegressionTerms};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    /// Step size `ε`.
    pub learning_rate: f64,
    /// History length `T` in bins.
    pub history_len: usize,
    /// Bins between updates.
    pub update_every: usize,
    /// Stop once `|J_prev − J|` falls below this.
    pub stop_threshold: f64,
    pub max_iters: usize,
    /// Components that descend; the rest keep their starting value.
    pub terms: RegressionTerms,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            history_len: 10_000,
            update_every: 200,
            stop_threshold: 5e-9,
            max_iters: 100_000,
            terms: RegressionTerms::All,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.history_len == 0 || self.update_every == 0 {
            return Err(Error::Config(
                "history_len and update_every must be >= 1".into(),
            ));
        }
        if !(self.stop_threshold > 0.0) {
            return Err(Error::Config(format!(
                "stop_threshold must be > 0, got {}",
                self.stop_threshold
            )));
        }
        Ok(())
    }
}

fn check_batch(z_hat: &[f64], x_hat: &[KinematicsVector]) -> Result<()> {
    if z_hat.len() != x_hat.len() {
        return Err(Error::InvalidArgument(format!(
            "{} states vs {} kinematics samples",
            z_hat.len(),
            x_hat.len()
        )));
    }
    if z_hat.is_empty() {
        return Err(Error::InsufficientData("empty history".into()));
    }
    Ok(())
}

/// `J = 1/(2T) Σ (ẑ_i − Kᵀx_i)²`, evaluated sample by sample.
pub fn cost(z_hat: &[f64], x_hat: &[KinematicsVector], k: &Direction) -> Result<f64> {
    check_batch(z_hat, x_hat)?;
    let sse: f64 = z_hat
        .iter()
        .zip(x_hat)
        .map(|(&z, x)| (z - k.dot(&x.as_vector())).powi(2))
        .sum();
    Ok(sse / (2.0 * z_hat.len() as f64))
}

/// `∂J/∂K = −(1/T) Σ (ẑ_i − Kᵀx_i) x_i`.
pub fn gradient(z_hat: &[f64], x_hat: &[KinematicsVector], k: &Direction) -> Result<Direction> {
    check_batch(z_hat, x_hat)?;
    let mut g = Direction::zeros();
    for (&z, x) in z_hat.iter().zip(x_hat) {
        let v = x.as_vector();
        g -= (z - k.dot(&v)) * v;
    }
    Ok(g / z_hat.len() as f64)
}

/// Second-order summary of a batch; cost and gradient are exact quadratic
/// forms in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `(1/T) Σ x xᵀ`
    pub gram: Matrix5<f64>,
    /// `(1/T) Σ ẑ x`
    pub cross: Direction,
    /// `(1/T) Σ ẑ²`
    pub zz: f64,
    pub len: usize,
}

impl Batch {
    pub fn new(z_hat: &[f64], x_hat: &[KinematicsVector]) -> Result<Self> {
        check_batch(z_hat, x_hat)?;
        let mut gram = Matrix5::zeros();
        let mut cross = Direction::zeros();
        let mut zz = 0.0;
        for (&z, x) in z_hat.iter().zip(x_hat) {
            let v = x.as_vector();
            gram.ger(1.0, &v, &v, 1.0);
            cross += z * v;
            zz += z * z;
        }
        let t = z_hat.len() as f64;
        Ok(Self {
            gram: gram / t,
            cross: cross / t,
            zz: zz / t,
            len: z_hat.len(),
        })
    }

    pub fn cost(&self, k: &Direction) -> f64 {
        // Clamp tiny negative round-off from the expanded form.
        (0.5 * (self.zz - 2.0 * k.dot(&self.cross) + k.dot(&(self.gram * k)))).max(0.0)
    }

    pub fn gradient(&self, k: &Direction) -> Direction {
        self.gram * k - self.cross
    }

    /// Normal-equation solution, pseudo-inverse when singular.
    pub fn least_squares(&self) -> Direction {
        match self.gram.cholesky() {
            Some(c) => c.solve(&self.cross),
            None => self
                .gram
                .pseudo_inverse(1e-12)
                .map(|p| p * self.cross)
                .unwrap_or_else(|_| Direction::zeros()),
        }
    }

    /// Normal-equation solution over `terms` only; other components are 0.
    pub fn restricted_least_squares(&self, terms: RegressionTerms) -> Direction {
        let idx = terms.indices();
        let m = idx.len();
        let gram = nalgebra::DMatrix::from_fn(m, m, |r, c| self.gram[(idx[r], idx[c])]);
        let cross = nalgebra::DVector::from_fn(m, |r, _| self.cross[idx[r]]);
        let sol = match gram.clone().cholesky() {
            Some(c) => c.solve(&cross),
            None => gram
                .pseudo_inverse(1e-12)
                .map(|p| p * cross)
                .unwrap_or_else(|_| nalgebra::DVector::zeros(m)),
        };
        let mut out = Direction::zeros();
        for (r, &i) in idx.iter().enumerate() {
            out[i] = sol[r];
        }
        out
    }

    /// Largest step size for which plain descent is stable (`2/λ_max`).
    pub fn stable_step_limit(&self) -> f64 {
        let lmax = self.gram.symmetric_eigenvalues().max();
        if lmax > 0.0 {
            2.0 / lmax
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdOutcome {
    pub direction: Direction,
    /// Cost before the first step and after every accepted step.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of times the step size was halved after sustained divergence.
    pub step_halvings: u32,
    pub final_learning_rate: f64,
}

impl SgdOutcome {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("trace holds the initial cost")
    }
}

const DIVERGENCE_RUN: usize = 10;

/// Descends from `k_prev` on one batch until the cost change drops below the
/// threshold. Ten consecutive cost increases halve the step and restart from
/// the best direction seen so far.
pub fn update_direction(k_prev: &Direction, batch: &Batch, cfg: &SgdConfig) -> Result<SgdOutcome> {
    cfg.validate()?;
    if batch.len > cfg.history_len {
        return Err(Error::InvalidArgument(format!(
            "batch of {} exceeds history length {}",
            batch.len, cfg.history_len
        )));
    }
    let mut eps = cfg.learning_rate;
    let mut k = *k_prev;
    let mut j = batch.cost(&k);
    let mut best = (k, j);
    let mut trace = vec![j];
    let mut rising = 0;
    let mut halvings = 0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        let k_next = k - eps * cfg.terms.mask(&batch.gradient(&k));
        let j_next = batch.cost(&k_next);
        if (j - j_next).abs() < cfg.stop_threshold {
            converged = true;
            break;
        }
        iterations += 1;
        if j_next > j || !j_next.is_finite() {
            rising += 1;
            if rising >= DIVERGENCE_RUN || !j_next.is_finite() {
                eps *= 0.5;
                halvings += 1;
                rising = 0;
                (k, j) = best;
                trace.push(j);
                log::debug!("cost diverging; step size halved to {eps}");
                continue;
            }
        } else {
            rising = 0;
        }
        k = k_next;
        j = j_next;
        if j < best.1 {
            best = (k, j);
        }
        trace.push(j);
    }
    Ok(SgdOutcome {
        direction: k,
        cost_trace: trace,
        iterations,
        converged,
        step_halvings: halvings,
        final_learning_rate: eps,
    })
}

/// One scheduled decomposition result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionUpdate {
    /// Last bin included in the batch.
    pub bin: usize,
    pub direction: Direction,
    pub final_cost: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Streaming decomposer: feed one `(ẑ, x̂)` pair per bin, get an update every
/// `update_every` bins over the trailing `min(T, seen)` samples.
#[derive(Debug, Clone)]
pub struct Decomposer {
    cfg: SgdConfig,
    direction: Direction,
    z: VecDeque<f64>,
    x: VecDeque<KinematicsVector>,
    seen: usize,
}

impl Decomposer {
    pub fn new(cfg: SgdConfig, k0: Direction) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            direction: k0,
            z: VecDeque::with_capacity(cfg.history_len),
            x: VecDeque::with_capacity(cfg.history_len),
            seen: 0,
        })
    }

    pub fn direction(&self) -> &Direction {
        &self.direction
    }

    pub fn push(&mut self, z_hat: f64, x_hat: KinematicsVector) -> Result<Option<DirectionUpdate>> {
        if self.z.len() == self.cfg.history_len {
            self.z.pop_front();
            self.x.pop_front();
        }
        self.z.push_back(z_hat);
        self.x.push_back(x_hat);
        self.seen += 1;
        if self.seen % self.cfg.update_every != 0 {
            return Ok(None);
        }
        let batch = Batch::new(self.z.make_contiguous(), self.x.make_contiguous())?;
        let out = update_direction(&self.direction, &batch, &self.cfg)?;
        if out.step_halvings > 0 {
            log::warn!(
                "decomposer step size halved {} times at bin {}",
                out.step_halvings,
                self.seen - 1
            );
        }
        self.direction = out.direction;
        Ok(Some(DirectionUpdate {
            bin: self.seen - 1,
            direction: out.direction,
            final_cost: out.final_cost(),
            iters: out.iterations,
            converged: out.converged,
        }))
    }
}

/// Batch form of [`Decomposer`] over whole series.
pub fn run_decomposition(
    z_hat: &[f64],
    x_hat: &[KinematicsVector],
    cfg: &SgdConfig,
    k0: &Direction,
) -> Result<Vec<DirectionUpdate>> {
    if z_hat.len() != x_hat.len() {
        return Err(Error::InvalidArgument(format!(
            "{} states vs {} kinematics samples",
            z_hat.len(),
            x_hat.len()
        )));
    }
    let mut d = Decomposer::new(*cfg, *k0)?;
    let mut out = Vec::with_capacity(z_hat.len() / cfg.update_every);
    for (&z, &x) in z_hat.iter().zip(x_hat) {
        if let Some(u) = d.push(z, x)? {
            out.push(u);
        }
    }
    Ok(out)
}
