//! End-to-end runs: calibration on the manual-control block, the GaPP dual
//! pipeline, the DSMCPP baseline, and the metrics that compare them.

use nalgebra::Matrix5;
use serde::{Deserialize, Serialize};

use crate::decoder::{fit_kinematics_transition, DecoderConfig, KinematicsDecoder, KinematicsTransition};
use crate::decomposer::{Batch, Decomposer, DirectionUpdate, SgdConfig};
use crate::dsmcpp::{dsmcpp_run, fit_tuning_walk, DsmcppConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    convergence_time, half_plane_entry, ks_rescale, mutual_information, nmse, Convergence, KsResult, Nmse,
    Rescaling, SpikeMarginal,
};
use crate::gapp::{fit_transition, GappConfig, ModulationTracker, TrackStep, TransitionModel};
use crate::model::{fit_nonlinearity, spike_triggered_regression, Direction, RegressionTerms, KinematicsVector, Nonlinearity, TuningModel};
use crate::seed::derive_seed;
use crate::simulator::{ScenarioSpec, SyntheticDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gapp,
    Dsmcpp,
    #[default]
    Both,
}

impl Method {
    pub fn runs_gapp(self) -> bool {
        matches!(self, Method::Gapp | Method::Both)
    }

    pub fn runs_dsmcpp(self) -> bool {
        matches!(self, Method::Dsmcpp | Method::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Window length for the windowed tuning estimates that set the
    /// baseline's random-walk covariance (seconds).
    pub walk_window_s: f64,
    pub walk_overlap: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            walk_window_s: 50.0,
            walk_overlap: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub n_bins_z: usize,
    pub marginal: SpikeMarginal,
    /// Use the randomized discrete-time correction in the KS rescaling.
    pub ks_jitter: bool,
    pub convergence_window: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            n_bins_z: 20,
            marginal: SpikeMarginal::ModelImplied,
            ks_jitter: true,
            convergence_window: 500,
        }
    }
}

/// Everything a run needs. Component seeds are derived from `seed`; the
/// `seed` fields of the sub-configs are overwritten when the config is
/// resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub method: Method,
    pub scenario: ScenarioSpec,
    /// Read the dataset from this directory instead of simulating.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<std::path::PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<std::path::PathBuf>,
    pub gapp: GappConfig,
    pub sgd: SgdConfig,
    pub decoder: DecoderConfig,
    pub dsmcpp: DsmcppConfig,
    pub calibration: CalibrationConfig,
    pub evaluation: EvaluationConfig,
    /// Tuning estimators see the recorded kinematics before the switch
    /// (manual control) and decoded kinematics after it.
    pub supervised_mc: bool,
    /// Tuning components the estimators fit; the rest stay at their
    /// starting value.
    pub tuning_terms: RegressionTerms,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: Method::Both,
            scenario: ScenarioSpec::default(),
            dataset: None,
            out_dir: None,
            gapp: GappConfig::default(),
            sgd: SgdConfig::default(),
            decoder: DecoderConfig::default(),
            dsmcpp: DsmcppConfig::default(),
            calibration: CalibrationConfig::default(),
            evaluation: EvaluationConfig::default(),
            supervised_mc: true,
            tuning_terms: RegressionTerms::Position,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.task.validate()?;
        self.gapp.validate()?;
        self.sgd.validate()?;
        self.decoder.validate()?;
        self.dsmcpp.validate()?;
        let c = &self.calibration;
        if !(c.walk_window_s > 0.0) || !(0.0..1.0).contains(&c.walk_overlap) {
            return Err(Error::Config(format!(
                "calibration window {} s / overlap {} invalid",
                c.walk_window_s, c.walk_overlap
            )));
        }
        let e = &self.evaluation;
        if e.n_bins_z == 0 || e.convergence_window == 0 {
            return Err(Error::Config("evaluation bin counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Materializes the derived component seeds.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.gapp.seed = derive_seed(self.seed, "gapp");
        c.decoder.seed = derive_seed(self.seed, "gapp/kinematics");
        c.dsmcpp.seed = derive_seed(self.seed, "dsmcpp");
        c.scenario.task.rng_seed = self.seed;
        c.sgd.terms = self.tuning_terms;
        c
    }
}

/// Trackers that have already run over the calibration block, with their
/// per-bin output; the GaPP pipeline resumes them instead of repeating the
/// work.
#[derive(Debug, Clone)]
pub struct WarmTrackers {
    pub trackers: Vec<ModulationTracker>,
    pub steps: Vec<Vec<TrackStep>>,
}

/// Model parameters learned from the manual-control block.
#[derive(Debug, Clone)]
pub struct Calibration {
    /// True nonlinearities, used by the modulation trackers and the baseline.
    pub nonlinearities: Vec<Nonlinearity>,
    pub z_transitions: Vec<TransitionModel>,
    /// True tunings at bin 0.
    pub k0: Vec<Direction>,
    pub kin_transition: KinematicsTransition,
    /// Per-bin random-walk covariance of the baseline's tuning particles.
    pub walk_covs: Vec<Matrix5<f64>>,
    pub x0: KinematicsVector,
    pub z0: Vec<f64>,
    /// Tracker estimates on the calibration block regressed on the true
    /// kinematics: the starting tunings of the decomposers.
    pub tracker_k0: Vec<Direction>,
    /// Nonlinearities refitted against `tracker_k0ᵀx`, used by the GaPP
    /// pipeline's decoder so that decomposed tunings map to rates on the
    /// scale of the tracker's estimates.
    pub tracker_nonlinearities: Vec<Nonlinearity>,
    pub warm: Option<WarmTrackers>,
}

fn mc_end(data: &SyntheticDataset) -> usize {
    if data.switch_bin > 1 && data.switch_bin <= data.n_bins() {
        data.switch_bin
    } else {
        data.n_bins()
    }
}

impl ExperimentConfig {
    /// Tracker config of one neuron (seed derived from the GaPP seed).
    pub fn gapp_neuron(&self, neuron: usize) -> GappConfig {
        tracker_config(&self.gapp, neuron)
    }
}

fn tracker_config(cfg: &GappConfig, neuron: usize) -> GappConfig {
    GappConfig {
        seed: derive_seed(cfg.seed, &format!("n{neuron}")),
        ..*cfg
    }
}

/// Fits the state dynamics on the bins before the switch. Tunings,
/// nonlinearities and the starting state are the ground truth at bin 0.
/// Expects a resolved config.
pub fn calibrate(data: &SyntheticDataset, cfg: &ExperimentConfig) -> Result<Calibration> {
    let end = mc_end(data);
    let dt = data.bin_width();
    let kin_mc = data.kinematics.slice(0, end);
    let fit = fit_kinematics_transition(&kin_mc)?;
    if fit.near_singular {
        log::warn!("kinematics design near singular; pseudo-inverse used");
    }
    let cal_cfg = &cfg.calibration;
    let window = (cal_cfg.walk_window_s / dt).round() as usize;
    let step = ((window as f64 * (1.0 - cal_cfg.walk_overlap)).round() as usize).max(1);
    let mut out = Calibration {
        nonlinearities: Vec::new(),
        z_transitions: Vec::new(),
        k0: Vec::new(),
        kin_transition: fit.transition,
        walk_covs: Vec::new(),
        x0: data.kinematics.samples[0],
        z0: Vec::new(),
        tracker_k0: Vec::new(),
        tracker_nonlinearities: Vec::new(),
        warm: None,
    };
    let mut warm = WarmTrackers { trackers: Vec::new(), steps: Vec::new() };
    for n in 0..data.n_neurons() {
        let model = data.schedules[n].at(0);
        let spikes_mc = data.spikes[n].slice(0, end);
        out.nonlinearities.push(model.nonlinearity);
        out.k0.push(model.direction);
        out.z0.push(data.truth_z[n][0]);
        let tm = fit_transition(&data.truth_z[n][..end])?;
        out.z_transitions.push(tm);

        if cfg.method.runs_dsmcpp() {
            let windows = spike_triggered_regression(
                &kin_mc,
                &spikes_mc,
                &model.nonlinearity,
                cal_cfg.walk_window_s,
                cal_cfg.walk_overlap,
                cfg.tuning_terms,
            )?;
            // Windows whose design was rank deficient (one lever only, so the
            // two position columns coincide) split the weight arbitrarily.
            let mut dirs: Vec<Direction> = windows.iter().filter(|w| !w.pseudo_inverse).map(|w| w.direction).collect();
            if dirs.len() < 2 {
                dirs = windows.iter().map(|w| w.direction).collect();
            }
            // Successive windows are `step` bins apart; a random walk spreads
            // linearly in time.
            out.walk_covs.push(fit_tuning_walk(&dirs)? / step as f64);
        }

        if cfg.method.runs_gapp() {
            let mut tracker = ModulationTracker::new(tracker_config(&cfg.gapp, n), model.nonlinearity, tm, dt, data.truth_z[n][0])?;
            let steps: Vec<TrackStep> = spikes_mc.counts.iter().map(|&dn| tracker.step(dn)).collect();
            let zhat: Vec<f64> = steps.iter().map(|s| s.zhat).collect();
            let k = Batch::new(&zhat, &kin_mc.samples)?.restricted_least_squares(cfg.tuning_terms);
            let z_scaled: Vec<f64> = kin_mc.samples.iter().map(|x| k.dot(&x.as_vector())).collect();
            let nl = fit_nonlinearity(&z_scaled, &spikes_mc)?;
            if !nl.converged {
                log::warn!("nonlinearity refit for neuron {n} did not converge");
            }
            out.tracker_k0.push(k);
            out.tracker_nonlinearities.push(nl.nonlinearity);
            warm.trackers.push(tracker);
            warm.steps.push(steps);
        }
    }
    if cfg.method.runs_gapp() {
        out.warm = Some(warm);
    }
    Ok(out)
}

/// Bins whose recorded kinematics the tuning estimators may use.
fn known_bins(data: &SyntheticDataset, cfg: &ExperimentConfig) -> usize {
    if cfg.supervised_mc { mc_end(data).min(data.switch_bin) } else { 0 }
}

/// Output of the GaPP dual pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct GappRun {
    /// `zhat[n][k]`.
    pub zhat: Vec<Vec<f64>>,
    pub ess: Vec<Vec<f64>>,
    pub range_violation: Vec<Vec<bool>>,
    /// One-step predictive intensity per neuron and bin (events/s).
    pub predicted_intensity: Vec<Vec<f64>>,
    /// Decomposer updates per neuron.
    pub updates: Vec<Vec<DirectionUpdate>>,
    pub xhat: Vec<KinematicsVector>,
}

/// Runs, per bin: the modulation tracker of every neuron, one decoder step
/// with the current tuning estimates, then the decomposers, which refresh the
/// tunings every `update_every` bins.
pub fn run_gapp(data: &SyntheticDataset, cal: &Calibration, cfg: &ExperimentConfig) -> Result<GappRun> {
    let n_neurons = data.n_neurons();
    let n_bins = data.n_bins();
    let dt = data.bin_width();
    let (mut trackers, replay) = match &cal.warm {
        Some(w) => (w.trackers.clone(), w.steps.clone()),
        None => (
            (0..n_neurons)
                .map(|n| {
                    ModulationTracker::new(tracker_config(&cfg.gapp, n), cal.nonlinearities[n], cal.z_transitions[n], dt, cal.z0[n])
                })
                .collect::<Result<Vec<_>>>()?,
            vec![Vec::new(); n_neurons],
        ),
    };
    let mut decomposers = cal
        .tracker_k0
        .iter()
        .map(|k| Decomposer::new(cfg.sgd, *k))
        .collect::<Result<Vec<_>>>()?;
    let mut decoder = KinematicsDecoder::new(&cal.kin_transition, &cfg.decoder, dt, cal.x0)?;
    let mut tunings: Vec<TuningModel> = (0..n_neurons)
        .map(|n| TuningModel::new(cal.tracker_k0[n], cal.tracker_nonlinearities[n]))
        .collect();

    let mut run = GappRun {
        zhat: vec![Vec::with_capacity(n_bins); n_neurons],
        ess: vec![Vec::with_capacity(n_bins); n_neurons],
        range_violation: vec![Vec::with_capacity(n_bins); n_neurons],
        predicted_intensity: vec![Vec::with_capacity(n_bins); n_neurons],
        updates: vec![Vec::new(); n_neurons],
        xhat: Vec::with_capacity(n_bins),
    };
    let known_until = known_bins(data, cfg);
    let mut counts = vec![0u32; n_neurons];
    for k in 0..n_bins {
        for n in 0..n_neurons {
            counts[n] = data.spikes[n].counts[k];
            let s = match replay[n].get(k) {
                Some(s) => *s,
                None => trackers[n].step(counts[n]),
            };
            run.zhat[n].push(s.zhat);
            run.ess[n].push(s.ess);
            run.range_violation[n].push(s.range_violation);
            run.predicted_intensity[n].push(s.predicted_intensity);
        }
        let x = decoder.step(&counts, &tunings);
        let xr = if k < known_until { data.kinematics.samples[k] } else { x };
        for n in 0..n_neurons {
            if let Some(u) = decomposers[n].push(run.zhat[n][k], xr)? {
                tunings[n].direction = u.direction;
                run.updates[n].push(u);
            }
        }
        run.xhat.push(x);
    }
    Ok(run)
}

/// Estimates of one method in a common shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub method: Method,
    pub zhat: Vec<Vec<f64>>,
    pub xhat: Vec<KinematicsVector>,
    /// `(bin, K̂)` at every update time.
    pub khat: Vec<Vec<(usize, Direction)>>,
}

impl From<&GappRun> for MethodRun {
    fn from(r: &GappRun) -> Self {
        Self {
            method: Method::Gapp,
            zhat: r.zhat.clone(),
            xhat: r.xhat.clone(),
            khat: r
                .updates
                .iter()
                .map(|u| u.iter().map(|u| (u.bin, u.direction)).collect())
                .collect(),
        }
    }
}

/// Runs the baseline. Its per-bin tuning estimates are sampled at the same
/// cadence as the decomposer's updates.
pub fn run_dsmcpp(
    data: &SyntheticDataset,
    cal: &Calibration,
    cfg: &ExperimentConfig,
) -> Result<(MethodRun, Vec<Vec<Direction>>)> {
    let out = dsmcpp_run(
        &data.spikes,
        &cal.nonlinearities,
        &cal.kin_transition,
        &cal.walk_covs,
        &cfg.dsmcpp,
        &cal.k0,
        cal.x0,
        &data.kinematics.samples[..known_bins(data, cfg)],
    )?;
    let every = cfg.sgd.update_every;
    let khat = out
        .khat
        .iter()
        .map(|ks| {
            ks.iter()
                .enumerate()
                .filter(|(k, _)| (k + 1) % every == 0)
                .map(|(k, d)| (k, *d))
                .collect()
        })
        .collect();
    Ok((
        MethodRun {
            method: Method::Dsmcpp,
            zhat: out.zhat,
            xhat: out.xhat,
            khat,
        },
        out.khat,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronMetrics {
    pub neuron: usize,
    pub switching: bool,
    /// Information of the estimated modulation state after the switch (bits).
    pub mi_bits: f64,
    /// Update cycles after the switch until `K̂` stays in the true
    /// half-plane; `None` if it never does.
    pub half_plane_cycles: Option<usize>,
    pub zhat_rmse_post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    /// Position NMSE over the bins after the switch.
    pub nmse_post: Nmse,
    pub nmse_all: Nmse,
    pub convergence: Convergence,
    /// Convergence in bins, with `Never` counted as the whole evaluation
    /// span.
    pub convergence_bins: usize,
    /// Mean half-plane entry over switching neurons, `Never` counted as one
    /// cycle past the last update.
    pub mean_half_plane_cycles: Option<f64>,
    pub neurons: Vec<NeuronMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsSummary {
    pub neuron: usize,
    pub ks_stat: f64,
    pub band_halfwidth: f64,
    pub inside_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub seed: u64,
    pub n_bins: usize,
    pub switch_bin: usize,
    pub bin_width: f64,
    /// Information of the true modulation state after the switch (bits).
    pub truth_mi_bits: Vec<f64>,
    pub ks: Vec<KsSummary>,
    pub methods: Vec<MethodMetrics>,
}

impl Metrics {
    pub fn method(&self, m: Method) -> Option<&MethodMetrics> {
        self.methods.iter().find(|x| x.method == m)
    }
}

/// Neurons whose true tuning differs on the two sides of the switch.
pub fn switching_neurons(data: &SyntheticDataset) -> Vec<usize> {
    if data.switch_bin == 0 || data.switch_bin >= data.n_bins() {
        return Vec::new();
    }
    (0..data.n_neurons())
        .filter(|&n| data.truth_direction(n, data.switch_bin - 1) != data.truth_direction(n, data.switch_bin))
        .collect()
}

/// Bins evaluated after the switch (the whole run when there is none).
fn eval_start(data: &SyntheticDataset) -> usize {
    if data.switch_bin < data.n_bins() { data.switch_bin } else { 0 }
}

pub fn truth_mi(data: &SyntheticDataset, ev: &EvaluationConfig) -> Result<Vec<f64>> {
    let s = eval_start(data);
    (0..data.n_neurons())
        .map(|n| {
            mutual_information(
                &data.truth_z[n][s..],
                &data.spikes[n].slice(s, data.n_bins()),
                data.schedules[n].at(data.n_bins() - 1),
                ev.n_bins_z,
                ev.marginal,
            )
        })
        .collect()
}

/// KS test of each neuron's one-step predictive intensity over the whole run;
/// `None` for neurons with fewer than two spikes.
pub fn ks_per_neuron(
    data: &SyntheticDataset,
    run: &GappRun,
    ev: &EvaluationConfig,
    seed: u64,
) -> Result<Vec<Option<KsResult>>> {
    (0..data.n_neurons())
        .map(|n| {
            let mode = if ev.ks_jitter {
                Rescaling::Jittered {
                    seed: derive_seed(seed, &format!("ks/n{n}")),
                }
            } else {
                Rescaling::Plain
            };
            match ks_rescale(&data.spikes[n], &run.predicted_intensity[n], mode) {
                Ok(r) => Ok(Some(r)),
                Err(Error::InsufficientData(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

pub fn method_metrics(
    data: &SyntheticDataset,
    cal: &Calibration,
    run: &MethodRun,
    ev: &EvaluationConfig,
) -> Result<MethodMetrics> {
    let s = eval_start(data);
    let n_bins = data.n_bins();
    let truth = &data.kinematics.samples;
    let nmse_post = nmse(&truth[s..], &run.xhat[s..])?;
    let nmse_all = nmse(truth, &run.xhat)?;
    let err: Vec<f64> = truth[s..]
        .iter()
        .zip(&run.xhat[s..])
        .map(|(t, e)| (t.px - e.px).powi(2) + (t.py - e.py).powi(2))
        .collect();
    let convergence = convergence_time(&err, ev.convergence_window)?;
    let switching = switching_neurons(data);
    let mut neurons = Vec::with_capacity(data.n_neurons());
    for n in 0..data.n_neurons() {
        let truth_k = data.truth_direction(n, n_bins - 1);
        let post: Vec<Direction> = run.khat[n].iter().filter(|(b, _)| *b >= s).map(|(_, k)| *k).collect();
        let mi_bits = mutual_information(
            &run.zhat[n][s..],
            &data.spikes[n].slice(s, n_bins),
            &TuningModel::new(truth_k, cal.nonlinearities[n]),
            ev.n_bins_z,
            ev.marginal,
        )?;
        let sq: f64 = run.zhat[n][s..]
            .iter()
            .zip(&data.truth_z[n][s..])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        neurons.push(NeuronMetrics {
            neuron: n,
            switching: switching.contains(&n),
            mi_bits,
            half_plane_cycles: half_plane_entry(&post, &truth_k).map(|i| i + 1),
            zhat_rmse_post: (sq / (n_bins - s) as f64).sqrt(),
        });
    }
    let mean_half_plane_cycles = if switching.is_empty() {
        None
    } else {
        let cap = |m: &NeuronMetrics| {
            let n_post = run.khat[m.neuron].iter().filter(|(b, _)| *b >= s).count();
            m.half_plane_cycles.unwrap_or(n_post + 1) as f64
        };
        Some(switching.iter().map(|&n| cap(&neurons[n])).sum::<f64>() / switching.len() as f64)
    };
    Ok(MethodMetrics {
        method: run.method,
        nmse_post,
        nmse_all,
        convergence,
        convergence_bins: convergence.bins_or(err.len()),
        mean_half_plane_cycles,
        neurons,
    })
}

/// All outputs of a run.
#[derive(Debug, Clone)]
pub struct Experiment {
    /// The resolved configuration the run used.
    pub config: ExperimentConfig,
    pub data: SyntheticDataset,
    pub calibration: Calibration,
    pub gapp: Option<GappRun>,
    pub dsmcpp: Option<MethodRun>,
    /// Baseline tuning estimate at every bin.
    pub dsmcpp_khat_per_bin: Option<Vec<Vec<Direction>>>,
    /// GaPP predictive-intensity KS tests per neuron.
    pub ks: Vec<Option<KsResult>>,
    pub metrics: Metrics,
}

/// Calibrates, runs the selected methods on `data` and evaluates them.
pub fn run_experiment(data: SyntheticDataset, cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    if (data.bin_width() - cfg.scenario.task.bin_width).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "dataset bin width {} differs from configured {}",
            data.bin_width(),
            cfg.scenario.task.bin_width
        )));
    }
    let cal = calibrate(&data, &cfg)?;
    let ev = cfg.evaluation;
    let mut methods = Vec::new();
    let mut ks = Vec::new();
    let gapp = if cfg.method.runs_gapp() {
        let run = run_gapp(&data, &cal, &cfg)?;
        methods.push(method_metrics(&data, &cal, &MethodRun::from(&run), &ev)?);
        ks = ks_per_neuron(&data, &run, &ev, cfg.seed)?;
        Some(run)
    } else {
        None
    };
    let (dsmcpp, per_bin) = if cfg.method.runs_dsmcpp() {
        let (run, per_bin) = run_dsmcpp(&data, &cal, &cfg)?;
        methods.push(method_metrics(&data, &cal, &run, &ev)?);
        (Some(run), Some(per_bin))
    } else {
        (None, None)
    };
    let metrics = Metrics {
        seed: data.seed,
        n_bins: data.n_bins(),
        switch_bin: data.switch_bin,
        bin_width: data.bin_width(),
        truth_mi_bits: truth_mi(&data, &ev)?,
        ks: ks
            .iter()
            .enumerate()
            .filter_map(|(n, r)| {
                r.as_ref().map(|r| KsSummary {
                    neuron: n,
                    ks_stat: r.ks_stat,
                    band_halfwidth: r.band_halfwidth,
                    inside_band: r.inside_band,
                })
            })
            .collect(),
        methods,
    };
    Ok(Experiment {
        config: cfg,
        data,
        calibration: cal,
        gapp,
        dsmcpp,
        dsmcpp_khat_per_bin: per_bin,
        ks,
        metrics,
    })
}
