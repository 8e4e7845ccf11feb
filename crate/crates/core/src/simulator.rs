//! Synthetic two-lever task data with an abrupt tuning switch.
//!
//! Kinematics are scripted: the position rests at the rest label, and each
//! trial moves to the high or low lever label, holds, and returns. Every
//! transition is a logistic ramp. Spikes are drawn from the encoding model
//! with a per-neuron tuning schedule that may change at the switch bin.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    modulation_state, Direction, KinematicsSeries, KinematicsVector, Nonlinearity, SpikeTrain,
    TuningModel, TuningSchedule,
};
use crate::seed::{component_rng, SimRng};

/// Logistic steepness (per bin) for a ramp that goes from 5% to 95% of the
/// step within ±`half_width_bins` of its center.
pub fn steepness_for_half_width(half_width_bins: f64) -> f64 {
    19f64.ln() / half_width_bins
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub n_trials: usize,
    /// Bins the lever is held.
    pub trial_len_bins: usize,
    pub rest_label: [f64; 2],
    pub high_label: [f64; 2],
    pub low_label: [f64; 2],
    /// Logistic steepness per bin; `f64::INFINITY` gives exact steps.
    pub sigmoid_steepness: f64,
    /// Inclusive range of the rest interval between trials.
    pub inter_trial_bins: (usize, usize),
    /// Rest bins between the end of the inter-trial interval and the cue.
    pub pre_cue_bins: usize,
    /// Bins from cue to the center of the ramp toward the lever.
    pub reaction_bins: usize,
    /// Bins after the hold before the ramp back to rest.
    pub reward_bins: usize,
    pub bin_width: f64,
    pub rng_seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            n_trials: 40,
            trial_len_bins: 100,
            rest_label: [0.0, 0.0],
            high_label: [1.0, 1.0],
            low_label: [1.0, -1.0],
            sigmoid_steepness: steepness_for_half_width(10.0),
            inter_trial_bins: (150, 300),
            pre_cue_bins: 50,
            reaction_bins: 50,
            reward_bins: 50,
            bin_width: 0.01,
            rng_seed: 0,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trial_len_bins == 0 {
            return bad("trial_len_bins must be > 0".into());
        }
        if self.inter_trial_bins.0 > self.inter_trial_bins.1 {
            return bad(format!("inter_trial_bins {:?} is not a range", self.inter_trial_bins));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return bad(format!("bin_width {} must be positive", self.bin_width));
        }
        if !(self.sigmoid_steepness > 0.0) {
            return bad(format!("sigmoid_steepness {} must be > 0", self.sigmoid_steepness));
        }
        let labels = [self.rest_label, self.high_label, self.low_label];
        if labels.iter().flatten().any(|v| !v.is_finite()) {
            return bad("labels must be finite".into());
        }
        Ok(())
    }

    /// Shortest possible trial including its inter-trial interval.
    pub fn min_trial_bins(&self) -> usize {
        self.inter_trial_bins.0 + self.pre_cue_bins + self.reaction_bins + self.trial_len_bins + self.reward_bins
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TrialStart,
    Press,
    Reward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lever {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMark {
    pub bin: usize,
    pub kind: EventKind,
    pub lever: Lever,
}

#[inline]
fn logistic_step(t: f64, steepness: f64) -> f64 {
    if steepness.is_infinite() {
        if t >= 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 / (1.0 + (-steepness * t).exp())
    }
}

/// Scripted task kinematics for `cfg.n_trials` trials.
pub fn generate_kinematics(cfg: &TaskConfig) -> Result<(KinematicsSeries, Vec<EventMark>)> {
    cfg.validate()?;
    let mut rng = component_rng(cfg.rng_seed, "simulator/kinematics");
    let mut events = Vec::with_capacity(cfg.n_trials * 3);
    // (center bin, step in px, step in py)
    let mut transitions: Vec<(f64, f64, f64)> = Vec::with_capacity(cfg.n_trials * 2);
    let mut t = 0usize;
    for _ in 0..cfg.n_trials {
        t += rng.random_range(cfg.inter_trial_bins.0..=cfg.inter_trial_bins.1) + cfg.pre_cue_bins;
        let lever = if rng.random::<bool>() { Lever::High } else { Lever::Low };
        let target = match lever {
            Lever::High => cfg.high_label,
            Lever::Low => cfg.low_label,
        };
        events.push(EventMark { bin: t, kind: EventKind::TrialStart, lever });
        t += cfg.reaction_bins;
        events.push(EventMark { bin: t, kind: EventKind::Press, lever });
        transitions.push((
            t as f64,
            target[0] - cfg.rest_label[0],
            target[1] - cfg.rest_label[1],
        ));
        t += cfg.trial_len_bins;
        events.push(EventMark { bin: t, kind: EventKind::Reward, lever });
        t += cfg.reward_bins;
        transitions.push((
            t as f64,
            cfg.rest_label[0] - target[0],
            cfg.rest_label[1] - target[1],
        ));
    }
    // Room for the final return ramp.
    let n_bins = t + cfg.inter_trial_bins.0.max(1);

    let positions: Vec<(f64, f64)> = (0..n_bins)
        .map(|k| {
            let mut p = (cfg.rest_label[0], cfg.rest_label[1]);
            for &(center, dx, dy) in &transitions {
                let s = logistic_step(k as f64 - center, cfg.sigmoid_steepness);
                p.0 += dx * s;
                p.1 += dy * s;
            }
            p
        })
        .collect();
    let samples = positions
        .iter()
        .enumerate()
        .map(|(k, &(px, py))| {
            let (prev_x, prev_y) = if k == 0 { (px, py) } else { positions[k - 1] };
            KinematicsVector::new(px, py, px - prev_x, py - prev_y)
        })
        .collect();
    Ok((
        KinematicsSeries {
            bin_width: cfg.bin_width,
            samples,
        },
        events,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpikeGenConfig {
    /// Collapse counts to {0, 1} as in binned ingestion.
    pub binarize: bool,
}

impl Default for SpikeGenConfig {
    fn default() -> Self {
        Self { binarize: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSpikes {
    pub trains: Vec<SpikeTrain>,
    /// Per neuron, per bin `z = Kᵀx` with the active tuning.
    pub truth_z: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Share of bins with `λΔt > 1` above which binarization is reported as
/// distorting the Poisson model.
const HIGH_RATE_WARN_FRACTION: f64 = 0.01;

/// Draws spikes for every schedule over `kin`. Neuron `i` uses its own RNG
/// stream derived from `seed` and `"simulator/spikes/n{i}"`.
pub fn generate_spikes(
    kin: &KinematicsSeries,
    schedules: &[TuningSchedule],
    cfg: &SpikeGenConfig,
    seed: u64,
) -> Result<GeneratedSpikes> {
    let dt = kin.bin_width;
    let mut trains = Vec::with_capacity(schedules.len());
    let mut truth_z = Vec::with_capacity(schedules.len());
    let mut warnings = Vec::new();
    for (n, sched) in schedules.iter().enumerate() {
        let mut rng: SimRng = component_rng(seed, &format!("simulator/spikes/n{n}"));
        let mut counts = Vec::with_capacity(kin.len());
        let mut zs = Vec::with_capacity(kin.len());
        let mut high_rate = 0usize;
        for (k, x) in kin.samples.iter().enumerate() {
            let model = sched.at(k);
            let z = modulation_state(&model.direction, x)?;
            let mean = model.nonlinearity.intensity(z) * dt;
            if mean > 1.0 {
                high_rate += 1;
            }
            let count = if mean > 0.0 {
                Poisson::new(mean)
                    .map_err(|e| Error::InvalidArgument(format!("poisson mean {mean}: {e}")))?
                    .sample(&mut rng) as u32
            } else {
                0
            };
            counts.push(if cfg.binarize { count.min(1) } else { count });
            zs.push(z);
        }
        if !kin.is_empty() && high_rate as f64 > HIGH_RATE_WARN_FRACTION * kin.len() as f64 {
            let msg = format!(
                "neuron {n}: λΔt > 1 in {high_rate} of {} bins; binarization distorts the Poisson model",
                kin.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        trains.push(SpikeTrain::new(dt, counts)?);
        truth_z.push(zs);
    }
    Ok(GeneratedSpikes {
        trains,
        truth_z,
        warnings,
    })
}

/// How a neuron's direction changes at the switch bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SwitchSpec {
    Static,
    /// Negate the kinematic components.
    Flip,
    /// Negate the kinematic components and reflect the bias about 1/2, so
    /// `z` becomes `1 - z` at every kinematic state.
    Mirror,
    /// Rotate the position pair and the velocity pair by `angle` (radians)
    /// and scale them; optionally set a new bias.
    RotateScale {
        angle: f64,
        scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<f64>,
    },
    /// Replace the whole direction.
    Replace { direction: [f64; 5] },
}

impl SwitchSpec {
    pub fn apply(&self, k: &Direction) -> Direction {
        match self {
            SwitchSpec::Static => *k,
            SwitchSpec::Flip => Direction::new(-k[0], -k[1], -k[2], -k[3], k[4]),
            SwitchSpec::Mirror => Direction::new(-k[0], -k[1], -k[2], -k[3], 1.0 - k[4]),
            SwitchSpec::RotateScale { angle, scale, bias } => {
                let (s, c) = angle.sin_cos();
                let rot = |x: f64, y: f64| (scale * (c * x - s * y), scale * (s * x + c * y));
                let (p0, p1) = rot(k[0], k[1]);
                let (v0, v1) = rot(k[2], k[3]);
                Direction::new(p0, p1, v0, v1, bias.unwrap_or(k[4]))
            }
            SwitchSpec::Replace { direction } => Direction::from(*direction),
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, SwitchSpec::Static)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronSpec {
    pub direction: [f64; 5],
    pub gain: f64,
    pub offset: f64,
    #[serde(default = "static_switch")]
    pub switch: SwitchSpec,
}

fn static_switch() -> SwitchSpec {
    SwitchSpec::Static
}

impl NeuronSpec {
    pub fn mc_model(&self) -> TuningModel {
        TuningModel::new(Direction::from(self.direction), Nonlinearity::new(self.gain, self.offset))
    }

    pub fn bc_model(&self) -> TuningModel {
        let mc = self.mc_model();
        TuningModel::new(self.switch.apply(&mc.direction), mc.nonlinearity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub mc_bins: usize,
    pub bc_bins: usize,
    pub task: TaskConfig,
    pub spikes: SpikeGenConfig,
    /// Per-neuron tuning; `None` selects the default 16-neuron panel.
    pub neurons: Option<Vec<NeuronSpec>>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            mc_bins: 10_000,
            bc_bins: 10_000,
            task: TaskConfig::default(),
            spikes: SpikeGenConfig::default(),
            neurons: None,
        }
    }
}

impl ScenarioSpec {
    pub fn neuron_specs(&self) -> Vec<NeuronSpec> {
        self.neurons.clone().unwrap_or_else(default_neuron_panel)
    }

    pub fn total_bins(&self) -> usize {
        self.mc_bins + self.bc_bins
    }
}

/// Indices of the neurons that change tuning in the default panel.
pub const DEFAULT_SWITCHING: [usize; 6] = [1, 4, 6, 9, 11, 14];

/// Nonlinearity gain shared by the default panel; every neuron fires at
/// 15 Hz when `z = 0.5`.
pub const PANEL_GAIN: f64 = 5.0;

/// The default 16-neuron panel: ten static neurons that cover both position
/// axes, and six weakly tuned neurons whose position tuning turns around and
/// strengthens fourfold at the switch.
pub fn default_neuron_panel() -> Vec<NeuronSpec> {
    // (K1, K2, bias) for static neurons; modulation states stay in [0.2, 0.9].
    let statics: [(f64, f64, f64); 10] = [
        (0.3, 0.2, 0.3),
        (0.15, -0.2, 0.45),
        (-0.2, 0.15, 0.6),
        (0.25, 0.0, 0.4),
        (0.0, 0.2, 0.5),
        (0.15, 0.25, 0.35),
        (0.0, -0.2, 0.5),
        (-0.25, -0.1, 0.65),
        (0.2, 0.1, 0.3),
        (0.1, -0.2, 0.45),
    ];
    // MC position tuning of switching neurons; BC = rotate by π, scale 4.
    let switching: [(f64, f64); 6] = [
        (0.0, 0.1),
        (0.0, -0.1),
        (0.0, 0.1),
        (0.0, -0.1),
        (0.0, 0.1),
        (0.0, -0.1),
    ];
    let mut statics = statics.iter();
    let mut switching = switching.iter();
    (0..16)
        .map(|i| {
            if DEFAULT_SWITCHING.contains(&i) {
                let &(k1, k2) = switching.next().unwrap();
                NeuronSpec {
                    direction: [k1, k2, 0.0, 0.0, 0.5],
                    gain: PANEL_GAIN,
                    offset: 15f64.ln() - PANEL_GAIN * 0.5,
                    switch: SwitchSpec::RotateScale { angle: PI, scale: 4.0, bias: None },
                }
            } else {
                let &(k1, k2, bias) = statics.next().unwrap();
                NeuronSpec {
                    direction: [k1, k2, 0.0, 0.0, bias],
                    gain: PANEL_GAIN,
                    offset: 15f64.ln() - PANEL_GAIN * 0.5,
                    switch: SwitchSpec::Static,
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub kinematics: KinematicsSeries,
    pub spikes: Vec<SpikeTrain>,
    pub schedules: Vec<TuningSchedule>,
    pub truth_z: Vec<Vec<f64>>,
    pub events: Vec<EventMark>,
    pub switch_bin: usize,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn n_bins(&self) -> usize {
        self.kinematics.len()
    }

    pub fn n_neurons(&self) -> usize {
        self.spikes.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.kinematics.bin_width
    }

    /// Truth direction of neuron `n` at `bin`.
    pub fn truth_direction(&self, n: usize, bin: usize) -> Direction {
        self.schedules[n].at(bin).direction
    }
}

/// Builds one MC→BC segment: `mc_bins` bins under the MC tunings followed by
/// `bc_bins` under the BC tunings.
pub fn make_mc_bc_scenario(spec: &ScenarioSpec, seed: u64) -> Result<SyntheticDataset> {
    let n_bins = spec.total_bins();
    if n_bins == 0 {
        return Err(Error::Config("scenario has no bins".into()));
    }
    let neurons = spec.neuron_specs();
    let mut task = spec.task.clone();
    task.rng_seed = seed;
    task.n_trials = n_bins / task.min_trial_bins() + 2;
    let (mut kin, mut events) = generate_kinematics(&task)?;
    kin.samples.truncate(n_bins);
    events.retain(|e| e.bin < n_bins);
    if kin.len() < n_bins {
        return Err(Error::Config(format!(
            "task produced {} bins, {n_bins} required",
            kin.len()
        )));
    }
    let schedules = neurons
        .iter()
        .map(|ns| {
            if ns.switch.is_static() || spec.bc_bins == 0 {
                Ok(TuningSchedule::constant(ns.mc_model()))
            } else if spec.mc_bins == 0 {
                Ok(TuningSchedule::constant(ns.bc_model()))
            } else {
                TuningSchedule::new(vec![(0, ns.mc_model()), (spec.mc_bins, ns.bc_model())])
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let generated = generate_spikes(&kin, &schedules, &spec.spikes, seed)?;
    Ok(SyntheticDataset {
        kinematics: kin,
        spikes: generated.trains,
        schedules,
        truth_z: generated.truth_z,
        events,
        switch_bin: spec.mc_bins,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_task(seed: u64) -> TaskConfig {
        TaskConfig {
            n_trials: 6,
            rng_seed: seed,
            ..TaskConfig::default()
        }
    }

    #[test]
    fn velocity_is_first_difference() {
        let (kin, _) = generate_kinematics(&small_task(3)).unwrap();
        for k in 1..kin.len() {
            let (a, b) = (kin.samples[k - 1], kin.samples[k]);
            assert_abs_diff_eq!(b.vx, b.px - a.px, epsilon = 1e-12);
            assert_abs_diff_eq!(b.vy, b.py - a.py, epsilon = 1e-12);
        }
        assert_eq!(kin.samples[0].vx, 0.0);
    }

    #[test]
    fn infinite_steepness_gives_exact_steps() {
        let cfg = TaskConfig {
            sigmoid_steepness: f64::INFINITY,
            ..small_task(5)
        };
        let (kin, events) = generate_kinematics(&cfg).unwrap();
        let labels = [cfg.rest_label, cfg.high_label, cfg.low_label];
        for s in &kin.samples {
            assert!(labels.iter().any(|l| l[0] == s.px && l[1] == s.py), "{s:?}");
        }
        let press = events.iter().find(|e| e.kind == EventKind::Press).unwrap();
        let target = match press.lever {
            Lever::High => cfg.high_label,
            Lever::Low => cfg.low_label,
        };
        assert_eq!([kin.samples[press.bin].px, kin.samples[press.bin].py], target);
        assert_eq!(kin.samples[press.bin - 1].py, 0.0);
    }

    #[test]
    fn kinematics_are_deterministic() {
        let a = generate_kinematics(&small_task(42)).unwrap();
        let b = generate_kinematics(&small_task(42)).unwrap();
        assert_eq!(a, b);
        let c = generate_kinematics(&small_task(43)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn event_order_within_trials() {
        let (_, events) = generate_kinematics(&small_task(9)).unwrap();
        for trial in events.chunks(3) {
            assert_eq!(trial[0].kind, EventKind::TrialStart);
            assert_eq!(trial[1].kind, EventKind::Press);
            assert_eq!(trial[2].kind, EventKind::Reward);
            assert!(trial[0].bin < trial[1].bin && trial[1].bin < trial[2].bin);
        }
    }

    #[test]
    fn invalid_task_rejected() {
        let cfg = TaskConfig {
            trial_len_bins: 0,
            ..TaskConfig::default()
        };
        assert!(matches!(generate_kinematics(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn switch_transforms_keep_bias() {
        let k = Direction::new(0.1, 0.2, 0.01, 0.02, 0.5);
        let f = SwitchSpec::Flip.apply(&k);
        assert_eq!(f, Direction::new(-0.1, -0.2, -0.01, -0.02, 0.5));
        let m = SwitchSpec::Mirror.apply(&k);
        assert_eq!(m, Direction::new(-0.1, -0.2, -0.01, -0.02, 0.5));
        let r = SwitchSpec::RotateScale { angle: PI, scale: 4.0, bias: None }.apply(&k);
        assert_abs_diff_eq!(r[0], -0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], -0.8, epsilon = 1e-12);
        assert_eq!(r[4], 0.5);
    }

    #[test]
    fn default_panel_states_stay_in_unit_interval() {
        let labels = [[0.0, 0.0], [1.0, 1.0], [1.0, -1.0]];
        for ns in default_neuron_panel() {
            for m in [ns.mc_model(), ns.bc_model()] {
                for l in labels {
                    let z = modulation_state(&m.direction, &KinematicsVector::new(l[0], l[1], 0.0, 0.0)).unwrap();
                    assert!((0.05..=0.95).contains(&z), "{z} for {ns:?}");
                }
            }
        }
    }
}
