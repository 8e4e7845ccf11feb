//! Files on disk: datasets, per-method estimate series, metrics and run
//! records, plus the cross-run comparison table.
//!
//! Series are CSV with a `bin_index` column; manifests, metrics and records
//! are JSON. Floats are written in shortest round-trip form, so a dataset
//! read back is value-identical to the one written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{paired_right_tail_t_test, KsResult};
use crate::experiment::{Experiment, ExperimentConfig, Method, MethodMetrics, Metrics};
use crate::model::{KinematicsSeries, KinematicsVector, SpikeTrain, TuningSchedule};
use crate::simulator::{EventKind, EventMark, Lever, SyntheticDataset};

pub const DATASET_MANIFEST: &str = "dataset.json";
pub const METHOD_MANIFEST: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const RECORD_FILE: &str = "record.json";
pub const DATASET_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Seconds.
    pub bin_width: f64,
    pub n_bins: usize,
    pub n_neurons: usize,
    pub switch_bin: usize,
    pub seed: u64,
    pub kinematics: String,
    pub spikes: Vec<String>,
    pub truth: String,
    pub events: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    schedules: Vec<TuningSchedule>,
    /// `z[n][k]`.
    z: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct KinRow {
    bin_index: usize,
    px: f64,
    py: f64,
    vx: f64,
    vy: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CountRow {
    bin_index: usize,
    count: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    bin_index: usize,
    kind: EventKind,
    lever: Lever,
}

#[derive(Debug, Serialize)]
struct ZhatRow {
    bin_index: usize,
    zhat: f64,
    ess: Option<f64>,
    range_violation_flag: u8,
}

#[derive(Debug, Serialize)]
struct KhatRow {
    bin_index: usize,
    k1: f64,
    k2: f64,
    k3: f64,
    k4: f64,
    k5: f64,
    final_cost: Option<f64>,
    iters: Option<usize>,
}

#[derive(Debug, Serialize)]
struct KsPlotRow {
    u_sorted: f64,
    uniform_quantile: f64,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e)
    }
}

/// Checks that rows are numbered 0, 1, 2, …
fn check_index(path: &Path, idx: impl Iterator<Item = usize>) -> Result<usize> {
    let mut n = 0;
    for (expected, got) in idx.enumerate() {
        if expected != got {
            return Err(Error::format(path, format!("row {expected} has bin_index {got}")));
        }
        n += 1;
    }
    Ok(n)
}

/// Writes `kinematics.csv`, `spikes_n<id>.csv`, `truth.json`, `events.csv`
/// and the manifest into `dir`.
pub fn write_dataset(dir: &Path, data: &SyntheticDataset) -> Result<DatasetManifest> {
    create_dir(dir)?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT,
        bin_width: data.bin_width(),
        n_bins: data.n_bins(),
        n_neurons: data.n_neurons(),
        switch_bin: data.switch_bin,
        seed: data.seed,
        kinematics: "kinematics.csv".into(),
        spikes: (0..data.n_neurons()).map(|n| format!("spikes_n{n}.csv")).collect(),
        truth: "truth.json".into(),
        events: "events.csv".into(),
    };
    write_csv(
        &dir.join(&manifest.kinematics),
        data.kinematics.samples.iter().enumerate().map(|(k, x)| KinRow {
            bin_index: k,
            px: x.px,
            py: x.py,
            vx: x.vx,
            vy: x.vy,
        }),
    )?;
    for (train, name) in data.spikes.iter().zip(&manifest.spikes) {
        write_csv(
            &dir.join(name),
            train.counts.iter().enumerate().map(|(k, &c)| CountRow { bin_index: k, count: c }),
        )?;
    }
    write_json(
        &dir.join(&manifest.truth),
        &TruthFile {
            schedules: data.schedules.clone(),
            z: data.truth_z.clone(),
        },
    )?;
    write_csv(
        &dir.join(&manifest.events),
        data.events.iter().map(|e| EventRow {
            bin_index: e.bin,
            kind: e.kind,
            lever: e.lever,
        }),
    )?;
    write_json(&dir.join(DATASET_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<SyntheticDataset> {
    let mpath = dir.join(DATASET_MANIFEST);
    let m: DatasetManifest = read_json(&mpath)?;
    if m.format_version != DATASET_FORMAT {
        return Err(Error::format(&mpath, format!("unsupported format version {}", m.format_version)));
    }
    if m.spikes.len() != m.n_neurons {
        return Err(Error::format(&mpath, format!("{} spike files for {} neurons", m.spikes.len(), m.n_neurons)));
    }
    let kpath = dir.join(&m.kinematics);
    let rows: Vec<KinRow> = read_csv(&kpath)?;
    check_index(&kpath, rows.iter().map(|r| r.bin_index))?;
    if rows.len() != m.n_bins {
        return Err(Error::format(&kpath, format!("{} rows, manifest says {}", rows.len(), m.n_bins)));
    }
    let kinematics = KinematicsSeries {
        bin_width: m.bin_width,
        samples: rows.iter().map(|r| KinematicsVector::new(r.px, r.py, r.vx, r.vy)).collect(),
    };
    if let Some(k) = kinematics.samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::format(&kpath, format!("non-finite kinematics at bin {k}")));
    }
    let mut spikes = Vec::with_capacity(m.n_neurons);
    for name in &m.spikes {
        let path = dir.join(name);
        let rows: Vec<CountRow> = read_csv(&path)?;
        check_index(&path, rows.iter().map(|r| r.bin_index))?;
        if rows.len() != m.n_bins {
            return Err(Error::format(&path, format!("{} rows, manifest says {}", rows.len(), m.n_bins)));
        }
        spikes.push(
            SpikeTrain::new(m.bin_width, rows.into_iter().map(|r| r.count).collect())
                .map_err(|e| Error::format(&path, e))?,
        );
    }
    let tpath = dir.join(&m.truth);
    let truth: TruthFile = read_json(&tpath)?;
    if truth.schedules.len() != m.n_neurons
        || truth.z.len() != m.n_neurons
        || truth.z.iter().any(|z| z.len() != m.n_bins)
    {
        return Err(Error::format(&tpath, "shape does not match the manifest"));
    }
    let epath = dir.join(&m.events);
    let events = read_csv::<EventRow>(&epath)?
        .into_iter()
        .map(|r| EventMark {
            bin: r.bin_index,
            kind: r.kind,
            lever: r.lever,
        })
        .collect();
    Ok(SyntheticDataset {
        kinematics,
        spikes,
        schedules: truth.schedules,
        truth_z: truth.z,
        events,
        switch_bin: m.switch_bin,
        seed: m.seed,
    })
}

/// Per-method output manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodManifest {
    pub method: Method,
    pub bin_width: f64,
    pub n_bins: usize,
    pub zhat: Vec<String>,
    pub khat: Vec<String>,
    pub xhat: String,
}

fn write_method_outputs(
    dir: &Path,
    method: Method,
    bin_width: f64,
    zhat: &[Vec<f64>],
    ess: Option<&[Vec<f64>]>,
    violation: &dyn Fn(usize, usize) -> bool,
    khat: &[Vec<KhatRowData>],
    xhat: &[KinematicsVector],
) -> Result<MethodManifest> {
    create_dir(dir)?;
    let n_neurons = zhat.len();
    let manifest = MethodManifest {
        method,
        bin_width,
        n_bins: xhat.len(),
        zhat: (0..n_neurons).map(|n| format!("zhat_n{n}.csv")).collect(),
        khat: (0..n_neurons).map(|n| format!("khat_n{n}.csv")).collect(),
        xhat: "xhat.csv".into(),
    };
    for n in 0..n_neurons {
        write_csv(
            &dir.join(&manifest.zhat[n]),
            zhat[n].iter().enumerate().map(|(k, &z)| ZhatRow {
                bin_index: k,
                zhat: z,
                ess: ess.map(|e| e[n][k]),
                range_violation_flag: violation(n, k) as u8,
            }),
        )?;
        write_csv(
            &dir.join(&manifest.khat[n]),
            khat[n].iter().map(|r| KhatRow {
                bin_index: r.bin,
                k1: r.k[0],
                k2: r.k[1],
                k3: r.k[2],
                k4: r.k[3],
                k5: r.k[4],
                final_cost: r.final_cost,
                iters: r.iters,
            }),
        )?;
    }
    write_csv(
        &dir.join(&manifest.xhat),
        xhat.iter().enumerate().map(|(k, x)| KinRow {
            bin_index: k,
            px: x.px,
            py: x.py,
            vx: x.vx,
            vy: x.vy,
        }),
    )?;
    write_json(&dir.join(METHOD_MANIFEST), &manifest)?;
    Ok(manifest)
}

struct KhatRowData {
    bin: usize,
    k: [f64; 5],
    final_cost: Option<f64>,
    iters: Option<usize>,
}

/// Writes `u_sorted,uniform_quantile` pairs of one KS test.
pub fn write_ks_plot(path: &Path, ks: &KsResult) -> Result<()> {
    let n = ks.rescaled_points.len() as f64;
    write_csv(
        path,
        ks.rescaled_points.iter().enumerate().map(|(j, &u)| KsPlotRow {
            u_sorted: u,
            uniform_quantile: (j as f64 + 0.5) / n,
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub spiketrack: String,
    pub dataset_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            spiketrack: env!("CARGO_PKG_VERSION").into(),
            dataset_format: DATASET_FORMAT,
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub dataset_s: f64,
    pub run_s: f64,
    pub write_s: f64,
}

/// Everything needed to reproduce and audit one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    pub versions: Versions,
    /// Output files relative to the record's directory, keyed by role.
    pub files: BTreeMap<String, PathBuf>,
    pub metrics: Metrics,
    pub timings: Timings,
}

/// Writes all estimates, `metrics.json`, KS plot data and the record into
/// `dir`. Methods go into `gapp/` and `dsmcpp/` subdirectories.
pub fn write_experiment(dir: &Path, exp: &Experiment, mut timings: Timings) -> Result<ExperimentRecord> {
    let t0 = std::time::Instant::now();
    create_dir(dir)?;
    let mut files = BTreeMap::new();
    let dt = exp.data.bin_width();
    if let Some(run) = &exp.gapp {
        let khat: Vec<Vec<KhatRowData>> = run
            .updates
            .iter()
            .map(|u| {
                u.iter()
                    .map(|u| KhatRowData {
                        bin: u.bin,
                        k: u.direction.into(),
                        final_cost: Some(u.final_cost),
                        iters: Some(u.iters),
                    })
                    .collect()
            })
            .collect();
        let sub = dir.join("gapp");
        write_method_outputs(
            &sub,
            Method::Gapp,
            dt,
            &run.zhat,
            Some(&run.ess),
            &|n, k| run.range_violation[n][k],
            &khat,
            &run.xhat,
        )?;
        files.insert("gapp".into(), PathBuf::from("gapp").join(METHOD_MANIFEST));
        for (n, ks) in exp.ks.iter().enumerate() {
            if let Some(ks) = ks {
                let name = format!("ksplot_n{n}.csv");
                write_ks_plot(&dir.join(&name), ks)?;
                files.insert(format!("ksplot_n{n}"), name.into());
            }
        }
    }
    if let Some(run) = &exp.dsmcpp {
        let khat: Vec<Vec<KhatRowData>> = run
            .khat
            .iter()
            .map(|ks| {
                ks.iter()
                    .map(|(bin, k)| KhatRowData {
                        bin: *bin,
                        k: (*k).into(),
                        final_cost: None,
                        iters: None,
                    })
                    .collect()
            })
            .collect();
        let (lo, hi) = (exp.config.gapp.z_min, exp.config.gapp.z_max);
        let sub = dir.join("dsmcpp");
        write_method_outputs(
            &sub,
            Method::Dsmcpp,
            dt,
            &run.zhat,
            None,
            &|n, k| !(lo..=hi).contains(&run.zhat[n][k]),
            &khat,
            &run.xhat,
        )?;
        files.insert("dsmcpp".into(), PathBuf::from("dsmcpp").join(METHOD_MANIFEST));
    }
    write_json(&dir.join(METRICS_FILE), &exp.metrics)?;
    files.insert("metrics".into(), METRICS_FILE.into());
    timings.write_s = t0.elapsed().as_secs_f64();
    let record = ExperimentRecord {
        config: exp.config.clone(),
        versions: Versions::default(),
        files,
        metrics: exp.metrics.clone(),
        timings,
    };
    write_json(&dir.join(RECORD_FILE), &record)?;
    Ok(record)
}

/// Reads a config from JSON or TOML (chosen by extension).
pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        _ => serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// The configured dataset: read from `cfg.dataset` when set, otherwise
/// simulated from the scenario and seed.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<SyntheticDataset> {
    match &cfg.dataset {
        Some(dir) => read_dataset(dir),
        None => crate::simulator::make_mc_bc_scenario(&cfg.scenario, cfg.seed),
    }
}

/// Accepts either a record file or a directory holding one.
pub fn read_record(path: &Path) -> Result<ExperimentRecord> {
    if path.is_dir() {
        read_json(&path.join(RECORD_FILE))
    } else {
        read_json(path)
    }
}

/// One compared segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub seed: u64,
    pub nmse_gapp: Option<f64>,
    pub nmse_dsmcpp: Option<f64>,
    pub convergence_gapp: Option<usize>,
    pub convergence_dsmcpp: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub nmse_gapp: Option<Summary>,
    pub nmse_dsmcpp: Option<Summary>,
    pub convergence_gapp: Option<Summary>,
    pub convergence_dsmcpp: Option<Summary>,
    /// Right-tail p-value of NMSE(DSMCPP) > NMSE(GaPP), when at least three
    /// paired segments exist.
    pub p_nmse: Option<f64>,
    pub p_convergence: Option<f64>,
    pub warnings: Vec<String>,
}

fn summarize(v: &[f64]) -> Option<Summary> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let variance = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some(Summary { mean, variance })
}

/// Tabulates records. Convergence counts `never` as the full evaluation span.
pub fn build_report(records: &[(String, ExperimentRecord)]) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to report".into()));
    }
    let mut warnings = Vec::new();
    let first = &records[0].1.config.scenario;
    for (label, r) in &records[1..] {
        let s = &r.config.scenario;
        if s.mc_bins != first.mc_bins || s.bc_bins != first.bc_bins || s.neurons != first.neurons {
            warnings.push(format!("{label}: scenario differs from {}", records[0].0));
        }
    }
    let get = |m: &Metrics, method| -> Option<MethodMetrics> { m.method(method).cloned() };
    let rows: Vec<ReportRow> = records
        .iter()
        .map(|(label, r)| {
            let g = get(&r.metrics, Method::Gapp);
            let d = get(&r.metrics, Method::Dsmcpp);
            ReportRow {
                label: label.clone(),
                seed: r.metrics.seed,
                nmse_gapp: g.as_ref().map(|m| m.nmse_post.combined),
                nmse_dsmcpp: d.as_ref().map(|m| m.nmse_post.combined),
                convergence_gapp: g.as_ref().map(|m| m.convergence_bins),
                convergence_dsmcpp: d.as_ref().map(|m| m.convergence_bins),
            }
        })
        .collect();
    let col = |f: &dyn Fn(&ReportRow) -> Option<f64>| -> Vec<f64> { rows.iter().filter_map(f).collect() };
    let paired = |f: &dyn Fn(&ReportRow) -> Option<(f64, f64)>| -> Result<Option<f64>> {
        let (a, b): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(f).unzip();
        if a.len() >= 3 { paired_right_tail_t_test(&a, &b).map(Some) } else { Ok(None) }
    };
    Ok(Report {
        nmse_gapp: summarize(&col(&|r| r.nmse_gapp)),
        nmse_dsmcpp: summarize(&col(&|r| r.nmse_dsmcpp)),
        convergence_gapp: summarize(&col(&|r| r.convergence_gapp.map(|c| c as f64))),
        convergence_dsmcpp: summarize(&col(&|r| r.convergence_dsmcpp.map(|c| c as f64))),
        p_nmse: paired(&|r| Some((r.nmse_dsmcpp?, r.nmse_gapp?)))?,
        p_convergence: paired(&|r| Some((r.convergence_dsmcpp? as f64, r.convergence_gapp? as f64)))?,
        rows,
        warnings,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl Report {
    /// One row per segment, then `mean` and `variance` rows and a `p_value`
    /// row when available.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidArgument(e.to_string());
        w.write_record(["label", "seed", "nmse_gapp", "nmse_dsmcpp", "convergence_gapp", "convergence_dsmcpp"])
            .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.seed.to_string(),
                opt(r.nmse_gapp),
                opt(r.nmse_dsmcpp),
                opt(r.convergence_gapp),
                opt(r.convergence_dsmcpp),
            ])
            .map_err(io)?;
        }
        let stats = [&self.nmse_gapp, &self.nmse_dsmcpp, &self.convergence_gapp, &self.convergence_dsmcpp];
        for (name, f) in [("mean", 0), ("variance", 1)] {
            let mut rec = vec![name.to_string(), String::new()];
            rec.extend(stats.iter().map(|s| opt(s.as_ref().map(|s| if f == 0 { s.mean } else { s.variance }))));
            w.write_record(rec).map_err(io)?;
        }
        if self.p_nmse.is_some() || self.p_convergence.is_some() {
            w.write_record([
                "p_value".to_string(),
                String::new(),
                opt(self.p_nmse),
                String::new(),
                opt(self.p_convergence),
                String::new(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn render_text(&self) -> String {
        let f = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let u = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        let mut out = format!(
            "{:<24} {:>6} {:>10} {:>11} {:>10} {:>11}\n",
            "segment", "seed", "nmse_gapp", "nmse_dsmcpp", "conv_gapp", "conv_dsmcpp"
        );
        for r in &self.rows {
            out += &format!(
                "{:<24} {:>6} {:>10} {:>11} {:>10} {:>11}\n",
                r.label,
                r.seed,
                f(r.nmse_gapp),
                f(r.nmse_dsmcpp),
                u(r.convergence_gapp),
                u(r.convergence_dsmcpp)
            );
        }
        let s = |x: &Option<Summary>| x.as_ref().map(|s| format!("{:.4} ± {:.4}", s.mean, s.variance.sqrt()));
        out += &format!(
            "mean ± sd: nmse gapp {} dsmcpp {}; convergence gapp {} dsmcpp {}\n",
            s(&self.nmse_gapp).unwrap_or_else(|| "-".into()),
            s(&self.nmse_dsmcpp).unwrap_or_else(|| "-".into()),
            s(&self.convergence_gapp).unwrap_or_else(|| "-".into()),
            s(&self.convergence_dsmcpp).unwrap_or_else(|| "-".into()),
        );
        match (self.p_nmse, self.p_convergence) {
            (None, None) => out += "paired t-test: needs at least three segments with both methods\n",
            (a, b) => {
                out += &format!(
                    "paired right-tail t-test (dsmcpp > gapp): nmse p = {}, convergence p = {}\n",
                    f(a),
                    f(b)
                )
            }
        }
        for w in &self.warnings {
            out += &format!("warning: {w}\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{make_mc_bc_scenario, ScenarioSpec};

    fn small_dataset(seed: u64) -> SyntheticDataset {
        let spec = ScenarioSpec {
            mc_bins: 600,
            bc_bins: 400,
            ..ScenarioSpec::default()
        };
        make_mc_bc_scenario(&spec, seed).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_value_identical() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_dataset(4);
        let m = write_dataset(dir.path(), &data).unwrap();
        assert_eq!(m.n_neurons, 16);
        assert_eq!(read_dataset(dir.path()).unwrap(), data);
    }

    #[test]
    fn same_seed_writes_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_dataset(a.path(), &small_dataset(9)).unwrap();
        write_dataset(b.path(), &small_dataset(9)).unwrap();
        for entry in fs::read_dir(a.path()).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
        }
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &small_dataset(1)).unwrap();
        fs::remove_file(dir.path().join("spikes_n3.csv")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("spikes_n3.csv"), "{err}");
        assert!(!err.is_config_error());
    }

    #[test]
    fn shuffled_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &small_dataset(1)).unwrap();
        let p = dir.path().join("spikes_n0.csv");
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(1, 2);
        fs::write(&p, lines.join("\n")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"seed": 3, "bogus": 1}"#).unwrap();
        assert!(read_config(&p).unwrap_err().is_config_error());
        fs::write(&p, r#"{"scenario": {"task": {"n_trials": -5}}}"#).unwrap();
        assert!(read_config(&p).unwrap_err().is_config_error());
        let t = dir.path().join("c.toml");
        fs::write(&t, "seed = 3\nmethod = \"gapp\"\n[gapp]\npsi = 0.08\n").unwrap();
        let cfg = read_config(&t).unwrap();
        assert_eq!((cfg.seed, cfg.method, cfg.gapp.psi), (3, Method::Gapp, 0.08));
    }

    #[test]
    fn ks_plot_positions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ks.csv");
        let ks = KsResult {
            rescaled_points: vec![0.1, 0.5, 0.7, 0.9],
            ks_stat: 0.1,
            band_halfwidth: 0.68,
            inside_band: true,
        };
        write_ks_plot(&p, &ks).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next(), Some("u_sorted,uniform_quantile"));
        assert_eq!(text.lines().nth(1), Some("0.1,0.125"));
        assert_eq!(text.lines().count(), 5);
    }
}
