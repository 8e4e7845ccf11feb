//! Independent reference implementations used as test oracles.

use spiketrack_core::model::Nonlinearity;

/// Exact Bayes filter for the GaPP state model on a uniform grid over
/// [0, 1]: with probability `1 - psi` the state moves by `N(f·z, r)`
/// (renormalized on the grid), otherwise it is redrawn uniformly. Returns the
/// posterior mean after every bin. The filter starts as a point mass at the
/// grid node nearest `z0`.
pub fn grid_filter(spikes: &[u32], nl: &Nonlinearity, f: f64, r: f64, psi: f64, dt: f64, z0: f64, nodes: usize) -> Vec<f64> {
    let h = 1.0 / (nodes - 1) as f64;
    let g: Vec<f64> = (0..nodes).map(|i| i as f64 * h).collect();
    let mut kern = vec![vec![0.0; nodes]; nodes];
    for (j, row) in kern.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let d = g[i] - f * g[j];
            *v = (-0.5 * d * d / r).exp();
        }
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row[j] = 1.0;
        }
    }
    let mut p = vec![0.0; nodes];
    p[(z0 / h).round() as usize] = 1.0;
    let mut out = Vec::with_capacity(spikes.len());
    for &dn in spikes {
        let mut pred = vec![psi / nodes as f64; nodes];
        for (j, &pj) in p.iter().enumerate() {
            if pj > 0.0 {
                for (i, v) in pred.iter_mut().enumerate() {
                    *v += (1.0 - psi) * pj * kern[j][i];
                }
            }
        }
        let logs: Vec<f64> = g.iter().map(|&z| nl.log_likelihood(z, dt, dn)).collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..nodes {
            p[i] = pred[i] * (logs[i] - m).exp();
        }
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        out.push(g.iter().zip(&p).map(|(a, b)| a * b).sum());
    }
    out
}

pub fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}
