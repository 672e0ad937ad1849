//! Phase sweeps over `(α, v′)`, velocity-threshold search for a config,
//! and plain-text result files.
//!
//! Trial `k` of cell `(i, j)` draws from `derive_seed(master, [i, j, k])`,
//! so a cell's outcome never depends on other cells, on trial counts
//! elsewhere or on the worker count.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{estimate_v_threshold, VThreshold};
use crate::config::{halfsplit_speed, SimConfig, SweepSpec, VelocitySpec};
use crate::dynamics::simulate;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Adjacent-cell frequency increase (along growing `v′`) tolerated as
/// Monte Carlo noise.
pub const ADJACENT_NOISE: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha_index: usize,
    pub v_index: usize,
    pub alpha: f64,
    pub v_prime: f64,
    /// Completed trials.
    pub trials: usize,
    pub flock_count: usize,
    /// `flock_count / trials`
    pub frequency: f64,
    pub mean_t_flock: Option<f64>,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub n: usize,
    pub d: usize,
    pub kernel_family: String,
    pub seed: u64,
    pub trials_per_cell: usize,
    pub t_max: usize,
    pub flock_tol: f64,
    pub alphas: Vec<f64>,
    pub v_primes: Vec<f64>,
    pub code_version: String,
    /// First error message per failing cell.
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub meta: SweepMeta,
    /// Row-major: all `v′` for the first `α`, then the next `α`.
    pub cells: Vec<SweepCell>,
}

/// Seed of trial `trial` in cell `(alpha_index, v_index)`.
pub fn cell_seed(master: u64, alpha_index: usize, v_index: usize, trial: usize) -> u64 {
    derive_seed(master, &[alpha_index as u64, v_index as u64, trial as u64])
}

/// Runs every cell of `spec` on the HalfSplit family over `base`.
pub fn run_sweep(base: &SimConfig, spec: &SweepSpec) -> Result<SweepResult> {
    let mut check = base.clone();
    check.sweep = Some(spec.clone());
    check.validate()?;
    let tasks: Vec<(usize, usize, usize)> = (0..spec.alphas.len())
        .flat_map(|i| (0..spec.v_primes.len()).flat_map(move |j| (0..spec.trials).map(move |k| (i, j, k))))
        .collect();
    let outcomes: Vec<std::result::Result<Option<usize>, String>> = tasks
        .par_iter()
        .map(|&(i, j, k)| {
            let cfg = base.with_alpha(spec.alphas[i]).with_v_prime(spec.v_primes[j]);
            let run = || -> Result<Option<usize>> {
                let inst = cfg.instance(cell_seed(base.seed, i, j, k))?;
                Ok(simulate(inst.state, &inst.kernel, &inst.options)?.t_flock)
            };
            run().map_err(|e| e.to_string())
        })
        .collect();

    let mut cells = vec![];
    let mut failures = vec![];
    for (c, chunk) in outcomes.chunks(spec.trials).enumerate() {
        let (i, j) = (c / spec.v_primes.len(), c % spec.v_primes.len());
        let ok: Vec<Option<usize>> = chunk.iter().filter_map(|o| o.as_ref().ok().copied()).collect();
        if let Some(Err(e)) = chunk.iter().find(|o| o.is_err()) {
            failures.push(format!("cell ({i}, {j}): {e}"));
        }
        let times: Vec<usize> = ok.iter().flatten().copied().collect();
        let trials = ok.len();
        cells.push(SweepCell {
            alpha_index: i,
            v_index: j,
            alpha: spec.alphas[i],
            v_prime: spec.v_primes[j],
            trials,
            flock_count: times.len(),
            frequency: if trials > 0 { times.len() as f64 / trials as f64 } else { 0.0 },
            mean_t_flock: (!times.is_empty())
                .then(|| times.iter().map(|&t| t as f64).sum::<f64>() / times.len() as f64),
            failed: chunk.len() - trials,
        });
    }
    let kernel = base.kernel()?;
    Ok(SweepResult {
        meta: SweepMeta {
            n: base.n,
            d: base.d,
            kernel_family: kernel.family_name().to_string(),
            seed: base.seed,
            trials_per_cell: spec.trials,
            t_max: base.t_max,
            flock_tol: base.flock_tol,
            alphas: spec.alphas.clone(),
            v_primes: spec.v_primes.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            failures,
        },
        cells,
    })
}

/// The frequency-0.5 crossing of one `α` column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demarcation {
    pub alpha: f64,
    /// Log-linear interpolation of the first downward crossing.
    pub v_prime: Option<f64>,
    /// `v′` values on either side of that crossing.
    pub bracket: Option<(f64, f64)>,
    /// Number of sign changes of `frequency − 0.5` along the column.
    pub crossings: usize,
    /// Adjacent increases larger than [`ADJACENT_NOISE`].
    pub noisy_increases: usize,
}

impl SweepResult {
    pub fn column(&self, alpha_index: usize) -> Vec<&SweepCell> {
        self.cells.iter().filter(|c| c.alpha_index == alpha_index).collect()
    }

    pub fn frequency_grid(&self) -> Vec<Vec<f64>> {
        (0..self.meta.alphas.len()).map(|i| self.column(i).iter().map(|c| c.frequency).collect()).collect()
    }

    pub fn demarcation(&self) -> Vec<Demarcation> {
        (0..self.meta.alphas.len())
            .map(|i| {
                let col = self.column(i);
                let above: Vec<bool> = col.iter().map(|c| c.frequency >= 0.5).collect();
                let crossings = above.windows(2).filter(|w| w[0] != w[1]).count();
                let noisy_increases =
                    col.windows(2).filter(|w| w[1].frequency > w[0].frequency + ADJACENT_NOISE).count();
                let first = col.windows(2).find(|w| w[0].frequency >= 0.5 && w[1].frequency < 0.5);
                let (v_prime, bracket) = match first {
                    Some(w) => {
                        let (f0, f1) = (w[0].frequency, w[1].frequency);
                        let (l0, l1) = (w[0].v_prime.ln(), w[1].v_prime.ln());
                        let s = (f0 - 0.5) / (f0 - f1);
                        (Some((l0 + s * (l1 - l0)).exp()), Some((w[0].v_prime, w[1].v_prime)))
                    }
                    None => (None, None),
                };
                Demarcation { alpha: self.meta.alphas[i], v_prime, bracket, crossings, noisy_increases }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, &self.cells)
    }

    /// Writes `<stem>.csv` and `<stem>.json` (metadata plus demarcation).
    pub fn persist(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        self.write_csv(std::fs::File::create(stem.with_extension("csv"))?)?;
        #[derive(Serialize)]
        struct Meta<'a> {
            meta: &'a SweepMeta,
            demarcation: Vec<Demarcation>,
        }
        let json = serde_json::to_string_pretty(&Meta { meta: &self.meta, demarcation: self.demarcation() })?;
        std::fs::write(stem.with_extension("json"), json + "\n")?;
        Ok(())
    }

    /// Reads back the files written by [`SweepResult::persist`].
    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let stem = stem.as_ref();
        let cells = read_cells(std::fs::File::open(stem.with_extension("csv"))?)?;
        #[derive(Deserialize)]
        struct Meta {
            meta: SweepMeta,
        }
        let m: Meta = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        Ok(SweepResult { meta: m.meta, cells })
    }

    /// Self-contained SVG heat map with the demarcation polyline.
    pub fn to_svg(&self) -> String {
        let (na, nv) = (self.meta.alphas.len(), self.meta.v_primes.len());
        let (cw, ch, left, top) = (28.0, 22.0, 70.0, 20.0);
        let (w, h) = (left + cw * nv as f64 + 20.0, top + ch * na as f64 + 50.0);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"10\">\n"
        );
        // α grows upward
        let y_of = |i: usize| top + ch * (na - 1 - i) as f64;
        for c in &self.cells {
            let g = (255.0 * (1.0 - c.frequency)).round() as u8;
            s += &format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cw}\" height=\"{ch}\" fill=\"rgb({g},{g},255)\"><title>alpha={} v'={} freq={}</title></rect>\n",
                left + cw * c.v_index as f64,
                y_of(c.alpha_index),
                c.alpha,
                c.v_prime,
                c.frequency
            );
        }
        for (i, a) in self.meta.alphas.iter().enumerate() {
            s +=
                &format!("<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{a}</text>\n", left - 4.0, y_of(i) + ch * 0.7);
        }
        for (j, v) in self.meta.v_primes.iter().enumerate().step_by(2.max(nv / 10)) {
            s += &format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.3}</text>\n",
                left + cw * (j as f64 + 0.5),
                top + ch * na as f64 + 14.0
            );
        }
        s += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">v'</text>\n",
            left + cw * nv as f64 / 2.0,
            h - 8.0
        );
        s += &format!("<text x=\"12\" y=\"{:.1}\">alpha</text>\n", top + ch * na as f64 / 2.0);
        // demarcation: position along the log-spaced axis
        let lv: Vec<f64> = self.meta.v_primes.iter().map(|v| v.ln()).collect();
        let x_of = |v: f64| {
            let l = v.ln();
            let k = lv.windows(2).position(|w| l >= w[0] && l <= w[1]).unwrap_or(0);
            let frac = if lv.len() > 1 { (l - lv[k]) / (lv[k + 1] - lv[k]) } else { 0.0 };
            left + cw * (k as f64 + 0.5 + frac)
        };
        let pts: Vec<String> = self
            .demarcation()
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.v_prime.map(|v| format!("{:.1},{:.1}", x_of(v), y_of(i) + ch / 2.0)))
            .collect();
        if pts.len() > 1 {
            s += &format!("<polyline points=\"{}\" fill=\"none\" stroke=\"red\" stroke-width=\"2\"/>\n", pts.join(" "));
        }
        s += "</svg>\n";
        s
    }

    pub fn emit_plot(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_svg())?;
        Ok(())
    }
}

/// CSV with a header row from any serializable records.
pub fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cells<R: std::io::Read>(r: R) -> Result<Vec<SweepCell>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut cells = vec![];
    for rec in rd.deserialize() {
        cells.push(rec?);
    }
    Ok(cells)
}

/// `base` with initial speed `v`: the velocity norm bound of the family
/// (`v_max` for random velocities, the largest row norm for explicit ones).
pub fn with_speed(base: &SimConfig, v: f64) -> Result<SimConfig> {
    let velocity = match &base.velocity {
        VelocitySpec::Halfsplit { .. } => VelocitySpec::Halfsplit { v_prime: v / halfsplit_speed(1.0, base.n) },
        VelocitySpec::NearestOrigin { .. } => VelocitySpec::NearestOrigin { v0: Some(v), scale: None },
        VelocitySpec::IsolatedCluster { .. } => VelocitySpec::IsolatedCluster { v0: v },
        VelocitySpec::Random { .. } => VelocitySpec::Random { v_max: v },
        VelocitySpec::Explicit { rows } => {
            let m = rows.iter().map(|r| r.iter().map(|a| a * a).sum::<f64>().sqrt()).fold(0.0, f64::max);
            if m == 0.0 {
                return Err(Error::arg("explicit velocities are all zero"));
            }
            VelocitySpec::Explicit { rows: rows.iter().map(|r| r.iter().map(|a| a * v / m).collect()).collect() }
        }
    };
    Ok(SimConfig { velocity, ..base.clone() })
}

/// Bisection on the initial speed of the family in `base`. Trial `k` uses
/// the positions of `derive_seed(seed, [k])` at every level.
pub fn v_threshold_for_config(
    base: &SimConfig,
    v_lo: f64,
    v_hi: f64,
    trials: usize,
    iterations: usize,
) -> Result<VThreshold> {
    base.validate()?;
    let run = |v: f64, k: usize| -> Result<bool> {
        let inst = with_speed(base, v)?.instance(base.trial_seed(k))?;
        Ok(simulate(inst.state, &inst.kernel, &inst.options)?.flocked)
    };
    estimate_v_threshold(run, v_lo, v_hi, trials, iterations)
}
