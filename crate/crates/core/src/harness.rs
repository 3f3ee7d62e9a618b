//! Subcommand bodies: single runs, the preset x regime grid, the gradient
//! self-check and compute accounting.

use crate::config::{ConfigError, ExperimentConfig};
use crate::container::ContainerError;
use crate::data::Regime;
use crate::nets::DiscriminatorNet;
use crate::report::{metrics_csv, mean_std, real};
use crate::schedule::{CapacitySchedule, SchedulePreset};
use crate::selfcheck::{run_gradcheck, GradcheckReport, GRADCHECK_SEEDS};
use crate::tensor::{OpKind, TensorError};
use crate::trainer::{IterationRecord, TrainConfig, TrainError, Trainer};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Train(TrainError),
    #[error("training diverged at step {step}: {msg}")]
    Divergence { step: u64, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("gradient check failed for: {0}")]
    CheckFailed(String),
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { step, .. } => HarnessError::Divergence { step, msg: e.to_string() },
            TrainError::Config(m) => HarnessError::Config(ConfigError::Invalid(m)),
            other => HarnessError::Train(other),
        }
    }
}

impl HarnessError {
    /// 2 config error, 3 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Divergence { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// What a finished (or diverged) run leaves in `summary.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_name: String,
    pub seed: u64,
    pub status: String,
    pub iterations: u64,
    pub final_toy_frechet: f64,
    pub final_overfit_gap: f64,
    pub final_modes_covered: usize,
    /// Sum of per-step single-sample discriminator multiply-adds.
    pub total_flops: u128,
    pub wall_clock_s: f64,
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        format!(
            "run = {}\nseed = {}\nstatus = {}\niterations = {}\nfinal_toy_frechet = {}\nfinal_overfit_gap = {}\nfinal_modes_covered = {}\ntotal_flops = {}\nwall_clock_s = {:.3}\n",
            self.run_name,
            self.seed,
            self.status,
            self.iterations,
            real(self.final_toy_frechet),
            real(self.final_overfit_gap),
            self.final_modes_covered,
            self.total_flops,
            self.wall_clock_s
        )
    }
}

/// Trains one configuration and writes its artifacts under
/// [`ExperimentConfig::run_dir`]: `config.txt` (the file as read, when there
/// was one), `config.resolved.txt`, `metrics.csv`, `checkpoint.bin` and
/// `summary.txt`.
pub fn cmd_train(cfg: &ExperimentConfig, verbatim: Option<&str>) -> Result<RunSummary> {
    let start = Instant::now();
    let dir = cfg.run_dir();
    mkdir(&dir)?;
    if let Some(text) = verbatim {
        write(&dir.join("config.txt"), text)?;
    }
    write(&dir.join("config.resolved.txt"), cfg.to_text())?;

    let mut trainer = Trainer::new(cfg.train.clone())?;
    let mut records: Vec<IterationRecord> = Vec::with_capacity(cfg.train.iterations as usize);
    let mut reports = Vec::new();
    let mut failure = None;
    while !trainer.is_done() {
        match trainer.step() {
            Ok(r) => records.push(r),
            Err(TrainError::Divergence { step, record }) => {
                records.push(*record.clone());
                failure = Some(TrainError::Divergence { step, record });
                break;
            }
            Err(e) => return Err(e.into()),
        }
        if trainer.eval_due() {
            reports.push(trainer.evaluate()?);
        }
    }
    write(&dir.join("metrics.csv"), metrics_csv(&records, &reports))?;
    if failure.is_none() {
        trainer.state.to_container().save(&dir.join("checkpoint.bin"))?;
    }
    let last = reports.last();
    let summary = RunSummary {
        run_name: cfg.run_name(),
        seed: cfg.train.seed,
        status: if failure.is_some() { "diverged" } else { "ok" }.into(),
        iterations: records.len() as u64,
        final_toy_frechet: last.map_or(f64::NAN, |r| r.toy_frechet),
        final_overfit_gap: last.map_or(f64::NAN, |r| r.overfit_gap),
        final_modes_covered: last.map_or(0, |r| r.modes_covered),
        total_flops: records.iter().map(|r| r.active_flops as u128).sum(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    write(&dir.join("summary.txt"), summary.to_text())?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(summary),
    }
}

/// One preset x regime cell of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub preset: SchedulePreset,
    pub regime: Regime,
    /// Seeds whose runs finished and enter the statistics.
    pub seeds: Vec<u64>,
    pub failures: Vec<(u64, String)>,
    pub toy_frechet: Vec<f64>,
    pub overfit_gap: Vec<f64>,
    pub wall_clock_s: f64,
}

impl GridCell {
    pub fn frechet_mean_std(&self) -> (f64, f64) {
        mean_std(&self.toy_frechet)
    }

    pub fn gap_mean_std(&self) -> (f64, f64) {
        mean_std(&self.overfit_gap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub cells: Vec<GridCell>,
    pub runs: usize,
}

impl GridSummary {
    pub const CSV_HEADER: &'static str =
        "preset,regime,n_seeds,toy_frechet_mean,toy_frechet_std,overfit_gap_mean,overfit_gap_std,wall_clock_s,seeds,failed_seeds";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for c in &self.cells {
            let (fm, fs) = c.frechet_mean_std();
            let (gm, gs) = c.gap_mean_std();
            let seeds: Vec<String> = c.seeds.iter().map(u64::to_string).collect();
            let failed: Vec<String> = c.failures.iter().map(|(s, _)| s.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.3},{},{}",
                c.preset,
                c.regime,
                c.seeds.len(),
                real(fm),
                real(fs),
                real(gm),
                real(gs),
                c.wall_clock_s,
                seeds.join(" "),
                failed.join(" ")
            );
        }
        s
    }

    /// Sectioned key-value twin of the CSV, with per-seed values.
    pub fn to_text(&self) -> String {
        let mut s = format!("runs = {}\ncells = {}\n", self.runs, self.cells.len());
        for c in &self.cells {
            let (fm, fs) = c.frechet_mean_std();
            let (gm, gs) = c.gap_mean_std();
            let list = |v: &[f64]| v.iter().map(|x| real(*x)).collect::<Vec<_>>().join(" ");
            let _ = write!(
                s,
                "\n[{} {}]\nseeds = {}\ntoy_frechet = {}\ntoy_frechet_mean = {}\ntoy_frechet_std = {}\noverfit_gap = {}\noverfit_gap_mean = {}\noverfit_gap_std = {}\nwall_clock_s = {:.3}\n",
                c.preset,
                c.regime,
                c.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "),
                list(&c.toy_frechet),
                real(fm),
                real(fs),
                list(&c.overfit_gap),
                real(gm),
                real(gs),
                c.wall_clock_s
            );
            for (seed, err) in &c.failures {
                let _ = writeln!(s, "failed.seed{seed} = {err}");
            }
        }
        s
    }
}

/// Grid parallelism: `DYNCAP_THREADS` if set, else the available cores.
pub fn grid_threads() -> usize {
    std::env::var("DYNCAP_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every preset x regime x seed combination. `base` holds the keys
/// shared by every run (from a config file and overrides). A failed run is
/// recorded in its cell and the grid continues.
pub fn cmd_grid(
    base: &[(String, String)],
    presets: &[SchedulePreset],
    regimes: &[Regime],
    seeds: &[u64],
    out: &Path,
    threads: usize,
) -> Result<GridSummary> {
    let mut jobs = Vec::new();
    for &preset in presets {
        for &regime in regimes {
            for &seed in seeds {
                let mut pairs = base.to_vec();
                pairs.push(("preset".into(), preset.to_string()));
                pairs.push(("regime".into(), regime.to_string()));
                pairs.push(("seed".into(), seed.to_string()));
                pairs.push(("out".into(), out.display().to_string()));
                // Fails fast on a bad shared config.
                jobs.push((preset, regime, seed, ExperimentConfig::from_pairs(&pairs)?));
            }
        }
    }
    mkdir(out)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((_, _, _, cfg)) = jobs.get(i) else { break };
                let r = cmd_train(cfg, None);
                results.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().expect("result slots");

    let mut cells: Vec<GridCell> = Vec::new();
    for ((preset, regime, seed, _), result) in jobs.iter().zip(results) {
        let idx = match cells.iter().position(|c| c.preset == *preset && c.regime == *regime) {
            Some(i) => i,
            None => {
                cells.push(GridCell {
                    preset: *preset,
                    regime: *regime,
                    seeds: Vec::new(),
                    failures: Vec::new(),
                    toy_frechet: Vec::new(),
                    overfit_gap: Vec::new(),
                    wall_clock_s: 0.0,
                });
                cells.len() - 1
            }
        };
        let cell = &mut cells[idx];
        match result.expect("every job ran") {
            Ok(s) => {
                cell.seeds.push(*seed);
                cell.toy_frechet.push(s.final_toy_frechet);
                cell.overfit_gap.push(s.final_overfit_gap);
                cell.wall_clock_s += s.wall_clock_s;
            }
            Err(e) => cell.failures.push((*seed, e.to_string())),
        }
    }
    let summary = GridSummary { cells, runs: jobs.len() };
    write(&out.join("grid_summary.csv"), summary.to_csv())?;
    write(&out.join("grid_summary.txt"), summary.to_text())?;
    Ok(summary)
}

/// The finite-difference suite; `Err(CheckFailed)` names every failing op.
pub fn cmd_gradcheck(fault: Option<OpKind>) -> Result<GradcheckReport> {
    Ok(run_gradcheck(GRADCHECK_SEEDS, fault)?)
}

/// Active counts over one bucket of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopsBucket {
    pub start: u64,
    pub end: u64,
    pub mean_params: f64,
    pub flops: u128,
    pub full_flops: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsTable {
    pub preset: String,
    pub buckets: Vec<FlopsBucket>,
    pub total_flops: u128,
    pub full_total_flops: u128,
    /// Per-step counts for every step of the run.
    pub per_step: Vec<(u64, u64)>,
    pub full_per_step: u64,
}

impl FlopsTable {
    pub fn ratio(&self) -> f64 {
        self.total_flops as f64 / self.full_total_flops as f64
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "# preset {}: single-sample discriminator multiply-adds per step\n{:>8} {:>8} {:>14} {:>16} {:>16} {:>8}\n",
            self.preset, "start", "end", "mean_params", "flops", "full_flops", "ratio"
        );
        for b in &self.buckets {
            let _ = writeln!(
                s,
                "{:>8} {:>8} {:>14.1} {:>16} {:>16} {:>8.4}",
                b.start,
                b.end,
                b.mean_params,
                b.flops,
                b.full_flops,
                b.flops as f64 / b.full_flops as f64
            );
        }
        let _ = writeln!(
            s,
            "total {} / {} = ratio {:.6}",
            self.total_flops,
            self.full_total_flops,
            self.ratio()
        );
        s
    }
}

fn count_net(train: &TrainConfig) -> std::result::Result<DiscriminatorNet, TrainError> {
    let base = &train.d_base;
    let net = if train.dataset.kind.is_image() {
        DiscriminatorNet::conv(base, base, train.slope, 0)?
    } else {
        DiscriminatorNet::mlp(train.dataset.kind.sample_shape()[0], base, base, train.slope, 0)?
    };
    Ok(net)
}

/// Exact per-step accounting of the schedule against the fixed-full
/// discriminator. Counts depend only on per-layer active sizes, and a
/// decrease-mode mask always has the sizes `widths_at` gives, so every mode
/// is counted from `widths_at` without sampling.
pub fn flops_table(train: &TrainConfig, preset_name: &str, buckets: u64) -> Result<FlopsTable> {
    let schedule: CapacitySchedule = train
        .schedule
        .build(train.d_base.clone(), train.iterations)
        .map_err(|e| HarnessError::Config(ConfigError::Invalid(e.to_string())))?;
    let net = count_net(train)?;
    let full = net.stack().leading_mask(&train.d_base);
    let full_flops = net.flops_per_sample(&full);
    let mut per_step = Vec::with_capacity(train.iterations as usize);
    let mut last: Option<(Vec<usize>, (u64, u64))> = None;
    for step in 0..train.iterations {
        let widths = schedule.widths_at(step);
        let counts = match &last {
            Some((w, c)) if *w == widths => *c,
            _ => {
                let mask = net.stack().leading_mask(&widths);
                (net.param_count(&mask), net.flops_per_sample(&mask))
            }
        };
        per_step.push(counts);
        last = Some((widths, counts));
    }
    let n = train.iterations;
    let b = buckets.clamp(1, n);
    let mut out = Vec::new();
    for i in 0..b {
        let (start, end) = (i * n / b, (i + 1) * n / b);
        let slice = &per_step[start as usize..end as usize];
        out.push(FlopsBucket {
            start,
            end,
            mean_params: slice.iter().map(|c| c.0 as f64).sum::<f64>() / slice.len() as f64,
            flops: slice.iter().map(|c| c.1 as u128).sum(),
            full_flops: full_flops as u128 * slice.len() as u128,
        });
    }
    Ok(FlopsTable {
        preset: preset_name.to_string(),
        buckets: out,
        total_flops: per_step.iter().map(|c| c.1 as u128).sum(),
        full_total_flops: full_flops as u128 * n as u128,
        per_step,
        full_per_step: full_flops,
    })
}

pub fn cmd_flops(cfg: &ExperimentConfig) -> Result<FlopsTable> {
    flops_table(&cfg.train, cfg.preset.name(), 10)
}
