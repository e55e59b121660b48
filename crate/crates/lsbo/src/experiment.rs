//! Sweeps, the round-trip diagnostics map and dataset generation.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use lsbo_core::acquisition::AcquisitionKind;
use lsbo_core::boloop::{derive_seed, BlackBox, BoConfig, BoRun, IterationRecord};
use lsbo_core::bounds::BoundsKind;
use lsbo_core::datasets::{
    shape_area, shape_generate, shape_matrix, ShapeBlackBox, SyntheticBenchmark, SyntheticBlackBox,
    SyntheticObjective,
};
use lsbo_core::harness::{diagnostics_map, normalize, split_means, DiagnosticCell, GaussianContour, GridSpec, RegretCurve};
use lsbo_core::ndcore::Mat;
use lsbo_core::training::{Regime, TrainConfig, TrainLogEntry, Trainer};
use lsbo_core::vae::VaeModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::{DatasetKind, ExperimentConfig};
use crate::csv::{Cell, CsvTable};
use crate::datafile;
use crate::error::{io_err, Error, Result};

const STREAM_MODEL_INIT: u64 = 5;
const STREAM_PRETRAIN: u64 = 6;

#[derive(Clone)]
pub enum DatasetBlackBox {
    Shape(ShapeBlackBox),
    Synthetic(SyntheticBlackBox),
    /// Any other objective over the pool's input space.
    Custom(Arc<dyn BlackBox + Send + Sync>),
}

impl std::fmt::Debug for DatasetBlackBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetBlackBox::Shape(b) => b.fmt(f),
            DatasetBlackBox::Synthetic(b) => b.fmt(f),
            DatasetBlackBox::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl BlackBox for DatasetBlackBox {
    fn eval(&self, x: &[f64]) -> lsbo_core::Result<f64> {
        match self {
            DatasetBlackBox::Shape(f) => f.eval(x),
            DatasetBlackBox::Synthetic(f) => f.eval(x),
            DatasetBlackBox::Custom(f) => f.eval(x),
        }
    }

    fn noise_sigma(&self) -> f64 {
        match self {
            DatasetBlackBox::Shape(f) => f.noise_sigma,
            DatasetBlackBox::Synthetic(f) => f.noise_sigma,
            DatasetBlackBox::Custom(f) => f.noise_sigma(),
        }
    }
}

/// The unlabelled pool, its noiseless objective values and the black box.
#[derive(Clone, Debug)]
pub struct Problem {
    pub pool: Arc<Mat>,
    pub train_values: Vec<f64>,
    pub black_box: DatasetBlackBox,
}

pub fn value_range(kind: DatasetKind) -> (f64, f64) {
    match kind {
        DatasetKind::Shape => (0.0, 1.0),
        DatasetKind::Synthetic => (-1.0, 1.0),
    }
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let d = &cfg.data;
    let mut rng = ChaCha8Rng::seed_from_u64(d.data_seed);
    let (pool, black_box) = match cfg.dataset {
        DatasetKind::Shape => {
            let pool = match &d.data_file {
                Some(p) => datafile::load(Path::new(p), value_range(cfg.dataset))?,
                None => shape_matrix(&shape_generate(d.num_train, &mut rng)?),
            };
            let f = ShapeBlackBox {
                thresholded: d.thresholded,
                noise_sigma: d.noise_sigma,
            };
            (pool, DatasetBlackBox::Shape(f))
        }
        DatasetKind::Synthetic => {
            let bench = SyntheticBenchmark::new(
                d.ambient_dim,
                d.intrinsic_dim,
                SyntheticObjective::Quadratic,
                d.benchmark_seed,
            )?;
            let pool = match &d.data_file {
                Some(p) => datafile::load(Path::new(p), value_range(cfg.dataset))?,
                None => bench.sample(d.num_train, &mut rng),
            };
            let f = SyntheticBlackBox {
                bench,
                noise_sigma: d.noise_sigma,
            };
            (pool, DatasetBlackBox::Synthetic(f))
        }
    };
    let train_values = match &black_box {
        DatasetBlackBox::Shape(_) => (0..pool.rows())
            .map(|i| shape_area(pool.row_slice(i)).map(|a| -a))
            .collect::<lsbo_core::Result<Vec<_>>>()?,
        DatasetBlackBox::Synthetic(f) => (0..pool.rows())
            .map(|i| f.bench.eval(pool.row_slice(i)))
            .collect::<lsbo_core::Result<Vec<_>>>()?,
        DatasetBlackBox::Custom(_) => unreachable!("built-in datasets only"),
    };
    if cfg.n_init > pool.rows() {
        return Err(Error::InvalidConfig(format!(
            "n_init {} exceeds the pool of {}",
            cfg.n_init,
            pool.rows()
        )));
    }
    Ok(Problem {
        pool: Arc::new(pool),
        train_values,
        black_box,
    })
}

/// A VAE fitted to the pool, shared by every run with the same latent
/// dimension and seed.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub vae: VaeModel,
    pub log: Vec<TrainLogEntry>,
}

pub fn pretrain(cfg: &ExperimentConfig, pool: &Mat, latent_dim: usize, seed: u64) -> Result<Pretrained> {
    let likelihood = cfg.likelihood.unwrap_or(cfg.dataset.default_likelihood());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_MODEL_INIT));
    let mut vae = VaeModel::new(pool.cols(), latent_dim, likelihood, &mut rng)?;
    let mut trainer = Trainer::new(TrainConfig {
        seed: derive_seed(seed, STREAM_PRETRAIN),
        ..cfg.train.clone()
    })?;
    trainer.fit_vae(&mut vae, pool)?;
    Ok(Pretrained { vae, log: trainer.log })
}

type CacheSlot = Arc<OnceLock<std::result::Result<Arc<Pretrained>, String>>>;

/// Pretrained VAEs keyed by `(latent_dim, seed)`, each computed once even
/// when several workers ask for it at the same time.
#[derive(Default)]
pub struct PretrainCache {
    slots: Mutex<HashMap<(usize, u64), CacheSlot>>,
}

impl PretrainCache {
    pub fn get(
        &self,
        cfg: &ExperimentConfig,
        pool: &Mat,
        latent_dim: usize,
        seed: u64,
    ) -> std::result::Result<Arc<Pretrained>, String> {
        let slot = {
            let mut slots = self.slots.lock().expect("cache lock");
            Arc::clone(slots.entry((latent_dim, seed)).or_default())
        };
        slot.get_or_init(|| {
            pretrain(cfg, pool, latent_dim, seed)
                .map(Arc::new)
                .map_err(|e| e.to_string())
        })
        .clone()
    }

    /// Successful entries in key order.
    pub fn entries(&self) -> Vec<((usize, u64), Arc<Pretrained>)> {
        let slots = self.slots.lock().expect("cache lock");
        let mut out: Vec<_> = slots
            .iter()
            .filter_map(|(k, v)| v.get().and_then(|r| r.as_ref().ok()).map(|p| (*k, Arc::clone(p))))
            .collect();
        out.sort_by_key(|(k, _)| *k);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellKey {
    pub regime: Regime,
    pub latent_dim: usize,
    pub bounds: BoundsKind,
    pub acquisition: AcquisitionKind,
}

impl CellKey {
    pub fn name(&self) -> String {
        format!(
            "{}_d{}_{}_{}",
            self.regime.name(),
            self.latent_dim,
            self.bounds.name(),
            self.acquisition.name()
        )
    }
}

/// Everything one BO run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    /// Region description after each step, `None` when unchanged.
    pub region_changes: Vec<Option<String>>,
    pub train_log: Vec<TrainLogEntry>,
    pub initial_y: Vec<f64>,
    /// Best-so-far after each step, padded with its last value to the budget
    /// when the stopping rule ends the run early.
    pub best_trace: Vec<f64>,
}

pub fn run_one(
    cfg: &ExperimentConfig,
    problem: &Problem,
    cell: CellKey,
    seed: u64,
    vae: VaeModel,
) -> Result<RunOutput> {
    let bo = BoConfig {
        regime: cell.regime,
        bounds: lsbo_core::bounds::BoundsSpec {
            kind: cell.bounds,
            ..cfg.bounds_spec.clone()
        },
        acquisition: lsbo_core::acquisition::AcquisitionSpec {
            kind: cell.acquisition,
            ..cfg.acquisition.clone()
        },
        train: cfg.train.clone(),
        n_init: cfg.n_init,
        budget: cfg.budget,
        acquisition_threshold: cfg.acquisition_threshold,
        seed,
    };
    let mut run = BoRun::new(bo, vae, true, Arc::clone(&problem.pool), problem.black_box.clone())?;
    let initial_y = run.state().labelled_y.clone();
    let mut region_changes = Vec::new();
    let mut last_region: Option<String> = None;
    while run.state().iteration < cfg.budget && !run.stopped() {
        let it = run.state().iteration;
        run.step().map_err(|e| e.at_iteration(it))?;
        let now = run.region_description();
        if now != last_region {
            region_changes.push(now.clone());
            last_region = now;
        } else {
            region_changes.push(None);
        }
    }
    let mut best_trace = run.state().best_trace.clone();
    if let Some(&last) = best_trace.last() {
        best_trace.resize(cfg.budget, last);
    }
    Ok(RunOutput {
        seed,
        records: run.records.clone(),
        region_changes,
        train_log: run.train_log.clone(),
        initial_y,
        best_trace,
    })
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub key: CellKey,
    pub runs: Vec<RunOutput>,
    /// `(seed, message)` for every failed run.
    pub failures: Vec<(u64, String)>,
    /// Normalized best-so-far curves over the completed runs.
    pub curve: Option<RegretCurve>,
}

impl CellResult {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// Final raw best value per completed seed.
    pub fn final_values(&self) -> Vec<(u64, f64)> {
        self.runs
            .iter()
            .filter_map(|r| r.best_trace.last().map(|v| (r.seed, *v)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub hash: String,
    pub cells: Vec<CellResult>,
}

impl SweepOutput {
    pub fn cell(&self, regime: Regime, latent_dim: usize, bounds: BoundsKind, acquisition: AcquisitionKind) -> Option<&CellResult> {
        let key = CellKey {
            regime,
            latent_dim,
            bounds,
            acquisition,
        };
        self.cells.iter().find(|c| c.key == key)
    }
}

pub fn cells(cfg: &ExperimentConfig) -> Vec<CellKey> {
    let mut out = Vec::new();
    for &regime in &cfg.regimes {
        for &latent_dim in &cfg.latent_dims {
            for &bounds in &cfg.bounds {
                for &acquisition in &cfg.acquisitions {
                    out.push(CellKey {
                        regime,
                        latent_dim,
                        bounds,
                        acquisition,
                    });
                }
            }
        }
    }
    out
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".into()
    }
}

/// Runs every cell × seed on up to `workers` threads and, when `out` is
/// given, writes the CSV files there. Failed runs are recorded and the sweep
/// carries on.
pub fn run_sweep(cfg: &ExperimentConfig, workers: usize, out: Option<&Path>) -> Result<SweepOutput> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    run_sweep_on(cfg, &problem, workers, out)
}

/// [`run_sweep`] over an already built problem; the dataset settings in
/// `cfg` are not consulted.
pub fn run_sweep_on(cfg: &ExperimentConfig, problem: &Problem, workers: usize, out: Option<&Path>) -> Result<SweepOutput> {
    cfg.validate()?;
    if problem.pool.rows() < cfg.n_init || problem.train_values.len() != problem.pool.rows() {
        return Err(Error::InvalidConfig(
            "problem needs n_init pool rows and one training value per row".into(),
        ));
    }
    let hash = cfg.hash();
    let cells = cells(cfg);
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| cfg.seeds.iter().map(move |s| (c, *s)))
        .collect();
    let results: Mutex<Vec<Option<std::result::Result<RunOutput, String>>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let cache = PretrainCache::default();

    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(c, seed)) = jobs.get(j) else {
                    break;
                };
                let key = cells[c];
                let outcome = catch_unwind(AssertUnwindSafe(|| {
                    let pre = cache.get(cfg, &problem.pool, key.latent_dim, seed)?;
                    run_one(cfg, problem, key, seed, pre.vae.clone()).map_err(|e| e.to_string())
                }))
                .unwrap_or_else(|p| Err(panic_message(p)));
                match &outcome {
                    Ok(r) => log::info!(
                        "{} seed {seed}: best {:?}",
                        key.name(),
                        r.best_trace.last()
                    ),
                    Err(e) => log::warn!("{} seed {seed} failed: {e}", key.name()),
                }
                results.lock().expect("results lock")[j] = Some(outcome);
            });
        }
    });

    let mut results = results.into_inner().expect("results lock").into_iter();
    let mut out_cells = Vec::with_capacity(cells.len());
    for key in cells {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for &seed in &cfg.seeds {
            match results.next().flatten() {
                Some(Ok(r)) => runs.push(r),
                Some(Err(e)) => failures.push((seed, e)),
                None => failures.push((seed, "not run".into())),
            }
        }
        let curve = if runs.is_empty() || cfg.budget == 0 {
            None
        } else {
            let raw = runs
                .iter()
                .map(|r| normalize(&r.best_trace, &problem.train_values))
                .collect::<lsbo_core::Result<Vec<_>>>()?;
            Some(RegretCurve::from_runs(raw)?)
        };
        out_cells.push(CellResult {
            key,
            runs,
            failures,
            curve,
        });
    }
    let output = SweepOutput { hash, cells: out_cells };
    if let Some(dir) = out {
        write_sweep(cfg, problem, &cache, &output, dir)?;
    }
    Ok(output)
}

fn write_sweep(
    cfg: &ExperimentConfig,
    problem: &Problem,
    cache: &PretrainCache,
    sweep: &SweepOutput,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    std::fs::write(dir.join("config.txt"), cfg.to_text()).map_err(io_err(dir.join("config.txt")))?;
    let h = &sweep.hash;

    let mut summary = CsvTable::new(
        "summary.csv",
        h,
        &[
            "regime",
            "latent_dim",
            "bounds",
            "acquisition",
            "seeds",
            "completed",
            "complete",
            "final_mean",
            "final_sem",
            "errors",
        ],
    );
    for cell in &sweep.cells {
        let k = cell.key;
        let (fm, fs) = match &cell.curve {
            Some(c) => (Cell::Float(c.mean[c.len() - 1]), Cell::Float(c.sem[c.len() - 1])),
            None => (Cell::Text(String::new()), Cell::Text(String::new())),
        };
        let errors: Vec<String> = cell.failures.iter().map(|(s, e)| format!("seed {s}: {e}")).collect();
        summary.push(vec![
            k.regime.name().into(),
            k.latent_dim.into(),
            k.bounds.name().into(),
            k.acquisition.name().into(),
            cfg.seeds.len().into(),
            cell.runs.len().into(),
            cell.complete().into(),
            fm,
            fs,
            errors.join(" | ").into(),
        ])?;

        if let Some(curve) = &cell.curve {
            let mut cols = vec!["iteration".to_string(), "mean".into(), "sem".into()];
            cols.extend(cell.runs.iter().map(|r| format!("seed_{}", r.seed)));
            let mut t = CsvTable::with_columns("curve", h, cols);
            for i in 0..curve.len() {
                let mut row: Vec<Cell> = vec![(i + 1).into(), curve.mean[i].into(), curve.sem[i].into()];
                row.extend(curve.raw.iter().map(|r| Cell::Float(r[i])));
                t.push(row)?;
            }
            t.write(&dir.join("curves").join(format!("{}.csv", k.name())))?;
        }
        for run in &cell.runs {
            let stem = format!("{}_seed{}", k.name(), run.seed);
            write_run_log(h, k.latent_dim, run, problem, &dir.join("runs").join(format!("{stem}.csv")))?;
            write_train_log(h, &run.train_log, &dir.join("runs").join(format!("{stem}_train.csv")))?;
        }
    }
    summary.write(&dir.join("summary.csv"))?;

    for ((d, seed), pre) in cache.entries() {
        let stem = format!("d{d}_seed{seed}");
        write_train_log(h, &pre.log, &dir.join("pretrain").join(format!("{stem}_train.csv")))?;
        checkpoint::save(
            &checkpoint::vae_checkpoint(&pre.vae),
            &dir.join("pretrain").join(format!("{stem}.ckpt")),
        )?;
    }
    Ok(())
}

fn write_run_log(hash: &str, d: usize, run: &RunOutput, problem: &Problem, path: &Path) -> Result<()> {
    let mut cols = vec!["iteration".to_string()];
    cols.extend((0..d).map(|j| format!("z_{j}")));
    for c in [
        "y",
        "best",
        "best_normalized",
        "acquisition_value",
        "region",
        "region_fallback",
        "drift",
        "region_params",
    ] {
        cols.push(c.into());
    }
    let mut t = CsvTable::with_columns("run log", hash, cols);
    for (rec, change) in run.records.iter().zip(&run.region_changes) {
        let norm = normalize(&[rec.best], &problem.train_values)?[0];
        let mut row: Vec<Cell> = vec![rec.iteration.into()];
        row.extend(rec.z.iter().map(|v| Cell::Float(*v)));
        row.extend([
            rec.y.into(),
            rec.best.into(),
            norm.into(),
            rec.acquisition_value.into(),
            rec.region.into(),
            rec.region_fallback.into(),
            rec.drift.into(),
            change.clone().unwrap_or_default().into(),
        ]);
        t.push(row)?;
    }
    t.write(path)
}

fn write_train_log(hash: &str, log: &[TrainLogEntry], path: &Path) -> Result<()> {
    let mut t = CsvTable::new(
        "training log",
        hash,
        &["index", "phase", "step", "objective", "reconstruction", "kl", "gp_bound"],
    );
    for (i, e) in log.iter().enumerate() {
        t.push(vec![
            i.into(),
            e.phase.name().into(),
            e.step.into(),
            e.objective.into(),
            e.reconstruction.into(),
            e.kl.into(),
            e.gp_bound.into(),
        ])?;
    }
    t.write(path)
}

#[derive(Clone, Debug)]
pub struct DiagnoseOutput {
    pub hash: String,
    pub cells: Vec<DiagnosticCell>,
    pub contour: GaussianContour,
    pub inside_mean: Option<f64>,
    pub outside_mean: Option<f64>,
    pub vae: VaeModel,
}

/// Round-trip distances of a VAE pretrained with `seed` at the first
/// configured latent dimension, over the configured latent plane.
pub fn diagnose(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<DiagnoseOutput> {
    cfg.validate()?;
    let hash = cfg.hash();
    let problem = build_problem(cfg)?;
    let d = cfg.latent_dims[0];
    let g = &cfg.diagnose;
    if g.axes.0 >= d || g.axes.1 >= d {
        return Err(Error::InvalidConfig(format!(
            "diagnose_axes {:?} need latent dimension above {}",
            g.axes,
            g.axes.0.max(g.axes.1)
        )));
    }
    let pre = pretrain(cfg, &problem.pool, d, seed)?;
    let (means, _) = pre.vae.encode_batch(&problem.pool)?;
    let plane = Mat::from_fn(means.rows(), 2, |i, j| means[(i, if j == 0 { g.axes.0 } else { g.axes.1 })]);
    let contour = GaussianContour::fit(&plane, g.contour_percentile)?;
    let grid = GridSpec::around(&means, g.axes, g.grid_span, g.grid_width, g.grid_height);
    let cells = diagnostics_map(&pre.vae, &grid, &contour)?;
    let (inside_mean, outside_mean) = split_means(&cells);

    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut t = CsvTable::new("diagnostics.csv", &hash, &["row", "col", "x", "y", "distance", "inside"]);
        for c in &cells {
            t.push(vec![c.row.into(), c.col.into(), c.x.into(), c.y.into(), c.distance.into(), c.inside.into()])?;
        }
        t.write(&dir.join("diagnostics.csv"))?;

        let mut t = CsvTable::new(
            "contour.csv",
            &hash,
            &["mean_x", "mean_y", "precision_xx", "precision_xy", "precision_yy", "radius_sq", "percentile"],
        );
        let p = &contour.precision;
        t.push(vec![
            contour.mean[0].into(),
            contour.mean[1].into(),
            p[(0, 0)].into(),
            p[(0, 1)].into(),
            p[(1, 1)].into(),
            contour.radius_sq.into(),
            g.contour_percentile.into(),
        ])?;
        t.write(&dir.join("contour.csv"))?;

        let mut t = CsvTable::new(
            "diagnostics_summary.csv",
            &hash,
            &["latent_dim", "seed", "inside_cells", "outside_cells", "inside_mean", "outside_mean"],
        );
        let opt = |v: Option<f64>| v.map_or(Cell::Text(String::new()), Cell::Float);
        let n_in = cells.iter().filter(|c| c.inside).count();
        t.push(vec![
            d.into(),
            seed.into(),
            n_in.into(),
            (cells.len() - n_in).into(),
            opt(inside_mean),
            opt(outside_mean),
        ])?;
        t.write(&dir.join("diagnostics_summary.csv"))?;
        write_train_log(&hash, &pre.log, &dir.join("pretrain_train.csv"))?;
        checkpoint::save(&checkpoint::vae_checkpoint(&pre.vae), &dir.join("vae.ckpt"))?;
    }
    Ok(DiagnoseOutput {
        hash,
        cells,
        contour,
        inside_mean,
        outside_mean,
        vae: pre.vae,
    })
}

/// Writes the configured pool as a dataset file plus its objective values.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Problem> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    datafile::save(&problem.pool, &out.join(format!("{}.txt", cfg.dataset.name())))?;
    let mut t = CsvTable::new("values.csv", &cfg.hash(), &["index", "value"]);
    for (i, v) in problem.train_values.iter().enumerate() {
        t.push(vec![i.into(), (*v).into()])?;
    }
    t.write(&out.join("values.csv"))?;
    Ok(problem)
}
