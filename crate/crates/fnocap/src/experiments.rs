//! Experiment harness: the (p, q) capacity-correlation sweep and the
//! k_max-dependency study, with CSV persistence for runs and
//! correlation tables.

use crate::activation::Activation;
use crate::bounds::{corollary2_posterior, BoundError};
use crate::dataset::{make_dataset, Dataset, DatasetError};
use crate::fno::{FnoConfig, FnoModel, LayerKind};
use crate::grf::GrfSpec;
use crate::norms::{self, capacity, conjugate, Exponent};
use crate::burgers::BurgersSpec;
use crate::train::{dataset_loss, init_model, train, TrainConfig, TrainError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("run {run} failed: {source}")]
    TrainFailed {
        run: usize,
        #[source]
        source: TrainError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("need at least {min} runs, got {got}")]
    TooFewRuns { min: usize, got: usize },
    #[error("inputs must have equal length >= 2")]
    BadSeries,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad run file: {0}")]
    BadRunFile(String),
}

/// Pearson correlation, or Degenerate when either series has zero
/// variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Correlation {
    R(f64),
    Degenerate,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::R(r) => Some(r),
            Correlation::Degenerate => None,
        }
    }
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Correlation, ExperimentError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(ExperimentError::BadSeries);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation::Degenerate);
    }
    Ok(Correlation::R(sxy / (sxx * syy).sqrt()))
}

/// A (p, q)-indexed scalar attached to a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PqValue {
    pub p: Exponent,
    pub q: Exponent,
    pub value: f64,
}

/// One trained model: its hyperparameters, losses, and the capacity
/// quantities the correlation studies need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub run_id: usize,
    pub seed: u64,
    pub depth: usize,
    pub width: usize,
    pub k_max: usize,
    /// CNN kernel size; 0 for spectral-only runs.
    pub kernel: usize,
    pub weight_decay: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    /// test_loss - train_loss, exactly.
    pub gap: f64,
    /// gamma_{p,q} over the study's grid (pq sweep), or the product of
    /// Fourier-layer R norms over the grid (k_max study).
    pub pq_values: Vec<PqValue>,
    /// Corollary 2 gap bound at (p, q) = (2, 2), delta = 0.05.
    pub corollary2_bound: f64,
    pub corollary2_pass: bool,
}

/// Grid of (p, q) -> correlation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub experiment: String,
    pub runs: usize,
    pub p_values: Vec<Exponent>,
    pub q_values: Vec<Exponent>,
    /// Indexed [q][p]: one row per q, one column per p.
    pub r: Vec<Vec<Correlation>>,
}

impl CorrelationTable {
    pub fn get(&self, p: f64, q: f64) -> Option<Correlation> {
        let pi = self.p_values.iter().position(|e| e.0 == p)?;
        let qi = self.q_values.iter().position(|e| e.0 == q)?;
        Some(self.r[qi][pi])
    }
}

pub const INF: f64 = f64::INFINITY;

/// Table 1 grid for both exponents.
pub const PQ_GRID: [f64; 6] = [1.0, 1.2, 1.6, 2.0, 4.0, INF];
/// Table 2 p grid (depth 1).
pub const KMAX_P_DEPTH1: [f64; 6] = [2.0, 2.5, 4.0, 8.0, 20.0, INF];
/// Table 3 p grid (depth 2).
pub const KMAX_P_DEPTH2: [f64; 6] = [2.0, 4.0, 8.0, 12.0, 20.0, INF];
/// Tables 2-3 q grid.
pub const KMAX_Q_GRID: [f64; 5] = [1.0, 2.0, 4.0, 8.0, INF];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// N = 1024, 800 train / 200 test (the source configuration).
    Paper,
    /// N = 128, 200 train / 50 test.
    Desk,
}

impl std::str::FromStr for Scale {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            other => Err(format!("unknown scale {other:?}")),
        }
    }
}

/// Shared sweep configuration; `for_scale` fills in the grid size and
/// split, and the trainer settings come from pilot runs (the studies
/// need a stable loss plateau, not convergence to machine precision).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSettings {
    pub n: usize,
    pub m_train: usize,
    pub m_test: usize,
    pub width: usize,
    pub epochs: usize,
    pub lr: f64,
    pub activation: Activation,
}

impl SweepSettings {
    /// Settings for the k_max study. Spectral-only models never reach a
    /// training plateau (the mode cutoff caps what they can fit), and
    /// past ~200 epochs every k overfits the same training set, washing
    /// out the k dependence of the gap; pilot runs put the study here.
    pub fn for_kmax(scale: Scale) -> Self {
        SweepSettings {
            epochs: 200,
            ..Self::for_scale(scale)
        }
    }

    pub fn for_scale(scale: Scale) -> Self {
        let (n, m_train, m_test) = match scale {
            Scale::Paper => (1024, 800, 200),
            Scale::Desk => (128, 200, 50),
        };
        SweepSettings {
            n,
            m_train,
            m_test,
            width: 64,
            epochs: 500,
            lr: 1e-3,
            activation: Activation::Gelu,
        }
    }
}

fn desk_dataset(
    settings: &SweepSettings,
    master_seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    make_dataset(
        &GrfSpec::new(settings.n, master_seed),
        &BurgersSpec::default(),
        settings.m_train,
        settings.m_test,
        master_seed,
    )
}

fn run_one(
    run_id: usize,
    config: FnoConfig,
    weight_decay: f64,
    seed: u64,
    settings: &SweepSettings,
    train_ds: &Dataset,
    test_ds: &Dataset,
    pq_grid: &[(f64, f64)],
    pq_of: impl Fn(&FnoModel, f64, f64) -> f64,
) -> Result<ExperimentRun, ExperimentError> {
    let mut model =
        init_model(config, seed).map_err(|e| ExperimentError::TrainFailed {
            run: run_id,
            source: e.into(),
        })?;
    let cfg = TrainConfig {
        epochs: settings.epochs,
        lr: settings.lr,
        weight_decay,
        seed,
        ..Default::default()
    };
    train(&mut model, train_ds, &cfg)
        .map_err(|source| ExperimentError::TrainFailed { run: run_id, source })?;
    let train_loss = dataset_loss(&model, train_ds)
        .map_err(|source| ExperimentError::TrainFailed { run: run_id, source })?;
    let test_loss = dataset_loss(&model, test_ds)
        .map_err(|source| ExperimentError::TrainFailed { run: run_id, source })?;
    let gap = test_loss - train_loss;
    let pq_values = pq_grid
        .iter()
        .map(|&(p, q)| PqValue {
            p: Exponent(p),
            q: Exponent(q),
            value: pq_of(&model, p, q),
        })
        .collect();
    let report = corollary2_posterior(&model, &train_ds.inputs, &train_ds.targets, 2.0, 2.0, 0.05)?;
    Ok(ExperimentRun {
        run_id,
        seed,
        depth: model.config.depth,
        width: model.config.d_v,
        k_max: model.config.k_max[0],
        kernel: model.config.kernel.first().copied().unwrap_or(0),
        weight_decay,
        train_loss,
        test_loss,
        gap,
        pq_values,
        corollary2_bound: report.corollary2_gap,
        corollary2_pass: gap <= report.corollary2_gap,
    })
}

/// Table-1 study: train `runs` CNN models with hyperparameters drawn
/// uniformly from the study grids (weight decay {0, 0.02, ..., 0.08},
/// k_max {8, 12, 16, 20}, kernel {1, 3, 5, 7}; width 64, depth 2) and
/// correlate gamma_{p,q} with the generalization gap over PQ_GRID.
pub fn pq_sweep(
    runs: usize,
    scale: Scale,
    master_seed: u64,
) -> Result<(Vec<ExperimentRun>, CorrelationTable), ExperimentError> {
    if runs < 10 {
        return Err(ExperimentError::TooFewRuns { min: 10, got: runs });
    }
    pq_sweep_with(runs, &SweepSettings::for_scale(scale), master_seed)
}

/// Same study at caller-supplied settings (grid size, epochs, width);
/// used for fast determinism checks.
pub fn pq_sweep_with(
    runs: usize,
    settings: &SweepSettings,
    master_seed: u64,
) -> Result<(Vec<ExperimentRun>, CorrelationTable), ExperimentError> {
    let settings = settings.clone();
    let (train_ds, test_ds) = desk_dataset(&settings, master_seed)?;
    let grid: Vec<(f64, f64)> = PQ_GRID
        .iter()
        .flat_map(|&p| PQ_GRID.iter().map(move |&q| (p, q)))
        .collect();
    let wd_choices = [0.0, 0.02, 0.04, 0.06, 0.08];
    let kmax_choices = [8usize, 12, 16, 20];
    let kernel_choices = [1usize, 3, 5, 7];
    // Runs are independent (per-run RNG stream) and collected in run
    // order, so the result is schedule-invariant.
    let records: Vec<ExperimentRun> = (0..runs)
        .into_par_iter()
        .map(|run_id| {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(1_000 + run_id as u64);
            let weight_decay = wd_choices[rng.gen_range(0..wd_choices.len())];
            let k_max = kmax_choices[rng.gen_range(0..kmax_choices.len())];
            let kernel = kernel_choices[rng.gen_range(0..kernel_choices.len())];
            let seed = rng.gen::<u64>();
            let config = FnoConfig {
                d: 1,
                grid: vec![settings.n],
                d_a: 1,
                d_v: settings.width,
                d_u: 1,
                depth: 2,
                k_max: vec![k_max],
                layer_kind: LayerKind::Cnn,
                kernel: vec![kernel],
                activation: settings.activation,
            };
            run_one(
                run_id,
                config,
                weight_decay,
                seed,
                &settings,
                &train_ds,
                &test_ds,
                &grid,
                |model, p, q| capacity(model, p, q).gamma,
            )
        })
        .collect::<Result<_, _>>()?;
    let table = correlate_capacity(&records)?;
    Ok((records, table))
}

/// Tables 2-3 study: spectral-only models at each k_max; records the
/// product of the layers' R norms per (p, q) so the gap can be divided
/// by it and correlated against k_max^(1/p*) (depth 1) or k_max^(2/p*)
/// (depth 2).
pub fn kmax_study(
    k_values: &[usize],
    depth: usize,
    runs_per_k: usize,
    scale: Scale,
    master_seed: u64,
) -> Result<(Vec<ExperimentRun>, CorrelationTable), ExperimentError> {
    kmax_study_with(
        k_values,
        depth,
        runs_per_k,
        &SweepSettings::for_kmax(scale),
        master_seed,
    )
}

/// Same study at caller-supplied settings.
pub fn kmax_study_with(
    k_values: &[usize],
    depth: usize,
    runs_per_k: usize,
    settings: &SweepSettings,
    master_seed: u64,
) -> Result<(Vec<ExperimentRun>, CorrelationTable), ExperimentError> {
    assert!(depth == 1 || depth == 2, "depth must be 1 or 2");
    let settings = settings.clone();
    let (train_ds, test_ds) = desk_dataset(&settings, master_seed)?;
    let p_grid: &[f64] = if depth == 1 {
        &KMAX_P_DEPTH1
    } else {
        &KMAX_P_DEPTH2
    };
    let grid: Vec<(f64, f64)> = p_grid
        .iter()
        .flat_map(|&p| KMAX_Q_GRID.iter().map(move |&q| (p, q)))
        .collect();
    // Independent runs in parallel, collected in run order.
    let records: Vec<ExperimentRun> = (0..k_values.len() * runs_per_k)
        .into_par_iter()
        .map(|run_id| {
            let k_max = k_values[run_id / runs_per_k];
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(10_000 + run_id as u64);
            let seed = rng.gen::<u64>();
            let config = FnoConfig {
                d: 1,
                grid: vec![settings.n],
                d_a: 1,
                d_v: settings.width,
                d_u: 1,
                depth,
                k_max: vec![k_max],
                layer_kind: LayerKind::SpectralOnly,
                kernel: vec![],
                activation: settings.activation,
            };
            run_one(
                run_id,
                config,
                0.0,
                seed,
                &settings,
                &train_ds,
                &test_ds,
                &grid,
                |model, p, q| {
                    model
                        .params
                        .layers
                        .iter()
                        .map(|l| norms::complex_pair_norm(&l.r_re, &l.r_im, p, q))
                        .product()
                },
            )
        })
        .collect::<Result<_, _>>()?;
    let table = correlate_kmax(&records, depth)?;
    Ok((records, table))
}

fn grid_of(runs: &[ExperimentRun]) -> (Vec<Exponent>, Vec<Exponent>) {
    let mut ps: Vec<Exponent> = Vec::new();
    let mut qs: Vec<Exponent> = Vec::new();
    for v in &runs[0].pq_values {
        if !ps.iter().any(|e| e.0 == v.p.0) {
            ps.push(v.p);
        }
        if !qs.iter().any(|e| e.0 == v.q.0) {
            qs.push(v.q);
        }
    }
    (ps, qs)
}

fn pq_value(run: &ExperimentRun, p: f64, q: f64) -> Option<f64> {
    run.pq_values
        .iter()
        .find(|v| v.p.0 == p && v.q.0 == q)
        .map(|v| v.value)
}

/// Correlate the recorded gamma values against the gaps (Table 1).
pub fn correlate_capacity(
    runs: &[ExperimentRun],
) -> Result<CorrelationTable, ExperimentError> {
    if runs.len() < 2 {
        return Err(ExperimentError::BadSeries);
    }
    let (ps, qs) = grid_of(runs);
    let gaps: Vec<f64> = runs.iter().map(|r| r.gap).collect();
    let mut table = Vec::new();
    for &q in &qs {
        let mut row = Vec::new();
        for &p in &ps {
            let caps: Vec<f64> = runs
                .iter()
                .map(|r| pq_value(r, p.0, q.0).ok_or(ExperimentError::BadSeries))
                .collect::<Result<_, _>>()?;
            row.push(pearson(&caps, &gaps)?);
        }
        table.push(row);
    }
    Ok(CorrelationTable {
        experiment: "capacity".to_string(),
        runs: runs.len(),
        p_values: ps,
        q_values: qs,
        r: table,
    })
}

/// Correlate gap / (product of R norms) against k_max^(depth/p*).
pub fn correlate_kmax(
    runs: &[ExperimentRun],
    depth: usize,
) -> Result<CorrelationTable, ExperimentError> {
    if runs.len() < 2 {
        return Err(ExperimentError::BadSeries);
    }
    let (ps, qs) = grid_of(runs);
    let mut table = Vec::new();
    for &q in &qs {
        let mut row = Vec::new();
        for &p in &ps {
            let mut xs = Vec::with_capacity(runs.len());
            let mut ys = Vec::with_capacity(runs.len());
            for r in runs {
                let prod = pq_value(r, p.0, q.0).ok_or(ExperimentError::BadSeries)?;
                let p_star = conjugate(p.0);
                xs.push((r.k_max as f64).powf(depth as f64 / p_star));
                ys.push(r.gap / prod);
            }
            row.push(pearson(&xs, &ys)?);
        }
        table.push(row);
    }
    Ok(CorrelationTable {
        experiment: format!("kmax-depth{depth}"),
        runs: runs.len(),
        p_values: ps,
        q_values: qs,
        r: table,
    })
}

// ---------------------------------------------------------------------------
// CSV persistence. Run files have one row per run with the (p, q) grid
// flattened into `v_{p}_{q}` columns; correlation tables are written
// with one row per q and one column per p.

fn fmt_exp(e: Exponent) -> String {
    if e.0.is_infinite() {
        "inf".to_string()
    } else {
        format!("{}", e.0)
    }
}

fn parse_exp(s: &str) -> Result<f64, ExperimentError> {
    if s == "inf" {
        Ok(f64::INFINITY)
    } else {
        s.parse()
            .map_err(|_| ExperimentError::BadRunFile(format!("bad exponent {s:?}")))
    }
}

pub fn write_runs_csv(runs: &[ExperimentRun], path: &Path) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "run_id".to_string(),
        "seed".to_string(),
        "depth".to_string(),
        "width".to_string(),
        "k_max".to_string(),
        "kernel".to_string(),
        "weight_decay".to_string(),
        "train_loss".to_string(),
        "test_loss".to_string(),
        "gap".to_string(),
        "corollary2_bound".to_string(),
        "corollary2_pass".to_string(),
    ];
    for v in &runs[0].pq_values {
        header.push(format!("v_{}_{}", fmt_exp(v.p), fmt_exp(v.q)));
    }
    w.write_record(&header)?;
    for r in runs {
        let mut row = vec![
            r.run_id.to_string(),
            r.seed.to_string(),
            r.depth.to_string(),
            r.width.to_string(),
            r.k_max.to_string(),
            r.kernel.to_string(),
            format!("{}", r.weight_decay),
            format!("{:.17e}", r.train_loss),
            format!("{:.17e}", r.test_loss),
            format!("{:.17e}", r.gap),
            format!("{:.17e}", r.corollary2_bound),
            r.corollary2_pass.to_string(),
        ];
        for v in &r.pq_values {
            row.push(format!("{:.17e}", v.value));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<ExperimentRun>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let mut pq_cols: Vec<(usize, f64, f64)> = Vec::new();
    for (i, name) in headers.iter().enumerate() {
        if let Some(rest) = name.strip_prefix("v_") {
            let (p, q) = rest
                .split_once('_')
                .ok_or_else(|| ExperimentError::BadRunFile(format!("bad column {name:?}")))?;
            pq_cols.push((i, parse_exp(p)?, parse_exp(q)?));
        }
    }
    let col = |name: &str| -> Result<usize, ExperimentError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ExperimentError::BadRunFile(format!("missing column {name}")))
    };
    let (c_id, c_seed, c_depth, c_width, c_kmax, c_kernel, c_wd) = (
        col("run_id")?,
        col("seed")?,
        col("depth")?,
        col("width")?,
        col("k_max")?,
        col("kernel")?,
        col("weight_decay")?,
    );
    let (c_tr, c_te, c_gap, c_c2, c_c2p) = (
        col("train_loss")?,
        col("test_loss")?,
        col("gap")?,
        col("corollary2_bound")?,
        col("corollary2_pass")?,
    );
    let mut runs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64, ExperimentError> {
            rec[i]
                .parse()
                .map_err(|_| ExperimentError::BadRunFile(format!("bad number {:?}", &rec[i])))
        };
        let u = |i: usize| -> Result<usize, ExperimentError> {
            rec[i]
                .parse()
                .map_err(|_| ExperimentError::BadRunFile(format!("bad integer {:?}", &rec[i])))
        };
        let pq_values = pq_cols
            .iter()
            .map(|&(i, p, q)| {
                Ok(PqValue {
                    p: Exponent(p),
                    q: Exponent(q),
                    value: f(i)?,
                })
            })
            .collect::<Result<_, ExperimentError>>()?;
        runs.push(ExperimentRun {
            run_id: u(c_id)?,
            seed: rec[c_seed]
                .parse()
                .map_err(|_| ExperimentError::BadRunFile("bad seed".into()))?,
            depth: u(c_depth)?,
            width: u(c_width)?,
            k_max: u(c_kmax)?,
            kernel: u(c_kernel)?,
            weight_decay: f(c_wd)?,
            train_loss: f(c_tr)?,
            test_loss: f(c_te)?,
            gap: f(c_gap)?,
            pq_values,
            corollary2_bound: f(c_c2)?,
            corollary2_pass: rec[c_c2p]
                .parse()
                .map_err(|_| ExperimentError::BadRunFile("bad flag".into()))?,
        });
    }
    Ok(runs)
}

pub fn write_table_csv(table: &CorrelationTable, path: &Path) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["q\\p".to_string()];
    header.extend(table.p_values.iter().map(|&p| fmt_exp(p)));
    w.write_record(&header)?;
    for (qi, &q) in table.q_values.iter().enumerate() {
        let mut row = vec![fmt_exp(q)];
        for c in &table.r[qi] {
            row.push(match c {
                Correlation::R(r) => format!("{r:.6}"),
                Correlation::Degenerate => "degenerate".to_string(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_trivia() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 3.0).collect();
        assert_eq!(pearson(&xs, &ys).unwrap(), Correlation::R(1.0));
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        let r = pearson(&xs, &neg).unwrap().value().unwrap();
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_hand_computed_oracle() {
        let xs = [1.0, 2.0, 4.0, 5.0, 8.0];
        let ys = [3.0, 1.0, 4.0, 1.0, 5.0];
        // Direct formula: means 4 and 2.8; sxy = 10, sxx = 30, syy = 12.8.
        let got = pearson(&xs, &ys).unwrap().value().unwrap();
        let want = 10.0 / 384f64.sqrt();
        assert!((got - want).abs() < 1e-12, "{got}");
    }

    #[test]
    fn pearson_degenerate_and_errors() {
        assert_eq!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(),
            Correlation::Degenerate
        );
        assert_eq!(
            pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap(),
            Correlation::Degenerate
        );
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    fn fake_run(run_id: usize, gap: f64, gammas: &[(f64, f64, f64)]) -> ExperimentRun {
        ExperimentRun {
            run_id,
            seed: run_id as u64,
            depth: 2,
            width: 4,
            k_max: 8,
            kernel: 1,
            weight_decay: 0.0,
            train_loss: 0.0,
            test_loss: gap,
            gap,
            pq_values: gammas
                .iter()
                .map(|&(p, q, value)| PqValue {
                    p: Exponent(p),
                    q: Exponent(q),
                    value,
                })
                .collect(),
            corollary2_bound: 1.0,
            corollary2_pass: true,
        }
    }

    #[test]
    fn gaps_equal_to_capacities_give_r_one() {
        let grid: Vec<(f64, f64)> = PQ_GRID
            .iter()
            .flat_map(|&p| PQ_GRID.iter().map(move |&q| (p, q)))
            .collect();
        let runs: Vec<ExperimentRun> = (0..5)
            .map(|i| {
                let gap = 0.1 * (i + 1) as f64;
                let gammas: Vec<(f64, f64, f64)> =
                    grid.iter().map(|&(p, q)| (p, q, gap)).collect();
                fake_run(i, gap, &gammas)
            })
            .collect();
        let table = correlate_capacity(&runs).unwrap();
        for row in &table.r {
            for c in row {
                let r = c.value().unwrap();
                assert!((r - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_gaps_are_degenerate() {
        let grid = [(2.0, 2.0, 1.0), (4.0, 2.0, 2.0)];
        let runs: Vec<ExperimentRun> = (0..4).map(|i| fake_run(i, 0.5, &grid)).collect();
        let table = correlate_capacity(&runs).unwrap();
        for row in &table.r {
            for c in row {
                assert_eq!(*c, Correlation::Degenerate);
            }
        }
    }

    #[test]
    fn runs_csv_round_trips() {
        let grid = [(1.2, 1.2, 3.5), (f64::INFINITY, 2.0, 1.25)];
        let runs: Vec<ExperimentRun> =
            (0..3).map(|i| fake_run(i, 0.25 * i as f64, &grid)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        write_runs_csv(&runs, &path).unwrap();
        let loaded = read_runs_csv(&path).unwrap();
        assert_eq!(loaded.len(), runs.len());
        for (a, b) in runs.iter().zip(&loaded) {
            assert_eq!(a.run_id, b.run_id);
            assert_eq!(a.gap.to_bits(), b.gap.to_bits());
            for (x, y) in a.pq_values.iter().zip(&b.pq_values) {
                assert_eq!(x.p.0.to_bits(), y.p.0.to_bits());
                assert_eq!(x.value.to_bits(), y.value.to_bits());
            }
        }
    }

    #[test]
    fn table_csv_includes_degenerate_marker() {
        let table = CorrelationTable {
            experiment: "t".to_string(),
            runs: 3,
            p_values: vec![Exponent(2.0), Exponent(f64::INFINITY)],
            q_values: vec![Exponent(1.0)],
            r: vec![vec![Correlation::R(0.5), Correlation::Degenerate]],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        write_table_csv(&table, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("degenerate"));
        assert!(text.contains("inf"));
    }

    #[test]
    fn kmax_correlation_uses_the_conjugate_exponent() {
        // gap/prod chosen proportional to k^(1/p*) at p = 2 (p* = 2):
        // perfect correlation there, weaker at other p.
        let ks = [4usize, 9, 16, 25, 36];
        let runs: Vec<ExperimentRun> = ks
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let mut run = fake_run(i, (k as f64).sqrt(), &[(2.0, 2.0, 1.0)]);
                run.k_max = k;
                run.depth = 1;
                run
            })
            .collect();
        let table = correlate_kmax(&runs, 1).unwrap();
        let r = table.get(2.0, 2.0).unwrap().value().unwrap();
        assert!((r - 1.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn too_few_runs_is_rejected() {
        assert!(matches!(
            pq_sweep(3, Scale::Desk, 0),
            Err(ExperimentError::TooFewRuns { min: 10, got: 3 })
        ));
    }
}
