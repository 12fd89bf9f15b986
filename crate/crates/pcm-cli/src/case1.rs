//! Parameterized non-convex objective benchmark: `f(x,u) = x^2 + u^2 +
//! sin(2 pi u)` on the unit boxes. Trains the requested approximators,
//! scores them against the brute-force truth, and dumps plot-ready CSVs.

use crate::config::RunConfig;
use crate::output;
use pcm_core::approximators::{Activation, Fnn, PlseNet};
use pcm_core::checkpoint;
use pcm_core::numerics::named_stream;
use pcm_core::pcm::{
    evaluate_metrics, train_supervised, Dataset, EplseModel, Metrics, MinOracle, ModelKind,
    Sample, SolveCache, TrainConfig, TrainedModel,
};
use pcm_core::solve::{brute_force_grid, BoxSet};
use rand::Rng;
use std::error::Error;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

const TAU: f64 = std::f64::consts::TAU;

pub fn objective(x: &[f64], u: &[f64]) -> f64 {
    x[0] * x[0] + u[0] * u[0] + (TAU * u[0]).sin()
}

pub fn generate_dataset(cfg: &RunConfig) -> Result<Dataset, Box<dyn Error>> {
    let mut rng = named_stream(cfg.seed(), "case1-dataset");
    let samples: Vec<Sample> = (0..cfg.samples)
        .map(|_| {
            let x = vec![rng.gen_range(-1.0..=1.0)];
            let u = vec![rng.gen_range(-1.0..=1.0)];
            let value = objective(&x, &u);
            Sample { x, u, value }
        })
        .collect();
    Ok(Dataset::from_samples(samples, cfg.split)?)
}

/// True minimizer of `u^2 + sin(2 pi u)` on the unit interval; the
/// x-dependence separates out, so one grid solve serves every x.
pub fn truth_oracle(cfg: &RunConfig) -> Result<(Vec<f64>, f64), Box<dyn Error>> {
    let grid = brute_force_grid(
        |u| u[0] * u[0] + (TAU * u[0]).sin(),
        &BoxSet::cube(-1.0, 1.0, 1),
        cfg.oracle_grid,
    )?;
    Ok((grid.minimizer, grid.value))
}

/// `u` of the smallest training target: the anchor for the minorant-gap
/// model's shaped initialization.
/// Anchor for the shaped initialization: the `(x, u)` of the smallest
/// training target, with the pocket level set to a low quantile of the
/// targets (the global minimum over-commits the pocket for off-anchor
/// parameters).
fn train_samples(dataset: &Dataset) -> Vec<Sample> {
    dataset
        .train_indices()
        .iter()
        .map(|&i| dataset.samples[i].clone())
        .collect()
}

fn init_anchor(dataset: &Dataset) -> Sample {
    let mut anchor = dataset
        .train_indices()
        .iter()
        .map(|&i| &dataset.samples[i])
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("nonempty train split")
        .clone();
    let mut values: Vec<f64> = dataset
        .train_indices()
        .iter()
        .map(|&i| dataset.samples[i].value)
        .collect();
    values.sort_by(f64::total_cmp);
    // pocket level starts at the smallest observed objective value
    // (anchor.value already carries it from the min-target sample)
    anchor
}

pub fn init_model(
    cfg: &RunConfig,
    kind: ModelKind,
    dataset: &Dataset,
) -> Result<TrainedModel, Box<dyn Error>> {
    let mut rng = named_stream(cfg.seed(), &format!("case1-init-{}", kind.name()));
    let u_box = BoxSet::cube(-1.0, 1.0, 1);
    Ok(match kind {
        ModelKind::Fnn => {
            let mut dims = vec![2];
            dims.extend_from_slice(&cfg.fnn_hidden);
            dims.push(1);
            TrainedModel::Fnn(Fnn::init(&dims, Activation::Tanh, &mut rng))
        }
        ModelKind::Plse => TrainedModel::Plse(PlseNet::init(
            1,
            1,
            cfg.terms,
            cfg.temperature,
            &cfg.subnet_hidden,
            false,
            &mut rng,
        )?),
        ModelKind::Dlse => TrainedModel::Dlse(pcm_core::approximators::DlseNet::init(
            2,
            cfg.terms,
            cfg.temperature,
            &mut rng,
        )),
        ModelKind::Eplse => TrainedModel::Eplse(EplseModel::init_anchored(
            1,
            1,
            cfg.terms,
            cfg.temperature,
            &cfg.subnet_hidden,
            &cfg.gap_hidden,
            u_box,
            cfg.solver.clone(),
            &init_anchor(dataset),
            &train_samples(dataset),
            &mut rng,
        )?),
    })
}

pub fn train_kind(
    cfg: &RunConfig,
    kind: ModelKind,
    dataset: &Dataset,
) -> Result<(TrainedModel, Vec<pcm_core::pcm::EpochLoss>), Box<dyn Error>> {
    let model = init_model(cfg, kind, dataset)?;
    let train_cfg = TrainConfig {
        lr: if kind == ModelKind::Dlse {
            cfg.lr_dlse
        } else {
            cfg.lr
        },
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed(),
        split: cfg.split,
        sensitivity: cfg.gradient_mode,
    };
    Ok(train_supervised(model, dataset, &train_cfg)?)
}

pub fn metrics_for(
    cfg: &RunConfig,
    model: &TrainedModel,
    dataset: &Dataset,
    truth: &(Vec<f64>, f64),
) -> Metrics {
    let u_box = BoxSet::cube(-1.0, 1.0, 1);
    let xs: Vec<Vec<f64>> = dataset
        .test_indices()
        .iter()
        .map(|&i| dataset.samples[i].x.clone())
        .collect();
    let (u_star, g_min) = truth.clone();
    evaluate_metrics(model, &xs, &u_box, &cfg.solver, move |x| MinOracle {
        minimizers: vec![u_star.clone()],
        value: x[0] * x[0] + g_min,
    })
}

fn surface_rows(
    cfg: &RunConfig,
    model: &TrainedModel,
) -> Result<Vec<(f64, f64, f64)>, Box<dyn Error>> {
    let n = cfg.surface_grid;
    let mut rows = Vec::with_capacity(n * n);
    let mut cache = SolveCache::default();
    for i in 0..n {
        let x = -1.0 + 2.0 * (i as f64) / ((n - 1) as f64);
        for j in 0..n {
            let u = -1.0 + 2.0 * (j as f64) / ((n - 1) as f64);
            let v = model.value_cached(&[x], &[u], &mut cache)?;
            rows.push((x, u, v));
        }
    }
    Ok(rows)
}

fn minorant_surface_rows(cfg: &RunConfig, model: &EplseModel) -> Vec<(f64, f64, f64)> {
    let n = cfg.surface_grid;
    let mut rows = Vec::with_capacity(n * n);
    for i in 0..n {
        let x = -1.0 + 2.0 * (i as f64) / ((n - 1) as f64);
        for j in 0..n {
            let u = -1.0 + 2.0 * (j as f64) / ((n - 1) as f64);
            rows.push((x, u, model.pcm.eval(&[x], &[u])));
        }
    }
    rows
}

pub struct Case1Summary {
    pub metrics: Vec<(ModelKind, Metrics)>,
    pub models: Vec<(ModelKind, TrainedModel)>,
    pub failures: Vec<(ModelKind, String)>,
}

/// Full benchmark: dataset, per-model training, metrics, surfaces,
/// checkpoints, manifest. Per-model failures are recorded and the run
/// continues with the remaining models.
pub fn run_case1(cfg: &RunConfig, out_dir: &Path) -> Result<Case1Summary, Box<dyn Error>> {
    std::fs::create_dir_all(out_dir)?;
    output::write_manifest(out_dir, &cfg.manifest("case1"))?;
    let dataset = generate_dataset(cfg)?;
    let truth = truth_oracle(cfg)?;

    let mut summary = Case1Summary {
        metrics: Vec::new(),
        models: Vec::new(),
        failures: Vec::new(),
    };
    for &kind in &cfg.models {
        match train_kind(cfg, kind, &dataset) {
            Ok((model, history)) => {
                output::write_loss_history(out_dir, kind, &history)?;
                let metrics = metrics_for(cfg, &model, &dataset, &truth);
                output::write_surface(
                    out_dir,
                    &format!("surface_{}", kind.name()),
                    &surface_rows(cfg, &model)?,
                )?;
                if let TrainedModel::Eplse(m) = &model {
                    output::write_surface(
                        out_dir,
                        "surface_eplse_pcm",
                        &minorant_surface_rows(cfg, m),
                    )?;
                    let mut w = BufWriter::new(File::create(
                        out_dir.join(format!("model_{}.ckpt", kind.name())),
                    )?);
                    checkpoint::write_eplse_model(&mut w, m)?;
                } else {
                    let approx = match &model {
                        TrainedModel::Fnn(n) => {
                            pcm_core::approximators::Approximator::Fnn(n.clone())
                        }
                        TrainedModel::Plse(n) => {
                            pcm_core::approximators::Approximator::Plse(n.clone())
                        }
                        TrainedModel::Dlse(n) => {
                            pcm_core::approximators::Approximator::Dlse(n.clone())
                        }
                        TrainedModel::Eplse(_) => unreachable!(),
                    };
                    let mut w = BufWriter::new(File::create(
                        out_dir.join(format!("model_{}.ckpt", kind.name())),
                    )?);
                    checkpoint::write_approximator(&mut w, &approx)?;
                }
                summary.metrics.push((kind, metrics));
                summary.models.push((kind, model));
            }
            Err(e) => summary.failures.push((kind, e.to_string())),
        }
    }
    output::write_metrics(out_dir, &summary.metrics)?;
    Ok(summary)
}
