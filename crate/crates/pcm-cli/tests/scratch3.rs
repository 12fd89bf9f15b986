// temporary instrumented training probe, not part of the suite
use pcm_core::implicit::SensitivityMode;
use pcm_core::numerics::{named_stream, RngSeed};
use pcm_core::pcm::{train_supervised, Sample, SolveCache, TrainConfig, TrainedModel};
use pcm_cli::case1;
use pcm_cli::config::RunConfig;

fn probe(tag: &str, model: &TrainedModel) {
    let TrainedModel::Eplse(m) = model else { return };
    let x = [0.0];
    let star = m.predict_minimizer(&x).unwrap();
    let mut cache = SolveCache::default();
    let mut row_f = String::new();
    let mut row_hat = String::new();
    let mut row_pcm = String::new();
    let mut row_gate = String::new();
    for k in 0..13 {
        let u = -1.0 + 2.0 * k as f64 / 12.0;
        let f = x[0] * x[0] + u * u + (std::f64::consts::TAU * u).sin();
        let v = model.value_cached(&x, &[u], &mut cache).unwrap();
        let p = m.pcm.eval(&x, &[u]);
        let g = m.gap.eval_scalar(&[x[0], u]) - m.gap.eval_scalar(&[x[0], star.minimizer[0]]);
        row_f += &format!("{f:7.2}");
        row_hat += &format!("{v:7.2}");
        row_pcm += &format!("{p:7.2}");
        row_gate += &format!("{g:7.2}");
    }
    println!("[{tag}] u*={:.3} pcm(u*)={:.3}", star.minimizer[0], star.value);
    println!("   f   {row_f}");
    println!("   fhat{row_hat}");
    println!("   pcm {row_pcm}");
    println!("   gate{row_gate}");
}

#[test]
#[ignore]
fn instrumented_case1_training() {
    let cfg = RunConfig::defaults(false);
    let dataset = case1::generate_dataset(&cfg).unwrap();
    let mut model = case1::init_model(&cfg, pcm_core::pcm::ModelKind::Eplse, &dataset).unwrap();
    probe("init", &model);
    // run training in 10-epoch slices, probing between slices
    for stage in 0..6 {
        let tc = TrainConfig {
            lr: 1e-3,
            epochs: 1,
            batch_size: 16,
            seed: RngSeed(cfg.seed ^ stage),
            split: (0.7, 0.2, 0.1),
            sensitivity: SensitivityMode::Implicit,
        };
        let (m2, hist) = train_supervised(model, &dataset, &tc).unwrap();
        model = m2;
        let last = hist.last().unwrap();
        println!(
            "=== epoch {}: train {:.4} valid {:.4}",
            stage + 1,
            last.train_loss,
            last.valid_loss
        );
        probe(&format!("e{}", stage + 1), &model);
    }
    let truth = case1::truth_oracle(&cfg).unwrap();
    let metrics = case1::metrics_for(&cfg, &model, &dataset, &truth);
    println!("metrics: {metrics:?}");
    let _ = named_stream(RngSeed(0), "quiet");
    let _: Option<Sample> = None;
}
