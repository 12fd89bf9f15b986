// temporary ridge-fit quality probe
use pcm_core::pcm::{SolveCache, TrainedModel};
use pcm_cli::case1;
use pcm_cli::config::RunConfig;

#[test]
#[ignore]
fn ridge_fit_quality() {
    let cfg = RunConfig::defaults(false);
    let dataset = case1::generate_dataset(&cfg).unwrap();
    let model = case1::init_model(&cfg, pcm_core::pcm::ModelKind::Eplse, &dataset).unwrap();
    let TrainedModel::Eplse(m) = &model else {
        panic!()
    };
    // gap-alone fit quality over the train split
    let mut sq = 0.0;
    for &i in dataset.train_indices() {
        let s = &dataset.samples[i];
        let g = m.gap.eval_scalar(&[s.x[0], s.u[0]]);
        sq += (g - s.value) * (g - s.value);
    }
    println!(
        "gap ridge MSE over train: {:.5}",
        sq / dataset.train_indices().len() as f64
    );
    // model MSE at init
    let mut cache = SolveCache::default();
    let mut msq = 0.0;
    for &i in dataset.train_indices() {
        let s = &dataset.samples[i];
        let v = model.value_cached(&s.x, &s.u, &mut cache).unwrap();
        msq += (v - s.value) * (v - s.value);
    }
    println!(
        "full model MSE at init:   {:.5}",
        msq / dataset.train_indices().len() as f64
    );
    // slice of g at x=0
    let star = m.predict_minimizer(&[0.0]).unwrap();
    println!("u* = {:.3}", star.minimizer[0]);
    for k in 0..9 {
        let u = -1.0 + 0.25 * k as f64;
        let f = u * u + (std::f64::consts::TAU * u).sin();
        println!(
            "u={u:6.2} f={f:7.3} g={:7.3} pcm={:7.3}",
            m.gap.eval_scalar(&[0.0, u]),
            m.pcm.eval(&[0.0], &[u])
        );
    }
}

#[test]
#[ignore]
fn head_weight_scale() {
    let cfg = RunConfig::defaults(false);
    let dataset = case1::generate_dataset(&cfg).unwrap();
    let model = case1::init_model(&cfg, pcm_core::pcm::ModelKind::Eplse, &dataset).unwrap();
    let TrainedModel::Eplse(m) = &model else { panic!() };
    let head = m.gap.layers.last().unwrap();
    let mx = head.weights.iter().fold(0.0f64, |a, w| a.max(w.abs()));
    let l2: f64 = head.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    println!("gap head: max|w| = {mx:.2}, ||w|| = {l2:.2}");
    let off = m.pcm.offset_subnets()[0].layers.last().unwrap();
    let mx2 = off.weights.iter().fold(0.0f64, |a, w| a.max(w.abs()));
    println!("offset head 0: max|w| = {mx2:.2}");
}
