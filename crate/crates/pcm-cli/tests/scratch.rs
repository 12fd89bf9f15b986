// temporary diagnosis harness, not part of the suite
use pcm_core::checkpoint::read_eplse_model;
use std::fs::File;
use std::io::BufReader;

#[test]
#[ignore]
fn diagnose_case1_eplse() {
    let path = "/tmp/out-case1f/model_eplse.ckpt";
    let model = read_eplse_model(BufReader::new(File::open(path).unwrap())).unwrap();
    let f = |x: f64, u: f64| x * x + u * u + (std::f64::consts::TAU * u).sin();
    for x in [-0.8, 0.0, 0.5] {
        let star = model.predict_minimizer(&[x]).unwrap();
        println!(
            "x={x}: u*={:.4} pcm(u*)={:.4} true_min={:.4}",
            star.minimizer[0],
            star.value,
            x * x - 0.9406
        );
        print!("  u:      ");
        for k in 0..9 {
            let u = -1.0 + 0.25 * k as f64;
            print!("{u:7.2} ");
        }
        println!();
        print!("  f:      ");
        for k in 0..9 {
            let u = -1.0 + 0.25 * k as f64;
            print!("{:7.3} ", f(x, u));
        }
        println!();
        print!("  fhat:   ");
        for k in 0..9 {
            let u = -1.0 + 0.25 * k as f64;
            print!("{:7.3} ", model.eval_with_minimizer(&[x], &[u], &star));
        }
        println!();
        print!("  pcm:    ");
        for k in 0..9 {
            let u = -1.0 + 0.25 * k as f64;
            print!("{:7.3} ", model.pcm.eval(&[x], &[u]));
        }
        println!();
        print!("  gate:   ");
        for k in 0..9 {
            let u = -1.0 + 0.25 * k as f64;
            let g_u = model.gap.eval_scalar(&[x, u]);
            let g_s = model.gap.eval_scalar(&[x, star.minimizer[0]]);
            print!("{:7.3} ", g_u - g_s);
        }
        println!();
    }
}
