//! Analytic BPTT gradients against central finite differences.

use clusd_core::lstm::LstmParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng, input: usize) -> (Vec<f64>, Vec<f64>) {
    let t = rng.random_range(1..7);
    let x = (0..t * input)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    let y = (0..t).map(|_| f64::from(rng.random_bool(0.4))).collect();
    (x, y)
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let step = 1e-5;
    for case in 0..10 {
        let input = rng.random_range(1..6);
        let hidden = rng.random_range(1..6);
        let params = LstmParams::init(input, hidden, case);
        let (x, y) = random_instance(&mut rng, input);
        let (_, grad) = params.loss_and_grad(&x, &y).unwrap();
        let mut worst: f64 = 0.0;
        for (i, &analytic) in grad.iter().enumerate() {
            let mut plus = params.clone();
            plus.as_flat_mut()[i] += step;
            let mut minus = params.clone();
            minus.as_flat_mut()[i] -= step;
            let numeric = (plus.loss(&x, &y).unwrap() - minus.loss(&x, &y).unwrap()) / (2.0 * step);
            let denom = numeric.abs().max(analytic.abs()).max(1e-7);
            worst = worst.max((numeric - analytic).abs() / denom);
        }
        assert!(worst < 1e-4, "case {case}: max relative error {worst:e}");
    }
}
