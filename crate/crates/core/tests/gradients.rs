use encdec_ad::lstm::{EncDecModel, Parameters};
use encdec_ad::numerics::{seeded_gaussian, Matrix};
use encdec_ad::training::{train, Architecture, TrainConfig};

const H: f64 = 1e-5;

fn random_model(m: usize, c: usize, l: usize, seed: u64) -> EncDecModel {
    let mut model = EncDecModel::zeros(m, c, l);
    let shapes = model.params.block_shapes();
    let blocks: Vec<Vec<f64>> = shapes
        .iter()
        .enumerate()
        .map(|(k, (r, cc))| seeded_gaussian(seed * 1000 + k as u64, r * cc, 0.5))
        .collect();
    model.params = Parameters::from_blocks(m, c, &blocks).unwrap();
    model
}

fn batch_loss(model: &EncDecModel, batch: &[Matrix]) -> f64 {
    batch.iter().map(|w| model.window_loss(w).unwrap()).sum()
}

/// Central differences for every parameter, laid out like `to_blocks`.
fn numeric_gradient(model: &EncDecModel, batch: &[Matrix]) -> Vec<Vec<f64>> {
    let base = model.params.to_blocks();
    let mut out = Vec::with_capacity(base.len());
    for (b, block) in base.iter().enumerate() {
        let mut g = Vec::with_capacity(block.len());
        for i in 0..block.len() {
            let eval = |delta: f64| {
                let mut blocks = base.clone();
                blocks[b][i] += delta;
                let mut probe = model.clone();
                probe.params = Parameters::from_blocks(model.m, model.c, &blocks).unwrap();
                batch_loss(&probe, batch)
            };
            g.push((eval(H) - eval(-H)) / (2.0 * H));
        }
        out.push(g);
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Block relative error `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)`.
fn block_relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(1e-8)
}

#[test]
fn bptt_matches_finite_differences() {
    let (m, c, l) = (2, 4, 5);
    let names = Parameters::block_names();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let model = random_model(m, c, l, seed);
        let batch: Vec<Matrix> = (0..2)
            .map(|k| Matrix::from_vec(l, m, seeded_gaussian(10_000 + seed * 7 + k, l * m, 1.0)).unwrap())
            .collect();
        let refs: Vec<&Matrix> = batch.iter().collect();
        let (loss, grad) = model.loss_and_gradients(&refs).unwrap();
        assert!((loss - batch_loss(&model, &batch)).abs() <= 1e-12 * loss.max(1.0));
        let analytic = grad.to_blocks();
        let numeric = numeric_gradient(&model, &batch);
        for (k, name) in names.iter().enumerate() {
            let err = block_relative_error(&analytic[k], &numeric[k]);
            worst = worst.max(err);
            assert!(err < 1e-4, "seed {seed}, block {name}: relative error {err:e}");
        }
    }
    println!("worst block relative error {worst:e}");
}

#[test]
fn gradient_vanishes_at_exact_fit() {
    // Zero weights with output bias equal to a constant window reproduce it exactly.
    let (m, c, l) = (2, 3, 6);
    let mut model = EncDecModel::zeros(m, c, l);
    model.params.output_bias = vec![0.7, -1.3];
    let w = Matrix::from_vec(l, m, [0.7, -1.3].repeat(l)).unwrap();
    let (loss, grad) = model.loss_and_gradients(&[&w]).unwrap();
    assert!(loss < 1e-10);
    assert!(grad.global_norm() < 1e-4);
}

#[test]
fn gradient_small_at_trained_minimum() {
    let l = 10;
    let w = Matrix::from_vec(l, 1, (0..l).map(|i| (i as f64 * 0.6).sin()).collect()).unwrap();
    let cfg = TrainConfig {
        max_epochs: 4000,
        patience: 4000,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let arch = Architecture { m: 1, c: 8, window_length: l };
    let (model, _) = train(&[w.clone()], &[w.clone()], arch, &cfg).unwrap();
    let (loss, grad) = model.loss_and_gradients(&[&w]).unwrap();
    println!("trained loss {loss:e}, gradient norm {:e}", grad.global_norm());
    assert!(loss < 1e-10);
    assert!(grad.global_norm() < 1e-4);
}
