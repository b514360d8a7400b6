//! Fits every classical regressor on a noisy linear problem and compares
//! held-out MAE.

use motility::classical::{ClassicalMethod, Dataset2D, ElasticNetParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn split(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y = rows.iter().map(|r| 50.0 + 20.0 * r[0] - 10.0 * r[3] + rng.random_range(-2.0..2.0)).collect();
    (rows, y)
}

fn main() -> motility::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (rows, y) = split(120, &mut rng);
    let (test_rows, test_y) = split(60, &mut rng);
    let train = Dataset2D::anonymous(&rows, y)?;
    let methods = [
        ClassicalMethod::Zeror,
        ClassicalMethod::SimpleLinear,
        ClassicalMethod::ElasticNet(ElasticNetParams::default()),
        ClassicalMethod::RandomTree { max_depth: None, min_leaf: 5 },
        ClassicalMethod::RandomForest { n_trees: 50, max_depth: None, min_leaf: 5 },
    ];
    for m in methods {
        let model = m.fit(&train, 0)?;
        let mae = test_rows.iter().zip(&test_y).map(|(r, t)| (model.predict(r) - t).abs()).sum::<f64>() / test_y.len() as f64;
        println!("{:14} held-out MAE {mae:6.3}", m.name());
    }
    Ok(())
}
