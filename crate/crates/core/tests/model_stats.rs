use fracnet::model::simulate_paths;
use fracnet::{DiffusionModel, TimeGrid};

const PATHS: usize = 20_000;

fn grid() -> TimeGrid {
    TimeGrid::builder().uniform(8).build()
}

#[test]
fn brownian_moments_and_increments() {
    let bm = DiffusionModel::brownian(2).unwrap();
    let g = grid();
    let batch = simulate_paths(&bm, &g, PATHS, 11).unwrap();
    let knots = g.knots().to_vec();
    let n = PATHS as f64;
    for (k, &t) in knots.iter().enumerate().skip(1) {
        for d in 0..2 {
            let xs: Vec<f64> = (0..PATHS).map(|i| batch.w_at(i, k)[d]).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| x * x).sum::<f64>() / n - mean * mean;
            assert!(mean.abs() < 4.0 * (t / n).sqrt(), "t={t} mean={mean}");
            // Var of sample variance of N(0, t) is 2t²/n
            assert!(
                (var - t).abs() < 4.0 * t * (2.0 / n).sqrt(),
                "t={t} var={var}"
            );
        }
    }
    // disjoint increments uncorrelated, coordinates independent
    let mid = knots.len() / 2;
    let last = knots.len() - 1;
    let mut c_time = 0.0;
    let mut c_coord = 0.0;
    for i in 0..PATHS {
        let a = batch.w_at(i, mid)[0];
        let b = batch.w_at(i, last)[0] - a;
        c_time += a * b;
        c_coord += batch.w_at(i, last)[0] * batch.w_at(i, last)[1];
    }
    let sd_time = (knots[mid] * (1.0 - knots[mid]) / n).sqrt();
    assert!((c_time / n).abs() < 4.0 * sd_time, "{}", c_time / n);
    assert!((c_coord / n).abs() < 4.0 / n.sqrt(), "{}", c_coord / n);
}

#[test]
fn geometric_is_a_martingale() {
    let gbm = DiffusionModel::geometric(1).unwrap();
    let g = grid();
    let batch = simulate_paths(&gbm, &g, PATHS, 5).unwrap();
    let n = PATHS as f64;
    for (k, &t) in g.knots().iter().enumerate() {
        let ys: Vec<f64> = (0..PATHS).map(|i| batch.y_at(&gbm, i, k)[0]).collect();
        let mean = ys.iter().sum::<f64>() / n;
        let sd = ((t.exp() - 1.0) / n).sqrt();
        assert!((mean - 1.0).abs() <= 4.0 * sd + 1e-15, "t={t} mean={mean}");
        assert!(ys.iter().all(|&y| y > 0.0));
    }
}

#[test]
fn same_seed_same_paths() {
    let bm = DiffusionModel::brownian(1).unwrap();
    let g = grid();
    let a = simulate_paths(&bm, &g, 64, 3).unwrap();
    let b = simulate_paths(&bm, &g, 64, 3).unwrap();
    let c = simulate_paths(&bm, &g, 64, 4).unwrap();
    let last = g.len() - 1;
    assert!((0..64).all(|i| a.w_at(i, last) == b.w_at(i, last)));
    assert!((0..64).any(|i| a.w_at(i, last) != c.w_at(i, last)));
}

#[test]
fn zero_paths_rejected() {
    let bm = DiffusionModel::brownian(1).unwrap();
    assert!(simulate_paths(&bm, &grid(), 0, 0).is_err());
}
