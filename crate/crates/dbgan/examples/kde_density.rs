//! Fits a 1-D Gaussian KDE with Scott's rule and compares its samples against
//! its own density on a grid.

use dbgan::autodiff::Matrix;
use dbgan::prior::{fit_kde, BandwidthRule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let centers = Matrix::from_shape_vec((6, 1), vec![-2.0, -1.5, -1.4, 0.3, 2.0, 2.2])?;
    let kde = fit_kde(centers, BandwidthRule::Scott)?;
    println!("bandwidth {:.4}", kde.bandwidth());

    let draws = kde.sample(50_000, &mut ChaCha8Rng::seed_from_u64(9));
    let (lo, hi, bins) = (-4.0, 4.0, 16);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in draws.iter() {
        let b = ((v - lo) / width).floor();
        if (0.0..bins as f64).contains(&b) {
            counts[b as usize] += 1;
        }
    }
    println!("{:>8} {:>9} {:>9}", "x", "density", "histogram");
    for (b, c) in counts.iter().enumerate() {
        let mid = lo + (b as f64 + 0.5) * width;
        let hist = *c as f64 / (draws.len() as f64 * width);
        println!("{mid:>8.2} {:>9.4} {hist:>9.4}", kde.density(&[mid]));
    }
    Ok(())
}
