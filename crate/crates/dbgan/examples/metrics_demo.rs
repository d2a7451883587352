//! Link-prediction AUC/AP from edge scores, then k-means clustering of
//! embeddings scored with ACC, NMI and ARI.

use dbgan::autodiff::Matrix;
use dbgan::metrics::{clustering_metrics, compute_auc_ap, kmeans, KMEANS_MAX_ITER};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pos = [0.9, 0.8, 0.8, 0.35, 0.7];
    let neg = [0.1, 0.8, 0.3, 0.4, 0.2, 0.05];
    let (auc, ap) = compute_auc_ap(&pos, &neg)?;
    println!("auc {auc:.4}  ap {ap:.4}");

    // Three well separated blobs; cluster ids are a permutation of the labels.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let means = [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]];
    let labels: Vec<usize> = (0..90).map(|i| i % 3).collect();
    let h = Matrix::from_shape_fn((90, 2), |(i, j)| {
        means[labels[i]][j] + rng.sample::<f64, _>(StandardNormal)
    });
    let km = kmeans(&h, 3, 0, KMEANS_MAX_ITER)?;
    println!("k-means: {} iterations, inertia {:.2}", km.iterations, km.inertia);
    let c = clustering_metrics(&km.assignments, &labels)?;
    println!("acc {:.3}  nmi {:.3}  ari {:.3}", c.acc, c.nmi, c.ari);
    Ok(())
}
