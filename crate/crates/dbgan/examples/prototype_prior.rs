//! Chooses prototype nodes with a k-DPP over `I + Â`, projects their features
//! with PCA and fits the Gaussian KDE prior. Also shows greedy MAP selection,
//! the path taken for large graphs.

use dbgan::graph::{normalize_adjacency, PlantedPartition};
use dbgan::prior::{build_dpp_kernel, estimate_prior, greedy_map_dpp, Prior, PriorOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = PlantedPartition::default().sample(5);
    let labels = g.labels().unwrap();

    let opts = PriorOptions { prototypes: 30, ..PriorOptions::new(8, 5) };
    let est = estimate_prior(&g, &opts)?;
    let protos = est.prototypes.as_ref().unwrap();
    let mut per_class = [0usize; 3];
    for &i in &protos.indices {
        per_class[labels[i]] += 1;
    }
    println!("{:?} picked {} prototypes, per class {per_class:?}", protos.method, protos.indices.len());
    println!("PCA keeps {:.1}% of the prototype feature variance", 100.0 * est.explained_variance.unwrap());

    let Prior::Kde(kde) = &est.prior else { unreachable!() };
    println!("KDE: {} centers in {} dims, Scott bandwidth {:.4}", kde.len(), kde.dim(), kde.bandwidth());
    let z = est.prior.sample(4, &mut ChaCha8Rng::seed_from_u64(0));
    for row in z.rows() {
        let p: Vec<f64> = row.to_vec();
        println!("  z = {:>7.3?}  log p = {:.3}", p, kde.log_density(&p));
    }

    let kernel = build_dpp_kernel(&normalize_adjacency(&g, false))?;
    let greedy = greedy_map_dpp(&kernel, 30);
    println!(
        "greedy MAP: {} nodes, log det L_S = {:.3}",
        greedy.prototypes.indices.len(),
        greedy.log_det()
    );
    Ok(())
}
