//! Acceptance suite: one PASS / FAIL / BLOCKED line per criterion.
//!
//! Criteria 5 to 10 need the citation datasets under `DBGAN_DATA_DIR`
//! (`cora/`, `citeseer/`, `pubmed/`, each with `edges.txt`, `features.csv`,
//! `labels.txt`) and report BLOCKED without them. Pass criterion numbers as
//! arguments to run a subset: `cargo test --release --test acceptance -- 2 4`.

mod common;

use std::collections::HashMap;
use std::path::PathBuf;
use std::rc::Rc;
use std::time::Instant;

use dbgan::autodiff::{finite_difference_check, Matrix, Result as TResult, Tape, Var};
use dbgan::cli::{self, DatasetPaths};
use dbgan::graph::{normalize_adjacency, CsrMatrix, Graph, PlantedPartition};
use dbgan::metrics::{clustering_metrics, compute_auc_ap, evaluate_embeddings, RunMetrics};
use dbgan::nn::{
    adjacency_operand, discriminator_forward, encoder_forward, generator_forward, Architecture, GcnVars, ModelParams,
    MlpVars,
};
use dbgan::prior::{
    elementary_symmetric, fit_kde, kdpp_subset_probability, sample_kdpp, BandwidthRule, DppKernel,
};
use dbgan::train::{
    embed, gradient_penalty, loss_dx, loss_dz, loss_ea, loss_encoder_total, reconstruction_loss, AdjacencyTarget,
    FeatureLoss, TrainConfig, TrainData,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

enum Status {
    Pass,
    Fail,
    Blocked,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail: detail.into(),
    }
}

fn blocked(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Blocked,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

type Scalar = Box<dyn for<'t> Fn(&'t Tape, Var<'t>) -> TResult<Var<'t>>>;

fn op<F>(f: F) -> Scalar
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> TResult<Var<'t>> + 'static,
{
    Box::new(f)
}

/// Reduces with distinct weights so every entry's gradient differs.
fn wsum(v: Var<'_>) -> TResult<Var<'_>> {
    let (r, c) = v.shape();
    let w = Matrix::from_shape_fn((r, c), |(i, j)| 0.3 + 0.17 * i as f64 - 0.11 * j as f64 * (-1f64).powi(i as i32));
    Ok(v.mul(v.tape().constant(w))?.sum())
}

fn fixed(shape: (usize, usize), seed: u64, lo: f64, hi: f64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_shape_fn(shape, |_| rng.random_range(lo..hi))
}

fn primitive_checks() -> Vec<(&'static str, Scalar)> {
    let sparse = Rc::new(CsrMatrix::from_triplets(
        4,
        4,
        vec![(0, 0, 0.5), (0, 2, -1.0), (1, 3, 2.0), (2, 1, 0.25), (3, 0, 1.5), (3, 3, -0.75)],
    ));
    let sp = sparse.clone();
    let positives = CsrMatrix::from_triplets(4, 4, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (2, 3, 1.0), (3, 2, 1.0)]);
    vec![
        ("matmul (left)", op(|t, x| wsum(x.matmul(t.constant(fixed((3, 2), 1, -1.0, 1.0)))?))),
        ("matmul (right)", op(|t, x| wsum(t.constant(fixed((2, 4), 2, -1.0, 1.0)).matmul(x)?))),
        ("sparse matmul", op(move |_, x| wsum(x.left_sparse_mul(&sp)?))),
        ("add", op(|t, x| wsum(x.add(t.constant(fixed((4, 3), 3, -1.0, 1.0)))?))),
        ("sub", op(|t, x| wsum(t.constant(fixed((4, 3), 4, -1.0, 1.0)).sub(x)?))),
        ("mul", op(|_, x| wsum(x.mul(x.scale(0.5).add_scalar(0.1))?))),
        ("div (numerator)", op(|t, x| wsum(x.div(t.constant(fixed((4, 3), 5, 0.5, 2.0)))?))),
        ("div (denominator)", op(|t, x| wsum(t.constant(fixed((4, 3), 6, -1.0, 1.0)).div(x)?))),
        ("div_guarded", op(|t, x| {
            let mut d = fixed((4, 3), 7, 0.5, 2.0);
            d[[1, 2]] = 0.0;
            wsum(x.div_guarded(t.constant(d))?)
        })),
        ("scale", op(|_, x| wsum(x.scale(-2.5)))),
        ("neg", op(|_, x| wsum(x.neg()))),
        ("add_scalar", op(|_, x| wsum(x.add_scalar(0.7).square()))),
        ("add_bias (input)", op(|t, x| wsum(x.add_bias(t.constant(fixed((1, 3), 8, -1.0, 1.0)))?.square()))),
        ("add_bias (bias)", op(|t, x| wsum(t.constant(fixed((5, 3), 9, -1.0, 1.0)).add_bias(x.slice_rows(0, 1)?)?.square()))),
        ("relu", op(|_, x| wsum(x.add_scalar(-0.8).relu()))),
        ("sigmoid", op(|_, x| wsum(x.sigmoid()))),
        ("ln", op(|_, x| wsum(x.ln()?))),
        ("square", op(|_, x| wsum(x.square()))),
        ("sqrt", op(|_, x| wsum(x.sqrt()?))),
        ("clamp", op(|_, x| wsum(x.clamp(0.5, 1.0).square()))),
        ("sum", op(|_, x| Ok(x.square().sum()))),
        ("mean", op(|_, x| Ok(x.square().mean()))),
        ("expand", op(|_, x| wsum(x.square().sum().expand((2, 5))?))),
        ("sum_rows / broadcast_rows", op(|_, x| wsum(x.square().sum_rows().broadcast_rows(3)?))),
        ("sum_cols / broadcast_cols", op(|_, x| wsum(x.square().sum_cols().broadcast_cols(2)?))),
        ("transpose", op(|_, x| wsum(x.square().transpose()))),
        ("concat_rows", op(|_, x| wsum(x.concat_rows(x.square())?))),
        ("slice_rows", op(|_, x| wsum(x.square().slice_rows(1, 2)?))),
        ("row_norm", op(|_, x| wsum(x.row_norm()))),
        ("bce", op(|_, x| {
            let target = Rc::new(fixed((4, 3), 10, 0.0, 1.0));
            x.sigmoid().bce(target, 2.0, 1e-7)
        })),
        ("gram_bce", op(move |_, x| x.gram_bce(&positives, 1.5, 1e-7))),
    ]
}

fn small_model() -> (Graph, ModelParams) {
    let g = PlantedPartition {
        block_sizes: vec![8, 8],
        p_in: 0.4,
        p_out: 0.05,
        feature_dim: 6,
        ..PlantedPartition::default()
    }
    .sample(2);
    let arch = Architecture {
        feature_dim: 6,
        latent_dim: 3,
        encoder_hidden: 5,
        generator_hidden: vec![4, 5],
        dz_hidden: vec![4, 3],
        dx_hidden: vec![5, 4],
    };
    (g, ModelParams::init(&arch, 3))
}

fn criterion_1() -> Outcome {
    let x0 = fixed((4, 3), 0, 0.2, 1.5);
    let mut worst: (f64, &str) = (0.0, "");
    for (name, f) in primitive_checks() {
        match finite_difference_check(&f, &x0, 1e-6) {
            Ok(e) if e > worst.0 => worst = (e, name),
            Ok(_) => {}
            Err(e) => return check(false, format!("{name}: {e}")),
        }
    }

    let (g, p) = small_model();
    let x = Rc::new(g.features().clone());
    let adj = adjacency_operand(&normalize_adjacency(&g, true));
    let target = AdjacencyTarget::new(g.n(), g.edges());
    let enc_err = finite_difference_check(
        |t, w| {
            let mut enc = GcnVars::register(t, &p.encoder, false);
            enc.weights[0] = w;
            let h = encoder_forward(t.constant((*x).clone()), &adj, &enc)?;
            let gen = GcnVars::register(t, &p.generator, false);
            let xr = generator_forward(h, &adj, &gen)?;
            let rec = reconstruction_loss(&x, Some(xr), h, &target, FeatureLoss::Bce)?;
            loss_encoder_total(loss_ea(h, &MlpVars::register(t, &p.d_z, false))?, rec, 1.0)
        },
        &p.encoder[0].weight,
        1e-5,
    );
    let h0 = fixed((g.n(), 3), 11, -1.0, 1.0);
    let z0 = fixed((g.n(), 3), 12, -1.0, 1.0);
    let dz_err = finite_difference_check(
        |t, w| {
            let mut d = MlpVars::register(t, &p.d_z, false);
            d.weights[0] = w;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            loss_dz(t, t.constant(z0.clone()), t.constant(h0.clone()), &d, 0.0, &mut rng)
        },
        &p.d_z.weights[0],
        1e-6,
    );
    let fake = fixed((g.n(), 6), 13, 0.0, 1.0);
    let dx_gp_err = finite_difference_check(
        |t, w| {
            let mut d = MlpVars::register(t, &p.d_x, false);
            d.weights[0] = w;
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            loss_dx(t, t.constant((*x).clone()), t.constant(fake.clone()), &d, 1.0, &mut rng)
        },
        &p.d_x.weights[0],
        1e-6,
    );
    let gp_err = finite_difference_check(
        |t, w| {
            let mut d = MlpVars::register(t, &p.d_x, false);
            d.weights[1] = w;
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            gradient_penalty(t, &d, &x, &fake, &mut rng)
        },
        &p.d_x.weights[1],
        1e-6,
    );
    let (enc_err, dz_err, dx_gp_err, gp_err) = match (enc_err, dz_err, dx_gp_err, gp_err) {
        (Ok(a), Ok(b), Ok(c), Ok(d)) => (a, b, c, d),
        (a, b, c, d) => return check(false, format!("evaluation failed: {a:?} {b:?} {c:?} {d:?}")),
    };
    // Sanity: the critic forward on its own reaches the same accuracy.
    let critic_err = finite_difference_check(
        |t, xv| Ok(discriminator_forward(xv, &MlpVars::register(t, &p.d_x, false))?.mean()),
        &fake,
        1e-6,
    )
    .unwrap_or(f64::INFINITY);
    let first_order = worst.0.max(enc_err).max(dz_err).max(critic_err);
    let penalty = dx_gp_err.max(gp_err);
    check(
        first_order < 1e-4 && penalty < 1e-3,
        format!(
            "max rel. err {:.1e} over primitives (worst: {}), encoder loss {enc_err:.1e}, \
             D_z loss {dz_err:.1e}, critic {critic_err:.1e}; gradient penalty {penalty:.1e}",
            worst.0, worst.1
        ),
    )
}

// ---------------------------------------------------------------- 2

fn random_psd(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let b = Matrix::from_shape_fn((n, rank), |_| rng.random_range(-1.0..1.0));
    b.dot(&b.t())
}

fn nalgebra_det(m: &Matrix) -> f64 {
    let (r, c) = m.dim();
    DMatrix::from_fn(r, c, |i, j| m[[i, j]]).determinant()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut identity_err, mut esp_err, mut norm_err) = (0f64, 0f64, 0f64);
    for trial in 0..100 {
        let n = 1 + trial % 12;
        let rank = rng.random_range(1..=n);
        let l = random_psd(n, rank, &mut rng);
        let mut kernel = DppKernel::from_dense(l.clone()).unwrap();
        let mut by_size = vec![0.0; n + 1];
        let mut prob_by_size = vec![0.0; n + 1];
        for mask in 0u32..1 << n {
            let s: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let sub = Matrix::from_shape_fn((s.len(), s.len()), |(a, b)| l[[s[a], s[b]]]);
            by_size[s.len()] += if s.is_empty() { 1.0 } else { nalgebra_det(&sub) };
            if !s.is_empty() && s.len() <= rank {
                prob_by_size[s.len()] += kdpp_subset_probability(&mut kernel, &s, s.len()).unwrap();
            }
        }
        let want = nalgebra_det(&(l.clone() + Matrix::eye(n)));
        let total: f64 = by_size.iter().sum();
        identity_err = identity_err.max((total - want).abs() / want);
        let eig = DMatrix::from_fn(n, n, |i, j| l[[i, j]]).symmetric_eigenvalues();
        let eig: Vec<f64> = eig.iter().copied().collect();
        let esp_total: f64 = (0..=n).map(|k| elementary_symmetric(&eig, k)).sum();
        esp_err = esp_err.max((esp_total - want).abs() / want);
        for p in &prob_by_size[1..=rank] {
            norm_err = norm_err.max((p - 1.0).abs());
        }
    }

    let n = 6;
    let mut l = random_psd(n, n, &mut rng);
    for i in 0..n {
        l[[i, i]] += 0.1;
    }
    let mut kernel = DppKernel::from_dense(l.clone()).unwrap();
    let pairs: Vec<[usize; 2]> = (0..n).flat_map(|a| (a + 1..n).map(move |b| [a, b])).collect();
    let weights: Vec<f64> = pairs
        .iter()
        .map(|&[a, b]| l[[a, a]] * l[[b, b]] - l[[a, b]] * l[[b, a]])
        .collect();
    let z: f64 = weights.iter().sum();
    let draws = 100_000;
    let mut counts = vec![0usize; pairs.len()];
    let mut sampler = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..draws {
        let s = sample_kdpp(&mut kernel, 2, 3000, &mut sampler).unwrap().indices;
        counts[pairs.iter().position(|p| p[..] == s[..]).unwrap()] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&weights)
        .map(|(&c, w)| {
            let e = draws as f64 * w / z;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new((pairs.len() - 1) as f64).unwrap().cdf(stat);
    check(
        identity_err < 1e-8 && esp_err < 1e-8 && norm_err < 1e-8 && p_value > 0.01,
        format!(
            "subset-sum identity rel. err {identity_err:.1e}, e_k sum {esp_err:.1e}, k-DPP normalization \
             {norm_err:.1e}; chi-square {stat:.2} on {} df, p = {p_value:.3}",
            pairs.len() - 1
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c1 = Matrix::from_shape_fn((7, 1), |_| rng.random_range(-3.0..3.0));
    let kde1 = fit_kde(c1.clone(), BandwidthRule::Scott).unwrap();
    let b = kde1.bandwidth();
    let (lo, hi) = (c1.iter().copied().fold(f64::INFINITY, f64::min) - 10.0 * b, c1.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 10.0 * b);
    let steps = 20_000;
    let h = (hi - lo) / steps as f64;
    let int1: f64 = (0..=steps)
        .map(|i| {
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            w * kde1.density(&[lo + i as f64 * h])
        })
        .sum::<f64>()
        * h;

    let c2 = Matrix::from_shape_fn((6, 2), |_| rng.random_range(-2.0..2.0));
    let kde2 = fit_kde(c2.clone(), BandwidthRule::Scott).unwrap();
    let b2 = kde2.bandwidth();
    let (lo2, hi2) = (-2.0 - 8.0 * b2, 2.0 + 8.0 * b2);
    let g = 400;
    let h2 = (hi2 - lo2) / g as f64;
    let mut int2 = 0.0;
    for i in 0..=g {
        for j in 0..=g {
            let w = if i == 0 || i == g { 0.5 } else { 1.0 } * if j == 0 || j == g { 0.5 } else { 1.0 };
            int2 += w * kde2.density(&[lo2 + i as f64 * h2, lo2 + j as f64 * h2]);
        }
    }
    int2 *= h2 * h2;

    let samples = 100_000;
    let mut draws: Vec<f64> = kde1.sample(samples, &mut ChaCha8Rng::seed_from_u64(31)).iter().copied().collect();
    draws.sort_by(f64::total_cmp);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let cdf = |x: f64| c1.iter().map(|c| unit.cdf((x - c) / b)).sum::<f64>() / c1.len() as f64;
    let ks = draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / samples as f64 - f).max(f - i as f64 / samples as f64)
        })
        .fold(0.0, f64::max);
    check(
        (int1 - 1.0).abs() < 1e-2 && (int2 - 1.0).abs() < 1e-2 && ks < 0.01,
        format!("integral 1-D {int1:.6}, 2-D {int2:.6}; KS statistic {ks:.5} at {samples} samples"),
    )
}

// ---------------------------------------------------------------- 4

fn ap_oracle(pos: &[f64], neg: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = pos.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds
        .iter()
        .map(|&t| {
            let at = pos.iter().filter(|&&p| p == t).count() as f64;
            let tp = pos.iter().filter(|&&p| p >= t).count() as f64;
            let fp = neg.iter().filter(|&&n| n >= t).count() as f64;
            at / pos.len() as f64 * tp / (tp + fp)
        })
        .sum()
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for slot in 0..k {
            let mut q = p.clone();
            q.insert(slot, k - 1);
            out.push(q);
        }
    }
    out
}

fn cluster_oracle(a: &[usize], l: &[usize]) -> (f64, f64, f64) {
    let n = a.len();
    let r = a.iter().chain(l).max().unwrap() + 1;
    let acc = permutations(r)
        .iter()
        .map(|p| a.iter().zip(l).filter(|(x, y)| p[**x] == **y).count())
        .max()
        .unwrap() as f64
        / n as f64;

    let nf = n as f64;
    let count = |v: &[usize], k: usize| v.iter().filter(|&&x| x == k).count() as f64;
    let h = |v: &[usize]| -> f64 {
        (0..r)
            .map(|k| count(v, k) / nf)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    };
    let (ha, hl) = (h(a), h(l));
    let mut mi = 0.0;
    for i in 0..r {
        for j in 0..r {
            let nij = a.iter().zip(l).filter(|&(&x, &y)| x == i && y == j).count() as f64;
            if nij > 0.0 {
                mi += nij / nf * (nf * nij / (count(a, i) * count(l, j))).ln();
            }
        }
    }
    let nmi = if ha == 0.0 && hl == 0.0 { 1.0 } else { (mi / ((ha + hl) / 2.0)).clamp(0.0, 1.0) };

    let (mut n11, mut n10, mut n01, mut n00) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            match (a[i] == a[j], l[i] == l[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    let den = (n11 + n01) * (n01 + n00) + (n11 + n10) * (n10 + n00);
    let ari = if den == 0.0 { 1.0 } else { 2.0 * (n11 * n00 - n01 * n10) / den };
    (acc, nmi, ari)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut auc_mismatch, mut ap_err) = (0, 0f64);
    for trial in 0..500 {
        let (np, nn) = (rng.random_range(1..60), rng.random_range(1..60));
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| {
                    if trial % 2 == 0 {
                        rng.random_range(0..5) as f64 / 4.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect()
        };
        let (pos, neg) = (draw(np), draw(nn));
        let (auc, ap) = compute_auc_ap(&pos, &neg).unwrap();
        let (mut gt, mut eq) = (0u64, 0u64);
        for p in &pos {
            for n in &neg {
                gt += u64::from(p > n);
                eq += u64::from(p == n);
            }
        }
        let want = (2 * gt + eq) as f64 / 2.0 / (np as f64 * nn as f64);
        auc_mismatch += usize::from(auc != want);
        ap_err = ap_err.max((ap - ap_oracle(&pos, &neg)).abs());
    }
    let mut cluster_err = 0f64;
    for _ in 0..300 {
        let n = rng.random_range(1..80);
        let (ka, kl) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let l: Vec<usize> = (0..n).map(|_| rng.random_range(0..kl)).collect();
        let got = clustering_metrics(&a, &l).unwrap();
        let (acc, nmi, ari) = cluster_oracle(&a, &l);
        cluster_err = cluster_err
            .max((got.acc - acc).abs())
            .max((got.nmi - nmi).abs())
            .max((got.ari - ari).abs());
    }
    check(
        auc_mismatch == 0 && ap_err < 1e-12 && cluster_err < 1e-9,
        format!(
            "AUC differs from the pair-count oracle in {auc_mismatch}/500 sets; max AP error {ap_err:.1e}; \
             max ACC/NMI/ARI error {cluster_err:.1e} over 300 random tables"
        ),
    )
}

// ---------------------------------------------------------------- 5 to 10

struct Datasets {
    root: Option<PathBuf>,
    graphs: HashMap<&'static str, Result<Graph, String>>,
    runs: HashMap<String, Vec<RunMetrics>>,
}

impl Datasets {
    fn graph(&mut self, name: &'static str) -> Result<Graph, String> {
        let Some(root) = self.root.clone() else {
            return Err(format!("DBGAN_DATA_DIR is not set; {name} is not available offline"));
        };
        self.graphs
            .entry(name)
            .or_insert_with(|| {
                let dir = root.join(name);
                let paths = DatasetPaths {
                    edges: dir.join("edges.txt"),
                    features: dir.join("features.csv"),
                    labels: Some(dir.join("labels.txt")),
                };
                if !paths.edges.exists() {
                    return Err(format!("{} not found", paths.edges.display()));
                }
                cli::load_dataset(&paths, FeatureLoss::Bce).map_err(|e| e.to_string())
            })
            .clone()
    }

    /// Trains and scores one configuration per seed, caching by key.
    fn runs(&mut self, key: &str, g: &Graph, config: &TrainConfig, seeds: &[u64]) -> Result<Vec<RunMetrics>, String> {
        if let Some(r) = self.runs.get(key) {
            return Ok(r.clone());
        }
        let k = g.num_classes().unwrap_or(1);
        let results: Vec<Result<RunMetrics, String>> = seeds
            .par_iter()
            .map(|&seed| {
                let (split, out) = cli::train_seed(g, config, seed, |_, _| {}).map_err(|e| e.to_string())?;
                let data = TrainData::from_split(g, &split).map_err(|e| e.to_string())?;
                let h = embed(&out.params, &data).map_err(|e| e.to_string())?;
                evaluate_embeddings(&h, Some(&split), g.labels(), k, seed).map_err(|e| e.to_string())
            })
            .collect();
        let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        self.runs.insert(key.to_string(), runs.clone());
        Ok(runs)
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn lp_means(runs: &[RunMetrics]) -> (f64, f64) {
    (
        100.0 * mean(runs.iter().filter_map(|r| r.auc)),
        100.0 * mean(runs.iter().filter_map(|r| r.ap)),
    )
}

const SEEDS5: [u64; 5] = [0, 1, 2, 3, 4];

fn gae() -> TrainConfig {
    TrainConfig {
        use_bal: false,
        strict_gae: true,
        use_pde: false,
        ..TrainConfig::default()
    }
}

fn no_pde() -> TrainConfig {
    TrainConfig {
        use_pde: false,
        ..TrainConfig::default()
    }
}

macro_rules! need {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(msg) => return blocked(msg),
        }
    };
}

macro_rules! try_run {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(msg) => return check(false, msg),
        }
    };
}

fn criterion_5(d: &mut Datasets) -> Outcome {
    let g = need!(d.graph("cora"));
    let runs = try_run!(d.runs("cora/gae", &g, &gae(), &SEEDS5));
    let (auc, ap) = lp_means(&runs);
    check(
        (auc - 91.0).abs() <= 1.5 && (ap - 92.0).abs() <= 1.5,
        format!("Cora, no adversarial terms and N(0,1) prior: AUC {auc:.2} (91.0 ± 1.5), AP {ap:.2} (92.0 ± 1.5)"),
    )
}

fn criterion_6(d: &mut Datasets) -> Outcome {
    let g = need!(d.graph("cora"));
    let full = try_run!(d.runs("cora/full", &g, &TrainConfig::default(), &SEEDS5));
    let (auc, ap) = lp_means(&full);
    if auc >= 92.5 && ap >= 93.0 {
        return check(true, format!("Cora: AUC {auc:.2} (≥ 92.5), AP {ap:.2} (≥ 93.0)"));
    }
    let (auc_npde, _) = lp_means(&try_run!(d.runs("cora/no-pde", &g, &no_pde(), &SEEDS5)));
    let (auc_gae, _) = lp_means(&try_run!(d.runs("cora/gae", &g, &gae(), &SEEDS5)));
    check(
        auc > auc_npde && auc_npde > auc_gae,
        format!(
            "Cora: AUC {auc:.2}, AP {ap:.2} miss the target; ordering full {auc:.2} > no PDE {auc_npde:.2} > \
             neither {auc_gae:.2}"
        ),
    )
}

fn criterion_7(d: &mut Datasets) -> Outcome {
    let g = need!(d.graph("citeseer"));
    let (auc, ap) = lp_means(&try_run!(d.runs("citeseer/full", &g, &TrainConfig::default(), &SEEDS5)));
    check(auc >= 92.0, format!("Citeseer: AUC {auc:.2} (≥ 92.0), AP {ap:.2}"))
}

fn criterion_8(d: &mut Datasets) -> Outcome {
    let g = need!(d.graph("cora"));
    let acc = |runs: &[RunMetrics]| mean(runs.iter().filter_map(|r| r.cluster.map(|c| c.acc)));
    let full = acc(&try_run!(d.runs("cora/full", &g, &TrainConfig::default(), &SEEDS5)));
    let no_bal = TrainConfig {
        use_bal: false,
        ..TrainConfig::default()
    };
    let ablation = acc(&try_run!(d.runs("cora/no-bal", &g, &no_bal, &SEEDS5)));
    check(
        full >= 0.65 && full > ablation,
        format!("Cora clustering ACC {full:.3} (≥ 0.65) vs {ablation:.3} without adversarial terms"),
    )
}

fn criterion_9(d: &mut Datasets) -> Outcome {
    let g = need!(d.graph("cora"));
    let seeds = [0, 1, 2];
    let at = |d: &mut Datasets, q: usize| -> Result<f64, String> {
        let config = TrainConfig { q, ..TrainConfig::default() };
        Ok(lp_means(&d.runs(&format!("cora/q{q}"), &g, &config, &seeds)?).0)
    };
    let (lo, hi) = (try_run!(at(d, 8)), try_run!(at(d, 128)));
    check(hi - lo >= 1.0, format!("Cora AUC at q=8 {lo:.2}, at q=128 {hi:.2} (gap ≥ 1.0 needed)"))
}

fn criterion_10(d: &mut Datasets) -> Outcome {
    let g = need!(d.graph("pubmed"));
    let config = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    let runs = try_run!(d.runs("pubmed/smoke", &g, &config, &[0]));
    let auc = runs[0].auc.unwrap_or(0.0);
    check(auc > 0.85, format!("Pubmed, 50 epochs with greedy prototypes: AUC {auc:.4} (> 0.85)"))
}

// ---------------------------------------------------------------- 11

fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let g = PlantedPartition::default().sample(21);
    let files = common::write_dataset(&tmp.path().join("data"), &g, true);
    let cfg = common::write_config(tmp.path(), &files, "");
    let cfg = cfg.to_str().unwrap();
    let run = |name: &str, threads: &str| -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
        let out = tmp.path().join(name);
        let o = out.to_str().unwrap();
        let steps: [&[&str]; 4] = [
            &["train", "--config", cfg, "--out", o, "--seed", "5", "--runs", "2"],
            &["eval", "--out", o, "--task", "both"],
            &["export", "--out", o, "--labels"],
            &["sweep-dim", "--config", cfg, "--out", &format!("{o}/sweep"), "--q", "4,8"],
        ];
        for args in steps {
            let r = common::dbgan(args, &[("DBGAN_THREADS", threads)]);
            if r.code != 0 {
                return Err(format!("dbgan {} exited {}: {}", args.join(" "), r.code, r.stderr));
            }
        }
        Ok(common::snapshot(&out))
    };
    let (a, b, c) = match (run("a", "2"), run("b", "2"), run("c", "1")) {
        (Ok(a), Ok(b), Ok(c)) => (a, b, c),
        (a, b, c) => return check(false, format!("{:?}", [a.err(), b.err(), c.err()])),
    };
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let other_threads = a
        .iter()
        .zip(&c)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect::<Vec<_>>();
    check(
        a.len() == b.len() && differing.is_empty(),
        format!(
            "{} artifacts compared across two runs at 2 threads, {} differ; at 1 thread only {:?} differ",
            a.len(),
            differing.len(),
            other_threads
        ),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    // Name filters meant for other test targets select nothing here.
    if selected.is_empty() && !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let mut data = Datasets {
        root: std::env::var_os("DBGAN_DATA_DIR").map(PathBuf::from),
        graphs: HashMap::new(),
        runs: HashMap::new(),
    };
    let criteria: Vec<(u32, &str, Box<dyn Fn(&mut Datasets) -> Outcome>)> = vec![
        (1, "numerical core gradients", Box::new(|_| criterion_1())),
        (2, "DPP identity and k-DPP sampler", Box::new(|_| criterion_2())),
        (3, "KDE density and sampler", Box::new(|_| criterion_3())),
        (4, "metric oracles", Box::new(|_| criterion_4())),
        (5, "ablation baseline on Cora", Box::new(criterion_5)),
        (6, "full model on Cora", Box::new(criterion_6)),
        (7, "Citeseer link prediction", Box::new(criterion_7)),
        (8, "Cora clustering", Box::new(criterion_8)),
        (9, "latent dimension sweep", Box::new(criterion_9)),
        (10, "Pubmed smoke run", Box::new(criterion_10)),
        (11, "determinism", Box::new(|_| criterion_11())),
    ];
    let mut failed = 0;
    for (id, name, f) in &criteria {
        if !selected.is_empty() && !selected.contains(id) {
            continue;
        }
        let t = Instant::now();
        let o = f(&mut data);
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Blocked => "BLOCKED",
        };
        println!("[{tag:>7}] {id:>2}. {name}: {} ({:.1}s)", o.detail, t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
