//! Loads a graph from the three plain-text files, normalizes its adjacency and
//! makes an 85/5/10 link-prediction split.
//!
//! cargo run --example load_and_split -- [edges.txt features.csv [labels.txt]]

use std::path::PathBuf;

use dbgan::graph::{load_graph, normalize_adjacency, split_edges, PlantedPartition};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<PathBuf> = std::env::args_os().skip(1).map(PathBuf::from).collect();
    let g = if args.len() >= 2 {
        load_graph(&args[0], &args[1], args.get(2).map(PathBuf::as_path))?
    } else {
        // No files given: write a small synthetic graph out and read it back.
        let dir = std::env::temp_dir().join(format!("dbgan-load-{}", std::process::id()));
        std::fs::create_dir_all(&dir)?;
        let g = PlantedPartition::default().sample(3);
        let edges: String = g.edges().iter().map(|(a, b)| format!("{a} {b}\n")).collect();
        let features: String = g
            .features()
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        let labels: String = g.labels().unwrap().iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(dir.join("edges.txt"), edges)?;
        std::fs::write(dir.join("features.csv"), features)?;
        std::fs::write(dir.join("labels.txt"), labels)?;
        let back = load_graph(dir.join("edges.txt"), dir.join("features.csv"), Some(&dir.join("labels.txt")))?;
        assert_eq!(back, g);
        std::fs::remove_dir_all(&dir)?;
        back
    };
    println!(
        "{} nodes, {} undirected edges, {} features, {} classes",
        g.n(),
        g.num_edges(),
        g.feature_dim(),
        g.num_classes().unwrap_or(0)
    );

    let a = normalize_adjacency(&g, true);
    let row0: Vec<String> = a.matrix.row(0).map(|(j, v)| format!("{j}:{v:.3}")).collect();
    println!("normalized adjacency: {} stored entries; row 0 = [{}]", a.matrix.nnz(), row0.join(" "));

    let split = split_edges(&g, (0.85, 0.05, 0.10), 0)?;
    println!(
        "split: {} train, {} val (+{} non-edges), {} test (+{} non-edges)",
        split.train_pos.len(),
        split.val_pos.len(),
        split.val_neg.len(),
        split.test_pos.len(),
        split.test_neg.len()
    );
    Ok(())
}
