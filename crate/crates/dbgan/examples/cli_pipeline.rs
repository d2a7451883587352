//! The command-line workflow in-process: train two seeds, evaluate both tasks,
//! sweep two latent widths and export embeddings with labels.

use std::path::Path;

use dbgan::cli;
use dbgan::graph::PlantedPartition;

fn write_dataset(dir: &Path) -> std::io::Result<()> {
    let g = PlantedPartition::default().sample(11);
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
    std::fs::write(
        dir.join("small.cfg"),
        "edges = edges.txt\nfeatures = features.csv\nlabels = labels.txt\n\
         q = 8\nm = 30\nepochs = 20\ngenerator_hidden = 32,64\ndx_hidden = 64,32\n",
    )
}

fn dbgan(args: &[&str]) -> String {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(std::iter::once("dbgan").chain(args.iter().copied()), &mut out, &mut err);
    eprint!("{}", String::from_utf8_lossy(&err));
    assert_eq!(code, 0, "dbgan {}", args.join(" "));
    String::from_utf8(out).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("dbgan-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    write_dataset(&dir)?;
    let cfg = dir.join("small.cfg");
    let run = dir.join("run");
    let (cfg, run) = (cfg.to_str().unwrap(), run.to_str().unwrap());

    dbgan(&["train", "--config", cfg, "--out", run, "--seed", "1", "--runs", "2"]);
    print!("metrics.json:\n{}", dbgan(&["eval", "--out", run, "--task", "both"]));
    dbgan(&["export", "--out", run, "--labels"]);
    let rows = std::fs::read_to_string(dir.join("run").join(cli::EMBEDDINGS_FILE))?;
    println!("embeddings.csv: {} rows, first = {}", rows.lines().count(), rows.lines().next().unwrap());

    let sweep = dir.join("sweep");
    print!(
        "sweep.csv:\n{}",
        dbgan(&["sweep-dim", "--config", cfg, "--out", sweep.to_str().unwrap(), "--q", "4,16"])
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
