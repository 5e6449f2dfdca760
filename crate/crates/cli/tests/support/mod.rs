//! Fixtures and a from-scratch reference implementation of label optimization.
#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fiqa_opt::{validate_bundle, DatasetBundle, EmbeddingRecord, QualityTable};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random bundle of `n` images. Identity sizes are skewed so singletons and
/// identities smaller than typical cluster counts appear; roughly a third of
/// the bundles quantize scores to create ties, and some images duplicate an
/// earlier vector of the same identity.
pub fn random_bundle(rng: &mut ChaCha8Rng, n: usize) -> DatasetBundle {
    let dim = rng.random_range(2..=8);
    let identities = rng.random_range(1..=(n / 2).max(1));
    let quantize = rng.random_bool(0.35);
    let mut records: Vec<EmbeddingRecord> = Vec::with_capacity(n);
    let mut scores = QualityTable::new();
    for i in 0..n {
        // Squaring the draw favours low identity numbers, leaving a long tail of small ones.
        let u: f64 = rng.random_range(0.0..1.0);
        let k = ((u * u) * identities as f64) as usize;
        let identity = format!("p{k:03}");
        let earlier = records.iter().rposition(|r| r.identity_id == identity);
        let vector = match earlier {
            Some(j) if rng.random_bool(0.05) => records[j].vector.clone(),
            _ => loop {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                if v.iter().any(|x| x.abs() > 1e-3) {
                    break v;
                }
            },
        };
        let image = format!("img{i:04}");
        let mut s: f64 = rng.random_range(0.0..1.0);
        if quantize {
            s = (s * 10.0).round() / 10.0;
        }
        scores.insert(image.clone(), s).unwrap();
        records.push(EmbeddingRecord::new(image, identity, vector));
    }
    validate_bundle(records, scores).unwrap()
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fiqa-opt")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "fiqa-opt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Files produced by one synth -> optimize -> train -> predict -> evaluate run.
pub struct Chain {
    pub outputs: Vec<PathBuf>,
}

/// Run the whole pipeline into `dir` on a small synthetic dataset.
pub fn run_chain(dir: &Path, seed: u64, threads: usize) -> Chain {
    let seed = seed.to_string();
    let threads = threads.to_string();
    let common = ["--seed", seed.as_str(), "--threads", threads.as_str()];
    let data = dir.join("data");
    let emb = data.join("embeddings.femb");
    let baseline = data.join("baseline.csv");
    let opt = dir.join("optimized.csv");
    let model = dir.join("model.json");
    let pred = dir.join("predicted.csv");
    let erc = dir.join("erc.csv");

    let with = |v: Vec<&str>| {
        let all: Vec<&str> = v.iter().chain(common.iter()).copied().collect();
        run_ok(&all);
    };
    with(vec!["synth", "--out", p(&data), "--identities", "12", "--images-per-identity", "15", "--dimension", "16"]);
    with(vec![
        "optimize", "--embeddings", p(&emb), "--scores", p(&baseline), "--out", p(&opt), "--clusters", "4", "--theta", "0.05",
        "--repeats", "4",
    ]);
    with(vec![
        "train", "--embeddings", p(&emb), "--scores", p(&opt), "--out", p(&model), "--epochs", "20", "--hidden-width", "8",
    ]);
    with(vec!["predict", "--embeddings", p(&emb), "--model", p(&model), "--out", p(&pred)]);
    with(vec!["evaluate", "--embeddings", p(&emb), "--scores", p(&pred), "--out", p(&erc)]);

    let outputs = [
        emb.clone(),
        data.join("truth.csv"),
        baseline,
        opt.clone(),
        opt.with_file_name("optimized.csv.json"),
        model.clone(),
        model.with_file_name("model.json.loss.csv"),
        pred,
        erc.clone(),
        erc.with_file_name("erc.csv.summary.json"),
    ]
    .to_vec();
    Chain { outputs }
}
