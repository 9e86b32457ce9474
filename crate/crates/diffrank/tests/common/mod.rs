#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes `train.txt`, `vali.txt` and `test.txt` in LETOR format with 46
/// features. Grades depend on the first three features plus noise, so a
/// ranker can learn them.
pub fn write_synthetic_fold(dir: &Path, queries: [usize; 3], docs: usize, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qid = 1000;
    for (name, n) in ["train.txt", "vali.txt", "test.txt"].into_iter().zip(queries) {
        let mut text = String::new();
        for _ in 0..n {
            qid += 1;
            for d in 0..docs {
                let f: Vec<f64> = (0..46).map(|_| rng.random_range(0.0..1.0)).collect();
                let signal = 2.0 * f[0] + f[1] - f[2] + rng.random_range(-0.3..0.3);
                let grade = if signal > 1.6 {
                    2
                } else if signal > 0.9 {
                    1
                } else {
                    0
                };
                write!(text, "{grade} qid:{qid}").unwrap();
                for (i, v) in f.iter().enumerate() {
                    // Leave some indices out to exercise sparse filling.
                    if (i + d) % 7 != 6 {
                        write!(text, " {}:{v:.6}", i + 1).unwrap();
                    }
                }
                writeln!(text, " #docid = D{qid}-{d}").unwrap();
            }
        }
        fs::write(dir.join(name), text).unwrap();
    }
}

/// A small run config over a prepared directory. Keys in `extra` replace
/// the defaults.
pub fn write_config(path: &Path, data: &Path, out: &Path, objective: &str, extra: &str) {
    let base = format!(
        "objective = {objective}\ndata = {}\nout = {}\nseed = 11\nepochs = 3\nbatch_size = 64\npair_batch_size = 64\nhidden_dim = 16\nhidden_layers = 2\nmax_pairs_per_query = 30\nlearning_rate = 0.005\n",
        data.display(),
        out.display()
    );
    let key = |l: &str| l.split('=').next().unwrap_or("").trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut text: String = base
        .lines()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    text.push_str(extra);
    fs::write(path, text).unwrap();
}
