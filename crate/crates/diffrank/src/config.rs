//! Run configuration files.
//!
//! Plain `key = value` lines; `#` starts a comment. Unknown keys are errors.
//! Relative paths resolve against the directory holding the config file.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `objective` | required | `disc_pointwise`, `disc_pointwise_squared`, `disc_pairwise`, `gen_pointwise`, `gen_pairwise` |
//! | `data` | required | directory written by `prepare` (or a cache file) |
//! | `out` | required | run directory for checkpoint, log and config snapshot |
//! | `seed` | required | base seed for initialization, shuffling, noise and subsampling |
//! | `epochs` | 200 | passes over the training split |
//! | `batch_size` | 1024 | rows per pointwise batch |
//! | `pair_batch_size` | 512 | pairs per pairwise batch |
//! | `max_pairs_per_query` | 200 | cap on sampled preference pairs per query |
//! | `learning_rate` | 0.001 | AdamW step size |
//! | `weight_decay` | 0.0001 | decoupled weight decay |
//! | `hidden_dim` | 256 | width of every hidden layer |
//! | `hidden_layers` | 4 | number of hidden layers |
//! | `dropout` | 0.1 | dropout rate after each hidden layer |
//! | `time_embed_dim` | 16 | sinusoidal time embedding width |
//! | `sigma_max` | 1 | numeric noise scale at `t = 1` |
//! | `rho` | 1 | exponent of the noise schedule `sigma_max · t^rho` |
//! | `t_min` | 0.02 | smallest sampled diffusion time |
//! | `lambda_num_start` | 1 | numeric loss weight at the first step |
//! | `lambda_num_end` | 0.1 | numeric loss weight at the last step |
//! | `cat_weighting_pointwise` | `schedule` | `schedule` or `unit` weighting of masked rows |
//! | `cat_weighting_pairwise` | `schedule` | same, for the pairwise label loss |
//! | `eval_interval` | 0 | steps between validations; 0 means once per epoch |
//! | `k_fraction` | 1 | fraction of training queries kept |
//! | `perturb_std` | 0 | Gaussian noise std on training features (discriminative only) |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use diffrank_core::diffusion::CatWeighting;
use diffrank_core::objectives::ObjectiveKind;
use diffrank_core::train::TrainSettings;

use crate::Error;

pub const KEYS: [&str; 24] = [
    "objective",
    "data",
    "out",
    "seed",
    "epochs",
    "batch_size",
    "pair_batch_size",
    "max_pairs_per_query",
    "learning_rate",
    "weight_decay",
    "hidden_dim",
    "hidden_layers",
    "dropout",
    "time_embed_dim",
    "sigma_max",
    "rho",
    "t_min",
    "lambda_num_start",
    "lambda_num_end",
    "cat_weighting_pointwise",
    "cat_weighting_pairwise",
    "eval_interval",
    "k_fraction",
    "perturb_std",
];

/// A fully resolved training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub settings: TrainSettings,
    pub data: PathBuf,
    pub out: PathBuf,
    pub k_fraction: f64,
}

fn weighting_name(w: CatWeighting) -> &'static str {
    match w {
        CatWeighting::Schedule => "schedule",
        CatWeighting::Unit => "unit",
    }
}

fn parse_weighting(key: &str, v: &str) -> Result<CatWeighting, Error> {
    match v {
        "schedule" => Ok(CatWeighting::Schedule),
        "unit" => Ok(CatWeighting::Unit),
        _ => Err(Error::Config(format!("{key}: expected schedule or unit, found {v:?}"))),
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, Error> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

/// Splits `key = value` lines, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, Error> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key {k:?}", n + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
        }
    }
    Ok(map)
}

impl RunConfig {
    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, Error> {
        let map = parse_pairs(text)?;
        let required = |k: &str| {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Config(format!("missing required key {k:?}")))
        };
        let objective: ObjectiveKind = required("objective")?.parse()?;
        let seed: u64 = parse_value("seed", required("seed")?)?;
        let data = base.join(required("data")?);
        let out = base.join(required("out")?);
        let mut s = TrainSettings::new(objective, seed);
        let mut k_fraction = 1.0;
        for (k, v) in &map {
            let v = v.as_str();
            match k.as_str() {
                "objective" | "seed" | "data" | "out" => {}
                "epochs" => s.epochs = parse_value(k, v)?,
                "batch_size" => s.batch_size = parse_value(k, v)?,
                "pair_batch_size" => s.pair_batch_size = parse_value(k, v)?,
                "max_pairs_per_query" => s.max_pairs_per_query = parse_value(k, v)?,
                "learning_rate" => s.optimizer.learning_rate = parse_value(k, v)?,
                "weight_decay" => s.optimizer.weight_decay = parse_value(k, v)?,
                "hidden_dim" => s.hidden_dim = parse_value(k, v)?,
                "hidden_layers" => s.num_hidden_layers = parse_value(k, v)?,
                "dropout" => s.dropout_rate = parse_value(k, v)?,
                "time_embed_dim" => s.time_embed_dim = parse_value(k, v)?,
                "sigma_max" => s.schedule.sigma_max = parse_value(k, v)?,
                "rho" => s.schedule.rho = parse_value(k, v)?,
                "t_min" => s.schedule.t_min = parse_value(k, v)?,
                "lambda_num_start" => s.lambda_num_start = parse_value(k, v)?,
                "lambda_num_end" => s.lambda_num_end = parse_value(k, v)?,
                "cat_weighting_pointwise" => s.pointwise_weighting = parse_weighting(k, v)?,
                "cat_weighting_pairwise" => s.pairwise_weighting = parse_weighting(k, v)?,
                "eval_interval" => s.eval_interval = parse_value(k, v)?,
                "k_fraction" => k_fraction = parse_value(k, v)?,
                "perturb_std" => s.perturb_std = parse_value(k, v)?,
                _ => unreachable!("filtered by parse_pairs"),
            }
        }
        let config = Self {
            settings: s,
            data,
            out,
            k_fraction,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "k_fraction must lie in (0, 1], found {}",
                self.k_fraction
            )));
        }
        if !self.data.exists() {
            return Err(Error::MissingFile(self.data.clone()));
        }
        self.settings.validate()?;
        Ok(())
    }

    /// Every key with its effective value, paths absolute where possible.
    pub fn resolved_text(&self) -> String {
        let s = &self.settings;
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        let lines: [(&str, String); 24] = [
            ("objective", s.objective.to_string()),
            ("data", abs(&self.data).display().to_string()),
            ("out", abs(&self.out).display().to_string()),
            ("seed", s.seed.to_string()),
            ("epochs", s.epochs.to_string()),
            ("batch_size", s.batch_size.to_string()),
            ("pair_batch_size", s.pair_batch_size.to_string()),
            ("max_pairs_per_query", s.max_pairs_per_query.to_string()),
            ("learning_rate", s.optimizer.learning_rate.to_string()),
            ("weight_decay", s.optimizer.weight_decay.to_string()),
            ("hidden_dim", s.hidden_dim.to_string()),
            ("hidden_layers", s.num_hidden_layers.to_string()),
            ("dropout", s.dropout_rate.to_string()),
            ("time_embed_dim", s.time_embed_dim.to_string()),
            ("sigma_max", s.schedule.sigma_max.to_string()),
            ("rho", s.schedule.rho.to_string()),
            ("t_min", s.schedule.t_min.to_string()),
            ("lambda_num_start", s.lambda_num_start.to_string()),
            ("lambda_num_end", s.lambda_num_end.to_string()),
            ("cat_weighting_pointwise", weighting_name(s.pointwise_weighting).to_string()),
            ("cat_weighting_pairwise", weighting_name(s.pairwise_weighting).to_string()),
            ("eval_interval", s.eval_interval.to_string()),
            ("k_fraction", self.k_fraction.to_string()),
            ("perturb_std", s.perturb_std.to_string()),
        ];
        let mut out = String::from("# resolved run configuration\n");
        for (k, v) in lines {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("prepared")).unwrap();
        dir
    }

    const MINIMAL: &str = "objective = gen_pairwise\ndata = prepared\nout = run\nseed = 3\n";

    #[test]
    fn defaults_fill_missing_keys() {
        let dir = base();
        let c = RunConfig::parse(MINIMAL, dir.path()).unwrap();
        assert_eq!(c.settings, TrainSettings::new(ObjectiveKind::GenPairwise, 3));
        assert_eq!(c.k_fraction, 1.0);
        assert_eq!(c.out, dir.path().join("run"));
    }

    #[test]
    fn resolved_snapshot_reparses_to_same_config() {
        let dir = base();
        let text = format!(
            "{MINIMAL}epochs = 7 # short\nlearning_rate = 3e-4\ncat_weighting_pairwise = unit\nk_fraction = 0.125\nt_min=0.1\n"
        );
        let c = RunConfig::parse(&text, dir.path()).unwrap();
        assert_eq!(c.settings.epochs, 7);
        assert_eq!(c.settings.pairwise_weighting, CatWeighting::Unit);
        let again = RunConfig::parse(&c.resolved_text(), Path::new("/")).unwrap();
        assert_eq!(again.settings, c.settings);
        assert_eq!(again.k_fraction, c.k_fraction);
        assert_eq!(again.resolved_text(), c.resolved_text());
    }

    #[test]
    fn rejects_bad_input() {
        let dir = base();
        for text in [
            "objective = gen_pairwise\ndata = prepared\nout = run\n",
            &format!("{MINIMAL}colour = red\n"),
            &format!("{MINIMAL}seed = 4\n"),
            &format!("{MINIMAL}epochs = many\n"),
            &format!("{MINIMAL}k_fraction = 0\n"),
            "objective = listnet\ndata = prepared\nout = run\nseed = 1\n",
            "objective = gen_pointwise\ndata = nowhere\nout = run\nseed = 1\n",
            &format!("{MINIMAL}perturb_std = 0.1\n"),
            &format!("{MINIMAL}garbage\n"),
        ] {
            assert!(RunConfig::parse(text, dir.path()).is_err(), "{text}");
        }
    }
}
