//! SVMLight-with-qid text files as distributed for LETOR 4.0 and MSLR-WEB10K.
//!
//! Each line reads `<grade> qid:<id> <index>:<value> ... [# comment]` with
//! one-based feature indices. Absent indices are zero.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use diffrank_core::data::{query_group, BinarizeScheme, Dataset, QueryGroup};

use crate::Error;

pub const LETOR_FEATURES: usize = 46;
pub const MSLR_FEATURES: usize = 136;

/// Benchmark family, which fixes feature width and label binarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFamily {
    Letor,
    Mslr,
}

impl DatasetFamily {
    pub fn feature_count(self) -> usize {
        match self {
            DatasetFamily::Letor => LETOR_FEATURES,
            DatasetFamily::Mslr => MSLR_FEATURES,
        }
    }

    pub fn scheme(self) -> BinarizeScheme {
        match self {
            DatasetFamily::Letor => BinarizeScheme::Letor,
            DatasetFamily::Mslr => BinarizeScheme::Mslr,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetFamily::Letor => "letor",
            DatasetFamily::Mslr => "mslr",
        }
    }
}

impl std::str::FromStr for DatasetFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "letor" => Ok(DatasetFamily::Letor),
            "mslr" => Ok(DatasetFamily::Mslr),
            other => Err(Error::Config(format!("unknown dataset family {other:?} (letor|mslr)"))),
        }
    }
}

fn parse_line(
    line: &str,
    feature_count: usize,
) -> Result<Option<(u8, String, Vec<f64>)>, String> {
    let body = line.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let mut tokens = body.split_whitespace();
    let grade_tok = tokens.next().ok_or("missing grade")?;
    let grade: u8 = grade_tok
        .parse()
        .map_err(|_| format!("invalid grade {grade_tok:?}"))?;
    let qid_tok = tokens.next().ok_or("missing qid")?;
    let qid = qid_tok
        .strip_prefix("qid:")
        .filter(|q| !q.is_empty())
        .ok_or_else(|| format!("expected qid:<id>, found {qid_tok:?}"))?;
    let mut features = vec![0.0; feature_count];
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| format!("expected <index>:<value>, found {tok:?}"))?;
        let idx: usize = idx.parse().map_err(|_| format!("invalid feature index {idx:?}"))?;
        if idx == 0 || idx > feature_count {
            return Err(format!("feature index {idx} outside 1..={feature_count}"));
        }
        let val: f64 = val.parse().map_err(|_| format!("invalid feature value {val:?}"))?;
        if !val.is_finite() {
            return Err(format!("non-finite feature value {val}"));
        }
        features[idx - 1] = val;
    }
    Ok(Some((grade, qid.to_string(), features)))
}

/// Parses a whole file. Rows are grouped by qid in order of first appearance.
/// `source` names the input in error messages.
pub fn parse_letor<R: Read>(
    input: R,
    source: &str,
    feature_count: usize,
    family: DatasetFamily,
) -> Result<Dataset, Error> {
    let scheme = family.scheme();
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(Vec<f64>, u8)>> = HashMap::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let parse_err = |message: String| Error::Parse {
            file: source.to_string(),
            line: n + 1,
            message,
        };
        let Some((grade, qid, features)) = parse_line(&line, feature_count).map_err(parse_err)? else {
            continue;
        };
        if grade >= scheme.grade_levels() {
            return Err(parse_err(format!(
                "grade {grade} outside 0..{}",
                scheme.grade_levels()
            )));
        }
        groups
            .entry(qid.clone())
            .or_insert_with(|| {
                order.push(qid);
                Vec::new()
            })
            .push((features, grade));
    }
    let queries = order
        .into_iter()
        .map(|qid| {
            let rows = groups.remove(&qid).expect("grouped");
            query_group(qid, rows, scheme)
        })
        .collect::<Result<Vec<QueryGroup>, _>>()?;
    Ok(Dataset::new(queries, feature_count, scheme.grade_levels())?)
}

pub fn parse_letor_file(path: &Path, family: DatasetFamily) -> Result<Dataset, Error> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display(), e))?;
    parse_letor(file, &path.display().to_string(), family.feature_count(), family)
}

/// Serializes in the same format with every feature written explicitly.
pub fn write_letor(data: &Dataset) -> String {
    let mut out = String::new();
    for q in data.queries() {
        for r in &q.rows {
            write!(out, "{} qid:{}", r.grade, q.query_id).expect("string write");
            for (i, v) in r.features.iter().enumerate() {
                write!(out, " {}:{}", i + 1, v).expect("string write");
            }
            out.push('\n');
        }
    }
    out
}

/// Standard split file names inside a fold directory.
pub const SPLIT_FILES: [(&str, &str); 3] = [("train", "train.txt"), ("vali", "vali.txt"), ("test", "test.txt")];

/// Train, validation and test splits of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: Dataset,
    pub vali: Dataset,
    pub test: Dataset,
}

impl Fold {
    pub fn splits(&self) -> [(&'static str, &Dataset); 3] {
        [("train", &self.train), ("vali", &self.vali), ("test", &self.test)]
    }
}

pub fn split_paths(dir: &Path) -> [PathBuf; 3] {
    SPLIT_FILES.map(|(_, f)| dir.join(f))
}

/// Loads `train.txt`, `vali.txt` and `test.txt` from a fold directory.
pub fn load_fold(dir: &Path, family: DatasetFamily) -> Result<Fold, Error> {
    let paths = split_paths(dir);
    for p in &paths {
        if !p.is_file() {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    let [train, vali, test] = paths;
    Ok(Fold {
        train: parse_letor_file(&train, family)?,
        vali: parse_letor_file(&vali, family)?,
        test: parse_letor_file(&test, family)?,
    })
}
