//! Binary caches for prepared folds and fitted quantile transforms.
//!
//! Both files start with an 8-byte magic and a `u32` version. All integers
//! and floats are little-endian; counts and string lengths are `u64`.
//!
//! Dataset cache (`DRANKDS\0`, version 1):
//! `str name, u8 family (0 letor, 1 mslr), u64 feature_count, u8 grade_levels`,
//! then the train, vali and test splits, each as
//! `u64 queries, { str qid, u64 rows, { u8 grade, u8 binary, f64 × F } }`.
//!
//! Transform (`DRANKQT\0`, version 1):
//! `u8 output (0 uniform, 1 normal), u64 features, u64 quantiles, f64 × (F·Q)`
//! with the references stored feature by feature.

use std::fs;
use std::path::Path;

use diffrank_core::data::{Dataset, OutputDistribution, QuantileTransform, QueryGroup, Row};

use crate::binfmt::{Reader, Writer};
use crate::letor::{DatasetFamily, Fold};
use crate::{Error, FormatError};

const DATASET_MAGIC: &[u8; 8] = b"DRANKDS\0";
const DATASET_VERSION: u32 = 1;
const TRANSFORM_MAGIC: &[u8; 8] = b"DRANKQT\0";
const TRANSFORM_VERSION: u32 = 1;

/// File names inside a prepared directory.
pub const CACHE_FILE: &str = "dataset.cache";
pub const TRANSFORM_FILE: &str = "transform.qt";
pub const SUMMARY_FILE: &str = "summary.md";

/// A fold after the quantile transform, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub name: String,
    pub family: DatasetFamily,
    pub fold: Fold,
}

fn write_split(w: &mut Writer, d: &Dataset) {
    w.len(d.queries().len());
    for q in d.queries() {
        w.str(&q.query_id);
        w.len(q.rows.len());
        for r in &q.rows {
            w.u8(r.grade);
            w.u8(r.binary);
            w.f64s(&r.features);
        }
    }
}

fn read_split(r: &mut Reader, feature_count: usize, grade_levels: u8) -> Result<Dataset, Error> {
    let n = r.len()?;
    let mut queries = Vec::with_capacity(n);
    for _ in 0..n {
        let query_id = r.str()?;
        let rows_n = r.len()?;
        let mut rows = Vec::with_capacity(rows_n);
        for _ in 0..rows_n {
            let grade = r.u8()?;
            let binary = r.u8()?;
            let features = r.f64s(feature_count)?;
            rows.push(Row {
                features,
                grade,
                binary,
            });
        }
        queries.push(QueryGroup { query_id, rows });
    }
    Ok(Dataset::new(queries, feature_count, grade_levels)?)
}

pub fn encode_prepared(p: &PreparedData) -> Vec<u8> {
    let mut w = Writer::new(DATASET_MAGIC, DATASET_VERSION);
    w.str(&p.name);
    w.u8(match p.family {
        DatasetFamily::Letor => 0,
        DatasetFamily::Mslr => 1,
    });
    w.len(p.fold.train.feature_count());
    w.u8(p.fold.train.grade_levels());
    for (_, split) in p.fold.splits() {
        write_split(&mut w, split);
    }
    w.finish()
}

pub fn decode_prepared(bytes: &[u8]) -> Result<PreparedData, Error> {
    let mut r = Reader::open(bytes, DATASET_MAGIC, DATASET_VERSION)?;
    let name = r.str()?;
    let family = match r.u8()? {
        0 => DatasetFamily::Letor,
        1 => DatasetFamily::Mslr,
        other => return Err(FormatError::Field(format!("dataset family tag {other}")).into()),
    };
    let feature_count = r.len()?;
    let grade_levels = r.u8()?;
    let train = read_split(&mut r, feature_count, grade_levels)?;
    let vali = read_split(&mut r, feature_count, grade_levels)?;
    let test = read_split(&mut r, feature_count, grade_levels)?;
    r.finish()?;
    Ok(PreparedData {
        name,
        family,
        fold: Fold { train, vali, test },
    })
}

pub fn encode_transform(t: &QuantileTransform) -> Vec<u8> {
    let mut w = Writer::new(TRANSFORM_MAGIC, TRANSFORM_VERSION);
    w.u8(match t.output() {
        OutputDistribution::Uniform => 0,
        OutputDistribution::Normal => 1,
    });
    let refs = t.references();
    w.len(refs.len());
    w.len(refs.first().map_or(0, Vec::len));
    for r in refs {
        w.f64s(r);
    }
    w.finish()
}

pub fn decode_transform(bytes: &[u8]) -> Result<QuantileTransform, Error> {
    let mut r = Reader::open(bytes, TRANSFORM_MAGIC, TRANSFORM_VERSION)?;
    let output = match r.u8()? {
        0 => OutputDistribution::Uniform,
        1 => OutputDistribution::Normal,
        other => return Err(FormatError::Field(format!("output distribution tag {other}")).into()),
    };
    let features = r.len()?;
    let quantiles = r.len()?;
    let mut refs = Vec::with_capacity(features);
    for _ in 0..features {
        refs.push(r.f64s(quantiles)?);
    }
    r.finish()?;
    Ok(QuantileTransform::from_references(refs, output))
}

pub fn save_prepared(dir: &Path, p: &PreparedData) -> Result<(), Error> {
    crate::write_file(&dir.join(CACHE_FILE), &encode_prepared(p))
}

/// Loads `dataset.cache` from a prepared directory, or a cache file given directly.
pub fn load_prepared(path: &Path) -> Result<PreparedData, Error> {
    let file = if path.is_dir() { path.join(CACHE_FILE) } else { path.to_path_buf() };
    let bytes = fs::read(&file).map_err(|e| Error::io(file.display(), e))?;
    decode_prepared(&bytes).map_err(|e| e.context(&file))
}

pub fn load_transform(path: &Path) -> Result<QuantileTransform, Error> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display(), e))?;
    decode_transform(&bytes).map_err(|e| e.context(path))
}
