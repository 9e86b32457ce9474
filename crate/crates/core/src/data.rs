//! Query-grouped ranking data and the preprocessing applied before training.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::format;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::special::inverse_normal_cdf;

/// Clip bound applied to CDF values before the inverse normal.
pub const CDF_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("query {query}: row has {actual} features, expected {expected}")]
    FeatureCount {
        query: String,
        expected: usize,
        actual: usize,
    },
    #[error("query {query}: grade {grade} outside 0..{levels}")]
    Grade { query: String, grade: u8, levels: u8 },
    #[error("query {0} has no rows")]
    EmptyQuery(String),
    #[error("query id {0} appears more than once")]
    DuplicateQuery(String),
    #[error("grade {grade} is outside the {scheme:?} label range")]
    SchemeRange { grade: u8, scheme: BinarizeScheme },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Label-collapsing rule for pointwise training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinarizeScheme {
    /// Grades 0..=2; 0 → 0, {1,2} → 1.
    Letor,
    /// Grades 0..=4; {0,1} → 0, {2,3,4} → 1.
    Mslr,
}

impl BinarizeScheme {
    pub fn grade_levels(self) -> u8 {
        match self {
            BinarizeScheme::Letor => 3,
            BinarizeScheme::Mslr => 5,
        }
    }
}

pub fn binarize(grade: u8, scheme: BinarizeScheme) -> Result<u8, DataError> {
    if grade >= scheme.grade_levels() {
        return Err(DataError::SchemeRange { grade, scheme });
    }
    let threshold = match scheme {
        BinarizeScheme::Letor => 1,
        BinarizeScheme::Mslr => 2,
    };
    Ok(u8::from(grade >= threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub features: Vec<f64>,
    pub grade: u8,
    pub binary: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub query_id: String,
    pub rows: Vec<Row>,
}

impl QueryGroup {
    pub fn grades(&self) -> impl Iterator<Item = u8> + '_ {
        self.rows.iter().map(|r| r.grade)
    }
}

/// A split of query groups sharing one feature space and label range.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    queries: Vec<QueryGroup>,
    feature_count: usize,
    grade_levels: u8,
}

impl Dataset {
    /// Validates row widths, grade ranges and query-id uniqueness.
    pub fn new(
        queries: Vec<QueryGroup>,
        feature_count: usize,
        grade_levels: u8,
    ) -> Result<Self, DataError> {
        let mut ids: Vec<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(DataError::DuplicateQuery(String::from(w[0])));
        }
        for q in &queries {
            if q.rows.is_empty() {
                return Err(DataError::EmptyQuery(q.query_id.clone()));
            }
            for r in &q.rows {
                if r.features.len() != feature_count {
                    return Err(DataError::FeatureCount {
                        query: q.query_id.clone(),
                        expected: feature_count,
                        actual: r.features.len(),
                    });
                }
                if r.grade >= grade_levels {
                    return Err(DataError::Grade {
                        query: q.query_id.clone(),
                        grade: r.grade,
                        levels: grade_levels,
                    });
                }
            }
        }
        Ok(Self {
            queries,
            feature_count,
            grade_levels,
        })
    }

    pub fn queries(&self) -> &[QueryGroup] {
        &self.queries
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn grade_levels(&self) -> u8 {
        self.grade_levels
    }

    pub fn row_count(&self) -> usize {
        self.queries.iter().map(|q| q.rows.len()).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.queries.iter().flat_map(|q| q.rows.iter())
    }

    /// Applies `f` to every feature vector, keeping labels and grouping.
    pub fn map_features(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Dataset {
        let queries = self
            .queries
            .iter()
            .map(|q| QueryGroup {
                query_id: q.query_id.clone(),
                rows: q
                    .rows
                    .iter()
                    .map(|r| Row {
                        features: f(&r.features),
                        grade: r.grade,
                        binary: r.binary,
                    })
                    .collect(),
            })
            .collect();
        Dataset {
            queries,
            feature_count: self.feature_count,
            grade_levels: self.grade_levels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputDistribution {
    Uniform,
    Normal,
}

/// Per-feature empirical CDF mapping, fitted once on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTransform {
    /// `references[f]` holds the sorted reference quantiles of feature `f`.
    references: Vec<Vec<f64>>,
    output: OutputDistribution,
}

/// Linear-interpolated empirical quantile of sorted data at probability `p`.
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = libm::floor(h) as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

pub fn fit_quantile_transform(
    train: &Dataset,
    quantile_count: usize,
    output: OutputDistribution,
) -> Result<QuantileTransform, DataError> {
    let n = train.row_count();
    if n == 0 {
        return Err(DataError::Argument(String::from(
            "quantile transform needs at least one training row",
        )));
    }
    if quantile_count < 2 {
        return Err(DataError::Argument(format!(
            "quantile_count must be at least 2, got {quantile_count}"
        )));
    }
    let q = quantile_count.min(n).max(2);
    let mut references = Vec::with_capacity(train.feature_count());
    let mut column = Vec::with_capacity(n);
    for f in 0..train.feature_count() {
        column.clear();
        column.extend(train.rows().map(|r| r.features[f]));
        column.sort_by(f64::total_cmp);
        let refs: Vec<f64> = (0..q)
            .map(|i| empirical_quantile(&column, i as f64 / (q - 1) as f64))
            .collect();
        references.push(refs);
    }
    Ok(QuantileTransform { references, output })
}

impl QuantileTransform {
    pub fn from_references(references: Vec<Vec<f64>>, output: OutputDistribution) -> Self {
        Self { references, output }
    }

    pub fn references(&self) -> &[Vec<f64>] {
        &self.references
    }

    pub fn output(&self) -> OutputDistribution {
        self.output
    }

    pub fn feature_count(&self) -> usize {
        self.references.len()
    }

    /// Empirical CDF of feature `f` at `v`, before any output mapping.
    ///
    /// Tied reference values are resolved by averaging the interpolations
    /// taken from the lower and upper ends of the tie, so a constant feature
    /// maps to 0.5.
    pub fn cdf(&self, f: usize, v: f64) -> f64 {
        let refs = &self.references[f];
        let last = refs.len() - 1;
        if v < refs[0] {
            return 0.0;
        }
        if v > refs[last] {
            return 1.0;
        }
        let step = 1.0 / last as f64;
        // Largest i with refs[i] <= v.
        let i = refs.partition_point(|&r| r <= v) - 1;
        let upper = if i == last {
            1.0
        } else {
            (i as f64 + (v - refs[i]) / (refs[i + 1] - refs[i])) * step
        };
        // Smallest j with refs[j] >= v.
        let j = refs.partition_point(|&r| r < v);
        let lower = if j == 0 {
            0.0
        } else {
            ((j - 1) as f64 + (v - refs[j - 1]) / (refs[j] - refs[j - 1])) * step
        };
        0.5 * (upper + lower)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.references.len());
        x.iter()
            .enumerate()
            .map(|(f, &v)| {
                let u = self.cdf(f, v);
                match self.output {
                    OutputDistribution::Uniform => u,
                    OutputDistribution::Normal => {
                        inverse_normal_cdf(u.clamp(CDF_CLIP, 1.0 - CDF_CLIP))
                    }
                }
            })
            .collect()
    }

    pub fn apply_dataset(&self, data: &Dataset) -> Dataset {
        data.map_features(|x| self.apply(x))
    }
}

/// An orientation-normalized preference pair: `grade_i > grade_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub query_id: String,
    pub features_i: Vec<f64>,
    pub features_j: Vec<f64>,
    pub grade_i: u8,
    pub grade_j: u8,
}

/// Enumerates strict-preference pairs, sampling down to `max_pairs` without
/// replacement when a query yields more.
pub fn make_pairs<R: Rng + ?Sized>(
    group: &QueryGroup,
    max_pairs: usize,
    rng: &mut R,
) -> Vec<PairSample> {
    let mut index_pairs = Vec::new();
    for (i, ri) in group.rows.iter().enumerate() {
        for (j, rj) in group.rows.iter().enumerate() {
            if ri.grade > rj.grade {
                index_pairs.push((i, j));
            }
        }
    }
    if index_pairs.len() > max_pairs {
        let mut keep = rand::seq::index::sample(rng, index_pairs.len(), max_pairs).into_vec();
        keep.sort_unstable();
        index_pairs = keep.into_iter().map(|k| index_pairs[k]).collect();
    }
    index_pairs
        .into_iter()
        .map(|(i, j)| PairSample {
            query_id: group.query_id.clone(),
            features_i: group.rows[i].features.clone(),
            features_j: group.rows[j].features.clone(),
            grade_i: group.rows[i].grade,
            grade_j: group.rows[j].grade,
        })
        .collect()
}

/// Keeps `ceil(fraction · Q)` whole queries chosen uniformly at random, in
/// their original order.
pub fn subsample<R: Rng + ?Sized>(
    train: &Dataset,
    fraction: f64,
    rng: &mut R,
) -> Result<Dataset, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::Argument(format!(
            "subsample fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let total = train.queries.len();
    let keep = subsample_size(total, fraction);
    if keep >= total {
        return Ok(train.clone());
    }
    let mut chosen = rand::seq::index::sample(rng, total, keep).into_vec();
    chosen.sort_unstable();
    let queries = chosen.into_iter().map(|i| train.queries[i].clone()).collect();
    Ok(Dataset {
        queries,
        feature_count: train.feature_count,
        grade_levels: train.grade_levels,
    })
}

/// `ceil(fraction · total)`, computed so exact products do not round up.
pub fn subsample_size(total: usize, fraction: f64) -> usize {
    let exact = fraction * total as f64;
    let rounded = libm::round(exact);
    let n = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        libm::ceil(exact)
    };
    (n as usize).min(total)
}

/// Adds i.i.d. `Normal(0, noise_std²)` noise to every coordinate.
pub fn perturb_features<R: Rng + ?Sized>(
    x: &[f64],
    noise_std: f64,
    rng: &mut R,
) -> Result<Vec<f64>, DataError> {
    if !(noise_std >= 0.0) {
        return Err(DataError::Argument(format!(
            "noise_std must be non-negative, got {noise_std}"
        )));
    }
    if noise_std == 0.0 {
        return Ok(x.to_vec());
    }
    let normal = Normal::new(0.0, noise_std)
        .map_err(|e| DataError::Argument(format!("{e}")))?;
    Ok(x.iter().map(|&v| v + normal.sample(rng)).collect())
}

/// Builds a query group, deriving binary labels from grades.
pub fn query_group(
    query_id: impl Into<String>,
    rows: Vec<(Vec<f64>, u8)>,
    scheme: BinarizeScheme,
) -> Result<QueryGroup, DataError> {
    let rows = rows
        .into_iter()
        .map(|(features, grade)| {
            Ok(Row {
                features,
                grade,
                binary: binarize(grade, scheme)?,
            })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Ok(QueryGroup {
        query_id: query_id.into(),
        rows,
    })
}
