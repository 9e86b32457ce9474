//! Aggregation of evaluated runs into result tables, significance files and
//! training-curve series.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::pipeline::{PER_QUERY, PER_QUERY_HEADER, RESULTS, RESULTS_HEADER, TRAIN_LOG, TRAIN_LOG_HEADER};
use crate::significance::{paired_t_test, TTest};
use crate::{write_file, Error};

pub const TABLE_MD: &str = "results_table.md";
pub const TABLE_CSV: &str = "results_table.csv";
pub const SIGNIFICANCE_DIR: &str = "significance";
pub const CURVES_DIR: &str = "curves";
pub const SIGNIFICANCE_HEADER: &str = "method_a,method_b,metric,t,p,significant";

/// One evaluated run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: String,
    pub method: String,
    pub dataset: String,
    pub k_fraction: f64,
    pub ndcg10: f64,
    pub map10: f64,
    pub n_queries: usize,
    /// `(query_id, ndcg10, map10)` when `per_query.csv` is present.
    pub per_query: Option<Vec<(String, f64, f64)>>,
    pub curve: Option<Vec<(u64, f64, f64)>>,
}

fn reader(path: &Path, header: &str) -> Result<csv::Reader<fs::File>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let found: Vec<String> = r
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    if found.join(",") != header {
        return Err(format!("{}: expected header {header:?}", path.display()));
    }
    Ok(r)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T, String> {
    rec.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("{}: bad field {i} in {rec:?}", path.display()))
}

fn load_run(dir: &Path) -> Result<RunResult, String> {
    let path = dir.join(RESULTS);
    let mut r = reader(&path, RESULTS_HEADER)?;
    let mut records = r.records();
    let rec = records
        .next()
        .ok_or_else(|| format!("{}: no result row", path.display()))?
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let run = dir
        .file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    let mut result = RunResult {
        run,
        method: field(&rec, 0, &path)?,
        dataset: field(&rec, 1, &path)?,
        k_fraction: field(&rec, 2, &path)?,
        ndcg10: field(&rec, 3, &path)?,
        map10: field(&rec, 4, &path)?,
        n_queries: field(&rec, 5, &path)?,
        per_query: None,
        curve: None,
    };
    let pq = dir.join(PER_QUERY);
    if pq.is_file() {
        let mut rows = Vec::new();
        for rec in reader(&pq, PER_QUERY_HEADER)?.records() {
            let rec = rec.map_err(|e| format!("{}: {e}", pq.display()))?;
            rows.push((field(&rec, 0, &pq)?, field(&rec, 1, &pq)?, field(&rec, 2, &pq)?));
        }
        result.per_query = Some(rows);
    }
    let log = dir.join(TRAIN_LOG);
    if log.is_file() {
        let mut rows = Vec::new();
        for rec in reader(&log, TRAIN_LOG_HEADER)?.records() {
            let rec = rec.map_err(|e| format!("{}: {e}", log.display()))?;
            rows.push((field(&rec, 0, &log)?, field(&rec, 1, &log)?, field(&rec, 2, &log)?));
        }
        result.curve = Some(rows);
    }
    Ok(result)
}

/// Reads every run directory below `root` (including `root` itself) that
/// holds a results file. Unreadable runs become warnings.
pub fn collect_runs(root: &Path) -> Result<(Vec<RunResult>, Vec<String>), Error> {
    let mut dirs: Vec<PathBuf> = vec![root.to_path_buf()];
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| Error::io(d.display(), e))?;
        for e in entries {
            let p = e.map_err(|e| Error::io(d.display(), e))?.path();
            if p.is_dir() {
                dirs.push(p.clone());
                stack.push(p);
            }
        }
    }
    dirs.sort();
    let mut runs = Vec::new();
    let mut warnings = Vec::new();
    for d in dirs {
        if !d.join(RESULTS).is_file() {
            continue;
        }
        match load_run(&d) {
            Ok(r) => runs.push(r),
            Err(w) => warnings.push(format!("skipping {}: {w}", d.display())),
        }
    }
    Ok((runs, warnings))
}

/// Runs sharing (dataset, K, method), averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub method: String,
    pub dataset: String,
    pub k_fraction: f64,
    pub ndcg10: f64,
    pub map10: f64,
    pub n_queries: usize,
    pub n_runs: usize,
    /// Query-aligned averages; absent if any run lacks them or ids disagree.
    pub per_query: Option<(Vec<String>, Vec<f64>, Vec<f64>)>,
}

fn k_key(k: f64) -> u64 {
    k.to_bits()
}

pub fn aggregate(runs: &[RunResult]) -> Vec<Cell> {
    let mut groups: BTreeMap<(String, u64, String), Vec<&RunResult>> = BTreeMap::new();
    for r in runs {
        groups
            .entry((r.dataset.clone(), k_key(r.k_fraction), r.method.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let n = rs.len() as f64;
            let per_query = rs
                .iter()
                .map(|r| r.per_query.clone())
                .collect::<Option<Vec<_>>>()
                .and_then(|all| {
                    let ids: Vec<String> = all[0].iter().map(|q| q.0.clone()).collect();
                    if all.iter().any(|v| v.iter().map(|q| &q.0).ne(ids.iter())) {
                        return None;
                    }
                    let avg = |pick: fn(&(String, f64, f64)) -> f64| {
                        (0..ids.len())
                            .map(|i| all.iter().map(|v| pick(&v[i])).sum::<f64>() / n)
                            .collect::<Vec<f64>>()
                    };
                    Some((ids.clone(), avg(|q| q.1), avg(|q| q.2)))
                });
            Cell {
                method: rs[0].method.clone(),
                dataset: rs[0].dataset.clone(),
                k_fraction: rs[0].k_fraction,
                ndcg10: rs.iter().map(|r| r.ndcg10).sum::<f64>() / n,
                map10: rs.iter().map(|r| r.map10).sum::<f64>() / n,
                n_queries: rs[0].n_queries,
                n_runs: rs.len(),
                per_query,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ndcg10,
    Map10,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Ndcg10, Metric::Map10];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ndcg10 => "ndcg10",
            Metric::Map10 => "map10",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Ndcg10 => "NDCG@10",
            Metric::Map10 => "MAP@10",
        }
    }

    fn mean(self, c: &Cell) -> f64 {
        match self {
            Metric::Ndcg10 => c.ndcg10,
            Metric::Map10 => c.map10,
        }
    }

    fn vector(self, c: &Cell) -> Option<(&[String], &[f64])> {
        c.per_query.as_ref().map(|(ids, n, m)| {
            let v = match self {
                Metric::Ndcg10 => n,
                Metric::Map10 => m,
            };
            (ids.as_slice(), v.as_slice())
        })
    }
}

/// Paired test between two cells, if their per-query vectors align.
pub fn compare(a: &Cell, b: &Cell, metric: Metric) -> Option<TTest> {
    let (ia, va) = metric.vector(a)?;
    let (ib, vb) = metric.vector(b)?;
    if ia != ib {
        return None;
    }
    paired_t_test(va, vb).ok()
}

fn blocks(cells: &[Cell]) -> BTreeMap<String, Vec<&Cell>> {
    let mut by_dataset: BTreeMap<String, Vec<&Cell>> = BTreeMap::new();
    for c in cells {
        by_dataset.entry(c.dataset.clone()).or_default().push(c);
    }
    by_dataset
}

fn ks_descending(cells: &[&Cell]) -> Vec<f64> {
    let mut ks: Vec<f64> = cells.iter().map(|c| c.k_fraction).collect();
    ks.sort_by(|a, b| b.total_cmp(a));
    ks.dedup();
    ks
}

fn methods(cells: &[&Cell]) -> Vec<String> {
    let mut ms: Vec<String> = Vec::new();
    for c in cells {
        if !ms.contains(&c.method) {
            ms.push(c.method.clone());
        }
    }
    ms.sort();
    ms
}

/// Column maximum for (dataset block, K, metric).
fn column_best<'a>(cells: &[&'a Cell], k: f64, metric: Metric) -> Option<&'a Cell> {
    cells
        .iter()
        .copied()
        .filter(|c| c.k_fraction == k)
        .max_by(|a, b| metric.mean(a).total_cmp(&metric.mean(b)))
}

/// Markdown tables, one block per dataset. The best cell of each
/// (dataset, K, metric) column is bold; `†` marks cells significantly
/// different (paired t-test, p < 0.05) from that best cell.
pub fn markdown_table(cells: &[Cell]) -> String {
    let mut s = String::new();
    for (dataset, block) in blocks(cells) {
        let ks = ks_descending(&block);
        writeln!(s, "## {dataset}\n").expect("string write");
        let mut header = String::from("| Method |");
        let mut rule = String::from("|---|");
        for k in &ks {
            for m in Metric::ALL {
                write!(header, " K={k} {} |", m.label()).expect("string write");
                rule.push_str("---|");
            }
        }
        writeln!(s, "{header}\n{rule}").expect("string write");
        for method in methods(&block) {
            write!(s, "| {method} |").expect("string write");
            for &k in &ks {
                let cell = block.iter().find(|c| c.method == method && c.k_fraction == k);
                for m in Metric::ALL {
                    match cell {
                        None => s.push_str(" – |"),
                        Some(c) => {
                            let best = column_best(&block, k, m).expect("non-empty column");
                            let v = format!("{:.4}", m.mean(c));
                            if std::ptr::eq(best, *c) {
                                write!(s, " **{v}** |").expect("string write");
                            } else if compare(c, best, m).is_some_and(|t| t.significant) {
                                write!(s, " {v}† |").expect("string write");
                            } else {
                                write!(s, " {v} |").expect("string write");
                            }
                        }
                    }
                }
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

pub fn csv_table(cells: &[Cell]) -> String {
    let mut s = String::from("method,dataset,K,ndcg10,map10,n_queries,n_runs,best_ndcg10,best_map10\n");
    for (_, block) in blocks(cells) {
        for c in &block {
            let best = |m| std::ptr::eq(column_best(&block, c.k_fraction, m).expect("column"), *c);
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                c.method,
                c.dataset,
                c.k_fraction,
                c.ndcg10,
                c.map10,
                c.n_queries,
                c.n_runs,
                best(Metric::Ndcg10),
                best(Metric::Map10)
            )
            .expect("string write");
        }
    }
    s
}

/// All method pairs of one (dataset, K) block.
pub fn significance_csv(block: &[&Cell]) -> String {
    let mut s = format!("{SIGNIFICANCE_HEADER}\n");
    for (i, a) in block.iter().enumerate() {
        for b in &block[i + 1..] {
            for m in Metric::ALL {
                if let Some(t) = compare(a, b, m) {
                    writeln!(s, "{},{},{},{},{},{}", a.method, b.method, m.name(), t.t, t.p, t.significant)
                        .expect("string write");
                }
            }
        }
    }
    s
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// What `write_report` produced.
#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub runs: usize,
    pub cells: usize,
    pub warnings: Vec<String>,
}

/// Collects runs below `runs_dir` and writes tables, significance files and
/// training curves into `out`.
pub fn write_report(runs_dir: &Path, out: &Path) -> Result<ReportSummary, Error> {
    let (runs, warnings) = collect_runs(runs_dir)?;
    if runs.is_empty() {
        return Err(Error::Config(format!(
            "no evaluated runs (with {RESULTS}) below {}",
            runs_dir.display()
        )));
    }
    let cells = aggregate(&runs);
    write_file(&out.join(TABLE_MD), markdown_table(&cells).as_bytes())?;
    write_file(&out.join(TABLE_CSV), csv_table(&cells).as_bytes())?;
    for (dataset, block) in blocks(&cells) {
        for k in ks_descending(&block) {
            let at_k: Vec<&Cell> = block.iter().copied().filter(|c| c.k_fraction == k).collect();
            let name = format!("{}_K{k}.csv", file_safe(&dataset));
            write_file(&out.join(SIGNIFICANCE_DIR).join(name), significance_csv(&at_k).as_bytes())?;
        }
    }
    for r in &runs {
        if let Some(curve) = &r.curve {
            let mut s = String::from("run,step,train_loss,val_ndcg10\n");
            for (step, loss, val) in curve {
                writeln!(s, "{},{step},{loss},{val}", r.run).expect("string write");
            }
            write_file(&out.join(CURVES_DIR).join(format!("{}.csv", file_safe(&r.run))), s.as_bytes())?;
        }
    }
    Ok(ReportSummary {
        runs: runs.len(),
        cells: cells.len(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_run(root: &Path, name: &str, method: &str, k: f64, ndcg: &[f64]) {
        let d = root.join(name);
        fs::create_dir_all(&d).unwrap();
        let mean = ndcg.iter().sum::<f64>() / ndcg.len() as f64;
        fs::write(
            d.join(RESULTS),
            format!("{RESULTS_HEADER}\n{method},MQ2008,{k},{mean},{mean},{}\n", ndcg.len()),
        )
        .unwrap();
        let mut pq = format!("{PER_QUERY_HEADER}\n");
        for (i, v) in ndcg.iter().enumerate() {
            pq.push_str(&format!("q{i},{v},{v}\n"));
        }
        fs::write(d.join(PER_QUERY), pq).unwrap();
        fs::write(d.join(TRAIN_LOG), format!("{TRAIN_LOG_HEADER}\n1,0.5,{mean}\n")).unwrap();
    }

    #[test]
    fn single_run_gives_one_row_table() {
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), "a", "Discriminative (pointwise)", 1.0, &[0.5, 0.7]);
        let out = dir.path().join("report");
        let s = write_report(dir.path(), &out).unwrap();
        assert_eq!((s.runs, s.cells), (1, 1));
        let md = fs::read_to_string(out.join(TABLE_MD)).unwrap();
        let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| Discriminative")).collect();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].contains("**0.6000**"));
        assert!(out.join(CURVES_DIR).join("a.csv").is_file());
    }

    #[test]
    fn best_cell_is_marked_and_significance_written() {
        let dir = tempfile::tempdir().unwrap();
        let good: Vec<f64> = (0..30).map(|i| 0.6 + 0.01 * (i % 5) as f64).collect();
        let bad: Vec<f64> = good.iter().enumerate().map(|(i, v)| v - 0.1 - 0.001 * (i % 3) as f64).collect();
        write_run(dir.path(), "good", "DiffusionRank (pairwise)", 1.0, &good);
        write_run(dir.path(), "bad", "Discriminative (pairwise)", 1.0, &bad);
        write_run(dir.path(), "half", "Discriminative (pairwise)", 0.5, &bad);
        let out = dir.path().join("report");
        write_report(dir.path(), &out).unwrap();
        let md = fs::read_to_string(out.join(TABLE_MD)).unwrap();
        let bad_row = md.lines().find(|l| l.starts_with("| Discriminative")).unwrap();
        assert!(bad_row.contains('†'), "{md}");
        let good_row = md.lines().find(|l| l.starts_with("| DiffusionRank")).unwrap();
        assert!(good_row.contains("**"));
        assert!(good_row.contains('–'), "missing K=0.5 cell: {good_row}");
        let sig = fs::read_to_string(out.join(SIGNIFICANCE_DIR).join("MQ2008_K1.csv")).unwrap();
        assert!(sig.starts_with(SIGNIFICANCE_HEADER));
        assert_eq!(sig.lines().count(), 3);
        assert!(sig.lines().nth(1).unwrap().ends_with("true"));
    }

    #[test]
    fn seeds_are_averaged_and_malformed_runs_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), "s1", "M", 1.0, &[0.2, 0.4]);
        write_run(dir.path(), "s2", "M", 1.0, &[0.4, 0.6]);
        let broken = dir.path().join("broken");
        fs::create_dir_all(&broken).unwrap();
        fs::write(broken.join(RESULTS), "nonsense\n").unwrap();
        let (runs, warnings) = collect_runs(dir.path()).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(warnings.len(), 1);
        let cells = aggregate(&runs);
        assert_eq!(cells.len(), 1);
        assert!((cells[0].ndcg10 - 0.4).abs() < 1e-12);
        assert_eq!(cells[0].per_query.as_ref().unwrap().1, vec![0.30000000000000004, 0.5]);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_report(dir.path(), &dir.path().join("out")).is_err());
    }
}
