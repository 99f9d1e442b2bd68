//! Directed information between time series.
//!
//! `I(X -> Y || Z)` is approximated with a Markov order `l` by the single
//! conditional mutual information `I(X^l; Y_l | Z^l, Y^(l-1))`, with each
//! overlapping window treated as one sample. A three-node graph fills every
//! off-diagonal entry with the directed information conditioned on the
//! third series.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{run_algorithm1, EstimateReport, EstimatorConfig, EstimatorKind};
use crate::rng::derive_seed;

/// Named real-valued series of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesTable {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    /// Free-form sampling period, e.g. `"5min"`.
    #[serde(default)]
    pub period: Option<String>,
    #[serde(default)]
    pub units: Option<String>,
}

impl TimeSeriesTable {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::config("one name per column is required"));
        }
        if names.is_empty() {
            return Err(Error::Empty("table has no columns".into()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::config(format!("duplicate column name `{n}`")));
            }
        }
        let len = columns[0].len();
        if len == 0 {
            return Err(Error::Empty("table has no rows".into()));
        }
        if let Some(c) = columns.iter().find(|c| c.len() != len) {
            return Err(Error::Dimension {
                expected: len,
                got: c.len(),
            });
        }
        Ok(Self {
            names,
            columns,
            period: None,
            units: None,
        })
    }

    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::config(format!("no series named `{name}`")))
    }

    /// Each series shifted to zero mean and scaled to unit (population)
    /// variance; constant series are only centered.
    pub fn standardized(&self) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|c| {
                let n = c.len() as f64;
                let mean = c.iter().sum::<f64>() / n;
                let sd = (c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
                let scale = if sd > 0.0 { sd } else { 1.0 };
                c.iter().map(|v| (v - mean) / scale).collect()
            })
            .collect();
        Self {
            names: self.names.clone(),
            columns,
            period: self.period.clone(),
            units: self.units.clone(),
        }
    }
}

/// What to do with a row that has a missing or unparsable cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropPolicy {
    #[default]
    DropRow,
    Error,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    /// 1-based data-row numbers (header excluded) of dropped rows.
    pub dropped_rows: Vec<usize>,
}

/// Reads the named columns (all columns when `schema` is empty) of a CSV
/// file with a header row.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &[String], policy: DropPolicy) -> Result<(TimeSeriesTable, IngestReport)> {
    let path = path.as_ref();
    let file = File::open(path)?;
    ingest_reader(BufReader::new(file), path, schema, policy)
}

pub fn ingest_reader<R: Read>(
    reader: R,
    path: &Path,
    schema: &[String],
    policy: DropPolicy,
) -> Result<(TimeSeriesTable, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::Input {
                path: path.to_path_buf(),
                msg: format!("duplicate header `{h}`"),
            });
        }
    }
    let wanted: Vec<String> = if schema.is_empty() { header.clone() } else { schema.to_vec() };
    let positions = wanted
        .iter()
        .map(|w| {
            header.iter().position(|h| h == w).ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: w.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    let mut report = IngestReport::default();
    for (row_no, record) in rdr.records().enumerate() {
        let record = record?;
        report.rows_read += 1;
        let parsed: Option<Vec<f64>> = positions
            .iter()
            .map(|&p| record.get(p).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(values) => {
                for (c, v) in columns.iter_mut().zip(values) {
                    c.push(v);
                }
            }
            None => match policy {
                DropPolicy::DropRow => {
                    report.rows_dropped += 1;
                    report.dropped_rows.push(row_no + 1);
                }
                DropPolicy::Error => {
                    return Err(Error::Input {
                        path: path.to_path_buf(),
                        msg: format!("row {} has a missing or non-numeric value", row_no + 1),
                    })
                }
            },
        }
    }
    if columns[0].is_empty() {
        return Err(Error::Input {
            path: path.to_path_buf(),
            msg: "no usable rows".into(),
        });
    }
    Ok((TimeSeriesTable::new(wanted, columns)?, report))
}

/// Sliding windows of order `l`.
///
/// For `t = l-1 .. T-1`: `X = (x[t-l+1..=t])`, `Y = y[t]`, and `Z` is each
/// conditioned series' window `(c[t-l+1..=t])` in order, followed by
/// `(y[t-l+1..t])`. This yields `T - l + 1` samples with `Z` of dimension
/// `|conditioned| * l + l - 1`.
pub fn lag_embed(table: &TimeSeriesTable, source: &str, target: &str, conditioned: &[&str], l: usize) -> Result<Dataset> {
    if l == 0 {
        return Err(Error::config("Markov order l must be at least 1"));
    }
    let len = table.len();
    if l > len {
        return Err(Error::config(format!("Markov order l = {l} exceeds the series length {len}")));
    }
    let xs = table.column(source)?;
    let ys = table.column(target)?;
    let zs = conditioned.iter().map(|c| table.column(c)).collect::<Result<Vec<_>>>()?;
    let rows = len - l + 1;
    let dz = zs.len() * l + l - 1;
    let mut x = Array2::zeros((rows, l));
    let mut y = Array2::zeros((rows, 1));
    let mut z = Array2::zeros((rows, dz));
    for r in 0..rows {
        let lo = r;
        let t = r + l - 1;
        for (j, v) in xs[lo..=t].iter().enumerate() {
            x[[r, j]] = *v;
        }
        y[[r, 0]] = ys[t];
        let mut col = 0;
        for s in &zs {
            for v in &s[lo..=t] {
                z[[r, col]] = *v;
                col += 1;
            }
        }
        for v in &ys[lo..t] {
            z[[r, col]] = *v;
            col += 1;
        }
    }
    Ok(Dataset::new(x, y, z)?.with_provenance(format!("lag_embed({source}->{target}, l={l})"), None))
}

/// Settings for directed-information estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiConfig {
    pub l: usize,
    pub estimator: EstimatorKind,
    /// Standardize each series before embedding.
    pub standardize: bool,
    pub estimation: EstimatorConfig,
}

impl DiConfig {
    pub fn new(l: usize, estimation: EstimatorConfig) -> Self {
        Self {
            l,
            estimator: EstimatorKind::Dv,
            standardize: true,
            estimation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiEstimate {
    pub source: String,
    pub target: String,
    pub conditioned: Vec<String>,
    pub value: f64,
    pub report: EstimateReport,
}

/// `I(source -> target || conditioned)` as the chosen estimator's trial average.
pub fn estimate_di(
    table: &TimeSeriesTable,
    source: &str,
    target: &str,
    conditioned: &[&str],
    config: &DiConfig,
    seed: u64,
) -> Result<DiEstimate> {
    let standardized;
    let table = if config.standardize {
        standardized = table.standardized();
        &standardized
    } else {
        table
    };
    let ds = lag_embed(table, source, target, conditioned, config.l)?;
    let report = run_algorithm1(&ds, &config.estimation, seed)?;
    Ok(DiEstimate {
        source: source.to_string(),
        target: target.to_string(),
        conditioned: conditioned.iter().map(|s| s.to_string()).collect(),
        value: report.spread(config.estimator).mean,
        report,
    })
}

/// Directed-information graph over three series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiGraph {
    pub nodes: Vec<String>,
    /// `weights[a][b]` estimates `I(a -> b || c)` for the remaining node `c`.
    pub weights: Vec<Vec<f64>>,
    pub l: usize,
    pub estimator: EstimatorKind,
    pub standardized: bool,
}

impl DiGraph {
    pub fn weight(&self, from: &str, to: &str) -> Option<f64> {
        let a = self.nodes.iter().position(|n| n == from)?;
        let b = self.nodes.iter().position(|n| n == to)?;
        Some(self.weights[a][b])
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Square matrix with a leading `from` column and one column per target node.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["from".to_string()];
        header.extend(self.nodes.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.nodes.iter().zip(&self.weights) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fills the six off-diagonal links of a three-node graph, each from its own
/// derived seed, in parallel.
pub fn build_digraph(table: &TimeSeriesTable, nodes: &[&str], config: &DiConfig, seed: u64) -> Result<DiGraph> {
    if nodes.len() != 3 {
        return Err(Error::Unsupported(format!("graphs need exactly 3 nodes, got {}", nodes.len())));
    }
    for n in nodes {
        table.column(n)?;
    }
    let pairs: Vec<(usize, usize)> = (0..3).flat_map(|a| (0..3).filter(move |&b| b != a).map(move |b| (a, b))).collect();
    let values = pairs
        .par_iter()
        .map(|&(a, b)| {
            let c = 3 - a - b;
            let link_seed = derive_seed(seed, &[a as u64, b as u64]);
            estimate_di(table, nodes[a], nodes[b], &[nodes[c]], config, link_seed).map(|e| e.value)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut weights = vec![vec![0.0; 3]; 3];
    for (&(a, b), v) in pairs.iter().zip(values) {
        weights[a][b] = v;
    }
    Ok(DiGraph {
        nodes: nodes.iter().map(|s| s.to_string()).collect(),
        weights,
        l: config.l,
        estimator: config.estimator,
        standardized: config.standardize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(len: usize) -> TimeSeriesTable {
        let col = |off: f64| (0..len).map(|t| t as f64 + off).collect::<Vec<_>>();
        TimeSeriesTable::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![col(0.0), col(1000.0), col(2000.0)],
        )
        .unwrap()
    }

    #[test]
    fn embed_shapes() {
        let t = table(100);
        let ds = lag_embed(&t, "a", "b", &["c"], 5).unwrap();
        assert_eq!(ds.len(), 96);
        assert_eq!(ds.dims(), (5, 1, 5 + 4));
        let ds = lag_embed(&t, "a", "b", &[], 1).unwrap();
        assert_eq!(ds.dims(), (1, 1, 0));
        assert_eq!(lag_embed(&t, "a", "b", &["c"], 100).unwrap().len(), 1);
        assert!(lag_embed(&t, "a", "b", &["c"], 101).is_err());
        assert!(lag_embed(&t, "a", "b", &["c"], 0).is_err());
        assert!(lag_embed(&t, "a", "nope", &[], 1).is_err());
    }

    #[test]
    fn embed_values() {
        let t = table(10);
        let ds = lag_embed(&t, "a", "b", &["c"], 3).unwrap();
        // First window ends at t = 2.
        assert_eq!(ds.x().row(0).to_vec(), vec![0.0, 1.0, 2.0]);
        assert_eq!(ds.y()[[0, 0]], 1002.0);
        assert_eq!(ds.z().row(0).to_vec(), vec![2000.0, 2001.0, 2002.0, 1000.0, 1001.0]);
        let l1 = lag_embed(&t, "a", "b", &["c"], 1).unwrap();
        assert_eq!(l1.z().row(4).to_vec(), vec![2004.0]);
    }

    #[test]
    fn embedding_commutes_with_shift() {
        let t = table(40);
        let s = 7;
        let shifted = TimeSeriesTable::new(
            t.names().to_vec(),
            t.names().iter().map(|n| t.column(n).unwrap()[s..].to_vec()).collect(),
        )
        .unwrap();
        let full = lag_embed(&t, "a", "c", &["b"], 4).unwrap();
        let part = lag_embed(&shifted, "a", "c", &["b"], 4).unwrap();
        for r in 0..part.len() {
            assert_eq!(full.features_row(r + s), part.features_row(r));
        }
    }

    #[test]
    fn standardization() {
        let t = table(11).standardized();
        let c = t.column("b").unwrap();
        let mean: f64 = c.iter().sum::<f64>() / 11.0;
        let var: f64 = c.iter().map(|v| v * v).sum::<f64>() / 11.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        let flat = TimeSeriesTable::new(vec!["k".into()], vec![vec![3.0; 4]]).unwrap().standardized();
        assert_eq!(flat.column("k").unwrap(), &[0.0; 4]);
    }

    fn ingest(text: &str, schema: &[&str], policy: DropPolicy) -> Result<(TimeSeriesTable, IngestReport)> {
        let schema: Vec<String> = schema.iter().map(|s| s.to_string()).collect();
        ingest_reader(text.as_bytes(), Path::new("mem.csv"), &schema, policy)
    }

    #[test]
    fn ingestion_cases() {
        let (t, r) = ingest("a,b\n1,2\n3,4\n5,6\n", &[], DropPolicy::DropRow).unwrap();
        assert_eq!((t.len(), r.rows_read, r.rows_dropped), (3, 3, 0));
        let (t, r) = ingest("a,b\n1,2\n3,x\n5,6\n", &[], DropPolicy::DropRow).unwrap();
        assert_eq!((t.len(), r.rows_dropped, r.dropped_rows.clone()), (2, 1, vec![2]));
        assert!(ingest("a,b\n1,2\n3,\n", &[], DropPolicy::Error).is_err());
        assert!(ingest("a,a\n1,2\n", &[], DropPolicy::DropRow).is_err());
        let err = ingest("a,b\n1,2\n", &["a", "q"], DropPolicy::DropRow).unwrap_err();
        assert!(err.to_string().contains('q'));
        assert!(ingest("a,b\nx,y\n", &[], DropPolicy::DropRow).is_err());
        let (t, _) = ingest("a,b,c\n1,2,3\n", &["c", "a"], DropPolicy::DropRow).unwrap();
        assert_eq!(t.names(), &["c".to_string(), "a".to_string()]);
    }

    #[test]
    fn graph_requires_three_nodes() {
        let t = table(50);
        let cfg = DiConfig::new(1, EstimatorConfig::new(1, 1));
        assert!(matches!(build_digraph(&t, &["a", "b"], &cfg, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn graph_csv_layout() {
        let g = DiGraph {
            nodes: vec!["a".into(), "b".into(), "c".into()],
            weights: vec![vec![0.0, 0.5, 0.1], vec![0.2, 0.0, 0.3], vec![0.0, 0.0, 0.0]],
            l: 2,
            estimator: EstimatorKind::Dv,
            standardized: true,
        };
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "from,a,b,c");
        assert_eq!(text.lines().nth(1).unwrap(), "a,0,0.5,0.1");
        assert_eq!(g.weight("b", "c"), Some(0.3));
    }
}
