//! Delimited-text input, taxon filtering and result files with provenance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ZipgError};
use crate::model::{LongitudinalDataset, Matrix, OffsetMode};

/// Counts of every taxon in every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxaTable {
    pub taxa: Vec<String>,
    pub samples: Vec<String>,
    /// `taxa × samples`.
    pub counts: Vec<Vec<u64>>,
}

impl TaxaTable {
    pub fn new(taxa: Vec<String>, samples: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != taxa.len() {
            return Err(ZipgError::DimensionMismatch { matrix: "taxa table", expected: taxa.len(), found: counts.len() });
        }
        if let Some(row) = counts.iter().find(|r| r.len() != samples.len()) {
            return Err(ZipgError::DimensionMismatch { matrix: "taxa table row", expected: samples.len(), found: row.len() });
        }
        if let Some(d) = first_duplicate(&taxa) {
            return Err(ZipgError::InvalidData(format!("duplicate taxon '{d}'")));
        }
        if let Some(d) = first_duplicate(&samples) {
            return Err(ZipgError::InvalidData(format!("duplicate sample id '{d}'")));
        }
        Ok(Self { taxa, samples, counts })
    }

    /// Total reads per sample.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.samples.len()];
        for row in &self.counts {
            for (s, &w) in sums.iter_mut().zip(row) {
                *s += w as f64;
            }
        }
        sums
    }

    pub fn zero_proportion(&self, taxon: usize) -> f64 {
        let row = &self.counts[taxon];
        row.iter().filter(|&&w| w == 0).count() as f64 / row.len().max(1) as f64
    }

    /// DESeq-style median-of-ratios size factors.
    ///
    /// Geometric means use positive counts only, so taxa with zeros still
    /// contribute; a sample with no positive counts gets factor 1.
    pub fn median_ratio_size_factors(&self) -> Vec<f64> {
        let log_geo: Vec<Option<f64>> = self
            .counts
            .iter()
            .map(|row| {
                let pos: Vec<f64> = row.iter().filter(|&&w| w > 0).map(|&w| (w as f64).ln()).collect();
                (!pos.is_empty()).then(|| pos.iter().sum::<f64>() / row.len() as f64)
            })
            .collect();
        let mut factors: Vec<f64> = (0..self.samples.len())
            .map(|s| {
                let mut ratios: Vec<f64> = self
                    .counts
                    .iter()
                    .zip(&log_geo)
                    .filter_map(|(row, g)| match (row[s], g) {
                        (w, Some(g)) if w > 0 => Some((w as f64).ln() - g),
                        _ => None,
                    })
                    .collect();
                if ratios.is_empty() {
                    return 1.0;
                }
                ratios.sort_by(f64::total_cmp);
                let m = ratios.len();
                let med = if m % 2 == 1 { ratios[m / 2] } else { 0.5 * (ratios[m / 2 - 1] + ratios[m / 2]) };
                med.exp()
            })
            .collect();
        // Normalize to geometric mean one.
        let centre = factors.iter().map(|f| f.ln()).sum::<f64>() / factors.len().max(1) as f64;
        factors.iter_mut().for_each(|f| *f /= centre.exp());
        factors
    }

    fn select(&self, keep: &[usize]) -> Self {
        Self {
            taxa: keep.iter().map(|&i| self.taxa[i].clone()).collect(),
            samples: self.samples.clone(),
            counts: keep.iter().map(|&i| self.counts[i].clone()).collect(),
        }
    }
}

fn first_duplicate(items: &[String]) -> Option<&str> {
    let mut seen = std::collections::HashSet::new();
    items.iter().find(|s| !seen.insert(s.as_str())).map(String::as_str)
}

/// A taxon dropped by [`filter_taxa`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub taxon: String,
    pub zero_proportion: f64,
    pub reason: String,
}

/// Keeps taxa whose observed zero proportion lies strictly inside `(min_pobs, max_pobs)`.
///
/// Bounds of exactly 0 and 1 are treated as closed, so `(0, 1)` keeps everything.
pub fn filter_taxa(table: &TaxaTable, min_pobs: f64, max_pobs: f64) -> Result<(TaxaTable, Vec<Exclusion>)> {
    if !(0.0..=1.0).contains(&min_pobs) || !(0.0..=1.0).contains(&max_pobs) || min_pobs >= max_pobs {
        return Err(ZipgError::InvalidArgument(format!("need 0 <= min_pobs < max_pobs <= 1, got ({min_pobs}, {max_pobs})")));
    }
    let mut keep = Vec::new();
    let mut excluded = Vec::new();
    for (k, taxon) in table.taxa.iter().enumerate() {
        let p = table.zero_proportion(k);
        let reason = if p <= min_pobs && min_pobs > 0.0 {
            Some(format!("zero proportion {p:.3} <= {min_pobs}"))
        } else if p >= max_pobs && max_pobs < 1.0 {
            Some(format!("zero proportion {p:.3} >= {max_pobs}"))
        } else {
            None
        };
        match reason {
            Some(reason) => excluded.push(Exclusion { taxon: taxon.clone(), zero_proportion: p, reason }),
            None => keep.push(k),
        }
    }
    Ok((table.select(&keep), excluded))
}

/// Column names and options for assembling per-taxon datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadConfig {
    pub subject_col: String,
    pub sample_col: String,
    pub mean_cols: Vec<String>,
    /// Must be constant within each subject.
    pub disp_cols: Vec<String>,
    /// Zero-inflation covariates; empty for the single-`p` model.
    pub zi_cols: Vec<String>,
    /// Optional per-sample depth; otherwise depths are column sums of the taxa table.
    pub depth_col: Option<String>,
    pub offset: OffsetMode,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            subject_col: "subject".into(),
            sample_col: "sample".into(),
            mean_cols: Vec::new(),
            disp_cols: Vec::new(),
            zi_cols: Vec::new(),
            depth_col: None,
            offset: OffsetMode::LogDepth,
        }
    }
}

fn reader(path: &Path) -> Result<csv::Reader<Box<dyn Read>>> {
    let mut text = String::new();
    BufReader::new(File::open(path).map_err(|e| io_context(path, e))?).read_to_string(&mut text)?;
    let header = text.lines().next().unwrap_or("");
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(Box::new(std::io::Cursor::new(text)) as Box<dyn Read>))
}

fn io_context(path: &Path, e: std::io::Error) -> ZipgError {
    ZipgError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> ZipgError {
    ZipgError::Parse { path: path.to_path_buf(), line: line as usize, message: message.into() }
}

fn csv_err(path: &Path, e: csv::Error) -> ZipgError {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, e.to_string())
}

/// Reads a taxa table: header `taxon, sample1, sample2, ...`, one row per taxon.
pub fn read_taxa_table(path: &Path) -> Result<TaxaTable> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 {
        return Err(parse_err(path, 1, "header needs a taxon column and at least one sample"));
    }
    let samples: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if let Some(d) = first_duplicate(&samples) {
        return Err(parse_err(path, 1, format!("duplicate sample id '{d}'")));
    }
    let mut taxa = Vec::new();
    let mut counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let name = rec.get(0).unwrap_or("").trim().to_string();
        if name.is_empty() {
            return Err(parse_err(path, line, "empty taxon name"));
        }
        let row = rec
            .iter()
            .skip(1)
            .zip(&samples)
            .map(|(cell, sample)| {
                cell.trim().parse::<u64>().map_err(|_| {
                    parse_err(path, line, format!("count '{cell}' for taxon '{name}', sample '{sample}' is not a nonnegative integer"))
                })
            })
            .collect::<Result<Vec<u64>>>()?;
        if taxa.contains(&name) {
            return Err(parse_err(path, line, format!("duplicate taxon '{name}'")));
        }
        taxa.push(name);
        counts.push(row);
    }
    if taxa.is_empty() {
        return Err(parse_err(path, 1, "no taxa"));
    }
    TaxaTable::new(taxa, samples, counts)
}

/// Per-sample covariate rows keyed by sample id.
struct CovariateTable {
    columns: HashMap<String, usize>,
    rows: HashMap<String, (u64, Vec<String>)>,
}

fn read_covariates(path: &Path, config: &LoadConfig) -> Result<CovariateTable> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let columns: HashMap<String, usize> = header.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect();
    let needed = [&config.subject_col, &config.sample_col]
        .into_iter()
        .chain(&config.mean_cols)
        .chain(&config.disp_cols)
        .chain(&config.zi_cols)
        .chain(config.depth_col.as_ref());
    for col in needed {
        if !columns.contains_key(col) {
            return Err(parse_err(path, 1, format!("missing column '{col}'")));
        }
    }
    let sample_idx = columns[&config.sample_col];
    let mut rows = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let fields: Vec<String> = rec.iter().map(|s| s.trim().to_string()).collect();
        let id = fields[sample_idx].clone();
        if rows.insert(id.clone(), (line, fields)).is_some() {
            return Err(parse_err(path, line, format!("duplicate sample id '{id}'")));
        }
    }
    Ok(CovariateTable { columns, rows })
}

impl CovariateTable {
    fn number(&self, path: &Path, sample: &str, col: &str) -> Result<f64> {
        let (line, fields) = &self.rows[sample];
        let cell = &fields[self.columns[col]];
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ if cell.is_empty() || cell.eq_ignore_ascii_case("na") => {
                Err(parse_err(path, *line, format!("missing value in column '{col}' for sample '{sample}'")))
            }
            _ => Err(parse_err(path, *line, format!("column '{col}' value '{cell}' is not a finite number"))),
        }
    }
}

/// Parses the taxa table and covariates and builds one dataset per taxon.
///
/// All datasets share covariates, depths and subject structure; samples
/// follow the column order of the taxa table.
pub fn load_dataset(
    counts_path: &Path,
    covariates_path: &Path,
    config: &LoadConfig,
) -> Result<(TaxaTable, Vec<LongitudinalDataset>)> {
    let table = read_taxa_table(counts_path)?;
    let datasets = build_datasets(&table, covariates_path, config)?;
    Ok((table, datasets))
}

/// Builds per-taxon datasets for an already-loaded (possibly filtered) table.
///
/// Depths are column sums of `table`, so pass the unfiltered table when depths should
/// count every taxon; [`load_dataset`] does this.
pub fn build_datasets(table: &TaxaTable, covariates_path: &Path, config: &LoadConfig) -> Result<Vec<LongitudinalDataset>> {
    let path = covariates_path;
    let cov = read_covariates(path, config)?;
    if let Some(missing) = table.samples.iter().find(|s| !cov.rows.contains_key(*s)) {
        return Err(ZipgError::InvalidData(format!(
            "sample '{missing}' is in the taxa table but not in {}",
            path.display()
        )));
    }
    let n = table.samples.len();
    let mut subject_label: HashMap<String, usize> = HashMap::new();
    let mut subject_first: Vec<&str> = Vec::new();
    let mut subject_of = Vec::with_capacity(n);
    for s in &table.samples {
        let (_, fields) = &cov.rows[s];
        let subj = fields[cov.columns[&config.subject_col]].clone();
        let next = subject_label.len();
        let label = *subject_label.entry(subj).or_insert_with(|| {
            subject_first.push(s.as_str());
            next
        });
        subject_of.push(label);
    }

    let per_sample = |cols: &[String]| -> Result<Matrix> {
        let mut data = Vec::with_capacity(n * cols.len());
        for s in &table.samples {
            for c in cols {
                data.push(cov.number(path, s, c)?);
            }
        }
        Matrix::new(n, cols.len(), data)
    };
    let mean = per_sample(&config.mean_cols)?;
    let zi = if config.zi_cols.is_empty() { None } else { Some(per_sample(&config.zi_cols)?) };
    let n_subj = subject_first.len();
    let mut disp = vec![0.0; n_subj * config.disp_cols.len()];
    for (k, c) in config.disp_cols.iter().enumerate() {
        for (i, s) in table.samples.iter().enumerate() {
            let v = cov.number(path, s, c)?;
            let subj = subject_of[i];
            let first = cov.number(path, subject_first[subj], c)?;
            if v != first {
                let (line, _) = &cov.rows[s];
                return Err(parse_err(
                    path,
                    *line,
                    format!("dispersion covariate '{c}' varies within subject (sample '{s}')"),
                ));
            }
            disp[subj * config.disp_cols.len() + k] = v;
        }
    }
    let disp = Matrix::new(n_subj, config.disp_cols.len(), disp)?;
    let depths = match &config.depth_col {
        Some(col) => table.samples.iter().map(|s| cov.number(path, s, col)).collect::<Result<Vec<f64>>>()?,
        None => table.column_sums(),
    };
    if let Some(i) = depths.iter().position(|&d| !(d > 0.0)) {
        return Err(ZipgError::InvalidData(format!("sample '{}' has zero depth", table.samples[i])));
    }
    let size_factors = (config.offset == OffsetMode::LogMedianOfRatios).then(|| table.median_ratio_size_factors());
    table
        .counts
        .iter()
        .map(|row| {
            let d = LongitudinalDataset::new(row.clone(), depths.clone(), mean.clone(), disp.clone(), subject_of.clone(), zi.clone())?;
            match &size_factors {
                Some(sf) => d.with_size_factors(sf.clone()),
                None => Ok(d),
            }
        })
        .collect()
}

/// Where a result file came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON of the run configuration.
    pub config_hash: String,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config_hash: config_hash(config)?,
        })
    }
}

pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

/// A taxon whose analysis failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonFailure {
    pub taxon: String,
    pub kind: String,
    pub message: String,
}

/// Structured result file: provenance, configuration and records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile<C, R> {
    pub provenance: Provenance,
    pub config: C,
    pub records: Vec<R>,
    /// Taxa removed by the zero-proportion filter.
    #[serde(default)]
    pub excluded: Vec<Exclusion>,
    #[serde(default)]
    pub failures: Vec<TaxonFailure>,
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub taxon: String,
    pub coefficient: String,
    pub estimate: f64,
    pub boot_se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub method: String,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path).map_err(|e| io_context(path, e))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| io_context(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

/// Tab-separated table with a header row; `None` cells are empty.
pub fn write_tsv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tsv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// `<out>.tsv` and `<out>.json` for an output stem.
pub fn output_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (with_suffix(stem, ".tsv"), with_suffix(stem, ".json"))
}

/// Appends `suffix` to the file name (unlike `with_extension`, keeps dots in the stem).
pub fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Seed for one taxon, derived from its name so results do not depend on row order.
pub fn taxon_seed(root: u64, taxon: &str) -> u64 {
    let digest = Sha256::digest(taxon.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    crate::rng::derive_seed(root, &[crate::rng::domain::DATA, u64::from_le_bytes(bytes)])
}
