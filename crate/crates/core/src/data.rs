//! Time-indexed domains: synthetic generators and CSV ingestion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

/// One domain: `n × d` features, `n` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub features: Tensor,
    pub labels: Vec<f64>,
    pub domain_index: usize,
    pub timestamp: Option<f64>,
}

impl DomainDataset {
    pub fn new(features: Tensor, labels: Vec<f64>, domain_index: usize, task: Task) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            domain_index,
            timestamp: None,
        };
        ds.validate(task)?;
        Ok(ds)
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDataset(format!("domain {}: {m}", self.domain_index)));
        if self.features.shape().len() != 2 {
            return bad(format!("features must be a matrix, got {:?}", self.features.shape()));
        }
        if self.features.rows() != self.labels.len() {
            return bad(format!("{} feature rows but {} labels", self.features.rows(), self.labels.len()));
        }
        if self.labels.is_empty() {
            return bad("no rows".into());
        }
        if !self.features.is_finite() || self.labels.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        if task == Task::Classification && self.labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return bad("classification labels must be 0 or 1".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Labels as an `n × 1` tensor.
    pub fn label_tensor(&self) -> Tensor {
        Tensor::matrix(self.labels.len(), 1, self.labels.clone()).expect("shape")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features.data()[i * d..(i + 1) * d]
    }

    /// Rows of `parts` stacked in order; the result carries `domain_index`.
    pub fn concat(parts: &[&DomainDataset], domain_index: usize) -> Result<Self> {
        let d = parts.first().map_or(0, |p| p.dim());
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim() != d {
                return Err(Error::InvalidDataset(format!(
                    "cannot pool domains of dimension {d} and {}",
                    p.dim()
                )));
            }
            feats.extend_from_slice(p.features.data());
            labels.extend_from_slice(&p.labels);
        }
        Ok(Self {
            features: Tensor::matrix(labels.len(), d, feats)?,
            labels,
            domain_index,
            timestamp: None,
        })
    }
}

/// How CSV rows are assigned to domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSplit {
    /// One domain per distinct value, ordered ascending (numerically when
    /// every value parses as a number, lexicographically otherwise).
    Column { column: String },
    /// Domain `k` holds rows with `boundaries[k-1] <= t < boundaries[k]`,
    /// with open ends at both extremes.
    Boundaries { column: String, boundaries: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Moons {
        #[serde(default = "default_num_domains")]
        num_domains: usize,
        #[serde(default = "default_moons_n")]
        n_per_domain: usize,
        #[serde(default = "default_step")]
        step_degrees: f64,
        #[serde(default = "default_noise")]
        noise_sigma: f64,
    },
    SynthRegression {
        num_domains: usize,
        n: usize,
        #[serde(default = "default_regression_dim")]
        dim: usize,
        drift_rate: f64,
        noise_sigma: f64,
    },
    Csv {
        path: PathBuf,
        feature_columns: Vec<String>,
        label_column: String,
        domain: DomainSplit,
        #[serde(default)]
        normalize: bool,
        task: Task,
    },
}

fn default_num_domains() -> usize {
    10
}
fn default_moons_n() -> usize {
    200
}
fn default_step() -> f64 {
    18.0
}
fn default_noise() -> f64 {
    0.1
}
fn default_regression_dim() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub source: DataSource,
    pub train_domains: Vec<usize>,
    pub test_domain: usize,
    /// Fixed data seed; when absent the run seed is used.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Training domains in time order plus the held-out future domain.
#[derive(Clone, Debug)]
pub struct DomainSplitData {
    pub train: Vec<DomainDataset>,
    pub test: HeldOut,
}

/// The future domain. Its contents are only reachable through
/// [`HeldOut::reveal`], which logs the access.
#[derive(Clone, Debug)]
pub struct HeldOut(DomainDataset);

impl HeldOut {
    pub fn new(ds: DomainDataset) -> Self {
        Self(ds)
    }

    pub fn domain_index(&self) -> usize {
        self.0.domain_index
    }

    pub fn reveal(&self, purpose: &str) -> &DomainDataset {
        log::info!("held-out domain {} revealed for {purpose}", self.0.domain_index);
        &self.0
    }
}

impl DatasetSpec {
    pub fn task(&self) -> Task {
        match &self.source {
            DataSource::Moons { .. } => Task::Classification,
            DataSource::SynthRegression { .. } => Task::Regression,
            DataSource::Csv { task, .. } => *task,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("dataset: {m}")));
        if self.train_domains.is_empty() {
            return bad("train_domains is empty".into());
        }
        if self.train_domains.windows(2).any(|w| w[0] >= w[1]) {
            return bad("train_domains must be strictly ascending".into());
        }
        if self.train_domains.contains(&self.test_domain) {
            return bad(format!("test domain {} is also a training domain", self.test_domain));
        }
        match &self.source {
            DataSource::Moons { num_domains, n_per_domain, noise_sigma, .. } => {
                if *num_domains == 0 {
                    return bad("num_domains must be at least 1".into());
                }
                if n_per_domain % 2 != 0 || *n_per_domain == 0 {
                    return bad(format!("n_per_domain must be even and positive, got {n_per_domain}"));
                }
                if *noise_sigma < 0.0 {
                    return bad("noise_sigma must be non-negative".into());
                }
            }
            DataSource::SynthRegression { num_domains, n, dim, noise_sigma, .. } => {
                if *num_domains == 0 || *n == 0 || *dim == 0 {
                    return bad("num_domains, n and dim must be at least 1".into());
                }
                if *noise_sigma < 0.0 {
                    return bad("noise_sigma must be non-negative".into());
                }
            }
            DataSource::Csv { feature_columns, .. } => {
                if feature_columns.is_empty() {
                    return bad("feature_columns is empty".into());
                }
            }
        }
        let max = *self.train_domains.iter().max().expect("non-empty");
        if let Some(n) = self.num_domains() {
            if max.max(self.test_domain) >= n {
                return bad(format!("domain index out of range for {n} domains"));
            }
        }
        Ok(())
    }

    fn num_domains(&self) -> Option<usize> {
        match &self.source {
            DataSource::Moons { num_domains, .. } | DataSource::SynthRegression { num_domains, .. } => {
                Some(*num_domains)
            }
            DataSource::Csv { .. } => None,
        }
    }

    /// Every domain the source defines, in domain order.
    pub fn materialize(&self, run_seed: u64) -> Result<Vec<DomainDataset>> {
        self.validate()?;
        let seed = self.seed.unwrap_or(run_seed);
        match &self.source {
            DataSource::Moons {
                num_domains,
                n_per_domain,
                step_degrees,
                noise_sigma,
            } => make_rotated_moons(*num_domains, *n_per_domain, *step_degrees, *noise_sigma, seed),
            DataSource::SynthRegression {
                num_domains,
                n,
                dim,
                drift_rate,
                noise_sigma,
            } => Ok(make_drifting_regression(*num_domains, *n, *dim, *drift_rate, *noise_sigma, seed)?.domains),
            DataSource::Csv { .. } => load_csv(self),
        }
    }

    /// Materializes and splits into training domains and the held-out domain.
    pub fn load(&self, run_seed: u64) -> Result<DomainSplitData> {
        let all = self.materialize(run_seed)?;
        let pick = |k: usize| {
            all.get(k)
                .cloned()
                .ok_or_else(|| Error::InvalidDataset(format!("domain {k} does not exist ({} domains)", all.len())))
        };
        let train = self.train_domains.iter().map(|&k| pick(k)).collect::<Result<Vec<_>>>()?;
        let test = HeldOut::new(pick(self.test_domain)?);
        Ok(DomainSplitData { train, test })
    }
}

/// Centroid of the unrotated moons; rotation happens about this point's
/// image at the origin.
const MOONS_CENTER: (f64, f64) = (0.5, 0.25);

/// Balanced two-moons sample, centred on the origin. The upper moon
/// `(cos t, sin t)` carries label 1, the lower moon `(1 - cos t, 0.5 - sin t)`
/// label 0, `t ~ U[0, π]`, plus isotropic Gaussian noise. The first `n/2`
/// rows are the lower moon.
pub fn sample_moons(n: usize, noise_sigma: f64, rng: &mut impl Rng) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    if n % 2 != 0 {
        return Err(Error::InvalidDataset(format!("moons need an even sample count, got {n}")));
    }
    let half = n / 2;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for label in [0.0, 1.0] {
        for _ in 0..half {
            let t: f64 = rng.random_range(0.0..=std::f64::consts::PI);
            let (x, y) = if label == 1.0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let nx: f64 = StandardNormal.sample(rng);
            let ny: f64 = StandardNormal.sample(rng);
            points.push([
                x - MOONS_CENTER.0 + noise_sigma * nx,
                y - MOONS_CENTER.1 + noise_sigma * ny,
            ]);
            labels.push(label);
        }
    }
    Ok((points, labels))
}

/// Counter-clockwise rotation about the origin.
pub fn rotate(p: [f64; 2], degrees: f64) -> [f64; 2] {
    let (s, c) = degrees.to_radians().sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Domain `s` is a fresh moons sample rotated by `s * step_degrees`.
pub fn make_rotated_moons(
    num_domains: usize,
    n_per_domain: usize,
    step_degrees: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    if num_domains == 0 {
        return Err(Error::InvalidDataset("num_domains must be at least 1".into()));
    }
    (0..num_domains)
        .map(|s| {
            let mut r = rng::stream(seed, rng::STREAM_DOMAIN_BASE + s as u64);
            let (points, labels) = sample_moons(n_per_domain, noise_sigma, &mut r)?;
            let angle = s as f64 * step_degrees;
            let data = points
                .into_iter()
                .flat_map(|p| rotate(p, angle))
                .collect();
            let mut ds = DomainDataset::new(Tensor::matrix(n_per_domain, 2, data)?, labels, s, Task::Classification)?;
            ds.timestamp = Some(angle);
            Ok(ds)
        })
        .collect()
}

/// Linear drifting-regression data with its ground truth.
#[derive(Clone, Debug)]
pub struct DriftingRegression {
    pub domains: Vec<DomainDataset>,
    /// `w_s` for every domain.
    pub weights: Vec<Vec<f64>>,
}

/// `y = w_s · x + ε`, `x ~ N(0, I_dim)`, `w_s = w_0 + s · drift_rate` (added
/// to every coordinate), `w_0 ~ N(0, I)` drawn from the seed.
pub fn make_drifting_regression(
    num_domains: usize,
    n: usize,
    dim: usize,
    drift_rate: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<DriftingRegression> {
    if num_domains == 0 || n == 0 || dim == 0 {
        return Err(Error::InvalidDataset("num_domains, n and dim must be at least 1".into()));
    }
    let mut truth = rng::stream(seed, rng::STREAM_REGRESSION_TRUTH);
    let w0: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut truth)).collect();
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| Error::InvalidDataset(e.to_string()))?;
    let mut domains = Vec::with_capacity(num_domains);
    let mut weights = Vec::with_capacity(num_domains);
    for s in 0..num_domains {
        let w: Vec<f64> = w0.iter().map(|w| w + s as f64 * drift_rate).collect();
        let mut r = rng::stream(seed, rng::STREAM_DOMAIN_BASE + s as u64);
        let mut feats = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let mut y: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            if noise_sigma > 0.0 {
                y += noise.sample(&mut r);
            }
            feats.extend_from_slice(&x);
            labels.push(y);
        }
        let mut ds = DomainDataset::new(Tensor::matrix(n, dim, feats)?, labels, s, Task::Regression)?;
        ds.timestamp = Some(s as f64);
        domains.push(ds);
        weights.push(w);
    }
    Ok(DriftingRegression { domains, weights })
}

/// Reads a headered CSV and partitions it into domains.
///
/// Row numbers in errors count data rows from 1 (the header is not a row).
/// With `normalize`, every feature column is z-scored using the mean and
/// standard deviation of the training domains only.
pub fn load_csv(spec: &DatasetSpec) -> Result<Vec<DomainDataset>> {
    let DataSource::Csv {
        path,
        feature_columns,
        label_column,
        domain,
        normalize,
        task,
    } = &spec.source
    else {
        return Err(Error::InvalidConfig("load_csv needs a csv dataset source".into()));
    };

    let file_err = |msg: String| Error::File {
        path: path.clone(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| file_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| file_err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| file_err(format!("missing column '{name}'")))
    };
    let feat_idx = feature_columns.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let label_idx = col(label_column)?;
    let domain_col = match domain {
        DomainSplit::Column { column } | DomainSplit::Boundaries { column, .. } => column,
    };
    let domain_idx = col(domain_col)?;

    struct Row {
        x: Vec<f64>,
        y: f64,
        key: String,
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_row(path, row, e.to_string()))?;
        let num = |idx: usize, name: &str| -> Result<f64> {
            let cell = rec.get(idx).unwrap_or("");
            let v: f64 = cell
                .parse()
                .map_err(|_| csv_row(path, row, format!("column '{name}': '{cell}' is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(csv_row(path, row, format!("column '{name}': non-finite value")))
            }
        };
        let x = feat_idx
            .iter()
            .zip(feature_columns)
            .map(|(&k, name)| num(k, name))
            .collect::<Result<Vec<_>>>()?;
        let y = num(label_idx, label_column)?;
        if *task == Task::Classification && y != 0.0 && y != 1.0 {
            return Err(csv_row(path, row, format!("label {y} is not 0 or 1")));
        }
        let key = rec.get(domain_idx).unwrap_or("").to_string();
        if matches!(domain, DomainSplit::Boundaries { .. }) {
            num(domain_idx, domain_col)?;
        }
        rows.push(Row { x, y, key });
    }
    if rows.is_empty() {
        return Err(file_err("no data rows".into()));
    }

    // Assign domain indices.
    let assignment: Vec<usize> = match domain {
        DomainSplit::Column { .. } => {
            let numeric: Option<Vec<f64>> = rows.iter().map(|r| r.key.parse::<f64>().ok()).collect();
            let mut keys: Vec<String> = rows.iter().map(|r| r.key.clone()).collect();
            match &numeric {
                Some(vals) => {
                    let mut uniq: Vec<f64> = vals.clone();
                    uniq.sort_by(|a, b| a.total_cmp(b));
                    uniq.dedup();
                    vals.iter()
                        .map(|v| uniq.iter().position(|u| u == v).expect("present"))
                        .collect()
                }
                None => {
                    keys.sort();
                    keys.dedup();
                    let order: BTreeMap<&str, usize> =
                        keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
                    rows.iter().map(|r| order[r.key.as_str()]).collect()
                }
            }
        }
        DomainSplit::Boundaries { boundaries, .. } => {
            if boundaries.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig("domain boundaries must be strictly ascending".into()));
            }
            rows.iter()
                .map(|r| {
                    let t: f64 = r.key.parse().expect("validated above");
                    boundaries.iter().take_while(|&&b| b <= t).count()
                })
                .collect()
        }
    };
    let num_domains = assignment.iter().max().map_or(0, |m| m + 1);

    let d = feature_columns.len();
    let mut per_domain: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); num_domains];
    for (r, &k) in rows.iter().zip(&assignment) {
        per_domain[k].0.extend_from_slice(&r.x);
        per_domain[k].1.push(r.y);
    }

    if *normalize {
        let mut mean = vec![0.0; d];
        let mut count = 0usize;
        for &k in &spec.train_domains {
            let Some((x, _)) = per_domain.get(k) else { continue };
            for row in x.chunks_exact(d) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidDataset("normalization needs at least one training row".into()));
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; d];
        for &k in &spec.train_domains {
            let Some((x, _)) = per_domain.get(k) else { continue };
            for row in x.chunks_exact(d) {
                var.iter_mut()
                    .zip(row.iter().zip(&mean))
                    .for_each(|(s, (v, m))| *s += (v - m) * (v - m));
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|v| {
                let s = (v / count as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        for (x, _) in &mut per_domain {
            for row in x.chunks_exact_mut(d) {
                for j in 0..d {
                    row[j] = (row[j] - mean[j]) / std[j];
                }
            }
        }
    }

    per_domain
        .into_iter()
        .enumerate()
        .map(|(k, (x, y))| {
            if y.is_empty() {
                return Err(Error::InvalidDataset(format!("domain {k} has no rows")));
            }
            DomainDataset::new(Tensor::matrix(y.len(), d, x)?, y, k, *task)
        })
        .collect()
}

fn csv_row(path: &Path, row: usize, msg: String) -> Error {
    Error::CsvRow {
        path: path.to_path_buf(),
        row,
        msg,
    }
}
