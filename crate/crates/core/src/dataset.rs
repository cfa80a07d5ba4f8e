//! Discretely sampled curves, CSV ingestion/emission and synthetic
//! generators used by tests and benchmarks.
//!
//! The on-disk format is long-form CSV with a header
//! `curve_id,x,y` or `curve_id,x,y,label`, one observation per row.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One discretely sampled function: strictly increasing abscissas `xs`
/// paired with responses `ys`, plus an optional 1-based class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve<F> {
    pub id: String,
    xs: Vec<F>,
    ys: Vec<F>,
    pub label: Option<usize>,
}

impl<F: Scalar> Curve<F> {
    /// Build a curve, validating the type invariants.
    pub fn new(id: impl Into<String>, xs: Vec<F>, ys: Vec<F>, label: Option<usize>) -> Result<Self> {
        let id = id.into();
        if xs.is_empty() {
            return Err(Error::InvalidCurve {
                id,
                msg: "curve has no observations".into(),
            });
        }
        if xs.len() != ys.len() {
            return Err(Error::InvalidCurve {
                id,
                msg: format!("{} abscissas but {} responses", xs.len(), ys.len()),
            });
        }
        for (&x, &y) in xs.iter().zip(&ys) {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::InvalidCurve {
                    id,
                    msg: "non-finite value".into(),
                });
            }
        }
        for w in xs.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::DuplicateAbscissa {
                    id,
                    x: w[1].as_f64(),
                });
            }
        }
        Ok(Self { id, xs, ys, label })
    }

    pub fn xs(&self) -> &[F] {
        &self.xs
    }

    pub fn ys(&self) -> &[F] {
        &self.ys
    }

    /// Number of observations `m_i`.
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// A sample of curves. `common_grid` is true iff every curve shares
/// exactly the same abscissa vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset<F> {
    curves: Vec<Curve<F>>,
    common_grid: bool,
}

impl<F: Scalar> FunctionalDataset<F> {
    pub fn new(curves: Vec<Curve<F>>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let common_grid = curves.iter().all(|c| c.xs == curves[0].xs);
        Ok(Self { curves, common_grid })
    }

    pub fn curves(&self) -> &[Curve<F>] {
        &self.curves
    }

    pub fn n(&self) -> usize {
        self.curves.len()
    }

    pub fn common_grid(&self) -> bool {
        self.common_grid
    }

    /// The shared abscissa grid, if any.
    pub fn grid(&self) -> Option<&[F]> {
        if self.common_grid {
            Some(self.curves[0].xs())
        } else {
            None
        }
    }

    /// 1-based labels for all curves, if every curve is labeled.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.curves.iter().map(|c| c.label).collect()
    }

    /// Ids of curves whose grid differs from the first curve's.
    pub fn grid_offenders(&self) -> Vec<String> {
        self.curves
            .iter()
            .filter(|c| c.xs != self.curves[0].xs)
            .map(|c| c.id.clone())
            .collect()
    }

    /// Abscissa range over all curves.
    pub fn domain(&self) -> (F, F) {
        let mut lo = self.curves[0].xs[0];
        let mut hi = lo;
        for c in &self.curves {
            let first = c.xs[0];
            let last = c.xs[c.xs.len() - 1];
            if first < lo {
                lo = first;
            }
            if last > hi {
                hi = last;
            }
        }
        (lo, hi)
    }

    /// Pooled response variance (biased), used for variance floors.
    pub fn response_variance(&self) -> F {
        let mut count = 0usize;
        let mut mean = F::zero();
        for c in &self.curves {
            for &y in c.ys() {
                mean += y;
                count += 1;
            }
        }
        let nf = F::fl(count as f64);
        mean /= nf;
        let mut var = F::zero();
        for c in &self.curves {
            for &y in c.ys() {
                let d = y - mean;
                var += d * d;
            }
        }
        var / nf
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Load a long-format CSV (`curve_id,x,y[,label]` with header).
///
/// Rows are grouped by id in order of first appearance and sorted by `x`
/// within each curve. A label column must be constant within a curve.
pub fn load_csv<F: Scalar>(path: impl AsRef<Path>) -> Result<FunctionalDataset<F>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                if let csv::ErrorKind::Io(io) = e.into_kind() {
                    io_err(path, io)
                } else {
                    unreachable!()
                }
            }
            _ => Error::MalformedRow {
                line: 1,
                msg: e.to_string(),
            },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let has_label = match headers.len() {
        3 => false,
        4 => true,
        other => {
            return Err(Error::MalformedRow {
                line: 1,
                msg: format!("expected 3 or 4 columns in header, found {other}"),
            })
        }
    };

    struct Raw<F> {
        rows: Vec<(F, F)>,
        label: Option<usize>,
        label_seen: bool,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Raw<F>> = HashMap::new();

    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record.map_err(|e| Error::MalformedRow {
            line,
            msg: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::MalformedRow {
                line,
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let id = record[0].to_string();
        let x: f64 = record[1].parse().map_err(|_| Error::MalformedRow {
            line,
            msg: format!("bad x value `{}`", &record[1]),
        })?;
        let y: f64 = record[2].parse().map_err(|_| Error::MalformedRow {
            line,
            msg: format!("bad y value `{}`", &record[2]),
        })?;
        let label = if has_label {
            let field = &record[3];
            if field.is_empty() {
                None
            } else {
                Some(field.parse::<usize>().map_err(|_| Error::MalformedRow {
                    line,
                    msg: format!("bad label `{field}`"),
                })?)
            }
        } else {
            None
        };
        let entry = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Raw {
                rows: Vec::new(),
                label: None,
                label_seen: false,
            }
        });
        if entry.label_seen {
            match (entry.label, label) {
                (Some(a), Some(b)) if a != b => {
                    return Err(Error::InconsistentLabel {
                        id,
                        first: a,
                        second: b,
                    })
                }
                (Some(a), None) | (None, Some(a)) => {
                    return Err(Error::InconsistentLabel {
                        id,
                        first: a,
                        second: a,
                    })
                }
                _ => {}
            }
        } else {
            entry.label = label;
            entry.label_seen = true;
        }
        entry.rows.push((F::fl(x), F::fl(y)));
    }

    if order.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut curves = Vec::with_capacity(order.len());
    for id in order {
        let mut raw = groups.remove(&id).unwrap();
        raw.rows
            .sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite abscissas"));
        let (xs, ys): (Vec<F>, Vec<F>) = raw.rows.into_iter().unzip();
        curves.push(Curve::new(id, xs, ys, raw.label)?);
    }
    FunctionalDataset::new(curves)
}

/// Write a dataset as long-format CSV. The label column is emitted when
/// any curve carries a label; values use 17 significant decimal digits so
/// a reload reproduces the dataset exactly for `f64`.
pub fn save_csv<F: Scalar>(dataset: &FunctionalDataset<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let with_label = dataset.curves.iter().any(|c| c.label.is_some());
    let header = if with_label {
        "curve_id,x,y,label"
    } else {
        "curve_id,x,y"
    };
    writeln!(file, "{header}").map_err(|e| io_err(path, e))?;
    for curve in &dataset.curves {
        for (&x, &y) in curve.xs().iter().zip(curve.ys()) {
            if with_label {
                let label = curve
                    .label
                    .map(|l| l.to_string())
                    .unwrap_or_default();
                writeln!(
                    file,
                    "{},{},{},{}",
                    curve.id,
                    fmt_float(x.as_f64()),
                    fmt_float(y.as_f64()),
                    label
                )
                .map_err(|e| io_err(path, e))?;
            } else {
                writeln!(
                    file,
                    "{},{},{}",
                    curve.id,
                    fmt_float(x.as_f64()),
                    fmt_float(y.as_f64())
                )
                .map_err(|e| io_err(path, e))?;
            }
        }
    }
    Ok(())
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Specification for the three-class waveform benchmark generator.
#[derive(Debug, Clone)]
pub struct WaveformSpec {
    pub n: usize,
    pub seed: u64,
    pub noise_sd: f64,
}

impl WaveformSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            noise_sd: 1.0,
        }
    }
}

/// The three triangular base waveforms on the grid 1..=21.
pub fn waveform_base(k: usize, t: f64) -> f64 {
    match k {
        1 => (6.0 - (t - 11.0).abs()).max(0.0),
        2 => waveform_base(1, t - 4.0),
        3 => waveform_base(1, t + 4.0),
        _ => panic!("waveform base index must be 1..=3"),
    }
}

/// Generate labeled waveform curves: class c mixes two base waveforms
/// with a per-curve uniform weight, plus Gaussian noise.
pub fn generate_waveform<F: Scalar>(spec: &WaveformSpec) -> Result<FunctionalDataset<F>> {
    if spec.n < 3 {
        return Err(Error::InvalidConfig("waveform generator needs n >= 3".into()));
    }
    if spec.noise_sd < 0.0 {
        return Err(Error::InvalidConfig("noise_sd must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grid: Vec<f64> = (1..=21).map(|t| t as f64).collect();
    // class sizes as equal as possible, extras to the lowest classes
    let base = spec.n / 3;
    let extra = spec.n % 3;
    let mut curves = Vec::with_capacity(spec.n);
    let mut idx = 0usize;
    for class in 1..=3usize {
        let size = base + usize::from(class <= extra);
        let (a, b) = match class {
            1 => (1, 2),
            2 => (1, 3),
            _ => (2, 3),
        };
        for _ in 0..size {
            let u: f64 = rng.gen();
            let ys: Vec<F> = grid
                .iter()
                .map(|&t| {
                    let noise: f64 = rng.sample(StandardNormal);
                    let v = u * waveform_base(a, t)
                        + (1.0 - u) * waveform_base(b, t)
                        + spec.noise_sd * noise;
                    F::fl(v)
                })
                .collect();
            let xs: Vec<F> = grid.iter().map(|&t| F::fl(t)).collect();
            curves.push(Curve::new(format!("w{idx}"), xs, ys, Some(class))?);
            idx += 1;
        }
    }
    FunctionalDataset::new(curves)
}

/// Specification for the piecewise-polynomial cluster generator.
#[derive(Debug, Clone)]
pub struct RegimeSpec {
    pub clusters: usize,
    pub regimes: usize,
    pub n: usize,
    pub degree: usize,
    pub seed: u64,
    pub noise_sd: f64,
    /// Cluster proportions; uniform when absent.
    pub proportions: Option<Vec<f64>>,
}

/// Ground truth emitted alongside generated regime curves.
#[derive(Debug, Clone)]
pub struct RegimeTruth {
    /// 1-based cluster label per curve, in dataset order.
    pub labels: Vec<usize>,
    /// Shared cut indices (length regimes+1, first 0, last m).
    pub cuts: Vec<usize>,
}

const REGIME_GRID_LEN: usize = 200;

/// Generate `n` labeled curves on a common grid over [0,1]; each cluster
/// is a piecewise polynomial with `regimes` contiguous segments and
/// seeded random coefficients, separated across clusters by an offset.
pub fn generate_regime_curves<F: Scalar>(
    spec: &RegimeSpec,
) -> Result<(FunctionalDataset<F>, RegimeTruth)> {
    if spec.clusters < 1 || spec.regimes < 1 || spec.n < 1 {
        return Err(Error::InvalidConfig(
            "regime generator needs clusters, regimes and n >= 1".into(),
        ));
    }
    if let Some(props) = &spec.proportions {
        if props.len() != spec.clusters {
            return Err(Error::InvalidConfig(
                "proportions length must equal the cluster count".into(),
            ));
        }
        let sum: f64 = props.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || props.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConfig("proportions must lie on the simplex".into()));
        }
    }
    let m = REGIME_GRID_LEN;
    let grid: Vec<f64> = (0..m).map(|j| j as f64 / (m - 1) as f64).collect();
    let cuts: Vec<usize> = (0..=spec.regimes)
        .map(|r| r * m / spec.regimes)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // coefficients per (cluster, regime): constant term offset by cluster
    let mut coefs = vec![vec![vec![0.0f64; spec.degree + 1]; spec.regimes]; spec.clusters];
    for (k, cluster) in coefs.iter_mut().enumerate() {
        for regime in cluster.iter_mut() {
            regime[0] = 6.0 * k as f64 + rng.gen_range(-1.5..1.5);
            for c in regime.iter_mut().skip(1) {
                *c = rng.gen_range(-3.0..3.0);
            }
        }
    }

    // deterministic quota assignment from proportions
    let uniform = vec![1.0 / spec.clusters as f64; spec.clusters];
    let props = spec.proportions.as_deref().unwrap_or(&uniform);
    let mut sizes: Vec<usize> = props.iter().map(|p| (p * spec.n as f64).floor() as usize).collect();
    let mut assigned: usize = sizes.iter().sum();
    let mut fracs: Vec<(usize, f64)> = props
        .iter()
        .enumerate()
        .map(|(k, p)| (k, p * spec.n as f64 - sizes[k] as f64))
        .collect();
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut fi = 0;
    while assigned < spec.n {
        sizes[fracs[fi % fracs.len()].0] += 1;
        assigned += 1;
        fi += 1;
    }

    let mut curves = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    let mut idx = 0usize;
    for (k, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            let mut ys = Vec::with_capacity(m);
            for r in 0..spec.regimes {
                for &x in &grid[cuts[r]..cuts[r + 1]] {
                    let mut v = 0.0;
                    let mut pow = 1.0;
                    for &c in &coefs[k][r] {
                        v += c * pow;
                        pow *= x;
                    }
                    let noise: f64 = rng.sample(StandardNormal);
                    ys.push(F::fl(v + spec.noise_sd * noise));
                }
            }
            let xs: Vec<F> = grid.iter().map(|&x| F::fl(x)).collect();
            curves.push(Curve::new(format!("g{idx}"), xs, ys, Some(k + 1))?);
            labels.push(k + 1);
            idx += 1;
        }
    }
    let dataset = FunctionalDataset::new(curves)?;
    Ok((dataset, RegimeTruth { labels, cuts }))
}
