//! Synthetic in/out-of-distribution generators, traffic mixing, splits, and
//! the text dataset format.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Uniform};

use crate::checkpoint::fmt_f64;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Batch;
use crate::rng::SeedStream;

/// Radius of the circle carrying the in-distribution blob centers.
pub const BLOB_RADIUS: f64 = 2.0;

pub const DATA_MAGIC: &str = "oodlab-data v1";

/// Ground-truth origin of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    InDist,
    OutDist,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::InDist => "in_dist",
            Provenance::OutDist => "out_dist",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for k={num_classes}"
            )));
        }
        if !features.is_finite() {
            return Err(Error::invalid("dataset features must be finite"));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
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

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: name.into(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Batch::labeled(
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
        )
    }
}

/// Unlabeled traffic with hidden provenance tags.
///
/// Training code only ever sees `provenance` when the regularizer runs in
/// oracle mode; everything else is evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSet {
    pub features: Matrix,
    pub provenance: Vec<Provenance>,
    pub mix_ratio: f64,
}

impl TrafficSet {
    pub fn new(features: Matrix, provenance: Vec<Provenance>) -> Result<Self> {
        if provenance.len() != features.rows() {
            return Err(Error::invalid(
                "provenance tags must align with traffic rows",
            ));
        }
        let n_in = provenance
            .iter()
            .filter(|p| **p == Provenance::InDist)
            .count();
        let mix_ratio = if provenance.is_empty() {
            0.0
        } else {
            n_in as f64 / provenance.len() as f64
        };
        Ok(TrafficSet {
            features,
            provenance,
            mix_ratio,
        })
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn count(&self, tag: Provenance) -> usize {
        self.provenance.iter().filter(|p| **p == tag).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSpec {
    /// Fraction of in-distribution samples.
    pub in_fraction: f64,
    pub size: usize,
    pub seed: u64,
}

/// Out-of-distribution families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutKind {
    /// Annulus around the origin: uniform angle, radial gaussian noise.
    Ring { radius: f64, noise: f64 },
    /// Uniform over `[-half_width, half_width]²`.
    UniformBox { half_width: f64 },
    /// `count` gaussian blobs on a circle of `radius`, rotated half a sector
    /// against the in-distribution centers.
    ShiftedBlobs {
        count: usize,
        radius: f64,
        spread: f64,
    },
}

impl OutKind {
    pub fn ring() -> Self {
        OutKind::Ring {
            radius: 6.0,
            noise: 0.0,
        }
    }

    pub fn uniform_box() -> Self {
        OutKind::UniformBox { half_width: 8.0 }
    }

    pub fn shifted_blobs() -> Self {
        OutKind::ShiftedBlobs {
            count: 3,
            radius: 5.0,
            spread: 0.5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OutKind::Ring { .. } => "ring",
            OutKind::UniformBox { .. } => "uniform_box",
            OutKind::ShiftedBlobs { .. } => "shifted_blobs",
        }
    }
}

impl FromStr for OutKind {
    type Err = Error;

    /// Family name with default parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(OutKind::ring()),
            "uniform_box" | "box" => Ok(OutKind::uniform_box()),
            "shifted_blobs" => Ok(OutKind::shifted_blobs()),
            other => Err(Error::invalid(format!(
                "unknown out-of-distribution kind `{other}`"
            ))),
        }
    }
}

fn normal(std: f64) -> Result<Normal<f64>> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::invalid(format!(
            "standard deviation must be finite and >= 0, got {std}"
        )));
    }
    Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))
}

/// Center of in-distribution class `k` out of `num_classes`.
pub fn blob_center(k: usize, num_classes: usize) -> [f64; 2] {
    let angle = 2.0 * PI * k as f64 / num_classes as f64;
    [BLOB_RADIUS * angle.cos(), BLOB_RADIUS * angle.sin()]
}

/// `num_classes` isotropic gaussian blobs on the radius-2 circle, grouped by class.
pub fn gen_in_distribution(
    num_classes: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be positive"));
    }
    let noise = normal(spread)?;
    let mut rng = SeedStream::new(seed).named("in_distribution").rng();
    let mut data = Vec::with_capacity(num_classes * n_per_class * 2);
    let mut labels = Vec::with_capacity(num_classes * n_per_class);
    for k in 0..num_classes {
        let [cx, cy] = blob_center(k, num_classes);
        for _ in 0..n_per_class {
            data.push(cx + noise.sample(&mut rng));
            data.push(cy + noise.sample(&mut rng));
            labels.push(k);
        }
    }
    let features = Matrix::from_vec(labels.len(), 2, data)?;
    LabeledDataset::new(features, labels, num_classes, "blobs")
}

pub fn gen_out_distribution(kind: OutKind, n: usize, seed: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::invalid(
            "out-of-distribution sample count must be positive",
        ));
    }
    let mut rng = SeedStream::new(seed).named(kind.name()).rng();
    let mut data = Vec::with_capacity(2 * n);
    match kind {
        OutKind::Ring { radius, noise } => {
            if !(radius.is_finite() && radius > 0.0) {
                return Err(Error::invalid("ring radius must be positive"));
            }
            let radial = normal(noise)?;
            let angle = Uniform::new(0.0, 2.0 * PI).expect("finite bounds");
            for _ in 0..n {
                let t = angle.sample(&mut rng);
                let r = radius + radial.sample(&mut rng);
                data.push(r * t.cos());
                data.push(r * t.sin());
            }
        }
        OutKind::UniformBox { half_width } => {
            if !(half_width > 0.0 && half_width.is_finite()) {
                return Err(Error::invalid("box half-width must be positive"));
            }
            let u = Uniform::new_inclusive(-half_width, half_width).expect("finite bounds");
            for _ in 0..2 * n {
                data.push(u.sample(&mut rng));
            }
        }
        OutKind::ShiftedBlobs {
            count,
            radius,
            spread,
        } => {
            if count == 0 {
                return Err(Error::invalid("shifted_blobs needs at least one blob"));
            }
            let noise = normal(spread)?;
            for i in 0..n {
                let c = i % count;
                let angle = 2.0 * PI * (c as f64 + 0.5) / count as f64;
                data.push(radius * angle.cos() + noise.sample(&mut rng));
                data.push(radius * angle.sin() + noise.sample(&mut rng));
            }
        }
    }
    Matrix::from_vec(n, 2, data)
}

/// Draws `round(π·M)` in-distribution and the remaining out-of-distribution rows
/// without replacement, then shuffles them together.
pub fn mix_traffic(in_pool: &Matrix, out_pool: &Matrix, spec: MixSpec) -> Result<TrafficSet> {
    if !(0.0..=1.0).contains(&spec.in_fraction) {
        return Err(Error::invalid(format!(
            "mix ratio must lie in [0, 1], got {}",
            spec.in_fraction
        )));
    }
    if spec.size == 0 {
        return Err(Error::invalid("traffic size must be positive"));
    }
    let n_in = (spec.in_fraction * spec.size as f64).round() as usize;
    let n_out = spec.size - n_in;
    if n_in > in_pool.rows() {
        return Err(Error::InsufficientPool {
            pool: "in_pool",
            needed: n_in,
            available: in_pool.rows(),
        });
    }
    if n_out > out_pool.rows() {
        return Err(Error::InsufficientPool {
            pool: "out_pool",
            needed: n_out,
            available: out_pool.rows(),
        });
    }
    if n_in > 0 && n_out > 0 && in_pool.cols() != out_pool.cols() {
        return Err(Error::invalid("in and out pools have different widths"));
    }

    let root = SeedStream::new(spec.seed).named("traffic");
    let pick = |pool: &Matrix, count: usize, label: &str| {
        let mut idx: Vec<usize> = (0..pool.rows()).collect();
        idx.shuffle(&mut root.named(label).rng());
        idx.truncate(count);
        pool.select_rows(&idx)
    };
    let ins = pick(in_pool, n_in, "in");
    let outs = pick(out_pool, n_out, "out");

    let cols = if n_in > 0 {
        in_pool.cols()
    } else {
        out_pool.cols()
    };
    let mut rows: Vec<(Vec<f64>, Provenance)> = Vec::with_capacity(spec.size);
    rows.extend(ins.iter_rows().map(|r| (r.to_vec(), Provenance::InDist)));
    rows.extend(outs.iter_rows().map(|r| (r.to_vec(), Provenance::OutDist)));
    rows.shuffle(&mut root.named("order").rng());

    let mut data = Vec::with_capacity(spec.size * cols);
    let mut provenance = Vec::with_capacity(spec.size);
    for (r, p) in rows {
        data.extend(r);
        provenance.push(p);
    }
    TrafficSet::new(Matrix::from_vec(spec.size, cols, data)?, provenance)
}

/// Train/holdout/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: LabeledDataset,
    pub holdout: LabeledDataset,
    pub test: LabeledDataset,
}

/// Seeded shuffle, then contiguous slices of sizes `round(f·N)` (test takes the rest).
pub fn split(dataset: &LabeledDataset, fractions: (f64, f64, f64), seed: u64) -> Result<Splits> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::invalid("split fractions must be positive"));
    }
    if ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions sum to {}, not 1",
            a + b + c
        )));
    }
    let n = dataset.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut SeedStream::new(seed).named("split").rng());
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_hold = ((b * n as f64).round() as usize).min(n - n_train);
    let (train, rest) = idx.split_at(n_train);
    let (hold, test) = rest.split_at(n_hold);
    Ok(Splits {
        train: dataset.subset(train, format!("{}-train", dataset.name)),
        holdout: dataset.subset(hold, format!("{}-holdout", dataset.name)),
        test: dataset.subset(test, format!("{}-test", dataset.name)),
    })
}

/// Contents of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub enum DataFile {
    Labeled(LabeledDataset),
    Unlabeled(Matrix),
}

fn write_rows(out: &mut String, features: &Matrix, labels: Option<&[usize]>) {
    for (i, row) in features.iter_rows().enumerate() {
        let mut fields: Vec<String> = Vec::with_capacity(row.len() + 1);
        if let Some(l) = labels {
            fields.push(l[i].to_string());
        }
        fields.extend(row.iter().map(|v| fmt_f64(*v)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
}

pub fn data_to_string(file: &DataFile) -> String {
    let mut out = String::new();
    match file {
        DataFile::Labeled(ds) => {
            out.push_str(&format!(
                "{DATA_MAGIC} d={} labeled=1 k={}\n",
                ds.dim(),
                ds.num_classes
            ));
            write_rows(&mut out, &ds.features, Some(&ds.labels));
        }
        DataFile::Unlabeled(m) => {
            out.push_str(&format!("{DATA_MAGIC} d={} labeled=0 k=0\n", m.cols()));
            write_rows(&mut out, m, None);
        }
    }
    out
}

pub fn data_from_str(text: &str, name: &str) -> Result<DataFile> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(name, 1, "empty dataset file"))?;
    let rest = header
        .trim()
        .strip_prefix(DATA_MAGIC)
        .ok_or_else(|| Error::parse(name, 1, format!("expected `{DATA_MAGIC}` header")))?;
    let (mut d, mut labeled, mut k) = (None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::parse(name, 1, format!("malformed header field `{field}`")))?;
        let v: usize = value
            .parse()
            .map_err(|_| Error::parse(name, 1, format!("bad value in `{field}`")))?;
        match key {
            "d" => d = Some(v),
            "labeled" => labeled = Some(v),
            "k" => k = Some(v),
            other => {
                return Err(Error::parse(
                    name,
                    1,
                    format!("unknown header key `{other}`"),
                ))
            }
        }
    }
    let d = d
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::parse(name, 1, "header lacks a positive d"))?;
    let labeled = match labeled {
        Some(0) => false,
        Some(1) => true,
        _ => return Err(Error::parse(name, 1, "labeled must be 0 or 1")),
    };
    let k = k.ok_or_else(|| Error::parse(name, 1, "header lacks k"))?;
    if labeled && k < 2 {
        return Err(Error::parse(name, 1, "labeled data needs k >= 2"));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = d + usize::from(labeled);
        if fields.len() != expected {
            return Err(Error::parse(
                name,
                n + 1,
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        let mut vals = fields.iter();
        if labeled {
            let l: usize = vals
                .next()
                .and_then(|t| t.parse().ok())
                .filter(|&l| l < k)
                .ok_or_else(|| Error::parse(name, n + 1, "label missing or out of range"))?;
            labels.push(l);
        }
        for t in vals {
            let v: f64 = t
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(name, n + 1, format!("bad value `{t}`")))?;
            data.push(v);
        }
    }
    let rows = data.len() / d;
    let features = Matrix::from_vec(rows, d, data)?;
    Ok(if labeled {
        DataFile::Labeled(LabeledDataset::new(features, labels, k, name)?)
    } else {
        DataFile::Unlabeled(features)
    })
}

pub fn save_data(file: &DataFile, path: &Path) -> Result<()> {
    fs::write(path, data_to_string(file)).map_err(|e| Error::io(path, e))
}

pub fn load_data(path: &Path) -> Result<DataFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned());
    data_from_str(&text, &name)
}

/// Traffic is stored as a labeled file with `k=2`: label 0 is in-distribution,
/// label 1 out-of-distribution.
pub fn traffic_to_file(traffic: &TrafficSet) -> DataFile {
    DataFile::Labeled(LabeledDataset {
        features: traffic.features.clone(),
        labels: traffic
            .provenance
            .iter()
            .map(|p| match p {
                Provenance::InDist => 0,
                Provenance::OutDist => 1,
            })
            .collect(),
        num_classes: 2,
        name: "traffic".into(),
    })
}

pub fn traffic_from_file(file: DataFile) -> Result<TrafficSet> {
    match file {
        DataFile::Labeled(ds) if ds.num_classes == 2 => {
            let tags = ds
                .labels
                .iter()
                .map(|&l| {
                    if l == 0 {
                        Provenance::InDist
                    } else {
                        Provenance::OutDist
                    }
                })
                .collect();
            TrafficSet::new(ds.features, tags)
        }
        _ => Err(Error::invalid(
            "traffic files must be labeled with k=2 provenance tags",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_spread_blobs_sit_on_centers() {
        let ds = gen_in_distribution(3, 1, 0.0, 9).unwrap();
        assert_eq!(ds.len(), 3);
        for (k, row) in ds.features.iter_rows().enumerate() {
            assert_eq!(row, &blob_center(k, 3));
            assert_eq!(ds.labels[k], k);
        }
    }

    #[test]
    fn blob_means_track_centers() {
        let ds = gen_in_distribution(2, 100, 0.3, 4).unwrap();
        for k in 0..2 {
            let rows: Vec<&[f64]> = ds
                .features
                .iter_rows()
                .zip(&ds.labels)
                .filter(|(_, &l)| l == k)
                .map(|(r, _)| r)
                .collect();
            let c = blob_center(k, 2);
            for d in 0..2 {
                let mean = rows.iter().map(|r| r[d]).sum::<f64>() / rows.len() as f64;
                assert!((mean - c[d]).abs() < 0.1, "class {k} dim {d} mean {mean}");
            }
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(
            gen_in_distribution(3, 20, 0.5, 1).unwrap(),
            gen_in_distribution(3, 20, 0.5, 1).unwrap()
        );
        for kind in [
            OutKind::ring(),
            OutKind::uniform_box(),
            OutKind::shifted_blobs(),
        ] {
            assert_eq!(
                gen_out_distribution(kind, 50, 3).unwrap(),
                gen_out_distribution(kind, 50, 3).unwrap()
            );
        }
    }

    #[test]
    fn noiseless_ring_has_exact_radius() {
        let m = gen_out_distribution(OutKind::ring(), 4, 0).unwrap();
        for r in m.iter_rows() {
            assert!(((r[0] * r[0] + r[1] * r[1]).sqrt() - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_box_support() {
        let m = gen_out_distribution(OutKind::uniform_box(), 1000, 0).unwrap();
        assert!(m.as_slice().iter().all(|v| (-8.0..=8.0).contains(v)));
    }

    #[test]
    fn mix_extremes_and_even() {
        let ins = gen_in_distribution(2, 20, 0.3, 0).unwrap().features;
        let outs = gen_out_distribution(OutKind::ring(), 20, 0).unwrap();
        let mk = |pi| {
            mix_traffic(
                &ins,
                &outs,
                MixSpec {
                    in_fraction: pi,
                    size: 10,
                    seed: 5,
                },
            )
            .unwrap()
        };
        assert_eq!(mk(1.0).count(Provenance::InDist), 10);
        assert_eq!(mk(0.0).count(Provenance::OutDist), 10);
        let even = mk(0.5);
        assert_eq!(even.count(Provenance::InDist), 5);
        assert_eq!(even.count(Provenance::OutDist), 5);
        assert_eq!(even.mix_ratio, 0.5);
    }

    #[test]
    fn mix_reports_short_pool() {
        let ins = Matrix::zeros(3, 2);
        let outs = Matrix::zeros(30, 2);
        let err = mix_traffic(
            &ins,
            &outs,
            MixSpec {
                in_fraction: 0.5,
                size: 10,
                seed: 0,
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientPool {
                pool: "in_pool",
                needed: 5,
                available: 3
            }
        ));
    }

    #[test]
    fn split_sizes_and_validation() {
        let ds = gen_in_distribution(2, 5, 0.3, 0).unwrap();
        let s = split(&ds, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((s.train.len(), s.holdout.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split(&ds, (0.8, 0.1, 0.1), 1).unwrap());
        assert!(split(&ds, (0.8, 0.1, 0.2), 1).is_err());
        assert!(split(&ds, (1.0, 0.0, 0.0), 1).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let ds = gen_in_distribution(3, 7, 0.3, 2).unwrap();
        let s = split(&ds, (0.5, 0.25, 0.25), 3).unwrap();
        let mut all: Vec<(u64, u64, usize)> = Vec::new();
        for part in [&s.train, &s.holdout, &s.test] {
            for (r, &l) in part.features.iter_rows().zip(&part.labels) {
                all.push((r[0].to_bits(), r[1].to_bits(), l));
            }
        }
        let mut orig: Vec<(u64, u64, usize)> = ds
            .features
            .iter_rows()
            .zip(&ds.labels)
            .map(|(r, &l)| (r[0].to_bits(), r[1].to_bits(), l))
            .collect();
        all.sort_unstable();
        orig.sort_unstable();
        assert_eq!(all, orig);
    }

    #[test]
    fn data_file_rejects_garbage() {
        assert!(data_from_str("oodlab-data v1 d=2 labeled=1 k=3\n4,0.1,0.2\n", "x").is_err());
        assert!(data_from_str("oodlab-data v1 d=2 labeled=0 k=0\n0.1\n", "x").is_err());
        assert!(data_from_str("oodlab-data v1 d=2 labeled=0 k=0\n0.1,inf\n", "x").is_err());
        assert!(data_from_str("something else\n", "x").is_err());
    }

    #[test]
    fn data_file_accepts_short_decimals() {
        let f = data_from_str(
            "oodlab-data v1 d=2 labeled=1 k=2\n1, 0.5, -2\n0,3,4e-1\n",
            "x",
        )
        .unwrap();
        match f {
            DataFile::Labeled(ds) => {
                assert_eq!(ds.labels, vec![1, 0]);
                assert_eq!(ds.features.as_slice(), &[0.5, -2.0, 3.0, 0.4]);
            }
            DataFile::Unlabeled(_) => panic!("expected labeled"),
        }
    }

    proptest! {
        #[test]
        fn mix_counts_follow_rounding(pi in 0.0f64..=1.0, m in 1usize..60, seed in any::<u64>()) {
            let ins = gen_in_distribution(2, 30, 0.3, 0).unwrap().features;
            let outs = gen_out_distribution(OutKind::uniform_box(), 60, 0).unwrap();
            let t = mix_traffic(&ins, &outs, MixSpec { in_fraction: pi, size: m, seed }).unwrap();
            prop_assert_eq!(t.len(), m);
            prop_assert_eq!(t.count(Provenance::InDist), (pi * m as f64).round() as usize);
            prop_assert!((t.mix_ratio - pi).abs() <= 1.0 / m as f64);
        }

        #[test]
        fn data_file_round_trip(seed in any::<u64>(), n in 1usize..10) {
            let ds = gen_in_distribution(3, n, 1.7, seed).unwrap();
            let back = data_from_str(&data_to_string(&DataFile::Labeled(ds.clone())), "blobs").unwrap();
            prop_assert_eq!(back, DataFile::Labeled(ds));
        }
    }
}
