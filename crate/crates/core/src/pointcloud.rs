//! Point-cloud data model, the `.pts` dataset layout, normalization,
//! sampling and augmentation.
//!
//! A dataset directory holds `classes.txt` (one class name per line, line
//! index = label) and any number of `*.pts` files. Each `.pts` file starts
//! with a header line `N C label` followed by `N` rows of `C` reals.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

pub const CLASSES_FILE: &str = "classes.txt";
pub const POINTS_EXT: &str = "pts";

/// `N×C` matrix of point features with an optional class index.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Matrix,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Matrix, label: Option<usize>) -> Result<Self> {
        if points.rows() < 2 {
            return Err(Error::domain(format!(
                "a point cloud needs at least 2 points, got {}",
                points.rows()
            )));
        }
        if points.cols() == 0 {
            return Err(Error::domain("a point cloud needs at least one channel"));
        }
        if !points.is_finite() {
            return Err(Error::domain("point coordinates must be finite"));
        }
        Ok(Self { points, label })
    }

    #[inline]
    pub fn points(&self) -> &Matrix {
        &self.points
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    /// Always false; clouds hold at least two points.
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.points.cols()
    }

    /// Same label, new coordinates.
    pub fn with_points(&self, points: Matrix) -> Result<Self> {
        Self::new(points, self.label)
    }

    /// Points reordered so that row `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        self.with_points(self.points.select_rows(order))
    }
}

/// Ordered clouds plus the class names their labels index into.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(clouds: Vec<PointCloud>, class_names: Vec<String>) -> Result<Self> {
        for (i, c) in clouds.iter().enumerate() {
            match c.label {
                Some(l) if l >= class_names.len() => {
                    return Err(Error::Schema(format!(
                        "cloud {i} has label {l} but only {} classes are declared",
                        class_names.len()
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { clouds, class_names })
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Number of clouds carrying each label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for c in &self.clouds {
            if let Some(l) = c.label {
                counts[l] += 1;
            }
        }
        counts
    }

    /// Sub-dataset of the given cloud indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            clouds: indices.iter().map(|&i| self.clouds[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses the text of one `.pts` file. `file` is only used in error messages.
pub fn parse_pts(text: &str, file: &Path) -> Result<PointCloud> {
    let mut lines = text.split('\n').enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(file, 1, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_err(
            file,
            1,
            format!("header must be `N C label`, got {:?}", header.trim_end()),
        ));
    }
    let parse_count = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| parse_err(file, 1, format!("{what} is not a non-negative integer: {s:?}")))
    };
    let n = parse_count(fields[0], "N")?;
    let c = parse_count(fields[1], "C")?;
    let label = parse_count(fields[2], "label")?;
    if n < 2 {
        return Err(parse_err(
            file,
            1,
            format!("need at least 2 points, header declares {n}"),
        ));
    }
    if c == 0 {
        return Err(parse_err(file, 1, "C must be at least 1"));
    }

    let mut data = Vec::with_capacity(n * c);
    let mut rows = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if rows == n {
            if line.trim().is_empty() {
                continue;
            }
            return Err(parse_err(
                file,
                lineno,
                format!("unexpected data after the {n} declared rows"),
            ));
        }
        let mut count = 0;
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(file, lineno, format!("not a number: {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(file, lineno, format!("non-finite value: {tok:?}")));
            }
            data.push(v);
            count += 1;
        }
        if count != c {
            return Err(parse_err(file, lineno, format!("expected {c} values, found {count}")));
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(
            file,
            rows + 2,
            format!("header declares {n} rows but file has {rows}"),
        ));
    }
    let points = Matrix::new(n, c, data).map_err(|e| parse_err(file, 1, e.to_string()))?;
    PointCloud::new(points, Some(label))
}

pub fn read_pts(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pts(&text, path)
}

/// Formats a real with 15 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.14e}")
}

/// Rounds a real to exactly what [`format_real`] writes.
pub fn round_to_file_precision(v: f64) -> f64 {
    format_real(v).parse().expect("formatted real parses")
}

/// Serializes a cloud; a missing label is written as 0.
pub fn format_pts(cloud: &PointCloud) -> String {
    let m = cloud.points();
    let mut out = String::with_capacity(m.rows() * m.cols() * 24 + 32);
    let _ = writeln!(out, "{} {} {}", m.rows(), m.cols(), cloud.label.unwrap_or(0));
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|&v| format_real(v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_pts(cloud: &PointCloud, path: &Path) -> Result<()> {
    fs::write(path, format_pts(cloud)).map_err(|e| Error::io(path, e))
}

fn read_class_names(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(CLASSES_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut names: Vec<String> = text.split('\n').map(|s| s.trim_end_matches('\r').to_string()).collect();
    while names.last().is_some_and(|s| s.is_empty()) {
        names.pop();
    }
    if let Some(i) = names.iter().position(|s| s.trim().is_empty()) {
        return Err(parse_err(&path, i + 1, "empty class name"));
    }
    if names.is_empty() {
        return Err(parse_err(&path, 1, "no classes declared"));
    }
    Ok(names)
}

/// `*.pts` files of `dir` in lexicographic filename order.
pub fn list_point_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == POINTS_EXT) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Loads a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let class_names = read_class_names(dir)?;
    let mut clouds = Vec::new();
    for path in list_point_files(dir)? {
        let cloud = read_pts(&path)?;
        let label = cloud.label.expect("parsed clouds carry a label");
        if label >= class_names.len() {
            return Err(Error::Schema(format!(
                "{}: label {label} out of range for {} classes",
                path.display(),
                class_names.len()
            )));
        }
        clouds.push(cloud);
    }
    Dataset::new(clouds, class_names)
}

/// Writes `classes.txt` and one `NNNNNN_<class>.pts` per cloud, numbered in
/// dataset order so that reading back preserves order.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut classes = dataset.class_names.join("\n");
    classes.push('\n');
    let path = dir.join(CLASSES_FILE);
    fs::write(&path, classes).map_err(|e| Error::io(&path, e))?;
    for (i, cloud) in dataset.clouds.iter().enumerate() {
        let tag = cloud
            .label
            .and_then(|l| dataset.class_names.get(l))
            .map_or("unlabeled", String::as_str);
        write_pts(cloud, &dir.join(format!("{i:06}_{tag}.{POINTS_EXT}")))?;
    }
    Ok(())
}

/// Centers the cloud at the origin and scales its largest point norm to 1.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    let m = cloud.points();
    let (n, c) = m.shape();
    let mut centroid = vec![0.0; c];
    for r in 0..n {
        for (acc, v) in centroid.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    for v in &mut centroid {
        *v /= n as f64;
    }
    let mut centered = Matrix::from_fn(n, c, |r, k| m.get(r, k) - centroid[k]);
    let radius = (0..n)
        .map(|r| centered.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    if radius <= 1e-12 * scale {
        return Err(Error::Degenerate(
            "all points coincide; cannot normalize to the unit sphere".into(),
        ));
    }
    for v in centered.data_mut() {
        *v /= radius;
    }
    cloud.with_points(centered)
}

/// Draws `n` points: distinct indices when the cloud has at least `n`
/// points, otherwise every point once plus draws with replacement.
pub fn sample_points(cloud: &PointCloud, n: usize, rng: &mut SeededRng) -> Result<PointCloud> {
    if n < 2 {
        return Err(Error::domain(format!("sample size must be at least 2, got {n}")));
    }
    let total = cloud.len();
    let order = if total >= n {
        let mut idx: Vec<usize> = (0..total).collect();
        // partial Fisher-Yates
        for i in 0..n {
            let j = i + rng.index(total - i);
            idx.swap(i, j);
        }
        idx.truncate(n);
        idx
    } else {
        let mut idx: Vec<usize> = (0..total).collect();
        idx.extend((total..n).map(|_| rng.index(total)));
        rng.shuffle(&mut idx);
        idx
    };
    cloud.permuted(&order)
}

/// Augmentation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Uniform random rotation about the vertical (z) axis.
    pub rotate: bool,
    /// Per-coordinate Gaussian jitter, clipped to ±3σ.
    pub jitter_sigma: f64,
    /// Isotropic scale range `(lo, hi)`.
    pub scale_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AugmentConfig {
    pub const IDENTITY: Self = Self {
        rotate: false,
        jitter_sigma: 0.0,
        scale_range: (1.0, 1.0),
    };

    pub fn is_identity(&self) -> bool {
        !self.rotate && self.jitter_sigma == 0.0 && self.scale_range == (1.0, 1.0)
    }

    /// True when the augmentation preserves pairwise distances.
    pub fn is_isometry(&self) -> bool {
        self.jitter_sigma == 0.0 && self.scale_range == (1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(self.jitter_sigma >= 0.0) || !self.jitter_sigma.is_finite() {
            return Err(Error::domain("jitter sigma must be finite and non-negative"));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::domain(format!(
                "scale range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Rotation angle about z drawn for the next augmentation, if any.
pub(crate) fn draw_rotation(cfg: &AugmentConfig, rng: &mut SeededRng) -> Option<f64> {
    cfg.rotate.then(|| rng.uniform(0.0, std::f64::consts::TAU))
}

/// Rotates the first three channels about the z axis.
pub fn rotate_z(points: &Matrix, angle: f64) -> Matrix {
    let (s, c) = angle.sin_cos();
    let mut out = points.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let (x, y) = (row[0], row[1]);
        row[0] = c * x - s * y;
        row[1] = s * x + c * y;
    }
    out
}

/// Random rotation about z, then isotropic scaling, then clipped jitter.
pub fn augment(cloud: &PointCloud, cfg: &AugmentConfig, rng: &mut SeededRng) -> Result<PointCloud> {
    cfg.validate()?;
    if cfg.rotate && cloud.channels() < 3 {
        return Err(Error::domain("vertical-axis rotation needs at least 3 channels"));
    }
    let mut pts = cloud.points().clone();
    if let Some(angle) = draw_rotation(cfg, rng) {
        pts = rotate_z(&pts, angle);
    }
    let (lo, hi) = cfg.scale_range;
    if lo != 1.0 || hi != 1.0 {
        let k = if lo == hi { lo } else { rng.uniform(lo, hi) };
        pts = pts.scale(k);
    }
    if cfg.jitter_sigma > 0.0 {
        let sigma = cfg.jitter_sigma;
        for v in pts.data_mut() {
            *v += (sigma * rng.standard_normal()).clamp(-3.0 * sigma, 3.0 * sigma);
        }
    }
    cloud.with_points(pts)
}
