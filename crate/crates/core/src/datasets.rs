//! Synthetic shape datasets: noisy, randomly rotated point samples of four
//! surface families.
//!
//! Sample `i` of class `c` is drawn from its own generator seeded with
//! `hash64(seed, c, i)`. Test samples continue the index after the class's
//! training samples, so no two samples share a seed.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{hash64, Matrix, SeededRng};
use crate::pointcloud::{round_to_file_precision, write_dataset, Dataset, PointCloud};

pub const MANIFEST_FILE: &str = "manifest.txt";

pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.35;
pub const CUBE_HALF: f64 = 0.5;
pub const CYLINDER_RADIUS: f64 = 0.5;
pub const CYLINDER_HALF_HEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeFamily {
    Sphere,
    Cube,
    Torus,
    Cylinder,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 4] = [
        ShapeFamily::Sphere,
        ShapeFamily::Cube,
        ShapeFamily::Torus,
        ShapeFamily::Cylinder,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Cube => "cube",
            ShapeFamily::Torus => "torus",
            ShapeFamily::Cylinder => "cylinder",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s.trim()).ok_or_else(|| {
            Error::domain(format!(
                "unknown shape family {s:?} (expected sphere, cube, torus or cylinder)"
            ))
        })
    }
}

impl std::fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    pub family: ShapeFamily,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 8 {
            return Err(Error::domain(format!(
                "n_points must be at least 8, got {}",
                self.n_points
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::domain(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// [`gen_shape`] with a generator seeded from `self.seed`.
    pub fn generate(&self) -> Result<PointCloud> {
        gen_shape(self, &mut SeededRng::new(self.seed))
    }
}

/// `n` points distributed uniformly by area on the ideal surface, in the
/// family's canonical pose (axis of symmetry along z).
pub fn sample_surface(family: ShapeFamily, n: usize, rng: &mut SeededRng) -> Matrix {
    let mut m = Matrix::zeros(n, 3);
    for r in 0..n {
        let p = match family {
            ShapeFamily::Sphere => loop {
                let v = [rng.standard_normal(), rng.standard_normal(), rng.standard_normal()];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if norm > 1e-12 {
                    break [v[0] / norm, v[1] / norm, v[2] / norm];
                }
            },
            ShapeFamily::Cube => {
                // six faces of equal area
                let face = rng.index(6);
                let mut p = [
                    rng.uniform(-CUBE_HALF, CUBE_HALF),
                    rng.uniform(-CUBE_HALF, CUBE_HALF),
                    0.0,
                ];
                p.rotate_right(2 - face / 2);
                p[face / 2] = if face.is_multiple_of(2) { CUBE_HALF } else { -CUBE_HALF };
                p
            }
            ShapeFamily::Torus => loop {
                // area element ∝ R + r·cos θ
                let theta = rng.uniform(0.0, std::f64::consts::TAU);
                let phi = rng.uniform(0.0, std::f64::consts::TAU);
                let ring = TORUS_MAJOR + TORUS_MINOR * theta.cos();
                if rng.uniform(0.0, 1.0) * (TORUS_MAJOR + TORUS_MINOR) <= ring {
                    break [ring * phi.cos(), ring * phi.sin(), TORUS_MINOR * theta.sin()];
                }
            },
            ShapeFamily::Cylinder => {
                let side = 2.0 * CYLINDER_HALF_HEIGHT;
                let p_side = side / (side + CYLINDER_RADIUS);
                let phi = rng.uniform(0.0, std::f64::consts::TAU);
                if rng.uniform(0.0, 1.0) < p_side {
                    let z = rng.uniform(-CYLINDER_HALF_HEIGHT, CYLINDER_HALF_HEIGHT);
                    [CYLINDER_RADIUS * phi.cos(), CYLINDER_RADIUS * phi.sin(), z]
                } else {
                    let rad = CYLINDER_RADIUS * rng.uniform(0.0, 1.0).sqrt();
                    let z = if rng.index(2) == 0 {
                        CYLINDER_HALF_HEIGHT
                    } else {
                        -CYLINDER_HALF_HEIGHT
                    };
                    [rad * phi.cos(), rad * phi.sin(), z]
                }
            }
        };
        m.row_mut(r).copy_from_slice(&p);
    }
    m
}

/// Uniformly distributed rotation matrix, from a normalized Gaussian quaternion.
pub fn random_rotation(rng: &mut SeededRng) -> Matrix {
    let q = loop {
        let q = [
            rng.standard_normal(),
            rng.standard_normal(),
            rng.standard_normal(),
            rng.standard_normal(),
        ];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            break q.map(|v| v / n);
        }
    };
    let [w, x, y, z] = q;
    Matrix::from_rows(&[
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ])
    .expect("finite rotation")
}

/// Surface sample, then Gaussian noise, then a uniform random rotation.
/// Coordinates are rounded to the precision of the `.pts` format.
pub fn gen_shape(spec: &ShapeSpec, rng: &mut SeededRng) -> Result<PointCloud> {
    spec.validate()?;
    let mut pts = sample_surface(spec.family, spec.n_points, rng);
    if spec.noise_sigma > 0.0 {
        for v in pts.data_mut() {
            *v += spec.noise_sigma * rng.standard_normal();
        }
    }
    // rows are points, so rotate with the transpose
    let r = random_rotation(rng);
    let rotated = pts.matmul_t(&r)?.map(round_to_file_precision);
    PointCloud::new(rotated, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub classes: Vec<ShapeFamily>,
    pub per_class_train: usize,
    pub per_class_test: usize,
    /// Per-class count multipliers, applied to both splits.
    pub imbalance: Option<Vec<f64>>,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            classes: ShapeFamily::ALL.to_vec(),
            per_class_train: 200,
            per_class_test: 50,
            imbalance: None,
            n_points: 256,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::domain("at least two classes are required"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(Error::domain(format!("class {c} listed twice")));
            }
        }
        if self.per_class_train == 0 || self.per_class_test == 0 {
            return Err(Error::domain("per-class counts must be at least 1"));
        }
        if let Some(m) = &self.imbalance {
            if m.len() != self.classes.len() {
                return Err(Error::domain(format!(
                    "{} imbalance multipliers for {} classes",
                    m.len(),
                    self.classes.len()
                )));
            }
            if m.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::domain("imbalance multipliers must be positive"));
            }
        }
        ShapeSpec {
            family: self.classes[0],
            n_points: self.n_points,
            noise_sigma: self.noise_sigma,
            seed: 0,
        }
        .validate()?;
        let counts = self.train_counts().into_iter().chain(self.test_counts());
        if counts.into_iter().any(|c| c == 0) {
            return Err(Error::domain("imbalance multipliers produce an empty class"));
        }
        Ok(())
    }

    fn scaled(&self, base: usize) -> Vec<usize> {
        match &self.imbalance {
            None => vec![base; self.classes.len()],
            Some(m) => m.iter().map(|&k| (k * base as f64).round() as usize).collect(),
        }
    }

    pub fn train_counts(&self) -> Vec<usize> {
        self.scaled(self.per_class_train)
    }

    pub fn test_counts(&self) -> Vec<usize> {
        self.scaled(self.per_class_test)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.as_str().to_string()).collect()
    }

    /// The full spec as `key=value` lines.
    pub fn manifest(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let names = self.class_names().join(",");
        let imbalance = self.imbalance.as_ref().map_or_else(
            || "none".to_string(),
            |m| m.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        for (k, v) in [
            ("classes", names),
            ("per_class_train", self.per_class_train.to_string()),
            ("per_class_test", self.per_class_test.to_string()),
            ("imbalance", imbalance),
            ("points", self.n_points.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("seed", self.seed.to_string()),
            ("seed_mixing", "hash64(seed, class, index)".to_string()),
            ("train_counts", join(&self.train_counts())),
            ("test_counts", join(&self.test_counts())),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

fn gen_split(spec: &GenSpec, counts: &[usize], offsets: &[usize]) -> Result<Dataset> {
    let jobs: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| (0..n).map(move |i| (c, i)))
        .collect();
    let clouds = jobs
        .par_iter()
        .map(|&(c, i)| {
            let index = offsets[c] + i;
            let shape = ShapeSpec {
                family: spec.classes[c],
                n_points: spec.n_points,
                noise_sigma: spec.noise_sigma,
                seed: hash64(&[spec.seed, c as u64, index as u64]),
            };
            let mut cloud = shape.generate()?;
            cloud.label = Some(c);
            Ok(cloud)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(clouds, spec.class_names())
}

/// Generates `(train, test)`, each ordered by class then index.
pub fn gen_dataset(spec: &GenSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let train_counts = spec.train_counts();
    let train = gen_split(spec, &train_counts, &vec![0; spec.classes.len()])?;
    let test = gen_split(spec, &spec.test_counts(), &train_counts)?;
    Ok((train, test))
}

/// Writes `train/`, `test/` and `manifest.txt` under `dir`.
pub fn write_generated(spec: &GenSpec, train: &Dataset, test: &Dataset, dir: &Path) -> Result<()> {
    write_dataset(train, &dir.join("train"))?;
    write_dataset(test, &dir.join("test"))?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, spec.manifest()).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surface(family: ShapeFamily, seed: u64) -> Matrix {
        sample_surface(family, 500, &mut SeededRng::new(seed))
    }

    #[test]
    fn sphere_points_have_unit_norm() {
        let m = surface(ShapeFamily::Sphere, 1);
        for r in 0..m.rows() {
            let n: f64 = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cube_points_lie_on_faces() {
        let m = surface(ShapeFamily::Cube, 2);
        let mut faces = [0usize; 6];
        for r in 0..m.rows() {
            let row = m.row(r);
            assert!(row.iter().all(|v| v.abs() <= 0.5 + 1e-12));
            let axis = (0..3).find(|&a| (row[a].abs() - 0.5).abs() < 1e-9).expect("on a face");
            faces[2 * axis + usize::from(row[axis] < 0.0)] += 1;
        }
        assert!(faces.iter().all(|&f| f > 50), "{faces:?}");
    }

    #[test]
    fn torus_points_satisfy_implicit_equation() {
        let m = surface(ShapeFamily::Torus, 3);
        let mut outer = 0;
        for r in 0..m.rows() {
            let [x, y, z] = [m[(r, 0)], m[(r, 1)], m[(r, 2)]];
            let rho = (x * x + y * y).sqrt();
            assert!(((rho - 1.0).powi(2) + z * z - 0.35f64.powi(2)).abs() < 1e-9);
            outer += usize::from(rho > 1.0);
        }
        // the outer half carries more area: (R + 2r/π) / 2R ≈ 0.61
        assert!(outer > 270 && outer < 340, "{outer}");
    }

    #[test]
    fn cylinder_points_on_side_or_caps() {
        let m = surface(ShapeFamily::Cylinder, 4);
        let mut side = 0;
        for r in 0..m.rows() {
            let [x, y, z] = [m[(r, 0)], m[(r, 1)], m[(r, 2)]];
            let rho = (x * x + y * y).sqrt();
            if (rho - 0.5).abs() < 1e-9 && z.abs() <= 1.0 {
                side += 1;
            } else {
                assert!((z.abs() - 1.0).abs() < 1e-12 && rho <= 0.5 + 1e-12);
            }
        }
        assert!(side > 360 && side < 440, "{side}");
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = random_rotation(&mut SeededRng::new(5));
        let rtr = r.t_matmul(&r).unwrap();
        assert!(rtr.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-14);
        let det = r[(0, 0)] * (r[(1, 1)] * r[(2, 2)] - r[(1, 2)] * r[(2, 1)])
            - r[(0, 1)] * (r[(1, 0)] * r[(2, 2)] - r[(1, 2)] * r[(2, 0)])
            + r[(0, 2)] * (r[(1, 0)] * r[(2, 1)] - r[(1, 1)] * r[(2, 0)]);
        assert!((det - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rotated_sphere_keeps_unit_norm() {
        let spec = ShapeSpec {
            family: ShapeFamily::Sphere,
            n_points: 64,
            noise_sigma: 0.0,
            seed: 6,
        };
        let c = spec.generate().unwrap();
        for r in 0..64 {
            let n: f64 = c.points().row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_spec_validation() {
        let mut s = ShapeSpec {
            family: ShapeFamily::Cube,
            n_points: 7,
            noise_sigma: 0.0,
            seed: 0,
        };
        assert!(s.generate().is_err());
        s.n_points = 8;
        s.noise_sigma = -1.0;
        assert!(s.generate().is_err());
        assert!(ShapeFamily::parse("pyramid").is_err());
        assert_eq!(ShapeFamily::parse("torus").unwrap(), ShapeFamily::Torus);
    }

    #[test]
    fn counts_and_imbalance() {
        let spec = GenSpec {
            per_class_train: 3,
            per_class_test: 2,
            n_points: 16,
            ..GenSpec::default()
        };
        let (tr, te) = gen_dataset(&spec).unwrap();
        assert_eq!(tr.class_counts(), vec![3; 4]);
        assert_eq!(te.class_counts(), vec![2; 4]);
        let binary = GenSpec {
            classes: vec![ShapeFamily::Cube, ShapeFamily::Sphere],
            per_class_train: 100,
            per_class_test: 10,
            imbalance: Some(vec![3.0, 7.0]),
            n_points: 8,
            ..GenSpec::default()
        };
        assert_eq!(binary.train_counts(), vec![300, 700]);
        assert_eq!(binary.test_counts(), vec![30, 70]);
        assert!(GenSpec {
            classes: vec![ShapeFamily::Cube],
            ..GenSpec::default()
        }
        .validate()
        .is_err());
        assert!(GenSpec {
            imbalance: Some(vec![1.0]),
            ..GenSpec::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn generation_is_deterministic_and_seeds_are_disjoint() {
        let spec = GenSpec {
            per_class_train: 2,
            per_class_test: 2,
            n_points: 10,
            seed: 9,
            ..GenSpec::default()
        };
        let (a, b) = gen_dataset(&spec).unwrap();
        let (a2, b2) = gen_dataset(&spec).unwrap();
        assert_eq!(a.clouds, a2.clouds);
        assert_eq!(b.clouds, b2.clouds);
        for x in &a.clouds {
            for y in &b.clouds {
                assert_ne!(x.points(), y.points());
            }
        }
        let manifest = spec.manifest();
        assert!(manifest.contains("classes=sphere,cube,torus,cylinder\n"));
        assert!(manifest.contains("seed=9\n"));
    }
}
