use std::f64::consts::PI;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    /// Two interleaved half circles in 2-d.
    TwoMoons,
    /// Circles of radius 1 and 3 in 2-d.
    ConcentricCircles,
    /// 3-d roll; classes are the inner and outer halves of the sheet, so
    /// adjacent windings are close in space but far along the manifold.
    SwissRoll,
}

impl ManifoldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ManifoldKind::TwoMoons => "two_moons",
            ManifoldKind::ConcentricCircles => "concentric_circles",
            ManifoldKind::SwissRoll => "swiss_roll",
        }
    }
}

impl FromStr for ManifoldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_moons" => Ok(ManifoldKind::TwoMoons),
            "concentric_circles" => Ok(ManifoldKind::ConcentricCircles),
            "swiss_roll" => Ok(ManifoldKind::SwissRoll),
            other => Err(Error::Config(format!("unknown manifold kind {other:?}"))),
        }
    }
}

/// Noise-free point of class `class` at manifold parameter `u` in `[0, 1]`.
fn on_manifold(kind: ManifoldKind, class: usize, u: f64, v: f64) -> Vec<f64> {
    match (kind, class) {
        (ManifoldKind::TwoMoons, 0) => {
            let t = PI * u;
            vec![t.cos(), t.sin()]
        }
        (ManifoldKind::TwoMoons, _) => {
            let t = PI * u;
            vec![1.0 - t.cos(), 0.5 - t.sin()]
        }
        (ManifoldKind::ConcentricCircles, c) => {
            let r = if c == 0 { 1.0 } else { 3.0 };
            let t = 2.0 * PI * u;
            vec![r * t.cos(), r * t.sin()]
        }
        (ManifoldKind::SwissRoll, c) => {
            let t = 1.5 * PI * (1.0 + u + c as f64);
            vec![t.cos() * t, 10.0 * v, t.sin() * t]
        }
    }
}

/// Generates `2 * n_per_class` labelled points, shuffled, deterministic under `seed`.
pub fn gen_manifold(kind: ManifoldKind, n_per_class: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be at least 1".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<(Vec<f64>, usize)> = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        for _ in 0..n_per_class {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            let mut x = on_manifold(kind, class, u, v);
            if noise_sigma > 0.0 {
                for c in &mut x {
                    let e: f64 = rng.sample(StandardNormal);
                    *c += noise_sigma * e;
                }
            }
            points.push((x, class));
        }
    }
    points.shuffle(&mut rng);
    let (samples, labels): (Vec<_>, Vec<_>) = points.into_iter().unzip();
    Dataset::new(kind.as_str(), samples, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_moons_lie_on_arcs() {
        for seed in 0..20 {
            let ds = gen_manifold(ManifoldKind::TwoMoons, 1, 0.0, seed).unwrap();
            let gt = ds.ground_truth().unwrap();
            for (i, x) in ds.samples().iter().enumerate() {
                let (cx, cy, upper) = if gt.label(i) == 0 { (0.0, 0.0, true) } else { (1.0, 0.5, false) };
                let r = ((x[0] - cx).powi(2) + (x[1] - cy).powi(2)).sqrt();
                assert!((r - 1.0).abs() < 1e-12);
                if upper {
                    assert!(x[1] >= -1e-12);
                } else {
                    assert!(x[1] <= 0.5 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        for kind in [ManifoldKind::TwoMoons, ManifoldKind::ConcentricCircles, ManifoldKind::SwissRoll] {
            let a = gen_manifold(kind, 50, 0.08, 7).unwrap();
            let b = gen_manifold(kind, 50, 0.08, 7).unwrap();
            assert_eq!(a, b);
            let c = gen_manifold(kind, 50, 0.08, 8).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn noiseless_circles_have_radius_one_or_three() {
        let ds = gen_manifold(ManifoldKind::ConcentricCircles, 40, 0.0, 1).unwrap();
        for x in ds.samples() {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            assert!((r - 1.0).abs() < 1e-12 || (r - 3.0).abs() < 1e-12, "radius {r}");
        }
    }

    #[test]
    fn balanced_labels_and_kinds_parse() {
        let ds = gen_manifold(ManifoldKind::SwissRoll, 30, 0.1, 0).unwrap();
        assert_eq!(ds.len(), 60);
        assert_eq!(ds.dim(), 3);
        let ones = ds.ground_truth().unwrap().as_slice().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 30);
        assert_eq!("swiss_roll".parse::<ManifoldKind>().unwrap(), ManifoldKind::SwissRoll);
        assert!(matches!("spiral".parse::<ManifoldKind>(), Err(Error::Config(_))));
        assert!(gen_manifold(ManifoldKind::TwoMoons, 0, 0.1, 0).is_err());
    }
}
