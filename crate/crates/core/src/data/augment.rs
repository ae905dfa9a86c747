use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Random transformation used to build a hard positive for anchors whose
/// positive set is still just themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentSpec {
    /// Adds `N(0, sigma^2)` to every coordinate.
    VectorJitter { sigma: f64 },
    /// Horizontal flip, random crop from a zero-padded image, brightness shift.
    ImageBasic {
        channels: usize,
        height: usize,
        width: usize,
        flip_prob: f64,
        crop_pad: usize,
        brightness: f64,
    },
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec::VectorJitter { sigma: 0.05 }
    }
}

impl AugmentSpec {
    /// Image defaults: flip with probability 1/2, 4-pixel pad crop, +-0.2 brightness.
    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        AugmentSpec::ImageBasic {
            channels,
            height,
            width,
            flip_prob: 0.5,
            crop_pad: 4,
            brightness: 0.2,
        }
    }
}

/// Deterministic in `(x, spec, seed)`; never changes the dimensionality.
pub fn augment(x: &[f64], spec: &AugmentSpec, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *spec {
        AugmentSpec::VectorJitter { sigma } => {
            if sigma == 0.0 {
                return Ok(x.to_vec());
            }
            Ok(x.iter()
                .map(|&v| {
                    let e: f64 = rng.sample(StandardNormal);
                    v + sigma * e
                })
                .collect())
        }
        AugmentSpec::ImageBasic {
            channels,
            height,
            width,
            flip_prob,
            crop_pad,
            brightness,
        } => {
            let expected = channels * height * width;
            if x.len() != expected {
                return Err(Error::dim("augment image", expected, x.len()));
            }
            let mut img = x.to_vec();
            if flip_prob > 0.0 && rng.random::<f64>() < flip_prob {
                img = flip_horizontal(&img, channels, height, width);
            }
            if crop_pad > 0 {
                let span = 2 * crop_pad as i64 + 1;
                let dy = rng.random_range(0..span) - crop_pad as i64;
                let dx = rng.random_range(0..span) - crop_pad as i64;
                img = shift(&img, channels, height, width, dy, dx);
            }
            if brightness > 0.0 {
                let delta = rng.random_range(-brightness..=brightness);
                img.iter_mut().for_each(|p| *p = (*p + delta).clamp(0.0, 1.0));
            }
            Ok(img)
        }
    }
}

/// Mirrors each row of a channel-planar image.
pub fn flip_horizontal(img: &[f64], channels: usize, height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for c in 0..channels {
        for y in 0..height {
            let row = (c * height + y) * width;
            for x in 0..width {
                out[row + x] = img[row + width - 1 - x];
            }
        }
    }
    out
}

/// Crop of the zero-padded image offset by `(dy, dx)`.
fn shift(img: &[f64], channels: usize, height: usize, width: usize, dy: i64, dx: i64) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for c in 0..channels {
        for y in 0..height as i64 {
            let sy = y + dy;
            if sy < 0 || sy >= height as i64 {
                continue;
            }
            for x in 0..width as i64 {
                let sx = x + dx;
                if sx < 0 || sx >= width as i64 {
                    continue;
                }
                out[(c * height + y as usize) * width + x as usize] =
                    img[(c * height + sy as usize) * width + sx as usize];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let x = vec![1.5, -2.0, 0.25];
        assert_eq!(augment(&x, &AugmentSpec::VectorJitter { sigma: 0.0 }, 11).unwrap(), x);
    }

    #[test]
    fn jitter_replays_seeded_noise_stream() {
        let x = [0.5, 1.0, -3.0, 2.0];
        let sigma = 0.3;
        let got = augment(&x, &AugmentSpec::VectorJitter { sigma }, 1234).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for (i, &xi) in x.iter().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            assert_eq!(got[i], xi + sigma * e);
        }
        assert_ne!(got, augment(&x, &AugmentSpec::VectorJitter { sigma }, 1235).unwrap());
    }

    #[test]
    fn flip_is_an_involution() {
        let img: Vec<f64> = (0..2 * 3 * 4).map(|v| v as f64).collect();
        let once = flip_horizontal(&img, 2, 3, 4);
        assert_ne!(once, img);
        assert_eq!(once[0], 3.0);
        assert_eq!(flip_horizontal(&once, 2, 3, 4), img);
    }

    #[test]
    fn null_image_params_are_identity_and_dims_preserved() {
        let img: Vec<f64> = (0..3 * 8 * 8).map(|v| (v % 17) as f64 / 17.0).collect();
        let null = AugmentSpec::ImageBasic {
            channels: 3,
            height: 8,
            width: 8,
            flip_prob: 0.0,
            crop_pad: 0,
            brightness: 0.0,
        };
        assert_eq!(augment(&img, &null, 5).unwrap(), img);
        let full = AugmentSpec::image(3, 8, 8);
        for seed in 0..10 {
            let out = augment(&img, &full, seed).unwrap();
            assert_eq!(out.len(), img.len());
            assert!(out.iter().all(|p| (0.0..=1.0).contains(p)));
            assert_eq!(out, augment(&img, &full, seed).unwrap());
        }
        assert!(augment(&img[1..], &full, 0).is_err());
    }
}
