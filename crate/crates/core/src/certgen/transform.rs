//! Input transforms acting on a point's flattened numeric features.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::certificate::AppliedTransform;
use crate::data::DataPoint;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// Uniformly random reordering of all numeric slots.
    Permutation,
    /// Rotation of the slot pair `axes` by an angle drawn uniformly from
    /// `[min_angle, max_angle]` (radians).
    Rotation2d {
        #[serde(default)]
        min_angle: f64,
        #[serde(default = "full_turn")]
        max_angle: f64,
        #[serde(default = "first_pair")]
        axes: [usize; 2],
    },
    /// Independent `N(0, scale^2)` noise on every slot.
    AdditiveNoise { scale: f64 },
    /// Zero out one slot.
    FeatureDrop { index: usize },
}

fn full_turn() -> f64 {
    2.0 * PI
}

fn first_pair() -> [usize; 2] {
    [0, 1]
}

/// A transform family member plus the seed for its parameter sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    #[serde(flatten)]
    pub transform: Transform,
    #[serde(default)]
    pub seed: u64,
}

impl TransformSpec {
    pub fn new(transform: Transform, seed: u64) -> Self {
        Self { transform, seed }
    }
}

impl Transform {
    pub fn label(&self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Permutation => "permutation",
            Transform::Rotation2d { .. } => "rotation_2d",
            Transform::AdditiveNoise { .. } => "additive_noise",
            Transform::FeatureDrop { .. } => "feature_drop",
        }
    }

    /// Check the transform fits a flattened width of `width` slots.
    pub fn check_width(&self, width: usize) -> Result<()> {
        let fits = match self {
            Transform::Rotation2d { axes, .. } => axes[0] < width && axes[1] < width && axes[0] != axes[1],
            Transform::FeatureDrop { index } => *index < width,
            _ => true,
        };
        if fits {
            Ok(())
        } else {
            Err(Error::Precondition(format!("{} does not apply to {width} numeric features", self.label())))
        }
    }

    /// Draw concrete parameters for a point with `width` numeric slots.
    pub fn sample(&self, rng: &mut Rng, width: usize) -> Result<AppliedTransform> {
        self.check_width(width)?;
        Ok(match self {
            Transform::Identity => AppliedTransform::Identity,
            Transform::Permutation => {
                let mut order: Vec<usize> = (0..width).collect();
                order.shuffle(rng);
                AppliedTransform::Permutation { order }
            }
            Transform::Rotation2d { min_angle, max_angle, axes } => {
                let u: f64 = rng.random();
                AppliedTransform::Rotation2d { angle: min_angle + u * (max_angle - min_angle), axes: *axes }
            }
            Transform::AdditiveNoise { scale } => AppliedTransform::AdditiveNoise {
                noise: (0..width).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect(),
            },
            Transform::FeatureDrop { index } => AppliedTransform::FeatureDrop { index: *index },
        })
    }

    /// A random perturbation of `current`, for greedy local search.
    pub fn neighbor(&self, current: &AppliedTransform, rng: &mut Rng, width: usize) -> Result<AppliedTransform> {
        Ok(match (self, current) {
            (Transform::Permutation, AppliedTransform::Permutation { order }) if width >= 2 => {
                let mut order = order.clone();
                let i = rng.random_range(0..width);
                let j = (i + rng.random_range(1..width)) % width;
                order.swap(i, j);
                AppliedTransform::Permutation { order }
            }
            (Transform::Rotation2d { min_angle, max_angle, .. }, AppliedTransform::Rotation2d { angle, axes }) => {
                let step = 0.25 * (max_angle - min_angle) * rng.sample::<f64, _>(StandardNormal);
                AppliedTransform::Rotation2d { angle: (angle + step).clamp(*min_angle, *max_angle), axes: *axes }
            }
            (Transform::AdditiveNoise { scale }, AppliedTransform::AdditiveNoise { noise }) => {
                AppliedTransform::AdditiveNoise {
                    noise: noise.iter().map(|n| n + 0.5 * scale * rng.sample::<f64, _>(StandardNormal)).collect(),
                }
            }
            _ => self.sample(rng, width)?,
        })
    }
}

impl AppliedTransform {
    pub fn apply(&self, point: &DataPoint) -> Result<DataPoint> {
        let x = point.flat_numeric();
        let width = x.len();
        let y = match self {
            AppliedTransform::Identity => x,
            AppliedTransform::Permutation { order } => {
                if order.len() != width {
                    return Err(Error::ShapeMismatch(format!("permutation of {} slots on {width}", order.len())));
                }
                order.iter().map(|&i| x[i]).collect()
            }
            AppliedTransform::Rotation2d { angle, axes: [i, j] } => {
                if *i >= width || *j >= width {
                    return Err(Error::ShapeMismatch(format!("rotation axes ({i}, {j}) on {width} slots")));
                }
                let (s, c) = angle.sin_cos();
                let mut y = x.clone();
                y[*i] = c * x[*i] - s * x[*j];
                y[*j] = s * x[*i] + c * x[*j];
                y
            }
            AppliedTransform::AdditiveNoise { noise } => {
                if noise.len() != width {
                    return Err(Error::ShapeMismatch(format!("noise of {} slots on {width}", noise.len())));
                }
                x.iter().zip(noise).map(|(a, b)| a + b).collect()
            }
            AppliedTransform::FeatureDrop { index } => {
                let mut y = x;
                *y.get_mut(*index)
                    .ok_or_else(|| Error::ShapeMismatch(format!("drop index {index} on {width} slots")))? = 0.0;
                y
            }
        };
        point.with_flat_numeric(&y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    #[test]
    fn identity_maps_points_to_themselves() {
        let p = DataPoint::from_numbers(&[1.5, -2.0, 3.0]);
        let t = Transform::Identity.sample(&mut rng_from_seed(0), 3).unwrap();
        assert_eq!(t.apply(&p).unwrap(), p);
    }

    #[test]
    fn quarter_rotation_swaps_axes() {
        let p = DataPoint::from_numbers(&[1.0, 0.0]);
        let q = AppliedTransform::Rotation2d { angle: PI / 2.0, axes: [0, 1] }.apply(&p).unwrap();
        let v = q.flat_numeric();
        assert!(v[0].abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn width_is_checked() {
        let mut rng = rng_from_seed(0);
        assert!(Transform::FeatureDrop { index: 3 }.sample(&mut rng, 2).is_err());
        assert!(Transform::Rotation2d { min_angle: 0.0, max_angle: 1.0, axes: [0, 2] }.sample(&mut rng, 2).is_err());
    }

    #[test]
    fn spec_serializes_with_name_tag() {
        let spec = TransformSpec::new(Transform::AdditiveNoise { scale: 0.1 }, 4);
        let v = serde_json::to_value(&spec).unwrap();
        assert_eq!(v["name"], "additive_noise");
        assert_eq!(v["seed"], 4);
        let back: TransformSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, spec);
        let perm: TransformSpec = serde_json::from_str(r#"{"name":"permutation"}"#).unwrap();
        assert_eq!(perm.transform, Transform::Permutation);
    }

    proptest! {
        #[test]
        fn permutations_preserve_the_multiset(xs in proptest::collection::vec(-1e6f64..1e6, 1..8), seed in any::<u64>()) {
            let p = DataPoint::from_numbers(&xs);
            let t = Transform::Permutation.sample(&mut rng_from_seed(seed), xs.len()).unwrap();
            let mut a = t.apply(&p).unwrap().flat_numeric();
            let mut b = xs.clone();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }
}
