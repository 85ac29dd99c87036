use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PointCloudSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeClass {
    Sphere,
    Cube,
    Pyramid,
}

pub const SHAPE_CLASSES: [ShapeClass; 3] = [ShapeClass::Sphere, ShapeClass::Cube, ShapeClass::Pyramid];

/// Sphere radius at unit scale.
pub const SPHERE_RADIUS: f64 = 0.8;
/// Cube half side, pyramid base half side and pyramid half height at unit
/// scale. Rotated corners stay inside `[-1, 1]^3`.
pub const HALF_EXTENT: f64 = 0.7;
/// Scale jitter range.
pub const SCALE_RANGE: (f64, f64) = (0.75, 1.0);

fn triangle(rng: &mut impl Rng, a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let (r1, r2): (f64, f64) = (rng.random(), rng.random());
    let s = r1.sqrt();
    let (u, v, w) = (1.0 - s, s * (1.0 - r2), s * r2);
    [0, 1, 2].map(|i| u * a[i] + v * b[i] + w * c[i])
}

/// Uniform point on the surface of the unit-scale shape.
fn surface_point(class: ShapeClass, rng: &mut impl Rng) -> [f64; 3] {
    let h = HALF_EXTENT;
    match class {
        ShapeClass::Sphere => loop {
            let v: [f64; 3] = [0; 3].map(|_| rng.random_range(-1.0..1.0));
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-3 && n <= 1.0 {
                break v.map(|x| x / n * SPHERE_RADIUS);
            }
        },
        ShapeClass::Cube => {
            let face = rng.random_range(0..6);
            let (axis, sign) = (face / 2, if face % 2 == 0 { 1.0 } else { -1.0 });
            let mut p = [0; 3].map(|_| rng.random_range(-h..h));
            p[axis] = sign * h;
            p
        }
        ShapeClass::Pyramid => {
            // base 4h², each side face h²·√5
            let side = h * h * 5f64.sqrt();
            let total = 4.0 * h * h + 4.0 * side;
            let r = rng.random_range(0.0..total);
            if r < 4.0 * h * h {
                [rng.random_range(-h..h), rng.random_range(-h..h), -h]
            } else {
                let k = (((r - 4.0 * h * h) / side) as usize).min(3);
                let corners = [[h, h], [-h, h], [-h, -h], [h, -h]];
                let (c0, c1) = (corners[k], corners[(k + 1) % 4]);
                triangle(rng, [0.0, 0.0, h], [c0[0], c0[1], -h], [c1[0], c1[1], -h])
            }
        }
    }
}

/// `n` clouds of `points_per_cloud` surface samples, cycling through the
/// classes (label `i % 3`). Each cloud gets a uniform rotation about the
/// vertical axis and a uniform scale from [`SCALE_RANGE`]. Features are the
/// positions.
pub fn synth_shapes(n: usize, points_per_cloud: usize, seed: u64) -> Result<Vec<PointCloudSample>> {
    if points_per_cloud < 32 {
        return Err(Error::config(format!("points_per_cloud must be >= 32, got {points_per_cloud}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| {
            let label = i % SHAPE_CLASSES.len();
            let theta = rng.random_range(0.0..2.0 * PI);
            let scale = rng.random_range(SCALE_RANGE.0..SCALE_RANGE.1);
            let (s, c) = theta.sin_cos();
            let mut pos = Vec::with_capacity(points_per_cloud * 3);
            for _ in 0..points_per_cloud {
                let p = surface_point(SHAPE_CLASSES[label], &mut rng);
                pos.extend([scale * (c * p[0] - s * p[1]), scale * (s * p[0] + c * p[1]), scale * p[2]]);
            }
            let positions = Tensor::new(&[points_per_cloud, 3], pos).expect("cloud shape");
            PointCloudSample {
                features: positions.clone(),
                positions,
                label,
            }
        })
        .collect())
}
