use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, TargetTruth};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const BLOB_RADIUS: f64 = 2.5;
const BLOB_SD: f64 = 0.5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::invalid(format!("noise sd {sd}: {e}")))
}

/// Two interleaving half circles (class 0 upper, class 1 lower) with
/// isotropic Gaussian noise. Returns `n x 2` inputs and labels.
pub fn gen_two_moons(n: usize, noise_sd: f64, rng: &mut impl Rng) -> Result<(Tensor, Vec<usize>)> {
    if n < 4 {
        return Err(Error::invalid(format!("two moons needs at least 4 samples, got {n}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::invalid(format!("noise sd must be finite and >= 0, got {noise_sd}")));
    }
    let noise = gaussian(noise_sd)?;
    let n_upper = n.div_ceil(2);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.random_range(0.0..PI);
        let (x, y, label) = if i < n_upper {
            (t.cos(), t.sin(), 0)
        } else {
            (1.0 - t.cos(), 0.5 - t.sin(), 1)
        };
        data.push(x + noise.sample(rng));
        data.push(y + noise.sample(rng));
        labels.push(label);
    }
    Ok((Tensor::new(vec![n, 2], data)?, labels))
}

fn rotate_about_centroid(x: &mut Tensor, degrees: f64) {
    if degrees.rem_euclid(360.0) == 0.0 {
        return;
    }
    let n = x.rows() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for row in x.data().chunks(2) {
        cx += row[0];
        cy += row[1];
    }
    cx /= n;
    cy /= n;
    let (s, c) = degrees.to_radians().sin_cos();
    for row in x.data_mut().chunks_mut(2) {
        let (dx, dy) = (row[0] - cx, row[1] - cy);
        row[0] = cx + c * dx - s * dy;
        row[1] = cy + s * dx + c * dy;
    }
}

/// Source: two moons. Target: an independent draw from the same generator,
/// rotated counter-clockwise by `rotation_deg` about its centroid.
pub fn gen_two_moons_shift(
    n_per_domain: usize,
    rotation_deg: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, TargetTruth)> {
    if !rotation_deg.is_finite() {
        return Err(Error::invalid("rotation must be finite"));
    }
    let (xs, ys) = gen_two_moons(n_per_domain, noise_sd, &mut stream(seed, 1))?;
    let (mut xt, yt) = gen_two_moons(n_per_domain, noise_sd, &mut stream(seed, 2))?;
    rotate_about_centroid(&mut xt, rotation_deg);
    Ok((
        Dataset::source(xs, ys, 2)?,
        Dataset::target(xt, 2)?,
        TargetTruth::new(yt),
    ))
}

/// `num_classes` isotropic Gaussian blobs whose means sit evenly on a circle
/// (random phase per seed). Target samples are `scale * z + mean_shift`
/// for fresh draws `z` from the source distribution.
pub fn gen_gaussian_blobs_shift(
    num_classes: usize,
    n_per_class: usize,
    mean_shift: &[f64],
    scale: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, TargetTruth)> {
    if num_classes < 2 {
        return Err(Error::invalid(format!("blobs need at least 2 classes, got {num_classes}")));
    }
    if n_per_class == 0 {
        return Err(Error::invalid("blobs need at least one sample per class"));
    }
    if mean_shift.len() != 2 || !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid("mean_shift must have 2 entries and scale must be positive"));
    }
    let phase = stream(seed, 0).random_range(0.0..2.0 * PI);
    let means: Vec<(f64, f64)> = (0..num_classes)
        .map(|k| {
            let a = phase + 2.0 * PI * k as f64 / num_classes as f64;
            (BLOB_RADIUS * a.cos(), BLOB_RADIUS * a.sin())
        })
        .collect();
    let noise = gaussian(BLOB_SD)?;
    let draw = |rng: &mut ChaCha8Rng| {
        let mut data = Vec::with_capacity(2 * num_classes * n_per_class);
        let mut labels = Vec::with_capacity(num_classes * n_per_class);
        for (k, &(mx, my)) in means.iter().enumerate() {
            for _ in 0..n_per_class {
                data.push(mx + noise.sample(rng));
                data.push(my + noise.sample(rng));
                labels.push(k);
            }
        }
        (data, labels)
    };
    let (src, ys) = draw(&mut stream(seed, 1));
    let (mut tgt, yt) = draw(&mut stream(seed, 2));
    for row in tgt.chunks_mut(2) {
        row[0] = scale * row[0] + mean_shift[0];
        row[1] = scale * row[1] + mean_shift[1];
    }
    let n = num_classes * n_per_class;
    Ok((
        Dataset::source(Tensor::new(vec![n, 2], src)?, ys, num_classes)?,
        Dataset::target(Tensor::new(vec![n, 2], tgt)?, num_classes)?,
        TargetTruth::new(yt),
    ))
}
