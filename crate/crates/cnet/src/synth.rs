//! Deterministic synthetic datasets: an XOR problem that no linear model can
//! solve, a rotating-boundary drift pair for incremental-learning experiments,
//! and a CSV generator for end-to-end pipeline runs.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datapipe::Dataset;
use crate::error::{Error, Result};

/// Two-feature XOR: points cluster around (+-1, +-1) with gaussian jitter and
/// the label is 1 when the quadrant signs differ.
pub fn xor_dataset(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if noise_sd < 0.0 {
        return Err(Error::InvalidArgument("noise_sd must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let sx: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let sy: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let jitter = |r: &mut ChaCha8Rng| {
            if noise_sd == 0.0 {
                0.0
            } else {
                // Box-Muller free: sum of uniforms is close enough and cheap,
                // but exactness matters more than shape here, so use the RNG's
                // gaussian-ish via central limit of 4 uniforms scaled.
                let s: f64 = (0..4).map(|_| r.gen_range(-1.0..1.0)).sum();
                s * noise_sd * 0.5_f64.sqrt()
            }
        };
        rows.push(vec![sx + jitter(&mut rng), sy + jitter(&mut rng)]);
        y.push(if sx * sy < 0.0 { 1.0 } else { 0.0 });
    }
    Dataset::from_rows(vec!["x0".into(), "x1".into()], rows, y, "synthetic xor")
}

/// Two-feature band classifier rotated to `angle_degrees`: a point is
/// positive when its projection onto the band direction falls inside a
/// stripe through the origin, sized so roughly `positive_fraction` of points
/// are positive. The stripe needs at least two hidden units to separate, and
/// rotating it between chunks models a drifting decision boundary. Feature
/// jitter is added after labeling so the classes overlap slightly.
pub fn drift_dataset(
    n: usize,
    angle_degrees: f64,
    positive_fraction: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::InvalidArgument("drift_dataset needs n >= 4".into()));
    }
    if !(0.0..1.0).contains(&positive_fraction) || positive_fraction == 0.0 {
        return Err(Error::InvalidArgument(
            "positive_fraction must be in (0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = angle_degrees.to_radians();
    let (dir_x, dir_y) = (theta.cos(), theta.sin());
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
        .collect();
    let mut scores: Vec<f64> = rows
        .iter()
        .map(|r| (dir_x * r[0] + dir_y * r[1]).abs())
        .collect();
    // empirical quantile gives the class balance regardless of geometry
    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cut_idx = ((n as f64) * positive_fraction) as usize;
    let cut = sorted[cut_idx.min(n - 1)];
    let y: Vec<f64> = scores
        .drain(..)
        .map(|s| if s < cut { 1.0 } else { 0.0 })
        .collect();
    if noise_sd > 0.0 {
        for row in &mut rows {
            for v in row.iter_mut() {
                let s: f64 = (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum();
                *v += s * noise_sd * 0.5_f64.sqrt();
            }
        }
    }
    Dataset::from_rows(
        vec!["x0".into(), "x1".into()],
        rows,
        y,
        format!("synthetic drift at {angle_degrees} degrees"),
    )
}

/// Writes a raw CSV resembling a transaction log: a monotonically increasing
/// time column, two feature columns, a class column, and a handful of exact
/// duplicate rows so deduplication has work to do. Rows in the first half use
/// one decision boundary, rows in the second half a rotated one.
pub fn write_drift_csv(path: impl AsRef<Path>, n_per_chunk: usize, seed: u64) -> Result<()> {
    let first = drift_dataset(n_per_chunk, 0.0, 0.25, 0.3, seed)?;
    let second = drift_dataset(n_per_chunk, 30.0, 0.25, 0.3, seed ^ 0x9e37_79b9)?;
    let mut out = String::from("time,x0,x1,class\n");
    let mut t = 0usize;
    let push_row = |out: &mut String, t: usize, row: &[f64], label: f64| {
        out.push_str(&format!("{t},{},{},{}\n", row[0], row[1], label as i64));
    };
    for ds in [&first, &second] {
        for i in 0..ds.n() {
            push_row(&mut out, t, ds.row(i), ds.label(i));
            t += 1;
            // every 97th row repeats verbatim (same time, same values)
            if i % 97 == 96 {
                push_row(&mut out, t - 1, ds.row(i), ds.label(i));
            }
        }
    }
    fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref().display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_labels_follow_quadrants() {
        let ds = xor_dataset(500, 0.0, 1).unwrap();
        assert_eq!(ds.n(), 500);
        for i in 0..ds.n() {
            let expected = if ds.row(i)[0] * ds.row(i)[1] < 0.0 { 1.0 } else { 0.0 };
            assert_eq!(ds.label(i), expected);
        }
    }

    #[test]
    fn xor_is_not_linearly_separable() {
        // no single line separates the noiseless XOR clusters: for every
        // labeling direction there are misclassified points
        let ds = xor_dataset(400, 0.1, 2).unwrap();
        let mut best = 0.0f64;
        for k in 0..360 {
            let a = (k as f64).to_radians();
            let (c, s) = (a.cos(), a.sin());
            for bias in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                let correct = (0..ds.n())
                    .filter(|&i| {
                        let side = c * ds.row(i)[0] + s * ds.row(i)[1] + bias > 0.0;
                        side == (ds.label(i) == 1.0)
                    })
                    .count();
                best = best.max(correct as f64 / ds.n() as f64);
            }
        }
        assert!(best < 0.8, "a linear separator reached {best}");
    }

    #[test]
    fn xor_is_deterministic() {
        let a = xor_dataset(100, 0.1, 7).unwrap();
        let b = xor_dataset(100, 0.1, 7).unwrap();
        for i in 0..a.n() {
            assert_eq!(a.row(i), b.row(i));
            assert_eq!(a.label(i), b.label(i));
        }
    }

    #[test]
    fn drift_hits_the_requested_class_balance() {
        let ds = drift_dataset(10_000, 30.0, 0.25, 0.0, 3).unwrap();
        let (_, pos) = ds.class_counts();
        let frac = pos as f64 / ds.n() as f64;
        assert!((frac - 0.25).abs() < 0.01, "positive fraction {frac}");
    }

    #[test]
    fn noiseless_drift_is_a_clean_band() {
        let ds = drift_dataset(2_000, 45.0, 0.3, 0.0, 4).unwrap();
        let (c, s) = (45.0f64.to_radians().cos(), 45.0f64.to_radians().sin());
        // every positive sits strictly closer to the band axis than every
        // negative
        let mut max_pos = f64::NEG_INFINITY;
        let mut min_neg = f64::INFINITY;
        for i in 0..ds.n() {
            let score = (c * ds.row(i)[0] + s * ds.row(i)[1]).abs();
            if ds.label(i) == 1.0 {
                max_pos = max_pos.max(score);
            } else {
                min_neg = min_neg.min(score);
            }
        }
        assert!(max_pos < min_neg);
    }

    #[test]
    fn csv_has_duplicates_and_both_chunks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        write_drift_csv(&path, 300, 5).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "time,x0,x1,class");
        // 300 per chunk plus 3 duplicates per chunk (rows 96, 193, 290)
        assert_eq!(lines.len(), 1 + 2 * 303);
        let mut seen = std::collections::HashSet::new();
        let dup_count = lines[1..].iter().filter(|l| !seen.insert(**l)).count();
        assert_eq!(dup_count, 6);
    }
}
