use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PointCloud;
use crate::error::{invalid, Result};

/// Farthest point sampling with a seeded uniformly random first index.
pub fn farthest_point_sample(pc: &PointCloud, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = pc.len();
    check_k(k, n)?;
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..n);
    farthest_point_sample_from(pc, k, start)
}

/// Farthest point sampling from an explicit first index.
pub fn farthest_point_sample_from(pc: &PointCloud, k: usize, start: usize) -> Result<Vec<usize>> {
    farthest_point_sample_rows(&pc.to_matrix(), k, start)
}

/// Farthest point sampling over the rows of an `N×d` matrix. Each step takes
/// the row maximizing the distance to the already chosen set, lowest index
/// first on ties.
pub fn farthest_point_sample_rows(data: &DMatrix<f64>, k: usize, start: usize) -> Result<Vec<usize>> {
    let n = data.nrows();
    check_k(k, n)?;
    if start >= n {
        return Err(invalid(format!("start index {start} out of range for {n} rows")));
    }
    // columns of the transpose are contiguous rows
    let cols = data.transpose();
    let sq = |a: usize, b: usize| -> f64 {
        cols.column(a)
            .iter()
            .zip(cols.column(b).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..k {
        chosen.push(current);
        taken[current] = true;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            min_d[i] = min_d[i].min(sq(i, current));
            if best.is_none_or(|(_, d)| min_d[i] > d) {
                best = Some((i, min_d[i]));
            }
        }
        match best {
            Some((i, _)) => current = i,
            None => break,
        }
    }
    Ok(chosen)
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(invalid(format!("sample count {k} must lie in [1, {n}]")));
    }
    Ok(())
}
