//! Entropy-regularized optimal transport solved with log-domain
//! Sinkhorn-Knopp iterations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornParams {
    /// Entropic regularization strength.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Stop once the L1 marginal violation drops to this value.
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

/// Nonnegative coupling between two discrete distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    #[serde(with = "crate::serde_rows")]
    gamma: DMatrix<f64>,
}

impl TransportPlan {
    pub fn new(gamma: DMatrix<f64>) -> Result<Self> {
        if gamma.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("transport plan entries must be finite and nonnegative"));
        }
        Ok(Self { gamma })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.gamma
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.gamma.row_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.gamma.column_iter().map(|c| c.sum()).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.gamma.sum()
    }

    /// L1 distance of the row and column sums from the given marginals.
    pub fn marginal_violation(&self, a: &[f64], b: &[f64]) -> f64 {
        let rows: f64 = self.row_sums().iter().zip(a).map(|(s, t)| (s - t).abs()).sum();
        let cols: f64 = self.col_sums().iter().zip(b).map(|(s, t)| (s - t).abs()).sum();
        rows + cols
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornOutcome {
    pub plan: TransportPlan,
    /// Entry-wise logarithm of the plan; finite wherever the plan underflows.
    pub log_plan: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub marginal_error: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Solves `min ⟨Γ, C⟩ − ε H(Γ)` subject to `Γ1 = a`, `Γᵀ1 = b`.
///
/// Zero-mass marginal entries produce zero rows/columns. When `max_iter` is
/// exhausted the best plan seen is returned with `converged = false`.
pub fn sinkhorn(
    cost: &DMatrix<f64>,
    a: &[f64],
    b: &[f64],
    params: &SinkhornParams,
) -> Result<SinkhornOutcome> {
    let (n, m) = cost.shape();
    if a.len() != n || b.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "cost is {n}x{m} but marginals have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if n == 0 || m == 0 {
        return Err(invalid("empty transport problem"));
    }
    if !(params.epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be > 0, got {}", params.epsilon)));
    }
    if a.iter().chain(b).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("marginals must be finite and nonnegative"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(invalid("cost matrix has non-finite entries"));
    }
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    if sa <= 0.0 || sb <= 0.0 || (sa - sb).abs() > 1e-9 * sa.max(sb) {
        return Err(Error::MarginalMismatch {
            source_mass: sa,
            target_mass: sb,
        });
    }

    // row-major −C/ε
    let kernel: Vec<f64> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| -cost[(i, j)] / params.epsilon)
        .collect();
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut col_max = vec![0.0; m];
    let mut col_acc = vec![0.0; m];

    let row_lse = |g: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| log_sum_exp(kernel[i * m..(i + 1) * m].iter().zip(g).map(|(k, gj)| k + gj)))
            .collect()
    };
    let mut r = row_lse(&g);

    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..params.max_iter.max(1) {
        iterations = it + 1;
        for i in 0..n {
            f[i] = if a[i] == 0.0 { f64::NEG_INFINITY } else { log_a[i] - r[i] };
        }
        // column log-sum-exp in two row-major passes
        col_max.fill(f64::NEG_INFINITY);
        for i in 0..n {
            if f[i] == f64::NEG_INFINITY {
                continue;
            }
            let row = &kernel[i * m..(i + 1) * m];
            for j in 0..m {
                col_max[j] = col_max[j].max(row[j] + f[i]);
            }
        }
        col_acc.fill(0.0);
        for i in 0..n {
            if f[i] == f64::NEG_INFINITY {
                continue;
            }
            let row = &kernel[i * m..(i + 1) * m];
            for j in 0..m {
                col_acc[j] += (row[j] + f[i] - col_max[j]).exp();
            }
        }
        for j in 0..m {
            g[j] = if b[j] == 0.0 {
                f64::NEG_INFINITY
            } else {
                log_b[j] - (col_max[j] + col_acc[j].ln())
            };
        }
        // columns now match exactly; the row sums double as the next row update
        r = row_lse(&g);
        let err: f64 = (0..n)
            .map(|i| {
                let s = if f[i] == f64::NEG_INFINITY { 0.0 } else { (f[i] + r[i]).exp() };
                (s - a[i]).abs()
            })
            .sum();
        if best.as_ref().is_none_or(|(e, _, _)| err < *e) {
            best = Some((err, f.clone(), g.clone()));
        }
        if err <= params.tol {
            converged = true;
            break;
        }
    }

    let (_, f, g) = best.expect("at least one iteration runs");
    let log_plan = DMatrix::from_fn(n, m, |i, j| f[i] + g[j] + kernel[i * m + j]);
    let plan = TransportPlan {
        gamma: log_plan.map(|v| v.exp()),
    };
    let marginal_error = plan.marginal_violation(a, b);
    Ok(SinkhornOutcome {
        plan,
        log_plan,
        converged,
        iterations,
        marginal_error,
    })
}
