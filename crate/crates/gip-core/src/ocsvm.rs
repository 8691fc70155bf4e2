//! One-class SVM (ν formulation) on scalar features with an RBF kernel.
//!
//! The dual is
//!
//! ```text
//! minimize   ½ Σᵢ Σⱼ αᵢ αⱼ k(xᵢ, xⱼ)
//! subject to 0 ≤ αᵢ ≤ 1/(ν n),  Σᵢ αᵢ = 1
//! ```
//!
//! with `k(x, y) = exp(-γ (x - y)²)` and decision `f(x) = Σᵢ αᵢ k(xᵢ, x) - ρ`.
//!
//! Identical samples have identical kernel rows, so the objective only depends
//! on the mass each distinct value receives. The solver therefore works on one
//! variable per distinct value, bounded by `multiplicity / (ν n)`, and spreads
//! the optimal mass evenly over the duplicates afterwards. Both problems have
//! the same optimal objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision values within this band of zero count as on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-6;

const KKT_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 1_000_000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gamma {
    /// `1 / max(var(samples), 1e-12)`.
    Scale,
    Value(f64),
}

impl Gamma {
    pub fn resolve(self, samples: &[f64]) -> f64 {
        match self {
            Gamma::Value(g) => g,
            Gamma::Scale => {
                let n = samples.len() as f64;
                let mean = samples.iter().sum::<f64>() / n;
                let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                1.0 / var.max(1e-12)
            }
        }
    }
}

impl std::str::FromStr for Gamma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "scale" {
            return Ok(Gamma::Scale);
        }
        match s.parse::<f64>() {
            Ok(g) if g > 0.0 && g.is_finite() => Ok(Gamma::Value(g)),
            _ => Err(Error::param("gamma", format!("expected `scale` or a positive number, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    /// Training samples, in input order.
    pub samples: Vec<f64>,
    /// Dual coefficients, one per training sample.
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub nu: f64,
    // distinct sample values and their aggregated coefficients (non-zero only)
    support: Vec<(f64, f64)>,
    objective: f64,
}

impl OcsvmModel {
    /// Upper bound on each coefficient, `1 / (ν n)`.
    pub fn upper_bound(&self) -> f64 {
        1.0 / (self.nu * self.samples.len() as f64)
    }

    /// Dual objective `½ αᵀ K α` at the solution.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Distinct support values with their aggregated coefficient.
    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn kernel(&self, x: f64, y: f64) -> f64 {
        (-self.gamma * (x - y).powi(2)).exp()
    }

    pub fn decision(&self, x: f64) -> f64 {
        decision(self, x)
    }

    /// `f(x) ≥ 0`, with decision values within [`BOUNDARY_TOL`] of zero
    /// treated as the boundary.
    pub fn is_inlier(&self, x: f64) -> bool {
        self.decision(x) >= -BOUNDARY_TOL
    }

    /// Fraction of training samples strictly outside the boundary.
    pub fn outlier_fraction(&self) -> f64 {
        let out = self.samples.iter().filter(|&&x| !self.is_inlier(x)).count();
        out as f64 / self.samples.len() as f64
    }
}

pub fn decision(model: &OcsvmModel, x: f64) -> f64 {
    model.support.iter().map(|&(s, a)| a * model.kernel(s, x)).sum::<f64>() - model.rho
}

fn validate_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::param("nu", format!("must lie in (0, 1], got {nu}")));
    }
    Ok(())
}

pub fn train_ocsvm(samples: &[f64], nu: f64, gamma: Gamma) -> Result<OcsvmModel> {
    if samples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    validate_nu(nu)?;
    if let Some(&bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::param("samples", format!("non-finite sample {bad}")));
    }
    let gamma_value = gamma.resolve(samples);
    if !(gamma_value > 0.0 && gamma_value.is_finite()) {
        return Err(Error::param("gamma", format!("must be positive, got {gamma_value}")));
    }

    let n = samples.len();
    let mut values: Vec<f64> = samples.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mult: Vec<usize> = {
        let mut m = vec![0usize; values.len()];
        for x in samples {
            let k = values.binary_search_by(|v| v.total_cmp(x)).expect("value present");
            m[k] += 1;
        }
        m
    };
    let c = 1.0 / (nu * n as f64);
    let bounds: Vec<f64> = mult.iter().map(|&m| m as f64 * c).collect();
    let kernel: Vec<Vec<f64>> =
        values.iter().map(|&x| values.iter().map(|&y| (-gamma_value * (x - y).powi(2)).exp()).collect()).collect();

    let beta = solve_dual(&kernel, &bounds);
    let grad: Vec<f64> = kernel.iter().map(|row| row.iter().zip(&beta).map(|(k, b)| k * b).sum()).collect();
    let rho = offset(&beta, &bounds, &grad);
    let objective = 0.5 * beta.iter().zip(&grad).map(|(b, g)| b * g).sum::<f64>();

    let alphas = samples
        .iter()
        .map(|x| {
            let k = values.binary_search_by(|v| v.total_cmp(x)).expect("value present");
            beta[k] / mult[k] as f64
        })
        .collect();
    let support = values.iter().zip(&beta).filter(|(_, &b)| b > 0.0).map(|(&v, &b)| (v, b)).collect();
    Ok(OcsvmModel { samples: samples.to_vec(), alphas, rho, gamma: gamma_value, nu, support, objective })
}

/// Pairwise (SMO) descent with maximal-violating-pair selection on
/// `min ½ βᵀKβ, 0 ≤ β ≤ u, Σβ = 1`.
fn solve_dual(kernel: &[Vec<f64>], upper: &[f64]) -> Vec<f64> {
    let m = upper.len();
    // Feasible start: fill variables up to their bound in order.
    let mut beta = vec![0.0; m];
    let mut left = 1.0f64;
    for (b, &u) in beta.iter_mut().zip(upper) {
        let take = u.min(left);
        *b = take;
        left -= take;
        if left <= 0.0 {
            break;
        }
    }
    if left > 0.0 {
        // Σu = 1/ν ≥ 1, so only rounding can leave a remainder.
        let last = beta.len() - 1;
        beta[last] += left;
    }
    let mut grad: Vec<f64> = kernel.iter().map(|row| row.iter().zip(&beta).map(|(k, b)| k * b).sum()).collect();

    for _ in 0..MAX_SWEEPS {
        // i: may grow, smallest gradient; j: may shrink, largest gradient.
        let mut i = None;
        let mut j = None;
        for k in 0..m {
            if beta[k] < upper[k] && i.is_none_or(|i: usize| grad[k] < grad[i]) {
                i = Some(k);
            }
            if beta[k] > 0.0 && j.is_none_or(|j: usize| grad[k] > grad[j]) {
                j = Some(k);
            }
        }
        let (Some(i), Some(j)) = (i, j) else { break };
        if i == j || grad[j] - grad[i] <= KKT_TOL {
            break;
        }
        let curvature = (kernel[i][i] + kernel[j][j] - 2.0 * kernel[i][j]).max(TAU);
        let step = ((grad[j] - grad[i]) / curvature).min(upper[i] - beta[i]).min(beta[j]);
        if step <= 0.0 {
            break;
        }
        beta[i] += step;
        beta[j] -= step;
        // Snap to the bounds so bound tests stay exact.
        if upper[i] - beta[i] <= 1e-15 * upper[i] {
            beta[i] = upper[i];
        }
        if beta[j] <= 1e-15 {
            beta[j] = 0.0;
        }
        for k in 0..m {
            grad[k] += step * (kernel[k][i] - kernel[k][j]);
        }
    }
    beta
}

/// `ρ` as the mean gradient over free variables; without free variables, the
/// midpoint of the KKT interval, or its lower end when every variable is at
/// its upper bound.
fn offset(beta: &[f64], upper: &[f64], grad: &[f64]) -> f64 {
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut at_upper = f64::NEG_INFINITY;
    let mut at_lower = f64::INFINITY;
    for k in 0..beta.len() {
        if beta[k] >= upper[k] {
            at_upper = at_upper.max(grad[k]);
        } else if beta[k] <= 0.0 {
            at_lower = at_lower.min(grad[k]);
        } else {
            free_sum += grad[k];
            free += 1;
        }
    }
    if free > 0 {
        free_sum / free as f64
    } else if at_lower.is_finite() {
        (at_upper + at_lower) / 2.0
    } else {
        at_upper
    }
}
