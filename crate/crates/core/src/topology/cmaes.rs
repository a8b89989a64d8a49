//! (μ/μ_w, λ) CMA-ES with cumulative step-size adaptation, rank-one and
//! rank-μ covariance updates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Objective value reported for diverged simulations.
pub const DIVERGENCE_PENALTY: f64 = 1e9;

/// Generations over which the best value must improve by `tolerance`.
const STALL_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaesSettings {
    pub population: usize,
    pub sigma0: f64,
    pub max_evaluations: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Optional cap on generations; `Some(0)` returns the start point.
    #[serde(default)]
    pub max_generations: Option<usize>,
}

impl CmaesSettings {
    /// Default population `4 + floor(3 ln d)`.
    pub fn default_population(dim: usize) -> usize {
        4 + (3.0 * (dim.max(1) as f64).ln()).floor() as usize
    }

    pub fn for_dimension(dim: usize) -> Self {
        CmaesSettings {
            population: Self::default_population(dim),
            sigma0: 0.3,
            max_evaluations: 3000,
            seed: 0,
            tolerance: 1e-9,
            max_generations: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::config("CMA-ES population must be at least 4"));
        }
        if self.max_evaluations < self.population {
            return Err(Error::config(
                "CMA-ES budget must cover at least one population",
            ));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::config("CMA-ES sigma0 must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub evaluations: usize,
    /// Best value seen so far (non-increasing).
    pub best_f: f64,
    pub generation_best: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaesResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub evaluations: usize,
    pub history: Vec<GenerationRecord>,
}

fn checked(f: f64) -> Result<f64> {
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::NonFinite(format!("objective returned {f}")))
    }
}

/// Minimizes `objective` from `x0`. The start point is evaluated first, so the
/// returned value never exceeds `objective(x0)`. Candidate evaluations run in
/// parallel and are gathered in index order, making runs reproducible for a
/// given seed.
pub fn cmaes_minimize<F>(objective: F, x0: &[f64], settings: &CmaesSettings) -> Result<CmaesResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    settings.validate()?;
    let n = x0.len();
    if n == 0 {
        return Err(Error::config("CMA-ES needs at least one dimension"));
    }
    let lambda = settings.population;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu)
        .map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let nf = n as f64;

    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut mean = DVector::from_column_slice(x0);
    let mut sigma = settings.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut ps = DVector::<f64>::zeros(n);
    let mut pc = DVector::<f64>::zeros(n);

    let mut best_x = x0.to_vec();
    let mut best_f = checked(objective(x0))?;
    let mut evaluations = 1;
    let mut history = Vec::new();
    let max_generations = settings.max_generations.unwrap_or(usize::MAX);

    let mut generation = 0;
    while generation < max_generations && evaluations + lambda <= settings.max_evaluations {
        let eig = SymmetricEigen::new(cov.clone());
        let basis = eig.eigenvectors;
        let scales = eig.eigenvalues.map(|d| d.max(1e-300).sqrt());

        let steps: Vec<DVector<f64>> = (0..lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                &basis * z.component_mul(&scales)
            })
            .collect();
        let candidates: Vec<Vec<f64>> = steps
            .iter()
            .map(|y| (&mean + y * sigma).as_slice().to_vec())
            .collect();
        let values: Vec<f64> = candidates.par_iter().map(|x| objective(x)).collect();
        for &f in &values {
            checked(f)?;
        }
        evaluations += lambda;

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let gen_best = values[order[0]];
        if gen_best < best_f {
            best_f = gen_best;
            best_x = candidates[order[0]].clone();
        }

        let old_mean = mean.clone();
        let mut y_w = DVector::<f64>::zeros(n);
        for (w, &idx) in weights.iter().zip(&order) {
            y_w += &steps[idx] * *w;
        }
        mean = &old_mean + &y_w * sigma;

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let inv_sqrt_y = &basis * (basis.transpose() * &y_w).component_div(&scales);
        ps = &ps * (1.0 - cs) + inv_sqrt_y * (cs * (2.0 - cs) * mueff).sqrt();
        let ps_norm = ps.norm();
        let hsig_denom = (1.0 - (1.0 - cs).powi(2 * (generation as i32 + 1))).sqrt();
        let hsig = ps_norm / hsig_denom / chi_n < 1.4 + 2.0 / (nf + 1.0);
        let hs = if hsig { 1.0 } else { 0.0 };
        pc = &pc * (1.0 - cc) + &y_w * (hs * (cc * (2.0 - cc) * mueff).sqrt());

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, &idx) in weights.iter().zip(&order) {
            let y = &steps[idx];
            rank_mu += y * y.transpose() * *w;
        }
        cov = &cov * (1.0 - c1 - cmu)
            + (&pc * pc.transpose() + &cov * ((1.0 - hs) * cc * (2.0 - cc))) * c1
            + rank_mu * cmu;
        cov = (&cov + cov.transpose()) * 0.5;

        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).exp();
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::NonFinite(format!("CMA-ES step size became {sigma}")));
        }

        history.push(GenerationRecord {
            generation,
            evaluations,
            best_f,
            generation_best: gen_best,
            sigma,
        });
        generation += 1;

        if history.len() > STALL_WINDOW {
            let earlier = history[history.len() - 1 - STALL_WINDOW].best_f;
            if earlier - best_f < settings.tolerance {
                break;
            }
        }
    }

    Ok(CmaesResult {
        best_x,
        best_f,
        evaluations,
        history,
    })
}
