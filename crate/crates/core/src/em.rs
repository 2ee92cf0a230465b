//! Joint estimation of the decision model and the verbal map by EM.
//!
//! Each observation carries a latent logit `Z` with two Gaussian anchors: the
//! model logit `θᵀx` (variance σ_θ²) and the verbal logit `logit φ(V)`
//! (variance σ_φ²). The E-step is the precision-weighted posterior of `Z`;
//! the M-step refits θ by proximal gradient on an elastic-net and
//! margin-ranking penalized least-squares objective, then moves each φ level
//! to the sigmoid of its mean posterior logit, clipped to its window.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::editing::EditRecord;
use crate::error::{Error, Result};
use crate::factor::{
    expand_features, feature_len, sigmoid, DecisionParams, FactorConfiguration, FactorSet,
};
use crate::probing::BehavioralDataset;
use crate::verbal::{enforce_monotone, MonotoneBounds, VerbalLevel, VerbalMap, LEVEL_COUNT};

const INIT_RIDGE: f64 = 1e-6;
const MAX_HALVINGS: usize = 60;
/// Slack allowed when checking that the tracked objective never decreases.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitAblation {
    #[default]
    None,
    /// Keep the canonical verbal map fixed; only θ is estimated.
    NoEm,
    /// Force every interaction to zero.
    NoInter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub sigma_theta_sq: f64,
    pub sigma_phi_sq: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_mr: f64,
    pub margin_eps: f64,
    pub learning_rate: f64,
    pub inner_steps: usize,
    pub convergence_tol: f64,
    pub max_iters: usize,
    pub bounds: MonotoneBounds,
    pub seed: u64,
    #[serde(default)]
    pub ablation: FitAblation,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            sigma_theta_sq: 1.0,
            sigma_phi_sq: 1.0,
            lambda1: 0.01,
            lambda2: 0.001,
            lambda_mr: 0.1,
            margin_eps: 0.05,
            learning_rate: 0.05,
            inner_steps: 200,
            convergence_tol: 1e-4,
            max_iters: 100,
            bounds: MonotoneBounds::default(),
            seed: 0,
            ablation: FitAblation::None,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_theta_sq", self.sigma_theta_sq),
            ("sigma_phi_sq", self.sigma_phi_sq),
            ("margin_eps", self.margin_eps),
            ("learning_rate", self.learning_rate),
            ("convergence_tol", self.convergence_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda_mr", self.lambda_mr),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        self.bounds.validate()
    }

    /// Weight of the model anchor in the posterior mean.
    pub fn model_weight(&self) -> f64 {
        self.sigma_phi_sq / (self.sigma_theta_sq + self.sigma_phi_sq)
    }

    pub fn posterior_variance(&self) -> f64 {
        self.sigma_theta_sq * self.sigma_phi_sq / (self.sigma_theta_sq + self.sigma_phi_sq)
    }
}

/// Posterior of the latent logits: one mean per observation, shared variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub means: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Tracked objective after initialisation (index 0) and after each iteration.
    pub q_values: Vec<f64>,
    pub final_marginal_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// First iteration whose objective dropped by more than [`MONOTONE_SLACK`].
    pub monotone_violation: Option<usize>,
    pub design_rank: usize,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub factor_set: FactorSet,
    pub params: DecisionParams,
    pub map: VerbalMap,
    pub em_config: EmConfig,
    pub diagnostics: FitDiagnostics,
    pub dataset_hash: String,
    /// Applied edits, oldest first.
    #[serde(default)]
    pub edits: Vec<EditRecord>,
}

impl TrainedModel {
    pub fn n(&self) -> usize {
        self.factor_set.len()
    }

    pub fn predict(&self, config: &FactorConfiguration) -> Result<f64> {
        self.params.predict(config)
    }

    /// Parameters as fitted, before any edit.
    pub fn fitted_params(&self) -> &DecisionParams {
        self.edits.first().map(|e| &e.pre).unwrap_or(&self.params)
    }

    pub fn validate(&self) -> Result<()> {
        self.factor_set.validate()?;
        self.params.validate()?;
        if self.params.n() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                actual: self.params.n(),
            });
        }
        self.em_config.validate()?;
        // the map re-validates on deserialisation; the constructor guards the rest
        VerbalMap::new(*self.map.values())?;
        Ok(())
    }
}

/// Design matrix rows and verbal levels of a dataset.
struct Design {
    n: usize,
    rows: Vec<Vec<f64>>,
    levels: Vec<VerbalLevel>,
}

impl Design {
    fn new(dataset: &BehavioralDataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Validation("dataset holds no observations".into()));
        }
        let n = dataset.n();
        let rows = dataset
            .observations
            .iter()
            .map(|o| expand_features(&o.config, n))
            .collect::<Result<Vec<_>>>()?;
        let levels = dataset.observations.iter().map(|o| o.level).collect();
        Ok(Design { n, rows, levels })
    }

    fn k(&self) -> usize {
        self.rows.len()
    }

    fn check_params(&self, params: &DecisionParams) -> Result<()> {
        if params.n() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                actual: params.n(),
            });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn model_logits(design: &Design, theta: &[f64]) -> Vec<f64> {
    design.rows.iter().map(|x| dot(x, theta)).collect()
}

/// `sign(φ(V) − 0.5)` per observation; neutral answers get 0.
pub fn directional_signs(dataset: &BehavioralDataset, map: &VerbalMap) -> Vec<i8> {
    dataset
        .observations
        .iter()
        .map(|o| {
            let p = map.prob(o.level);
            if p > 0.5 {
                1
            } else if p < 0.5 {
                -1
            } else {
                0
            }
        })
        .collect()
}

pub fn e_step(
    params: &DecisionParams,
    map: &VerbalMap,
    dataset: &BehavioralDataset,
    cfg: &EmConfig,
) -> Result<PosteriorSummary> {
    let design = Design::new(dataset)?;
    design.check_params(params)?;
    Ok(e_step_design(&design, &params.to_dense(), map, cfg))
}

fn e_step_design(design: &Design, theta: &[f64], map: &VerbalMap, cfg: &EmConfig) -> PosteriorSummary {
    let w = cfg.model_weight();
    let means = design
        .rows
        .iter()
        .zip(&design.levels)
        .map(|(x, &v)| w * dot(x, theta) + (1.0 - w) * map.logit(v))
        .collect();
    PosteriorSummary {
        means,
        variance: cfg.posterior_variance(),
    }
}

/// Smooth and non-smooth parts of the θ objective over a fixed design.
struct ThetaObjective<'a> {
    design: &'a Design,
    targets: &'a [f64],
    signs: &'a [i8],
    cfg: &'a EmConfig,
}

impl ThetaObjective<'_> {
    fn gamma_range(&self) -> std::ops::Range<usize> {
        1 + self.design.n..feature_len(self.design.n)
    }

    /// Mean squared residual + λ_MR·hinge + λ₂‖γ‖².
    fn smooth(&self, theta: &[f64]) -> f64 {
        let k = self.design.k() as f64;
        let mut mse = 0.0;
        let mut hinge = 0.0;
        for ((x, &t), &y) in self.design.rows.iter().zip(self.targets).zip(self.signs) {
            let u = dot(x, theta);
            mse += (t - u) * (t - u);
            if y != 0 {
                hinge += (-(y as f64) * (sigmoid(u) - 0.5) + self.cfg.margin_eps).max(0.0);
            }
        }
        let ridge: f64 = theta[self.gamma_range()].iter().map(|g| g * g).sum();
        mse / k + self.cfg.lambda_mr * hinge / k + self.cfg.lambda2 * ridge
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let k = self.design.k() as f64;
        let mut g = vec![0.0; theta.len()];
        for ((x, &t), &y) in self.design.rows.iter().zip(self.targets).zip(self.signs) {
            let u = dot(x, theta);
            let mut coef = -2.0 * (t - u) / k;
            if y != 0 {
                let s = sigmoid(u);
                if -(y as f64) * (s - 0.5) + self.cfg.margin_eps > 0.0 {
                    coef -= self.cfg.lambda_mr * (y as f64) * s * (1.0 - s) / k;
                }
            }
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += coef * xi;
            }
        }
        for i in self.gamma_range() {
            g[i] += 2.0 * self.cfg.lambda2 * theta[i];
        }
        g
    }

    fn l1(&self, theta: &[f64]) -> f64 {
        theta[self.gamma_range()].iter().map(|g| g.abs()).sum()
    }

    fn total(&self, theta: &[f64]) -> f64 {
        self.smooth(theta) + self.cfg.lambda1 * self.l1(theta)
    }
}

/// Value and gradient of the smooth part of the θ objective at `params`.
pub fn m_step_smooth_objective(
    posterior: &PosteriorSummary,
    dataset: &BehavioralDataset,
    params: &DecisionParams,
    signs: &[i8],
    cfg: &EmConfig,
) -> Result<(f64, Vec<f64>)> {
    let design = Design::new(dataset)?;
    design.check_params(params)?;
    check_lengths(&design, posterior, signs)?;
    let obj = ThetaObjective {
        design: &design,
        targets: &posterior.means,
        signs,
        cfg,
    };
    let theta = params.to_dense();
    Ok((obj.smooth(&theta), obj.gradient(&theta)))
}

fn check_lengths(design: &Design, posterior: &PosteriorSummary, signs: &[i8]) -> Result<()> {
    for len in [posterior.means.len(), signs.len()] {
        if len != design.k() {
            return Err(Error::Dimension {
                expected: design.k(),
                actual: len,
            });
        }
    }
    Ok(())
}

pub fn m_step_params(
    posterior: &PosteriorSummary,
    dataset: &BehavioralDataset,
    params_init: &DecisionParams,
    signs: &[i8],
    cfg: &EmConfig,
) -> Result<DecisionParams> {
    cfg.validate()?;
    let design = Design::new(dataset)?;
    design.check_params(params_init)?;
    check_lengths(&design, posterior, signs)?;
    let theta = m_step_design(&design, posterior, &params_init.to_dense(), signs, cfg)?;
    DecisionParams::from_dense(&theta, design.n)
}

fn m_step_design(
    design: &Design,
    posterior: &PosteriorSummary,
    theta_init: &[f64],
    signs: &[i8],
    cfg: &EmConfig,
) -> Result<Vec<f64>> {
    let obj = ThetaObjective {
        design,
        targets: &posterior.means,
        signs,
        cfg,
    };
    let gammas = obj.gamma_range();
    let no_inter = cfg.ablation == FitAblation::NoInter;
    let mut theta = theta_init.to_vec();
    // an interaction zeroed by a threshold pass stays zero for the rest of this M-step
    let mut frozen = vec![no_inter; gammas.len()];
    if no_inter {
        theta[gammas.clone()].fill(0.0);
    }
    let mut f = obj.total(&theta);
    for step in 0..cfg.inner_steps {
        let g = obj.gradient(&theta);
        if g.iter().any(|v| !v.is_finite()) || !f.is_finite() {
            return Err(Error::Numerical {
                iteration: step,
                message: "non-finite M-step gradient".into(),
            });
        }
        let mut eta = cfg.learning_rate;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut cand: Vec<f64> = theta.iter().zip(&g).map(|(t, d)| t - eta * d).collect();
            for (slot, i) in frozen.iter().zip(gammas.clone()) {
                cand[i] = if *slot {
                    0.0
                } else {
                    soft_threshold(cand[i], eta * cfg.lambda1)
                };
            }
            let fc = obj.total(&cand);
            if fc <= f {
                accepted = Some((cand, fc));
                break;
            }
            eta *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let gain = f - fc;
        theta = cand;
        f = fc;
        for (slot, i) in frozen.iter_mut().zip(gammas.clone()) {
            *slot |= theta[i] == 0.0;
        }
        if gain <= 1e-15 * (1.0 + f.abs()) {
            break;
        }
    }
    Ok(theta)
}

/// Proximal operator of `t·|x|`.
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

pub fn m_step_map(
    posterior: &PosteriorSummary,
    dataset: &BehavioralDataset,
    previous: &VerbalMap,
    cfg: &EmConfig,
) -> Result<VerbalMap> {
    if posterior.means.len() != dataset.len() {
        return Err(Error::Dimension {
            expected: dataset.len(),
            actual: posterior.means.len(),
        });
    }
    let levels: Vec<VerbalLevel> = dataset.observations.iter().map(|o| o.level).collect();
    map_update(&levels, posterior, previous, &cfg.bounds)
}

fn map_update(
    levels: &[VerbalLevel],
    posterior: &PosteriorSummary,
    previous: &VerbalMap,
    bounds: &MonotoneBounds,
) -> Result<VerbalMap> {
    let mut sums = [0.0; LEVEL_COUNT];
    let mut counts = [0usize; LEVEL_COUNT];
    for (&v, &z) in levels.iter().zip(&posterior.means) {
        sums[v.index()] += z;
        counts[v.index()] += 1;
    }
    let mut candidate = *previous.values();
    for m in 0..LEVEL_COUNT {
        if counts[m] > 0 {
            candidate[m] = sigmoid(sums[m] / counts[m] as f64);
        }
    }
    enforce_monotone(candidate, bounds)
}

/// Expected complete-data log-likelihood under the given posterior.
pub fn q_value(
    params: &DecisionParams,
    map: &VerbalMap,
    posterior: &PosteriorSummary,
    dataset: &BehavioralDataset,
    cfg: &EmConfig,
) -> Result<f64> {
    let design = Design::new(dataset)?;
    design.check_params(params)?;
    check_lengths(&design, posterior, &vec![0; design.k()])?;
    Ok(q_design(&design, &params.to_dense(), map, posterior, cfg))
}

fn q_design(
    design: &Design,
    theta: &[f64],
    map: &VerbalMap,
    posterior: &PosteriorSummary,
    cfg: &EmConfig,
) -> f64 {
    let (st, sp, v) = (cfg.sigma_theta_sq, cfg.sigma_phi_sq, posterior.variance);
    let norm = -0.5 * (2.0 * PI * st).ln() - 0.5 * (2.0 * PI * sp).ln();
    design
        .rows
        .iter()
        .zip(&design.levels)
        .zip(&posterior.means)
        .map(|((x, &lvl), &z)| {
            let rm = z - dot(x, theta);
            let rv = z - map.logit(lvl);
            norm - (rm * rm + v) / (2.0 * st) - (rv * rv + v) / (2.0 * sp)
        })
        .sum()
}

/// Log-likelihood of the verbal logits with the latent logit integrated out.
pub fn marginal_log_likelihood(
    params: &DecisionParams,
    map: &VerbalMap,
    dataset: &BehavioralDataset,
    cfg: &EmConfig,
) -> Result<f64> {
    let design = Design::new(dataset)?;
    design.check_params(params)?;
    Ok(marginal_design(&design, &params.to_dense(), map, cfg))
}

fn marginal_design(design: &Design, theta: &[f64], map: &VerbalMap, cfg: &EmConfig) -> f64 {
    let s = cfg.sigma_theta_sq + cfg.sigma_phi_sq;
    design
        .rows
        .iter()
        .zip(&design.levels)
        .map(|(x, &lvl)| {
            let r = map.logit(lvl) - dot(x, theta);
            -0.5 * (2.0 * PI * s).ln() - r * r / (2.0 * s)
        })
        .sum()
}

/// Q minus the θ penalties scaled onto the likelihood. Every E/M round
/// weakly increases it, so it is the sequence checked for monotonicity.
fn tracked_objective(
    design: &Design,
    theta: &[f64],
    map: &VerbalMap,
    signs: &[i8],
    cfg: &EmConfig,
) -> f64 {
    let post = e_step_design(design, theta, map, cfg);
    let obj = ThetaObjective {
        design,
        targets: &post.means,
        signs,
        cfg,
    };
    // penalty = total − mean squared residual
    let k = design.k() as f64;
    let mse: f64 = model_logits(design, theta)
        .iter()
        .zip(&post.means)
        .map(|(u, z)| (z - u) * (z - u))
        .sum::<f64>()
        / k;
    let penalty = obj.total(theta) - mse;
    q_design(design, theta, map, &post, cfg) - k / (2.0 * cfg.sigma_theta_sq) * penalty
}

/// Ridge-stabilised least squares of the initial verbal logits on the design.
fn initial_theta(design: &Design, map: &VerbalMap, no_inter: bool) -> Result<Vec<f64>> {
    let p = if no_inter { 1 + design.n } else { feature_len(design.n) };
    let k = design.k();
    let x = DMatrix::from_fn(k, p, |r, c| design.rows[r][c]);
    let y = DVector::from_iterator(k, design.levels.iter().map(|&v| map.logit(v)));
    let xtx = x.transpose() * &x + DMatrix::identity(p, p) * INIT_RIDGE;
    let xty = x.transpose() * y;
    let sol = xtx
        .cholesky()
        .ok_or_else(|| Error::Numerical {
            iteration: 0,
            message: "initial least-squares system is not positive definite".into(),
        })?
        .solve(&xty);
    let mut theta = vec![0.0; feature_len(design.n)];
    theta[..p].copy_from_slice(sol.as_slice());
    Ok(theta)
}

fn design_rank(design: &Design, p: usize) -> usize {
    let k = design.k();
    let x = DMatrix::from_fn(k, p, |r, c| design.rows[r][c]);
    let svd = x.svd(false, false);
    let smax = svd.singular_values.max();
    let tol = k.max(p) as f64 * f64::EPSILON * smax;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Fits θ and φ to a dataset.
pub fn fit(dataset: &BehavioralDataset, cfg: &EmConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    dataset.validate()?;
    let design = Design::new(dataset)?;
    let no_inter = cfg.ablation == FitAblation::NoInter;
    let p = if no_inter { 1 + design.n } else { feature_len(design.n) };
    let rank = design_rank(&design, p);

    let mut map = enforce_monotone(*VerbalMap::canonical().values(), &cfg.bounds)?;
    let signs = directional_signs(dataset, &map);
    let mut theta = initial_theta(&design, &map, no_inter)?;
    let mut q_values = vec![tracked_objective(&design, &theta, &map, &signs, cfg)];
    let mut converged = false;
    let mut violation = None;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iters {
        iterations = iter;
        let post = e_step_design(&design, &theta, &map, cfg);
        theta = m_step_design(&design, &post, &theta, &signs, cfg).map_err(|e| match e {
            Error::Numerical { message, .. } => Error::Numerical {
                iteration: iter,
                message,
            },
            other => other,
        })?;
        if cfg.ablation != FitAblation::NoEm {
            map = map_update(&design.levels, &post, &map, &cfg.bounds)?;
        }
        let q = tracked_objective(&design, &theta, &map, &signs, cfg);
        if !q.is_finite() {
            return Err(Error::Numerical {
                iteration: iter,
                message: "objective became non-finite".into(),
            });
        }
        let prev = *q_values.last().expect("initial value recorded");
        q_values.push(q);
        if q < prev - MONOTONE_SLACK && violation.is_none() {
            violation = Some(iter);
        }
        if (q - prev).abs() < cfg.convergence_tol {
            converged = violation.is_none();
            break;
        }
    }

    let params = DecisionParams::from_dense(&theta, design.n)?;
    let final_ll = marginal_design(&design, &theta, &map, cfg);
    Ok(TrainedModel {
        factor_set: dataset.factor_set.clone(),
        params,
        map,
        em_config: cfg.clone(),
        diagnostics: FitDiagnostics {
            q_values,
            final_marginal_log_likelihood: final_ll,
            iterations,
            converged,
            monotone_violation: violation,
            design_rank: rank,
            rank_deficient: rank < p,
        },
        dataset_hash: crate::store::content_hash(dataset)?,
        edits: Vec::new(),
    })
}
