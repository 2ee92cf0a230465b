//! Expert edits on a trained decision model.
//!
//! Average marginal effects are computed by exact enumeration of the other
//! factors. Exclusion zeroes a factor's main effect and drops its
//! interactions. Ratio calibration re-optimises all of θ so that one
//! factor's AME is a fixed multiple of another's while holding the mean
//! logit and disturbing the remaining AMEs as little as possible. Every edit
//! is logged with a full before/after snapshot and can be reverted.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em::TrainedModel;
use crate::error::{Error, Result};
use crate::factor::{feature_len, pairs, sigmoid, DecisionParams, FactorConfiguration};

/// Reported constraint tolerance for ratio edits.
pub const RATIO_TOLERANCE: f64 = 1e-6;
const INTERNAL_TOLERANCE: f64 = 1e-8;
const SQP_MAX_ITERS: usize = 500;
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Distribution over configurations used to average effects.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Uniform,
    /// Probability per full configuration; absent configurations weigh zero.
    /// The effect of factor k averages over the induced distribution of the
    /// other factors.
    Custom {
        weights: BTreeMap<FactorConfiguration, f64>,
    },
}

impl Weighting {
    pub fn validate(&self, n: usize) -> Result<()> {
        let Weighting::Custom { weights } = self else {
            return Ok(());
        };
        let mut total = 0.0;
        for (c, &w) in weights {
            c.check_len(n)?;
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Validation(format!("weight {w} for {c} is not a probability")));
            }
            total += w;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Validation(format!("weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Dense per-mask weights, or `None` for uniform.
    fn dense(&self, n: usize) -> Result<Option<Vec<f64>>> {
        self.validate(n)?;
        Ok(match self {
            Weighting::Uniform => None,
            Weighting::Custom { weights } => {
                let mut d = vec![0.0; 1 << n];
                for (c, &w) in weights {
                    d[c.mask() as usize] = w;
                }
                Some(d)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmeReport {
    /// AME per factor in probability points.
    pub values: Vec<f64>,
    /// Complements enumerated per factor, `2^(N−1)`.
    pub enumeration_size: usize,
    pub weighting: Weighting,
}

/// Probabilities and logits of every configuration, indexed by mask.
struct Enumeration {
    n: usize,
    z: Vec<f64>,
    p: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl Enumeration {
    fn new(params: &DecisionParams, weighting: &Weighting) -> Result<Self> {
        let n = params.n();
        let weights = weighting.dense(n)?;
        let z: Vec<f64> = FactorConfiguration::all(n)?
            .map(|c| params.logit_unchecked(&c))
            .collect();
        let p = z.iter().map(|&v| sigmoid(v)).collect();
        Ok(Enumeration { n, z, p, weights })
    }

    /// `(weight, mask with f_k = 0, mask with f_k = 1)` per complement.
    fn complements(&self, k: usize) -> impl Iterator<Item = (f64, usize, usize)> + '_ {
        let uniform = 1.0 / (1u64 << (self.n - 1)) as f64;
        (0..1usize << self.n)
            .filter(move |m| m >> k & 1 == 0)
            .map(move |m0| {
                let m1 = m0 | 1 << k;
                let w = match &self.weights {
                    None => uniform,
                    Some(d) => d[m0] + d[m1],
                };
                (w, m0, m1)
            })
    }

    fn ame(&self, k: usize) -> f64 {
        self.complements(k)
            .map(|(w, m0, m1)| w * (self.p[m1] - self.p[m0]))
            .sum()
    }

    fn ame_gradient(&self, k: usize) -> Vec<f64> {
        let mut g = vec![0.0; feature_len(self.n)];
        let mut x0 = vec![0.0; g.len()];
        let mut x1 = vec![0.0; g.len()];
        for (w, m0, m1) in self.complements(k) {
            if w == 0.0 {
                continue;
            }
            fill_features(m0, self.n, &mut x0);
            fill_features(m1, self.n, &mut x1);
            let (d0, d1) = (dsigmoid(self.p[m0]), dsigmoid(self.p[m1]));
            for ((gi, a), b) in g.iter_mut().zip(&x1).zip(&x0) {
                *gi += w * (d1 * a - d0 * b);
            }
        }
        g
    }

    fn mean_logit(&self) -> f64 {
        match &self.weights {
            None => self.z.iter().sum::<f64>() / self.z.len() as f64,
            Some(d) => d.iter().zip(&self.z).map(|(w, z)| w * z).sum(),
        }
    }

    fn mean_logit_gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; feature_len(self.n)];
        let mut x = vec![0.0; g.len()];
        let uniform = 1.0 / self.z.len() as f64;
        for m in 0..self.z.len() {
            let w = self.weights.as_ref().map_or(uniform, |d| d[m]);
            if w == 0.0 {
                continue;
            }
            fill_features(m, self.n, &mut x);
            for (gi, xi) in g.iter_mut().zip(&x) {
                *gi += w * xi;
            }
        }
        g
    }
}

fn dsigmoid(p: f64) -> f64 {
    p * (1.0 - p)
}

fn fill_features(mask: usize, n: usize, out: &mut [f64]) {
    let bit = |j: usize| (mask >> j & 1) as f64;
    out[0] = 1.0;
    for j in 0..n {
        out[1 + j] = bit(j);
    }
    for (idx, (i, j)) in pairs(n).enumerate() {
        out[1 + n + idx] = bit(i) * bit(j);
    }
}

fn check_factor(k: usize, n: usize) -> Result<()> {
    if k >= n {
        return Err(Error::Validation(format!("factor {k} out of range for N={n}")));
    }
    Ok(())
}

/// Expected change in P(positive) when factor `k` flips from 0 to 1.
pub fn average_marginal_effect(params: &DecisionParams, k: usize, weighting: &Weighting) -> Result<f64> {
    check_factor(k, params.n())?;
    Ok(Enumeration::new(params, weighting)?.ame(k))
}

pub fn ame_report(params: &DecisionParams, weighting: &Weighting) -> Result<AmeReport> {
    let e = Enumeration::new(params, weighting)?;
    Ok(AmeReport {
        values: (0..e.n).map(|k| e.ame(k)).collect(),
        enumeration_size: 1 << (e.n - 1),
        weighting: weighting.clone(),
    })
}

/// Gradient of AME_k with respect to the dense parameter vector.
pub fn ame_gradient(params: &DecisionParams, k: usize, weighting: &Weighting) -> Result<Vec<f64>> {
    check_factor(k, params.n())?;
    Ok(Enumeration::new(params, weighting)?.ame_gradient(k))
}

/// Mean logit over the weighting distribution.
pub fn mean_logit(params: &DecisionParams, weighting: &Weighting) -> Result<f64> {
    Ok(Enumeration::new(params, weighting)?.mean_logit())
}

pub fn mean_logit_gradient(params: &DecisionParams, weighting: &Weighting) -> Result<Vec<f64>> {
    Ok(Enumeration::new(params, weighting)?.mean_logit_gradient())
}

/// `1 − mean|ΔP_k|_after / mean|ΔP_k|_before` over uniform complements;
/// `None` when the factor had no effect to begin with.
pub fn effect_reduction_ratio(
    before: &DecisionParams,
    after: &DecisionParams,
    k: usize,
) -> Result<Option<f64>> {
    if before.n() != after.n() {
        return Err(Error::Dimension {
            expected: before.n(),
            actual: after.n(),
        });
    }
    check_factor(k, before.n())?;
    let mean_abs = |p: &DecisionParams| -> Result<f64> {
        let e = Enumeration::new(p, &Weighting::Uniform)?;
        Ok(e.complements(k)
            .map(|(w, m0, m1)| w * (e.p[m1] - e.p[m0]).abs())
            .sum())
    };
    let b = mean_abs(before)?;
    if b == 0.0 {
        return Ok(None);
    }
    Ok(Some(1.0 - mean_abs(after)? / b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioConstraint {
    pub anchor: usize,
    pub target: usize,
    pub rho: f64,
}

impl RatioConstraint {
    pub fn validate(&self, n: usize) -> Result<()> {
        check_factor(self.anchor, n)?;
        check_factor(self.target, n)?;
        if self.anchor == self.target {
            return Err(Error::Validation("ratio constraint needs two distinct factors".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Validation(format!("ratio {} must be positive", self.rho)));
        }
        Ok(())
    }
}

/// Parameters with factor `k` removed from the model.
pub fn excluded_params(params: &DecisionParams, k: usize) -> Result<DecisionParams> {
    check_factor(k, params.n())?;
    let mut out = params.clone();
    out.beta[k] = 0.0;
    out.gamma.retain(|&(i, j), _| i != k && j != k);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioSolution {
    pub params: DecisionParams,
    /// `[E[z'] − E[z], AME_target − ρ·AME_anchor]` at the solution.
    pub residuals: [f64; 2],
    /// Σ over untouched factors of squared AME change.
    pub side_effect: f64,
    pub iterations: usize,
}

struct RatioProblem<'a> {
    n: usize,
    constraint: RatioConstraint,
    weighting: &'a Weighting,
    untouched: Vec<usize>,
    ame0: Vec<f64>,
    ez0: f64,
}

struct Eval {
    f: f64,
    r: DVector<f64>,
    jac: DMatrix<f64>,
    c: DVector<f64>,
    a: DMatrix<f64>,
    ame_anchor: f64,
}

impl RatioProblem<'_> {
    fn params(&self, theta: &DVector<f64>) -> Result<DecisionParams> {
        DecisionParams::from_dense(theta.as_slice(), self.n)
    }

    fn eval(&self, theta: &DVector<f64>) -> Result<Eval> {
        let p = self.params(theta)?;
        let e = Enumeration::new(&p, self.weighting)?;
        let dim = theta.len();
        let u = self.untouched.len();
        let mut r = DVector::zeros(u);
        let mut jac = DMatrix::zeros(u, dim);
        for (row, &j) in self.untouched.iter().enumerate() {
            r[row] = e.ame(j) - self.ame0[j];
            jac.set_row(row, &DVector::from_vec(e.ame_gradient(j)).transpose());
        }
        let RatioConstraint { anchor, target, rho } = self.constraint;
        let (ai, at) = (e.ame(anchor), e.ame(target));
        let c = DVector::from_vec(vec![e.mean_logit() - self.ez0, at - rho * ai]);
        let gi = DVector::from_vec(e.ame_gradient(anchor));
        let gt = DVector::from_vec(e.ame_gradient(target));
        let mut a = DMatrix::zeros(2, dim);
        a.set_row(0, &DVector::from_vec(e.mean_logit_gradient()).transpose());
        a.set_row(1, &(gt - gi * rho).transpose());
        Ok(Eval {
            f: r.norm_squared(),
            r,
            jac,
            c,
            a,
            ame_anchor: ai,
        })
    }

    fn merit(&self, theta: &DVector<f64>, nu: f64) -> Result<(f64, f64)> {
        let ev = self.eval(theta)?;
        Ok((ev.f + nu * ev.c.lp_norm(1), ev.c.amax()))
    }

    /// Gauss-Newton SQP with an ℓ1 merit line search.
    fn sqp(&self, start: DVector<f64>) -> Result<(DVector<f64>, usize)> {
        let dim = start.len();
        let mut theta = start;
        let mut nu: f64 = 1.0;
        let mut iters = 0;
        for it in 0..SQP_MAX_ITERS {
            iters = it + 1;
            let ev = self.eval(&theta)?;
            let g = ev.jac.transpose() * &ev.r * 2.0;
            let mut h = ev.jac.transpose() * &ev.jac * 2.0;
            let mu = 1e-8 * (1.0 + h.trace() / dim as f64);
            for d in 0..dim {
                h[(d, d)] += mu;
            }
            let mut kkt = DMatrix::zeros(dim + 2, dim + 2);
            kkt.view_mut((0, 0), (dim, dim)).copy_from(&h);
            kkt.view_mut((dim, 0), (2, dim)).copy_from(&ev.a);
            kkt.view_mut((0, dim), (dim, 2)).copy_from(&ev.a.transpose());
            let mut rhs = DVector::zeros(dim + 2);
            rhs.rows_mut(0, dim).copy_from(&(-&g));
            rhs.rows_mut(dim, 2).copy_from(&(-&ev.c));
            let Some(sol) = kkt.lu().solve(&rhs) else {
                break;
            };
            let d = sol.rows(0, dim).into_owned();
            let lambda = sol.rows(dim, 2).into_owned();
            if !d.iter().all(|v| v.is_finite()) {
                break;
            }
            let resid = ev.c.amax();
            if resid <= INTERNAL_TOLERANCE && d.amax() <= 1e-10 {
                break;
            }
            nu = nu.max(2.0 * lambda.amax() + 1e-3);
            let m0 = ev.f + nu * ev.c.lp_norm(1);
            let slope = g.dot(&d) - nu * ev.c.lp_norm(1);
            let mut step = 1.0;
            let mut next = None;
            for _ in 0..40 {
                let cand = &theta + &d * step;
                let (m, _) = self.merit(&cand, nu)?;
                if m.is_finite() && m <= m0 + 1e-4 * step * slope.min(0.0) {
                    next = Some((cand, m));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, m1)) = next else { break };
            theta = cand;
            if (m0 - m1).abs() <= 1e-15 * (1.0 + m0.abs()) && resid <= INTERNAL_TOLERANCE {
                break;
            }
        }
        Ok((theta, iters))
    }

    /// Minimum-norm Newton steps onto the constraint set.
    fn restore(&self, mut theta: DVector<f64>) -> Result<DVector<f64>> {
        for _ in 0..50 {
            let ev = self.eval(&theta)?;
            if ev.c.amax() <= INTERNAL_TOLERANCE * 1e-2 {
                break;
            }
            let aat = &ev.a * ev.a.transpose();
            let Some(y) = aat.lu().solve(&ev.c) else { break };
            let next = &theta - ev.a.transpose() * y;
            if self.eval(&next)?.c.amax() >= ev.c.amax() {
                break;
            }
            theta = next;
        }
        Ok(theta)
    }
}

/// The edit that only rescales the target's main effect to meet the ratio.
pub fn naive_rescale(
    params: &DecisionParams,
    constraint: &RatioConstraint,
    weighting: &Weighting,
) -> Result<Option<DecisionParams>> {
    constraint.validate(params.n())?;
    let t = constraint.target;
    let h = |b: f64| -> Result<f64> {
        let mut p = params.clone();
        p.beta[t] = b;
        let e = Enumeration::new(&p, weighting)?;
        Ok(e.ame(t) - constraint.rho * e.ame(constraint.anchor))
    };
    let b0 = params.beta[t];
    let h0 = h(b0)?;
    if h0 == 0.0 {
        return Ok(Some(params.clone()));
    }
    let mut bracket = None;
    let mut width = 0.5;
    while width <= 64.0 && bracket.is_none() {
        for b in [b0 - width, b0 + width] {
            if h(b)?.signum() != h0.signum() {
                bracket = Some(if b < b0 { (b, b0) } else { (b0, b) });
                break;
            }
        }
        width *= 2.0;
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Ok(None);
    };
    let hlo_sign = h(lo)?.signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if h(mid)?.signum() == hlo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut p = params.clone();
    p.beta[t] = 0.5 * (lo + hi);
    Ok(Some(p))
}

fn side_effect(before: &[f64], after: &[f64], untouched: &[usize]) -> f64 {
    untouched.iter().map(|&j| (after[j] - before[j]).powi(2)).sum()
}

/// Re-optimises θ so that `AME_target = ρ·AME_anchor` with the mean logit
/// preserved and minimal change to the other factors' AMEs.
pub fn solve_ratio(
    params: &DecisionParams,
    constraint: &RatioConstraint,
    weighting: &Weighting,
) -> Result<RatioSolution> {
    let n = params.n();
    constraint.validate(n)?;
    let base = Enumeration::new(params, weighting)?;
    let ame0: Vec<f64> = (0..n).map(|k| base.ame(k)).collect();
    if ame0[constraint.anchor].abs() < 1e-12 {
        return Err(Error::Infeasible(format!(
            "anchor factor {} has no effect, so the ratio is ill-posed",
            constraint.anchor
        )));
    }
    let problem = RatioProblem {
        n,
        constraint: *constraint,
        weighting,
        untouched: (0..n)
            .filter(|&j| j != constraint.anchor && j != constraint.target)
            .collect(),
        ame0,
        ez0: base.mean_logit(),
    };

    let mut starts = vec![DVector::from_vec(params.to_dense())];
    if let Some(naive) = naive_rescale(params, constraint, weighting)? {
        starts.push(DVector::from_vec(naive.to_dense()));
    }
    let mut best: Option<(DVector<f64>, f64, f64, usize)> = None;
    let mut best_residual = f64::INFINITY;
    let mut total_iters = 0;
    let mut collapsed = false;
    for start in starts {
        let (theta, iters) = problem.sqp(start)?;
        let theta = problem.restore(theta)?;
        total_iters += iters;
        let ev = problem.eval(&theta)?;
        let resid = ev.c.amax();
        best_residual = best_residual.min(resid);
        if resid > INTERNAL_TOLERANCE || !ev.f.is_finite() {
            continue;
        }
        if ev.ame_anchor.abs() < 1e-9 {
            collapsed = true;
            continue;
        }
        if best.as_ref().is_none_or(|b| ev.f < b.1) {
            best = Some((theta, ev.f, resid, iters));
        }
    }
    let Some((theta, f, _, iterations)) = best else {
        if collapsed {
            return Err(Error::Infeasible(
                "the ratio is only met by driving the anchor effect to zero".into(),
            ));
        }
        return Err(Error::NonConvergence {
            iterations: total_iters,
            best_residual,
        });
    };
    let out = problem.params(&theta)?;
    let e = Enumeration::new(&out, weighting)?;
    let residuals = [
        e.mean_logit() - problem.ez0,
        e.ame(constraint.target) - constraint.rho * e.ame(constraint.anchor),
    ];
    Ok(RatioSolution {
        params: out,
        residuals,
        side_effect: f,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EditKind {
    Exclude {
        factor: usize,
    },
    Ratio {
        constraint: RatioConstraint,
        weighting: Weighting,
    },
    ManualSet,
    Revert {
        of: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditMeta {
    pub author: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub id: String,
    pub kind: EditKind,
    pub pre: DecisionParams,
    pub post: DecisionParams,
    pub residuals: Vec<f64>,
    /// Σ over factors the edit does not target of squared AME change.
    pub side_effect: f64,
    pub timestamp: DateTime<Utc>,
    pub author: String,
}

impl EditRecord {
    fn new(
        seq: usize,
        kind: EditKind,
        pre: DecisionParams,
        post: DecisionParams,
        residuals: Vec<f64>,
        side_effect: f64,
        meta: &EditMeta,
    ) -> Result<Self> {
        let id_src = (seq, &kind, &pre, &post, &meta.timestamp, &meta.author);
        let id = crate::store::content_hash(&id_src)?[..16].to_string();
        Ok(EditRecord {
            id,
            kind,
            pre,
            post,
            residuals,
            side_effect,
            timestamp: meta.timestamp,
            author: meta.author.clone(),
        })
    }
}

/// Factors whose AMEs the edit is allowed to move.
fn touched(kind: &EditKind, log: &[EditRecord]) -> Vec<usize> {
    match kind {
        EditKind::Exclude { factor } => vec![*factor],
        EditKind::Ratio { constraint, .. } => vec![constraint.anchor, constraint.target],
        EditKind::ManualSet => Vec::new(),
        EditKind::Revert { of } => log
            .iter()
            .find(|e| &e.id == of)
            .map(|e| touched(&e.kind, log))
            .unwrap_or_default(),
    }
}

fn record(
    model: &TrainedModel,
    kind: EditKind,
    post: DecisionParams,
    residuals: Vec<f64>,
    meta: &EditMeta,
) -> Result<(TrainedModel, EditRecord)> {
    let weighting = match &kind {
        EditKind::Ratio { weighting, .. } => weighting.clone(),
        _ => Weighting::Uniform,
    };
    let skip = touched(&kind, &model.edits);
    let untouched: Vec<usize> = (0..model.n()).filter(|j| !skip.contains(j)).collect();
    let before = ame_report(&model.params, &weighting)?.values;
    let after = ame_report(&post, &weighting)?.values;
    let rec = EditRecord::new(
        model.edits.len(),
        kind,
        model.params.clone(),
        post.clone(),
        residuals,
        side_effect(&before, &after, &untouched),
        meta,
    )?;
    let mut next = model.clone();
    next.params = post;
    next.edits.push(rec.clone());
    Ok((next, rec))
}

pub fn exclude_factor(
    model: &TrainedModel,
    k: usize,
    meta: &EditMeta,
) -> Result<(TrainedModel, EditRecord)> {
    let post = excluded_params(&model.params, k)?;
    let e = Enumeration::new(&post, &Weighting::Uniform)?;
    let max_gap = e
        .complements(k)
        .map(|(_, m0, m1)| (e.p[m1] - e.p[m0]).abs())
        .fold(0.0, f64::max);
    record(model, EditKind::Exclude { factor: k }, post, vec![max_gap], meta)
}

pub fn calibrate_ratio(
    model: &TrainedModel,
    constraint: RatioConstraint,
    weighting: &Weighting,
    meta: &EditMeta,
) -> Result<(TrainedModel, EditRecord)> {
    let sol = solve_ratio(&model.params, &constraint, weighting)?;
    record(
        model,
        EditKind::Ratio {
            constraint,
            weighting: weighting.clone(),
        },
        sol.params,
        sol.residuals.to_vec(),
        meta,
    )
}

pub fn set_params(
    model: &TrainedModel,
    params: DecisionParams,
    meta: &EditMeta,
) -> Result<(TrainedModel, EditRecord)> {
    params.validate()?;
    if params.n() != model.n() {
        return Err(Error::Dimension {
            expected: model.n(),
            actual: params.n(),
        });
    }
    record(model, EditKind::ManualSet, params, Vec::new(), meta)
}

/// Restores the snapshot taken before `edit_id`. Only the edit that produced
/// the current parameters can be reverted, and only once.
pub fn revert(
    model: &TrainedModel,
    edit_id: &str,
    meta: &EditMeta,
) -> Result<(TrainedModel, EditRecord)> {
    let edit = model
        .edits
        .iter()
        .find(|e| e.id == edit_id)
        .ok_or_else(|| Error::Lineage(format!("edit {edit_id} is not in this model's log")))?;
    if matches!(edit.kind, EditKind::Revert { .. }) {
        return Err(Error::Lineage(format!("edit {edit_id} is itself a revert")));
    }
    let already = model
        .edits
        .iter()
        .any(|e| matches!(&e.kind, EditKind::Revert { of } if of == edit_id));
    if already {
        return Err(Error::Lineage(format!("edit {edit_id} was already reverted")));
    }
    if model.params != edit.post {
        return Err(Error::Lineage(format!(
            "current parameters were not produced by edit {edit_id}"
        )));
    }
    let pre = edit.pre.clone();
    record(
        model,
        EditKind::Revert {
            of: edit_id.to_string(),
        },
        pre,
        Vec::new(),
        meta,
    )
}

/// Re-executes the edit log from the fitted snapshot, checking every step
/// against the recorded result, and returns the final parameters.
pub fn replay_edit_log(model: &TrainedModel) -> Result<DecisionParams> {
    let mut current = model.fitted_params().clone();
    for (seq, e) in model.edits.iter().enumerate() {
        if e.pre != current {
            return Err(Error::Lineage(format!(
                "edit {} (#{seq}) does not start from the preceding state",
                e.id
            )));
        }
        let post = match &e.kind {
            EditKind::Exclude { factor } => excluded_params(&current, *factor)?,
            EditKind::Ratio {
                constraint,
                weighting,
            } => solve_ratio(&current, constraint, weighting)?.params,
            EditKind::ManualSet => e.post.clone(),
            EditKind::Revert { of } => model.edits[..seq]
                .iter()
                .find(|x| &x.id == of)
                .map(|x| x.pre.clone())
                .ok_or_else(|| Error::Lineage(format!("revert of unknown edit {of}")))?,
        };
        if post != e.post {
            return Err(Error::Lineage(format!(
                "replaying edit {} (#{seq}) does not reproduce its recorded result",
                e.id
            )));
        }
        current = post;
    }
    if current != model.params {
        return Err(Error::Lineage(
            "edit log does not reproduce the current parameters".into(),
        ));
    }
    Ok(current)
}
