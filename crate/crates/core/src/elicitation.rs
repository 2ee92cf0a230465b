//! Factor identification: elicit situational statements for each outcome,
//! summarise them into binary factors, then check and revise the factor set
//! until it is discriminative, non-redundant, and covers sample conditions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{normalize_name, FactorSet, MAX_FACTORS};
use crate::oracle::templates::{answer_lines, parse_factor_line};
use crate::oracle::{prompt_hash, FactorDraft, OracleClient, Request, PROBE_TEMPERATURE};

const GENERATION_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationConfig {
    pub statements_per_batch: usize,
    /// Extra generation requests allowed when duplicates leave a batch short.
    pub retry_cap: usize,
    pub max_factors: usize,
    pub iteration_cap: usize,
    /// Sample conditions used for the coverage check when none are supplied.
    pub coverage_conditions: usize,
}

impl Default for ElicitationConfig {
    fn default() -> Self {
        ElicitationConfig {
            statements_per_batch: 20,
            retry_cap: 3,
            max_factors: MAX_FACTORS,
            iteration_cap: 5,
            coverage_conditions: 10,
        }
    }
}

impl ElicitationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.statements_per_batch == 0 {
            return Err(Error::Config("statements_per_batch must be at least 1".into()));
        }
        if !(1..=MAX_FACTORS).contains(&self.max_factors) {
            return Err(Error::Config(format!(
                "max_factors must lie in 1..={MAX_FACTORS}"
            )));
        }
        if self.iteration_cap == 0 {
            return Err(Error::Config("iteration_cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementBatch {
    pub outcome: String,
    pub statements: Vec<String>,
    /// Prompt hashes of the generation requests behind this batch.
    pub transcript_refs: Vec<String>,
}

fn normalize_statement(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_end_matches(['.', '!', ';'])
        .to_lowercase()
}

/// Situational descriptions that would lead to `outcome`, deduplicated.
pub fn generate_statements(
    oracle: &OracleClient,
    scenario: &str,
    outcome: &str,
    cfg: &ElicitationConfig,
) -> Result<StatementBatch> {
    cfg.validate()?;
    let mut statements: Vec<String> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut refs = Vec::new();
    for attempt in 0..=cfg.retry_cap {
        let request = Request::GenerateStatements {
            scenario,
            outcome,
            count: cfg.statements_per_batch,
            attempt,
        };
        refs.push(prompt_hash(&request.render()));
        let lines = oracle.ask(request, GENERATION_TEMPERATURE, |raw| {
            let lines = answer_lines(raw);
            (!lines.is_empty()).then_some(lines)
        })?;
        for line in lines {
            if statements.len() == cfg.statements_per_batch {
                break;
            }
            if seen.insert(normalize_statement(&line)) {
                statements.push(line);
            }
        }
        if statements.len() == cfg.statements_per_batch {
            break;
        }
    }
    Ok(StatementBatch {
        outcome: outcome.to_string(),
        statements,
        transcript_refs: refs,
    })
}

fn parse_drafts(raw: &str) -> Option<Vec<FactorDraft>> {
    let drafts: Vec<FactorDraft> = answer_lines(raw)
        .iter()
        .filter_map(|l| parse_factor_line(l))
        .collect();
    (!drafts.is_empty()).then_some(drafts)
}

/// Drops drafts whose normalised name repeats or whose poles coincide.
fn dedupe_drafts(drafts: Vec<FactorDraft>) -> Vec<FactorDraft> {
    let mut seen = std::collections::BTreeSet::new();
    drafts
        .into_iter()
        .filter(|d| d.positive.trim() != d.negative.trim())
        .filter(|d| seen.insert(normalize_name(&d.name)))
        .collect()
}

fn build_set(
    scenario: &str,
    outcome_positive: &str,
    outcome_negative: &str,
    drafts: &[FactorDraft],
) -> Result<FactorSet> {
    FactorSet::new(
        scenario,
        outcome_positive,
        outcome_negative,
        drafts
            .iter()
            .map(|d| (d.name.clone(), d.positive.clone(), d.negative.clone()))
            .collect(),
    )
}

fn drafts_of(set: &FactorSet) -> Vec<FactorDraft> {
    set.factors
        .iter()
        .map(|f| FactorDraft {
            name: f.name.clone(),
            positive: f.positive_description.clone(),
            negative: f.negative_description.clone(),
        })
        .collect()
}

/// Summarises both statement batches into a candidate factor set, merging
/// when there are more candidates than allowed.
pub fn extract_factors(
    oracle: &OracleClient,
    scenario: &str,
    positive: &StatementBatch,
    negative: &StatementBatch,
    cfg: &ElicitationConfig,
) -> Result<FactorSet> {
    cfg.validate()?;
    let raw = oracle.ask(
        Request::ExtractFactors {
            scenario,
            outcome_positive: &positive.outcome,
            outcome_negative: &negative.outcome,
            positive: &positive.statements,
            negative: &negative.statements,
            max: cfg.max_factors,
        },
        PROBE_TEMPERATURE,
        parse_drafts,
    )?;
    let mut drafts = dedupe_drafts(raw);
    for _ in 0..2 {
        if drafts.len() <= cfg.max_factors {
            break;
        }
        drafts = dedupe_drafts(oracle.ask(
            Request::MergeFactors {
                scenario,
                candidates: &drafts,
                max: cfg.max_factors,
            },
            PROBE_TEMPERATURE,
            parse_drafts,
        )?);
    }
    if drafts.is_empty() {
        return Err(Error::Elicitation("no usable factors were extracted".into()));
    }
    if drafts.len() > cfg.max_factors {
        return Err(Error::Elicitation(format!(
            "merging left {} factors, more than the limit of {}",
            drafts.len(),
            cfg.max_factors
        )));
    }
    build_set(scenario, &positive.outcome, &negative.outcome, &drafts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum SupportVerdict {
    Pass,
    Discard,
    Reformulate { replacement: FactorDraft },
}

fn parse_support(raw: &str) -> Option<SupportVerdict> {
    let t = raw.trim();
    let upper = t.to_uppercase();
    if upper == "PASS" {
        return Some(SupportVerdict::Pass);
    }
    if upper == "DISCARD" {
        return Some(SupportVerdict::Discard);
    }
    if upper.starts_with("REFORMULATE:") {
        let rest = &t["REFORMULATE:".len()..];
        return parse_factor_line(rest).map(|replacement| SupportVerdict::Reformulate { replacement });
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapVerdict {
    Distinct,
    Overlap,
}

fn parse_overlap(raw: &str) -> Option<OverlapVerdict> {
    match raw.trim().to_uppercase().as_str() {
        "DISTINCT" => Some(OverlapVerdict::Distinct),
        "OVERLAP" => Some(OverlapVerdict::Overlap),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageAnswer {
    pub unmapped: Vec<String>,
    pub proposed: Vec<FactorDraft>,
}

fn parse_coverage(raw: &str) -> Option<CoverageAnswer> {
    let lines = answer_lines(raw);
    if lines.len() == 1 && lines[0].eq_ignore_ascii_case("COVERED") {
        return Some(CoverageAnswer {
            unmapped: Vec::new(),
            proposed: Vec::new(),
        });
    }
    let mut out = CoverageAnswer {
        unmapped: Vec::new(),
        proposed: Vec::new(),
    };
    for l in &lines {
        let upper = l.to_uppercase();
        if upper.starts_with("UNMAPPED:") {
            out.unmapped.push(l["UNMAPPED:".len()..].trim().to_string());
        } else if upper.starts_with("ADD:") {
            out.proposed.push(parse_factor_line(&l["ADD:".len()..])?);
        } else {
            return None;
        }
    }
    (!out.unmapped.is_empty() || !out.proposed.is_empty()).then_some(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorCheck {
    pub factor: String,
    pub verdict: SupportVerdict,
    /// Raw oracle answer backing the verdict.
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapCheck {
    pub a: String,
    pub b: String,
    pub verdict: OverlapVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageCheck {
    pub condition: String,
    pub covered: bool,
    pub unmapped: Vec<String>,
    pub added: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationPass {
    pub factor_checks: Vec<FactorCheck>,
    pub overlap_checks: Vec<OverlapCheck>,
    pub coverage_checks: Vec<CoverageCheck>,
    /// Reformulations, discards, and additions applied in this pass.
    pub changes: usize,
    /// Problems the pass could not fix without breaking factor-set invariants.
    pub unresolved: Vec<String>,
}

impl VerificationPass {
    fn clean(&self) -> bool {
        self.changes == 0
            && self.unresolved.is_empty()
            && self
                .factor_checks
                .iter()
                .all(|c| c.verdict == SupportVerdict::Pass)
            && self
                .overlap_checks
                .iter()
                .all(|c| c.verdict == OverlapVerdict::Distinct)
            && self.coverage_checks.iter().all(|c| c.covered)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passes: Vec<VerificationPass>,
    pub iterations: usize,
    pub converged: bool,
}

impl VerificationReport {
    /// Verdicts of the last pass.
    pub fn last(&self) -> Option<&VerificationPass> {
        self.passes.last()
    }
}

/// Repeats support, overlap, and coverage checks, revising the factor set
/// after each pass, until a pass changes nothing or the cap is reached.
pub fn verify_factor_set(
    oracle: &OracleClient,
    factor_set: &FactorSet,
    sample_conditions: &[String],
    cfg: &ElicitationConfig,
) -> Result<(VerificationReport, FactorSet)> {
    cfg.validate()?;
    factor_set.validate()?;
    if sample_conditions.is_empty() {
        return Err(Error::Config("verification needs at least one sample condition".into()));
    }
    let mut current = factor_set.clone();
    let mut passes = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.iteration_cap {
        let (pass, next) = verification_pass(oracle, &current, sample_conditions, cfg)?;
        let clean = pass.clean();
        passes.push(pass);
        current = next;
        if clean {
            converged = true;
            break;
        }
    }
    Ok((
        VerificationReport {
            iterations: passes.len(),
            passes,
            converged,
        },
        current,
    ))
}

fn verification_pass(
    oracle: &OracleClient,
    set: &FactorSet,
    conditions: &[String],
    cfg: &ElicitationConfig,
) -> Result<(VerificationPass, FactorSet)> {
    let rebuild = |drafts: &[FactorDraft]| {
        build_set(&set.scenario, &set.outcome_positive, &set.outcome_negative, drafts)
    };
    let mut changes = 0;
    let mut unresolved = Vec::new();

    // discriminability, judged against the set as it entered the pass
    let mut factor_checks = Vec::new();
    let mut drafts: Vec<Option<FactorDraft>> = drafts_of(set).into_iter().map(Some).collect();
    for j in 0..set.len() {
        let verdict = oracle.ask(
            Request::CheckBinarySupport {
                factors: set,
                factor: j,
            },
            PROBE_TEMPERATURE,
            parse_support,
        )?;
        // the loop is sequential, so the newest transcript is this answer
        let rationale = oracle
            .transcripts()
            .last()
            .map(|t| t.response.clone())
            .unwrap_or_default();
        match &verdict {
            SupportVerdict::Pass => {}
            SupportVerdict::Discard => {
                if drafts.iter().flatten().count() > 1 {
                    drafts[j] = None;
                    changes += 1;
                } else {
                    unresolved.push(format!("cannot discard {}: it is the last factor", set.factors[j].name));
                }
            }
            SupportVerdict::Reformulate { replacement } => {
                let clash = drafts.iter().enumerate().any(|(i, d)| {
                    i != j
                        && d.as_ref()
                            .is_some_and(|d| normalize_name(&d.name) == normalize_name(&replacement.name))
                });
                if clash || replacement.positive.trim() == replacement.negative.trim() {
                    unresolved.push(format!(
                        "reformulation of {} as {} is not a valid distinct factor",
                        set.factors[j].name, replacement.name
                    ));
                } else {
                    drafts[j] = Some(replacement.clone());
                    changes += 1;
                }
            }
        }
        factor_checks.push(FactorCheck {
            factor: set.factors[j].name.clone(),
            verdict,
            rationale,
        });
    }
    let revised: Vec<FactorDraft> = drafts.into_iter().flatten().collect();
    let after_support = rebuild(&revised)?;

    // redundancy: drop the later factor of an overlapping pair
    let mut overlap_checks = Vec::new();
    let mut dropped = vec![false; after_support.len()];
    for a in 0..after_support.len() {
        for b in a + 1..after_support.len() {
            if dropped[a] || dropped[b] {
                continue;
            }
            let verdict = oracle.ask(
                Request::CheckOverlappingFactor {
                    factors: &after_support,
                    a,
                    b,
                },
                PROBE_TEMPERATURE,
                parse_overlap,
            )?;
            if verdict == OverlapVerdict::Overlap {
                dropped[b] = true;
                changes += 1;
            }
            overlap_checks.push(OverlapCheck {
                a: after_support.factors[a].name.clone(),
                b: after_support.factors[b].name.clone(),
                verdict,
            });
        }
    }
    let mut kept: Vec<FactorDraft> = drafts_of(&after_support)
        .into_iter()
        .zip(&dropped)
        .filter(|(_, d)| !**d)
        .map(|(f, _)| f)
        .collect();
    let after_overlap = rebuild(&kept)?;

    // coverage: unmapped information proposes new factors
    let mut coverage_checks = Vec::new();
    for condition in conditions {
        let answer = oracle.ask(
            Request::CheckConditionCoverage {
                factors: &after_overlap,
                condition,
            },
            PROBE_TEMPERATURE,
            parse_coverage,
        )?;
        let mut added = Vec::new();
        for d in answer.proposed {
            let dup = kept
                .iter()
                .any(|k| normalize_name(&k.name) == normalize_name(&d.name));
            if dup || d.positive.trim() == d.negative.trim() {
                continue;
            }
            if kept.len() >= cfg.max_factors {
                unresolved.push(format!(
                    "cannot add {}: the factor limit of {} is reached",
                    d.name, cfg.max_factors
                ));
                continue;
            }
            added.push(d.name.clone());
            kept.push(d);
            changes += 1;
        }
        let covered = answer.unmapped.is_empty() && added.is_empty();
        if !answer.unmapped.is_empty() && added.is_empty() {
            unresolved.push(format!("condition {condition:?} has unmapped information"));
        }
        coverage_checks.push(CoverageCheck {
            condition: condition.clone(),
            covered,
            unmapped: answer.unmapped,
            added,
        });
    }
    let next = rebuild(&kept)?;
    Ok((
        VerificationPass {
            factor_checks,
            overlap_checks,
            coverage_checks,
            changes,
            unresolved,
        },
        next,
    ))
}

/// A factor set plus how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSetRecord {
    pub factor_set: FactorSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statements: Option<[StatementBatch; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<VerificationReport>,
}

/// Statements, extraction, then verification. Without explicit sample
/// conditions, the elicited statements double as conditions, alternating
/// between the two outcomes.
pub fn elicit_factor_set(
    oracle: &OracleClient,
    scenario: &str,
    outcome_positive: &str,
    outcome_negative: &str,
    sample_conditions: &[String],
    cfg: &ElicitationConfig,
) -> Result<FactorSetRecord> {
    let pos = generate_statements(oracle, scenario, outcome_positive, cfg)?;
    let neg = generate_statements(oracle, scenario, outcome_negative, cfg)?;
    if pos.statements.is_empty() || neg.statements.is_empty() {
        return Err(Error::Elicitation("an outcome produced no statements".into()));
    }
    let candidate = extract_factors(oracle, scenario, &pos, &neg, cfg)?;
    let conditions: Vec<String> = if sample_conditions.is_empty() {
        let mut interleaved = Vec::new();
        for i in 0..pos.statements.len().max(neg.statements.len()) {
            interleaved.extend(pos.statements.get(i).cloned());
            interleaved.extend(neg.statements.get(i).cloned());
        }
        interleaved.truncate(cfg.coverage_conditions.max(1));
        interleaved
    } else {
        sample_conditions.to_vec()
    };
    let (report, factor_set) = verify_factor_set(oracle, &candidate, &conditions, cfg)?;
    Ok(FactorSetRecord {
        factor_set,
        statements: Some([pos, neg]),
        report: Some(report),
    })
}
