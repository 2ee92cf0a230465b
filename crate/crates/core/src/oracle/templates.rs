//! Prompt templates and response grammars for every oracle interaction.
//!
//! Each template asks for a tightly constrained answer so that parsing is a
//! case-insensitive exact match after trimming.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::factor::{FactorConfiguration, FactorSet};
use crate::verbal::VerbalLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TemplateId {
    GenerateStatements,
    ExtractFactors,
    MergeFactors,
    CheckBinarySupport,
    CheckOverlappingFactor,
    CheckConditionCoverage,
    VerbalProbability,
    FactorDetermination,
    MonteCarloSampling,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::GenerateStatements => "GENERATE_STATEMENTS",
            TemplateId::ExtractFactors => "EXTRACT_FACTORS",
            TemplateId::MergeFactors => "MERGE_FACTORS",
            TemplateId::CheckBinarySupport => "CHECK_BINARY_SUPPORT",
            TemplateId::CheckOverlappingFactor => "CHECK_OVERLAPPING_FACTOR",
            TemplateId::CheckConditionCoverage => "CHECK_CONDITION_COVERAGE",
            TemplateId::VerbalProbability => "VERBAL_PROBABILITY",
            TemplateId::FactorDetermination => "FACTOR_DETERMINATION",
            TemplateId::MonteCarloSampling => "MONTE_CARLO_SAMPLING",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A factor proposed by the oracle before it joins a validated [`FactorSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorDraft {
    pub name: String,
    pub positive: String,
    pub negative: String,
}

/// One structured question for the oracle.
#[derive(Debug, Clone, Copy)]
pub enum Request<'a> {
    GenerateStatements {
        scenario: &'a str,
        outcome: &'a str,
        count: usize,
        attempt: usize,
    },
    ExtractFactors {
        scenario: &'a str,
        outcome_positive: &'a str,
        outcome_negative: &'a str,
        positive: &'a [String],
        negative: &'a [String],
        max: usize,
    },
    MergeFactors {
        scenario: &'a str,
        candidates: &'a [FactorDraft],
        max: usize,
    },
    CheckBinarySupport {
        factors: &'a FactorSet,
        factor: usize,
    },
    CheckOverlappingFactor {
        factors: &'a FactorSet,
        a: usize,
        b: usize,
    },
    CheckConditionCoverage {
        factors: &'a FactorSet,
        condition: &'a str,
    },
    VerbalProbability {
        factors: &'a FactorSet,
        config: &'a FactorConfiguration,
    },
    FactorDetermination {
        factors: &'a FactorSet,
        factor: usize,
        condition: &'a str,
    },
    MonteCarloSampling {
        factors: &'a FactorSet,
        observed: &'a [Option<bool>],
        condition: &'a str,
        sample_index: usize,
    },
}

impl Request<'_> {
    pub fn template(&self) -> TemplateId {
        match self {
            Request::GenerateStatements { .. } => TemplateId::GenerateStatements,
            Request::ExtractFactors { .. } => TemplateId::ExtractFactors,
            Request::MergeFactors { .. } => TemplateId::MergeFactors,
            Request::CheckBinarySupport { .. } => TemplateId::CheckBinarySupport,
            Request::CheckOverlappingFactor { .. } => TemplateId::CheckOverlappingFactor,
            Request::CheckConditionCoverage { .. } => TemplateId::CheckConditionCoverage,
            Request::VerbalProbability { .. } => TemplateId::VerbalProbability,
            Request::FactorDetermination { .. } => TemplateId::FactorDetermination,
            Request::MonteCarloSampling { .. } => TemplateId::MonteCarloSampling,
        }
    }

    pub fn render(&self) -> String {
        match *self {
            Request::GenerateStatements {
                scenario,
                outcome,
                count,
                attempt,
            } => format!(
                "Scenario: {scenario}\n\
                 Write {count} distinct, self-contained situational descriptions, each of which \
                 would make the following outcome occur: {outcome}.\n\
                 Cover as many different aspects of the situation as possible.\n\
                 Answer with exactly one description per line and nothing else.\n\
                 (request {attempt})"
            ),
            Request::ExtractFactors {
                scenario,
                outcome_positive,
                outcome_negative,
                positive,
                negative,
                max,
            } => format!(
                "Scenario: {scenario}\n\
                 Descriptions supporting \"{outcome_positive}\":\n{}\n\
                 Descriptions supporting \"{outcome_negative}\":\n{}\n\
                 Summarize these descriptions into at most {max} semantically distinct binary \
                 factors. For each factor give a short name, what value 1 means, and what value \
                 0 means.\n\
                 Answer with exactly one factor per line in the form: name | meaning of 1 | meaning of 0",
                bullet_list(positive),
                bullet_list(negative)
            ),
            Request::MergeFactors {
                scenario,
                candidates,
                max,
            } => format!(
                "Scenario: {scenario}\n\
                 Candidate binary factors:\n{}\n\
                 Merge overlapping candidates so that at most {max} factors remain.\n\
                 Answer with exactly one factor per line in the form: name | meaning of 1 | meaning of 0",
                candidates
                    .iter()
                    .map(|d| format!("- {} | {} | {}", d.name, d.positive, d.negative))
                    .collect::<Vec<_>>()
                    .join("\n")
            ),
            Request::CheckBinarySupport { factors, factor } => {
                let f = &factors.factors[factor];
                format!(
                    "Scenario: {}\nOutcomes: \"{}\" versus \"{}\".\n\
                     Factor {}: value 1 means \"{}\"; value 0 means \"{}\".\n\
                     Do the two values of this factor support different outcomes?\n\
                     Answer with exactly one of: PASS, DISCARD, or \
                     REFORMULATE: name | meaning of 1 | meaning of 0",
                    factors.scenario,
                    factors.outcome_positive,
                    factors.outcome_negative,
                    f.name,
                    f.positive_description,
                    f.negative_description
                )
            }
            Request::CheckOverlappingFactor { factors, a, b } => {
                let (fa, fb) = (&factors.factors[a], &factors.factors[b]);
                format!(
                    "Scenario: {}\n\
                     Factor A ({}): 1 = \"{}\", 0 = \"{}\".\n\
                     Factor B ({}): 1 = \"{}\", 0 = \"{}\".\n\
                     Do these two factors describe the same aspect of the situation?\n\
                     Answer with exactly one of: DISTINCT, OVERLAP",
                    factors.scenario,
                    fa.name,
                    fa.positive_description,
                    fa.negative_description,
                    fb.name,
                    fb.positive_description,
                    fb.negative_description
                )
            }
            Request::CheckConditionCoverage { factors, condition } => format!(
                "Scenario: {}\nFactors:\n{}\nCondition: {condition}\n\
                 Is every decision-relevant piece of information in the condition captured by \
                 one of the factors?\n\
                 Answer COVERED, or list each uncovered piece as \"UNMAPPED: text\" followed by \
                 one proposed factor per line as \"ADD: name | meaning of 1 | meaning of 0\"",
                factors.scenario,
                factor_list(factors)
            ),
            Request::VerbalProbability { factors, config } => format!(
                "Scenario: {}\nConsider a situation in which:\n{}\n\
                 How likely is the outcome \"{}\"?\n\
                 Answer with exactly one of: {}",
                factors.scenario,
                describe_config(factors, config),
                factors.outcome_positive,
                level_choices()
            ),
            Request::FactorDetermination {
                factors,
                factor,
                condition,
            } => {
                let f = &factors.factors[factor];
                format!(
                    "Scenario: {}\nCondition: {condition}\n\
                     Factor {}: value 1 means \"{}\"; value 0 means \"{}\".\n\
                     Does the condition imply the factor's value?\n\
                     Answer with exactly one of: 1, 0, unknown",
                    factors.scenario, f.name, f.positive_description, f.negative_description
                )
            }
            Request::MonteCarloSampling {
                factors,
                observed,
                condition,
                sample_index,
            } => {
                let known: Vec<String> = observed
                    .iter()
                    .enumerate()
                    .filter_map(|(j, v)| {
                        v.map(|b| format!("- {} = {}", factors.factors[j].name, u8::from(b)))
                    })
                    .collect();
                format!(
                    "Scenario: {}\nCondition: {condition}\nFactors:\n{}\n\
                     Known values:\n{}\n\
                     Imagine one concrete, plausible situation consistent with the condition and \
                     assign every factor a value, keeping the known values.\n\
                     Answer with exactly {} characters of 0/1 in factor order and nothing else.\n\
                     (sample {sample_index})",
                    factors.scenario,
                    factor_list(factors),
                    if known.is_empty() {
                        "- none".to_string()
                    } else {
                        known.join("\n")
                    },
                    factors.len()
                )
            }
        }
    }
}

fn bullet_list(items: &[String]) -> String {
    items
        .iter()
        .map(|s| format!("- {s}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn factor_list(factors: &FactorSet) -> String {
    factors
        .factors
        .iter()
        .map(|f| {
            format!(
                "{}. {}: 1 = \"{}\", 0 = \"{}\"",
                f.id + 1,
                f.name,
                f.positive_description,
                f.negative_description
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn describe_config(factors: &FactorSet, config: &FactorConfiguration) -> String {
    factors
        .factors
        .iter()
        .map(|f| {
            let d = if config.get(f.id) {
                &f.positive_description
            } else {
                &f.negative_description
            };
            format!("- {d}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn level_choices() -> String {
    VerbalLevel::ALL
        .iter()
        .map(|l| l.label())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Suffix appended for the single corrective reprompt.
pub fn reprompt_suffix(template: TemplateId) -> String {
    format!(
        "\n\nYour previous answer could not be parsed. Follow the {} answer format exactly.",
        template.as_str().to_lowercase().replace('_', " ")
    )
}

pub fn parse_factor_line(line: &str) -> Option<FactorDraft> {
    let parts: Vec<&str> = line.split('|').map(str::trim).collect();
    match parts.as_slice() {
        [name, pos, neg] if !name.is_empty() && !pos.is_empty() && !neg.is_empty() => {
            Some(FactorDraft {
                name: name.to_string(),
                positive: pos.to_string(),
                negative: neg.to_string(),
            })
        }
        _ => None,
    }
}

/// Strips list markers such as `1.`, `2)`, `-`, `*` from a response line.
pub fn strip_list_marker(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim();
        }
    }
    t
}

/// Lines of a multi-line answer with markers stripped and blanks dropped.
pub fn answer_lines(raw: &str) -> Vec<String> {
    raw.lines()
        .map(strip_list_marker)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}
