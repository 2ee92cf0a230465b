//! Plain-text renderings for `--format text`.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use factorlens_core::editing::EditRecord;
use factorlens_core::elicitation::FactorSetRecord;
use factorlens_core::em::TrainedModel;
use factorlens_core::inference::InferenceResult;
use factorlens_core::oracle::SyntheticOracleSpec;
use factorlens_core::probing::{BehavioralDataset, OrdinalAudit};
use factorlens_core::verbal::VerbalLevel;

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

pub fn synth(spec: &SyntheticOracleSpec, out: &Path, factor_set: &str) -> String {
    let p = &spec.true_params;
    format!(
        "wrote synthetic oracle spec to {}\n  N = {}, alpha = {:.4}, {} interactions\n  factor set {}\n",
        out.display(),
        p.n(),
        p.alpha,
        p.gamma.len(),
        short(factor_set)
    )
}

pub fn factor_set(record: &FactorSetRecord, hash: &str) -> String {
    let fs = &record.factor_set;
    let mut s = format!("factor set {} for {:?}\n", short(hash), fs.scenario);
    for f in &fs.factors {
        let _ = writeln!(s, "  #{:<2} {:<28} 1: {} / 0: {}", f.id, f.name, f.positive_description, f.negative_description);
    }
    if let Some(pass) = record.report.as_ref().and_then(|r| r.last()) {
        let _ = writeln!(s, "  verification: {pass:?}");
    }
    s
}

pub fn dataset(ds: &BehavioralDataset, hash: &str) -> String {
    format!(
        "dataset {}: {} observations over {} factors ({:?} plan, {} backend)\n",
        short(hash),
        ds.len(),
        ds.n(),
        ds.provenance.plan_mode,
        ds.provenance.backend
    )
}

pub fn fit(m: &TrainedModel, hash: &str) -> String {
    let d = &m.diagnostics;
    let mut s = format!(
        "model {}: {} iterations, {}\n",
        short(hash),
        d.iterations,
        if d.converged { "converged" } else { "NOT converged" }
    );
    let _ = writeln!(s, "  final Q {:.6}, marginal log-likelihood {:.6}", d.q_values.last().copied().unwrap_or(f64::NAN), d.final_marginal_log_likelihood);
    if let Some(it) = d.monotone_violation {
        let _ = writeln!(s, "  warning: objective decreased at iteration {it}");
    }
    if d.rank_deficient {
        let _ = writeln!(s, "  warning: design rank {} is deficient", d.design_rank);
    }
    s
}

pub fn inference(r: &InferenceResult) -> String {
    let mut s = format!("P(positive) = {:.4}", r.probability);
    if let Some(se) = r.standard_error {
        let _ = write!(s, " ± {se:.4}");
    }
    let _ = writeln!(s, "  (T = {})", r.samples_used);
    let bits: String = r
        .partition
        .observed_bits()
        .iter()
        .map(|b| match b {
            Some(true) => '1',
            Some(false) => '0',
            None => '?',
        })
        .collect();
    let _ = writeln!(s, "  partition {bits}");
    s
}

pub fn edit(rec: &EditRecord, before: &[f64], after: &[f64], model: &str) -> String {
    let mut s = format!("edit {} ({:?}) -> model {}\n", rec.id, rec.kind, short(model));
    let _ = writeln!(s, "  residuals {:?}, side effect {:.3e}", rec.residuals, rec.side_effect);
    let _ = writeln!(s, "  {:<6} {:>10} {:>10}", "factor", "AME before", "AME after");
    for (k, (b, a)) in before.iter().zip(after).enumerate() {
        let _ = writeln!(s, "  #{k:<5} {b:>10.4} {a:>10.4}");
    }
    s
}

pub fn audit(a: &OrdinalAudit) -> String {
    match a.ratio {
        Some(r) => format!(
            "ordinal consistency {:.1}% ({} of {} comparable pairs), {} violations\n",
            100.0 * r,
            a.consistent_pairs,
            a.comparable_pairs,
            a.violations.len()
        ),
        None => "no comparable pairs; ordinal consistency undefined\n".into(),
    }
}

pub fn model_card(m: &TrainedModel, hash: &str, ames: &[f64]) -> String {
    let fs = &m.factor_set;
    let p = &m.params;
    let mut s = format!("Model {hash}\n{}\n  positive: {}\n  negative: {}\n\n", fs.scenario, fs.outcome_positive, fs.outcome_negative);
    let _ = writeln!(s, "intercept  {:+.4}\n", p.alpha);
    let _ = writeln!(s, "{:<4} {:<28} {:>9} {:>9}", "", "factor", "beta", "AME");
    for (f, (b, a)) in fs.factors.iter().zip(p.beta.iter().zip(ames)) {
        let _ = writeln!(s, "#{:<3} {:<28} {:>+9.4} {:>+9.4}", f.id, f.name, b, a);
    }
    if p.gamma.is_empty() {
        s.push_str("\nno interactions\n");
    } else {
        s.push_str("\ninteractions\n");
        for ((i, j), g) in &p.gamma {
            let _ = writeln!(s, "  {} x {}  {g:+.4}", fs.factors[*i].name, fs.factors[*j].name);
        }
    }
    s.push_str("\nverbal map\n");
    for l in VerbalLevel::ALL {
        let _ = writeln!(s, "  {:<18} {:.4}", l.label(), m.map.prob(l));
    }
    let d = &m.diagnostics;
    let _ = writeln!(
        s,
        "\ndiagnostics: {} iterations, {}, design rank {}{}",
        d.iterations,
        if d.converged { "converged" } else { "not converged" },
        d.design_rank,
        if d.rank_deficient { " (deficient)" } else { "" }
    );
    let _ = writeln!(s, "fitted with {:?} on dataset {}", m.em_config.ablation, short(&m.dataset_hash));
    if !m.edits.is_empty() {
        s.push_str("\nedits\n");
        for e in &m.edits {
            let _ = writeln!(s, "  {} {} by {} ({:?})", e.id, e.timestamp.to_rfc3339(), e.author, e.kind);
        }
    }
    s
}

pub fn replay(manifest: &str, command: &str, outputs: &BTreeMap<String, String>) -> String {
    let mut s = format!("replayed {command} run {}: all output hashes identical\n", short(manifest));
    for (k, h) in outputs {
        let _ = writeln!(s, "  {k:<12} {h}");
    }
    s
}
