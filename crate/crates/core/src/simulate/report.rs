use std::io::Write;

use crate::error::Result;

use super::study::{Cell, StudyReport};

fn cell(c: &Option<Cell>) -> [String; 2] {
    match c {
        Some(c) => [format!("{:.6}", c.mean), format!("{:.6}", c.se)],
        None => [String::new(), String::new()],
    }
}

/// Writes the report as `#` provenance lines followed by a CSV table with
/// one row per method and rule. Single-valued rows repeat the value in
/// both interval columns.
pub fn write_study_csv<W: Write>(report: &StudyReport, mut out: W) -> Result<()> {
    let spec = &report.spec;
    let floored: usize = report.replications.iter().map(|r| r.floored).sum();
    let fractions = report.replications.iter().fold([0.0; 3], |acc, r| {
        [0, 1, 2].map(|i| acc[i] + r.region_fractions[i] / report.replications.len() as f64)
    });
    writeln!(out, "# example: {}", spec.example)?;
    writeln!(out, "# p: {}", spec.p)?;
    writeln!(out, "# n_train: {}", spec.n_train)?;
    writeln!(out, "# n_test: {}", spec.n_test)?;
    writeln!(out, "# replications: {}", spec.replications)?;
    writeln!(out, "# seed: {}", spec.seed)?;
    writeln!(out, "# c: {}", spec.c)?;
    writeln!(out, "# noise: {} (sd {})", spec.noise.label(), spec.noise.sd())?;
    writeln!(out, "# tuning: {}", spec.folds.label())?;
    let grid: Vec<String> = spec.lambda_grid().iter().map(|l| l.to_string()).collect();
    writeln!(out, "# lambda_grid: {}", grid.join(" "))?;
    let deltas: Vec<String> = spec.deltas.iter().map(|d| format!("{d:.4}")).collect();
    writeln!(out, "# delta_grid: {}", deltas.join(" "))?;
    writeln!(out, "# kernels: plugin={} two-step={} one-step={}", spec.plugin_kernel, spec.two_step_kernel(), spec.one_step_kernel())?;
    writeln!(out, "# max_sweeps: {}", spec.max_sweeps)?;
    writeln!(out, "# methods: {}", report.methods.join(" "))?;
    writeln!(
        out,
        "# test_region_fractions: {:.4} {:.4} {:.4}",
        fractions[0], fractions[1], fractions[2]
    )?;
    writeln!(out, "# floored_outcomes: {floored}")?;
    let capped = report
        .replications
        .iter()
        .flat_map(|r| &r.outcomes)
        .filter(|o| !o.converged)
        .count();
    writeln!(out, "# unconverged_final_fits: {capped}")?;
    for r in &report.replications {
        for (m, why) in &r.failures {
            writeln!(out, "# failure: replication {} {m}: {why}", r.index)?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method", "rule", "r1_lower", "r1_lower_se", "r1_upper", "r1_upper_se", "r2_lower", "r2_lower_se",
        "r2_upper", "r2_upper_se", "r3_lower", "r3_lower_se", "r3_upper", "r3_upper_se", "all", "all_se", "reps",
    ])?;
    for row in &report.summary {
        let mut rec = vec![row.method.clone(), row.rule.clone()];
        for (lo, hi) in &row.regions {
            rec.extend(cell(lo));
            rec.extend(cell(hi));
        }
        rec.extend(cell(&row.all));
        rec.push(row.all.map(|c| c.count).unwrap_or(0).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the first replication's test points: the two leading
/// covariates, the region, and every method's recommendations (1-based).
pub fn write_points_csv<W: Write>(report: &StudyReport, out: W) -> Result<()> {
    let first = report.replications.first();
    let methods: Vec<&str> = first
        .map(|r| r.outcomes.iter().map(|o| o.method.as_str()).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["id".to_string(), "x1".into(), "x2".into(), "region".into()];
    for m in &methods {
        head.push(format!("{m}_itr"));
        head.push(format!("{m}_set"));
    }
    w.write_record(&head)?;
    for (i, pt) in first.and_then(|r| r.points.as_ref()).into_iter().flatten().enumerate() {
        let mut rec = vec![(i + 1).to_string(), pt.x[0].to_string(), pt.x[1].to_string(), pt.region.to_string()];
        for (itr, set) in pt.itr.iter().zip(&pt.sets) {
            rec.push((itr + 1).to_string());
            rec.push(set.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
