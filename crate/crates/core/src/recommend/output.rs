use std::io::Write;

use crate::data::Covariates;
use crate::error::Result;

use super::FittedRule;

/// Writes `id,set,itr,<s>1..<s>k` rows (labels 1-based) after `#`-prefixed
/// header lines.
pub fn write_predictions<W: Write>(mut out: W, rule: &FittedRule, x: &Covariates, header: &[String]) -> Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let scores = rule.scores_batch(x)?;
    let mut wtr = csv::Writer::from_writer(out);
    let mut cols = vec!["id".to_string(), "set".to_string(), "itr".to_string()];
    cols.extend((1..=rule.k()).map(|j| format!("{}{j}", rule.score_name())));
    wtr.write_record(&cols)?;
    for (i, s) in scores.iter().enumerate() {
        let mut rec = vec![
            (i + 1).to_string(),
            rule.recommend_from_scores(s)?.to_string(),
            (rule.itr_from_scores(s) + 1).to_string(),
        ];
        rec.extend(s.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
