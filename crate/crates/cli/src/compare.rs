//! Side-by-side table of finished runs.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::Path;

use crate::run::Summary;
use crate::CliError;

pub fn load_summary(path: &Path) -> Result<Summary, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{} is not a run summary: {e}", path.display())))
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub struct Comparison {
    pub table: String,
    /// Non-fatal problems, such as runs over different datasets.
    pub warnings: Vec<String>,
}

/// Tabulates labelled summaries. Accuracy differences are in percentage
/// points against the first run. Algorithms with several runs also get a
/// mean ± stddev line.
pub fn compare_runs(runs: &[(String, Summary)]) -> Result<Comparison, CliError> {
    if runs.len() < 2 {
        return Err(CliError::Usage(format!(
            "compare needs at least 2 summaries, got {}",
            runs.len()
        )));
    }
    let mut warnings = Vec::new();
    let reference = &runs[0].1;
    for (label, s) in &runs[1..] {
        if s.dataset_fingerprint != reference.dataset_fingerprint {
            warnings.push(format!(
                "{label} was run on a different dataset than {} (fingerprint {} vs {})",
                runs[0].0,
                short(&s.dataset_fingerprint),
                short(&reference.dataset_fingerprint)
            ));
        }
    }

    let width = runs.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(3);
    let mut t = String::new();
    writeln!(
        t,
        "{:<width$}  {:<17}  {:>6}  {:>9}  {:>9}  {:>8}  {:>12}",
        "run", "algorithm", "seed", "final_acc", "best_acc", "delta", "total_bytes"
    )
    .unwrap();
    let base = reference.final_avg_accuracy;
    for (label, s) in runs {
        writeln!(
            t,
            "{:<width$}  {:<17}  {:>6}  {:>8.2}%  {:>8.2}%  {:>+8.2}  {:>12}",
            label,
            s.algorithm,
            s.seed,
            100.0 * s.final_avg_accuracy,
            100.0 * s.best_avg_accuracy,
            100.0 * (s.final_avg_accuracy - base),
            s.bytes.total
        )
        .unwrap();
    }

    let mut by_alg: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (_, s) in runs {
        by_alg.entry(&s.algorithm).or_default().push(s.final_avg_accuracy);
    }
    if by_alg.values().any(|v| v.len() > 1) {
        writeln!(t).unwrap();
        writeln!(t, "{:<17}  {:>4}  final_acc (mean ± stddev)", "algorithm", "runs").unwrap();
        for (alg, accs) in &by_alg {
            let (m, sd) = mean_std(accs);
            writeln!(t, "{alg:<17}  {:>4}  {:.2}% ± {:.2}", accs.len(), 100.0 * m, 100.0 * sd).unwrap();
        }
    }
    Ok(Comparison { table: t, warnings })
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
