use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use spadseg::evalkit::{paired_failure_table, welch_ttest, DetectionOutcome, TTest};

use crate::config::{num, require, write_resolved, CompareConfig};
use crate::error::{CliError, CliResult, IoContext};
use crate::evaluate::{class_name, read_outcomes, run_dir, EvalScores, SCORES_FILE};

struct Entry {
    label: String,
    scores: EvalScores,
    outcomes: Vec<DetectionOutcome>,
}

fn load(dir: &Path) -> CliResult<Entry> {
    let path = dir.join(SCORES_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    let scores: EvalScores = toml::from_str(&text)
        .map_err(|e| CliError::Core(spadseg::Error::Format(format!("{}: {e}", path.display()))))?;
    let mut outcomes = Vec::new();
    for r in 0..scores.runs {
        outcomes.extend(read_outcomes(&run_dir(dir, r))?);
    }
    let label = format!(
        "{} ({})",
        scores.kind,
        dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    );
    Ok(Entry {
        label,
        scores,
        outcomes,
    })
}

pub fn run(cfg: &CompareConfig) -> CliResult<String> {
    let out = require(&cfg.out, "--out")?;
    if cfg.evals.len() < 2 {
        return Err(CliError::Usage("compare needs at least two --eval directories".into()));
    }
    write_resolved(out, cfg)?;
    let entries = cfg.evals.iter().map(|d| load(d)).collect::<CliResult<Vec<_>>>()?;
    let first = &entries[0];
    for e in &entries[1..] {
        if e.scores.runs != first.scores.runs {
            let (short, long) = if e.scores.runs < first.scores.runs { (e, first) } else { (first, e) };
            let missing: Vec<String> = (short.scores.runs..long.scores.runs).map(|r| format!("run{r}")).collect();
            return Err(CliError::Mismatch(format!(
                "`{}` has {} runs but `{}` has {}; missing in `{}`: {}",
                first.label,
                first.scores.runs,
                e.label,
                e.scores.runs,
                short.label,
                missing.join(", ")
            )));
        }
        if e.scores.dataset_fingerprint != first.scores.dataset_fingerprint {
            return Err(CliError::Mismatch(format!(
                "`{}` and `{}` were evaluated on different test sets",
                first.label, e.label
            )));
        }
        if e.scores.classes != first.scores.classes {
            return Err(CliError::Mismatch(format!(
                "`{}` and `{}` score different class sets",
                first.label, e.label
            )));
        }
    }
    if first.scores.runs < 2 {
        return Err(CliError::Core(spadseg::Error::SampleTooSmall(
            "t-tests need at least 2 runs per data type".into(),
        )));
    }

    let classes = first.scores.classes.clone();
    let mut t1 = String::new();
    let mut t2 = String::new();
    let mut summary = String::new();
    let _ = writeln!(t1, "Welch t-test of F-scores over {} runs (two-sided, alpha 0.05)", first.scores.runs);
    let _ = writeln!(t2, "Detection agreement per ground-truth instance, % (A / B)");
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            let (a, b) = (&entries[i], &entries[j]);
            let key = format!("{i}_{}_vs_{j}_{}", a.scores.kind, b.scores.kind);
            let _ = writeln!(t1, "\nA = {}, B = {}", a.label, b.label);
            let _ = writeln!(
                t1,
                "{:<10} {:>8} {:>8} {:>9} {:>8} {:>8}  verdict",
                "class", "mean A", "mean B", "t", "dof", "p"
            );
            let mut rows: Vec<(String, &Vec<f64>, &Vec<f64>)> = classes
                .iter()
                .map(|c| {
                    let k = c.to_string();
                    (class_name(*c), &a.scores.class_f1[&k], &b.scores.class_f1[&k])
                })
                .collect();
            rows.push(("aggregate".into(), &a.scores.aggregate_f1, &b.scores.aggregate_f1));
            for (name, xa, xb) in rows {
                let t: TTest = welch_ttest(xa, xb)?;
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                let _ = writeln!(
                    t1,
                    "{:<10} {:>8.4} {:>8.4} {:>9.3} {:>8.2} {:>8.4}  {}",
                    name,
                    mean(xa),
                    mean(xb),
                    t.t,
                    t.dof,
                    t.p_two_sided,
                    t.verdict.label()
                );
                let _ = writeln!(summary, "{key}_{name}_t = {}", num(t.t));
                let _ = writeln!(summary, "{key}_{name}_p = {}", num(t.p_two_sided));
                let _ = writeln!(summary, "{key}_{name}_verdict = \"{:?}\"", t.verdict);
            }

            let table = paired_failure_table(&a.outcomes, &b.outcomes)?;
            let _ = writeln!(t2, "\nA = {}, B = {}", a.label, b.label);
            let _ = writeln!(
                t2,
                "{:<10} {:>9} {:>13} {:>11} {:>8} {:>8}",
                "class", "instances", "both correct", "both wrong", "only A", "only B"
            );
            for (c, row) in table {
                let Some(r) = row else { continue };
                let _ = writeln!(
                    t2,
                    "{:<10} {:>9} {:>13.1} {:>11.1} {:>8.1} {:>8.1}",
                    class_name(c),
                    r.n_instances,
                    r.both_correct,
                    r.both_wrong,
                    r.only_a,
                    r.only_b
                );
                let name = class_name(c);
                let _ = writeln!(summary, "{key}_{name}_both_correct = {}", num(r.both_correct));
                let _ = writeln!(summary, "{key}_{name}_both_wrong = {}", num(r.both_wrong));
                let _ = writeln!(summary, "{key}_{name}_only_a = {}", num(r.only_a));
                let _ = writeln!(summary, "{key}_{name}_only_b = {}", num(r.only_b));
            }
        }
    }
    for (name, text) in [("ttest.txt", &t1), ("paired.txt", &t2), ("compare.toml", &summary)] {
        let path = out.join(name);
        fs::write(&path, text).at(&path)?;
    }
    Ok(format!("{t1}\n{t2}"))
}
