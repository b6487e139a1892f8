use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clt_lab::rates::Setting;

use crate::error::{CliError, CliResult};
use crate::experiments::ResultsFile;
use crate::output::RESULTS;

/// `results.json` in `dir` and its immediate subdirectories, sorted by path.
pub fn collect(dir: &Path) -> CliResult<Vec<(PathBuf, ResultsFile)>> {
    let mut paths = Vec::new();
    let direct = dir.join(RESULTS);
    if direct.is_file() {
        paths.push(direct);
    }
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let candidate = entry.path().join(RESULTS);
        if entry.path().is_dir() && candidate.is_file() {
            paths.push(candidate);
        }
    }
    if paths.is_empty() {
        return Err(CliError::MissingResults(dir.display().to_string()));
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
            let r: ResultsFile =
                serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", p.display())))?;
            Ok((p, r))
        })
        .collect()
}

fn setting_label(s: &Setting) -> String {
    match *s {
        Setting::IndepW1 { delta } => format!("independent W1, δ={delta}"),
        Setting::LocalW1 { delta } => format!("local dependence W1, δ={delta}"),
        Setting::MdepWp { p, q } => format!("M-dependent Wp, p={p}, q={q}"),
        Setting::MarkovW1 { delta } => format!("Markov W1, δ={delta}"),
        Setting::MarkovWp { p, q } => format!("Markov Wp, p={p}, q={q}"),
    }
}

fn mark(passed: Option<bool>) -> &'static str {
    match passed {
        Some(true) => "✓",
        Some(false) => "✗",
        None => "–",
    }
}

/// Markdown table of every result; the flag is true when any row failed.
pub fn render(results: &[(PathBuf, ResultsFile)]) -> (String, bool) {
    let mut out = String::new();
    out.push_str("| name | experiment | setting | p | slope | 95% CI | theory | window | pass |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    let mut any_fail = false;
    for (_, r) in results {
        any_fail |= r.passed == Some(false);
        let (setting, p, slope, ci, theory, window) = match &r.rate {
            Some(s) => (
                s.setting.as_ref().map(setting_label).unwrap_or_else(|| "–".into()),
                format!("{}", s.p),
                format!("{:.3}", s.slope),
                format!("[{:.3}, {:.3}]", s.slope_ci.0, s.slope_ci.1),
                s.theoretical_exponent.map(|a| format!("{a:.3}")).unwrap_or_else(|| "–".into()),
                s.window
                    .map(|w| {
                        let b = |v: Option<f64>, inf: &str| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| inf.into());
                        format!("[{}, {}]", b(w.min, "−∞"), b(w.max, "∞"))
                    })
                    .unwrap_or_else(|| "–".into()),
            ),
            None => (r.summary.replace('|', "/"), "–".into(), "–".into(), "–".into(), "–".into(), "–".into()),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {setting} | {p} | {slope} | {ci} | {theory} | {window} | {} |",
            r.name,
            r.experiment,
            mark(r.passed)
        );
    }
    (out, any_fail)
}
