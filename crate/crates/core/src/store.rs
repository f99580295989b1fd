//! On-disk run directories.
//!
//! Layout of one run:
//!
//! ```text
//! <output_dir>/<run_id>/
//!   config.toml        resolved config snapshot
//!   events.ndjson      append-only event log; first line names the config hash
//!   decisions.ndjson   one line per decision
//!   transcript.txt     elicitation dialogue, when there was one
//!   rules/v<n>.txt     every rule version as a numbered list
//!   ledger.json        model-call ledger
//!   report.json / report.txt / series.csv
//! ```
//!
//! Nothing written here depends on wall-clock time, so a mock-provider run
//! repeated from the same config produces identical bytes.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gateway::CallLedger;
use crate::metrics::Report;
use crate::model::{DialogueHistory, RuleSet};

#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    config_hash: String,
    events: File,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

impl RunStore {
    /// Creates `<root>/<name>`, adding `-2`, `-3`, ... if it already exists.
    pub fn create(root: &Path, name: &str, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut dir = root.join(name);
        let mut n = 1;
        while dir.exists() {
            n += 1;
            dir = root.join(format!("{name}-{n}"));
        }
        fs::create_dir_all(dir.join("rules")).map_err(|e| Error::io(&dir, e))?;
        let config_hash = config.hash();
        write(
            &dir.join("config.toml"),
            &format!("# config_hash = \"{config_hash}\"\n{}", config.to_toml()),
        )?;
        let path = dir.join("events.ndjson");
        let events = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut store = RunStore {
            dir,
            config_hash,
            events,
        };
        store.append_event(
            &json!({"event": "run_started", "run": name, "config_hash": store.config_hash}),
        )?;
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn append_event<T: Serialize>(&mut self, event: &T) -> Result<()> {
        let line = serde_json::to_string(event)?;
        let path = self.dir.join("events.ndjson");
        writeln!(self.events, "{line}").map_err(|e| Error::io(&path, e))
    }

    pub fn note(&mut self, message: &str) -> Result<()> {
        self.append_event(&json!({"event": "note", "message": message}))
    }

    /// Writes `rules/v<n>.txt`.
    pub fn write_rules(&self, rules: &RuleSet) -> Result<PathBuf> {
        self.write_rules_as(&format!("v{}", rules.version), rules)
    }

    /// Writes `rules/<stem>.txt`.
    pub fn write_rules_as(&self, stem: &str, rules: &RuleSet) -> Result<PathBuf> {
        let path = self.dir.join("rules").join(format!("{stem}.txt"));
        write(
            &path,
            &format!(
                "# config_hash {}\n# origin {:?} source_model {}\n{}\n",
                self.config_hash,
                rules.origin,
                rules.source_model,
                rules.to_numbered_text()
            ),
        )?;
        Ok(path)
    }

    pub fn write_transcript(&self, name: &str, dialogue: &DialogueHistory) -> Result<()> {
        write(
            &self.dir.join(name),
            &format!(
                "# config_hash {}\n{}\n",
                self.config_hash,
                dialogue.transcript()
            ),
        )
    }

    pub fn write_ndjson<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let mut out = String::new();
        for r in rows {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        write(&self.dir.join(name), &out)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        write(&self.dir.join(name), &text)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        write(&self.dir.join(name), text)
    }

    pub fn write_ledger(&self, ledger: &CallLedger) -> Result<()> {
        self.write_json(
            "ledger.json",
            &json!({
                "config_hash": self.config_hash,
                "llm_calls": ledger.llm_calls(),
                "by_tag": ledger.tag_counts(),
                "entries": ledger.snapshot(),
            }),
        )
    }

    pub fn write_report(&self, report: &Report) -> Result<()> {
        let mut report = report.clone();
        report
            .metadata
            .insert("config_hash".to_string(), self.config_hash.clone());
        write(&self.dir.join("report.json"), &(report.to_json() + "\n"))?;
        write(&self.dir.join("report.txt"), &report.to_text())?;
        write(&self.dir.join("series.csv"), &report.series_csv())
    }
}

/// Loads `report.json` from a run directory.
pub fn read_report(dir: &Path) -> Result<Report> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Every regular file under `dir` with its contents, sorted by relative path.
pub fn snapshot(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    fn walk(root: &Path, cur: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(cur)
            .map_err(|e| Error::io(cur, e))?
            .filter_map(|e| e.ok())
            .collect();
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let bytes = fs::read(&p).map_err(|err| Error::io(&p, err))?;
                out.push((p.strip_prefix(root).unwrap_or(&p).to_path_buf(), bytes));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RuleOrigin;

    fn config() -> RunConfig {
        RunConfig::from_toml(
            "method = \"rules\"\n[model]\nprovider = \"heuristic\"\n",
            Path::new("/"),
            &[],
        )
        .unwrap()
    }

    #[test]
    fn layout_and_suffixing() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config();
        let mut a = RunStore::create(tmp.path(), "run", &cfg).unwrap();
        a.note("hello").unwrap();
        let rules =
            RuleSet::new(vec!["Prefer cold.".into()], 1, RuleOrigin::Elicited, "m").unwrap();
        let p = a.write_rules(&rules).unwrap();
        assert!(std::fs::read_to_string(p)
            .unwrap()
            .contains("1. Prefer cold."));
        let b = RunStore::create(tmp.path(), "run", &cfg).unwrap();
        assert!(b.dir().ends_with("run-2"));
        let events = std::fs::read_to_string(a.dir().join("events.ndjson")).unwrap();
        assert_eq!(events.lines().count(), 2);
        assert!(events.lines().next().unwrap().contains(&cfg.hash()));
        let snap = snapshot(a.dir()).unwrap();
        let names: Vec<_> = snap
            .iter()
            .map(|(p, _)| p.to_string_lossy().to_string())
            .collect();
        assert_eq!(names, ["config.toml", "events.ndjson", "rules/v1.txt"]);
    }
}
