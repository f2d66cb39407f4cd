use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::run::Run;
use crate::CliError;

/// JSON artifacts of every other subcommand under `<output>/artifacts/`.
fn collect(root: &Path) -> Result<Vec<(String, String, std::path::PathBuf)>, CliError> {
    let artifacts = root.join("artifacts");
    let mut out = Vec::new();
    let Ok(dirs) = fs::read_dir(&artifacts) else {
        return Ok(out);
    };
    let mut dirs: Vec<_> = dirs.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for dir in dirs {
        let sub = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if sub == "report" {
            continue;
        }
        let mut files: Vec<_> = fs::read_dir(&dir)
            .map_err(|e| CliError::Io(dir.clone(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            out.push((sub.clone(), name, f));
        }
    }
    Ok(out)
}

fn scalars(prefix: &str, v: &Value, depth: usize, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) if depth > 0 => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                scalars(&key, x, depth - 1, out);
            }
        }
        Value::Number(n) => out.push((prefix.to_string(), n.to_string())),
        Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        _ => {}
    }
}

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.4}"),
        None => "n/a".to_string(),
    }
}

/// Attribute order, description similarity and recall tables.
fn summary_tables(sections: &BTreeMap<String, BTreeMap<String, Value>>, md: &mut String) {
    let get = |sub: &str, file: &str| sections.get(sub).and_then(|f| f.get(file));
    if let Some(attrs) = get("structure", "structure.json").and_then(|d| d["result"]["attributes"].as_array()) {
        let _ = writeln!(md, "\n## Attributes by rank product\n\n| attribute | psi | group |\n|---|---|---|");
        for a in attrs {
            let group = a["group_id"].as_u64().map_or_else(|| "n/a".to_string(), |g| g.to_string());
            let _ = writeln!(md, "| {} | {} | {group} |", a["attribute"].as_str().unwrap_or(""), num(&a["psi"]));
        }
        if let Some(kw) = get("structure", "structure.json").map(|d| &d["result"]["kruskal_wallis"]) {
            let _ = writeln!(md, "\nKruskal-Wallis H = {}, p = {}", num(&kw["statistic"]), num(&kw["p_value"]));
        }
    }
    if let Some(sim) = get("simstats", "similarity.json") {
        let _ = writeln!(
            md,
            "\n## Description similarity\n\n| pairs | mean | std |\n|---|---|---|\n| intra-image | {} | {} |\n| inter-image | {} | {} |",
            num(&sim["intra_mean"]),
            num(&sim["intra_std"]),
            num(&sim["inter_mean"]),
            num(&sim["inter_std"]),
        );
        if sim["anosim"].is_object() {
            let a = &sim["anosim"];
            let _ = writeln!(md, "\nANOSIM R = {}, p = {}", num(&a["statistic"]), num(&a["p_value"]));
        }
    }
    if let Some(rec) = get("retrieval", "recall.json").map(|d| &d["recall"]).filter(|r| r.is_object()) {
        let _ = writeln!(md, "\n## Top-K recall\n\n| K | recall |\n|---|---|");
        if let (Some(ks), Some(rs)) = (rec["ks"].as_array(), rec["recall"].as_array()) {
            for (k, r) in ks.iter().zip(rs) {
                let pct = r.as_f64().map_or_else(|| "n/a".to_string(), |x| format!("{:.2}%", 100.0 * x));
                let _ = writeln!(md, "| {k} | {pct} |");
            }
        }
    }
}

pub fn build(run: &mut Run, output_dir: &Path) -> Result<(), CliError> {
    let found = collect(output_dir)?;
    let mut sections: BTreeMap<String, BTreeMap<String, Value>> = BTreeMap::new();
    for (sub, name, path) in &found {
        if name != "manifest.json" {
            run.input(&format!("{sub}/{name}"), Some(path.clone()))?;
        }
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.clone(), e))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| fabrictext::Error::Parse {
                source_name: path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
        let entry = if name == "manifest.json" {
            json!({"config_hash": value["config_hash"], "params": value["params"]})
        } else {
            value.get("data").cloned().unwrap_or(value)
        };
        sections.entry(sub.clone()).or_default().insert(name.clone(), entry);
    }

    let mut md = String::from("# Analysis report\n");
    if sections.is_empty() {
        md.push_str("\nNo artifacts found.\n");
    }
    summary_tables(&sections, &mut md);
    for (sub, files) in &sections {
        let _ = writeln!(md, "\n## {sub}\n");
        if let Some(h) = files.get("manifest.json").and_then(|m| m["config_hash"].as_str()) {
            let _ = writeln!(md, "config hash `{h}`\n");
        }
        for (name, data) in files.iter().filter(|(n, _)| n.as_str() != "manifest.json") {
            let mut rows = Vec::new();
            scalars("", data, 2, &mut rows);
            if rows.is_empty() {
                continue;
            }
            let _ = writeln!(md, "### {name}\n\n| key | value |\n|---|---|");
            for (k, v) in rows {
                let _ = writeln!(md, "| {k} | {v} |");
            }
            md.push('\n');
        }
    }
    run.write_json("report.json", &sections)?;
    run.write_bytes("report.md", md.as_bytes())
}
