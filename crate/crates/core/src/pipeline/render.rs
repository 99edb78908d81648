use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::svg;
use super::{io_error, sha256_hex, Factor, FitEntry, GammBattery, ReportBundle, Result};
use crate::anova::{anova_summary_csv, comparisons_csv};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

struct Writer<'a> {
    root: &'a Path,
    manifest: Vec<ManifestEntry>,
}

impl Writer<'_> {
    fn put(&mut self, rel: &str, content: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        std::fs::write(&path, content).map_err(|e| io_error(&path, e))?;
        self.manifest.push(ManifestEntry {
            path: rel.to_string(),
            bytes: content.len(),
            sha256: sha256_hex(content.as_bytes()),
        });
        Ok(())
    }
}

fn f10(v: f64) -> String {
    format!("{v:.10}")
}

fn terms_csv(out: &mut String, variant: &str, stage: &str, fits: &[FitEntry]) {
    for fit in fits {
        for t in &fit.report.terms {
            let _ = writeln!(
                out,
                "{variant},{stage},{},{},{:?},{},{},{},{},{},{}",
                fit.benchmark,
                t.term_id,
                t.kind,
                t.columns,
                f10(t.edf),
                t.lambda.map(f10).unwrap_or_default(),
                f10(t.f_stat),
                t.ref_rank,
                f10(t.p_value.value())
            );
        }
    }
}

fn effects_csv(out: &mut String, variant: &str, stage: &str, fits: &[FitEntry]) {
    for fit in fits {
        for e in &fit.effects {
            for i in 0..e.grid.len() {
                let _ = writeln!(
                    out,
                    "{variant},{stage},{},{},{},{},{},{}",
                    fit.benchmark,
                    e.term_id,
                    f10(e.grid[i]),
                    f10(e.estimate[i]),
                    f10(e.ci_low[i]),
                    f10(e.ci_high[i])
                );
            }
        }
    }
}

fn battery_plots(w: &mut Writer<'_>, prefix: &str, battery: &GammBattery) -> Result<()> {
    if !battery.gamm_fits.is_empty() {
        let panels: Vec<(String, String, &_)> = battery
            .gamm_fits
            .iter()
            .filter_map(|f| f.effects.first().map(|e| (f.benchmark.clone(), format!("s(log_Param) on log_{}", f.benchmark), e)))
            .collect();
        w.put(&format!("plots/{prefix}gamm.svg"), &svg::effects_figure(&panels))?;
    }
    for (stage, fits) in [("by_type", &battery.by_type_fits), ("interplay", &battery.interplay_fits)] {
        for fit in fits.iter() {
            let panels: Vec<(String, String, &_)> =
                fit.effects.iter().map(|e| (e.term_id.clone(), format!("log_{}", fit.benchmark), e)).collect();
            if !panels.is_empty() {
                w.put(&format!("plots/{prefix}{stage}_{}.svg", slug(&fit.benchmark)), &svg::effects_figure(&panels))?;
            }
        }
    }
    Ok(())
}

fn p_text(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn summary_md(b: &ReportBundle) -> String {
    let m = &b.metadata;
    let mut s = String::new();
    let _ = writeln!(s, "# leaderlens report\n");
    let _ = writeln!(s, "- tool: {} {}", m.tool, m.version);
    let _ = writeln!(s, "- input: `{}` ({} bytes, sha256 `{}`)", m.config.input.display(), m.input_bytes, m.input_sha256);
    let _ = writeln!(
        s,
        "- records: {} parsed of {} rows ({} skipped, {} with zero parameters)",
        m.ingest.parsed,
        m.ingest.data_rows,
        m.ingest.skipped.len(),
        m.ingest.dropped_zero_params
    );
    let _ = writeln!(s, "- alpha: {}, seed: {}, weights: {}, log policy: {}", m.config.alpha, m.config.seed, m.config.weight_mode, m.config.log_policy);
    match m.timestamp {
        Some(t) => {
            let _ = writeln!(s, "- timestamp: {t}");
        }
        None => {
            let _ = writeln!(s, "- timestamp: unset");
        }
    }

    if !b.warnings.is_empty() {
        let _ = writeln!(s, "\n## Warnings\n");
        for w in &b.warnings {
            let _ = writeln!(s, "- {w}");
        }
    }

    let _ = writeln!(s, "\n## Benchmarks\n\n| benchmark | n | mean | sd | min | median | max |\n|---|---|---|---|---|---|---|");
    for c in &b.describe {
        match &c.stats {
            Some(st) => {
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} |",
                    c.column, st.n, st.mean, st.sd, st.min, st.median, st.max
                );
            }
            None => {
                let _ = writeln!(s, "| {} | 0 | | | | | |", c.column);
            }
        }
    }

    if let Some(corr) = &b.correlations {
        let _ = writeln!(s, "\n## Correlations\n\nMean absolute correlation with the other benchmarks:\n");
        for (c, v) in corr.mean_abs_offdiag() {
            let _ = writeln!(s, "- {c}: {v:.3}");
        }
    }

    for ft in &b.grouped_tests {
        let _ = writeln!(
            s,
            "\n## Grouped by {}\n\n| benchmark | F | p | significant pairs |\n|---|---|---|---|",
            ft.factor.name()
        );
        for r in &ft.reports {
            let sig = r.comparisons.iter().filter(|c| c.significant).count();
            let _ = writeln!(s, "| {} | {:.3} | {} | {} |", r.benchmark, r.anova.f_stat, p_text(r.anova.p.value()), sig);
        }
        if !ft.pair_frequencies.is_empty() {
            let _ = writeln!(s, "\nMost frequent significant pairs:\n");
            for p in ft.pair_frequencies.iter().take(5) {
                let _ = writeln!(s, "- {} vs {}: {} benchmarks", p.level_a, p.level_b, p.count);
            }
        }
    }

    let mut batteries = vec![("unweighted".to_string(), &b.gamm)];
    if let Some(wb) = &b.weighted {
        batteries.push((wb.mode.to_string(), &wb.fits));
    }
    for (variant, battery) in batteries {
        for (stage, fits) in battery.stages() {
            if fits.is_empty() {
                continue;
            }
            let _ = writeln!(
                s,
                "\n## GAMM {stage} ({variant})\n\n| response | term | edf | p | n |\n|---|---|---|---|---|"
            );
            for f in fits {
                for t in f.report.terms.iter() {
                    let _ = writeln!(
                        s,
                        "| log_{} | {} | {:.2} | {} | {} |",
                        f.benchmark,
                        t.term_id,
                        t.edf,
                        p_text(t.p_value.value()),
                        f.report.n_used
                    );
                }
            }
        }
    }

    if let Some(e) = &b.embedding {
        let emb = &e.embedding;
        let _ = writeln!(
            s,
            "\n## t-SNE\n\n- points: {} ({} excluded for missing scores)\n- perplexity {}, {} iterations, seed {}\n- KL after exaggeration: {:.4}, final: {:.4}",
            emb.keys.len(),
            e.excluded.len(),
            emb.hyperparams.perplexity,
            emb.hyperparams.iterations,
            emb.seed,
            emb.kl_at(emb.hyperparams.exaggeration_iters).unwrap_or(f64::NAN),
            emb.final_kl()
        );
    }
    s
}

/// Writes the bundle's files under `dir` and returns the manifest, which is
/// also written as `manifest.json` (its own entry is last).
pub fn render_report(bundle: &ReportBundle, dir: &Path) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut w = Writer { root: dir, manifest: Vec::new() };
    w.put("report.json", &bundle.to_json())?;
    w.put("summary.md", &summary_md(bundle))?;

    let mut describe = String::from("column,n,mean,sd,min,median,max\n");
    for c in &bundle.describe {
        if let Some(st) = &c.stats {
            let _ = writeln!(describe, "{},{},{},{},{},{},{}", c.column, st.n, f10(st.mean), f10(st.sd), f10(st.min), f10(st.median), f10(st.max));
        }
    }
    w.put("tables/describe.csv", &describe)?;

    if let Some(corr) = &bundle.correlations {
        w.put("tables/correlations.csv", &corr.to_csv())?;
        w.put("plots/correlations.svg", &svg::heatmap(&corr.columns, &corr.r, "Benchmark correlations"))?;
    }

    for ft in &bundle.grouped_tests {
        let name = ft.factor.name();
        w.put(&format!("tables/anova_{name}.csv"), &anova_summary_csv(&ft.reports))?;
        w.put(&format!("tables/tukey_{name}.csv"), &comparisons_csv(&ft.reports))?;
        let mut pairs = String::from("level_a,level_b,count,benchmarks\n");
        for p in &ft.pair_frequencies {
            let _ = writeln!(pairs, "\"{}\",\"{}\",{},{}", p.level_a, p.level_b, p.count, p.benchmarks.join(";"));
        }
        w.put(&format!("tables/pairs_{name}.csv"), &pairs)?;
    }

    let mut variants = vec![("unweighted".to_string(), String::new(), &bundle.gamm)];
    if let Some(wb) = &bundle.weighted {
        variants.push((wb.mode.to_string(), format!("{}_", slug(&wb.mode.to_string())), &wb.fits));
    }
    let any_fit = variants.iter().any(|(_, _, b)| b.stages().iter().any(|(_, f)| !f.is_empty()));
    if any_fit {
        let mut terms = String::from("variant,stage,response,term,kind,columns,edf,lambda,f,ref_rank,p\n");
        let mut effects = String::from("variant,stage,response,term,x,estimate,ci_low,ci_high\n");
        for (variant, _, battery) in &variants {
            for (stage, fits) in battery.stages() {
                terms_csv(&mut terms, variant, stage, fits);
                effects_csv(&mut effects, variant, stage, fits);
            }
        }
        w.put("tables/gamm_terms.csv", &terms)?;
        w.put("tables/partial_effects.csv", &effects)?;
        for (_, prefix, battery) in &variants {
            battery_plots(&mut w, prefix, battery)?;
        }
    }

    if let Some(e) = &bundle.embedding {
        w.put("tables/embedding.csv", &e.to_csv())?;
        for f in Factor::ALL {
            let title = format!("t-SNE coloured by {}", f.name());
            w.put(&format!("plots/tsne_{}.svg", f.name()), &svg::scatter(&e.embedding.coords, e.labels(f), &title))?;
        }
    }

    let mut manifest_json = serde_json::to_string_pretty(&w.manifest).expect("manifest serializes");
    manifest_json.push('\n');
    w.put("manifest.json", &manifest_json)?;
    Ok(w.manifest)
}
