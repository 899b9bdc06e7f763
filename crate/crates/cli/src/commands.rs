//! The batch subcommands: simulate, chart, optimize, evaluate-trajectory,
//! and report. Each writes its artifacts plus a manifest into the output
//! directory; identical configs reproduce byte-identical CSVs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use emschart::chart_tsne::Embedding;
use emschart::features::{CovarianceFeature, DissimilarityMatrix};
use emschart::metrics::{quantile, MetricReport};
use emschart::optimizer::{
    baseline_configs, evaluate_config, exhaustive_search, greedy_search, BaselineKind, ChartMethod,
    ConfigChoice, PipelineContext, SearchSpace,
};
use emschart::scene::Vec3;

use crate::artifacts::{
    cdf_svg, covariances_from_bytes, covariances_to_bytes, dissimilarity_from_bytes,
    dissimilarity_to_bytes, fmt_f64, sha256_hex, trajectory_svg, ArtifactWriter, FsObjectiveCache,
    OutDirLock,
};
use crate::config::ExperimentConfig;

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(cfg.to_toml()?.as_bytes()))
}

/// Builds the pipeline context for a config; `extra_points` are appended
/// after the lattice (trajectory evaluation).
pub fn build_context(cfg: &ExperimentConfig, extra_points: &[Vec3]) -> Result<(PipelineContext, usize)> {
    let scene = cfg.build_scene(extra_points)?;
    let lattice_n = scene.test_points.len() - extra_points.len();
    let anchors = cfg.select_anchors(&scene, lattice_n)?;
    let mut id = config_hash(cfg)?;
    if !extra_points.is_empty() {
        id.push_str(&format!("+traj{}", extra_points.len()));
    }
    let ctx = PipelineContext::new(scene, anchors, cfg.pipeline_config(), id)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok((ctx, lattice_n))
}

/// The panel configuration a scenario runs under, from `ems.active`.
pub fn active_choice(cfg: &ExperimentConfig, ctx: &PipelineContext) -> Result<ConfigChoice> {
    choice_from_name(
        &cfg.ems.active,
        &cfg.ems.active_indices,
        cfg.ems.codebook_size,
        cfg.seeds().random_baseline,
        ctx,
    )
}

pub fn choice_from_name(
    name: &str,
    indices: &[usize],
    codebook_size: usize,
    random_seed: u64,
    ctx: &PipelineContext,
) -> Result<ConfigChoice> {
    let panels = ctx.scene.panel_count();
    match name {
        "no_ems" => Ok(ConfigChoice::NoEms),
        "idealized_ris" => Ok(ConfigChoice::PerPointAligned),
        "specular" | "random" | "codeword" => {
            if name == "codeword" && indices.len() != panels {
                bail!("ems.active_indices: need one codeword index per panel ({panels})");
            }
            let mut profiles = Vec::new();
            for j in 0..panels {
                let profile = match name {
                    "specular" => emschart::ems::gradient_profile(&ctx.scene.ems_panels[j], 0, 1, 0.0)
                        .map_err(|e| anyhow::anyhow!("{e}"))?,
                    "random" => emschart::ems::random_profile(
                        &ctx.scene.ems_panels[j],
                        emschart::optimizer::derive_seed(random_seed, j as u64),
                    ),
                    _ => {
                        let cb = ctx.panel_codebook(j, codebook_size).map_err(|e| anyhow::anyhow!("{e}"))?;
                        if indices[j] >= cb.len() {
                            bail!("ems.active_indices[{j}]: {} out of range for K = {}", indices[j], cb.len());
                        }
                        cb.profiles[indices[j]].clone()
                    }
                };
                profiles.push(profile);
            }
            Ok(ConfigChoice::Static(emschart::ems::EmsConfiguration::new(profiles)))
        }
        other => bail!("ems.active: unknown configuration \"{other}\""),
    }
}

fn meta_json(cfg: &ExperimentConfig, hash: &str, n_points: usize) -> serde_json::Value {
    serde_json::json!({
        "label": cfg.run.label,
        "method": cfg.method.kind,
        "supervision": cfg.anchors.supervision_fraction,
        "ems_active": cfg.ems.active,
        "config_hash": hash,
        "n_points": n_points,
    })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let _lock = OutDirLock::acquire(out)?;
    let hash = config_hash(cfg)?;
    let t0 = Instant::now();
    let (ctx, lattice_n) = build_context(cfg, &[])?;
    let choice = active_choice(cfg, &ctx)?;
    let artifacts = ctx.channel_stage(&choice).map_err(|e| anyhow::anyhow!("{e}"))?;
    let t_pipeline = t0.elapsed().as_secs_f64();

    let mut w = ArtifactWriter::new(out)?;
    let mut snr = String::from("point_id,x_m,y_m,snr_db\n");
    for (u, s) in artifacts.snr_db.iter().enumerate() {
        let p = ctx.scene.test_points[u];
        snr.push_str(&format!("{u},{},{},{}\n", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(*s)));
    }
    w.write("snr.csv", snr.as_bytes())?;

    let covs: Vec<_> = artifacts.features.iter().map(|f| f.r.clone()).collect();
    w.write("covariances.bin", &covariances_to_bytes(&covs))?;
    w.write("dissimilarity.bin", &dissimilarity_to_bytes(&artifacts.dissimilarity))?;
    w.write(
        "meta.json",
        serde_json::to_string_pretty(&meta_json(cfg, &hash, lattice_n))?.as_bytes(),
    )?;
    w.finish_manifest(&hash, &[("pipeline".into(), t_pipeline)])?;
    Ok(())
}

// ---------------------------------------------------------------------------
// chart
// ---------------------------------------------------------------------------

fn load_simulate_artifacts(
    out: &Path,
    need_covariances: bool,
    floor: f64,
) -> Result<(DissimilarityMatrix, Vec<CovarianceFeature>)> {
    let d_path = out.join("dissimilarity.bin");
    if !d_path.exists() {
        bail!("missing simulate artifact: expected {}", d_path.display());
    }
    let d = dissimilarity_from_bytes(&std::fs::read(&d_path)?)?;
    let mut features = Vec::new();
    if need_covariances {
        let c_path = out.join("covariances.bin");
        if !c_path.exists() {
            bail!("missing simulate artifact: expected {}", c_path.display());
        }
        let covs = covariances_from_bytes(&std::fs::read(&c_path)?)?;
        for (u, r) in covs.into_iter().enumerate() {
            features.push(
                CovarianceFeature::from_covariance(u, r, floor).map_err(|e| anyhow::anyhow!("{e}"))?,
            );
        }
    }
    Ok((d, features))
}

pub struct ChartOutputs {
    pub embedding: Embedding,
    pub report: MetricReport,
}

pub fn cmd_chart(cfg: &ExperimentConfig, out: &Path) -> Result<ChartOutputs> {
    let _lock = OutDirLock::acquire(out)?;
    let hash = config_hash(cfg)?;
    let method = cfg.chart_method();
    let (d, features) =
        load_simulate_artifacts(out, method == ChartMethod::Ae, cfg.pipeline_config().eigen_floor)?;
    let (ctx, lattice_n) = build_context(cfg, &[])?;
    if d.len() != lattice_n {
        bail!(
            "simulate artifacts hold {} points but the config builds {lattice_n}; re-run simulate",
            d.len()
        );
    }
    let t0 = Instant::now();
    let embedding = ctx
        .chart_from_parts(&d, &features, method, None)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let report = ctx.metric_report_from(&d, &embedding).map_err(|e| anyhow::anyhow!("{e}"))?;
    let t_chart = t0.elapsed().as_secs_f64();

    let mut w = ArtifactWriter::new(out)?;
    write_chart_artifacts(&mut w, cfg, &ctx, &embedding, &report, method)?;
    w.write(
        "meta.json",
        serde_json::to_string_pretty(&meta_json(cfg, &hash, lattice_n))?.as_bytes(),
    )?;
    w.finish_manifest(&hash, &[("chart".into(), t_chart)])?;
    Ok(ChartOutputs { embedding, report })
}

fn write_chart_artifacts(
    w: &mut ArtifactWriter,
    cfg: &ExperimentConfig,
    ctx: &PipelineContext,
    embedding: &Embedding,
    report: &MetricReport,
    method: ChartMethod,
) -> Result<()> {
    let m = method.label();
    let mut emb = String::from("point_id,x_m,y_m,anchored\n");
    for u in 0..embedding.len() {
        let z = embedding.point(u);
        emb.push_str(&format!(
            "{u},{},{},{}\n",
            fmt_f64(z[0]),
            fmt_f64(z[1]),
            u8::from(embedding.anchored()[u])
        ));
    }
    w.write(&format!("embedding_{m}.csv"), emb.as_bytes())?;

    let mut met = String::from("point_id,le_m,tw,ct\n");
    for (i, &u) in report.point_ids.iter().enumerate() {
        met.push_str(&format!(
            "{u},{},{},{}\n",
            fmt_f64(report.localization_error[i]),
            fmt_f64(report.trustworthiness[i]),
            fmt_f64(report.continuity[i])
        ));
    }
    w.write(&format!("metrics_{m}.csv"), met.as_bytes())?;

    let summary = summary_json(cfg, report, embedding, method)?;
    w.write(&format!("summary_{m}.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let _ = ctx;
    Ok(())
}

fn metric_summary(values: &[f64]) -> Result<serde_json::Value> {
    if values.is_empty() {
        return Ok(serde_json::json!({ "mean": 0.0, "q50": 0.0, "q90": 0.0, "q95": 0.0 }));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(serde_json::json!({
        "mean": mean,
        "q50": quantile(values, 0.5).map_err(|e| anyhow::anyhow!("{e}"))?,
        "q90": quantile(values, 0.9).map_err(|e| anyhow::anyhow!("{e}"))?,
        "q95": quantile(values, 0.95).map_err(|e| anyhow::anyhow!("{e}"))?,
    }))
}

fn summary_json(
    cfg: &ExperimentConfig,
    report: &MetricReport,
    embedding: &Embedding,
    method: ChartMethod,
) -> Result<serde_json::Value> {
    let mut v = serde_json::json!({
        "method": method.label(),
        "label": cfg.run.label,
        "supervision": cfg.anchors.supervision_fraction,
        "kappa": report.kappa,
        "n_eval": report.point_ids.len(),
        "metrics": {
            "le": metric_summary(&report.localization_error)?,
            "tw": metric_summary(&report.trustworthiness)?,
            "ct": metric_summary(&report.continuity)?,
        }
    });
    if method == ChartMethod::Tsne {
        v["final_kl"] = serde_json::json!(embedding.final_kl);
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

pub struct OptimizeOutputs {
    pub best_indices: Vec<usize>,
    pub best_objective: f64,
    pub table_rows: usize,
    pub baseline_objectives: Vec<(BaselineKind, f64)>,
}

pub fn cmd_optimize(cfg: &ExperimentConfig, out: &Path) -> Result<OptimizeOutputs> {
    if cfg.scene.ems_panels.is_empty() {
        bail!("ems: optimize needs at least one panel in the scene");
    }
    let _lock = OutDirLock::acquire(out)?;
    let hash = config_hash(cfg)?;
    let (ctx, _) = build_context(cfg, &[])?;
    let metric = cfg.metric_kind();
    let alpha = cfg.run.alpha_quantile;
    let method = cfg.chart_method();
    let space = SearchSpace::uniform(&ctx, cfg.ems.codebook_size).map_err(|e| anyhow::anyhow!("{e}"))?;
    let cache = FsObjectiveCache::new(&out.join("cache"))?;

    let t0 = Instant::now();
    let result = match cfg.ems.search.as_str() {
        "greedy" => greedy_search(&space, &ctx, metric, alpha, method, cfg.ems.greedy_sweeps, Some(&cache)),
        _ => exhaustive_search(&space, &ctx, metric, alpha, method, Some(&cache)),
    }
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    let t_search = t0.elapsed().as_secs_f64();

    let baselines = baseline_configs(&ctx, cfg.seeds().random_baseline).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut baseline_objectives = Vec::new();
    for (kind, choice) in &baselines {
        let q = evaluate_config(&ctx, choice, metric, alpha, method).map_err(|e| anyhow::anyhow!("{e}"))?;
        baseline_objectives.push((*kind, q));
    }

    let mut w = ArtifactWriter::new(out)?;
    let mut table = String::from("kind,indices,objective\n");
    for row in &result.table {
        let idx: Vec<String> = row.indices.iter().map(|i| i.to_string()).collect();
        table.push_str(&format!("codeword,{},{}\n", idx.join("-"), fmt_f64(row.objective)));
    }
    for (kind, q) in &baseline_objectives {
        table.push_str(&format!("{},,{}\n", kind.label(), fmt_f64(*q)));
    }
    w.write("objective_table.csv", table.as_bytes())?;

    let slopes: Vec<i64> = result
        .best_indices
        .iter()
        .map(|&a| a as i64 - ((cfg.ems.codebook_size as i64 - 1) / 2))
        .collect();
    let best = serde_json::json!({
        "indices": result.best_indices,
        "slope_offsets": slopes,
        "objective": result.best_objective,
        "metric": cfg.run.metric,
        "alpha": alpha,
        "method": method.label(),
        "codebook_size": cfg.ems.codebook_size,
        "config_hash": hash,
    });
    w.write("best_config.json", serde_json::to_string_pretty(&best)?.as_bytes())?;
    w.finish_manifest(&hash, &[("search".into(), t_search)])?;

    Ok(OptimizeOutputs {
        best_indices: result.best_indices,
        best_objective: result.best_objective,
        table_rows: result.table.len(),
        baseline_objectives,
    })
}

// ---------------------------------------------------------------------------
// evaluate-trajectory
// ---------------------------------------------------------------------------

pub struct TrajectoryOutputs {
    pub dropout_fraction: f64,
    pub mean_le: f64,
    pub n_points: usize,
}

/// Runs the pipeline with the trajectory appended as unanchored points:
/// the nonparametric chart re-embeds everything jointly, the parametric
/// chart trains on the lattice and infers the trajectory.
pub fn cmd_evaluate_trajectory(cfg: &ExperimentConfig, out: &Path) -> Result<TrajectoryOutputs> {
    let traj = cfg.trajectory_points();
    if traj.len() < 2 {
        bail!("trajectory: need at least two waypoints");
    }
    let _lock = OutDirLock::acquire(out)?;
    let hash = config_hash(cfg)?;
    let (ctx, lattice_n) = build_context(cfg, &traj)?;
    let choice = active_choice(cfg, &ctx)?;
    let method = cfg.chart_method();

    let t0 = Instant::now();
    let artifacts = ctx.channel_stage(&choice).map_err(|e| anyhow::anyhow!("{e}"))?;
    let embedding = ctx
        .chart_from_parts(
            &artifacts.dissimilarity,
            &artifacts.features,
            method,
            Some(lattice_n),
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let t_pipeline = t0.elapsed().as_secs_f64();

    let threshold = cfg.trajectory.dropout_threshold_m;
    let truth: Vec<[f64; 2]> = traj.iter().map(|p| [p.x, p.y]).collect();
    let estimates: Vec<[f64; 2]> = (lattice_n..lattice_n + traj.len())
        .map(|u| [embedding.point(u)[0], embedding.point(u)[1]])
        .collect();
    let (dropout, flags) = emschart::metrics::trajectory_dropout(&estimates, &truth, threshold)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let le = emschart::metrics::localization_error(&estimates, &truth).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mean_le = le.iter().sum::<f64>() / le.len() as f64;

    let m = method.label();
    let mut w = ArtifactWriter::new(out)?;
    let mut csv = String::from("point_id,x_true_m,y_true_m,x_est_m,y_est_m,le_m,exceeds\n");
    for i in 0..traj.len() {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i,
            fmt_f64(truth[i][0]),
            fmt_f64(truth[i][1]),
            fmt_f64(estimates[i][0]),
            fmt_f64(estimates[i][1]),
            fmt_f64(le[i]),
            u8::from(flags[i])
        ));
    }
    w.write(&format!("trajectory_{m}.csv"), csv.as_bytes())?;

    let region = (
        cfg.grid.x_min_m,
        cfg.grid.y_min_m,
        cfg.grid.x_max_m,
        cfg.grid.y_max_m,
    );
    let boxes: Vec<(f64, f64, f64, f64)> = ctx
        .scene
        .obstacles
        .iter()
        .map(|o| (o.min_corner.x, o.min_corner.y, o.max_corner.x, o.max_corner.y))
        .collect();
    let svg = trajectory_svg(
        &format!("trajectory ({m}, {} (>{threshold} m in red))", cfg.ems.active),
        region,
        &boxes,
        &truth,
        &estimates,
        &flags,
    );
    w.write(&format!("trajectory_{m}.svg"), svg.as_bytes())?;

    let summary = serde_json::json!({
        "method": m,
        "ems_active": cfg.ems.active,
        "threshold_m": threshold,
        "dropout_fraction": dropout,
        "mean_le_m": mean_le,
        "n_points": traj.len(),
    });
    w.write(&format!("trajectory_{m}_summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    w.finish_manifest(&hash, &[("pipeline".into(), t_pipeline)])?;

    Ok(TrajectoryOutputs { dropout_fraction: dropout, mean_le, n_points: traj.len() })
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct RunData {
    label: String,
    method: String,
    supervision: f64,
    le: Vec<f64>,
    tw: Vec<f64>,
    ct: Vec<f64>,
}

fn load_run(dir: &Path) -> Result<RunData> {
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json")).with_context(|| {
            format!("reading {}/meta.json (is this a completed chart run?)", dir.display())
        })?)?;
    let method = meta["method"].as_str().unwrap_or("tsne").to_string();
    let csv_path = dir.join(format!("metrics_{method}.csv"));
    let text = std::fs::read_to_string(&csv_path)
        .with_context(|| format!("reading {}", csv_path.display()))?;
    let mut le = Vec::new();
    let mut tw = Vec::new();
    let mut ct = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "point_id,le_m,tw,ct" {
                bail!("{}: unexpected metrics schema \"{line}\"", csv_path.display());
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            bail!("{}: malformed row {i}", csv_path.display());
        }
        le.push(parts[1].parse()?);
        tw.push(parts[2].parse()?);
        ct.push(parts[3].parse()?);
    }
    Ok(RunData {
        label: meta["label"].as_str().unwrap_or("run").to_string(),
        method,
        supervision: meta["supervision"].as_f64().unwrap_or(0.0),
        le,
        tw,
        ct,
    })
}

pub fn cmd_report(run_dirs: &[PathBuf], out: &Path) -> Result<()> {
    if run_dirs.is_empty() {
        bail!("report: need at least one completed run directory");
    }
    let _lock = OutDirLock::acquire(out)?;
    let runs: Vec<RunData> = run_dirs.iter().map(|d| load_run(d)).collect::<Result<_>>()?;

    let mut w = ArtifactWriter::new(out)?;
    for (metric, x_label) in [("le", "localization error [m]"), ("neg_tw", "-TW"), ("neg_ct", "-CT")] {
        let series: Vec<(String, Vec<f64>)> = runs
            .iter()
            .map(|r| {
                let values = match metric {
                    "le" => r.le.clone(),
                    "neg_tw" => r.tw.iter().map(|v| -v).collect(),
                    _ => r.ct.iter().map(|v| -v).collect(),
                };
                (format!("{}/{}/{}%", r.label, r.method, (r.supervision * 100.0).round()), values)
            })
            .collect();
        let svg = cdf_svg(&format!("empirical CDF of {metric}"), x_label, &series);
        w.write(&format!("cdf_{metric}.svg"), svg.as_bytes())?;
    }

    let mut table = String::from("metric,method,scenario,supervision,mean,q90\n");
    for metric in ["le", "neg_tw", "neg_ct"] {
        for r in &runs {
            let values: Vec<f64> = match metric {
                "le" => r.le.clone(),
                "neg_tw" => r.tw.iter().map(|v| -v).collect(),
                _ => r.ct.iter().map(|v| -v).collect(),
            };
            let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
            let q90 = quantile(&values, 0.9).map_err(|e| anyhow::anyhow!("{e}"))?;
            table.push_str(&format!(
                "{metric},{},{},{},{},{}\n",
                r.method,
                r.label,
                fmt_f64(r.supervision),
                fmt_f64(mean),
                fmt_f64(q90)
            ));
        }
    }
    w.write("table2.csv", table.as_bytes())?;
    w.finish_manifest("report", &[])?;
    Ok(())
}
