//! Scenario exploration tool: reports SNR coverage, per-codeword lighting
//! of dark points, and quick chart quality numbers for a config.
//!
//! Usage: cargo run --release -p emschart-cli --example scene_lab [config.toml] [--charts]

use emschart::metrics::{quantile, MetricKind};
use emschart::optimizer::{evaluate_config, ChartMethod, ConfigChoice, SearchSpace};
use emschart_cli::commands::build_context;
use emschart_cli::config::{default_canyon, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = match args.iter().find(|a| !a.starts_with("--")) {
        Some(path) => ExperimentConfig::load(std::path::Path::new(path))?,
        None => default_canyon(),
    };
    let with_charts = args.iter().any(|a| a == "--charts");
    let (ctx, _) = build_context(&cfg, &[])?;
    let n = ctx.point_count();

    let dark_threshold = 0.0;
    let report_snr = |label: &str, choice: &ConfigChoice| -> anyhow::Result<Vec<f64>> {
        let art = ctx.channel_stage(choice).map_err(|e| anyhow::anyhow!("{e}"))?;
        let mut finite: Vec<f64> = art.snr_db.iter().copied().filter(|s| s.is_finite()).collect();
        finite.sort_by(f64::total_cmp);
        let dark = art.snr_db.iter().filter(|s| **s < dark_threshold).count();
        let med = if finite.is_empty() { f64::NAN } else { finite[finite.len() / 2] };
        println!(
            "{label:<18} dark(<{dark_threshold} dB): {dark:>3} ({:>4.1}%)  median snr {med:>6.1} dB",
            100.0 * dark as f64 / n as f64
        );
        Ok(art.snr_db.clone())
    };

    let no_ems = report_snr("no_ems", &ConfigChoice::NoEms)?;
    let dark_ids: Vec<usize> = (0..n).filter(|&u| no_ems[u] < dark_threshold).collect();
    println!("dark points: {} of {n}", dark_ids.len());

    // Per-panel, per-slope lighting of the dark set (panel contribution alone).
    let k = cfg.ems.codebook_size;
    for j in 0..ctx.scene.panel_count() {
        let cb = ctx.panel_codebook(j, k).map_err(|e| anyhow::anyhow!("{e}"))?;
        print!("panel {j} lit dark pts per slope:");
        for (a, profile) in cb.profiles.iter().enumerate() {
            let mut lit = 0;
            for &u in &dark_ids {
                let g = ctx.panel_gain(u, j, profile).map_err(|e| anyhow::anyhow!("{e}"))?;
                let snr = emschart::channel::snr_db(
                    &emschart::channel::ChannelVector::from_element(1, emschart::num_complex::Complex64::new(g, 0.0)),
                    &ctx.cfg.radio,
                );
                if snr > dark_threshold {
                    lit += 1;
                }
            }
            print!(" {}:{}", a as i64 - ((k as i64 - 1) / 2), lit);
        }
        println!();
    }

    let space = SearchSpace::uniform(&ctx, k).map_err(|e| anyhow::anyhow!("{e}"))?;
    let specular = ConfigChoice::Static(space.configuration(&space.specular_indices()));
    report_snr("specular", &specular)?;
    report_snr("idealized_ris", &ConfigChoice::PerPointAligned)?;
    let random = emschart_cli::commands::choice_from_name("random", &[], k, cfg.seeds().random_baseline, &ctx)?;
    report_snr("random", &random)?;

    // Joint coverage: best pair of codewords by dark points lit.
    let mut best_pair = (0usize, 0usize, 0usize);
    for a0 in 0..k {
        for a1 in 0..k {
            let config = space.configuration(&[a0, a1]);
            let mut lit = 0;
            for &u in &dark_ids {
                let mut p = 0.0f64;
                for j in 0..2 {
                    let g = ctx.panel_gain(u, j, &config.profiles[j]).map_err(|e| anyhow::anyhow!("{e}"))?;
                    p += g * g;
                }
                let snr = 10.0 * (emschart::channel::dbm_to_linear(ctx.cfg.radio.tx_power_dbm) * p
                    / emschart::channel::dbm_to_linear(ctx.cfg.radio.noise_power_dbm))
                .log10();
                if snr > dark_threshold {
                    lit += 1;
                }
            }
            if lit > best_pair.2 {
                best_pair = (a0, a1, lit);
            }
        }
    }
    println!(
        "best codeword pair by dark coverage: [{}, {}] lights {} of {}",
        best_pair.0,
        best_pair.1,
        best_pair.2,
        dark_ids.len()
    );

    if with_charts {
        for (label, choice) in [
            ("no_ems", ConfigChoice::NoEms),
            ("specular", specular.clone()),
            ("best_pair", ConfigChoice::Static(space.configuration(&[best_pair.0, best_pair.1]))),
            ("idealized_ris", ConfigChoice::PerPointAligned),
            ("random", random.clone()),
        ] {
            let t0 = std::time::Instant::now();
            let art = ctx.channel_stage(&choice).map_err(|e| anyhow::anyhow!("{e}"))?;
            let emb = ctx.chart(&art, ChartMethod::Tsne).map_err(|e| anyhow::anyhow!("{e}"))?;
            let rep = ctx.metric_report(&art, &emb).map_err(|e| anyhow::anyhow!("{e}"))?;
            let le = MetricKind::LocalizationError.values(&rep);
            let mean = le.iter().sum::<f64>() / le.len() as f64;
            let q90 = quantile(&le, 0.9).map_err(|e| anyhow::anyhow!("{e}"))?;
            let tw_mean = rep.trustworthiness.iter().sum::<f64>() / rep.trustworthiness.len() as f64;
            let ct_mean = rep.continuity.iter().sum::<f64>() / rep.continuity.len() as f64;
            println!(
                "chart[tsne] {label:<14} mean LE {mean:>6.2} m  q90 {q90:>6.2} m  TW {tw_mean:.3}  CT {ct_mean:.3}  ({:.1} s)",
                t0.elapsed().as_secs_f64()
            );
        }
        // Objective check through the real evaluator.
        let q = evaluate_config(&ctx, &ConfigChoice::NoEms, MetricKind::LocalizationError, 0.9, ChartMethod::Tsne)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        println!("evaluate_config(no_ems, le, 0.9, tsne) = {q:.2}");
    }
    Ok(())
}
