//! Codebook search over static panel configurations.
//!
//! A [`PipelineContext`] precomputes everything that does not depend on
//! the panel phases (path sets, per-panel channel matrices, per-point
//! incident vectors, noise seeds) so that a configuration evaluation is a
//! pure function of the profile choice. Seeds are fixed across
//! configurations, so objective differences reflect the configuration and
//! not the noise realization.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::channel::{
    aggregate_narrowband, ems_channel, estimate_covariance, snr_db, ChannelMatrix, ChannelVector,
    RadioParams,
};
use crate::chart_ae::{
    infer_positions, standardize, standardize_stats, train, AeConfig, FeatureVector, MlpSpec,
};
use crate::chart_tsne::{run_stsne, AnchorSet, Embedding, TsneConfig};
use crate::ems::{
    build_codebook, gradient_profile, random_profile, wrap_phase, Codebook, EmsConfiguration,
    PhaseProfile, ProfileLabel,
};
use crate::features::{dissimilarity_matrix, CovarianceFeature, DissimilarityMatrix};
use crate::metrics::{default_kappa, evaluate_embedding, quantile, MetricKind, MetricReport};
use crate::scene::{relative_response, trace_paths, ArrayGeometry, LinkKind, Scene};
use crate::{par_map, Error, Result};

/// Splitmix64 step; derives independent per-point seeds from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Which chart backs the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChartMethod {
    Tsne,
    Ae,
}

impl ChartMethod {
    pub fn label(self) -> &'static str {
        match self {
            ChartMethod::Tsne => "tsne",
            ChartMethod::Ae => "ae",
        }
    }
}

/// Non-geometry knobs of the evaluation pipeline.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub radio: RadioParams,
    pub tsne: TsneConfig,
    pub ae: AeConfig,
    /// Hidden widths of the autoencoder's encoder half.
    pub ae_hidden: Vec<usize>,
    pub eigen_floor: f64,
    /// Neighborhood size; defaults per evaluation-set size when `None`.
    pub kappa: Option<usize>,
    pub noise_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            radio: RadioParams::default(),
            tsne: TsneConfig::default(),
            ae: AeConfig::default(),
            ae_hidden: crate::chart_ae::DEFAULT_HIDDEN.to_vec(),
            eigen_floor: crate::features::DEFAULT_EIGENVALUE_FLOOR,
            kappa: None,
            noise_seed: 1,
        }
    }
}

/// A configuration to evaluate: no panels, one static profile per panel,
/// or the per-point phase-aligned reconfigurable baseline.
#[derive(Clone, Debug)]
pub enum ConfigChoice {
    NoEms,
    Static(EmsConfiguration),
    PerPointAligned,
}

/// Channel-stage outputs for one configuration.
#[derive(Clone, Debug)]
pub struct PipelineArtifacts {
    pub channels: Vec<ChannelVector>,
    pub snr_db: Vec<f64>,
    pub features: Vec<CovarianceFeature>,
    pub dissimilarity: DissimilarityMatrix,
}

/// Precomputed per-scene state shared by all configuration evaluations.
pub struct PipelineContext {
    pub scene: Scene,
    pub anchors: AnchorSet,
    pub cfg: PipelineConfig,
    /// Content identifier used for objective cache keys.
    pub context_id: String,
    direct: Vec<ChannelVector>,
    outgoing: Vec<ChannelMatrix>,
    incident: Vec<Vec<ChannelVector>>,
    incident_paths: Vec<Vec<crate::scene::PathSet>>,
    outgoing_paths: Vec<crate::scene::PathSet>,
    truth: Vec<[f64; 2]>,
}

impl PipelineContext {
    /// Traces every link of the scene and aggregates the phase-independent
    /// channel pieces.
    pub fn new(scene: Scene, anchors: AnchorSet, cfg: PipelineConfig, context_id: String) -> Result<Self> {
        let n = scene.test_points.len();
        if n < 2 {
            return Err(Error::invalid("scene needs at least two test points"));
        }
        for &idx in anchors.indices() {
            if idx >= n {
                return Err(Error::invalid(format!("anchor index {idx} out of range")));
            }
        }
        let lambda = scene.wavelength();
        let truth: Vec<[f64; 2]> = scene.test_points.iter().map(|p| [p.x, p.y]).collect();

        let outgoing_paths: Vec<crate::scene::PathSet> = scene
            .ems_panels
            .iter()
            .enumerate()
            .map(|(j, panel)| trace_paths(&scene, panel.reference(), &scene.bs, LinkKind::EmsToBs(j)))
            .collect();
        let outgoing: Vec<ChannelMatrix> = outgoing_paths
            .iter()
            .enumerate()
            .map(|(j, ps)| aggregate_narrowband(ps, &scene.bs, &scene.ems_panels[j], lambda))
            .collect();

        struct PerPoint {
            direct: ChannelVector,
            incident: Vec<ChannelVector>,
            incident_paths: Vec<crate::scene::PathSet>,
        }
        let per_point: Vec<PerPoint> = par_map(n, |u| {
            let ue = scene.test_points[u];
            let ue_geom = ArrayGeometry::single_point(ue);
            let direct_paths = trace_paths(&scene, ue, &scene.bs, LinkKind::Direct);
            let direct = aggregate_narrowband(&direct_paths, &scene.bs, &ue_geom, lambda)
                .column(0)
                .into_owned();
            let mut incident = Vec::new();
            let mut incident_paths = Vec::new();
            for (j, panel) in scene.ems_panels.iter().enumerate() {
                let ps = trace_paths(&scene, ue, panel, LinkKind::UeToEms(j));
                incident.push(
                    aggregate_narrowband(&ps, panel, &ue_geom, lambda).column(0).into_owned(),
                );
                incident_paths.push(ps);
            }
            PerPoint { direct, incident, incident_paths }
        });

        let mut direct = Vec::with_capacity(n);
        let mut incident = Vec::with_capacity(n);
        let mut incident_paths = Vec::with_capacity(n);
        for pp in per_point {
            direct.push(pp.direct);
            incident.push(pp.incident);
            incident_paths.push(pp.incident_paths);
        }

        Ok(PipelineContext {
            scene,
            anchors,
            cfg,
            context_id,
            direct,
            outgoing,
            incident,
            incident_paths,
            outgoing_paths,
            truth,
        })
    }

    pub fn point_count(&self) -> usize {
        self.direct.len()
    }

    pub fn truth(&self) -> &[[f64; 2]] {
        &self.truth
    }

    pub fn panel_codebook(&self, j: usize, k: usize) -> Result<Codebook> {
        build_codebook(&self.scene.ems_panels[j], k, j)
    }

    /// Contribution of panel `j` under `profile` to point `u`.
    pub fn panel_contribution(&self, u: usize, j: usize, profile: &PhaseProfile) -> Result<ChannelVector> {
        ems_channel(&self.outgoing[j], profile, &self.incident[u][j])
    }

    /// Gain of panel `j` alone (`|| H_o diag(e^{j phi}) h_i ||`) at point `u`.
    pub fn panel_gain(&self, u: usize, j: usize, profile: &PhaseProfile) -> Result<f64> {
        Ok(self.panel_contribution(u, j, profile)?.norm())
    }

    /// Per-point exact-alignment profile for the dominant incident and
    /// outgoing path pair of panel `j` (the idealized reconfigurable
    /// baseline; it needs the user position, which a static panel lacks).
    pub fn aligned_profile(&self, u: usize, j: usize) -> PhaseProfile {
        let panel = &self.scene.ems_panels[j];
        let lambda = self.scene.wavelength();
        let dominant = |ps: &crate::scene::PathSet| {
            ps.paths
                .iter()
                .max_by(|a, b| a.gain.norm().total_cmp(&b.gain.norm()))
                .copied()
        };
        let inc = dominant(&self.incident_paths[u][j]);
        let out = dominant(&self.outgoing_paths[j]);
        let (Some(inc), Some(out)) = (inc, out) else {
            return gradient_profile(panel, 0, 1, 0.0).expect("specular profile");
        };
        let a_inc = relative_response(panel, inc.arrival, lambda);
        let a_out = relative_response(panel, out.departure, lambda);
        let phases: Vec<f64> = a_inc
            .iter()
            .zip(&a_out)
            .map(|(ai, ao)| wrap_phase(-(ao.conj() * ai).arg()))
            .collect();
        PhaseProfile::from_phases(phases, ProfileLabel::Aligned { point_id: u })
    }

    /// Composite channels for every point under the given choice.
    pub fn channels_for(&self, choice: &ConfigChoice) -> Result<Vec<ChannelVector>> {
        let n = self.point_count();
        match choice {
            ConfigChoice::NoEms => Ok(self.direct.clone()),
            ConfigChoice::Static(cfg) => {
                if cfg.panel_count() != self.scene.panel_count() {
                    return Err(Error::invalid(format!(
                        "configuration has {} profiles for {} panels",
                        cfg.panel_count(),
                        self.scene.panel_count()
                    )));
                }
                let out: Vec<Result<ChannelVector>> = par_map(n, |u| {
                    let mut h = self.direct[u].clone();
                    for (j, profile) in cfg.profiles.iter().enumerate() {
                        h += self.panel_contribution(u, j, profile)?;
                    }
                    Ok(h)
                });
                out.into_iter().collect()
            }
            ConfigChoice::PerPointAligned => {
                let out: Vec<Result<ChannelVector>> = par_map(n, |u| {
                    let mut h = self.direct[u].clone();
                    for j in 0..self.scene.panel_count() {
                        let profile = self.aligned_profile(u, j);
                        h += self.panel_contribution(u, j, &profile)?;
                    }
                    Ok(h)
                });
                out.into_iter().collect()
            }
        }
    }

    /// Channel stage: channels, SNR, covariance features, dissimilarities.
    pub fn channel_stage(&self, choice: &ConfigChoice) -> Result<PipelineArtifacts> {
        let channels = self.channels_for(choice)?;
        self.channel_stage_from(channels)
    }

    /// Channel stage from externally assembled channels (single code path
    /// for every configuration kind, so cache hits bit-match reruns).
    fn channel_stage_from(&self, channels: Vec<ChannelVector>) -> Result<PipelineArtifacts> {
        let snrs: Vec<f64> = channels.iter().map(|h| snr_db(h, &self.cfg.radio)).collect();
        let feats: Vec<Result<CovarianceFeature>> = par_map(channels.len(), |u| {
            let r = estimate_covariance(&channels[u], &self.cfg.radio, derive_seed(self.cfg.noise_seed, u as u64));
            CovarianceFeature::from_covariance(u, r, self.cfg.eigen_floor)
        });
        let features = feats.into_iter().collect::<Result<Vec<_>>>()?;
        let dissimilarity = dissimilarity_matrix(&features)?;
        Ok(PipelineArtifacts { channels, snr_db: snrs, features, dissimilarity })
    }

    /// Chart stage on precomputed artifacts.
    pub fn chart(&self, artifacts: &PipelineArtifacts, method: ChartMethod) -> Result<Embedding> {
        self.chart_from_parts(&artifacts.dissimilarity, &artifacts.features, method, None)
    }

    /// Chart stage from its raw ingredients. For the parametric chart,
    /// `ae_train_limit` restricts the training set to the first points
    /// (extra points, e.g. a trajectory, are inference-only); inference
    /// always covers everything.
    pub fn chart_from_parts(
        &self,
        dissimilarity: &DissimilarityMatrix,
        features: &[CovarianceFeature],
        method: ChartMethod,
        ae_train_limit: Option<usize>,
    ) -> Result<Embedding> {
        match method {
            ChartMethod::Tsne => Ok(run_stsne(dissimilarity, &self.anchors, &self.cfg.tsne)?.embedding),
            ChartMethod::Ae => {
                let raw: Vec<FeatureVector> = features
                    .iter()
                    .map(|f| crate::chart_ae::featurize(&f.log_r, f.point_id))
                    .collect();
                let n = raw.len();
                let train_n = ae_train_limit.unwrap_or(n).min(n);
                let (mu, sigma) = standardize_stats(&raw, self.anchors.indices())?;
                let x_train = standardize(&raw[..train_n], &mu, &sigma);
                let mut labels: Vec<Option<[f64; 2]>> = vec![None; train_n];
                for (i, &idx) in self.anchors.indices().iter().enumerate() {
                    labels[idx] = Some([self.anchors.coords()[i][0], self.anchors.coords()[i][1]]);
                }
                let f = x_train.nrows();
                let enc = MlpSpec::encoder(f, &self.cfg.ae_hidden, 2)?;
                let dec = MlpSpec::decoder(f, &self.cfg.ae_hidden, 2)?;
                let trained = train(&x_train, &labels, &enc, &dec, &self.cfg.ae, mu, sigma)?;
                let mut anchored = vec![false; n];
                for &idx in self.anchors.indices() {
                    anchored[idx] = true;
                }
                infer_positions(&trained.model, &raw)?.with_anchored(anchored)
            }
        }
    }

    /// Metric report over the unanchored points.
    pub fn metric_report(&self, artifacts: &PipelineArtifacts, embedding: &Embedding) -> Result<MetricReport> {
        self.metric_report_from(&artifacts.dissimilarity, embedding)
    }

    /// Metric report from a dissimilarity matrix (e.g. one loaded from a
    /// simulate artifact).
    pub fn metric_report_from(&self, dissimilarity: &DissimilarityMatrix, embedding: &Embedding) -> Result<MetricReport> {
        let n_eval = embedding.len() - embedding.anchored().iter().filter(|&&a| a).count();
        let kappa = self.cfg.kappa.unwrap_or_else(|| default_kappa(n_eval));
        evaluate_embedding(dissimilarity, embedding, &self.truth, kappa)
    }
}

/// Quantile objective of one configuration: runs the full pipeline and
/// returns `Q_m(alpha)` over the unanchored points. Errors are tagged
/// with the originating configuration.
pub fn evaluate_config(
    ctx: &PipelineContext,
    choice: &ConfigChoice,
    metric: MetricKind,
    alpha: f64,
    method: ChartMethod,
) -> Result<f64> {
    let tag = || match choice {
        ConfigChoice::NoEms => "no_ems".to_string(),
        ConfigChoice::Static(c) => format!("static config with {} panels", c.panel_count()),
        ConfigChoice::PerPointAligned => "idealized_ris".to_string(),
    };
    let artifacts = ctx.channel_stage(choice).map_err(|e| tag_error(e, &tag()))?;
    let embedding = ctx.chart(&artifacts, method).map_err(|e| tag_error(e, &tag()))?;
    let report = ctx.metric_report(&artifacts, &embedding).map_err(|e| tag_error(e, &tag()))?;
    quantile(&metric.values(&report), alpha)
}

fn tag_error(e: Error, tag: &str) -> Error {
    match e {
        Error::InvalidArgument(msg) => Error::InvalidArgument(format!("[{tag}] {msg}")),
        other => other,
    }
}

/// Joint per-panel codebooks; configurations enumerate lexicographically
/// by panel then codeword index (panel 0 most significant).
#[derive(Clone, Debug)]
pub struct SearchSpace {
    pub codebooks: Vec<Codebook>,
}

impl SearchSpace {
    pub fn uniform(ctx: &PipelineContext, k: usize) -> Result<Self> {
        let codebooks = (0..ctx.scene.panel_count())
            .map(|j| ctx.panel_codebook(j, k))
            .collect::<Result<Vec<_>>>()?;
        if codebooks.is_empty() {
            return Err(Error::invalid("search space needs at least one panel"));
        }
        Ok(SearchSpace { codebooks })
    }

    pub fn config_count(&self) -> usize {
        self.codebooks.iter().map(|c| c.len()).product()
    }

    pub fn indices_of(&self, linear: usize) -> Vec<usize> {
        let mut rem = linear;
        let mut out = vec![0; self.codebooks.len()];
        for (j, cb) in self.codebooks.iter().enumerate().rev() {
            out[j] = rem % cb.len();
            rem /= cb.len();
        }
        out
    }

    pub fn configuration(&self, indices: &[usize]) -> EmsConfiguration {
        EmsConfiguration::new(
            indices
                .iter()
                .zip(&self.codebooks)
                .map(|(&a, cb)| cb.profiles[a].clone())
                .collect(),
        )
    }

    /// All-specular configuration indices.
    pub fn specular_indices(&self) -> Vec<usize> {
        self.codebooks.iter().map(|cb| cb.specular_index()).collect()
    }
}

/// One evaluated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveRow {
    pub indices: Vec<usize>,
    pub objective: f64,
}

/// Search output: the winner plus the full objective table.
#[derive(Clone, Debug)]
pub struct SearchResult {
    pub best_indices: Vec<usize>,
    pub best_objective: f64,
    pub table: Vec<ObjectiveRow>,
    pub wall_time_s: f64,
    pub evaluations: usize,
}

/// Optional persistent store for objective values, keyed by the context
/// id and configuration; lets long sweeps restart cheaply.
pub trait ObjectiveCache: Sync {
    fn get(&self, key: &str) -> Option<f64>;
    fn put(&self, key: &str, value: f64);
}

fn cache_key(ctx: &PipelineContext, metric: MetricKind, alpha: f64, method: ChartMethod, indices: &[usize]) -> String {
    format!(
        "{}/{}/{}/{}/{}",
        ctx.context_id,
        method.label(),
        metric.label(),
        alpha,
        indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("-")
    )
}

pub const DEFAULT_CONFIG_LIMIT: usize = 1024;

/// Evaluates every configuration of the space; ties break toward the
/// lexicographically smallest index vector.
pub fn exhaustive_search(
    space: &SearchSpace,
    ctx: &PipelineContext,
    metric: MetricKind,
    alpha: f64,
    method: ChartMethod,
    cache: Option<&dyn ObjectiveCache>,
) -> Result<SearchResult> {
    let total = space.config_count();
    if total > DEFAULT_CONFIG_LIMIT {
        return Err(Error::BudgetExceeded(format!(
            "{total} configurations exceed the exhaustive limit {DEFAULT_CONFIG_LIMIT}; use greedy_search"
        )));
    }
    let start = Instant::now();
    let rows: Vec<Result<ObjectiveRow>> = par_map(total, |linear| {
        let indices = space.indices_of(linear);
        let objective = cached_objective(space, ctx, metric, alpha, method, cache, &indices)?;
        Ok(ObjectiveRow { indices, objective })
    });
    let table = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut best = 0usize;
    for (i, row) in table.iter().enumerate() {
        if row.objective < table[best].objective {
            best = i;
        }
    }
    Ok(SearchResult {
        best_indices: table[best].indices.clone(),
        best_objective: table[best].objective,
        table,
        wall_time_s: start.elapsed().as_secs_f64(),
        evaluations: total,
    })
}

fn cached_objective(
    space: &SearchSpace,
    ctx: &PipelineContext,
    metric: MetricKind,
    alpha: f64,
    method: ChartMethod,
    cache: Option<&dyn ObjectiveCache>,
    indices: &[usize],
) -> Result<f64> {
    let key = cache_key(ctx, metric, alpha, method, indices);
    if let Some(c) = cache {
        if let Some(v) = c.get(&key) {
            return Ok(v);
        }
    }
    let choice = ConfigChoice::Static(space.configuration(indices));
    let objective = evaluate_config(ctx, &choice, metric, alpha, method).map_err(|e| {
        tag_error(e, &format!("config {indices:?}"))
    })?;
    if let Some(c) = cache {
        c.put(&key, objective);
    }
    Ok(objective)
}

/// Coordinate descent over panels starting from the all-specular
/// configuration: optimize panel 1 holding the others, then panel 2, and
/// repeat for `sweeps` rounds. Cost is `sweeps * sum(K_j)` evaluations.
pub fn greedy_search(
    space: &SearchSpace,
    ctx: &PipelineContext,
    metric: MetricKind,
    alpha: f64,
    method: ChartMethod,
    sweeps: usize,
    cache: Option<&dyn ObjectiveCache>,
) -> Result<SearchResult> {
    if sweeps == 0 {
        return Err(Error::invalid("greedy search needs at least one sweep"));
    }
    let start = Instant::now();
    let mut current = space.specular_indices();
    let mut memo: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut table = Vec::new();
    let mut evaluations = 0usize;
    for _ in 0..sweeps {
        for j in 0..space.codebooks.len() {
            let mut best_a = current[j];
            let mut best_val = f64::INFINITY;
            for a in 0..space.codebooks[j].len() {
                let mut indices = current.clone();
                indices[j] = a;
                let objective = match memo.get(&indices) {
                    Some(&v) => v,
                    None => {
                        let v = cached_objective(space, ctx, metric, alpha, method, cache, &indices)?;
                        evaluations += 1;
                        memo.insert(indices.clone(), v);
                        table.push(ObjectiveRow { indices: indices.clone(), objective: v });
                        v
                    }
                };
                if objective < best_val {
                    best_val = objective;
                    best_a = a;
                }
            }
            current[j] = best_a;
        }
    }
    let best_objective = memo[&current];
    Ok(SearchResult {
        best_indices: current,
        best_objective,
        table,
        wall_time_s: start.elapsed().as_secs_f64(),
        evaluations,
    })
}

/// Named baseline configurations compared against the searched optimum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    NoEms,
    Specular,
    Random,
    IdealizedRis,
}

impl BaselineKind {
    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::NoEms => "no_ems",
            BaselineKind::Specular => "specular",
            BaselineKind::Random => "random",
            BaselineKind::IdealizedRis => "idealized_ris",
        }
    }
}

/// Builds the four baseline choices for the context's scene. Random
/// profiles derive one seed per panel from `random_seed`.
pub fn baseline_configs(ctx: &PipelineContext, random_seed: u64) -> Result<Vec<(BaselineKind, ConfigChoice)>> {
    let panels = &ctx.scene.ems_panels;
    let specular = EmsConfiguration::new(
        panels
            .iter()
            .map(|p| gradient_profile(p, 0, 1, 0.0))
            .collect::<Result<Vec<_>>>()?,
    );
    let random = EmsConfiguration::new(
        panels
            .iter()
            .enumerate()
            .map(|(j, p)| random_profile(p, derive_seed(random_seed, j as u64)))
            .collect(),
    );
    Ok(vec![
        (BaselineKind::NoEms, ConfigChoice::NoEms),
        (BaselineKind::Specular, ConfigChoice::Static(specular)),
        (BaselineKind::Random, ConfigChoice::Static(random)),
        (BaselineKind::IdealizedRis, ConfigChoice::PerPointAligned),
    ])
}
