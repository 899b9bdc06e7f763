//! Scenario configuration: a single TOML file with nested blocks and
//! explicit units in key names. Parsing, validation with field paths,
//! scene construction, and seeded anchor selection live here.

use emschart::channel::RadioParams;
use emschart::chart_ae::AeConfig;
use emschart::chart_tsne::{AnchorSet, TsneConfig};
use emschart::optimizer::{derive_seed, ChartMethod, PipelineConfig};
use emschart::scene::{ArrayGeometry, BoxObstacle, Scene, Vec3, SPEED_OF_LIGHT};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use anyhow::{bail, Context, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneBlock,
    pub grid: GridBlock,
    #[serde(default)]
    pub radio: RadioBlock,
    #[serde(default)]
    pub anchors: AnchorsBlock,
    #[serde(default)]
    pub method: MethodBlock,
    #[serde(default)]
    pub ems: EmsBlock,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub trajectory: TrajectoryBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneBlock {
    pub carrier_frequency_hz: f64,
    #[serde(default = "default_reflection_order")]
    pub max_reflection_order: u8,
    #[serde(default = "default_reflection_amplitude")]
    pub reflection_amplitude: f64,
    pub bs: ArrayBlock,
    #[serde(default)]
    pub ems_panels: Vec<ArrayBlock>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleBlock>,
}

fn default_reflection_order() -> u8 {
    1
}

fn default_reflection_amplitude() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayBlock {
    pub center_m: [f64; 3],
    pub rows: usize,
    pub cols: usize,
    pub spacing_wavelengths: f64,
    pub boresight: [f64; 3],
    pub pattern_exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleBlock {
    pub min_corner_m: [f64; 3],
    pub max_corner_m: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub x_min_m: f64,
    pub x_max_m: f64,
    pub y_min_m: f64,
    pub y_max_m: f64,
    pub nx: usize,
    pub ny: usize,
    pub height_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioBlock {
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub bandwidth_hz: f64,
    pub snapshots: usize,
}

impl Default for RadioBlock {
    fn default() -> Self {
        let p = RadioParams::default();
        RadioBlock {
            tx_power_dbm: p.tx_power_dbm,
            noise_power_dbm: p.noise_power_dbm,
            bandwidth_hz: p.bandwidth_hz,
            snapshots: p.snapshots,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorsBlock {
    pub supervision_fraction: f64,
    pub selection_seed: u64,
    /// Explicit anchor point ids; overrides the sampled fraction.
    pub explicit_indices: Vec<usize>,
}

impl Default for AnchorsBlock {
    fn default() -> Self {
        AnchorsBlock {
            supervision_fraction: 0.15,
            selection_seed: 7,
            explicit_indices: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodBlock {
    pub kind: String,
    pub tsne: TsneBlock,
    pub ae: AeBlock,
}

impl Default for MethodBlock {
    fn default() -> Self {
        MethodBlock {
            kind: "tsne".into(),
            tsne: TsneBlock::default(),
            ae: AeBlock::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneBlock {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
}

impl Default for TsneBlock {
    fn default() -> Self {
        let t = TsneConfig::default();
        TsneBlock {
            perplexity: t.perplexity,
            iterations: t.iterations,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            exaggeration: t.exaggeration,
            exaggeration_iters: t.exaggeration_iters,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeBlock {
    pub hidden: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for AeBlock {
    fn default() -> Self {
        let a = AeConfig::default();
        AeBlock {
            hidden: vec![128, 32],
            alpha: a.alpha,
            beta: a.beta,
            gamma: a.gamma,
            eta: a.eta,
            batch_size: a.batch_size,
            epochs: a.epochs,
            learning_rate: a.learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmsBlock {
    pub codebook_size: usize,
    /// Search strategy for cmd_optimize: "exhaustive" or "greedy".
    pub search: String,
    pub greedy_sweeps: usize,
    /// Configuration simulate/chart/trajectory runs under:
    /// no_ems | specular | random | idealized_ris | codeword.
    pub active: String,
    /// Codeword index per panel when `active = "codeword"`.
    pub active_indices: Vec<usize>,
}

impl Default for EmsBlock {
    fn default() -> Self {
        EmsBlock {
            codebook_size: 11,
            search: "exhaustive".into(),
            greedy_sweeps: 2,
            active: "no_ems".into(),
            active_indices: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunBlock {
    pub label: String,
    pub alpha_quantile: f64,
    /// Neighborhood size for TW/CT; 0 selects the size-scaled default.
    pub kappa: usize,
    /// Master seed; noise, chart, and baseline seeds derive from it.
    pub seed: u64,
    pub metric: String,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            label: "default".into(),
            alpha_quantile: 0.9,
            kappa: 0,
            seed: 1,
            metric: "le".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryBlock {
    pub waypoints_m: Vec<[f64; 2]>,
    pub spacing_m: f64,
    pub height_m: f64,
    pub dropout_threshold_m: f64,
}

impl Default for TrajectoryBlock {
    fn default() -> Self {
        TrajectoryBlock {
            waypoints_m: Vec::new(),
            spacing_m: 3.0,
            height_m: 1.5,
            dropout_threshold_m: 25.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing experiment config")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scene.carrier_frequency_hz > 0.0) {
            bail!("scene.carrier_frequency_hz: must be positive");
        }
        if self.scene.max_reflection_order > 2 {
            bail!("scene.max_reflection_order: at most 2 is supported");
        }
        if !(0.0..=1.0).contains(&self.scene.reflection_amplitude) {
            bail!("scene.reflection_amplitude: must be in [0, 1]");
        }
        if self.grid.nx < 2 || self.grid.ny < 2 {
            bail!("grid.nx / grid.ny: need at least a 2x2 lattice");
        }
        if !(self.grid.x_min_m < self.grid.x_max_m) || !(self.grid.y_min_m < self.grid.y_max_m) {
            bail!("grid: min bounds must be below max bounds");
        }
        if self.anchors.explicit_indices.is_empty()
            && !(self.anchors.supervision_fraction > 0.0 && self.anchors.supervision_fraction < 1.0)
        {
            bail!("anchors.supervision_fraction: must be in (0, 1)");
        }
        match self.method.kind.as_str() {
            "tsne" | "ae" => {}
            other => bail!("method.kind: expected \"tsne\" or \"ae\", got \"{other}\""),
        }
        if self.ems.codebook_size == 0 || self.ems.codebook_size % 2 == 0 {
            bail!("ems.codebook_size: must be odd and >= 1");
        }
        if !(self.run.alpha_quantile > 0.0 && self.run.alpha_quantile < 1.0) {
            bail!("run.alpha_quantile: must be strictly inside (0, 1)");
        }
        match self.run.metric.as_str() {
            "le" | "neg_tw" | "neg_ct" => {}
            other => bail!("run.metric: expected le | neg_tw | neg_ct, got \"{other}\""),
        }
        match self.ems.search.as_str() {
            "exhaustive" | "greedy" => {}
            other => bail!("ems.search: expected exhaustive | greedy, got \"{other}\""),
        }
        match self.ems.active.as_str() {
            "no_ems" | "specular" | "random" | "idealized_ris" | "codeword" => {}
            other => bail!("ems.active: unknown configuration \"{other}\""),
        }
        for (j, p) in self.scene.ems_panels.iter().enumerate() {
            if p.rows == 0 || p.cols == 0 {
                bail!("scene.ems_panels[{j}]: rows and cols must be positive");
            }
        }
        Ok(())
    }

    pub fn chart_method(&self) -> ChartMethod {
        match self.method.kind.as_str() {
            "ae" => ChartMethod::Ae,
            _ => ChartMethod::Tsne,
        }
    }

    pub fn metric_kind(&self) -> emschart::metrics::MetricKind {
        match self.run.metric.as_str() {
            "neg_tw" => emschart::metrics::MetricKind::NegTrustworthiness,
            "neg_ct" => emschart::metrics::MetricKind::NegContinuity,
            _ => emschart::metrics::MetricKind::LocalizationError,
        }
    }

    fn build_array(&self, block: &ArrayBlock, path: &str) -> Result<ArrayGeometry> {
        let lambda = SPEED_OF_LIGHT / self.scene.carrier_frequency_hz;
        let boresight = Vec3::new(block.boresight[0], block.boresight[1], block.boresight[2]);
        if boresight.norm() == 0.0 {
            bail!("{path}.boresight: must be a nonzero direction");
        }
        let z = Vec3::new(0.0, 0.0, 1.0);
        let axis_x = boresight.cross(z);
        if axis_x.norm() < 1e-9 {
            bail!("{path}.boresight: must not point straight up or down");
        }
        // Horizontal axis along boresight x z keeps columns level, so the
        // codebook's "horizontal" gradients steer in azimuth.
        ArrayGeometry::planar_grid(
            Vec3::new(block.center_m[0], block.center_m[1], block.center_m[2]),
            block.rows,
            block.cols,
            block.spacing_wavelengths * lambda,
            axis_x.normalized(),
            boresight,
            block.pattern_exponent,
        )
        .map_err(|e| anyhow::anyhow!("{path}: {e}"))
    }

    /// Lattice points in row-major (y outer, x inner) order, dropping any
    /// point inside an obstacle. Returns the points and the dropped count.
    pub fn lattice_points(&self, obstacles: &[BoxObstacle]) -> (Vec<Vec3>, usize) {
        let g = &self.grid;
        let mut pts = Vec::with_capacity(g.nx * g.ny);
        let mut dropped = 0usize;
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let x = g.x_min_m + (g.x_max_m - g.x_min_m) * ix as f64 / (g.nx - 1) as f64;
                let y = g.y_min_m + (g.y_max_m - g.y_min_m) * iy as f64 / (g.ny - 1) as f64;
                let p = Vec3::new(x, y, g.height_m);
                if obstacles.iter().any(|o| o.contains_interior(p)) {
                    dropped += 1;
                } else {
                    pts.push(p);
                }
            }
        }
        (pts, dropped)
    }

    /// Builds the scene; extra points (a trajectory) may be appended
    /// after the lattice.
    pub fn build_scene(&self, extra_points: &[Vec3]) -> Result<Scene> {
        let mut obstacles = Vec::new();
        for (i, o) in self.scene.obstacles.iter().enumerate() {
            obstacles.push(
                BoxObstacle::new(
                    Vec3::new(o.min_corner_m[0], o.min_corner_m[1], o.min_corner_m[2]),
                    Vec3::new(o.max_corner_m[0], o.max_corner_m[1], o.max_corner_m[2]),
                )
                .map_err(|e| anyhow::anyhow!("scene.obstacles[{i}]: {e}"))?,
            );
        }
        let bs = self.build_array(&self.scene.bs, "scene.bs")?;
        let mut ems_panels = Vec::new();
        for (j, p) in self.scene.ems_panels.iter().enumerate() {
            ems_panels.push(self.build_array(p, &format!("scene.ems_panels[{j}]"))?);
        }
        let (mut test_points, _) = self.lattice_points(&obstacles);
        for p in extra_points {
            if obstacles.iter().any(|o| o.contains_interior(*p)) {
                bail!("trajectory: waypoint sample ({}, {}) lies inside an obstacle", p.x, p.y);
            }
            test_points.push(*p);
        }
        Ok(Scene {
            bs,
            ems_panels,
            test_points,
            obstacles,
            carrier_frequency_hz: self.scene.carrier_frequency_hz,
            max_reflection_order: self.scene.max_reflection_order,
            reflection_amplitude: self.scene.reflection_amplitude,
        })
    }

    /// Seeded uniform anchor sampling without replacement over the first
    /// `lattice_n` points (trajectory points are never anchors), or the
    /// explicit index list when given.
    pub fn select_anchors(&self, scene: &Scene, lattice_n: usize) -> Result<AnchorSet> {
        let indices: Vec<usize> = if !self.anchors.explicit_indices.is_empty() {
            for &i in &self.anchors.explicit_indices {
                if i >= lattice_n {
                    bail!("anchors.explicit_indices: {i} out of range (lattice has {lattice_n})");
                }
            }
            self.anchors.explicit_indices.clone()
        } else {
            let count = (self.anchors.supervision_fraction * lattice_n as f64).ceil() as usize;
            let count = count.clamp(3, lattice_n);
            let mut pool: Vec<usize> = (0..lattice_n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.anchors.selection_seed);
            // Partial Fisher-Yates: the first `count` entries are a
            // uniform sample without replacement.
            for i in 0..count {
                let j = i + (rng.next_u64() % (lattice_n - i) as u64) as usize;
                pool.swap(i, j);
            }
            let mut chosen = pool[..count].to_vec();
            chosen.sort_unstable();
            chosen
        };
        let coords: Vec<Vec<f64>> = indices
            .iter()
            .map(|&u| vec![scene.test_points[u].x, scene.test_points[u].y])
            .collect();
        AnchorSet::new(indices, coords).map_err(|e| anyhow::anyhow!("anchors: {e}"))
    }

    /// Derived seeds: noise, t-SNE init, AE init, random baseline.
    pub fn seeds(&self) -> DerivedSeeds {
        DerivedSeeds {
            noise: derive_seed(self.run.seed, 0),
            tsne: derive_seed(self.run.seed, 1),
            ae: derive_seed(self.run.seed, 2),
            random_baseline: derive_seed(self.run.seed, 3),
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let seeds = self.seeds();
        PipelineConfig {
            radio: RadioParams {
                tx_power_dbm: self.radio.tx_power_dbm,
                noise_power_dbm: self.radio.noise_power_dbm,
                bandwidth_hz: self.radio.bandwidth_hz,
                snapshots: self.radio.snapshots,
            },
            tsne: TsneConfig {
                perplexity: self.method.tsne.perplexity,
                iterations: self.method.tsne.iterations,
                learning_rate: self.method.tsne.learning_rate,
                momentum: self.method.tsne.momentum,
                exaggeration: self.method.tsne.exaggeration,
                exaggeration_iters: self.method.tsne.exaggeration_iters,
                latent_dim: 2,
                seed: seeds.tsne,
            },
            ae: AeConfig {
                alpha: self.method.ae.alpha,
                beta: self.method.ae.beta,
                gamma: self.method.ae.gamma,
                eta: self.method.ae.eta,
                batch_size: self.method.ae.batch_size,
                epochs: self.method.ae.epochs,
                learning_rate: self.method.ae.learning_rate,
                seed: seeds.ae,
            },
            ae_hidden: self.method.ae.hidden.clone(),
            eigen_floor: emschart::features::DEFAULT_EIGENVALUE_FLOOR,
            kappa: if self.run.kappa == 0 { None } else { Some(self.run.kappa) },
            noise_seed: seeds.noise,
        }
    }

    /// Trajectory sample points: waypoints joined by straight segments,
    /// resampled at the configured spacing.
    pub fn trajectory_points(&self) -> Vec<Vec3> {
        let t = &self.trajectory;
        if t.waypoints_m.len() < 2 {
            return t
                .waypoints_m
                .iter()
                .map(|w| Vec3::new(w[0], w[1], t.height_m))
                .collect();
        }
        let mut pts = vec![Vec3::new(t.waypoints_m[0][0], t.waypoints_m[0][1], t.height_m)];
        for w in t.waypoints_m.windows(2) {
            let a = Vec3::new(w[0][0], w[0][1], t.height_m);
            let b = Vec3::new(w[1][0], w[1][1], t.height_m);
            let len = a.distance(b);
            let steps = (len / t.spacing_m).ceil().max(1.0) as usize;
            for s in 1..=steps {
                pts.push(a + (b - a) * (s as f64 / steps as f64));
            }
        }
        pts
    }
}

use rand::SeedableRng;

#[derive(Clone, Copy, Debug)]
pub struct DerivedSeeds {
    pub noise: u64,
    pub tsne: u64,
    pub ae: u64,
    pub random_baseline: u64,
}

/// The downscaled street-canyon scenario: an 80 x 110 m region with a
/// 20 x 20 lattice, a tall mid-field blocker wall casting a deep shadow,
/// and one panel on the north tip of each side wall. Each panel is
/// oriented so its specular bounce relays the base station into the far
/// half of the shadow; the horizontal codebook slopes sweep the relayed
/// beam across it.
pub fn default_canyon() -> ExperimentConfig {
    ExperimentConfig {
        scene: SceneBlock {
            carrier_frequency_hz: 30e9,
            max_reflection_order: 1,
            reflection_amplitude: 0.5,
            bs: ArrayBlock {
                center_m: [40.0, 2.0, 8.5],
                rows: 4,
                cols: 8,
                spacing_wavelengths: 0.5,
                boresight: [0.0, 1.0, 0.0],
                pattern_exponent: 1.0,
            },
            ems_panels: vec![
                ArrayBlock {
                    center_m: [12.95, 63.0, 5.5],
                    rows: 60,
                    cols: 60,
                    spacing_wavelengths: 0.25,
                    boresight: [0.98, -0.188, -0.059],
                    pattern_exponent: 1.0,
                },
                ArrayBlock {
                    center_m: [67.05, 63.0, 5.5],
                    rows: 60,
                    cols: 60,
                    spacing_wavelengths: 0.25,
                    boresight: [-0.98, -0.188, -0.059],
                    pattern_exponent: 1.0,
                },
            ],
            obstacles: vec![
                // Mid-field blocker: casts the deep shadow north of it.
                ObstacleBlock {
                    min_corner_m: [27.0, 73.0, 0.0],
                    max_corner_m: [53.0, 76.5, 12.0],
                },
                // West and east walls carrying the panels on their north tips.
                ObstacleBlock {
                    min_corner_m: [11.2, 20.0, 0.0],
                    max_corner_m: [12.8, 64.0, 10.0],
                },
                ObstacleBlock {
                    min_corner_m: [67.2, 20.0, 0.0],
                    max_corner_m: [68.8, 64.0, 10.0],
                },
            ],
        },
        grid: GridBlock {
            x_min_m: 2.0,
            x_max_m: 78.0,
            y_min_m: 7.0,
            y_max_m: 102.0,
            nx: 20,
            ny: 20,
            height_m: 1.5,
        },
        radio: RadioBlock::default(),
        anchors: AnchorsBlock::default(),
        method: MethodBlock::default(),
        ems: EmsBlock::default(),
        run: RunBlock::default(),
        trajectory: TrajectoryBlock {
            // Serpentine sweep through the shadow zone and its edges.
            waypoints_m: vec![
                [28.0, 98.0],
                [28.0, 68.0],
                [38.0, 68.0],
                [38.0, 98.0],
                [48.0, 98.0],
                [48.0, 68.0],
                [58.0, 68.0],
                [58.0, 98.0],
            ],
            spacing_m: 3.0,
            height_m: 1.5,
            dropout_threshold_m: 25.0,
        },
    }
}
