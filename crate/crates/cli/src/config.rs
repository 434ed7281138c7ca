//! Pipeline configuration: a flat `key = value` file with dotted section
//! prefixes, overridden by `CBE_*` environment variables (dots become
//! underscores, uppercased), overridden in turn by `--set key=value` flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use cbe_core::embed::{SgnsConfig, SifConfig};
use cbe_core::eval::{ModelGrid, ScoreMetric, TermCountMode};
use cbe_core::fusion::FusionStrategy;
use cbe_core::learn::Metric;
use cbe_core::walks::WalkConfig;

use crate::CliError;

/// Environment variables override file values under this prefix.
pub const ENV_PREFIX: &str = "CBE_";

/// Every key the config file, environment, and `--set` accept.
pub const KNOWN_KEYS: &[&str] = &[
    "paths.corpus",
    "paths.kg",
    "paths.gazetteer",
    "paths.curation",
    "paths.additions",
    "paths.text_vectors",
    "paths.output_dir",
    "linker.mode",
    "linker.endpoint",
    "linker.timeout_ms",
    "linker.min_count",
    "walk.max_depth",
    "walk.max_walks",
    "walk.include_predicates",
    "walk.seed",
    "embed.text.dim",
    "embed.text.window",
    "embed.text.negatives",
    "embed.text.epochs",
    "embed.text.learning_rate",
    "embed.text.learning_rate_min",
    "embed.text.subsample",
    "embed.text.min_count",
    "embed.text.seed",
    "embed.kg.dim",
    "embed.kg.window",
    "embed.kg.negatives",
    "embed.kg.epochs",
    "embed.kg.learning_rate",
    "embed.kg.learning_rate_min",
    "embed.kg.subsample",
    "embed.kg.min_count",
    "embed.kg.seed",
    "sif.a",
    "sif.remove_pc",
    "fusion.strategy",
    "train.ratio",
    "train.folds",
    "train.seed",
    "train.score",
    "grid.logreg.l2",
    "grid.logreg.lr",
    "grid.logreg.epochs",
    "grid.mlp.hidden",
    "grid.mlp.lr",
    "grid.mlp.epochs",
    "grid.knn.k",
    "grid.knn.metric",
    "bias.top_n",
    "bias.mode",
];

/// Where entity mentions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkerMode {
    /// Local longest-match lookup only.
    Gazetteer,
    /// Remote annotator only.
    Remote,
    /// Gazetteer and remote results merged per post.
    Union,
}

impl std::fmt::Display for LinkerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinkerMode::Gazetteer => write!(f, "gazetteer"),
            LinkerMode::Remote => write!(f, "remote"),
            LinkerMode::Union => write!(f, "union"),
        }
    }
}

impl FromStr for LinkerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gazetteer" => Ok(LinkerMode::Gazetteer),
            "remote" => Ok(LinkerMode::Remote),
            "union" => Ok(LinkerMode::Union),
            other => Err(format!("unknown linker mode {other:?}")),
        }
    }
}

/// Input and output locations. Relative paths resolve against the config
/// file's directory; empty optional paths fall back to bundled defaults.
#[derive(Debug, Clone, Default)]
pub struct PathSettings {
    pub corpus: String,
    pub kg: String,
    pub gazetteer: String,
    pub curation: String,
    pub additions: String,
    pub text_vectors: String,
    pub output_dir: String,
}

/// Entity-linking stage settings.
#[derive(Debug, Clone)]
pub struct LinkerSettings {
    pub mode: LinkerMode,
    pub endpoint: String,
    pub timeout_ms: u64,
    pub min_count: u64,
}

impl Default for LinkerSettings {
    fn default() -> Self {
        LinkerSettings {
            mode: LinkerMode::Gazetteer,
            endpoint: String::new(),
            timeout_ms: 5000,
            min_count: 1,
        }
    }
}

/// Skip-gram settings for one embedding space (text tokens or graph nodes).
#[derive(Debug, Clone)]
pub struct EmbedSettings {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub learning_rate_min: f64,
    pub subsample: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        let core = SgnsConfig::default();
        EmbedSettings {
            dim: core.dim,
            window: core.window,
            negatives: core.negatives,
            epochs: core.epochs,
            learning_rate: core.learning_rate,
            learning_rate_min: core.learning_rate_min,
            subsample: core.subsample_threshold,
            min_count: core.min_count,
            seed: core.seed,
        }
    }
}

impl EmbedSettings {
    pub fn to_core(&self) -> SgnsConfig {
        SgnsConfig {
            dim: self.dim,
            window: self.window,
            negatives: self.negatives,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            learning_rate_min: self.learning_rate_min,
            subsample_threshold: self.subsample,
            min_count: self.min_count,
            seed: self.seed,
        }
    }

    fn canon(&self, prefix: &str) -> String {
        format!(
            "{p}.dim={}\n{p}.window={}\n{p}.negatives={}\n{p}.epochs={}\n\
             {p}.learning_rate={:?}\n{p}.learning_rate_min={:?}\n\
             {p}.subsample={:?}\n{p}.min_count={}\n{p}.seed={}\n",
            self.dim,
            self.window,
            self.negatives,
            self.epochs,
            self.learning_rate,
            self.learning_rate_min,
            self.subsample,
            self.min_count,
            self.seed,
            p = prefix,
        )
    }
}

/// Split, cross-validation, and model-selection settings.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub ratio: f64,
    pub folds: usize,
    pub seed: u64,
    pub score: ScoreMetric,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            ratio: 0.7,
            folds: 10,
            seed: 1,
            score: ScoreMetric::F1,
        }
    }
}

/// Hyperparameter grids, one per model family.
#[derive(Debug, Clone)]
pub struct GridSettings {
    pub logreg_l2: Vec<f64>,
    pub logreg_lr: Vec<f64>,
    pub logreg_epochs: Vec<usize>,
    pub mlp_hidden: Vec<usize>,
    pub mlp_lr: Vec<f64>,
    pub mlp_epochs: Vec<usize>,
    pub knn_k: Vec<usize>,
    pub knn_metric: Vec<Metric>,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            logreg_l2: vec![0.0, 0.01, 0.1],
            logreg_lr: vec![0.5],
            logreg_epochs: vec![300],
            mlp_hidden: vec![16],
            mlp_lr: vec![0.3],
            mlp_epochs: vec![300],
            knn_k: vec![5, 11],
            knn_metric: vec![Metric::Cosine],
        }
    }
}

impl GridSettings {
    /// The grid for one model family name (`logreg`, `mlp`, or `knn`).
    pub fn for_family(&self, family: &str) -> Result<ModelGrid, CliError> {
        match family {
            "logreg" => Ok(ModelGrid::LogReg {
                l2: self.logreg_l2.clone(),
                lr: self.logreg_lr.clone(),
                epochs: self.logreg_epochs.clone(),
            }),
            "mlp" => Ok(ModelGrid::Mlp {
                hidden: self.mlp_hidden.clone(),
                lr: self.mlp_lr.clone(),
                epochs: self.mlp_epochs.clone(),
            }),
            "knn" => Ok(ModelGrid::Knn {
                k: self.knn_k.clone(),
                metric: self.knn_metric.clone(),
            }),
            other => Err(CliError::Config(format!(
                "unknown model family {other:?} (expected logreg, mlp, or knn)"
            ))),
        }
    }
}

/// Label-leakage diagnostic settings.
#[derive(Debug, Clone)]
pub struct BiasSettings {
    pub top_n: usize,
    pub mode: TermCountMode,
}

impl Default for BiasSettings {
    fn default() -> Self {
        BiasSettings {
            top_n: 165,
            mode: TermCountMode::Tokens,
        }
    }
}

/// The whole pipeline configuration after file, environment, and flag
/// layers are applied.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Directory relative paths resolve against (the config file's parent).
    base: PathBuf,
    /// `--output-dir` flag override, taken as given.
    output_override: Option<PathBuf>,
    pub paths: PathSettings,
    pub linker: LinkerSettings,
    pub walk: WalkSettings,
    pub text_embed: EmbedSettings,
    pub kg_embed: EmbedSettings,
    pub sif_a: f64,
    pub sif_remove_pc: bool,
    pub fusion_strategy: FusionStrategy,
    pub train: TrainSettings,
    pub grids: GridSettings,
    pub bias: BiasSettings,
}

/// Graph-walk stage settings.
#[derive(Debug, Clone)]
pub struct WalkSettings {
    pub max_depth: usize,
    pub max_walks: usize,
    pub include_predicates: bool,
    pub seed: u64,
}

impl Default for WalkSettings {
    fn default() -> Self {
        let core = WalkConfig::default();
        WalkSettings {
            max_depth: core.max_depth,
            max_walks: core.max_walks,
            include_predicates: core.include_predicates,
            seed: core.seed,
        }
    }
}

impl WalkSettings {
    pub fn to_core(&self) -> WalkConfig {
        WalkConfig {
            max_depth: self.max_depth,
            max_walks: self.max_walks,
            include_predicates: self.include_predicates,
            seed: self.seed,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            base: PathBuf::from("."),
            output_override: None,
            paths: PathSettings::default(),
            linker: LinkerSettings::default(),
            walk: WalkSettings::default(),
            text_embed: EmbedSettings::default(),
            kg_embed: EmbedSettings::default(),
            sif_a: SifConfig::default().a,
            sif_remove_pc: SifConfig::default().remove_pc,
            fusion_strategy: FusionStrategy::Concat,
            train: TrainSettings::default(),
            grids: GridSettings::default(),
            bias: BiasSettings::default(),
        }
    }
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| CliError::Config(format!("config key {key}: bad value {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    let items: Result<Vec<T>, CliError> = value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse_as(key, v))
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err(CliError::Config(format!("config key {key}: empty list")));
    }
    Ok(items)
}

impl PipelineConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "paths.corpus" => self.paths.corpus = value.to_string(),
            "paths.kg" => self.paths.kg = value.to_string(),
            "paths.gazetteer" => self.paths.gazetteer = value.to_string(),
            "paths.curation" => self.paths.curation = value.to_string(),
            "paths.additions" => self.paths.additions = value.to_string(),
            "paths.text_vectors" => self.paths.text_vectors = value.to_string(),
            "paths.output_dir" => self.paths.output_dir = value.to_string(),
            "linker.mode" => self.linker.mode = parse_as(key, value)?,
            "linker.endpoint" => self.linker.endpoint = value.to_string(),
            "linker.timeout_ms" => self.linker.timeout_ms = parse_as(key, value)?,
            "linker.min_count" => self.linker.min_count = parse_as(key, value)?,
            "walk.max_depth" => self.walk.max_depth = parse_as(key, value)?,
            "walk.max_walks" => self.walk.max_walks = parse_as(key, value)?,
            "walk.include_predicates" => self.walk.include_predicates = parse_as(key, value)?,
            "walk.seed" => self.walk.seed = parse_as(key, value)?,
            "embed.text.dim" => self.text_embed.dim = parse_as(key, value)?,
            "embed.text.window" => self.text_embed.window = parse_as(key, value)?,
            "embed.text.negatives" => self.text_embed.negatives = parse_as(key, value)?,
            "embed.text.epochs" => self.text_embed.epochs = parse_as(key, value)?,
            "embed.text.learning_rate" => self.text_embed.learning_rate = parse_as(key, value)?,
            "embed.text.learning_rate_min" => {
                self.text_embed.learning_rate_min = parse_as(key, value)?
            }
            "embed.text.subsample" => self.text_embed.subsample = parse_as(key, value)?,
            "embed.text.min_count" => self.text_embed.min_count = parse_as(key, value)?,
            "embed.text.seed" => self.text_embed.seed = parse_as(key, value)?,
            "embed.kg.dim" => self.kg_embed.dim = parse_as(key, value)?,
            "embed.kg.window" => self.kg_embed.window = parse_as(key, value)?,
            "embed.kg.negatives" => self.kg_embed.negatives = parse_as(key, value)?,
            "embed.kg.epochs" => self.kg_embed.epochs = parse_as(key, value)?,
            "embed.kg.learning_rate" => self.kg_embed.learning_rate = parse_as(key, value)?,
            "embed.kg.learning_rate_min" => {
                self.kg_embed.learning_rate_min = parse_as(key, value)?
            }
            "embed.kg.subsample" => self.kg_embed.subsample = parse_as(key, value)?,
            "embed.kg.min_count" => self.kg_embed.min_count = parse_as(key, value)?,
            "embed.kg.seed" => self.kg_embed.seed = parse_as(key, value)?,
            "sif.a" => self.sif_a = parse_as(key, value)?,
            "sif.remove_pc" => self.sif_remove_pc = parse_as(key, value)?,
            "fusion.strategy" => {
                self.fusion_strategy = FusionStrategy::from_str(value)
                    .map_err(|e| CliError::Config(format!("config key {key}: {e}")))?
            }
            "train.ratio" => self.train.ratio = parse_as(key, value)?,
            "train.folds" => self.train.folds = parse_as(key, value)?,
            "train.seed" => self.train.seed = parse_as(key, value)?,
            "train.score" => {
                self.train.score = ScoreMetric::from_str(value)
                    .map_err(|e| CliError::Config(format!("config key {key}: {e}")))?
            }
            "grid.logreg.l2" => self.grids.logreg_l2 = parse_list(key, value)?,
            "grid.logreg.lr" => self.grids.logreg_lr = parse_list(key, value)?,
            "grid.logreg.epochs" => self.grids.logreg_epochs = parse_list(key, value)?,
            "grid.mlp.hidden" => self.grids.mlp_hidden = parse_list(key, value)?,
            "grid.mlp.lr" => self.grids.mlp_lr = parse_list(key, value)?,
            "grid.mlp.epochs" => self.grids.mlp_epochs = parse_list(key, value)?,
            "grid.knn.k" => self.grids.knn_k = parse_list(key, value)?,
            "grid.knn.metric" => self.grids.knn_metric = parse_list(key, value)?,
            "bias.top_n" => self.bias.top_n = parse_as(key, value)?,
            "bias.mode" => {
                self.bias.mode = TermCountMode::from_str(value)
                    .map_err(|e| CliError::Config(format!("config key {key}: {e}")))?
            }
            other => {
                return Err(CliError::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Parses a config file's `key = value` lines into this config.
    pub fn apply_file(&mut self, content: &str) -> Result<(), CliError> {
        for (index, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("config line {}: expected key = value", index + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies any `CBE_*` environment overrides for known keys.
    pub fn apply_env(&mut self) -> Result<(), CliError> {
        for key in KNOWN_KEYS {
            let var = format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase());
            if let Ok(value) = std::env::var(&var) {
                self.set(key, &value)?;
            }
        }
        Ok(())
    }

    /// Applies `--set key=value` flag overrides.
    pub fn apply_sets(&mut self, sets: &[String]) -> Result<(), CliError> {
        for entry in sets {
            let (key, value) = entry.split_once('=').ok_or_else(|| {
                CliError::Config(format!("--set {entry:?}: expected key=value"))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Loads the file/environment/flag layers in precedence order
    /// (flags over environment over file).
    pub fn load(
        config_path: Option<&Path>,
        sets: &[String],
        output_dir: Option<&Path>,
    ) -> Result<PipelineConfig, CliError> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = config_path {
            let content = crate::read_file(path)?;
            cfg.base = path
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."));
            cfg.apply_file(&content)?;
        }
        cfg.apply_env()?;
        cfg.apply_sets(sets)?;
        cfg.output_override = output_dir.map(Path::to_path_buf);
        Ok(cfg)
    }

    /// Resolves a config-relative path value.
    pub fn resolve(&self, value: &str) -> PathBuf {
        let p = Path::new(value);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn required_path(&self, key: &str, value: &str) -> Result<PathBuf, CliError> {
        if value.is_empty() {
            return Err(CliError::Config(format!("config key {key} is not set")));
        }
        let path = self.resolve(value);
        if !path.exists() {
            return Err(CliError::Config(format!(
                "config key {key}: no such file: {}",
                path.display()
            )));
        }
        Ok(path)
    }

    pub fn corpus_path(&self) -> Result<PathBuf, CliError> {
        self.required_path("paths.corpus", &self.paths.corpus)
    }

    pub fn kg_path(&self) -> Result<PathBuf, CliError> {
        self.required_path("paths.kg", &self.paths.kg)
    }

    pub fn gazetteer_path(&self) -> Result<PathBuf, CliError> {
        self.required_path("paths.gazetteer", &self.paths.gazetteer)
    }

    /// `None` means the bundled default curation rules.
    pub fn curation_path(&self) -> Result<Option<PathBuf>, CliError> {
        if self.paths.curation.is_empty() {
            return Ok(None);
        }
        self.required_path("paths.curation", &self.paths.curation).map(Some)
    }

    /// `None` means the bundled default concept additions.
    pub fn additions_path(&self) -> Result<Option<PathBuf>, CliError> {
        if self.paths.additions.is_empty() {
            return Ok(None);
        }
        self.required_path("paths.additions", &self.paths.additions).map(Some)
    }

    /// `None` means the text side trains its own skip-gram embeddings.
    pub fn text_vectors_path(&self) -> Result<Option<PathBuf>, CliError> {
        if self.paths.text_vectors.is_empty() {
            return Ok(None);
        }
        self.required_path("paths.text_vectors", &self.paths.text_vectors).map(Some)
    }

    /// Output directory: the `--output-dir` flag wins over `paths.output_dir`
    /// (which resolves against the config file), which defaults to `./out`.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(dir) = &self.output_override {
            return dir.clone();
        }
        if self.paths.output_dir.is_empty() {
            PathBuf::from("out")
        } else {
            self.resolve(&self.paths.output_dir)
        }
    }

    pub fn sif_config(&self) -> SifConfig {
        SifConfig {
            a: self.sif_a,
            remove_pc: self.sif_remove_pc,
        }
    }

    /// The linker mode actually used, given whether `--remote-linker` was
    /// passed. Remote traffic is refused without the flag; with it, plain
    /// gazetteer mode upgrades to the union of both sources.
    pub fn effective_linker_mode(&self, remote_enabled: bool) -> Result<LinkerMode, CliError> {
        match (self.linker.mode, remote_enabled) {
            (LinkerMode::Gazetteer, false) => Ok(LinkerMode::Gazetteer),
            (mode, false) => Err(CliError::Config(format!(
                "linker.mode={mode} needs the --remote-linker flag"
            ))),
            (LinkerMode::Gazetteer, true) => Ok(LinkerMode::Union),
            (mode, true) => Ok(mode),
        }
    }

    // Canonical per-stage representations feeding the cache keys: stable
    // key=value lines so a byte-equal string means an equivalent stage.

    pub fn canon_preprocess(&self) -> String {
        "preprocess.rules=default-v1\n".to_string()
    }

    pub fn canon_link(&self, mode: LinkerMode) -> String {
        format!(
            "linker.mode={}\nlinker.endpoint={}\nlinker.timeout_ms={}\nlinker.min_count={}\n",
            mode, self.linker.endpoint, self.linker.timeout_ms, self.linker.min_count
        )
    }

    pub fn canon_walk(&self) -> String {
        format!(
            "walk.max_depth={}\nwalk.max_walks={}\nwalk.include_predicates={}\nwalk.seed={}\n",
            self.walk.max_depth, self.walk.max_walks, self.walk.include_predicates, self.walk.seed
        )
    }

    pub fn canon_embed_text(&self) -> String {
        self.text_embed.canon("embed.text")
    }

    pub fn canon_embed_kg(&self) -> String {
        self.kg_embed.canon("embed.kg")
    }

    pub fn canon_sif(&self) -> String {
        format!("sif.a={:?}\nsif.remove_pc={}\n", self.sif_a, self.sif_remove_pc)
    }

    pub fn canon_fusion(&self) -> String {
        format!("fusion.strategy={}\n", self.fusion_strategy)
    }

    pub fn canon_train(&self) -> String {
        format!(
            "train.ratio={:?}\ntrain.folds={}\ntrain.seed={}\ntrain.score={}\n",
            self.train.ratio, self.train.folds, self.train.seed, self.train.score
        )
    }

    pub fn canon_grids(&self) -> String {
        let floats = |v: &[f64]| {
            v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
        };
        let ints = |v: &[usize]| {
            v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        };
        format!(
            "grid.logreg.l2={}\ngrid.logreg.lr={}\ngrid.logreg.epochs={}\n\
             grid.mlp.hidden={}\ngrid.mlp.lr={}\ngrid.mlp.epochs={}\n\
             grid.knn.k={}\ngrid.knn.metric={}\n",
            floats(&self.grids.logreg_l2),
            floats(&self.grids.logreg_lr),
            ints(&self.grids.logreg_epochs),
            ints(&self.grids.mlp_hidden),
            floats(&self.grids.mlp_lr),
            ints(&self.grids.mlp_epochs),
            ints(&self.grids.knn_k),
            self.grids
                .knn_metric
                .iter()
                .map(Metric::to_string)
                .collect::<Vec<_>>()
                .join(","),
        )
    }

    pub fn canon_bias(&self) -> String {
        let mode = match self.bias.mode {
            TermCountMode::Tokens => "tokens",
            TermCountMode::Documents => "documents",
        };
        format!("bias.top_n={}\nbias.mode={}\n", self.bias.top_n, mode)
    }
}
