//! TOML run configuration and the frozen copy written into each run
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use aqa_core::data::{canonical_encoder_order, SynthSpec};
use aqa_core::losses::{LossConfig, LossKind};
use aqa_core::model::{Aggregation, ModelConfig};
use aqa_core::training::{cross_grid, table_grid, GridCell, TrainConfig};
use aqa_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Bumped whenever the run directory layout changes.
pub const LAYOUT_VERSION: u32 = 1;

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    /// Optional second held-out set for the `pam_srcc` column.
    #[serde(default)]
    pub pam: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Defaults to every encoder the training manifest has for all entries.
    pub encoders: Option<Vec<String>>,
    pub aggregation: Aggregation,
    pub blstm_hidden: usize,
    pub head_hidden: Vec<usize>,
    pub loss: LossConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        let base = ModelConfig::new(Vec::new(), Aggregation::Mlp);
        Self {
            encoders: None,
            aggregation: base.aggregation,
            blstm_hidden: base.blstm_hidden,
            head_hidden: base.head_hidden,
            loss: base.loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridPreset {
    /// 4 losses × (MLP on `subset`, MLP / BLSTM_t / BLSTM_h on all encoders).
    Table,
    /// Cross product of `encoder_sets`, `aggregations` and `losses`.
    Cross,
}

impl GridPreset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(GridPreset::Table),
            "cross" => Ok(GridPreset::Cross),
            other => Err(Error::Config(format!(
                "unknown grid preset `{other}` (table, cross)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub preset: GridPreset,
    /// Encoder subset of the table preset's first variant; defaults to the
    /// last encoder in fusion order.
    #[serde(default)]
    pub subset: Option<Vec<String>>,
    #[serde(default)]
    pub encoder_sets: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub aggregations: Option<Vec<Aggregation>>,
    #[serde(default)]
    pub losses: Option<Vec<LossKind>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataPaths,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: Option<GridSection>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub encoders: Option<Vec<String>>,
    pub aggregation: Option<Aggregation>,
    pub loss: Option<LossKind>,
    pub grid: Option<GridPreset>,
}

impl RunConfig {
    /// Reads the file and makes data paths absolute relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_toml(path)?;
        let base = std::path::absolute(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data.train);
        fix(&mut cfg.data.dev);
        if let Some(p) = &mut cfg.data.pam {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(e) = &o.encoders {
            self.model.encoders = Some(e.clone());
        }
        if let Some(a) = o.aggregation {
            self.model.aggregation = a;
        }
        if let Some(l) = o.loss {
            self.model.loss.kind = l;
        }
        if let Some(p) = o.grid {
            match &mut self.grid {
                Some(g) => g.preset = p,
                None => {
                    self.grid = Some(GridSection {
                        preset: p,
                        subset: None,
                        encoder_sets: None,
                        aggregations: None,
                        losses: None,
                    })
                }
            }
        }
    }

    /// Base model configuration; the model seed follows the training seed.
    pub fn model_config(&self, available: &[String]) -> Result<ModelConfig> {
        let encoders = canonical_encoder_order(
            self.model
                .encoders
                .clone()
                .unwrap_or_else(|| available.to_vec()),
        );
        let cfg = ModelConfig {
            encoders,
            aggregation: self.model.aggregation,
            blstm_hidden: self.model.blstm_hidden,
            head_hidden: self.model.head_hidden.clone(),
            loss: self.model.loss,
            seed: self.train.seed,
        };
        cfg.validate()?;
        self.train.validate()?;
        Ok(cfg)
    }

    /// Cells to train: the grid when one is configured, otherwise the
    /// single model of the `model` section.
    pub fn cells(&self, base: &ModelConfig) -> Result<Vec<GridCell>> {
        let full = base.encoders.clone();
        let Some(grid) = &self.grid else {
            return Ok(vec![GridCell {
                encoders: full,
                aggregation: base.aggregation,
                loss: base.loss.kind,
            }]);
        };
        match grid.preset {
            GridPreset::Table => {
                let subset = match &grid.subset {
                    Some(s) => s.clone(),
                    None => vec![full
                        .last()
                        .cloned()
                        .ok_or_else(|| Error::Config("no encoders".into()))?],
                };
                Ok(table_grid(&full, &subset))
            }
            GridPreset::Cross => Ok(cross_grid(
                grid.encoder_sets
                    .as_deref()
                    .unwrap_or(std::slice::from_ref(&full)),
                grid.aggregations.as_deref().unwrap_or(&Aggregation::ALL),
                grid.losses.as_deref().unwrap_or(&LossKind::ALL),
            )),
        }
    }
}

/// What a run directory was produced from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenConfig<T> {
    pub layout_version: u32,
    pub command: String,
    pub engine_version: String,
    pub config: T,
}

impl<T: Serialize> FrozenConfig<T> {
    pub fn new(command: &str, config: T) -> Self {
        Self {
            layout_version: LAYOUT_VERSION,
            command: command.to_string(),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        aqa_core::write_atomic(dir.join("config.json"), text.as_bytes())
    }
}

/// Resolved training run, as frozen into `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub data: DataPaths,
    pub base_model: ModelConfig,
    pub train: TrainConfig,
    pub cells: Vec<GridCell>,
}

pub fn load_synth_spec(path: Option<&Path>) -> Result<SynthSpec> {
    match path {
        Some(p) => read_toml(p),
        None => Ok(SynthSpec::default()),
    }
}
