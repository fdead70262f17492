//! Flat run configuration: one JSON object of scalar keys, resolved on top of
//! a named preset.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mgdoc::config::{TextBackbone, VisionBackbone};
use mgdoc::finetune::FinetuneConfig;
use mgdoc::{Granularities, ModelConfig, PretrainTasks, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SEED_ENV: &str = "MGDOC_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    // encoder
    pub d_model: usize,
    pub text_backbone: TextBackbone,
    pub vision_backbone: VisionBackbone,
    pub roi_pool_rows: usize,
    pub roi_pool_cols: usize,
    pub vocab_size: usize,
    pub image_size: usize,
    pub conv_channels_1: usize,
    pub conv_channels_2: usize,
    pub freeze_backbones: bool,
    pub text_table: Option<PathBuf>,
    pub vision_table: Option<PathBuf>,
    // attention
    pub n_heads: usize,
    pub n_mg_layers: usize,
    pub n_self_layers: usize,
    pub n_cross_layers: usize,
    pub rel_buckets: usize,
    pub rel_linear_max: f64,
    pub ffn_mult: usize,
    pub containment_eps: f64,
    pub row_height: f64,
    // pre-training
    pub mask_ratio: f64,
    pub mask_page: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub tasks: String,
    /// Save a checkpoint every this many steps (0: final only).
    pub checkpoint_every: usize,
    pub log_wall_clock: bool,
    // fine-tuning
    pub task: String,
    pub granularities: String,
    pub ft_lr: f64,
    pub ft_epochs: usize,
    pub ft_batch_size: usize,
    pub ft_warmup_frac: f64,
    // data and run
    pub corpus: Option<PathBuf>,
    pub eval_corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (model, train) = match name {
            "desk" => (ModelConfig::desk(), TrainConfig::desk()),
            "paper" => (ModelConfig::paper(), TrainConfig::paper()),
            other => bail!("unknown preset `{other}` (expected desk or paper)"),
        };
        let ft = FinetuneConfig::default();
        let (e, a) = (&model.encoder, &model.attention);
        Ok(Self {
            preset: name.into(),
            d_model: e.d_model,
            text_backbone: e.text_backbone,
            vision_backbone: e.vision_backbone,
            roi_pool_rows: e.roi_pool.0,
            roi_pool_cols: e.roi_pool.1,
            vocab_size: e.vocab_size,
            image_size: e.image_size,
            conv_channels_1: e.conv_channels.0,
            conv_channels_2: e.conv_channels.1,
            freeze_backbones: e.freeze_backbones,
            text_table: None,
            vision_table: None,
            n_heads: a.n_heads,
            n_mg_layers: a.n_mg_layers,
            n_self_layers: a.n_self_layers,
            n_cross_layers: a.n_cross_layers,
            rel_buckets: a.rel_buckets,
            rel_linear_max: a.rel_linear_max,
            ffn_mult: a.ffn_mult,
            containment_eps: a.containment_eps,
            row_height: model.row_height,
            mask_ratio: train.mask_ratio,
            mask_page: train.mask_page,
            lr: train.lr,
            batch_size: train.batch_size,
            epochs: train.epochs,
            warmup_frac: train.warmup_frac,
            weight_decay: train.weight_decay,
            beta1: train.beta1,
            beta2: train.beta2,
            adam_eps: train.adam_eps,
            grad_clip: train.grad_clip,
            tasks: train.tasks.label(),
            checkpoint_every: 0,
            log_wall_clock: true,
            task: "entity".into(),
            granularities: ft.granularities.label(),
            ft_lr: ft.lr,
            ft_epochs: ft.epochs,
            ft_batch_size: ft.batch_size,
            ft_warmup_frac: ft.warmup_frac,
            corpus: None,
            eval_corpus: None,
            out: None,
            seed: train.seed,
        })
    }

    /// Resolves a config object: the `preset` key (default `desk`) supplies
    /// every value, the remaining keys override it. Unknown keys are errors
    /// naming the key.
    pub fn resolve(overrides: &Map<String, Value>) -> Result<Self> {
        let preset = match overrides.get("preset") {
            None => "desk",
            Some(Value::String(s)) => s.as_str(),
            Some(v) => bail!("config key `preset` must be a string, got {v}"),
        };
        let base = match serde_json::to_value(Self::preset(preset)?)? {
            Value::Object(m) => m,
            _ => unreachable!("a struct serializes to an object"),
        };
        let mut merged = base.clone();
        for (k, v) in overrides {
            if !base.contains_key(k) {
                bail!("unknown config key `{k}`");
            }
            merged.insert(k.clone(), v.clone());
        }
        let cfg: Self = match serde_json::from_value(Value::Object(merged)) {
            Ok(c) => c,
            Err(e) => {
                // Find the key whose value does not fit.
                for (k, v) in overrides {
                    let mut probe = base.clone();
                    probe.insert(k.clone(), v.clone());
                    if let Err(e) = serde_json::from_value::<Self>(Value::Object(probe)) {
                        bail!("config key `{k}`: {e}");
                    }
                }
                return Err(e.into());
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; `None` gives the desk preset.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let overrides = match path {
            None => Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                match serde_json::from_str::<Value>(&text).with_context(|| format!("parsing config {}", p.display()))? {
                    Value::Object(m) => m,
                    _ => bail!("config {} must be a JSON object", p.display()),
                }
            }
        };
        Self::resolve(&overrides)
    }

    /// Applies the seed environment override if set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| anyhow!("{SEED_ENV}=`{v}` is not an unsigned integer"))?;
        }
        Ok(self)
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::desk();
        let e = &mut m.encoder;
        e.d_model = self.d_model;
        e.text_backbone = self.text_backbone;
        e.vision_backbone = self.vision_backbone;
        e.roi_pool = (self.roi_pool_rows, self.roi_pool_cols);
        e.vocab_size = self.vocab_size;
        e.image_size = self.image_size;
        e.conv_channels = (self.conv_channels_1, self.conv_channels_2);
        e.freeze_backbones = self.freeze_backbones;
        let a = &mut m.attention;
        a.n_heads = self.n_heads;
        a.n_mg_layers = self.n_mg_layers;
        a.n_self_layers = self.n_self_layers;
        a.n_cross_layers = self.n_cross_layers;
        a.rel_buckets = self.rel_buckets;
        a.rel_linear_max = self.rel_linear_max;
        a.ffn_mult = self.ffn_mult;
        a.containment_eps = self.containment_eps;
        m.row_height = self.row_height;
        m
    }

    pub fn pretrain_tasks(&self) -> Result<PretrainTasks> {
        PretrainTasks::parse(&self.tasks).context("config key `tasks`")
    }

    pub fn granularity_set(&self) -> Result<Granularities> {
        Granularities::parse(&self.granularities).context("config key `granularities`")
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            mask_ratio: self.mask_ratio,
            mask_page: self.mask_page,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            warmup_frac: self.warmup_frac,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            grad_clip: self.grad_clip,
            seed: self.seed,
            tasks: self.pretrain_tasks()?,
        })
    }

    pub fn finetune_config(&self) -> Result<FinetuneConfig> {
        Ok(FinetuneConfig {
            lr: self.ft_lr,
            epochs: self.ft_epochs,
            batch_size: self.ft_batch_size,
            warmup_frac: self.ft_warmup_frac,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            seed: self.seed,
            granularities: self.granularity_set()?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config()?.validate()?;
        self.finetune_config()?.validate()?;
        self.task.parse::<mgdoc::finetune::Task>()?;
        Ok(())
    }

    /// Writes `config.resolved.json` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("config.resolved.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Hash of the resolved config, recorded in metrics files.
    pub fn hash(&self) -> Result<String> {
        Ok(mgdoc::finetune::config_hash(&serde_json::to_value(self)?))
    }
}
