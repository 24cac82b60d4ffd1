//! Flat `key=value` run configuration. The canonical text lists every key
//! in sorted order and is what checkpoints echo and what the hash covers.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::auxiliary::PyramidSpec;
use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::sampling::{SampleConfig, SampleMode};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    GrayscaleAux,
    Pyramid,
    Flat,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::GrayscaleAux => "grayscale-aux",
            ModelKind::Pyramid => "pyramid",
            ModelKind::Flat => "flat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grayscale-aux" => Ok(ModelKind::GrayscaleAux),
            "pyramid" => Ok(ModelKind::Pyramid),
            "flat" => Ok(ModelKind::Flat),
            _ => Err(Error::Config(format!(
                "unknown model {s:?} (expected grayscale-aux, pyramid or flat)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub height: usize,
    pub width: usize,
    /// Pyramid depth; ignored by the other models.
    pub levels: usize,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
}

fn list(v: &[usize]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(key: &str, s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| parse(key, p.trim())).collect()
}

fn parse<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}")))
}

impl RunConfig {
    /// Defaults for a model kind.
    pub fn defaults(model: ModelKind) -> Self {
        let mut arch = ArchConfig::default();
        if model == ModelKind::Pyramid {
            arch.embed_up = vec![1];
        }
        Self {
            model,
            height: 8,
            width: 8,
            levels: if model == ModelKind::Pyramid { 3 } else { 1 },
            arch,
            train: TrainConfig::default(),
            sample: SampleConfig::new(SampleMode::Ancestral, 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if self.model == ModelKind::Pyramid {
            PyramidSpec::new(self.levels, self.height, self.width)?;
        }
        if self.arch.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel must be odd, got {}", self.arch.kernel)));
        }
        if self.arch.filters == 0 || self.arch.components == 0 || self.arch.embed_filters == 0 {
            return Err(Error::Config(
                "filters, embed_filters and components must be positive".into(),
            ));
        }
        self.train.validate()?;
        if let SampleMode::Reduced(l) = self.sample.mode {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda must be finite and >= 0, got {l}")));
            }
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<&'static str, String> {
        let (mode, lambda) = match self.sample.mode {
            SampleMode::Ancestral => ("ancestral", 0.0),
            SampleMode::Reduced(l) => ("reduced", l),
            SampleMode::Map => ("map", 0.0),
        };
        let a = &self.arch;
        let t = &self.train;
        BTreeMap::from([
            ("model", self.model.as_str().to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("levels", self.levels.to_string()),
            ("blocks", a.blocks.to_string()),
            ("filters", a.filters.to_string()),
            ("kernel", a.kernel.to_string()),
            ("components", a.components.to_string()),
            ("embed_blocks", a.embed_blocks.to_string()),
            ("embed_filters", a.embed_filters.to_string()),
            ("embed_down", list(&a.embed_down)),
            ("embed_up", list(&a.embed_up)),
            ("lr_init", t.lr_init.to_string()),
            ("lr_decay", t.lr_decay.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("steps", t.max_steps.map_or("none".into(), |s| s.to_string())),
            ("dropout", t.dropout_rate.to_string()),
            ("seed", t.seed.to_string()),
            ("adam_beta1", t.adam.beta1.to_string()),
            ("adam_beta2", t.adam.beta2.to_string()),
            ("adam_eps", t.adam.eps.to_string()),
            ("sample_mode", mode.to_string()),
            ("lambda", lambda.to_string()),
            ("use_cache", self.sample.use_cache.to_string()),
        ])
    }

    /// Canonical `key=value` lines, sorted by key.
    pub fn to_text(&self) -> String {
        self.to_map().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parses `key=value` lines (blank lines and `#` comments allowed). Keys
    /// left out take the defaults of the given `model`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
        let model = pairs
            .get("model")
            .map(|m| ModelKind::parse(m))
            .transpose()?
            .unwrap_or(ModelKind::GrayscaleAux);
        let mut cfg = Self::defaults(model);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "model" => self.model = ModelKind::parse(v)?,
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "levels" => self.levels = parse(key, v)?,
            "blocks" => self.arch.blocks = parse(key, v)?,
            "filters" => self.arch.filters = parse(key, v)?,
            "kernel" => self.arch.kernel = parse(key, v)?,
            "components" => self.arch.components = parse(key, v)?,
            "embed_blocks" => self.arch.embed_blocks = parse(key, v)?,
            "embed_filters" => self.arch.embed_filters = parse(key, v)?,
            "embed_down" => self.arch.embed_down = parse_list(key, v)?,
            "embed_up" => self.arch.embed_up = parse_list(key, v)?,
            "lr_init" => self.train.lr_init = parse(key, v)?,
            "lr_decay" => self.train.lr_decay = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "steps" => self.train.max_steps = if v == "none" { None } else { Some(parse(key, v)?) },
            "dropout" => self.train.dropout_rate = parse(key, v)?,
            "seed" => {
                self.train.seed = parse(key, v)?;
                self.sample.seed = self.train.seed;
            }
            "adam_beta1" => self.train.adam.beta1 = parse(key, v)?,
            "adam_beta2" => self.train.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.train.adam.eps = parse(key, v)?,
            "sample_mode" => {
                let lambda = self.sample.mode.lambda();
                self.sample.mode = match v {
                    "ancestral" => SampleMode::Ancestral,
                    "reduced" => SampleMode::Reduced(lambda),
                    "map" => SampleMode::Map,
                    _ => return Err(Error::Config(format!("sample_mode: unknown mode {v:?}"))),
                }
            }
            "lambda" => {
                let l: f64 = parse(key, v)?;
                if matches!(self.sample.mode, SampleMode::Reduced(_)) || l != 0.0 {
                    self.sample.mode = SampleMode::Reduced(l);
                }
            }
            "use_cache" => self.sample.use_cache = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn pyramid_spec(&self) -> Result<PyramidSpec> {
        PyramidSpec::new(self.levels, self.height, self.width)
    }
}
