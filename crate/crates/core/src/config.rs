//! Flat `key = value` settings (TOML syntax, no tables) with command-line
//! overrides, and the pipeline configuration built from them.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::benchmark::VocabConfig;
use crate::data::{Adapter, DatasetSpec, LabelScheme};
use crate::encoder::Preset;
use crate::error::{Error, Result};
use crate::eval::Averaging;
use crate::heads::HeadVariant;
use crate::train::{FinetuneConfig, TrainConfig};

pub const KEYS: &[&str] = &[
    "dataset_name",
    "dataset_path",
    "adapter",
    "scheme",
    "text_column",
    "label_column",
    "output_dir",
    "preset",
    "head",
    "averaging",
    "finetune_lr",
    "finetune_batch_size",
    "finetune_epochs",
    "max_len",
    "eval_batch_size",
    "head_lr",
    "head_batch_size",
    "head_max_epochs",
    "patience",
    "vocab_size",
    "vocab_min_freq",
    "lowercase",
    "presets",
    "heads",
    "seeds",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    table: toml::Table,
    /// Directory that relative paths are resolved against.
    base: Option<PathBuf>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (k, v) in &table {
            if v.is_table() {
                return Err(Error::Config(format!("`{k}`: nested tables are not supported")));
            }
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown setting `{k}`")));
            }
        }
        Ok(Self { table, base: None })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        s.base = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    /// Applies `key=value`. The value is read as TOML, or as a bare string
    /// when it does not parse.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("unknown setting `{k}`")));
        }
        let value = format!("x = {v}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("x"))
            .unwrap_or_else(|| toml::Value::String(v.to_string()));
        self.table.insert(k.to_string(), value);
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.table.contains_key(key)
    }

    fn text(&self, key: &str) -> Option<String> {
        self.table.get(key).map(|v| match v {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    }

    /// Parses a scalar setting with `FromStr`.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.text(key)
            .map(|s| s.parse::<T>().map_err(|e| Error::Config(format!("`{key}` = {s}: {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::Config(format!("missing setting `{key}`")))
    }

    /// An array setting, or a single scalar treated as a one-element list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.table.get(key) else {
            return Ok(None);
        };
        let items: Vec<String> = match v {
            toml::Value::Array(a) => a
                .iter()
                .map(|x| match x {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect(),
            _ => vec![self.text(key).expect("present")],
        };
        items
            .iter()
            .map(|s| s.parse::<T>().map_err(|e| Error::Config(format!("`{key}` item {s}: {e}"))))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.get::<String>(key)?.map(|s| {
            let p = PathBuf::from(s);
            match &self.base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        }))
    }
}

/// Everything one pipeline or benchmark run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset: DatasetSpec,
    pub preset: Preset,
    pub head: HeadVariant,
    pub finetune: FinetuneConfig,
    pub train: TrainConfig,
    pub vocab: VocabConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub averaging: Averaging,
    pub presets: Vec<Preset>,
    pub heads: Vec<HeadVariant>,
    pub seeds: Vec<u64>,
}

impl PipelineConfig {
    /// Defaults follow the published recipe; `seed` drives every random stream.
    pub fn from_settings(s: &Settings, seed: u64) -> Result<Self> {
        let path = s
            .path("dataset_path")?
            .ok_or_else(|| Error::Config("missing setting `dataset_path`".into()))?;
        let mut adapter: Adapter = s.require("adapter")?;
        if let Adapter::CovidCsv {
            text_column,
            label_column,
        } = &mut adapter
        {
            if let Some(t) = s.get("text_column")? {
                *text_column = t;
            }
            if let Some(l) = s.get("label_column")? {
                *label_column = l;
            }
        }
        let scheme: LabelScheme = s.require("scheme")?;
        let name = match s.get::<String>("dataset_name")? {
            Some(n) => n,
            None => path
                .file_stem()
                .map(|x| x.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
        };
        let output_dir = s
            .path("output_dir")?
            .ok_or_else(|| Error::Config("missing setting `output_dir`".into()))?;
        let ft_default = FinetuneConfig::new(seed);
        let finetune = FinetuneConfig {
            lr: s.get_or("finetune_lr", ft_default.lr)?,
            batch_size: s.get_or("finetune_batch_size", ft_default.batch_size)?,
            epochs: s.get_or("finetune_epochs", ft_default.epochs)?,
            seed,
            max_len: s.get_or("max_len", ft_default.max_len)?,
            eval_batch_size: s.get_or("eval_batch_size", ft_default.eval_batch_size)?,
        };
        finetune.validate()?;
        let tr_default = TrainConfig::new(seed);
        let train = TrainConfig {
            lr: s.get_or("head_lr", tr_default.lr)?,
            batch_size: s.get_or("head_batch_size", tr_default.batch_size)?,
            max_epochs: s.get_or("head_max_epochs", tr_default.max_epochs)?,
            patience: s.get_or("patience", tr_default.patience)?,
            seed,
        };
        train.validate()?;
        let vd = VocabConfig::default();
        let vocab = VocabConfig {
            target_size: s.get_or("vocab_size", vd.target_size)?,
            min_freq: s.get_or("vocab_min_freq", vd.min_freq)?,
            lowercase: s.get_or("lowercase", vd.lowercase)?,
        };
        let preset = s.get_or("preset", Preset::Tiny)?;
        let head = s.get_or("head", HeadVariant::Mlp4)?;
        let presets = s.list("presets")?.unwrap_or_else(|| vec![preset]);
        let heads = s.list("heads")?.unwrap_or_else(|| vec![head]);
        let seeds = s.list("seeds")?.unwrap_or_else(|| vec![seed]);
        for (what, n) in [("presets", presets.len()), ("heads", heads.len()), ("seeds", seeds.len())] {
            if n == 0 {
                return Err(Error::Config(format!("`{what}` is empty")));
            }
        }
        if presets.iter().collect::<BTreeSet<_>>().len() != presets.len()
            || heads.iter().collect::<BTreeSet<_>>().len() != heads.len()
        {
            return Err(Error::Config("`presets` and `heads` must not repeat entries".into()));
        }
        Ok(Self {
            dataset: DatasetSpec::new(name, path, adapter, scheme),
            preset,
            head,
            finetune,
            train,
            vocab,
            seed,
            output_dir,
            averaging: s.get_or("averaging", Averaging::Macro)?,
            presets,
            heads,
            seeds,
        })
    }
}
