//! Experiment configuration: a flat `key = value` text file whose keys
//! mirror the fields of [`ExperimentConfig`]. `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{SplitSpec, Strategy};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Number of clients `K`.
    pub clients: usize,
    /// Pre-training rounds `T`.
    pub rounds: usize,
    /// Fine-tuning rounds `T_ft`.
    pub ft_rounds: usize,
    pub local_epochs: usize,
    /// Prompt-tuning epochs per fine-tuning round.
    pub ft_epochs: usize,
    pub lr: f64,
    /// Prompt learning rate `eta`.
    pub lr_ft: f64,
    /// Embedding width `d`.
    pub d: usize,
    pub d_in: usize,
    /// Random-walk positional-encoding depth.
    pub d_pe: usize,
    /// Content vocabulary size (the separator is one past it).
    pub vocab: u32,
    /// History pool capacity `R`.
    pub history: usize,
    /// Prompt pool size `M`.
    pub pool_size: usize,
    /// Text prompt length `L_p`.
    pub prompt_len: usize,
    pub noise_std: f64,
    pub cos_threshold: f64,
    pub sharpness: f64,
    /// Contrastive batch size `N`.
    pub batch: usize,
    pub probe_size: usize,
    /// Neighbors sampled for knowledge clarity.
    pub clarity_k: usize,
    pub max_summary_len: usize,
    /// Labeled train nodes per class; `None` uses `train_frac`.
    pub shots: Option<usize>,
    pub train_frac: f64,
    pub val_frac: f64,
    pub workers: usize,
    // synthetic domains
    pub domains: usize,
    pub classes: usize,
    pub nodes_per_client: usize,
    /// How each domain graph is divided among its clients.
    pub partition: Strategy,
    pub p_in: f64,
    pub p_out: f64,
    /// Distance between any two class means.
    pub separation: f64,
    pub feature_noise: f64,
    pub tokens_per_node: usize,
    pub text_coupling: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            clients: 3,
            rounds: 30,
            ft_rounds: 20,
            local_epochs: 5,
            ft_epochs: 50,
            lr: 0.5,
            lr_ft: 0.1,
            d: 32,
            d_in: 16,
            d_pe: 8,
            vocab: 240,
            history: 5,
            pool_size: 10,
            prompt_len: 16,
            noise_std: 0.1,
            cos_threshold: 0.9,
            sharpness: 10.0,
            batch: 64,
            probe_size: 64,
            clarity_k: 5,
            max_summary_len: 64,
            shots: None,
            train_frac: 0.6,
            val_frac: 0.2,
            workers: 1,
            domains: 2,
            classes: 2,
            nodes_per_client: 60,
            partition: Strategy::LabelStratified,
            p_in: 0.15,
            p_out: 0.01,
            separation: 4.0,
            feature_noise: 1.0,
            tokens_per_node: 8,
            text_coupling: 0.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl ExperimentConfig {
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_frac: self.train_frac,
            val_frac: self.val_frac,
            shots: self.shots,
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" | "seeds" => self.seed = parse(key, value)?,
            "clients" | "K" => self.clients = parse(key, value)?,
            "rounds" | "T" => self.rounds = parse(key, value)?,
            "ft_rounds" | "T_ft" => self.ft_rounds = parse(key, value)?,
            "local_epochs" => self.local_epochs = parse(key, value)?,
            "ft_epochs" => self.ft_epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_ft" | "eta" => self.lr_ft = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "d_in" => self.d_in = parse(key, value)?,
            "d_pe" => self.d_pe = parse(key, value)?,
            "vocab" => self.vocab = parse(key, value)?,
            "history" | "R" => self.history = parse(key, value)?,
            "pool_size" | "M" => self.pool_size = parse(key, value)?,
            "prompt_len" | "L_p" => self.prompt_len = parse(key, value)?,
            "noise_std" => self.noise_std = parse(key, value)?,
            "cos_threshold" => self.cos_threshold = parse(key, value)?,
            "sharpness" => self.sharpness = parse(key, value)?,
            "batch" | "N" => self.batch = parse(key, value)?,
            "probe_size" => self.probe_size = parse(key, value)?,
            "clarity_k" => self.clarity_k = parse(key, value)?,
            "max_summary_len" => self.max_summary_len = parse(key, value)?,
            "shots" => {
                self.shots = match value {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "train_frac" => self.train_frac = parse(key, value)?,
            "val_frac" => self.val_frac = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "domains" => self.domains = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "nodes_per_client" => self.nodes_per_client = parse(key, value)?,
            "partition" => {
                self.partition = match value {
                    "edge_cut" => Strategy::EdgeCut,
                    "label_stratified" => Strategy::LabelStratified,
                    v => {
                        return Err(Error::Config(format!(
                            "`partition`: unknown strategy `{v}`"
                        )))
                    }
                }
            }
            "p_in" => self.p_in = parse(key, value)?,
            "p_out" => self.p_out = parse(key, value)?,
            "separation" => self.separation = parse(key, value)?,
            "feature_noise" => self.feature_noise = parse(key, value)?,
            "tokens_per_node" => self.tokens_per_node = parse(key, value)?,
            "text_coupling" => self.text_coupling = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key=value, got `{line}`",
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Serializes every field back into the file format.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let partition = match self.partition {
            Strategy::EdgeCut => "edge_cut",
            Strategy::LabelStratified => "label_stratified",
        };
        let shots = self.shots.map_or("none".to_string(), |v| v.to_string());
        let fields: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("clients", self.clients.to_string()),
            ("rounds", self.rounds.to_string()),
            ("ft_rounds", self.ft_rounds.to_string()),
            ("local_epochs", self.local_epochs.to_string()),
            ("ft_epochs", self.ft_epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_ft", self.lr_ft.to_string()),
            ("d", self.d.to_string()),
            ("d_in", self.d_in.to_string()),
            ("d_pe", self.d_pe.to_string()),
            ("vocab", self.vocab.to_string()),
            ("history", self.history.to_string()),
            ("pool_size", self.pool_size.to_string()),
            ("prompt_len", self.prompt_len.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("cos_threshold", self.cos_threshold.to_string()),
            ("sharpness", self.sharpness.to_string()),
            ("batch", self.batch.to_string()),
            ("probe_size", self.probe_size.to_string()),
            ("clarity_k", self.clarity_k.to_string()),
            ("max_summary_len", self.max_summary_len.to_string()),
            ("shots", shots),
            ("train_frac", self.train_frac.to_string()),
            ("val_frac", self.val_frac.to_string()),
            ("workers", self.workers.to_string()),
            ("domains", self.domains.to_string()),
            ("classes", self.classes.to_string()),
            ("nodes_per_client", self.nodes_per_client.to_string()),
            ("partition", partition.to_string()),
            ("p_in", self.p_in.to_string()),
            ("p_out", self.p_out.to_string()),
            ("separation", self.separation.to_string()),
            ("feature_noise", self.feature_noise.to_string()),
            ("tokens_per_node", self.tokens_per_node.to_string()),
            ("text_coupling", self.text_coupling.to_string()),
        ];
        for (k, v) in &fields {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clients", self.clients),
            ("local_epochs", self.local_epochs),
            ("d", self.d),
            ("d_in", self.d_in),
            ("d_pe", self.d_pe),
            ("history", self.history),
            ("pool_size", self.pool_size),
            ("batch", self.batch),
            ("probe_size", self.probe_size),
            ("clarity_k", self.clarity_k),
            ("max_summary_len", self.max_summary_len),
            ("workers", self.workers),
            ("domains", self.domains),
            ("nodes_per_client", self.nodes_per_client),
            ("tokens_per_node", self.tokens_per_node),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be >= 1")));
        }
        if self.classes < 2 {
            return Err(Error::Config("`classes` must be >= 2".into()));
        }
        if self.classes > self.d_in {
            return Err(Error::Config(
                "`classes` cannot exceed `d_in` (orthogonal class means)".into(),
            ));
        }
        if self.domains > self.clients {
            return Err(Error::Config(
                "every domain needs at least one client".into(),
            ));
        }
        let per_class = self.vocab as usize / (self.domains * self.classes);
        if per_class == 0 {
            return Err(Error::Config(
                "`vocab` too small for domains x classes token ranges".into(),
            ));
        }
        if self.nodes_per_client < self.classes {
            return Err(Error::Config(
                "`nodes_per_client` must be >= `classes`".into(),
            ));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lr_ft", self.lr_ft),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("`{name}` must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.train_frac)
            || !(0.0..=1.0).contains(&self.val_frac)
            || self.train_frac + self.val_frac > 1.0
        {
            return Err(Error::Config(
                "split fractions must lie in [0, 1] and sum to <= 1".into(),
            ));
        }
        if !(self.p_out >= 0.0 && self.p_in > self.p_out && self.p_in <= 1.0) {
            return Err(Error::Config("need 0 <= p_out < p_in <= 1".into()));
        }
        if !(self.sharpness.is_finite() && self.sharpness >= 0.0) {
            return Err(Error::Config("`sharpness` must be finite and >= 0".into()));
        }
        if !(-1.0..=1.0).contains(&self.cos_threshold) {
            return Err(Error::Config("`cos_threshold` must lie in [-1, 1]".into()));
        }
        if self.shots == Some(0) {
            return Err(Error::Config("`shots` must be >= 1 when set".into()));
        }
        Ok(())
    }
}
