//! Declarative run configuration: flat `key = value` text with dotted keys.
//!
//! Unknown keys are rejected. Explicit `*.enabled` flags must agree with the
//! chosen method; unset flags are derived from it.

use std::path::PathBuf;

use crate::augment::{CutoutConfig, MixupConfig};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::prune::{PruneSchedule, PruneScope, SelectionMode};

/// The six experiment arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Control,
    Mixup,
    Cutout,
    Prune,
    MixupPrune,
    CutoutPrune,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Control,
        Method::Mixup,
        Method::Cutout,
        Method::Prune,
        Method::MixupPrune,
        Method::CutoutPrune,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            Method::Control => "control",
            Method::Mixup => "mixup",
            Method::Cutout => "cutout",
            Method::Prune => "prune",
            Method::MixupPrune => "mixup_prune",
            Method::CutoutPrune => "cutout_prune",
        }
    }

    /// Human-readable name used in result tables.
    pub fn display(&self) -> &'static str {
        match self {
            Method::Control => "Control",
            Method::Mixup => "Mixup",
            Method::Cutout => "Cutout",
            Method::Prune => "Pruning",
            Method::MixupPrune => "Mixup & Pruning",
            Method::CutoutPrune => "Cutout & Pruning",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.iter().find(|m| m.key() == s).copied().ok_or_else(|| {
            let keys: Vec<&str> = Self::ALL.iter().map(|m| m.key()).collect();
            Error::config(format!("unknown method `{s}`; expected one of {keys:?}"))
        })
    }

    pub fn uses_mixup(&self) -> bool {
        matches!(self, Method::Mixup | Method::MixupPrune)
    }

    pub fn uses_cutout(&self) -> bool {
        matches!(self, Method::Cutout | Method::CutoutPrune)
    }

    pub fn uses_prune(&self) -> bool {
        matches!(self, Method::Prune | Method::MixupPrune | Method::CutoutPrune)
    }
}

/// Independent seeds for the independent random streams.
#[derive(Debug, Clone, Copy, Default)]
pub struct Seeds {
    pub init: u64,
    pub augment: u64,
    pub prune: u64,
    pub shuffle: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Cifar,
    Synthetic { train_n: usize, test_n: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub depth: usize,
    pub epochs: usize,
    pub lr: f64,
    /// `(epoch, multiplier)` pairs; the multiplier applies from that epoch on.
    pub lr_schedule: Vec<(usize, f64)>,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seeds: Seeds,
    pub mixup: MixupConfig,
    pub cutout: CutoutConfig,
    pub prune: PruneSchedule,
    pub standard_augment: bool,
    pub data: DataSource,
    pub data_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(method: Method, depth: usize) -> Result<Self> {
        ModelSpec::new(depth)?;
        Ok(ExperimentConfig {
            method,
            depth,
            epochs: 200,
            lr: 0.1,
            lr_schedule: vec![(100, 0.1), (150, 0.1)],
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 5e-4,
            seeds: Seeds::default(),
            mixup: MixupConfig { enabled: method.uses_mixup(), ..Default::default() },
            cutout: CutoutConfig { enabled: method.uses_cutout(), ..Default::default() },
            prune: PruneSchedule::default(),
            standard_augment: true,
            data: DataSource::Cifar,
            data_dir: None,
        })
    }

    pub fn parse_file(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {} is not a `key = value` pair: `{raw}`",
                    lineno + 1
                )));
            };
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }

        let get = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());

        const KNOWN: [&str; 25] = [
            "method",
            "depth",
            "epochs",
            "lr",
            "lr.schedule",
            "batch_size",
            "momentum",
            "weight_decay",
            "seed.init",
            "seed.augment",
            "seed.prune",
            "seed.shuffle",
            "mixup.enabled",
            "mixup.alpha",
            "cutout.enabled",
            "cutout.size",
            "prune.enabled",
            "prune.keep_ratio",
            "prune.p",
            "prune.mode",
            "prune.scope",
            "prune.frequency",
            "augment.standard",
            "data.source",
            "data.dir",
        ];
        const KNOWN_DATA: [&str; 3] = ["data.synthetic_n", "data.synthetic_test_n", "data.seed"];
        for (key, _) in &pairs {
            if !KNOWN.contains(&key.as_str()) && !KNOWN_DATA.contains(&key.as_str()) {
                return Err(Error::config(format!("unknown config key `{key}`")));
            }
        }

        let method = Method::parse(
            get("method").ok_or_else(|| Error::config("missing required key `method`"))?,
        )?;
        let depth = parse_num::<usize>(get("depth"), "depth")?
            .ok_or_else(|| Error::config("missing required key `depth`"))?;
        let mut config = ExperimentConfig::new(method, depth)?;

        if let Some(v) = parse_num::<usize>(get("epochs"), "epochs")? {
            config.epochs = v;
        }
        if let Some(v) = parse_num::<f64>(get("lr"), "lr")? {
            config.lr = v;
        }
        if let Some(v) = get("lr.schedule") {
            config.lr_schedule = parse_schedule(v)?;
        }
        if let Some(v) = parse_num::<usize>(get("batch_size"), "batch_size")? {
            if v == 0 {
                return Err(Error::config("batch_size must be at least 1"));
            }
            config.batch_size = v;
        }
        if let Some(v) = parse_num::<f64>(get("momentum"), "momentum")? {
            config.momentum = v;
        }
        if let Some(v) = parse_num::<f64>(get("weight_decay"), "weight_decay")? {
            config.weight_decay = v;
        }
        if let Some(v) = parse_num::<u64>(get("seed.init"), "seed.init")? {
            config.seeds.init = v;
        }
        if let Some(v) = parse_num::<u64>(get("seed.augment"), "seed.augment")? {
            config.seeds.augment = v;
        }
        if let Some(v) = parse_num::<u64>(get("seed.prune"), "seed.prune")? {
            config.seeds.prune = v;
        }
        if let Some(v) = parse_num::<u64>(get("seed.shuffle"), "seed.shuffle")? {
            config.seeds.shuffle = v;
        }
        if let Some(v) = parse_num::<f64>(get("mixup.alpha"), "mixup.alpha")? {
            config.mixup.alpha = v;
        }
        if let Some(v) = parse_num::<usize>(get("cutout.size"), "cutout.size")? {
            config.cutout.mask_size = v;
        }
        if let Some(v) = parse_num::<f64>(get("prune.keep_ratio"), "prune.keep_ratio")? {
            config.prune.keep_ratio = v;
        }
        if let Some(v) = parse_num::<f64>(get("prune.p"), "prune.p")? {
            config.prune.p_norm = v;
        }
        if let Some(v) = get("prune.mode") {
            config.prune.mode = SelectionMode::parse(v)?;
        }
        if let Some(v) = get("prune.scope") {
            config.prune.scope = PruneScope::parse(v)?;
        }
        if let Some(v) = parse_num::<usize>(get("prune.frequency"), "prune.frequency")? {
            config.prune.frequency = v;
        }
        if let Some(v) = parse_bool(get("augment.standard"), "augment.standard")? {
            config.standard_augment = v;
        }
        if let Some(v) = get("data.dir") {
            config.data_dir = Some(PathBuf::from(v));
        }
        match get("data.source") {
            None | Some("cifar") => {}
            Some("synthetic") => {
                let train_n =
                    parse_num::<usize>(get("data.synthetic_n"), "data.synthetic_n")?.unwrap_or(256);
                let test_n = parse_num::<usize>(get("data.synthetic_test_n"), "data.synthetic_test_n")?
                    .unwrap_or(50);
                let seed = parse_num::<u64>(get("data.seed"), "data.seed")?.unwrap_or(0);
                config.data = DataSource::Synthetic { train_n, test_n, seed };
            }
            Some(other) => {
                return Err(Error::config(format!(
                    "unknown data.source `{other}` (expected cifar or synthetic)"
                )));
            }
        }

        // Explicit enables must agree with the method.
        for (key, explicit, required) in [
            ("mixup.enabled", parse_bool(get("mixup.enabled"), "mixup.enabled")?, method.uses_mixup()),
            ("cutout.enabled", parse_bool(get("cutout.enabled"), "cutout.enabled")?, method.uses_cutout()),
            ("prune.enabled", parse_bool(get("prune.enabled"), "prune.enabled")?, method.uses_prune()),
        ] {
            if let Some(v) = explicit {
                if v != required {
                    return Err(Error::config(format!(
                        "{key} = {v} contradicts method `{}`",
                        method.key()
                    )));
                }
            }
        }
        config.mixup.enabled = method.uses_mixup();
        config.cutout.enabled = method.uses_cutout();

        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        ModelSpec::new(self.depth)?;
        if self.lr <= 0.0 {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.method.uses_mixup() {
            self.mixup.validate()?;
        }
        if self.method.uses_cutout() {
            self.cutout.validate(crate::data::IMAGE_SIDE)?;
        }
        if self.method.uses_prune() {
            self.prune.validate()?;
        }
        Ok(())
    }

    /// Learning rate in effect at `epoch` under the step schedule.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.lr;
        for &(at, mult) in &self.lr_schedule {
            if epoch >= at {
                lr *= mult;
            }
        }
        lr
    }

    /// Canonical rendering used for hashing; independent of key order in the
    /// source text.
    pub fn canonical_string(&self) -> String {
        let schedule: Vec<String> =
            self.lr_schedule.iter().map(|(e, m)| format!("{e}:{m}")).collect();
        let data = match &self.data {
            DataSource::Cifar => "cifar".to_string(),
            DataSource::Synthetic { train_n, test_n, seed } => {
                format!("synthetic:{train_n}:{test_n}:{seed}")
            }
        };
        format!(
            "method={} depth={} epochs={} lr={} sched={} bs={} mom={} wd={} seeds={}/{}/{}/{} \
             mixup={}:{} cutout={}:{} prune={}:{}:{}:{:?}:{:?}:{} std_aug={} data={}",
            self.method.key(),
            self.depth,
            self.epochs,
            self.lr,
            schedule.join(","),
            self.batch_size,
            self.momentum,
            self.weight_decay,
            self.seeds.init,
            self.seeds.augment,
            self.seeds.prune,
            self.seeds.shuffle,
            self.mixup.enabled,
            self.mixup.alpha,
            self.cutout.enabled,
            self.cutout.mask_size,
            self.method.uses_prune(),
            self.prune.keep_ratio,
            self.prune.p_norm,
            self.prune.mode,
            self.prune.scope,
            self.prune.frequency,
            self.standard_augment,
            data,
        )
    }

    /// FNV-1a hash of the canonical rendering, as fixed-width hex.
    pub fn config_hash(&self) -> String {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.canonical_string().bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

fn parse_num<T: std::str::FromStr>(value: Option<&str>, key: &str) -> Result<Option<T>> {
    match value {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::config(format!("invalid value `{v}` for key `{key}`"))),
    }
}

fn parse_bool(value: Option<&str>, key: &str) -> Result<Option<bool>> {
    match value {
        None => Ok(None),
        Some("true") => Ok(Some(true)),
        Some("false") => Ok(Some(false)),
        Some(v) => Err(Error::config(format!("invalid boolean `{v}` for key `{key}`"))),
    }
}

fn parse_schedule(text: &str) -> Result<Vec<(usize, f64)>> {
    if text == "none" {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for part in text.split(',') {
        let Some((epoch, mult)) = part.split_once(':') else {
            return Err(Error::config(format!(
                "lr.schedule entries are `epoch:multiplier`, got `{part}`"
            )));
        };
        let epoch = epoch
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::config(format!("invalid schedule epoch `{epoch}`")))?;
        let mult = mult
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::config(format!("invalid schedule multiplier `{mult}`")))?;
        out.push((epoch, mult));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "method = control\ndepth = 20\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.method, Method::Control);
        assert_eq!(c.epochs, 200);
        assert_eq!(c.lr, 0.1);
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.lr_schedule, vec![(100, 0.1), (150, 0.1)]);
        assert!(!c.mixup.enabled && !c.cutout.enabled);
    }

    #[test]
    fn unknown_key_is_named_in_the_error() {
        let err = ExperimentConfig::parse("method = control\ndepth = 20\nprune.rato = 0.9\n")
            .unwrap_err();
        assert!(err.to_string().contains("prune.rato"), "{err}");
    }

    #[test]
    fn method_determines_enables() {
        let c = ExperimentConfig::parse("method = mixup_prune\ndepth = 32\n").unwrap();
        assert!(c.mixup.enabled && !c.cutout.enabled && c.method.uses_prune());
    }

    #[test]
    fn contradictory_enable_is_rejected() {
        let err =
            ExperimentConfig::parse("method = mixup\ndepth = 20\nmixup.enabled = false\n").unwrap_err();
        assert!(err.to_string().contains("contradicts"), "{err}");
        let err =
            ExperimentConfig::parse("method = control\ndepth = 20\ncutout.enabled = true\n").unwrap_err();
        assert!(err.to_string().contains("contradicts"), "{err}");
    }

    #[test]
    fn lr_schedule_applies_cumulatively() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.lr_at(0), 0.1);
        assert_eq!(c.lr_at(99), 0.1);
        assert!((c.lr_at(100) - 0.01).abs() < 1e-12);
        assert!((c.lr_at(150) - 0.001).abs() < 1e-12);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::parse(MINIMAL).unwrap();
        let b = ExperimentConfig::parse("depth = 20\nmethod = control\n").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c = ExperimentConfig::parse("method = control\ndepth = 20\nepochs = 3\n").unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn invalid_depth_is_config_error() {
        assert!(ExperimentConfig::parse("method = control\ndepth = 21\n").is_err());
    }

    #[test]
    fn synthetic_source_parses() {
        let c = ExperimentConfig::parse(
            "method = control\ndepth = 20\ndata.source = synthetic\ndata.synthetic_n = 64\n",
        )
        .unwrap();
        assert_eq!(c.data, DataSource::Synthetic { train_n: 64, test_n: 50, seed: 0 });
    }
}
