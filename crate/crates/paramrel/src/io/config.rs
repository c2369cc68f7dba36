//! Flat key=value run configuration.
//!
//! Plain-text file, one `key = value` per line, `#` comments. Unknown keys
//! are rejected; duplicates resolve last-wins with a warning. Every run
//! writes its fully-resolved configuration next to its outputs, and the
//! resolved map has a deterministic hash so metrics rows can name the
//! exact configuration that produced them.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::DatasetKind;
use crate::model::{DataSpec, ModelConfig};
use crate::objective::{LossWeights, MmdKernel};
use crate::schedule::{AccuracySchedule, ScheduleKind};

/// (key, default, expected type) for every recognized key.
const KEYS: &[(&str, &str, ValueType)] = &[
    ("data.kind", "blobs_continuous", ValueType::Str),
    ("data.n", "2000", ValueType::UInt),
    ("data.path", "", ValueType::Str),
    ("data.labels_path", "", ValueType::Str),
    ("schedule.kind", "continuous", ValueType::Str),
    ("schedule.T", "10", ValueType::UInt),
    ("schedule.sigma1", "0.02", ValueType::Float),
    ("schedule.beta1", "4.0", ValueType::Float),
    ("model.latent_dim", "8", ValueType::UInt),
    ("model.hidden_width", "64", ValueType::UInt),
    ("model.hidden_blocks", "2", ValueType::UInt),
    ("model.time_dim", "16", ValueType::UInt),
    ("model.groups", "4", ValueType::UInt),
    ("loss.mi_weight", "0.95", ValueType::Float),
    ("loss.tc_weight", "0.1", ValueType::Float),
    // 0 selects the dimension-scaled default sqrt(latent_dim)
    ("loss.mmd_bandwidth", "0", ValueType::Float),
    ("loss.mmd_kernel", "rbf", ValueType::Str),
    ("train.epochs", "80", ValueType::UInt),
    ("train.batch_size", "32", ValueType::UInt),
    ("train.seed", "0", ValueType::UInt),
    ("train.lr", "1e-4", ValueType::Float),
    // 0 means no cap
    ("train.max_steps", "0", ValueType::UInt),
    // "auto" selects T / 2
    ("eval.t_probe", "auto", ValueType::Str),
    ("sample.z_mode", "prior", ValueType::Str),
];

#[derive(Debug, Clone, Copy)]
enum ValueType {
    Str,
    UInt,
    Float,
}

/// Fully-resolved configuration: every known key has a value.
#[derive(Debug, Clone)]
pub struct RunConfig {
    resolved: BTreeMap<String, String>,
}

impl RunConfig {
    /// Defaults, then file entries, then CLI overrides; later writers win.
    pub fn parse(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut resolved: BTreeMap<String, String> = KEYS
            .iter()
            .map(|(k, v, _)| (k.to_string(), v.to_string()))
            .collect();

        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let mut apply = |resolved: &mut BTreeMap<String, String>,
                         key: &str,
                         value: &str,
                         origin: &str|
         -> Result<()> {
            if !resolved.contains_key(key) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            let count = seen.entry(key.to_string()).or_insert(0);
            *count += 1;
            if *count > 1 {
                eprintln!("warning: duplicate config key `{key}` ({origin}); last value wins");
            }
            resolved.insert(key.to_string(), value.to_string());
            Ok(())
        };

        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (line_no, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(Error::Config(format!(
                        "{}:{}: expected `key = value`, got `{raw}`",
                        path.display(),
                        line_no + 1
                    )));
                };
                apply(&mut resolved, key.trim(), value.trim(), "config file")?;
            }
        }
        for (key, value) in overrides {
            apply(&mut resolved, key.trim(), value.trim(), "command line")?;
        }

        let config = RunConfig { resolved };
        config.validate_types()?;
        Ok(config)
    }

    fn validate_types(&self) -> Result<()> {
        for (key, _, ty) in KEYS {
            let value = &self.resolved[*key];
            let ok = match ty {
                ValueType::Str => true,
                ValueType::UInt => value.parse::<u64>().is_ok(),
                ValueType::Float => value.parse::<f64>().is_ok(),
            };
            if !ok {
                return Err(Error::Config(format!(
                    "key `{key}`: cannot parse `{value}`"
                )));
            }
        }
        // eval.t_probe is either "auto" or an unsigned integer
        let probe = &self.resolved["eval.t_probe"];
        if probe != "auto" && probe.parse::<u64>().is_err() {
            return Err(Error::Config(format!(
                "key `eval.t_probe`: expected `auto` or a step index, got `{probe}`"
            )));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        &self.resolved[key]
    }

    pub fn get_usize(&self, key: &str) -> usize {
        self.resolved[key].parse().expect("validated at parse time")
    }

    pub fn get_u64(&self, key: &str) -> u64 {
        self.resolved[key].parse().expect("validated at parse time")
    }

    pub fn get_f64(&self, key: &str) -> f64 {
        self.resolved[key].parse().expect("validated at parse time")
    }

    /// FNV-1a over the sorted resolved entries.
    pub fn hash_hex(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for (k, v) in &self.resolved {
            for byte in k.bytes().chain([b'='].into_iter()).chain(v.bytes()).chain([b'\n']) {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        format!("{h:016x}")
    }

    /// Serialize the resolved map, one key per line, sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.resolved {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    // -- typed views ---------------------------------------------------------

    pub fn dataset_kind(&self) -> Result<DatasetKind> {
        self.get("data.kind").parse()
    }

    pub fn schedule(&self) -> Result<AccuracySchedule> {
        let steps = self.get_usize("schedule.T");
        match self.get("schedule.kind") {
            "continuous" => AccuracySchedule::continuous(steps, self.get_f64("schedule.sigma1")),
            "discrete" => AccuracySchedule::discrete(steps, self.get_f64("schedule.beta1")),
            other => Err(Error::Config(format!(
                "key `schedule.kind`: expected continuous or discrete, got `{other}`"
            ))),
        }
    }

    /// Model configuration once the data dimensionality is known.
    pub fn model_config(&self, dim: usize, classes: Option<usize>) -> Result<ModelConfig> {
        let data = match (self.schedule()?.kind, classes) {
            (ScheduleKind::Continuous, _) => DataSpec::Continuous { dim },
            (ScheduleKind::Discrete, Some(k)) => DataSpec::Discrete { dim, classes: k },
            (ScheduleKind::Discrete, None) => {
                return Err(Error::Config(
                    "discrete schedule requires a class count from the dataset".into(),
                ))
            }
        };
        let config = ModelConfig {
            data,
            latent_dim: self.get_usize("model.latent_dim"),
            hidden_width: self.get_usize("model.hidden_width"),
            hidden_blocks: self.get_usize("model.hidden_blocks"),
            time_dim: self.get_usize("model.time_dim"),
            groups: self.get_usize("model.groups"),
            steps: self.get_usize("schedule.T"),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(
            self.get_f64("loss.mi_weight"),
            self.get_f64("loss.tc_weight"),
            self.get_usize("schedule.T"),
        )
    }

    pub fn mmd_kernel(&self) -> Result<MmdKernel> {
        match self.get("loss.mmd_kernel") {
            "rbf" => Ok(MmdKernel::Rbf),
            "median_rbf" => Ok(MmdKernel::MedianRbf),
            other => Err(Error::Config(format!(
                "key `loss.mmd_kernel`: expected rbf or median_rbf, got `{other}`"
            ))),
        }
    }

    /// Base RBF bandwidth; 0 in the config selects sqrt(latent_dim).
    pub fn mmd_bandwidth(&self) -> f64 {
        let raw = self.get_f64("loss.mmd_bandwidth");
        if raw > 0.0 {
            raw
        } else {
            (self.get_usize("model.latent_dim") as f64).sqrt()
        }
    }

    /// Probe step: configured value or T / 2.
    pub fn t_probe(&self) -> usize {
        match self.get("eval.t_probe") {
            "auto" => self.get_usize("schedule.T") / 2,
            v => v.parse().expect("validated at parse time"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn temp_config(text: &str) -> std::path::PathBuf {
        let mut path = std::env::temp_dir();
        path.push(format!("paramrel-config-{}.cfg", std::process::id()));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn empty_file_gives_defaults_and_stable_hash() {
        let a = RunConfig::parse(None, &[]).unwrap();
        let b = RunConfig::parse(None, &[]).unwrap();
        assert_eq!(a.get("schedule.T"), "10");
        assert_eq!(a.hash_hex(), b.hash_hex());
    }

    #[test]
    fn override_is_reflected() {
        let c = RunConfig::parse(None, &[("schedule.T".into(), "10".into())]).unwrap();
        let d = RunConfig::parse(None, &[("schedule.T".into(), "25".into())]).unwrap();
        assert_eq!(d.get_usize("schedule.T"), 25);
        assert_ne!(c.hash_hex(), d.hash_hex());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse(None, &[("no.such.key".into(), "1".into())]);
        match err {
            Err(Error::Config(msg)) => assert!(msg.contains("no.such.key")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unparsable_value_rejected() {
        let err = RunConfig::parse(None, &[("schedule.T".into(), "many".into())]);
        match err {
            Err(Error::Config(msg)) => assert!(msg.contains("schedule.T")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn file_parsing_with_comments_and_duplicates() {
        let path = temp_config(
            "# comment line\nschedule.T = 5\n\nmodel.latent_dim = 4 # inline\nschedule.T = 7\n",
        );
        let c = RunConfig::parse(Some(&path), &[]).unwrap();
        assert_eq!(c.get_usize("schedule.T"), 7, "last duplicate wins");
        assert_eq!(c.get_usize("model.latent_dim"), 4);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn t_probe_auto_is_half_t() {
        let c = RunConfig::parse(None, &[("schedule.T".into(), "12".into())]).unwrap();
        assert_eq!(c.t_probe(), 6);
        let c = RunConfig::parse(None, &[("eval.t_probe".into(), "3".into())]).unwrap();
        assert_eq!(c.t_probe(), 3);
    }

    #[test]
    fn bandwidth_auto_scales_with_latent_dim() {
        let c = RunConfig::parse(None, &[("model.latent_dim".into(), "4".into())]).unwrap();
        assert_eq!(c.mmd_bandwidth(), 2.0);
        let c = RunConfig::parse(None, &[("loss.mmd_bandwidth".into(), "1.5".into())]).unwrap();
        assert_eq!(c.mmd_bandwidth(), 1.5);
    }

    #[test]
    fn latent_constraint_violation_names_key() {
        let c = RunConfig::parse(None, &[("model.latent_dim".into(), "40".into())]).unwrap();
        match c.model_config(64, None) {
            Err(Error::Config(msg)) => assert!(msg.contains("model.latent_dim")),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
