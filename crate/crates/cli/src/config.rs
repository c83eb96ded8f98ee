//! Resolved experiment configuration and its `--config` overlay.

use std::path::Path;

use occupancy_core::analysis::Regime;
use occupancy_core::lifetime::{LifetimeSampler, PhaseTypeSpec};
use occupancy_core::simulate::StoppingPolicy;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const CONFIG_PREFIX: &str = "# config=";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Verify,
    Simulate,
    SolveW,
    Estimate,
    Counterexample,
    TnGrowth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    Batch,
    AgeVarying,
}

/// Everything that determines a report. The worker count and output path are
/// left out on purpose: neither changes a single output byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    /// Built-in name or spec file path; comma-separated lists where a command
    /// accepts several laws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub kmax: usize,
    pub reps: u64,
    pub ntrunc: usize,
    /// 0 disables the population cap.
    pub population_cap: u64,
    pub event_cap: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_cap: Option<f64>,
    pub seed: u64,
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_ak: Option<f64>,
    pub level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub which: Option<Which>,
    pub batch_size: u32,
    pub levels: Vec<u64>,
}

impl ExperimentConfig {
    pub fn new(command: CommandKind) -> Self {
        Self {
            command,
            dist: None,
            delta: None,
            kmax: 5,
            reps: 10_000,
            ntrunc: 400,
            population_cap: 1000,
            event_cap: 1_000_000,
            time_cap: None,
            seed: 42,
            format: Format::Csv,
            from_t: None,
            from_ak: None,
            level: 1,
            regime: None,
            which: None,
            batch_size: 2,
            levels: vec![100, 1000, 10_000],
        }
    }

    /// Applies the keys of a config file on top of `self`; file values win.
    pub fn overlay(self, text: &str) -> Result<Self, CliError> {
        let file = extract_config(text)?;
        let Value::Object(file) = file else {
            return Err(CliError::Invalid("config must be a JSON object".into()));
        };
        let mut merged = serde_json::to_value(&self).expect("config serializes");
        let target = merged.as_object_mut().expect("config is an object");
        for (key, value) in file {
            target.insert(key, value);
        }
        serde_json::from_value(merged).map_err(|e| CliError::Invalid(format!("config: {e}")))
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn delta(&self) -> Result<f64, CliError> {
        match self.delta {
            Some(d) if d.is_finite() && d >= 0.0 => Ok(d),
            Some(d) => Err(CliError::Invalid(format!("--delta must be finite and nonnegative, got {d}"))),
            None => Err(CliError::Invalid("--delta is required".into())),
        }
    }

    pub fn dist_names(&self) -> Result<Vec<String>, CliError> {
        let raw = self
            .dist
            .as_deref()
            .ok_or_else(|| CliError::Invalid("--dist is required".into()))?;
        let names: Vec<String> = raw.split(',').map(|s| s.trim().to_string()).collect();
        if names.iter().any(String::is_empty) {
            return Err(CliError::Invalid(format!("empty entry in --dist `{raw}`")));
        }
        Ok(names)
    }

    pub fn samplers(&self) -> Result<Vec<(String, LifetimeSampler)>, CliError> {
        self.dist_names()?
            .into_iter()
            .map(|n| load_sampler(&n).map(|s| (n, s)))
            .collect()
    }

    pub fn policy(&self) -> StoppingPolicy {
        StoppingPolicy {
            population_cap: (self.population_cap > 0).then_some(self.population_cap),
            event_cap: self.event_cap,
            time_cap: self.time_cap,
        }
    }
}

/// A config file is either a bare JSON object, a JSON report carrying a
/// `config` member, or a CSV report whose first line embeds it.
fn extract_config(text: &str) -> Result<Value, CliError> {
    if let Some(line) = text.lines().find_map(|l| l.strip_prefix(CONFIG_PREFIX)) {
        return serde_json::from_str(line).map_err(|e| CliError::Invalid(format!("embedded config: {e}")));
    }
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::Invalid(format!("config: {e}")))?;
    match value.get("config") {
        Some(inner) if value.get("command").is_none() => Ok(inner.clone()),
        _ => Ok(value),
    }
}

pub fn load_sampler(name: &str) -> Result<LifetimeSampler, CliError> {
    if let Ok(s) = LifetimeSampler::builtin(name) {
        return Ok(s);
    }
    let path = Path::new(name);
    if !path.is_file() {
        return Err(CliError::Invalid(format!(
            "unknown distribution `{name}`: not a built-in (exp1, gamma22, mix, det1) nor a spec file"
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{name}: {e}")))?;
    let spec = PhaseTypeSpec::from_json(&text).map_err(|e| CliError::Invalid(format!("{name}: {e}")))?;
    Ok(LifetimeSampler::PhaseType(spec))
}

/// The phase-type law behind `name`; `det1` and other non-phase-type laws are
/// rejected with a pointer to `simulate`.
pub fn load_phase_type(name: &str, command: &str) -> Result<PhaseTypeSpec, CliError> {
    match load_sampler(name)? {
        LifetimeSampler::PhaseType(spec) => Ok(spec),
        _ => Err(CliError::Invalid(format!(
            "`{command}` needs a phase-type lifetime and `{name}` is not one; use `simulate` for it"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_override_flags() {
        let mut c = ExperimentConfig::new(CommandKind::Simulate);
        c.delta = Some(0.5);
        c.reps = 10;
        let c = c.overlay(r#"{"reps": 99, "dist": "mix"}"#).unwrap();
        assert_eq!((c.reps, c.dist.as_deref(), c.delta), (99, Some("mix"), Some(0.5)));
    }

    #[test]
    fn embedded_config_round_trips() {
        let mut c = ExperimentConfig::new(CommandKind::Verify);
        c.dist = Some("gamma22".into());
        c.delta = Some(2.0);
        let report = format!("{CONFIG_PREFIX}{}\nK,exact\n", c.to_json_line());
        let back = ExperimentConfig::new(CommandKind::Simulate).overlay(&report).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let c = ExperimentConfig::new(CommandKind::Estimate);
        assert!(matches!(c.overlay(r#"{"bogus": 1}"#), Err(CliError::Invalid(_))));
    }
}
