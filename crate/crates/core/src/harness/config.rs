use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{TabularConfig, TabularKind};
use crate::delay::Delay;
use crate::dida::DidaConfig;
use crate::envs::{GaussianWalkParams, NoiseSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Dida,
    Sarsa,
    Dsarsa,
    AugSarsa,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dida => "dida",
            Algorithm::Sarsa => "sarsa",
            Algorithm::Dsarsa => "dsarsa",
            Algorithm::AugSarsa => "aug-sarsa",
        }
    }

    pub fn tabular_kind(self) -> Option<TabularKind> {
        match self {
            Algorithm::Dida => None,
            Algorithm::Sarsa => Some(TabularKind::Sarsa),
            Algorithm::Dsarsa => Some(TabularKind::DSarsa),
            Algorithm::AugSarsa => Some(TabularKind::AugSarsa),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub algorithm: Option<Algorithm>,
    /// Integer or fractional delay in steps.
    pub delay: Option<f64>,
    pub seeds: Vec<u64>,
    /// Where artifacts go; the command line may override it.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            algorithm: None,
            delay: None,
            seeds: vec![0],
            output_dir: None,
        }
    }
}

/// Names accepted in `environment.name`.
pub const ENVIRONMENTS: [&str; 3] = ["pendulum", "chain", "gaussian-walk"];

/// Environment choice plus the parameters of every environment; only those of the named one apply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentSection {
    pub name: Option<String>,
    /// Pendulum action noise, one of [`crate::envs::NOISE_NAMES`].
    pub noise: Option<String>,
    pub literal_beta_shift: bool,
    /// Bins per state dimension for the tabular learners on the pendulum.
    pub bins: usize,
    pub n_states: usize,
    pub slip: f64,
    pub gamma: f64,
    pub walk: GaussianWalkParams,
}

impl Default for EnvironmentSection {
    fn default() -> Self {
        EnvironmentSection {
            name: None,
            noise: None,
            literal_beta_shift: false,
            bins: 15,
            n_states: 5,
            slip: 0.1,
            gamma: 0.9,
            walk: GaussianWalkParams::default(),
        }
    }
}

impl EnvironmentSection {
    pub fn noise_spec(&self) -> Result<Option<NoiseSpec>> {
        self.noise
            .as_deref()
            .filter(|n| *n != "none")
            .map(|n| NoiseSpec::named(n, self.literal_beta_shift))
            .transpose()
    }
}

/// Names accepted in `expert.name`.
pub const EXPERTS: [&str; 3] = ["pendulum-energy", "value-iteration", "gaussian-optimal"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertSection {
    /// Defaults to the environment's expert.
    pub name: Option<String>,
    /// Add the expert's training-equivalent steps to DIDA's step axis.
    pub count_steps: bool,
    /// Training-equivalent steps of a learned expert. The shipped experts are analytic or
    /// model-based and count 0.
    pub training_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub environment: EnvironmentSection,
    #[serde(default)]
    pub expert: ExpertSection,
    #[serde(default)]
    pub dida: DidaConfig,
    #[serde(default)]
    pub tabular: TabularConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        self.experiment
            .algorithm
            .ok_or_else(|| Error::config("experiment.algorithm", "missing; expected dida, sarsa, dsarsa or aug-sarsa"))
    }

    pub fn delay(&self) -> Result<Delay> {
        let d = self
            .experiment
            .delay
            .ok_or_else(|| Error::config("experiment.delay", "missing"))?;
        Delay::from_real(d).map_err(|_| Error::config("experiment.delay", format!("{d} is not a nonnegative delay")))
    }

    pub fn environment_name(&self) -> Result<&str> {
        let name = self
            .environment
            .name
            .as_deref()
            .ok_or_else(|| Error::config("environment.name", format!("missing; expected one of {ENVIRONMENTS:?}")))?;
        if !ENVIRONMENTS.contains(&name) {
            return Err(Error::config(
                "environment.name",
                format!("unknown environment `{name}`; expected one of {ENVIRONMENTS:?}"),
            ));
        }
        Ok(name)
    }

    pub fn expert_name(&self) -> Result<&str> {
        let default = match self.environment_name()? {
            "pendulum" => "pendulum-energy",
            "chain" => "value-iteration",
            _ => "gaussian-optimal",
        };
        let name = self.expert.name.as_deref().unwrap_or(default);
        if !EXPERTS.contains(&name) {
            return Err(Error::config(
                "expert.name",
                format!("unknown expert `{name}`; expected one of {EXPERTS:?}"),
            ));
        }
        if name != default {
            return Err(Error::config(
                "expert.name",
                format!("`{name}` cannot act in `{}`; use `{default}`", self.environment_name()?),
            ));
        }
        Ok(name)
    }

    /// DIDA settings with the expert-step accounting applied.
    pub fn dida_config(&self) -> DidaConfig {
        let mut c = self.dida.clone();
        c.expert_steps = if self.expert.count_steps {
            self.expert.training_steps
        } else {
            0
        };
        c
    }

    pub fn validate(&self) -> Result<()> {
        let algorithm = self.algorithm()?;
        self.delay()?;
        self.environment_name()?;
        self.expert_name()?;
        if self.experiment.seeds.is_empty() {
            return Err(Error::config("experiment.seeds", "needs at least one seed"));
        }
        if self.expert.training_steps > 0 {
            return Err(Error::config(
                "expert.training_steps",
                format!("`{}` is not a learned expert and has no training steps", self.expert_name()?),
            ));
        }
        self.environment.noise_spec()?;
        self.environment.walk.validate()?;
        if self.environment.bins == 0 {
            return Err(Error::config("environment.bins", "must be positive"));
        }
        if algorithm == Algorithm::Dida {
            self.dida.validate()?;
        } else if self.environment_name()? == "gaussian-walk" {
            return Err(Error::config(
                "experiment.algorithm",
                format!("{} needs a discretized environment; use pendulum or chain", algorithm.name()),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical JSON of everything but the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.experiment.output_dir = None;
        let json = serde_json::to_string(&c).expect("configs serialize");
        Sha256::digest(json.as_bytes())[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[experiment]
algorithm = "dida"
delay = 5
seeds = [0, 1]

[environment]
name = "pendulum"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.algorithm().unwrap(), Algorithm::Dida);
        assert_eq!(c.delay().unwrap(), Delay::integer(5));
        assert_eq!(c.dida, DidaConfig::default());
        assert_eq!(c.expert_name().unwrap(), "pendulum-energy");
        assert_eq!(c.environment.bins, 15);
    }

    #[test]
    fn missing_environment_name_is_named() {
        let text = MINIMAL.replace("name = \"pendulum\"", "");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "environment.name"), "{err}");
        assert!(err.to_string().contains("environment.name"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[dida]\niteratons = 3\n");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("iteratons"), "{err}");
        let text = MINIMAL.replace("\"dida\"", "\"ppo\"");
        assert!(ExperimentConfig::from_toml(&text).unwrap_err().to_string().contains("ppo"));
    }

    #[test]
    fn invalid_values_name_their_key() {
        let key = |text: &str| match ExperimentConfig::from_toml(text).unwrap_err() {
            Error::Config { key, .. } => key,
            other => panic!("{other}"),
        };
        assert_eq!(key(&MINIMAL.replace("delay = 5", "delay = -1")), "experiment.delay");
        assert_eq!(key(&MINIMAL.replace("seeds = [0, 1]", "seeds = []")), "experiment.seeds");
        assert_eq!(key(&MINIMAL.replace("\"pendulum\"", "\"cartpole\"")), "environment.name");
        assert_eq!(key(&format!("{MINIMAL}noise = \"cauchy\"\n")), "environment.noise");
        assert_eq!(key(&format!("{MINIMAL}\n[expert]\nname = \"value-iteration\"\n")), "expert.name");
        assert_eq!(
            key(&MINIMAL.replace("\"dida\"", "\"sarsa\"").replace("\"pendulum\"", "\"gaussian-walk\"")),
            "experiment.algorithm"
        );
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.experiment.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        b.dida.iterations = 3;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn toml_round_trip() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&a.to_toml().unwrap()).unwrap(), a);
    }

    #[test]
    fn fractional_delay_and_expert_steps() {
        let text = MINIMAL.replace("delay = 5", "delay = 0.5") + "\n[expert]\ncount_steps = true\n";
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert!(c.delay().unwrap().is_fractional());
        assert_eq!(c.dida_config().expert_steps, 0);
    }
}
