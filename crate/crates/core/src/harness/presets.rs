use super::config::ExperimentConfig;
use crate::error::{Error, Result};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub toml: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "dida-pendulum",
        description: "DIDA on the pendulum at full scale: 245 iterations of 10,000 steps",
        toml: r#"[experiment]
algorithm = "dida"
delay = 5
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]

[environment]
name = "pendulum"

[dida]
iterations = 245
steps_per_iteration = 10000
retention = 10
train_steps = 2500

[dida.model]
hidden = [100, 100, 10]
learning_rate = 0.001
batch_size = 64
"#,
    },
    Preset {
        name: "dida-pendulum-desk",
        description: "DIDA on the pendulum at desk scale: 50 iterations of 2,000 steps",
        toml: r#"[experiment]
algorithm = "dida"
delay = 5
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]

[environment]
name = "pendulum"
"#,
    },
    Preset {
        name: "sarsa-pendulum",
        description: "Memoryless SARSA(lambda) on the 15x15x3 pendulum grid: 2,000 epochs of 5,000 steps",
        toml: r#"[experiment]
algorithm = "sarsa"
delay = 5
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]

[environment]
name = "pendulum"
bins = 15

[tabular]
iterations = 2000
steps_per_iteration = 5000

[tabular.params]
alpha = 0.1
gamma = 0.99
lambda = 0.9
epsilon = 0.2
"#,
    },
    Preset {
        name: "dsarsa-pendulum",
        description: "dSARSA(lambda) on the 15x15x3 pendulum grid: 2,000 epochs of 5,000 steps",
        toml: r#"[experiment]
algorithm = "dsarsa"
delay = 5
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]

[environment]
name = "pendulum"
bins = 15

[tabular]
iterations = 2000
steps_per_iteration = 5000

[tabular.params]
alpha = 0.1
gamma = 0.99
lambda = 0.9
epsilon = 0.2
"#,
    },
    Preset {
        name: "aug-sarsa-pendulum",
        description: "SARSA(lambda) on the discretized augmented state: 2,000 epochs of 5,000 steps",
        toml: r#"[experiment]
algorithm = "aug-sarsa"
delay = 5
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]

[environment]
name = "pendulum"
bins = 15

[tabular]
iterations = 2000
steps_per_iteration = 5000

[tabular.params]
alpha = 0.1
gamma = 0.99
lambda = 0.9
epsilon = 0.2
"#,
    },
    Preset {
        name: "sarsa-pendulum-desk",
        description: "Memoryless SARSA(lambda) with 10x DIDA's desk budget: 50 iterations of 20,000 steps",
        toml: r#"[experiment]
algorithm = "sarsa"
delay = 5
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]

[environment]
name = "pendulum"
"#,
    },
    Preset {
        name: "dsarsa-pendulum-desk",
        description: "dSARSA(lambda) with 10x DIDA's desk budget: 50 iterations of 20,000 steps",
        toml: r#"[experiment]
algorithm = "dsarsa"
delay = 5
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]

[environment]
name = "pendulum"
"#,
    },
    Preset {
        name: "aug-sarsa-pendulum-desk",
        description: "Augmented SARSA(lambda) with 10x DIDA's desk budget: 50 iterations of 20,000 steps",
        toml: r#"[experiment]
algorithm = "aug-sarsa"
delay = 5
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]

[environment]
name = "pendulum"
"#,
    },
    Preset {
        name: "dida-gaussian-walk",
        description: "DIDA on the linear-Gaussian walk with its closed-form optimal expert",
        toml: r#"[experiment]
algorithm = "dida"
delay = 1
seeds = [0]

[environment]
name = "gaussian-walk"

[environment.walk]
l_pi = 1.0
l_q = 1.0
sigma = 0.1
gamma = 0.9

[dida]
iterations = 10
eval_steps = 1000

[dida.model]
hidden = [32, 32]
"#,
    },
    Preset {
        name: "dida-chain",
        description: "DIDA on a 5-state slip chain with a value-iteration expert",
        toml: r#"[experiment]
algorithm = "dida"
delay = 2
seeds = [0]

[environment]
name = "chain"
n_states = 5
slip = 0.1
gamma = 0.9

[dida]
iterations = 10
steps_per_iteration = 1000
episode_length = 50
eval_steps = 500
train_steps = 300

[dida.model]
hidden = [32]
"#,
    },
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let p = PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::Usage(format!("unknown preset `{name}`; available: {names:?}"))
    })?;
    ExperimentConfig::from_toml(p.toml)
}
