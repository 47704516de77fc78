use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::envs::GaussianWalkParams;
use crate::error::{Error, Result};
use crate::theory::walk::{cor4_suite, thm5_suite, walk_dida_config, WALK_DELAYS, WALK_STEPS};
use crate::theory::{appendix_a_suite, cor3_suite, fractional_suite, lemma1_suite, thm2_suite, Report};

pub const SUITES: [&str; 7] = ["lemma1", "thm2", "cor3", "cor4", "thm5", "appendixA", "fractional"];

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Monte Carlo steps per Gaussian-walk estimate.
    pub mc_steps: usize,
    /// Include a DIDA-trained policy among the policies tested against the lower bound.
    pub dida: bool,
    pub lemma1_fixtures: usize,
    pub chain_fixtures: usize,
    pub fractional_fixtures: usize,
    pub fractional_samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            mc_steps: WALK_STEPS,
            dida: true,
            lemma1_fixtures: 100,
            chain_fixtures: 50,
            fractional_fixtures: 10,
            fractional_samples: 20_000,
        }
    }
}

pub fn verify(suite: &str, opts: &VerifyOptions) -> Result<Report> {
    let walk = GaussianWalkParams::default();
    match suite {
        "lemma1" => lemma1_suite(opts.lemma1_fixtures, opts.seed),
        "thm2" => thm2_suite(opts.chain_fixtures, opts.seed),
        "cor3" => cor3_suite(opts.chain_fixtures, opts.seed),
        "appendixA" => appendix_a_suite(opts.chain_fixtures, opts.seed),
        "cor4" => cor4_suite(&walk, &WALK_DELAYS, opts.mc_steps, opts.seed),
        "thm5" => {
            let dida = opts.dida.then(walk_dida_config);
            thm5_suite(&walk, &WALK_DELAYS, opts.mc_steps, opts.seed, dida.as_ref())
        }
        "fractional" => fractional_suite(opts.fractional_fixtures, opts.fractional_samples, opts.seed),
        other => Err(Error::Usage(format!("unknown suite `{other}`; expected one of {SUITES:?}"))),
    }
}

/// Writes `<suite>.jsonl` into `dir` and returns its path.
pub fn write_report(report: &Report, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.jsonl", report.suite));
    report.write_jsonl(BufWriter::new(std::fs::File::create(&path)?))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_usage_error() {
        assert!(matches!(verify("thm9", &VerifyOptions::default()), Err(Error::Usage(_))));
    }

    #[test]
    fn exact_suites_pass_with_small_batches() {
        let opts = VerifyOptions {
            lemma1_fixtures: 5,
            chain_fixtures: 5,
            fractional_fixtures: 2,
            fractional_samples: 2000,
            ..VerifyOptions::default()
        };
        for suite in ["lemma1", "thm2", "cor3", "appendixA", "fractional"] {
            let r = verify(suite, &opts).unwrap();
            assert!(r.pass(), "{}", r.summary());
            assert_eq!(r.suite, suite);
        }
    }

    #[test]
    fn report_file_is_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let opts = VerifyOptions {
            lemma1_fixtures: 3,
            ..VerifyOptions::default()
        };
        let r = verify("lemma1", &opts).unwrap();
        let path = write_report(&r, dir.path()).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), r.records.len());
    }
}
