//! Experiment harness for linear TD: JSON configs in, a JSON report and CSV
//! traces out.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use config::{parse_config, ConfigFile, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentOutput, RunReport};
pub use output::emit_outputs;

/// Parses `--seeds`: `a..b` (inclusive), `a..=b`, or a comma list.
pub fn parse_seed_list(text: &str) -> std::result::Result<Vec<u64>, String> {
    let text = text.trim();
    let num = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| format!("`{s}` is not a non-negative integer"))
    };
    if let Some((lo, hi)) = text.split_once("..") {
        let hi = hi.strip_prefix('=').unwrap_or(hi);
        let (lo, hi) = (num(lo)?, num(hi)?);
        if lo > hi {
            return Err(format!("empty seed range {lo}..{hi}"));
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',').map(num).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("0..19").unwrap(), (0..20).collect::<Vec<_>>());
        assert_eq!(parse_seed_list("3..=5").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_seed_list("7").unwrap(), vec![7]);
        assert_eq!(parse_seed_list("1, 4,9").unwrap(), vec![1, 4, 9]);
        assert!(parse_seed_list("5..2").is_err());
        assert!(parse_seed_list("a").is_err());
        assert!(parse_seed_list("-1").is_err());
    }
}
