use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as Sample, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use super::{ProgramSpec, TurnSpec};
use crate::error::{Error, Result};

/// Non-negative real-valued distribution used for durations and, rounded,
/// for token counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
    Exponential { mean: f64 },
    LogNormal { median: f64, sigma: f64 },
    /// `high` with probability `p_high`, else `low`.
    TwoPoint { low: f64, high: f64, p_high: f64 },
}

impl Distribution {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        match *self {
            Distribution::Constant { value } if !ok(value) => Err(format!("constant value {value} must be >= 0")),
            Distribution::Uniform { low, high } if !ok(low) || !ok(high) || low > high => {
                Err(format!("uniform bounds [{low}, {high}] invalid"))
            }
            Distribution::Exponential { mean } if !(mean > 0.0) || !mean.is_finite() => {
                Err(format!("exponential mean {mean} must be > 0"))
            }
            Distribution::LogNormal { median, sigma }
                if !(median > 0.0) || !median.is_finite() || !ok(sigma) =>
            {
                Err(format!("lognormal (median {median}, sigma {sigma}) invalid"))
            }
            Distribution::TwoPoint { low, high, p_high }
                if !ok(low) || !ok(high) || !(0.0..=1.0).contains(&p_high) =>
            {
                Err(format!("two_point ({low}, {high}, p={p_high}) invalid"))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Constant { value } => value,
            Distribution::Uniform { low, high } => (low + high) / 2.0,
            Distribution::Exponential { mean } => mean,
            Distribution::LogNormal { median, sigma } => median * (sigma * sigma / 2.0).exp(),
            Distribution::TwoPoint { low, high, p_high } => low + p_high * (high - low),
        }
    }

    /// Draws one value. Callers validate first.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        use rand::Rng;
        match *self {
            Distribution::Constant { value } => value,
            Distribution::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Distribution::Exponential { mean } => Exp::new(1.0 / mean).expect("validated").sample(rng),
            Distribution::LogNormal { median, sigma } => {
                LogNormal::new(median.ln(), sigma).expect("validated").sample(rng)
            }
            Distribution::TwoPoint { low, high, p_high } => {
                if rng.random::<f64>() < p_high {
                    high
                } else {
                    low
                }
            }
        }
    }
}

/// Integer count drawn by rounding a [`Distribution`] sample into
/// `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDist {
    #[serde(flatten)]
    pub dist: Distribution,
    #[serde(default)]
    pub min: usize,
    #[serde(default)]
    pub max: Option<usize>,
}

impl CountDist {
    pub fn new(dist: Distribution, min: usize, max: Option<usize>) -> Self {
        Self { dist, min, max }
    }

    pub fn constant(value: usize) -> Self {
        Self::new(Distribution::Constant { value: value as f64 }, 0, None)
    }

    fn validate(&self, what: &str) -> Result<()> {
        self.dist
            .validate()
            .map_err(|e| Error::Config(format!("{what}: {e}")))?;
        if matches!(self.max, Some(max) if max < self.min) {
            return Err(Error::Config(format!("{what}: max < min")));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let v = self.dist.sample(rng).round().max(0.0) as usize;
        let v = v.max(self.min);
        self.max.map_or(v, |max| v.min(max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default = "one")]
    pub weight: f64,
    pub duration: Distribution,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub num_programs: usize,
    pub arrival_rate_jobs_per_s: f64,
    pub turns: CountDist,
    /// Prompt of the first turn (system prompt plus task).
    pub first_prompt_tokens: CountDist,
    /// Tool response appended before each later turn.
    pub tool_response_tokens: CountDist,
    pub decode_tokens: CountDist,
    pub tools: Vec<ToolSpec>,
    #[serde(default)]
    pub context_window: Option<usize>,
    #[serde(default)]
    pub start_time_s: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        let tool = |name: &str, weight: f64, duration: Distribution| ToolSpec {
            name: name.into(),
            weight,
            duration,
        };
        Self {
            num_programs: 100,
            arrival_rate_jobs_per_s: 0.5,
            turns: CountDist::new(Distribution::LogNormal { median: 8.0, sigma: 0.8 }, 1, Some(60)),
            first_prompt_tokens: CountDist::new(
                Distribution::LogNormal { median: 2000.0, sigma: 0.4 },
                16,
                None,
            ),
            tool_response_tokens: CountDist::new(
                Distribution::LogNormal { median: 300.0, sigma: 1.0 },
                1,
                Some(8000),
            ),
            decode_tokens: CountDist::new(Distribution::Exponential { mean: 150.0 }, 1, Some(2000)),
            tools: vec![
                tool("cat", 3.0, Distribution::Constant { value: 0.05 }),
                tool("ls", 2.0, Distribution::Constant { value: 0.05 }),
                tool("cd", 1.0, Distribution::Constant { value: 0.02 }),
                tool("grep", 2.0, Distribution::Uniform { low: 0.05, high: 0.4 }),
                tool("git", 1.0, Distribution::Uniform { low: 0.1, high: 0.6 }),
                tool("python", 2.0, Distribution::LogNormal { median: 2.0, sigma: 1.2 }),
                tool("pytest", 2.0, Distribution::LogNormal { median: 6.0, sigma: 0.8 }),
            ],
            context_window: Some(32_768),
            start_time_s: 0.0,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_programs == 0 {
            return Err(Error::Config("synthetic.num_programs must be >= 1".into()));
        }
        if !(self.arrival_rate_jobs_per_s > 0.0) || !self.arrival_rate_jobs_per_s.is_finite() {
            return Err(Error::Config("synthetic.arrival_rate_jobs_per_s must be > 0".into()));
        }
        if !(self.start_time_s >= 0.0) {
            return Err(Error::Config("synthetic.start_time_s must be >= 0".into()));
        }
        self.turns.validate("synthetic.turns")?;
        self.first_prompt_tokens.validate("synthetic.first_prompt_tokens")?;
        self.tool_response_tokens.validate("synthetic.tool_response_tokens")?;
        self.decode_tokens.validate("synthetic.decode_tokens")?;
        if self.tools.is_empty() {
            return Err(Error::Config("synthetic.tools must list at least one tool".into()));
        }
        for t in &self.tools {
            if t.name.is_empty() || !(t.weight > 0.0) || !t.weight.is_finite() {
                return Err(Error::Config(format!(
                    "synthetic.tools: `{}` needs a name and positive weight",
                    t.name
                )));
            }
            t.duration
                .validate()
                .map_err(|e| Error::Config(format!("synthetic.tools.{}: {e}", t.name)))?;
        }
        if self.context_window == Some(0) {
            return Err(Error::Config("synthetic.context_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Generates a trace with Poisson arrivals. A pure function of
/// `(params, seed)`. Programs whose context would overflow the window are
/// cut short; the last kept turn becomes the final one.
pub fn generate_synthetic(params: &SyntheticParams, seed: u64) -> Result<Vec<ProgramSpec>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interarrival = Exp::new(params.arrival_rate_jobs_per_s).expect("validated");
    let weights = WeightedIndex::new(params.tools.iter().map(|t| t.weight))
        .map_err(|e| Error::Config(format!("synthetic.tools: {e}")))?;
    let decode_floor = CountDist { min: params.decode_tokens.min.max(1), ..params.decode_tokens.clone() };
    let window = params.context_window.unwrap_or(usize::MAX);

    let mut now = params.start_time_s;
    let mut programs = Vec::with_capacity(params.num_programs);
    for idx in 0..params.num_programs {
        now += interarrival.sample(&mut rng);
        let n_turns = params.turns.sample(&mut rng).max(1);
        let mut turns: Vec<TurnSpec> = Vec::with_capacity(n_turns);
        let mut context = 0usize;
        for i in 0..n_turns {
            let prompt = if i == 0 {
                params.first_prompt_tokens.sample(&mut rng)
            } else {
                params.tool_response_tokens.sample(&mut rng)
            };
            let decode = decode_floor.sample(&mut rng);
            let tool = &params.tools[weights.sample(&mut rng)];
            let duration = tool.duration.sample(&mut rng);
            if context + prompt + decode > window {
                if turns.is_empty() {
                    let decode = decode.min(window.saturating_sub(1)).max(1);
                    turns.push(TurnSpec::final_turn(window.saturating_sub(decode), decode));
                }
                break;
            }
            context += prompt + decode;
            turns.push(TurnSpec::with_tool(prompt, decode, tool.name.clone(), duration));
        }
        if let Some(last) = turns.last_mut() {
            last.tool_name = None;
            last.tool_duration_s = None;
        }
        programs.push(ProgramSpec {
            program_id: format!("p{idx:05}"),
            arrival_time_s: now,
            turns,
        });
    }
    Ok(programs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_trace() {
        let params = SyntheticParams::default();
        assert_eq!(generate_synthetic(&params, 7).unwrap(), generate_synthetic(&params, 7).unwrap());
        assert_ne!(generate_synthetic(&params, 7).unwrap(), generate_synthetic(&params, 8).unwrap());
    }

    #[test]
    fn poisson_interarrival_mean() {
        let params = SyntheticParams {
            num_programs: 100,
            arrival_rate_jobs_per_s: 0.1,
            ..SyntheticParams::default()
        };
        let trace = generate_synthetic(&params, 11).unwrap();
        let mean_gap = trace.last().unwrap().arrival_time_s / 100.0;
        // sd of exponential(0.1) is 10; 3 sigma / sqrt(100) = 3
        assert!((mean_gap - 10.0).abs() < 3.0, "mean gap {mean_gap}");
    }

    #[test]
    fn constant_tool_durations_are_exact() {
        let params = SyntheticParams {
            tools: vec![ToolSpec {
                name: "cd".into(),
                weight: 1.0,
                duration: Distribution::Constant { value: 0.1 },
            }],
            ..SyntheticParams::default()
        };
        let trace = generate_synthetic(&params, 3).unwrap();
        let durations: Vec<f64> = trace
            .iter()
            .flat_map(|p| p.turns.iter().filter_map(|t| t.tool_duration_s))
            .collect();
        assert!(!durations.is_empty());
        assert!(durations.iter().all(|&d| d == 0.1));
    }

    #[test]
    fn programs_respect_invariants_and_window() {
        let params = SyntheticParams {
            context_window: Some(4000),
            ..SyntheticParams::default()
        };
        for p in generate_synthetic(&params, 5).unwrap() {
            p.validate().unwrap();
            assert!(p.context_tokens() <= 4000);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut params = SyntheticParams::default();
        params.arrival_rate_jobs_per_s = 0.0;
        assert!(generate_synthetic(&params, 0).is_err());
        let mut params = SyntheticParams::default();
        params.tools[0].duration = Distribution::Uniform { low: 2.0, high: 1.0 };
        assert!(generate_synthetic(&params, 0).is_err());
    }

    #[test]
    fn count_dist_parses_flat_toml() {
        let c: CountDist = toml::from_str("kind = \"log_normal\"\nmedian = 8.0\nsigma = 0.8\nmin = 1\nmax = 60").unwrap();
        assert_eq!(c.max, Some(60));
        assert!(matches!(c.dist, Distribution::LogNormal { .. }));
    }
}
