//! Scenario files: TOML documents whose field names mirror the harness types.
//!
//! ```toml
//! name = "smoke"
//! proposals = ["A", "A", "B"]   # one per correct node, ascending id
//! max_steps = 200000
//!
//! [params]
//! n = 4
//! t = 1
//! capacity = 2
//!
//! [[byzantine]]
//! node = 3
//! strategy = "equivocate"
//!
//! [scheduler]
//! policy = "random"
//! seed = 7
//! ```

use serde::{Deserialize, Serialize};

use crate::bincon::{Coin, DEFAULT_ROUND_CAP};
use crate::byzantine::Strategy;
use crate::faults::FaultSpec;
use crate::mvc::MvcConfig;
use crate::sim::channel::Overflow;
use crate::sim::scheduler::Policy;
use crate::sim::world::{Stop, WorldSpec};
use crate::types::{Alphabet, NodeId, SystemParams, Value};
use crate::vbb::CountPhase;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub n: usize,
    /// Defaults to the largest `t` with `n >= 3t + 1`.
    #[serde(default)]
    pub t: Option<usize>,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
}

fn default_capacity() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByzSpec {
    pub node: usize,
    #[serde(flatten)]
    pub strategy: Strategy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerSpec {
    #[serde(flatten)]
    pub policy: Policy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub overflow: Overflow,
}

impl Default for SchedulerSpec {
    fn default() -> Self {
        SchedulerSpec {
            policy: Policy::Random,
            seed: 0,
            overflow: Overflow::DropOldest,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Recycling {
    /// One object per recycling.
    #[default]
    Single,
    /// `delta` objects run side by side and are recycled together.
    Batch { delta: usize },
}

impl Recycling {
    pub fn objects(self) -> usize {
        match self {
            Recycling::Single => 1,
            Recycling::Batch { delta } => delta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub params: ParamsSpec,
    /// One proposal per correct node, in ascending node order.
    pub proposals: Vec<Value>,
    #[serde(default)]
    pub byzantine: Vec<ByzSpec>,
    #[serde(default)]
    pub scheduler: SchedulerSpec,
    #[serde(default)]
    pub faults: Option<FaultSpec>,
    #[serde(default)]
    pub recycling: Recycling,
    #[serde(default)]
    pub stop: Stop,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    /// Gives up once this many asynchronous cycles have passed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cycles: Option<u64>,
    #[serde(default = "default_alphabet")]
    pub alphabet: u8,
    /// Row the VBB value check counts in.
    #[serde(default)]
    pub mode: CountPhase,
    /// Common-coin seed; defaults to the scheduler seed.
    #[serde(default)]
    pub coin_seed: Option<u64>,
    #[serde(default = "default_round_cap")]
    pub round_cap: usize,
    /// Run the reference stack alongside.
    #[serde(default)]
    pub oracle: bool,
}

fn default_max_steps() -> u64 {
    1_000_000
}

fn default_alphabet() -> u8 {
    Alphabet::DEFAULT.size
}

fn default_round_cap() -> usize {
    DEFAULT_ROUND_CAP
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("{0}")]
    Syntax(String),
    #[error("field `{field}`: {msg}")]
    Invalid { field: &'static str, msg: String },
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field,
        msg: msg.into(),
    }
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn system_params(&self) -> Result<SystemParams, ScenarioError> {
        let p = &self.params;
        let r = match p.t {
            Some(t) => SystemParams::new(p.n, t, p.capacity),
            None => SystemParams::max_resilience(p.n, p.capacity),
        };
        r.map_err(|e| invalid("params", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let params = self.system_params()?;
        if self.byzantine.len() > params.t {
            return Err(invalid(
                "byzantine",
                format!("{} nodes exceed t = {}", self.byzantine.len(), params.t),
            ));
        }
        let mut seen = vec![false; params.n];
        for b in &self.byzantine {
            if b.node >= params.n || std::mem::replace(&mut seen[b.node], true) {
                return Err(invalid(
                    "byzantine",
                    format!("node {} is out of range or listed twice", b.node),
                ));
            }
        }
        let correct = params.n - self.byzantine.len();
        if self.proposals.len() != correct {
            return Err(invalid(
                "proposals",
                format!(
                    "expected {correct} entries (one per correct node), got {}",
                    self.proposals.len()
                ),
            ));
        }
        if let Some(v) = self.proposals.iter().find(|v| v.0 >= self.alphabet) {
            return Err(invalid(
                "proposals",
                format!("{v} is outside the alphabet of size {}", self.alphabet),
            ));
        }
        if self.alphabet == 0 {
            return Err(invalid("alphabet", "must be positive"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps", "must be positive"));
        }
        if self.max_cycles == Some(0) {
            return Err(invalid("max_cycles", "must be positive"));
        }
        if self.recycling.objects() == 0 {
            return Err(invalid("recycling", "delta must be positive"));
        }
        if let Some(f) = &self.faults {
            if !(0.0..=1.0).contains(&f.rate) {
                return Err(invalid(
                    "faults",
                    format!("rate {} is outside [0, 1]", f.rate),
                ));
            }
        }
        Ok(())
    }

    /// The same scenario under another seed: the scheduler seed, and the coin
    /// seed unless pinned, change.
    pub fn with_seed(&self, seed: u64) -> Scenario {
        let mut s = self.clone();
        s.scheduler.seed = seed;
        s
    }

    pub fn world_spec(&self) -> Result<WorldSpec, ScenarioError> {
        self.validate()?;
        let params = self.system_params()?;
        let cfg = MvcConfig {
            params,
            alphabet: Alphabet {
                size: self.alphabet,
            },
            mode: self.mode,
            coin: Coin::Seeded(self.coin_seed.unwrap_or(self.scheduler.seed)),
            round_cap: self.round_cap,
        };
        let byz: Vec<usize> = self.byzantine.iter().map(|b| b.node).collect();
        let mut props = self.proposals.iter();
        let proposals = (0..params.n)
            .map(|i| {
                if byz.contains(&i) {
                    None
                } else {
                    props.next().copied()
                }
            })
            .collect();
        Ok(WorldSpec {
            objects: vec![cfg; self.recycling.objects()],
            proposals,
            byzantine: self
                .byzantine
                .iter()
                .map(|b| (NodeId(b.node), b.strategy.clone()))
                .collect(),
            policy: self.scheduler.policy.clone(),
            seed: self.scheduler.seed,
            overflow: self.scheduler.overflow,
            oracle: self.oracle,
            target_epoch: self.stop.target_epoch(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = r#"
name = "smoke"
proposals = ["A", "A", "B"]

[params]
n = 4
capacity = 2

[[byzantine]]
node = 3
strategy = "collude-value"
value = "D"

[scheduler]
policy = "adversarial-delay"
victims = [0]
budget = 500
seed = 9

[faults]
seed = 4
mask = ["node/*/obj/0/bc"]
targeted = [{ kind = "valid-without-init", origin = 1 }]

[stop]
condition = "decided"
epoch = 1
"#;

    #[test]
    fn parses_all_sections() {
        let s = Scenario::parse(SMOKE).unwrap();
        assert_eq!(
            s.system_params().unwrap(),
            SystemParams {
                n: 4,
                t: 1,
                capacity: 2
            }
        );
        assert_eq!(
            s.byzantine[0].strategy,
            Strategy::ColludeValue { value: Value(3) }
        );
        assert_eq!(
            s.scheduler.policy,
            Policy::AdversarialDelay {
                victims: vec![NodeId(0)],
                budget: 500
            }
        );
        assert_eq!(s.stop, Stop::Decided { epoch: 1 });
        let w = s.world_spec().unwrap();
        assert_eq!(
            w.proposals,
            vec![Some(Value(0)), Some(Value(0)), Some(Value(1)), None]
        );
        assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = Scenario::parse("proposals = [\"A\"\n[params]\nn = 4\n").unwrap_err();
        let ScenarioError::Syntax(msg) = err else {
            panic!("{err:?}")
        };
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let err = Scenario::parse("proposals = [\"A\"]\n[params]\nn = 4\n").unwrap_err();
        assert!(
            matches!(
                err,
                ScenarioError::Invalid {
                    field: "proposals",
                    ..
                }
            ),
            "{err}"
        );
        let err =
            Scenario::parse("proposals = [\"A\",\"A\",\"A\",\"A\"]\n[params]\nn = 3\nt = 1\n")
                .unwrap_err();
        assert!(
            matches!(
                err,
                ScenarioError::Invalid {
                    field: "params",
                    ..
                }
            ),
            "{err}"
        );
        let err = Scenario::parse("proposals = [\"A\",\"A\",\"A\"]\n[params]\nn = 4\n[[byzantine]]\nnode = 3\nstrategy = \"nap\"\n")
            .unwrap_err();
        assert!(err.to_string().contains("nap"), "{err}");
        let err =
            Scenario::parse("proposals = [\"A\"]\ncolour = 1\n[params]\nn = 1\n").unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }
}
