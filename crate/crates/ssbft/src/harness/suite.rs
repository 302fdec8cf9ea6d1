//! Seeded scenario families used by the acceptance suite, the benches and the
//! `suite` command.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bincon::DEFAULT_ROUND_CAP;
use crate::byzantine::Strategy;
use crate::faults::{FaultSpec, Targeted};
use crate::harness::scenario::{ByzSpec, ParamsSpec, Recycling, Scenario, SchedulerSpec};
use crate::sim::channel::Overflow;
use crate::sim::scheduler::Policy;
use crate::sim::world::Stop;
use crate::types::{NodeId, Value};
use crate::vbb::CountPhase;

/// Strategies exercised by the fault-free families.
pub const CLEAN_STRATEGIES: [&str; 4] = ["crash", "equivocate", "collude-value", "spam-invalid"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Fault-free start, `t` Byzantine nodes, fair schedule.
    Clean,
    /// Seeded arbitrary corruption plus targeted corruptions, run through one
    /// recycling into a clean activation.
    Corrupted,
    /// Fault-free start with the reference stack alongside.
    Differential,
    /// Clean family under an unfair-until-k schedule.
    Unfair,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Clean,
        Family::Corrupted,
        Family::Differential,
        Family::Unfair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Clean => "clean",
            Family::Corrupted => "corrupted",
            Family::Differential => "differential",
            Family::Unfair => "unfair",
        }
    }
}

/// Asynchronous cycles a corrupted run gets before it counts as stuck; far
/// above the measured stabilization times.
pub const CYCLE_BUDGET: u64 = 400;

/// Step budget per activation, generous against the round cap.
pub fn step_budget(n: usize) -> u64 {
    (n * n) as u64 * 40_000
}

fn proposals(rng: &mut ChaCha8Rng, count: usize, alphabet: u8) -> Vec<Value> {
    match rng.gen_range(0..4) {
        0 => vec![Value(rng.gen_range(0..alphabet)); count],
        1 => {
            let a = Value(rng.gen_range(0..alphabet));
            let b = Value(rng.gen_range(0..alphabet));
            (0..count)
                .map(|_| if rng.gen_bool(0.7) { a } else { b })
                .collect()
        }
        2 => (0..count).map(|_| Value(rng.gen_range(0..2))).collect(),
        _ => (0..count)
            .map(|_| Value(rng.gen_range(0..alphabet)))
            .collect(),
    }
}

fn byzantine(rng: &mut ChaCha8Rng, n: usize, t: usize, name: &str, alphabet: u8) -> Vec<ByzSpec> {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut ids: Vec<usize> = ids.into_iter().take(t).collect();
    ids.sort_unstable();
    let colluded = Value(rng.gen_range(0..alphabet));
    ids.into_iter()
        .map(|node| {
            let strategy = match name {
                "equivocate" => Strategy::Equivocate {
                    a: Value(rng.gen_range(0..alphabet)),
                    b: Value(rng.gen_range(0..alphabet)),
                },
                "collude-value" => Strategy::ColludeValue { value: colluded },
                "delay-maximal" => Strategy::DelayMaximal {
                    lag: rng.gen_range(2..16),
                    value: Value(rng.gen_range(0..alphabet)),
                },
                other => Strategy::from_name(other).expect("known strategy"),
            };
            ByzSpec { node, strategy }
        })
        .collect()
}

fn fair_policy(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Policy {
    match rng.gen_range(0..5) {
        0 => Policy::Fifo,
        1 => {
            let victims = (0..t.max(1)).map(|_| NodeId(rng.gen_range(0..n))).collect();
            Policy::AdversarialDelay {
                victims,
                budget: rng.gen_range(100..2_000),
            }
        }
        _ => Policy::Random,
    }
}

/// Scenario `index` of `family` at size `n` with `t = floor((n-1)/3)`.
pub fn scenario(family: Family, n: usize, index: u64) -> Scenario {
    let t = (n - 1) / 3;
    // Seeds stay below 2^63 so scenarios round-trip through TOML integers.
    let seed = (index
        .wrapping_mul(0x9e37_79b9)
        .wrapping_add(n as u64 * 1_000_003)
        ^ family as u64)
        >> 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strategy = CLEAN_STRATEGIES[(index % 4) as usize];
    let mut s = Scenario {
        name: format!("{}-n{n}-{index}", family.name()),
        params: ParamsSpec {
            n,
            t: Some(t),
            capacity: rng.gen_range(1..=3),
        },
        proposals: vec![],
        byzantine: vec![],
        scheduler: SchedulerSpec {
            policy: Policy::Random,
            seed,
            overflow: Overflow::DropOldest,
        },
        faults: None,
        recycling: Recycling::Single,
        stop: Stop::Decided { epoch: 0 },
        max_steps: step_budget(n),
        max_cycles: None,
        alphabet: 4,
        mode: CountPhase::Init,
        coin_seed: None,
        round_cap: DEFAULT_ROUND_CAP,
        oracle: false,
    };
    match family {
        Family::Clean | Family::Differential => {
            s.byzantine = byzantine(&mut rng, n, t, strategy, s.alphabet);
            s.proposals = proposals(&mut rng, n - t, s.alphabet);
            s.scheduler.policy = fair_policy(&mut rng, n, t);
            s.oracle = family == Family::Differential;
        }
        Family::Unfair => {
            s.byzantine = byzantine(&mut rng, n, t, strategy, s.alphabet);
            s.proposals = proposals(&mut rng, n - t, s.alphabet);
            let correct: Vec<usize> = (0..n)
                .filter(|i| s.byzantine.iter().all(|b| b.node != *i))
                .collect();
            let starved = correct
                .choose_multiple(&mut rng, t.max(1))
                .map(|&i| NodeId(i))
                .collect();
            s.scheduler.policy = Policy::UnfairUntil {
                k: rng.gen_range(500..5_000),
                starved,
            };
        }
        Family::Corrupted => {
            let strategies = [
                "crash",
                "equivocate",
                "collude-value",
                "spam-invalid",
                "delay-maximal",
            ];
            let name = strategies[(index / 4 % 5) as usize];
            s.byzantine = byzantine(&mut rng, n, t, name, s.alphabet);
            let targeted = match index % 4 {
                0 => vec![Targeted::BcForcedTrue],
                1 => vec![Targeted::ValidWithoutInit {
                    origin: rng.gen_range(0..n),
                }],
                2 => vec![Targeted::DeliveredWithoutMessages],
                _ => vec![],
            };
            if targeted == [Targeted::BcForcedTrue] {
                // Distinct proposals make every correct `sameValue()` false.
                s.alphabet = n as u8;
                let mut vals: Vec<Value> = (0..n as u8).map(Value).collect();
                vals.shuffle(&mut rng);
                s.proposals = vals.into_iter().take(n - t).collect();
            } else {
                s.proposals = proposals(&mut rng, n - t, s.alphabet);
            }
            s.faults = Some(FaultSpec {
                seed: rng.gen::<u64>() >> 1,
                mask: vec!["*".into()],
                rate: [0.05, 0.2, 0.5][rng.gen_range(0..3)],
                targeted,
            });
            s.stop = Stop::Decided { epoch: 1 };
            s.max_steps = 2 * step_budget(n);
            s.max_cycles = Some(CYCLE_BUDGET);
            s.scheduler.policy = fair_policy(&mut rng, n, t);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_validate() {
        for family in Family::ALL {
            for n in [4, 7, 10] {
                for i in 0..40 {
                    let s = scenario(family, n, i);
                    s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
                    assert_eq!(s, scenario(family, n, i));
                    assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s);
                }
            }
        }
    }
}
