//! Discrete-event FIFO simulation of a capacity-limited inference server.
//!
//! Requests arrive as a Poisson stream, each carrying the server demand its
//! placement policy leaves on the server and a running time of
//! `deadline * exec_count`. A request is admitted when the free capacity
//! covers its demand and it is at the head of the queue.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::SweepRecord;
use crate::planner::PlannerKind;

/// Demands are tracked as integers in units of `1 / DEMAND_SCALE`.
pub const DEMAND_SCALE: f64 = 1e9;
pub const DEFAULT_EXEC_COUNT_MAX: u32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dp,
    Greedy,
    Nosplit,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dp, Variant::Greedy, Variant::Nosplit];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dp => "dp",
            Variant::Greedy => "greedy",
            Variant::Nosplit => "nosplit",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(Variant::Dp),
            "greedy" => Ok(Variant::Greedy),
            "nosplit" => Ok(Variant::Nosplit),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Server demand of one planned scenario under each variant, normalized so
/// the mean no-split demand over the table is 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDemand {
    pub dp: f64,
    pub greedy: f64,
    pub nosplit: f64,
    pub deadline_ms: f64,
}

impl ScenarioDemand {
    pub fn demand(&self, variant: Variant) -> f64 {
        match variant {
            Variant::Dp => self.dp,
            Variant::Greedy => self.greedy,
            Variant::Nosplit => self.nosplit,
        }
    }
}

/// Builds the scenario mix from sweep rows whose DP plan is feasible.
pub fn scenario_table(records: &[SweepRecord]) -> Result<Vec<ScenarioDemand>> {
    type Key = (String, u64, u64, u64, u64);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: BTreeMap<Key, BTreeMap<PlannerKind, &SweepRecord>> = BTreeMap::new();
    for r in records {
        let key = (
            r.model.clone(),
            r.seq_len,
            r.deadline_s.to_bits(),
            r.uplink_bps.to_bits(),
            r.downlink_bps.to_bits(),
        );
        let group = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            BTreeMap::new()
        });
        group.insert(r.planner, r);
    }

    let mut raw = Vec::new();
    for key in &order {
        let group = &groups[key];
        let Some(dp) = group.get(&PlannerKind::Dp).filter(|r| r.feasible) else {
            continue;
        };
        let (Some(greedy), Some(nosplit)) = (
            group.get(&PlannerKind::Greedy),
            group.get(&PlannerKind::AllServer),
        ) else {
            return Err(Error::Config(format!(
                "scenario {} s={} deadline={} lacks greedy or all_server rows",
                dp.model, dp.seq_len, dp.deadline_s
            )));
        };
        let (Some(d), Some(g), Some(n)) = (dp.server_load, greedy.server_load, nosplit.server_load)
        else {
            continue;
        };
        raw.push((d, g, n, dp.deadline_s * 1e3));
    }
    if raw.is_empty() {
        return Err(Error::Config(
            "no feasible scenarios in sweep results".into(),
        ));
    }
    let mean_full = raw.iter().map(|r| r.2).sum::<f64>() / raw.len() as f64;
    if !(mean_full > 0.0) {
        return Err(Error::Config(
            "scenarios have zero full-model demand".into(),
        ));
    }
    Ok(raw
        .into_iter()
        .map(|(d, g, n, deadline_ms)| ScenarioDemand {
            dp: d / mean_full,
            greedy: g / mean_full,
            nosplit: n / mean_full,
            deadline_ms,
        })
        .collect())
}

/// Capacity that holds `requests` average no-split requests at once.
pub fn capacity_for_requests(table: &[ScenarioDemand], requests: f64) -> f64 {
    let mean = table.iter().map(|s| s.nosplit).sum::<f64>() / table.len().max(1) as f64;
    requests * mean
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Arrivals per millisecond.
    pub beta: f64,
    /// Server capacity in demand units.
    pub capacity: f64,
    pub seed: u64,
    pub variant: Variant,
    pub horizon: usize,
    pub scenario_table: Vec<ScenarioDemand>,
    #[serde(default = "default_exec_max")]
    pub exec_count_max: u32,
    /// Keep a queue snapshot after every event.
    #[serde(default)]
    pub record_timeline: bool,
}

fn default_exec_max() -> u32 {
    DEFAULT_EXEC_COUNT_MAX
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config("beta must be positive".into()));
        }
        if !(self.capacity > 0.0) || !self.capacity.is_finite() {
            return Err(Error::Config("capacity must be positive".into()));
        }
        if self.scenario_table.is_empty() {
            return Err(Error::Config("scenario table is empty".into()));
        }
        if self.exec_count_max == 0 {
            return Err(Error::Config("exec_count_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Arrival time, scenario and execution count, shared across variants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arrival {
    pub arrival_ms: f64,
    pub scenario: usize,
    pub exec_count: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: usize,
    pub arrival_ms: f64,
    pub demand: f64,
    pub duration_ms: f64,
}

pub fn generate_skeleton(config: &SimConfig) -> Result<Vec<Arrival>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gaps = Exp::new(config.beta).map_err(|e| Error::Config(e.to_string()))?;
    let mut now = 0.0;
    Ok((0..config.horizon)
        .map(|_| {
            now += gaps.sample(&mut rng);
            Arrival {
                arrival_ms: now,
                scenario: rng.random_range(0..config.scenario_table.len()),
                exec_count: rng.random_range(1..=config.exec_count_max),
            }
        })
        .collect())
}

fn materialize(skeleton: &[Arrival], table: &[ScenarioDemand], variant: Variant) -> Vec<Request> {
    skeleton
        .iter()
        .enumerate()
        .map(|(id, a)| {
            let scenario = &table[a.scenario];
            Request {
                id,
                arrival_ms: a.arrival_ms,
                demand: scenario.demand(variant),
                duration_ms: scenario.deadline_ms * f64::from(a.exec_count),
            }
        })
        .collect()
}

pub fn generate_stream(config: &SimConfig) -> Result<Vec<Request>> {
    let skeleton = generate_skeleton(config)?;
    Ok(materialize(
        &skeleton,
        &config.scenario_table,
        config.variant,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: usize,
    pub arrival_ms: f64,
    pub admit_ms: f64,
    pub wait_ms: f64,
    pub demand: f64,
    pub duration_ms: f64,
}

impl RequestRecord {
    pub fn completion_ms(&self) -> f64 {
        self.admit_ms + self.duration_ms
    }
}

/// Queue state right after an event was processed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Snapshot {
    pub time_ms: f64,
    pub arrived: usize,
    pub queued: usize,
    pub in_service: usize,
    pub served: usize,
    pub used_units: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimResult {
    /// In arrival order.
    pub records: Vec<RequestRecord>,
    pub max_wait_ms: f64,
    pub mean_wait_ms: f64,
    pub served: usize,
    pub capacity_units: u64,
    pub timeline: Vec<Snapshot>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub max_wait_ms: f64,
    pub mean_wait_ms: f64,
    pub served: usize,
}

impl SimResult {
    pub fn summary(&self) -> SimSummary {
        SimSummary {
            max_wait_ms: self.max_wait_ms,
            mean_wait_ms: self.mean_wait_ms,
            served: self.served,
        }
    }

    /// Running total of wait time in arrival order.
    pub fn cumulative_wait(&self) -> Vec<(usize, f64, f64)> {
        let mut total = 0.0;
        self.records
            .iter()
            .map(|r| {
                total += r.wait_ms;
                (r.request_id, r.arrival_ms, total)
            })
            .collect()
    }
}

pub fn demand_units(demand: f64) -> u64 {
    (demand * DEMAND_SCALE).round().max(0.0) as u64
}

pub fn capacity_units(capacity: f64) -> u64 {
    (capacity * DEMAND_SCALE).floor().max(0.0) as u64
}

#[derive(Clone, Copy, Debug)]
struct Completion {
    time_ms: f64,
    seq: u64,
    request: usize,
}

impl PartialEq for Completion {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Completion {}

impl PartialOrd for Completion {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Completion {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time_ms
            .total_cmp(&other.time_ms)
            .then(self.seq.cmp(&other.seq))
    }
}

/// Runs the event loop over an explicit, arrival-ordered request list.
pub fn simulate_requests(
    requests: &[Request],
    capacity: f64,
    record_timeline: bool,
) -> Result<SimResult> {
    let capacity_units = capacity_units(capacity);
    let units: Vec<u64> = requests.iter().map(|r| demand_units(r.demand)).collect();
    let mut admit = vec![f64::NAN; requests.len()];
    let mut completions: BinaryHeap<Reverse<Completion>> = BinaryHeap::new();
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut next_arrival = 0;
    let mut used = 0u64;
    let mut served = 0;
    let mut seq = 0u64;
    let mut timeline = Vec::new();

    loop {
        let arrival_time = requests.get(next_arrival).map(|r| r.arrival_ms);
        let completion_time = completions.peek().map(|Reverse(c)| c.time_ms);
        // completions go first on equal timestamps
        let now = match (completion_time, arrival_time) {
            (Some(c), Some(a)) if c <= a => {
                let Reverse(done) = completions.pop().expect("peeked");
                used -= units[done.request];
                served += 1;
                c
            }
            (Some(c), None) => {
                let Reverse(done) = completions.pop().expect("peeked");
                used -= units[done.request];
                served += 1;
                c
            }
            (_, Some(a)) => {
                queue.push_back(next_arrival);
                next_arrival += 1;
                a
            }
            (None, None) => break,
        };

        while let Some(&head) = queue.front() {
            if units[head] > capacity_units {
                return Err(Error::HeadOfLineBlocked {
                    request: head,
                    demand: requests[head].demand,
                    capacity,
                });
            }
            if capacity_units - used < units[head] {
                break;
            }
            queue.pop_front();
            used += units[head];
            admit[head] = now;
            completions.push(Reverse(Completion {
                time_ms: now + requests[head].duration_ms,
                seq,
                request: head,
            }));
            seq += 1;
        }

        if record_timeline {
            timeline.push(Snapshot {
                time_ms: now,
                arrived: next_arrival,
                queued: queue.len(),
                in_service: completions.len(),
                served,
                used_units: used,
            });
        }
    }

    let records: Vec<RequestRecord> = requests
        .iter()
        .zip(&admit)
        .map(|(r, &admit_ms)| RequestRecord {
            request_id: r.id,
            arrival_ms: r.arrival_ms,
            admit_ms,
            wait_ms: admit_ms - r.arrival_ms,
            demand: r.demand,
            duration_ms: r.duration_ms,
        })
        .collect();
    let max_wait_ms = records.iter().map(|r| r.wait_ms).fold(0.0, f64::max);
    let mean_wait_ms = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.wait_ms).sum::<f64>() / records.len() as f64
    };
    Ok(SimResult {
        records,
        max_wait_ms,
        mean_wait_ms,
        served,
        capacity_units,
        timeline,
    })
}

pub fn simulate(config: &SimConfig) -> Result<SimResult> {
    let requests = generate_stream(config)?;
    simulate_requests(&requests, config.capacity, config.record_timeline)
}

/// Runs all three variants on one shared arrival skeleton.
pub fn compare_variants(config: &SimConfig) -> Result<Vec<(Variant, SimResult)>> {
    let skeleton = generate_skeleton(config)?;
    Variant::ALL
        .iter()
        .map(|&variant| {
            let requests = materialize(&skeleton, &config.scenario_table, variant);
            simulate_requests(&requests, config.capacity, config.record_timeline)
                .map(|r| (variant, r))
        })
        .collect()
}
