//! Placement planners: the budgeted dynamic program, a greedy prefix
//! baseline, constant baselines, and an exhaustive oracle.
//!
//! `C[k][j]` is the best client value of the first `k` layers when layer
//! `k` runs on the client and the latency so far is at most `j`; `S[k][j]`
//! is the same with layer `k` on the server. Row 0 encodes where the input
//! starts. Unreachable cells are `None`, which orders below every value.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::evaluator::{integer_latency, server_load_of};
use crate::problem::PlanProblem;
use crate::scalar::Value;

/// Largest layer count the exhaustive oracle accepts.
pub const ORACLE_MAX_LAYERS: usize = 24;
/// Largest number of cells per DP table.
pub const MAX_TABLE_CELLS: u128 = 1 << 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Location {
    Server,
    Client,
}

impl Location {
    pub fn bit(self) -> u8 {
        match self {
            Location::Server => 0,
            Location::Client => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Location::Server),
            1 => Some(Location::Client),
            _ => None,
        }
    }
}

impl Serialize for Location {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.bit())
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let bit = u8::deserialize(deserializer)?;
        Location::from_bit(bit)
            .ok_or_else(|| serde::de::Error::custom(format!("placement must be 0 or 1, got {bit}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Dp,
    Greedy,
    Oracle,
    AllServer,
    AllClient,
}

impl PlannerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::Dp => "dp",
            PlannerKind::Greedy => "greedy",
            PlannerKind::Oracle => "oracle",
            PlannerKind::AllServer => "all_server",
            PlannerKind::AllClient => "all_client",
        }
    }
}

impl std::fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(PlannerKind::Dp),
            "greedy" => Ok(PlannerKind::Greedy),
            "oracle" => Ok(PlannerKind::Oracle),
            "all_server" | "all-server" => Ok(PlannerKind::AllServer),
            "all_client" | "all-client" => Ok(PlannerKind::AllClient),
            other => Err(Error::Config(format!("unknown planner `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementPolicy<V> {
    pub planner: PlannerKind,
    /// 1 = client, 0 = server.
    pub pi: Vec<Location>,
    pub server_load: V,
    pub client_value: V,
    pub integer_latency: u64,
    pub feasible: bool,
}

impl<V: Value> PlacementPolicy<V> {
    /// Evaluates `pi` on `problem` and fills in loads, latency and feasibility.
    pub fn evaluate(
        planner: PlannerKind,
        pi: Vec<Location>,
        problem: &PlanProblem<V>,
    ) -> Result<Self> {
        let integer_latency = integer_latency(&pi, problem)?;
        let server_load = server_load_of(&pi, &problem.values)?;
        let client_value = pi
            .iter()
            .zip(&problem.values)
            .filter(|(loc, _)| **loc == Location::Client)
            .fold(V::zero(), |acc, (_, &v)| acc + v);
        Ok(Self {
            planner,
            pi,
            server_load,
            client_value,
            integer_latency,
            feasible: integer_latency <= problem.budget,
        })
    }

    pub fn pi_bits(&self) -> Vec<u8> {
        self.pi.iter().map(|l| l.bit()).collect()
    }
}

/// The two DP tables, row-major with `width = budget + 1` columns.
#[derive(Clone, Debug)]
pub struct DpTables<V> {
    pub client: Vec<Option<V>>,
    pub server: Vec<Option<V>>,
    pub rows: usize,
    pub width: usize,
}

impl<V: Value> DpTables<V> {
    pub fn get(&self, side: Location, k: usize, j: usize) -> Option<V> {
        let table = match side {
            Location::Client => &self.client,
            Location::Server => &self.server,
        };
        table[k * self.width + j]
    }

    /// Budget column the tables were built for (possibly clamped below `W`).
    pub fn budget(&self) -> usize {
        self.width - 1
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DpOptions {
    /// Restrict the last layer to one side.
    pub must_end_at: Option<Location>,
}

fn better<V: Value>(a: Option<V>, b: Option<V>) -> Option<V> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y > x { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Worst-case latency of any placement; budgets above it change nothing.
fn latency_ceiling<V>(problem: &PlanProblem<V>) -> u64 {
    problem.stages.iter().fold(0u64, |acc, st| {
        let client = st.client.saturating_add(st.download);
        let server = st.server.saturating_add(st.upload);
        acc.saturating_add(client.max(server))
    })
}

fn lookup<V: Copy>(row: &[Option<V>], j: usize, cost: u64) -> Option<V> {
    let cost = usize::try_from(cost).ok()?;
    j.checked_sub(cost).and_then(|idx| row[idx])
}

/// Fills both tables.
pub fn dp_tables<V: Value>(problem: &PlanProblem<V>) -> Result<DpTables<V>> {
    let budget = problem.budget.min(latency_ceiling(problem));
    let rows = problem.len() + 1;
    let cells = rows as u128 * (budget as u128 + 1);
    if cells > MAX_TABLE_CELLS {
        return Err(Error::TableTooLarge {
            cells,
            limit: MAX_TABLE_CELLS,
        });
    }
    let width = budget as usize + 1;
    let mut client = vec![None; rows * width];
    let mut server = vec![None; rows * width];
    let origin = if problem.source_at_client {
        &mut client
    } else {
        &mut server
    };
    origin[..width].fill(Some(V::zero()));

    for (k, (stage, &value)) in problem.stages.iter().zip(&problem.values).enumerate() {
        let (prev, cur) = (k * width, (k + 1) * width);
        let (c_done, c_rest) = client.split_at_mut(cur);
        let (s_done, s_rest) = server.split_at_mut(cur);
        let (c_prev, s_prev) = (&c_done[prev..], &s_done[prev..]);
        let client_switch = stage.client.saturating_add(stage.download);
        let server_switch = stage.server.saturating_add(stage.upload);
        for j in 0..width {
            c_rest[j] = better(
                lookup(c_prev, j, stage.client),
                lookup(s_prev, j, client_switch),
            )
            .map(|best| value + best);
            s_rest[j] = better(
                lookup(s_prev, j, stage.server),
                lookup(c_prev, j, server_switch),
            );
        }
    }
    Ok(DpTables {
        client,
        server,
        rows,
        width,
    })
}

/// Optimal placement under the budget.
pub fn plan_dp<V: Value>(problem: &PlanProblem<V>) -> Result<PlacementPolicy<V>> {
    plan_dp_with(problem, DpOptions::default())
}

pub fn plan_dp_with<V: Value>(
    problem: &PlanProblem<V>,
    options: DpOptions,
) -> Result<PlacementPolicy<V>> {
    let tables = dp_tables(problem)?;
    let layers = problem.len();
    let top = tables.budget();
    let end_client = tables.get(Location::Client, layers, top);
    let end_server = tables.get(Location::Server, layers, top);
    let end = match options.must_end_at {
        Some(Location::Client) => end_client.map(|_| Location::Client),
        Some(Location::Server) => end_server.map(|_| Location::Server),
        None => match (end_client, end_server) {
            (Some(c), Some(s)) if c > s => Some(Location::Client),
            (_, Some(_)) => Some(Location::Server),
            (Some(_), None) => Some(Location::Client),
            (None, None) => None,
        },
    };
    let Some(end) = end else {
        let mut policy =
            PlacementPolicy::evaluate(PlannerKind::Dp, vec![Location::Server; layers], problem)?;
        policy.feasible = false;
        return Ok(policy);
    };
    let pi = backtrace(problem, &tables, end);
    PlacementPolicy::evaluate(PlannerKind::Dp, pi, problem)
}

/// Walks the tables from the last layer back, re-deriving which
/// predecessor cell produced each stored value.
fn backtrace<V: Value>(
    problem: &PlanProblem<V>,
    tables: &DpTables<V>,
    end: Location,
) -> Vec<Location> {
    let layers = problem.len();
    let mut pi = vec![Location::Server; layers];
    let mut side = end;
    let mut j = tables.budget();
    for k in (1..=layers).rev() {
        pi[k - 1] = side;
        let stage = &problem.stages[k - 1];
        let stored = tables
            .get(side, k, j)
            .expect("backtrace visits reachable cells");
        let (stay, switch) = match side {
            Location::Client => (stage.client, stage.client.saturating_add(stage.download)),
            Location::Server => (stage.server, stage.server.saturating_add(stage.upload)),
        };
        let produces = |prev_side: Location, cost: u64| -> Option<usize> {
            let col = j.checked_sub(usize::try_from(cost).ok()?)?;
            let prev = tables.get(prev_side, k - 1, col)?;
            let value = match side {
                Location::Client => problem.values[k - 1] + prev,
                Location::Server => prev,
            };
            (value == stored).then_some(col)
        };
        // prefer the server-side predecessor on ties
        let candidates = match side {
            Location::Client => [(Location::Server, switch), (Location::Client, stay)],
            Location::Server => [(Location::Server, stay), (Location::Client, switch)],
        };
        let (prev_side, col) = candidates
            .into_iter()
            .find_map(|(prev_side, cost)| produces(prev_side, cost).map(|col| (prev_side, col)))
            .expect("stored value has a producing predecessor");
        side = prev_side;
        j = col;
    }
    debug_assert_eq!(
        side,
        if problem.source_at_client {
            Location::Client
        } else {
            Location::Server
        }
    );
    pi
}

fn prefix_policy(layers: usize, prefix: usize) -> Vec<Location> {
    (0..layers)
        .map(|k| {
            if k < prefix {
                Location::Client
            } else {
                Location::Server
            }
        })
        .collect()
}

/// Runs the longest feasible prefix on the client and the rest on the
/// server. The upload at the split boundary is reserved once.
pub fn plan_greedy<V: Value>(problem: &PlanProblem<V>) -> Result<PlacementPolicy<V>> {
    let layers = problem.len();
    for prefix in (0..=layers).rev() {
        let policy =
            PlacementPolicy::evaluate(PlannerKind::Greedy, prefix_policy(layers, prefix), problem)?;
        if policy.feasible {
            return Ok(policy);
        }
    }
    PlacementPolicy::evaluate(PlannerKind::Greedy, prefix_policy(layers, 0), problem)
}

pub fn plan_trivial<V: Value>(
    problem: &PlanProblem<V>,
    side: Location,
) -> Result<PlacementPolicy<V>> {
    let planner = match side {
        Location::Server => PlannerKind::AllServer,
        Location::Client => PlannerKind::AllClient,
    };
    PlacementPolicy::evaluate(planner, vec![side; problem.len()], problem)
}

/// Exhaustive search over all `2^L` placements.
///
/// Among equally valued feasible placements the one whose bit string
/// (layer 1 most significant) is smallest wins.
pub fn plan_oracle<V: Value>(problem: &PlanProblem<V>) -> Result<PlacementPolicy<V>> {
    let layers = problem.len();
    if layers > ORACLE_MAX_LAYERS {
        return Err(Error::OracleTooLarge {
            layers,
            limit: ORACLE_MAX_LAYERS,
        });
    }
    let decode = |mask: u32| -> Vec<Location> {
        (0..layers)
            .map(|k| {
                if mask >> (layers - 1 - k) & 1 == 1 {
                    Location::Client
                } else {
                    Location::Server
                }
            })
            .collect()
    };
    let mut best: Option<PlacementPolicy<V>> = None;
    for mask in 0..(1u32 << layers) {
        let candidate = PlacementPolicy::evaluate(PlannerKind::Oracle, decode(mask), problem)?;
        if !candidate.feasible {
            continue;
        }
        if best
            .as_ref()
            .is_none_or(|b| candidate.client_value > b.client_value)
        {
            best = Some(candidate);
        }
    }
    match best {
        Some(policy) => Ok(policy),
        None => {
            let mut policy = PlacementPolicy::evaluate(PlannerKind::Oracle, decode(0), problem)?;
            policy.feasible = false;
            Ok(policy)
        }
    }
}

/// Dispatches on the planner kind.
pub fn plan<V: Value>(kind: PlannerKind, problem: &PlanProblem<V>) -> Result<PlacementPolicy<V>> {
    match kind {
        PlannerKind::Dp => plan_dp(problem),
        PlannerKind::Greedy => plan_greedy(problem),
        PlannerKind::Oracle => plan_oracle(problem),
        PlannerKind::AllServer => plan_trivial(problem, Location::Server),
        PlannerKind::AllClient => plan_trivial(problem, Location::Client),
    }
}
