//! Latency and server-load evaluation of placements, and grid sweeps that
//! compare planners across models, sequence lengths, deadlines and links.

use std::collections::BTreeMap;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_model::{
    build_preset, profile, reference_devices, CostMetric, DeviceSpec, ModelProfile, ModelSpec,
};
use crate::error::{Error, Result};
use crate::planner::{plan, plan_greedy, Location, PlacementPolicy, PlannerKind};
use crate::problem::{
    build_problem, BuildOptions, LayerTimes, LinkSpec, PlanProblem, RoundingMode,
};
use crate::scalar::{Scalar, Value};

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch { expected, got });
    }
    Ok(())
}

fn start(source_at_client: bool) -> Location {
    if source_at_client {
        Location::Client
    } else {
        Location::Server
    }
}

/// End-to-end latency of `pi` in time units.
pub fn integer_latency<V>(pi: &[Location], problem: &PlanProblem<V>) -> Result<u64> {
    check_len(problem.stages.len(), pi.len())?;
    let mut prev = start(problem.source_at_client);
    let mut total = 0u64;
    for (&loc, stage) in pi.iter().zip(&problem.stages) {
        let step = match (prev, loc) {
            (Location::Client, Location::Client) => stage.client,
            (Location::Server, Location::Client) => stage.client.saturating_add(stage.download),
            (Location::Server, Location::Server) => stage.server,
            (Location::Client, Location::Server) => stage.server.saturating_add(stage.upload),
        };
        total = total.saturating_add(step);
        prev = loc;
    }
    Ok(total)
}

/// End-to-end latency of `pi` in seconds:
/// `sum x_l (c(e)_l + (1 - x_prev) d_l) + (1 - x_l)(c(s)_l + x_prev u_l)`.
pub fn latency_of<T: Scalar>(
    pi: &[Location],
    times: &[LayerTimes<T>],
    source_at_client: bool,
) -> Result<T> {
    check_len(times.len(), pi.len())?;
    let mut prev = start(source_at_client);
    let mut total = T::zero();
    for (&loc, t) in pi.iter().zip(times) {
        total = total
            + match (prev, loc) {
                (Location::Client, Location::Client) => t.client,
                (Location::Server, Location::Client) => t.client + t.download,
                (Location::Server, Location::Server) => t.server,
                (Location::Client, Location::Server) => t.server + t.upload,
            };
        prev = loc;
    }
    Ok(total)
}

/// Sum of `r_l` over server-resident layers.
pub fn server_load_of<V: Value>(pi: &[Location], values: &[V]) -> Result<V> {
    check_len(values.len(), pi.len())?;
    Ok(pi
        .iter()
        .zip(values)
        .filter(|(loc, _)| **loc == Location::Server)
        .fold(V::zero(), |acc, (_, &v)| acc + v))
}

/// Server load saved relative to greedy, in percentage points of the whole
/// model's resource.
pub fn improvement_over_greedy<T: Scalar>(load: T, greedy_load: T, total_r: T) -> Option<T> {
    (total_r > T::zero()).then(|| T::from_f64_lossy(100.0) * (greedy_load - load) / total_r)
}

/// Server load saved relative to greedy, as a percentage of greedy's load.
pub fn relative_improvement<T: Scalar>(load: T, greedy_load: T) -> Option<T> {
    if greedy_load > T::zero() {
        Some(T::from_f64_lossy(100.0) * (greedy_load - load) / greedy_load)
    } else if load == greedy_load {
        Some(T::zero())
    } else {
        None
    }
}

/// A model given either by preset name or inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Preset(String),
    Spec(ModelSpec),
}

impl ModelRef {
    pub fn name(&self) -> &str {
        match self {
            ModelRef::Preset(name) => name,
            ModelRef::Spec(spec) => &spec.name,
        }
    }

    pub fn at_seq_len(&self, seq_len: u64) -> Result<ModelSpec> {
        let spec = match self {
            ModelRef::Preset(name) => build_preset(name, seq_len)?,
            ModelRef::Spec(spec) => spec.with_seq_len(seq_len),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `count` deadlines starting at `max`, each half the previous.
pub fn geometric_deadlines<T: Scalar>(max: T, count: usize) -> Vec<T> {
    let half = T::from_f64_lossy(0.5);
    std::iter::successors(Some(max), |&d| Some(d * half))
        .take(count)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct SweepGrid<T> {
    pub models: Vec<ModelRef>,
    pub seq_lens: Vec<u64>,
    /// Strictly decreasing, normally each half the previous.
    pub deadlines_s: Vec<T>,
    pub links: Vec<LinkSpec<T>>,
    #[serde(default = "default_planners")]
    pub planners: Vec<PlannerKind>,
    #[serde(default)]
    pub metric: CostMetric,
    #[serde(default = "default_unit")]
    pub unit_s: T,
    #[serde(default)]
    pub rounding: RoundingMode,
    #[serde(default = "yes")]
    pub source_at_client: bool,
    #[serde(default)]
    pub zero_server_time: bool,
    /// FLOP/s; defaults to the reference calibration when absent.
    #[serde(default)]
    pub client_throughput: Option<T>,
    #[serde(default)]
    pub server_throughput: Option<T>,
}

fn default_planners() -> Vec<PlannerKind> {
    vec![
        PlannerKind::Dp,
        PlannerKind::Greedy,
        PlannerKind::AllServer,
        PlannerKind::AllClient,
    ]
}

fn default_unit<T: Scalar>() -> T {
    T::from_f64_lossy(crate::problem::DEFAULT_UNIT_S)
}

fn yes() -> bool {
    true
}

impl<T: Scalar> SweepGrid<T> {
    /// A grid with default settings for everything but the axes.
    pub fn new(
        models: Vec<ModelRef>,
        seq_lens: Vec<u64>,
        deadlines_s: Vec<T>,
        links: Vec<LinkSpec<T>>,
    ) -> Self {
        Self {
            models,
            seq_lens,
            deadlines_s,
            links,
            planners: default_planners(),
            metric: CostMetric::Flop,
            unit_s: default_unit(),
            rounding: RoundingMode::Conservative,
            source_at_client: true,
            zero_server_time: false,
            client_throughput: None,
            server_throughput: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("models", self.models.is_empty()),
            ("seq_lens", self.seq_lens.is_empty()),
            ("deadlines_s", self.deadlines_s.is_empty()),
            ("links", self.links.is_empty()),
            ("planners", self.planners.is_empty()),
        ];
        if let Some((axis, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("sweep grid axis `{axis}` is empty")));
        }
        if self.deadlines_s.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config(
                "deadlines must be strictly decreasing".into(),
            ));
        }
        if self.planners.contains(&PlannerKind::Oracle) {
            return Err(Error::Config(
                "the oracle planner is not available in sweeps".into(),
            ));
        }
        self.links.iter().try_for_each(|l| l.validate())
    }

    fn devices(&self) -> Result<(DeviceSpec<T>, DeviceSpec<T>)> {
        let (client, server) = reference_devices::<T>();
        let client = match self.client_throughput {
            Some(t) => DeviceSpec::new("client", t)?,
            None => client,
        };
        let server = match self.server_throughput {
            Some(t) => DeviceSpec::new("server", t)?,
            None => server,
        };
        Ok((client, server))
    }

    fn options(&self) -> BuildOptions<T> {
        BuildOptions {
            unit: self.unit_s,
            rounding: self.rounding,
            source_at_client: self.source_at_client,
            zero_server_time: self.zero_server_time,
        }
    }
}

/// One (scenario, planner) result of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell<T> {
    pub model: String,
    pub model_index: usize,
    pub seq_len: u64,
    pub seq_index: usize,
    pub deadline_s: T,
    pub deadline_index: usize,
    pub link: LinkSpec<T>,
    pub link_index: usize,
    pub planner: PlannerKind,
    pub feasible: bool,
    pub server_load: T,
    pub client_value: T,
    pub total_r: T,
    pub offload_fraction: T,
    pub latency_s: T,
    pub integer_latency: u64,
    pub budget: u64,
    pub pi: Vec<Location>,
    pub improvement_pp: Option<T>,
    pub improvement_rel: Option<T>,
    /// Set when this cell could not be planned; numeric fields are then zero.
    pub error: Option<String>,
}

#[derive(Clone, Copy)]
struct Coord {
    model: usize,
    seq: usize,
    deadline: usize,
    link: usize,
}

/// Plans every coordinate of the grid with every requested planner.
///
/// Cells are evaluated on the current rayon pool; output order is the
/// nested coordinate order (model, seq_len, deadline, link, planner)
/// regardless of thread count.
pub fn run_sweep<T: Scalar>(grid: &SweepGrid<T>) -> Result<Vec<SweepCell<T>>> {
    grid.validate()?;
    let (client, server) = grid.devices()?;
    let mut profiles = Vec::with_capacity(grid.models.len());
    for model in &grid.models {
        let row = grid
            .seq_lens
            .iter()
            .map(|&s| {
                Ok(profile(
                    &model.at_seq_len(s)?,
                    &client,
                    &server,
                    grid.metric,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        profiles.push(row);
    }

    let mut coords = Vec::new();
    for model in 0..grid.models.len() {
        for seq in 0..grid.seq_lens.len() {
            for deadline in 0..grid.deadlines_s.len() {
                for link in 0..grid.links.len() {
                    coords.push(Coord {
                        model,
                        seq,
                        deadline,
                        link,
                    });
                }
            }
        }
    }
    let cells = coords
        .par_iter()
        .map(|&c| sweep_coordinate(grid, &profiles[c.model][c.seq], c))
        .collect::<Vec<_>>();
    Ok(cells.into_iter().flatten().collect())
}

fn sweep_coordinate<T: Scalar>(
    grid: &SweepGrid<T>,
    profile: &ModelProfile<T>,
    c: Coord,
) -> Vec<SweepCell<T>> {
    let link = grid.links[c.link];
    let deadline_s = grid.deadlines_s[c.deadline];
    let total_r = profile.total_r();
    let blank = |planner: PlannerKind, error: String| SweepCell {
        model: grid.models[c.model].name().to_string(),
        model_index: c.model,
        seq_len: grid.seq_lens[c.seq],
        seq_index: c.seq,
        deadline_s,
        deadline_index: c.deadline,
        link,
        link_index: c.link,
        planner,
        feasible: false,
        server_load: T::zero(),
        client_value: T::zero(),
        total_r,
        offload_fraction: T::zero(),
        latency_s: T::zero(),
        integer_latency: 0,
        budget: 0,
        pi: Vec::new(),
        improvement_pp: None,
        improvement_rel: None,
        error: Some(error),
    };

    let built = match build_problem(profile, &link, deadline_s, &grid.options()) {
        Ok(b) => b,
        Err(e) => {
            log::warn!(
                "sweep cell {} s={} failed: {e}",
                profile.model,
                profile.seq_len
            );
            return grid
                .planners
                .iter()
                .map(|&p| blank(p, e.to_string()))
                .collect();
        }
    };
    let greedy = plan_greedy(&built.problem).ok().filter(|g| g.feasible);

    grid.planners
        .iter()
        .map(|&planner| {
            let policy: PlacementPolicy<T> = match plan(planner, &built.problem) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!(
                        "{planner} on {} s={} failed: {e}",
                        profile.model,
                        profile.seq_len
                    );
                    return blank(planner, e.to_string());
                }
            };
            let latency_s = latency_of(&policy.pi, &built.times, built.problem.source_at_client)
                .expect("policy length matches profile");
            let (improvement_pp, improvement_rel) = match &greedy {
                Some(g) if policy.feasible => (
                    improvement_over_greedy(policy.server_load, g.server_load, total_r),
                    relative_improvement(policy.server_load, g.server_load),
                ),
                _ => (None, None),
            };
            let offload_fraction = if total_r > T::zero() {
                policy.client_value / total_r
            } else {
                T::zero()
            };
            SweepCell {
                feasible: policy.feasible,
                server_load: policy.server_load,
                client_value: policy.client_value,
                offload_fraction,
                latency_s,
                integer_latency: policy.integer_latency,
                budget: built.problem.budget,
                pi: policy.pi,
                improvement_pp,
                improvement_rel,
                error: None,
                ..blank(planner, String::new())
            }
        })
        .collect()
}

/// Runs [`run_sweep`] on a dedicated pool of `jobs` threads.
pub fn run_sweep_with_jobs<T: Scalar>(
    grid: &SweepGrid<T>,
    jobs: usize,
) -> Result<Vec<SweepCell<T>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_sweep(grid))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Model,
    SeqLen,
    Deadline,
    Bandwidth,
}

impl<T> SweepCell<T> {
    pub fn coordinate(&self, axis: Axis) -> usize {
        match axis {
            Axis::Model => self.model_index,
            Axis::SeqLen => self.seq_index,
            Axis::Deadline => self.deadline_index,
            Axis::Bandwidth => self.link_index,
        }
    }
}

fn mean_by<T: Scalar>(
    cells: &[SweepCell<T>],
    planner: PlannerKind,
    axis: Axis,
    field: impl Fn(&SweepCell<T>) -> Option<T>,
) -> BTreeMap<usize, T> {
    let mut acc: BTreeMap<usize, (T, usize)> = BTreeMap::new();
    for cell in cells.iter().filter(|c| c.planner == planner) {
        if let Some(v) = field(cell) {
            let entry = acc.entry(cell.coordinate(axis)).or_insert((T::zero(), 0));
            entry.0 = entry.0 + v;
            entry.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k, sum / T::from_usize(n).expect("count fits")))
        .collect()
}

/// Mean offload fraction of `planner` grouped by the coordinate index on `axis`.
pub fn mean_offload_by<T: Scalar>(
    cells: &[SweepCell<T>],
    planner: PlannerKind,
    axis: Axis,
) -> BTreeMap<usize, T> {
    mean_by(cells, planner, axis, |c| {
        c.error.is_none().then_some(c.offload_fraction)
    })
}

/// Mean improvement over greedy (percentage points) where it is defined.
pub fn mean_improvement_by<T: Scalar>(
    cells: &[SweepCell<T>],
    planner: PlannerKind,
    axis: Axis,
) -> BTreeMap<usize, T> {
    mean_by(cells, planner, axis, |c| c.improvement_pp)
}

/// One CSV row of sweep output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub model: String,
    pub seq_len: u64,
    pub deadline_s: f64,
    pub uplink_bps: f64,
    pub downlink_bps: f64,
    pub planner: PlannerKind,
    pub feasible: bool,
    pub server_load: Option<f64>,
    pub offload_fraction: Option<f64>,
    pub latency_s: Option<f64>,
    pub improvement_pp: Option<f64>,
    pub improvement_rel: Option<f64>,
}

impl<T: Scalar> From<&SweepCell<T>> for SweepRecord {
    fn from(c: &SweepCell<T>) -> Self {
        let ok = c.error.is_none();
        let num = |v: T| ok.then(|| v.to_f64_lossy());
        SweepRecord {
            model: c.model.clone(),
            seq_len: c.seq_len,
            deadline_s: c.deadline_s.to_f64_lossy(),
            uplink_bps: c.link.uplink_bps.to_f64_lossy(),
            downlink_bps: c.link.downlink_bps.to_f64_lossy(),
            planner: c.planner,
            feasible: c.feasible,
            server_load: num(c.server_load),
            offload_fraction: num(c.offload_fraction),
            latency_s: num(c.latency_s),
            improvement_pp: c.improvement_pp.map(Scalar::to_f64_lossy),
            improvement_rel: c.improvement_rel.map(Scalar::to_f64_lossy),
        }
    }
}

pub fn write_sweep_csv<T: Scalar, W: io::Write>(cells: &[SweepCell<T>], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for cell in cells {
        writer.serialize(SweepRecord::from(cell))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: io::Read>(input: R) -> Result<Vec<SweepRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
