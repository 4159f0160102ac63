//! Integerized placement instances.
//!
//! Real-valued per-layer times (client compute, server compute, input
//! upload, input download) are mapped onto multiples of a time unit so the
//! planner can index its tables by remaining budget.

use serde::{Deserialize, Serialize};

use crate::cost_model::ModelProfile;
use crate::error::{Error, Result};
use crate::scalar::{Scalar, Value};

/// Default time unit: one millisecond.
pub const DEFAULT_UNIT_S: f64 = 0.001;
/// Default per-transfer propagation delay.
pub const DEFAULT_PROPAGATION_S: f64 = 0.010;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec<T> {
    /// Client to server, bits per second.
    pub uplink_bps: T,
    /// Server to client, bits per second.
    pub downlink_bps: T,
    /// Added once to every device-to-device transfer.
    pub propagation_s: T,
}

impl<T: Scalar> LinkSpec<T> {
    pub fn new(uplink_bps: T, downlink_bps: T, propagation_s: T) -> Result<Self> {
        let link = Self {
            uplink_bps,
            downlink_bps,
            propagation_s,
        };
        link.validate()?;
        Ok(link)
    }

    pub fn symmetric(bps: T, propagation_s: T) -> Result<Self> {
        Self::new(bps, bps, propagation_s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.uplink_bps > T::zero() && self.downlink_bps > T::zero()) {
            return Err(Error::Config("link rates must be positive".into()));
        }
        if !(self.propagation_s >= T::zero()) || self.propagation_s.is_infinite() {
            return Err(Error::Config(
                "propagation delay must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Upload and download time, in seconds, of a `tau`-byte tensor.
pub fn transfer_times<T: Scalar>(tau: u64, link: &LinkSpec<T>) -> (T, T) {
    let bits = T::from_u64_lossy(tau) * T::from_f64_lossy(8.0);
    (
        bits / link.uplink_bps + link.propagation_s,
        bits / link.downlink_bps + link.propagation_s,
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingMode {
    /// `round(t / unit)` for every cost and the budget.
    Paper,
    /// `ceil` for costs, `floor` for the budget: integer feasibility implies
    /// real-time feasibility.
    #[default]
    Conservative,
}

impl std::str::FromStr for RoundingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(RoundingMode::Paper),
            "conservative" => Ok(RoundingMode::Conservative),
            other => Err(Error::Config(format!("unknown rounding mode `{other}`"))),
        }
    }
}

fn to_units<T: Scalar>(x: T) -> u64 {
    if x.is_nan() || x <= T::zero() {
        0
    } else {
        x.to_u64().unwrap_or(u64::MAX)
    }
}

/// Integer cost of a duration `t`.
pub fn integerize_cost<T: Scalar>(t: T, unit: T, mode: RoundingMode) -> u64 {
    let q = t / unit;
    match mode {
        RoundingMode::Paper => to_units(q.round()),
        RoundingMode::Conservative => {
            let mut k = to_units(q.ceil());
            if k == u64::MAX {
                return k;
            }
            // the quotient is itself rounded; settle on the least k with k*unit >= t
            while T::from_u64_lossy(k) * unit < t {
                k += 1;
            }
            while k > 0 && T::from_u64_lossy(k - 1) * unit >= t {
                k -= 1;
            }
            k
        }
    }
}

/// Integer budget `W` of a deadline.
pub fn integerize_budget<T: Scalar>(deadline: T, unit: T, mode: RoundingMode) -> u64 {
    if deadline.is_infinite() && deadline > T::zero() {
        return u64::MAX;
    }
    let q = deadline / unit;
    match mode {
        RoundingMode::Paper => to_units(q.round()),
        RoundingMode::Conservative => {
            let mut k = to_units(q.floor());
            if k == u64::MAX {
                return k;
            }
            while k > 0 && T::from_u64_lossy(k) * unit > deadline {
                k -= 1;
            }
            while T::from_u64_lossy(k + 1) * unit <= deadline {
                k += 1;
            }
            k
        }
    }
}

/// Real-valued times of one layer, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerTimes<T> {
    pub client: T,
    pub server: T,
    /// Upload of this layer's input (client to server).
    pub upload: T,
    /// Download of this layer's input (server to client).
    pub download: T,
}

/// Integer costs of one layer, in time units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageCost {
    pub client: u64,
    pub server: u64,
    pub upload: u64,
    pub download: u64,
}

impl StageCost {
    pub fn new(client: u64, server: u64, upload: u64, download: u64) -> Self {
        Self {
            client,
            server,
            upload,
            download,
        }
    }
}

/// Integerizes every layer time and the deadline.
pub fn integerize<T: Scalar>(
    times: &[LayerTimes<T>],
    deadline: T,
    unit: T,
    mode: RoundingMode,
) -> Result<(Vec<StageCost>, u64)> {
    if !(unit > T::zero()) || unit.is_infinite() {
        return Err(Error::Config(
            "time unit must be positive and finite".into(),
        ));
    }
    if !(deadline >= T::zero()) {
        return Err(Error::Config("deadline must be >= 0".into()));
    }
    let costs = times
        .iter()
        .map(|t| StageCost {
            client: integerize_cost(t.client, unit, mode),
            server: integerize_cost(t.server, unit, mode),
            upload: integerize_cost(t.upload, unit, mode),
            download: integerize_cost(t.download, unit, mode),
        })
        .collect();
    Ok((costs, integerize_budget(deadline, unit, mode)))
}

/// Integer placement instance consumed by the planners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanProblem<V> {
    pub stages: Vec<StageCost>,
    /// Resource cost `r_k` of running layer k on the server.
    pub values: Vec<V>,
    /// Budget `W` in time units.
    pub budget: u64,
    /// The raw input starts on the client.
    pub source_at_client: bool,
}

impl<V: Value> PlanProblem<V> {
    pub fn new(
        stages: Vec<StageCost>,
        values: Vec<V>,
        budget: u64,
        source_at_client: bool,
    ) -> Result<Self> {
        if stages.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: stages.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !(*v >= V::zero())) {
            return Err(Error::Config("layer values must be >= 0".into()));
        }
        Ok(Self {
            stages,
            values,
            budget,
            source_at_client,
        })
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn total_value(&self) -> V {
        crate::scalar::total(&self.values)
    }
}

/// Link, deadline and integerization settings for one planning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct Scenario<T> {
    pub uplink_bps: T,
    pub downlink_bps: T,
    pub propagation_s: T,
    /// `null` in JSON means no deadline.
    #[serde(with = "unbounded")]
    pub deadline_s: T,
    pub unit_s: T,
    #[serde(default = "yes")]
    pub source_at_client: bool,
    #[serde(default)]
    pub rounding: RoundingMode,
    /// Charge no server compute time, as the original recurrence does.
    #[serde(default)]
    pub zero_server_time: bool,
}

fn yes() -> bool {
    true
}

/// An optional number where absence stands for infinity.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scalar::Scalar;

    pub fn serialize<T: Scalar + Serialize, S: Serializer>(
        value: &T,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        if value.is_infinite() && *value > T::zero() {
            ser.serialize_none()
        } else {
            ser.serialize_some(value)
        }
    }

    pub fn deserialize<'de, T: Scalar + Deserialize<'de>, D: Deserializer<'de>>(
        de: D,
    ) -> Result<T, D::Error> {
        Ok(Option::<T>::deserialize(de)?.unwrap_or_else(T::infinity))
    }
}

impl<T: Scalar> Scenario<T> {
    pub fn link(&self) -> Result<LinkSpec<T>> {
        LinkSpec::new(self.uplink_bps, self.downlink_bps, self.propagation_s)
    }

    pub fn options(&self) -> BuildOptions<T> {
        BuildOptions {
            unit: self.unit_s,
            rounding: self.rounding,
            source_at_client: self.source_at_client,
            zero_server_time: self.zero_server_time,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildOptions<T> {
    pub unit: T,
    pub rounding: RoundingMode,
    pub source_at_client: bool,
    pub zero_server_time: bool,
}

impl<T: Scalar> Default for BuildOptions<T> {
    fn default() -> Self {
        Self {
            unit: T::from_f64_lossy(DEFAULT_UNIT_S),
            rounding: RoundingMode::Conservative,
            source_at_client: true,
            zero_server_time: false,
        }
    }
}

/// An integer instance together with the real-valued data it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedProblem<T> {
    pub problem: PlanProblem<T>,
    pub times: Vec<LayerTimes<T>>,
    pub deadline: T,
    pub unit: T,
    pub rounding: RoundingMode,
}

pub fn build_problem<T: Scalar>(
    profile: &ModelProfile<T>,
    link: &LinkSpec<T>,
    deadline: T,
    options: &BuildOptions<T>,
) -> Result<TimedProblem<T>> {
    link.validate()?;
    let times: Vec<LayerTimes<T>> = profile
        .layers
        .iter()
        .map(|layer| {
            let (upload, download) = transfer_times(layer.tau, link);
            LayerTimes {
                client: layer.client_time,
                server: if options.zero_server_time {
                    T::zero()
                } else {
                    layer.server_time
                },
                upload,
                download,
            }
        })
        .collect();
    let (stages, budget) = integerize(&times, deadline, options.unit, options.rounding)?;
    let values = profile.layers.iter().map(|l| l.r).collect();
    let problem = PlanProblem::new(stages, values, budget, options.source_at_client)?;
    Ok(TimedProblem {
        problem,
        times,
        deadline,
        unit: options.unit,
        rounding: options.rounding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::{LayerKind, LayerProfile};
    use proptest::prelude::*;

    #[test]
    fn transfer_examples() {
        let link = LinkSpec::new(1e8, 1e8, 0.01).unwrap();
        let (up, down): (f64, f64) = transfer_times(1_000_000, &link);
        assert!((up - 0.09).abs() < 1e-12);
        assert_eq!(up, down);
        assert_eq!(transfer_times(0, &link), (0.01, 0.01));
        let asym = LinkSpec::new(1e6, 1e7, 0.0).unwrap();
        let (up, down): (f64, f64) = transfer_times(1000, &asym);
        assert!((up - 0.008).abs() < 1e-15 && (down - 0.0008).abs() < 1e-15);
        assert!(LinkSpec::new(0.0, 1.0, 0.0).is_err());
        assert!(LinkSpec::new(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn integerize_examples() {
        assert_eq!(integerize_budget(0.5, 0.001, RoundingMode::Paper), 500);
        assert_eq!(
            integerize_budget(0.5, 0.001, RoundingMode::Conservative),
            500
        );
        assert_eq!(integerize_cost(0.0034, 0.001, RoundingMode::Paper), 3);
        assert_eq!(
            integerize_cost(0.0034, 0.001, RoundingMode::Conservative),
            4
        );
        for k in 0..200u32 {
            let t = f64::from(k) * 0.001;
            assert_eq!(
                integerize_cost(t, 0.001, RoundingMode::Paper),
                integerize_cost(t, 0.001, RoundingMode::Conservative),
                "t = {t}"
            );
        }
        assert_eq!(
            integerize_budget(f64::INFINITY, 0.001, RoundingMode::Conservative),
            u64::MAX
        );
        assert_eq!(integerize_budget(0.0, 0.001, RoundingMode::Conservative), 0);
    }

    #[test]
    fn integerize_rejects_bad_unit() {
        let times = [LayerTimes::<f64>::default()];
        assert!(integerize(&times, 1.0, 0.0, RoundingMode::Paper).is_err());
        assert!(integerize(&times, -1.0, 0.001, RoundingMode::Paper).is_err());
    }

    fn toy_profile() -> ModelProfile<f64> {
        let layer = |index, r, c, s, tau| LayerProfile {
            index,
            kind: LayerKind::Custom,
            r,
            client_time: c,
            server_time: s,
            tau,
        };
        ModelProfile {
            model: "toy".into(),
            seq_len: 1,
            metric: Default::default(),
            layers: vec![
                layer(0, 5.0, 0.004, 0.0, 1250),
                layer(1, 1.0, 0.004, 0.0, 1250),
                layer(2, 5.0, 0.004, 0.0, 1250),
            ],
        }
    }

    #[test]
    fn build_toy_instance() {
        // 1250 B over 1e7 bps is exactly 1 ms
        let link = LinkSpec::symmetric(1e7, 0.0).unwrap();
        let paper = BuildOptions {
            rounding: RoundingMode::Paper,
            ..BuildOptions::default()
        };
        let built = build_problem(&toy_profile(), &link, 0.009, &paper).unwrap();
        let p = &built.problem;
        assert_eq!(p.budget, 9);
        assert_eq!(p.values, vec![5.0, 1.0, 5.0]);
        assert!(p.stages.iter().all(|s| *s == StageCost::new(4, 0, 1, 1)));
        // 9 ms is not representable, so the conservative budget drops a unit
        let built = build_problem(&toy_profile(), &link, 0.009, &BuildOptions::default()).unwrap();
        assert_eq!(built.problem.budget, 8);
    }

    #[test]
    fn free_link_has_zero_transfer_costs() {
        let link = LinkSpec::new(f64::INFINITY, f64::INFINITY, 0.0).unwrap();
        let built = build_problem(&toy_profile(), &link, 1.0, &BuildOptions::default()).unwrap();
        assert!(built
            .problem
            .stages
            .iter()
            .all(|s| s.upload == 0 && s.download == 0));
    }

    #[test]
    fn zero_server_time_toggle() {
        let mut profile = toy_profile();
        profile.layers[1].server_time = 0.002;
        let link = LinkSpec::symmetric(1e7, 0.0).unwrap();
        let opts = BuildOptions::default();
        let built = build_problem(&profile, &link, 1.0, &opts).unwrap();
        assert_eq!(built.problem.stages[1].server, 2);
        let opts = BuildOptions {
            zero_server_time: true,
            ..opts
        };
        let built = build_problem(&profile, &link, 1.0, &opts).unwrap();
        assert_eq!(built.problem.stages[1].server, 0);
    }

    #[test]
    fn scenario_json_defaults() {
        let s: Scenario<f64> = serde_json::from_str(
            r#"{"uplink_bps":1e8,"downlink_bps":1e8,"propagation_s":0.01,"deadline_s":0.5,"unit_s":0.001}"#,
        )
        .unwrap();
        assert!(s.source_at_client);
        assert_eq!(s.rounding, RoundingMode::Conservative);
        assert!(!s.zero_server_time);
        assert_eq!(s.deadline_s, 0.5);

        let open: Scenario<f64> = serde_json::from_str(
            r#"{"uplink_bps":1e8,"downlink_bps":1e8,"propagation_s":0.01,"deadline_s":null,"unit_s":0.001}"#,
        )
        .unwrap();
        assert_eq!(open.deadline_s, f64::INFINITY);
        let json = serde_json::to_string(&open).unwrap();
        assert!(json.contains(r#""deadline_s":null"#));
        assert_eq!(serde_json::from_str::<Scenario<f64>>(&json).unwrap(), open);
    }

    proptest! {
        #[test]
        fn conservative_never_underestimates(t in 0.0f64..10.0, unit_ms in 1u32..50) {
            let unit = f64::from(unit_ms) * 1e-4;
            let c = integerize_cost(t, unit, RoundingMode::Conservative);
            prop_assert!(c as f64 * unit >= t);
            let w = integerize_budget(t, unit, RoundingMode::Conservative);
            prop_assert!(w as f64 * unit <= t);
        }

        #[test]
        fn paper_mode_error_bounded(t in 0.0f64..10.0, unit_ms in 1u32..50) {
            let unit = f64::from(unit_ms) * 1e-4;
            let c = integerize_cost(t, unit, RoundingMode::Paper);
            prop_assert!((c as f64 * unit - t).abs() <= unit / 2.0 + 1e-12);
        }

        #[test]
        fn halving_unit_roughly_doubles(t in 0.0f64..10.0, unit_ms in 1u32..50) {
            let unit = f64::from(unit_ms) * 1e-4;
            for mode in [RoundingMode::Paper, RoundingMode::Conservative] {
                let coarse = integerize_cost(t, unit, mode) as i64;
                let fine = integerize_cost(t, unit / 2.0, mode) as i64;
                prop_assert!((fine - 2 * coarse).abs() <= 1);
                let coarse = integerize_budget(t, unit, mode) as i64;
                let fine = integerize_budget(t, unit / 2.0, mode) as i64;
                prop_assert!((fine - 2 * coarse).abs() <= 1);
            }
        }
    }
}
