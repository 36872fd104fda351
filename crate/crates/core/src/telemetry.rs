//! Synthetic vehicle telemetry, regional context, and anomaly injection.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::scenario::{AnomalyPlan, ContextSpec, FeatureSpec};
use crate::seed::rng;
use crate::{Error, Result};

pub const SPEED: &str = "speed_kmh";
pub const ENGINE_TEMP: &str = "engine_temp_c";
pub const BRAKE_PRESSURE: &str = "brake_pressure_kpa";
pub const HEADING: &str = "heading_deg";

/// Sensor channels every scenario must declare; anomaly kinds act on them.
pub const REQUIRED_FEATURES: [&str; 4] = [SPEED, ENGINE_TEMP, BRAKE_PRESSURE, HEADING];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AnomalyKind {
    Congestion,
    Collision,
    MaliciousAttack,
    Breakdown,
    TrafficViolation,
    DriverFatigue,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 6] = [
        AnomalyKind::Congestion,
        AnomalyKind::Collision,
        AnomalyKind::MaliciousAttack,
        AnomalyKind::Breakdown,
        AnomalyKind::TrafficViolation,
        AnomalyKind::DriverFatigue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::Congestion => "congestion",
            AnomalyKind::Collision => "collision",
            AnomalyKind::MaliciousAttack => "malicious_attack",
            AnomalyKind::Breakdown => "breakdown",
            AnomalyKind::TrafficViolation => "traffic_violation",
            AnomalyKind::DriverFatigue => "driver_fatigue",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Normal,
    Anomalous(AnomalyKind),
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        matches!(self, Label::Anomalous(_))
    }

    /// Binary training target: any anomaly kind maps to 1.
    pub fn target(self) -> u8 {
        self.is_anomalous() as u8
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Normal => f.write_str("normal"),
            Label::Anomalous(kind) => kind.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub t: u64,
    pub features: Vec<f64>,
    pub label: Label,
}

/// One vehicle's realized baseline for a feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureProcess {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub reversion: f64,
}

impl FeatureProcess {
    /// Lag-one autocorrelation of the discretized walk.
    pub fn persistence(&self) -> f64 {
        1.0 - self.reversion
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryStream {
    pub vehicle_id: String,
    pub profile: Vec<FeatureProcess>,
    pub records: Vec<TelemetryRecord>,
}

impl TelemetryStream {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_names(&self) -> impl Iterator<Item = &str> {
        self.profile.iter().map(|p| p.name.as_str())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.profile.iter().position(|p| p.name == name)
    }

    pub fn column(&self, index: usize) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(move |r| r.features[index])
    }

    pub fn anomalous_count(&self) -> usize {
        self.records.iter().filter(|r| r.label.is_anomalous()).count()
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Generates an all-normal stream.
///
/// Each feature follows `x[t+1] = m + φ (x[t] - m) + s ε` with
/// `φ = 1 - reversion` and `s = σ √(1 - φ²)`, so the stationary standard
/// deviation is the configured `σ`. The walk starts from its stationary
/// distribution. The per-vehicle mean `m` is the configured mean shifted by
/// up to ±σ/2.
pub fn generate_stream(features: &[FeatureSpec], vehicle_id: &str, steps: usize, seed: u64) -> TelemetryStream {
    let mut rng = rng(seed);
    let profile: Vec<FeatureProcess> = features
        .iter()
        .map(|f| FeatureProcess {
            name: f.name.clone(),
            mean: f.mean + (rng.random::<f64>() - 0.5) * f.std,
            std: f.std,
            reversion: f.reversion,
        })
        .collect();

    let mut state: Vec<f64> = profile.iter().map(|p| p.mean + p.std * normal(&mut rng)).collect();
    let mut records = Vec::with_capacity(steps);
    for t in 0..steps {
        if t > 0 {
            for (x, p) in state.iter_mut().zip(&profile) {
                let phi = p.persistence();
                let shock = p.std * libm::sqrt(1.0 - phi * phi);
                *x = p.mean + phi * (*x - p.mean) + shock * normal(&mut rng);
            }
        }
        records.push(TelemetryRecord {
            t: t as u64,
            features: state.clone(),
            label: Label::Normal,
        });
    }
    TelemetryStream {
        vehicle_id: String::from(vehicle_id),
        profile,
        records,
    }
}

/// Applies labeled perturbations of at least `k_sigma` baseline standard
/// deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyInjector {
    pub k_sigma: f64,
    /// Policy speed limit that traffic violations exceed.
    pub speed_limit_kmh: f64,
}

impl Default for AnomalyInjector {
    fn default() -> Self {
        AnomalyInjector {
            k_sigma: 4.0,
            speed_limit_kmh: 50.0,
        }
    }
}

impl AnomalyInjector {
    /// Relabels `[start, end)` as `kind` and perturbs the features that kind
    /// affects. Records outside the window are untouched.
    pub fn inject(
        &self,
        mut stream: TelemetryStream,
        kind: AnomalyKind,
        start: usize,
        end: usize,
        seed: u64,
    ) -> Result<TelemetryStream> {
        let len = stream.len();
        if start > end || end > len {
            return Err(Error::Range { start, end, len });
        }
        let index = |name: &str| {
            stream
                .feature_index(name)
                .ok_or_else(|| Error::validation("telemetry.features", alloc::format!("missing `{name}`")))
        };
        let speed = index(SPEED)?;
        let temp = index(ENGINE_TEMP)?;
        let brake = index(BRAKE_PRESSURE)?;
        let heading = index(HEADING)?;
        let k = self.k_sigma;
        let mut rng = rng(seed);
        let span = (end - start).max(1) as f64;
        let profile = &stream.profile;

        for (offset, record) in stream.records[start..end].iter_mut().enumerate() {
            let u: f64 = rng.random();
            let x = &mut record.features;
            let (s, t, b, h) = (&profile[speed], &profile[temp], &profile[brake], &profile[heading]);
            match kind {
                AnomalyKind::Congestion => {
                    x[speed] = (s.mean - (k + 2.0 + u) * s.std).max(0.0);
                    x[brake] = b.mean + (k + 1.0 + u) * b.std;
                }
                AnomalyKind::Collision => {
                    x[brake] = b.mean + (k + 2.0 + u) * b.std;
                    x[speed] = (s.mean - (k + 1.0 + u) * s.std).max(0.0);
                    x[heading] = h.mean + (k + 1.0 + u) * h.std;
                }
                AnomalyKind::MaliciousAttack => {
                    // every channel reads high at once, which no real driving state produces
                    for (value, p) in x.iter_mut().zip(profile) {
                        let spread: f64 = rng.random();
                        *value = p.mean + (k + 1.0 + 2.0 * spread) * p.std;
                    }
                }
                AnomalyKind::Breakdown => {
                    let progress = offset as f64 / span;
                    x[temp] = t.mean + ((k + 1.0) * (1.0 + progress) + u) * t.std;
                    x[speed] = (s.mean - (k + 1.0 + u) * s.std).max(0.0);
                }
                AnomalyKind::TrafficViolation => {
                    x[speed] = self.speed_limit_kmh.max(s.mean) + (k + 2.0 + u) * s.std;
                    x[brake] = b.mean + (k + 1.0 + u) * b.std;
                }
                AnomalyKind::DriverFatigue => {
                    // drifting out of lane
                    x[heading] = h.mean + (k + 2.0 + u) * h.std;
                    x[speed] = (s.mean - (k + 1.0 + u) * s.std).max(0.0);
                }
            }
            record.label = Label::Anomalous(kind);
        }
        Ok(stream)
    }
}

/// A planned anomaly window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Episode {
    pub kind: AnomalyKind,
    pub start: usize,
    pub end: usize,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Lays out non-overlapping episodes covering exactly `round(rate * steps)`
/// steps. The stream is cut into equal slots, one episode per slot at a
/// seeded offset; kinds rotate from a seeded starting point.
pub fn plan_episodes(plan: &AnomalyPlan, steps: usize, seed: u64) -> Result<Vec<Episode>> {
    let total = libm::round(plan.rate * steps as f64) as usize;
    if total == 0 || plan.kinds.is_empty() {
        return Ok(Vec::new());
    }
    let count = total.div_ceil(plan.episode_length);
    let slot = steps / count;
    let mut rng = rng(seed);
    let first_kind = rng.random_range(0..plan.kinds.len());
    let mut episodes = Vec::with_capacity(count);
    for i in 0..count {
        let len = if i + 1 == count {
            total - plan.episode_length * (count - 1)
        } else {
            plan.episode_length
        };
        if len > slot {
            return Err(Error::validation(
                "telemetry.anomalies",
                alloc::format!("episodes of {len} steps do not fit {count} slots of {slot} steps"),
            ));
        }
        let start = i * slot + rng.random_range(0..=slot - len);
        episodes.push(Episode {
            kind: plan.kinds[(first_kind + i) % plan.kinds.len()],
            start,
            end: start + len,
        });
    }
    Ok(episodes)
}

/// Baseline stream for one vehicle with the planned anomalies applied.
pub fn generate_vehicle(
    features: &[FeatureSpec],
    plan: &AnomalyPlan,
    speed_limit_kmh: f64,
    vehicle_id: &str,
    steps: usize,
    seed: u64,
) -> Result<(TelemetryStream, Vec<Episode>)> {
    let mut stream = generate_stream(features, vehicle_id, steps, crate::seed::derive_stream_seed(seed, b"baseline"));
    let episodes = plan_episodes(plan, steps, crate::seed::derive_stream_seed(seed, b"plan"))?;
    let injector = AnomalyInjector {
        k_sigma: plan.k_sigma,
        speed_limit_kmh,
    };
    for (i, ep) in episodes.iter().enumerate() {
        let label = alloc::format!("episode-{i}");
        let ep_seed = crate::seed::derive_stream_seed(seed, label.as_bytes());
        stream = injector.inject(stream, ep.kind, ep.start, ep.end, ep_seed)?;
    }
    Ok((stream, episodes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LightState {
    Green,
    Amber,
    Red,
}

impl LightState {
    /// Column within a one-hot light group.
    pub fn index(self) -> usize {
        match self {
            LightState::Green => 0,
            LightState::Amber => 1,
            LightState::Red => 2,
        }
    }

    /// State at `phase` within a cycle of `period` steps: green for half the
    /// cycle, amber for a sixth (at least one step), red for the rest.
    pub fn at(phase: usize, period: usize) -> LightState {
        let green = period / 2;
        let amber = (period / 6).max(1);
        let phase = phase % period;
        if phase < green {
            LightState::Green
        } else if phase < green + amber {
            LightState::Amber
        } else {
            LightState::Red
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextRecord {
    pub t: u64,
    /// Temperature (°C) and precipitation index in [0, 1].
    pub weather: [f64; 2],
    /// One state per intersection.
    pub lights: Vec<LightState>,
    /// One flag per declared policy, in declaration order.
    pub policy_flags: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextStream {
    pub region_id: String,
    pub records: Vec<ContextRecord>,
}

impl ContextStream {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

const PRECIPITATION_STD: f64 = 0.1;
const WEATHER_REVERSION: f64 = 0.05;

/// Regional context: cyclic traffic lights with seeded phase offsets,
/// mean-reverting weather, and policy flags fixed for the whole run.
pub fn generate_context(
    spec: &ContextSpec,
    declared_flags: &[String],
    intersections: usize,
    region_id: &str,
    steps: usize,
    seed: u64,
) -> ContextStream {
    let mut rng = rng(seed);
    let period = spec.light_period;
    let offsets: Vec<usize> = (0..intersections).map(|_| rng.random_range(0..period)).collect();
    let policy_flags: Vec<bool> = declared_flags
        .iter()
        .map(|f| spec.active_policies.contains(f))
        .collect();
    let phi = 1.0 - WEATHER_REVERSION;
    let shock = libm::sqrt(1.0 - phi * phi);
    let mut temp = spec.base_temperature_c + spec.temperature_std * normal(&mut rng);
    let mut precip = spec.precipitation_mean;
    let mut records = Vec::with_capacity(steps);
    for t in 0..steps {
        if t > 0 {
            temp = spec.base_temperature_c
                + phi * (temp - spec.base_temperature_c)
                + spec.temperature_std * shock * normal(&mut rng);
            precip = (spec.precipitation_mean
                + phi * (precip - spec.precipitation_mean)
                + PRECIPITATION_STD * shock * normal(&mut rng))
            .clamp(0.0, 1.0);
        }
        records.push(ContextRecord {
            t: t as u64,
            weather: [temp, precip],
            lights: offsets.iter().map(|o| LightState::at(t + o, period)).collect(),
            policy_flags: policy_flags.clone(),
        });
    }
    ContextStream {
        region_id: String::from(region_id),
        records,
    }
}
