//! Scenario configuration and the federation topology it describes.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::model::ModelDims;
use crate::telemetry::{AnomalyKind, REQUIRED_FEATURES};
use crate::{Error, Result};

/// Number of states a traffic light cycles through (green, amber, red).
pub const LIGHT_STATES: usize = 3;
/// Weather columns in the fused context encoding (temperature, precipitation).
pub const WEATHER_COLUMNS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ScenarioConfig {
    pub master_seed: u64,
    pub regions: Vec<RegionSpec>,
    pub training: TrainingConfig,
    pub telemetry: TelemetrySpec,
    #[cfg_attr(feature = "serde", serde(default))]
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct RegionSpec {
    pub id: String,
    /// Defaults to `cloudlet-<region id>`.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub cloudlet: Option<String>,
    pub vendors: Vec<VendorSpec>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub context: ContextSpec,
}

impl RegionSpec {
    pub fn cloudlet_id(&self) -> String {
        match &self.cloudlet {
            Some(id) => id.clone(),
            None => format!("cloudlet-{}", self.id),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct VendorSpec {
    pub id: String,
    pub vehicles: Vec<String>,
}

/// Regional environment: weather, traffic lights and city policy.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ContextSpec {
    pub base_temperature_c: f64,
    pub temperature_std: f64,
    pub precipitation_mean: f64,
    /// Full green-amber-red cycle length in steps.
    pub light_period: usize,
    /// Subset of `telemetry.policy_flags` in force in this region.
    pub active_policies: Vec<String>,
    pub speed_limit_kmh: f64,
}

impl Default for ContextSpec {
    fn default() -> Self {
        ContextSpec {
            base_temperature_c: 15.0,
            temperature_std: 3.0,
            precipitation_mean: 0.2,
            light_period: 12,
            active_policies: Vec::new(),
            speed_limit_kmh: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TrainingConfig {
    /// Local minibatch size `J`.
    pub minibatch_size: usize,
    /// Local epochs `H`.
    pub local_epochs: usize,
    /// Client learning rate `α`.
    pub learning_rate: f64,
    /// Communication rounds `Q`.
    pub rounds: usize,
    /// Server learning rate applied at the multi-cloud tier.
    #[cfg_attr(feature = "serde", serde(default = "default_server_lr"))]
    pub server_learning_rate: f64,
    /// Sequence window length `T`.
    #[cfg_attr(feature = "serde", serde(default = "default_window"))]
    pub window: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_hidden"))]
    pub hidden_size: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_layers"))]
    pub num_layers: usize,
    /// Insert a vendor aggregation tier between vehicles and cloudlets.
    #[cfg_attr(feature = "serde", serde(default))]
    pub vendor_tier: bool,
}

fn default_server_lr() -> f64 {
    1.0
}
fn default_window() -> usize {
    4
}
fn default_hidden() -> usize {
    8
}
fn default_layers() -> usize {
    2
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            minibatch_size: 32,
            local_epochs: 2,
            learning_rate: 0.05,
            rounds: 20,
            server_learning_rate: default_server_lr(),
            window: default_window(),
            hidden_size: default_hidden(),
            num_layers: default_layers(),
            vendor_tier: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TelemetrySpec {
    /// Steps generated per vehicle.
    pub steps: usize,
    pub features: Vec<FeatureSpec>,
    /// Declared policy flags; each becomes one 0/1 context column.
    #[cfg_attr(feature = "serde", serde(default))]
    pub policy_flags: Vec<String>,
    /// Intersections per region; each contributes a one-hot light group.
    #[cfg_attr(feature = "serde", serde(default = "default_intersections"))]
    pub intersections: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub anomalies: AnomalyPlan,
}

#[cfg(feature = "serde")]
fn default_intersections() -> usize {
    1
}

/// Baseline of one sensor channel: a mean-reverting random walk.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct FeatureSpec {
    pub name: String,
    pub mean: f64,
    /// Stationary standard deviation.
    pub std: f64,
    /// Fraction of the gap to the mean closed per step, in (0, 1].
    #[cfg_attr(feature = "serde", serde(default = "default_reversion"))]
    pub reversion: f64,
}

#[cfg(feature = "serde")]
fn default_reversion() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AnomalyPlan {
    /// Fraction of each stream's steps that are anomalous.
    pub rate: f64,
    /// Steps per injected episode (the last episode absorbs any remainder).
    pub episode_length: usize,
    /// Minimum perturbation in baseline standard deviations.
    pub k_sigma: f64,
    pub kinds: Vec<AnomalyKind>,
}

impl Default for AnomalyPlan {
    fn default() -> Self {
        AnomalyPlan {
            rate: 0.05,
            episode_length: 25,
            k_sigma: 4.0,
            kinds: AnomalyKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EvaluationConfig {
    /// Decision threshold `τ`.
    pub threshold: f64,
    /// Trailing fraction of every stream held out for testing.
    pub test_fraction: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            threshold: 0.5,
            test_fraction: 0.2,
        }
    }
}

fn positive(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be a positive finite number, got {value}")))
    }
}

fn open_unit(field: &str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must lie in (0, 1), got {value}")))
    }
}

impl ScenarioConfig {
    /// Checks every invariant. Errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::validation("regions", "at least one region is required"));
        }
        let mut ids = BTreeSet::new();
        let mut claim = |field: String, id: &str| -> Result<()> {
            if id.is_empty() {
                return Err(Error::validation(field, "ids must be non-empty"));
            }
            if !ids.insert(String::from(id)) {
                return Err(Error::validation(field, format!("duplicate id `{id}`")));
            }
            Ok(())
        };
        let mut vehicles = 0usize;
        for (ri, region) in self.regions.iter().enumerate() {
            claim(format!("regions[{ri}].id"), &region.id)?;
            claim(format!("regions[{ri}].cloudlet"), &region.cloudlet_id())?;
            if region.vendors.is_empty() {
                return Err(Error::validation(
                    format!("regions[{ri}].vendors"),
                    "a region needs at least one vendor",
                ));
            }
            for (vi, vendor) in region.vendors.iter().enumerate() {
                claim(format!("regions[{ri}].vendors[{vi}].id"), &vendor.id)?;
                if vendor.vehicles.is_empty() {
                    return Err(Error::validation(
                        format!("regions[{ri}].vendors[{vi}].vehicles"),
                        "a vendor needs at least one vehicle",
                    ));
                }
                for (ci, vehicle) in vendor.vehicles.iter().enumerate() {
                    claim(format!("regions[{ri}].vendors[{vi}].vehicles[{ci}]"), vehicle)?;
                    vehicles += 1;
                }
            }
            let ctx = &region.context;
            let prefix = format!("regions[{ri}].context");
            positive(&format!("{prefix}.temperature_std"), ctx.temperature_std)?;
            positive(&format!("{prefix}.speed_limit_kmh"), ctx.speed_limit_kmh)?;
            if !ctx.base_temperature_c.is_finite() {
                return Err(Error::validation(format!("{prefix}.base_temperature_c"), "must be finite"));
            }
            if !(0.0..=1.0).contains(&ctx.precipitation_mean) {
                return Err(Error::validation(
                    format!("{prefix}.precipitation_mean"),
                    "must lie in [0, 1]",
                ));
            }
            if ctx.light_period < LIGHT_STATES {
                return Err(Error::validation(
                    format!("{prefix}.light_period"),
                    format!("must be at least {LIGHT_STATES}"),
                ));
            }
            for flag in &ctx.active_policies {
                if !self.telemetry.policy_flags.contains(flag) {
                    return Err(Error::validation(
                        format!("{prefix}.active_policies"),
                        format!("`{flag}` is not declared in telemetry.policy_flags"),
                    ));
                }
            }
        }
        if vehicles == 0 {
            return Err(Error::validation("regions", "at least one vehicle is required"));
        }

        let t = &self.training;
        if t.minibatch_size == 0 {
            return Err(Error::validation("training.minibatch_size", "must be at least 1"));
        }
        if t.local_epochs == 0 {
            return Err(Error::validation("training.local_epochs", "must be at least 1"));
        }
        if t.window == 0 {
            return Err(Error::validation("training.window", "must be at least 1"));
        }
        if t.hidden_size == 0 {
            return Err(Error::validation("training.hidden_size", "must be at least 1"));
        }
        if t.num_layers != 2 {
            return Err(Error::validation("training.num_layers", "only 2 stacked layers are supported"));
        }
        positive("training.learning_rate", t.learning_rate)?;
        positive("training.server_learning_rate", t.server_learning_rate)?;

        let tel = &self.telemetry;
        if tel.features.is_empty() {
            return Err(Error::validation("telemetry.features", "at least one feature is required"));
        }
        let mut names = BTreeSet::new();
        for (fi, feature) in tel.features.iter().enumerate() {
            if !names.insert(feature.name.as_str()) {
                return Err(Error::validation(
                    format!("telemetry.features[{fi}].name"),
                    format!("duplicate feature `{}`", feature.name),
                ));
            }
            if !feature.mean.is_finite() {
                return Err(Error::validation(format!("telemetry.features[{fi}].mean"), "must be finite"));
            }
            positive(&format!("telemetry.features[{fi}].std"), feature.std)?;
            if !(feature.reversion > 0.0 && feature.reversion <= 1.0) {
                return Err(Error::validation(
                    format!("telemetry.features[{fi}].reversion"),
                    "must lie in (0, 1]",
                ));
            }
        }
        for required in REQUIRED_FEATURES {
            if !names.contains(required) {
                return Err(Error::validation(
                    "telemetry.features",
                    format!("missing required feature `{required}`"),
                ));
            }
        }
        let mut flags = BTreeSet::new();
        for flag in &tel.policy_flags {
            if !flags.insert(flag.as_str()) {
                return Err(Error::validation("telemetry.policy_flags", format!("duplicate flag `{flag}`")));
            }
        }
        if tel.intersections == 0 {
            return Err(Error::validation("telemetry.intersections", "must be at least 1"));
        }
        let plan = &tel.anomalies;
        if !(0.0..1.0).contains(&plan.rate) {
            return Err(Error::validation("telemetry.anomalies.rate", "must lie in [0, 1)"));
        }
        if plan.episode_length == 0 {
            return Err(Error::validation("telemetry.anomalies.episode_length", "must be at least 1"));
        }
        positive("telemetry.anomalies.k_sigma", plan.k_sigma)?;
        if plan.kinds.is_empty() && plan.rate > 0.0 {
            return Err(Error::validation("telemetry.anomalies.kinds", "at least one kind is required"));
        }

        open_unit("evaluation.threshold", self.evaluation.threshold)?;
        open_unit("evaluation.test_fraction", self.evaluation.test_fraction)?;
        Ok(())
    }

    /// Width of the fused context encoding appended to telemetry features.
    pub fn context_width(&self) -> usize {
        WEATHER_COLUMNS + LIGHT_STATES * self.telemetry.intersections + self.telemetry.policy_flags.len()
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            input_size: self.telemetry.features.len() + self.context_width(),
            hidden_size: self.training.hidden_size,
            num_layers: self.training.num_layers,
        }
    }

    pub fn region(&self, id: &str) -> Option<&RegionSpec> {
        self.regions.iter().find(|r| r.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VendorNode {
    pub id: String,
    pub vehicles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionNode {
    pub id: String,
    pub cloudlet_id: String,
    pub vendors: Vec<VendorNode>,
}

impl RegionNode {
    pub fn vehicles(&self) -> impl Iterator<Item = &str> {
        self.vendors.iter().flat_map(|v| v.vehicles.iter().map(String::as_str))
    }

    pub fn vehicle_count(&self) -> usize {
        self.vendors.iter().map(|v| v.vehicles.len()).sum()
    }
}

/// The region → vendor → vehicle tree, sorted by id at every level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FederationTopology {
    pub regions: Vec<RegionNode>,
    /// Total number of clients `N`.
    pub n_clients: usize,
}

/// One vehicle's place in the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement<'a> {
    pub region: &'a str,
    pub vendor: &'a str,
    pub vehicle: &'a str,
}

impl FederationTopology {
    /// Builds the canonical tree. Declaration order does not matter.
    pub fn build(config: &ScenarioConfig) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut regions: Vec<RegionNode> = config
            .regions
            .iter()
            .map(|r| {
                let mut vendors: Vec<VendorNode> = r
                    .vendors
                    .iter()
                    .map(|v| {
                        let mut vehicles = v.vehicles.clone();
                        vehicles.sort();
                        VendorNode {
                            id: v.id.clone(),
                            vehicles,
                        }
                    })
                    .collect();
                vendors.sort_by(|a, b| a.id.cmp(&b.id));
                RegionNode {
                    id: r.id.clone(),
                    cloudlet_id: r.cloudlet_id(),
                    vendors,
                }
            })
            .collect();
        regions.sort_by(|a, b| a.id.cmp(&b.id));
        let mut n_clients = 0;
        for region in &regions {
            for vehicle in region.vehicles() {
                if !seen.insert(vehicle) {
                    return Err(Error::validation(
                        "regions.vendors.vehicles",
                        format!("duplicate vehicle id `{vehicle}`"),
                    ));
                }
                n_clients += 1;
            }
        }
        Ok(FederationTopology { regions, n_clients })
    }

    /// All vehicles in canonical order.
    pub fn placements(&self) -> impl Iterator<Item = Placement<'_>> {
        self.regions.iter().flat_map(|r| {
            r.vendors.iter().flat_map(move |v| {
                v.vehicles.iter().map(move |vehicle| Placement {
                    region: &r.id,
                    vendor: &v.id,
                    vehicle,
                })
            })
        })
    }
}

/// Convenience alias for [`FederationTopology::build`].
pub fn build_topology(config: &ScenarioConfig) -> Result<FederationTopology> {
    FederationTopology::build(config)
}
