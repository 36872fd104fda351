//! Synchronous hierarchical aggregation: vehicles → (vendors) → cloudlets →
//! multi-cloud server.
//!
//! Each round the server broadcasts its model, every vehicle trains a
//! private copy on its twin's data, each cloudlet averages its vehicles,
//! and the server averages the cloudlets. Children are always combined in
//! id order so the floating-point result does not depend on scheduling.
//!
//! Tiers combine client endpoints as `(1 - η) w + (η / k) Σ w_i`, which is
//! algebraically `w + (η / k) Σ u_i` but reproduces a lone participant's
//! parameters exactly when `η = 1`. Cloudlets and vendors use `η = 1`; the
//! server learning rate is applied once, at the multi-cloud tier.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::exec::Executor;
use crate::model::{train_local, LocalOutcome, ModelParameters, WeightDelta};
use crate::pipeline::SequenceSet;
use crate::scenario::{FederationTopology, RegionNode, TrainingConfig};
use crate::seed::derive_stream_seed;
use crate::{Error, Result};

/// `w_z + (η / n_effective) Σ deltas`, summed in the given order.
///
/// Returns `None` (round skipped, `w_z` unchanged) when `deltas` is empty.
pub fn aggregate(
    w_z: &ModelParameters,
    deltas: &[WeightDelta],
    server_lr: f64,
    n_effective: usize,
) -> Result<Option<ModelParameters>> {
    if deltas.is_empty() {
        return Ok(None);
    }
    if n_effective == 0 {
        return Err(Error::validation("n_effective", "must be at least 1"));
    }
    let mut sum = WeightDelta::zeros(w_z.dims());
    for d in deltas {
        w_z.check_compatible(d.dims())?;
        for (s, v) in sum.values_mut().iter_mut().zip(d.values()) {
            *s += v;
        }
    }
    let coeff = server_lr / n_effective as f64;
    let mut next = w_z.clone();
    for (w, s) in next.values_mut().iter_mut().zip(sum.values()) {
        *w += coeff * s;
    }
    Ok(Some(next))
}

/// `(1 - η) base + (η / k) Σ members`, summed in the given order.
pub fn average_models(base: &ModelParameters, members: &[&ModelParameters], lr: f64) -> Result<Option<ModelParameters>> {
    if members.is_empty() {
        return Ok(None);
    }
    let mut sum = alloc::vec![0.0; base.values().len()];
    for m in members {
        base.check_compatible(m.dims())?;
        for (s, v) in sum.iter_mut().zip(m.values()) {
            *s += v;
        }
    }
    let keep = 1.0 - lr;
    let coeff = lr / members.len() as f64;
    let mut next = base.clone();
    for (w, s) in next.values_mut().iter_mut().zip(&sum) {
        *w = keep * *w + coeff * s;
    }
    Ok(Some(next))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Vendor,
    Cloudlet,
    MultiCloud,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Vendor => "vendor",
            Level::Cloudlet => "cloudlet",
            Level::MultiCloud => "multi_cloud",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An aggregation point and its children, sorted by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregationNode {
    pub id: String,
    pub level: Level,
    pub children: Vec<String>,
}

/// What one vehicle did in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub vehicle_id: String,
    /// `None` when the client had no training windows.
    pub outcome: Option<LocalOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientRecord {
    pub vehicle_id: String,
    pub delta_norm: f64,
    pub mean_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub node_id: String,
    pub level: Level,
    pub participating: usize,
    /// Children that contributed nothing this round.
    pub skipped: Vec<String>,
    /// Norm of the node's model change relative to what it received.
    pub delta_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<ClientRecord>,
    pub skipped_clients: Vec<String>,
    /// Vendor and cloudlet nodes in canonical order, then the server.
    pub nodes: Vec<NodeRecord>,
}

impl RoundRecord {
    pub fn participating(&self) -> usize {
        self.clients.len()
    }

    /// Mean over participating clients of their mean local-epoch loss.
    pub fn mean_client_loss(&self) -> f64 {
        if self.clients.is_empty() {
            return f64::NAN;
        }
        self.clients.iter().map(|c| c.mean_loss).sum::<f64>() / self.clients.len() as f64
    }

    pub fn server(&self) -> &NodeRecord {
        self.nodes.last().expect("round record always holds the server node")
    }
}

/// Result of one cloudlet's aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudletOutcome {
    pub cloudlet_id: String,
    /// `None` when every child was skipped.
    pub model: Option<ModelParameters>,
    /// Regional model minus the model the cloudlet received.
    pub delta: Option<WeightDelta>,
    pub nodes: Vec<NodeRecord>,
}

fn node_record(
    node_id: &str,
    level: Level,
    received: &ModelParameters,
    model: Option<&ModelParameters>,
    participating: usize,
    skipped: Vec<String>,
) -> Result<NodeRecord> {
    let delta_norm = match model {
        Some(m) => m.delta_from(received)?.norm(),
        None => 0.0,
    };
    Ok(NodeRecord {
        node_id: String::from(node_id),
        level,
        participating,
        skipped,
        delta_norm,
    })
}

/// Hierarchical federation over a fixed topology and per-vehicle data.
pub struct Federation<'a> {
    topology: &'a FederationTopology,
    cfg: &'a TrainingConfig,
    master_seed: u64,
    data: &'a BTreeMap<String, SequenceSet>,
}

impl<'a> Federation<'a> {
    /// `data` must hold a (possibly empty) training set for every vehicle.
    pub fn new(
        topology: &'a FederationTopology,
        cfg: &'a TrainingConfig,
        master_seed: u64,
        data: &'a BTreeMap<String, SequenceSet>,
    ) -> Result<Self> {
        for p in topology.placements() {
            if !data.contains_key(p.vehicle) {
                return Err(Error::validation("federation.data", format!("no dataset for `{}`", p.vehicle)));
            }
        }
        Ok(Federation {
            topology,
            cfg,
            master_seed,
            data,
        })
    }

    /// Seed for one client's local training in one round. Independent of
    /// where the client sits in the topology.
    pub fn client_seed(&self, vehicle_id: &str, round: usize) -> u64 {
        derive_stream_seed(self.master_seed, format!("client/{vehicle_id}/round/{round}").as_bytes())
    }

    pub fn server_node(&self) -> AggregationNode {
        let mut children: Vec<String> = self.topology.regions.iter().map(|r| r.cloudlet_id.clone()).collect();
        children.sort();
        AggregationNode {
            id: String::from("multi-cloud"),
            level: Level::MultiCloud,
            children,
        }
    }

    pub fn cloudlet_node(&self, region: &RegionNode) -> AggregationNode {
        let mut children: Vec<String> = if self.cfg.vendor_tier {
            region.vendors.iter().map(|v| v.id.clone()).collect()
        } else {
            region.vehicles().map(String::from).collect()
        };
        children.sort();
        AggregationNode {
            id: region.cloudlet_id.clone(),
            level: Level::Cloudlet,
            children,
        }
    }

    /// Runs local training for `vehicles` from `received`. Vehicles without
    /// training windows are reported as skipped.
    pub fn train_clients<E: Executor>(
        &self,
        received: &ModelParameters,
        round: usize,
        vehicles: &[&str],
        exec: &E,
    ) -> Result<Vec<ClientUpdate>> {
        let results = exec.map(vehicles, |&vehicle| {
            let data = &self.data[vehicle];
            let outcome = if data.is_empty() {
                None
            } else {
                Some(train_local(received, data, self.cfg, self.client_seed(vehicle, round)))
            };
            (vehicle, outcome)
        });
        results
            .into_iter()
            .map(|(vehicle, outcome)| {
                let outcome = match outcome.transpose() {
                    Ok(o) => o,
                    Err(Error::Divergence { .. }) => return Err(Error::Divergence { round: Some(round) }),
                    Err(e) => return Err(e),
                };
                Ok(ClientUpdate {
                    vehicle_id: String::from(vehicle),
                    outcome,
                })
            })
            .collect()
    }

    /// Averages a region's client updates into its regional model.
    pub fn aggregate_cloudlet(
        &self,
        region: &RegionNode,
        received: &ModelParameters,
        updates: &BTreeMap<&str, &ClientUpdate>,
    ) -> Result<CloudletOutcome> {
        let trained = |vehicle: &str| updates.get(vehicle).and_then(|u| u.outcome.as_ref()).map(|o| &o.params);
        let node = self.cloudlet_node(region);
        let mut nodes = Vec::new();
        let mut members: Vec<(String, ModelParameters)> = Vec::new();
        let mut skipped = Vec::new();

        if self.cfg.vendor_tier {
            let mut vendors: Vec<_> = region.vendors.iter().collect();
            vendors.sort_by(|a, b| a.id.cmp(&b.id));
            for vendor in vendors {
                let mut vehicles: Vec<&str> = vendor.vehicles.iter().map(String::as_str).collect();
                vehicles.sort();
                let models: Vec<&ModelParameters> = vehicles.iter().filter_map(|v| trained(v)).collect();
                let vendor_skipped: Vec<String> =
                    vehicles.iter().filter(|v| trained(v).is_none()).map(|v| String::from(*v)).collect();
                let model = average_models(received, &models, 1.0)?;
                nodes.push(node_record(&vendor.id, Level::Vendor, received, model.as_ref(), models.len(), vendor_skipped)?);
                match model {
                    Some(m) => members.push((vendor.id.clone(), m)),
                    None => skipped.push(vendor.id.clone()),
                }
            }
        } else {
            for child in &node.children {
                match trained(child) {
                    Some(m) => members.push((child.clone(), m.clone())),
                    None => skipped.push(child.clone()),
                }
            }
        }

        let refs: Vec<&ModelParameters> = members.iter().map(|(_, m)| m).collect();
        let model = average_models(received, &refs, 1.0)?;
        nodes.push(node_record(&node.id, Level::Cloudlet, received, model.as_ref(), refs.len(), skipped)?);
        let delta = model.as_ref().map(|m| m.delta_from(received)).transpose()?;
        Ok(CloudletOutcome {
            cloudlet_id: node.id,
            model,
            delta,
            nodes,
        })
    }

    /// Trains every vehicle of `region` and aggregates them at its cloudlet.
    pub fn cloudlet_round<E: Executor>(
        &self,
        region: &RegionNode,
        received: &ModelParameters,
        round: usize,
        exec: &E,
    ) -> Result<(CloudletOutcome, Vec<ClientUpdate>)> {
        let vehicles: Vec<&str> = region.vehicles().collect();
        let updates = self.train_clients(received, round, &vehicles, exec)?;
        let by_id: BTreeMap<&str, &ClientUpdate> = updates.iter().map(|u| (u.vehicle_id.as_str(), u)).collect();
        let outcome = self.aggregate_cloudlet(region, received, &by_id)?;
        Ok((outcome, updates))
    }

    /// Averages cloudlet models at the server with the server learning rate.
    /// Cloudlets are combined in id order regardless of arrival order.
    pub fn global_round(
        &self,
        received: &ModelParameters,
        cloudlets: &[CloudletOutcome],
    ) -> Result<(ModelParameters, NodeRecord)> {
        let mut sorted: Vec<&CloudletOutcome> = cloudlets.iter().collect();
        sorted.sort_by(|a, b| a.cloudlet_id.cmp(&b.cloudlet_id));
        let members: Vec<&ModelParameters> = sorted.iter().filter_map(|c| c.model.as_ref()).collect();
        let skipped = sorted
            .iter()
            .filter(|c| c.model.is_none())
            .map(|c| c.cloudlet_id.clone())
            .collect();
        let model = average_models(received, &members, self.cfg.server_learning_rate)?;
        let record = node_record("multi-cloud", Level::MultiCloud, received, model.as_ref(), members.len(), skipped)?;
        let next = model.unwrap_or_else(|| received.clone());
        Ok((next, record))
    }

    /// Aggregates already-trained client updates for `round`.
    pub fn complete_round(
        &self,
        received: &ModelParameters,
        round: usize,
        updates: &[ClientUpdate],
    ) -> Result<(ModelParameters, RoundRecord)> {
        let by_id: BTreeMap<&str, &ClientUpdate> = updates.iter().map(|u| (u.vehicle_id.as_str(), u)).collect();
        let mut cloudlets = Vec::new();
        let mut nodes = Vec::new();
        for region in &self.topology.regions {
            let outcome = self.aggregate_cloudlet(region, received, &by_id)?;
            nodes.extend(outcome.nodes.iter().cloned());
            cloudlets.push(outcome);
        }
        let (next, server) = self.global_round(received, &cloudlets)?;
        if !next.is_finite() {
            return Err(Error::Divergence { round: Some(round) });
        }
        nodes.push(server);

        let mut clients = Vec::new();
        let mut skipped_clients = Vec::new();
        for p in self.topology.placements() {
            match by_id.get(p.vehicle).and_then(|u| u.outcome.as_ref()) {
                Some(o) => clients.push(ClientRecord {
                    vehicle_id: String::from(p.vehicle),
                    delta_norm: o.delta.norm(),
                    mean_loss: o.stats.mean_loss(),
                    final_loss: o.stats.final_loss(),
                    steps: o.stats.steps,
                }),
                None => skipped_clients.push(String::from(p.vehicle)),
            }
        }
        Ok((
            next,
            RoundRecord {
                round,
                clients,
                skipped_clients,
                nodes,
            },
        ))
    }

    /// Every vehicle in canonical order.
    pub fn vehicles(&self) -> Vec<&'a str> {
        self.topology.placements().map(|p| p.vehicle).collect()
    }

    /// One full round: broadcast, local training, cloudlet and server
    /// aggregation.
    pub fn round<E: Executor>(
        &self,
        received: &ModelParameters,
        round: usize,
        exec: &E,
    ) -> Result<(ModelParameters, RoundRecord)> {
        let updates = self.train_clients(received, round, &self.vehicles(), exec)?;
        self.complete_round(received, round, &updates)
    }

    /// Runs `rounds` rounds from `init`. Returns the model after every
    /// round (index 0 is `init`) and the round history.
    pub fn run<E: Executor>(
        &self,
        init: ModelParameters,
        rounds: usize,
        exec: &E,
    ) -> Result<(Vec<ModelParameters>, Vec<RoundRecord>)> {
        let mut models = alloc::vec![init];
        let mut history = Vec::with_capacity(rounds);
        for q in 0..rounds {
            let current = models.last().expect("models starts non-empty");
            let (next, record) = self.round(current, q, exec)?;
            models.push(next);
            history.push(record);
        }
        Ok((models, history))
    }
}

/// Seed of the shared initial model.
pub fn init_seed(master_seed: u64) -> u64 {
    derive_stream_seed(master_seed, b"global-init")
}

/// Initializes the global model and runs `cfg.rounds` rounds.
pub fn run_hfl<E: Executor>(
    topology: &FederationTopology,
    cfg: &TrainingConfig,
    master_seed: u64,
    data: &BTreeMap<String, SequenceSet>,
    dims: crate::model::ModelDims,
    exec: &E,
) -> Result<(ModelParameters, Vec<RoundRecord>)> {
    let federation = Federation::new(topology, cfg, master_seed, data)?;
    let init = ModelParameters::init(dims, init_seed(master_seed))?;
    let (mut models, history) = federation.run(init, cfg.rounds, exec)?;
    Ok((models.pop().expect("at least the initial model"), history))
}
