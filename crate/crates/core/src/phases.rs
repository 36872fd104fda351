//! The six-phase lifecycle as a typestate machine.
//!
//! Each phase is a distinct type and the only way to reach the next phase
//! is the consuming method on the current one, so phases can neither be
//! skipped nor reordered. Reaching the collaborative phase requires
//! an anomaly-identification phase first:
//!
//! ```compile_fail
//! use hfl_core::phases::{Analytic, Simulation};
//! use hfl_core::Sequential;
//! fn skip(sim: Simulation<Analytic>) {
//!     let _ = sim.collaborate(&Sequential);
//! }
//! ```

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::exec::Executor;
use crate::federation::{init_seed, ClientUpdate, Federation, RoundRecord};
use crate::metrics::{Confusion, Metrics};
use crate::model::{predict, ModelParameters};
use crate::pipeline::{make_sequences, NormStats, SequenceSet};
use crate::report::{emit_reports, AnomalyReport, EventSummary, VehiclePredictions};
use crate::scenario::{FederationTopology, ScenarioConfig};
use crate::seed::derive_stream_seed;
use crate::telemetry::{generate_context, generate_vehicle, ContextStream, Episode, TelemetryStream};
use crate::twin::TwinState;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Initial,
    Functional,
    Analytic,
    IdentifyingAnomaly,
    Collaborative,
    ReportingAndDecision,
}

impl Phase {
    pub const ORDER: [Phase; 6] = [
        Phase::Initial,
        Phase::Functional,
        Phase::Analytic,
        Phase::IdentifyingAnomaly,
        Phase::Collaborative,
        Phase::ReportingAndDecision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Initial => "initial",
            Phase::Functional => "functional",
            Phase::Analytic => "analytic",
            Phase::IdentifyingAnomaly => "identifying_anomaly",
            Phase::Collaborative => "collaborative",
            Phase::ReportingAndDecision => "reporting_and_decision",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn in_phase<T>(phase: Phase, result: Result<T>) -> Result<T> {
    result.map_err(|source| Error::InPhase {
        phase,
        source: Box::new(source),
    })
}

/// A run in lifecycle state `S`.
#[derive(Debug)]
pub struct Simulation<S> {
    config: ScenarioConfig,
    topology: FederationTopology,
    trace: Vec<Phase>,
    state: S,
}

impl<S> Simulation<S> {
    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn topology(&self) -> &FederationTopology {
        &self.topology
    }

    /// Phases entered so far, in order.
    pub fn trace(&self) -> &[Phase] {
        &self.trace
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    fn advance<N>(mut self, phase: Phase, state: N) -> Simulation<N> {
        self.trace.push(phase);
        Simulation {
            config: self.config,
            topology: self.topology,
            trace: self.trace,
            state,
        }
    }
}

#[derive(Debug)]
pub struct Initial;

/// Vehicle telemetry with its planned anomalies.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleData {
    pub region_id: String,
    pub stream: TelemetryStream,
    pub episodes: Vec<Episode>,
}

#[derive(Debug)]
pub struct Functional {
    pub vehicles: BTreeMap<String, VehicleData>,
    pub contexts: BTreeMap<String, ContextStream>,
}

#[derive(Debug)]
pub struct Analytic {
    pub twins: BTreeMap<String, TwinState>,
    pub episodes: BTreeMap<String, Vec<Episode>>,
}

/// Normalized training and held-out windows for one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub region_id: String,
    pub train: SequenceSet,
    pub test: SequenceSet,
    pub norm: NormStats,
    /// Time step of the last row of test window 0.
    pub test_first_t: u64,
    pub episodes: Vec<Episode>,
}

#[derive(Debug)]
pub struct IdentifyingAnomaly {
    pub clients: BTreeMap<String, ClientData>,
    pub global: ModelParameters,
    /// Round-0 local models; `None` when no rounds are configured.
    pub first_round: Option<Vec<ClientUpdate>>,
}

#[derive(Debug)]
pub struct Collaborative {
    pub clients: BTreeMap<String, ClientData>,
    /// Global model after each round; index 0 is the initial model.
    pub models: Vec<ModelParameters>,
    pub history: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scope {
    Global,
    Region(String),
    Vehicle(String),
}

impl Scope {
    pub fn kind(&self) -> &'static str {
        match self {
            Scope::Global => "global",
            Scope::Region(_) => "region",
            Scope::Vehicle(_) => "vehicle",
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Scope::Global => "all",
            Scope::Region(id) | Scope::Vehicle(id) => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScopedMetrics {
    /// Completed rounds when the model was evaluated.
    pub round: usize,
    pub scope: Scope,
    pub metrics: Metrics,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: Vec<Phase>,
    pub config: ScenarioConfig,
    pub topology: FederationTopology,
    pub model: ModelParameters,
    pub norm_stats: BTreeMap<String, NormStats>,
    pub history: Vec<RoundRecord>,
    /// Per completed-round count: global, then regions, then vehicles.
    pub metrics: Vec<ScopedMetrics>,
    pub reports: Vec<AnomalyReport>,
    pub events: EventSummary,
}

impl RunOutcome {
    pub fn final_global(&self) -> &Metrics {
        let last = self.history.len();
        &self
            .metrics
            .iter()
            .find(|m| m.round == last && m.scope == Scope::Global)
            .expect("global metrics are recorded for every round")
            .metrics
    }
}

impl Simulation<Initial> {
    /// Validates the scenario and lays out the federation.
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        in_phase(Phase::Initial, config.validate())?;
        let topology = in_phase(Phase::Initial, FederationTopology::build(&config))?;
        Ok(Simulation {
            config,
            topology,
            trace: alloc::vec![Phase::Initial],
            state: Initial,
        })
    }

    /// Generates vehicle telemetry, then regional context.
    pub fn functional(self) -> Result<Simulation<Functional>> {
        let cfg = &self.config;
        let steps = cfg.telemetry.steps;
        let mut vehicles = BTreeMap::new();
        for p in self.topology.placements() {
            let region = cfg.region(p.region).expect("topology regions come from the config");
            let seed = derive_stream_seed(cfg.master_seed, format!("telemetry/{}", p.vehicle).as_bytes());
            let (stream, episodes) = in_phase(
                Phase::Functional,
                generate_vehicle(
                    &cfg.telemetry.features,
                    &cfg.telemetry.anomalies,
                    region.context.speed_limit_kmh,
                    p.vehicle,
                    steps,
                    seed,
                ),
            )?;
            vehicles.insert(
                String::from(p.vehicle),
                VehicleData {
                    region_id: String::from(p.region),
                    stream,
                    episodes,
                },
            );
        }
        let mut contexts = BTreeMap::new();
        for region in &self.topology.regions {
            let spec = &cfg.region(&region.id).expect("topology regions come from the config").context;
            let seed = derive_stream_seed(cfg.master_seed, format!("context/{}", region.id).as_bytes());
            let stream = generate_context(
                spec,
                &cfg.telemetry.policy_flags,
                cfg.telemetry.intersections,
                &region.id,
                steps,
                seed,
            );
            contexts.insert(region.id.clone(), stream);
        }
        Ok(self.advance(Phase::Functional, Functional { vehicles, contexts }))
    }
}

impl Simulation<Functional> {
    /// Creates a twin per vehicle on its region's cloudlet and syncs it
    /// through the last generated step.
    pub fn analytic(self) -> Result<Simulation<Analytic>> {
        let steps = self.config.telemetry.steps;
        let flags = &self.config.telemetry.policy_flags;
        let mut twins = BTreeMap::new();
        let mut episodes = BTreeMap::new();
        for (id, vehicle) in &self.state.vehicles {
            let mut twin = TwinState::new(id, &vehicle.region_id, flags);
            if steps > 0 {
                let now = (steps - 1) as u64;
                let context = &self.state.contexts[&vehicle.region_id];
                in_phase(Phase::Analytic, twin.sync(&vehicle.stream, context, now))?;
                if twin.staleness(now) != 0 {
                    return Err(Error::InPhase {
                        phase: Phase::Analytic,
                        source: Box::new(Error::validation("twin", format!("twin of `{id}` is stale"))),
                    });
                }
            }
            twins.insert(id.clone(), twin);
            episodes.insert(id.clone(), vehicle.episodes.clone());
        }
        Ok(self.advance(Phase::Analytic, Analytic { twins, episodes }))
    }
}

impl Simulation<Analytic> {
    /// Snapshots every twin and builds normalized train/test windows. The
    /// last `test_fraction` of each stream is held out; normalization is
    /// fitted on the training rows only unless `norms` supplies stats.
    pub fn datasets(&self, norms: Option<&BTreeMap<String, NormStats>>) -> Result<BTreeMap<String, ClientData>> {
        let window = self.config.training.window;
        let test_fraction = self.config.evaluation.test_fraction;
        let mut clients = BTreeMap::new();
        for (id, twin) in &self.state.twins {
            let len = twin.mirrored_len();
            let test_rows = (libm::round(test_fraction * len as f64) as usize).min(len);
            let train_rows = len - test_rows;
            let width = self.config.model_dims().input_size;
            let empty = || SequenceSet::new(window, width, Vec::new(), Vec::new());

            let train_snapshot = if train_rows > 0 { Some(twin.snapshot(0, train_rows)?) } else { None };
            let norm = match (norms.and_then(|n| n.get(id)), &train_snapshot) {
                (Some(stats), _) => stats.clone(),
                (None, Some(snap)) => NormStats::fit(&snap.rows)?,
                (None, None) => NormStats {
                    min: alloc::vec![0.0; width],
                    max: alloc::vec![1.0; width],
                },
            };
            let train = match &train_snapshot {
                Some(snap) => make_sequences(&norm.apply(&snap.rows)?, &snap.labels, window, 1)?,
                None => empty()?,
            };
            let test = if test_rows > 0 {
                let snap = twin.snapshot(train_rows, len)?;
                make_sequences(&norm.apply(&snap.rows)?, &snap.labels, window, 1)?
            } else {
                empty()?
            };
            clients.insert(
                id.clone(),
                ClientData {
                    region_id: twin.region_id.clone(),
                    train,
                    test,
                    norm,
                    test_first_t: (train_rows + window - 1) as u64,
                    episodes: self.state.episodes[id].clone(),
                },
            );
        }
        Ok(clients)
    }

    /// Builds the per-vehicle datasets, initializes the shared model and,
    /// when rounds are configured, trains the first round of local models.
    pub fn identify_anomalies<E: Executor>(self, exec: &E) -> Result<Simulation<IdentifyingAnomaly>> {
        let phase = Phase::IdentifyingAnomaly;
        let clients = in_phase(phase, self.datasets(None))?;
        let dims = self.config.model_dims();
        let global = in_phase(phase, ModelParameters::init(dims, init_seed(self.config.master_seed)))?;
        let first_round = if self.config.training.rounds > 0 {
            let train = training_sets(&clients);
            let fed = in_phase(
                phase,
                Federation::new(&self.topology, &self.config.training, self.config.master_seed, &train),
            )?;
            Some(in_phase(phase, fed.train_clients(&global, 0, &fed.vehicles(), exec))?)
        } else {
            None
        };
        Ok(self.advance(
            phase,
            IdentifyingAnomaly {
                clients,
                global,
                first_round,
            },
        ))
    }
}

fn training_sets(clients: &BTreeMap<String, ClientData>) -> BTreeMap<String, SequenceSet> {
    clients.iter().map(|(id, c)| (id.clone(), c.train.clone())).collect()
}

impl Simulation<IdentifyingAnomaly> {
    /// Aggregates round 0 and runs the remaining rounds.
    pub fn collaborate<E: Executor>(self, exec: &E) -> Result<Simulation<Collaborative>> {
        let phase = Phase::Collaborative;
        let IdentifyingAnomaly {
            clients,
            global,
            first_round,
        } = self.state;
        let train = training_sets(&clients);
        let rounds = self.config.training.rounds;
        let mut models = alloc::vec![global];
        let mut history = Vec::with_capacity(rounds);
        {
            let fed = in_phase(
                phase,
                Federation::new(&self.topology, &self.config.training, self.config.master_seed, &train),
            )?;
            if let Some(updates) = first_round {
                let (next, record) = in_phase(phase, fed.complete_round(&models[0], 0, &updates))?;
                models.push(next);
                history.push(record);
            }
            for q in history.len()..rounds {
                let current = models.last().expect("models starts non-empty");
                let (next, record) = in_phase(phase, fed.round(current, q, exec))?;
                models.push(next);
                history.push(record);
            }
        }
        let state = Collaborative {
            clients,
            models,
            history,
        };
        let mut trace = self.trace;
        trace.push(phase);
        Ok(Simulation {
            config: self.config,
            topology: self.topology,
            trace,
            state,
        })
    }
}

/// Scores `model` on every vehicle's held-out windows: global, per region
/// and per vehicle, in canonical order.
pub fn evaluate_scopes(
    model: &ModelParameters,
    topology: &FederationTopology,
    clients: &BTreeMap<String, ClientData>,
    threshold: f64,
    round: usize,
) -> Result<Vec<ScopedMetrics>> {
    let mut per_vehicle = Vec::new();
    let mut per_region: Vec<(String, Confusion)> = Vec::new();
    let mut global = Confusion::default();
    for region in &topology.regions {
        let mut regional = Confusion::default();
        let mut vehicles: Vec<&str> = region.vehicles().collect();
        vehicles.sort();
        for vehicle in vehicles {
            let data = &clients[vehicle];
            let probs = predict(model, &data.test)?;
            let labels: Vec<u8> = probs.iter().map(|&p| (p >= threshold) as u8).collect();
            let c = Confusion::from_labels(&labels, data.test.targets());
            regional = regional.merge(c);
            per_vehicle.push((String::from(vehicle), c));
        }
        global = global.merge(regional);
        per_region.push((region.id.clone(), regional));
    }
    let mut out = alloc::vec![ScopedMetrics {
        round,
        scope: Scope::Global,
        metrics: global.metrics(),
    }];
    out.extend(per_region.into_iter().map(|(id, c)| ScopedMetrics {
        round,
        scope: Scope::Region(id),
        metrics: c.metrics(),
    }));
    out.extend(per_vehicle.into_iter().map(|(id, c)| ScopedMetrics {
        round,
        scope: Scope::Vehicle(id),
        metrics: c.metrics(),
    }));
    Ok(out)
}

impl Simulation<Collaborative> {
    /// Evaluates every round's global model on the held-out split and
    /// reports the final model's detections to stakeholders.
    pub fn report(mut self) -> Result<RunOutcome> {
        let phase = Phase::ReportingAndDecision;
        self.trace.push(phase);
        let threshold = self.config.evaluation.threshold;
        let Collaborative {
            clients,
            mut models,
            history,
        } = self.state;

        let mut metrics = Vec::new();
        for (round, model) in models.iter().enumerate() {
            metrics.extend(in_phase(
                phase,
                evaluate_scopes(model, &self.topology, &clients, threshold, round),
            )?);
        }
        let model = models.pop().expect("models starts non-empty");

        let mut predictions = Vec::new();
        let mut events = EventSummary::default();
        for p in self.topology.placements() {
            let data = &clients[p.vehicle];
            let vehicle = VehiclePredictions {
                vehicle_id: String::from(p.vehicle),
                first_t: data.test_first_t,
                probabilities: in_phase(phase, predict(&model, &data.test))?,
            };
            events.record(&data.episodes, &vehicle, threshold);
            predictions.push(vehicle);
        }
        let reports = emit_reports(&predictions, threshold);
        let norm_stats = clients.iter().map(|(id, c)| (id.clone(), c.norm.clone())).collect();
        Ok(RunOutcome {
            trace: self.trace,
            config: self.config,
            topology: self.topology,
            model,
            norm_stats,
            history,
            metrics,
            reports,
            events,
        })
    }
}

/// Runs all six phases in order.
pub fn run_phases<E: Executor>(config: ScenarioConfig, exec: &E) -> Result<RunOutcome> {
    Simulation::new(config)?
        .functional()?
        .analytic()?
        .identify_anomalies(exec)?
        .collaborate(exec)?
        .report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::scenario::fixtures::usecase;

    fn small() -> ScenarioConfig {
        let mut cfg = usecase();
        cfg.telemetry.steps = 200;
        cfg.telemetry.anomalies.episode_length = 5;
        cfg.training.rounds = 2;
        cfg
    }

    #[test]
    fn trace_follows_the_six_phases() {
        let out = run_phases(small(), &Sequential).unwrap();
        assert_eq!(out.trace, Phase::ORDER);
        assert_eq!(out.history.len(), 2);
        // 3 rounds of models x (global + 1 region + 3 vehicles)
        assert_eq!(out.metrics.len(), 3 * 5);
    }

    #[test]
    fn zero_rounds_evaluates_initial_model() {
        let mut cfg = small();
        cfg.training.rounds = 0;
        let sim = Simulation::new(cfg).unwrap().functional().unwrap().analytic().unwrap();
        let ident = sim.identify_anomalies(&Sequential).unwrap();
        assert!(ident.state().first_round.is_none());
        let init = ident.state().global.clone();
        let out = ident.collaborate(&Sequential).unwrap().report().unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.model, init);
        assert_eq!(out.trace, Phase::ORDER);
        assert!(out.metrics.iter().all(|m| m.round == 0));
    }

    #[test]
    fn staged_first_round_matches_plain_run() {
        let cfg = small();
        let out = run_phases(cfg.clone(), &Sequential).unwrap();
        let analytic = Simulation::new(cfg.clone()).unwrap().functional().unwrap().analytic().unwrap();
        let clients = analytic.datasets(None).unwrap();
        let train = training_sets(&clients);
        let (model, history) = crate::federation::run_hfl(
            analytic.topology(),
            &cfg.training,
            cfg.master_seed,
            &train,
            cfg.model_dims(),
            &Sequential,
        )
        .unwrap();
        assert_eq!(model, out.model);
        assert_eq!(history, out.history);
    }

    #[test]
    fn invalid_config_fails_in_initial_phase() {
        let mut cfg = small();
        cfg.regions.clear();
        match Simulation::new(cfg).unwrap_err() {
            Error::InPhase { phase, .. } => assert_eq!(phase, Phase::Initial),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn test_split_is_temporal_and_normalization_uses_training_rows() {
        let cfg = small();
        let analytic = Simulation::new(cfg.clone()).unwrap().functional().unwrap().analytic().unwrap();
        let clients = analytic.datasets(None).unwrap();
        let c = &clients["SV-1"];
        // 200 steps, 40 held out, window 4
        assert_eq!(c.train.len(), 160 - 3);
        assert_eq!(c.test.len(), 40 - 3);
        assert_eq!(c.test_first_t, 163);
        let twin = &analytic.state().twins["SV-1"];
        let train_rows = twin.snapshot(0, 160).unwrap();
        assert_eq!(c.norm, NormStats::fit(&train_rows.rows).unwrap());
    }

    #[test]
    fn reports_match_detected_runs() {
        let out = run_phases(small(), &Sequential).unwrap();
        for r in &out.reports {
            assert!(r.first_window <= r.last_window);
            assert!(r.peak_probability >= out.config.evaluation.threshold);
        }
    }
}
