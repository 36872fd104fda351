//! Cloudlet-hosted digital twins.
//!
//! A twin mirrors the prefix of its vehicle's telemetry and its region's
//! context that has been synchronized so far. Training data is only ever
//! materialized from twin state.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::pipeline::NumericMatrix;
use crate::scenario::LIGHT_STATES;
use crate::telemetry::{ContextRecord, ContextStream, TelemetryRecord, TelemetryStream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TwinState {
    pub vehicle_id: String,
    pub region_id: String,
    /// `None` until the first sync.
    pub last_sync_t: Option<u64>,
    feature_names: Vec<String>,
    policy_names: Vec<String>,
    telemetry: Vec<TelemetryRecord>,
    context: Vec<ContextRecord>,
}

/// Fused features and binary labels for one vehicle over a time range.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    pub vehicle_id: String,
    /// Time step of the first row.
    pub start_t: u64,
    pub rows: NumericMatrix,
    pub labels: Vec<u8>,
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl TwinState {
    pub fn new(vehicle_id: &str, region_id: &str, policy_names: &[String]) -> Self {
        TwinState {
            vehicle_id: String::from(vehicle_id),
            region_id: String::from(region_id),
            last_sync_t: None,
            feature_names: Vec::new(),
            policy_names: policy_names.to_vec(),
            telemetry: Vec::new(),
            context: Vec::new(),
        }
    }

    pub fn mirrored_telemetry(&self) -> &[TelemetryRecord] {
        &self.telemetry
    }

    pub fn mirrored_context(&self) -> &[ContextRecord] {
        &self.context
    }

    /// Records available for snapshots (both streams mirrored).
    pub fn mirrored_len(&self) -> usize {
        self.telemetry.len().min(self.context.len())
    }

    /// Pulls every record with `t <= now` from both source streams.
    pub fn sync(&mut self, telemetry: &TelemetryStream, context: &ContextStream, now: u64) -> Result<()> {
        if let Some(last) = self.last_sync_t {
            if now < last {
                return Err(Error::Monotonicity {
                    last_sync: last,
                    requested: now,
                });
            }
        }
        if telemetry.vehicle_id != self.vehicle_id {
            return Err(Error::validation(
                "twin.vehicle_id",
                format!("twin of `{}` fed stream of `{}`", self.vehicle_id, telemetry.vehicle_id),
            ));
        }
        if context.region_id != self.region_id {
            return Err(Error::validation(
                "twin.region_id",
                format!("twin in `{}` fed context of `{}`", self.region_id, context.region_id),
            ));
        }
        let upto = usize::try_from(now).unwrap_or(usize::MAX).saturating_add(1);
        let tel_end = upto.min(telemetry.len());
        if self.telemetry.len() < tel_end {
            self.telemetry.extend_from_slice(&telemetry.records[self.telemetry.len()..tel_end]);
        }
        let ctx_end = upto.min(context.len());
        if self.context.len() < ctx_end {
            self.context.extend_from_slice(&context.records[self.context.len()..ctx_end]);
        }
        if self.feature_names.is_empty() {
            self.feature_names = telemetry.feature_names().map(String::from).collect();
        }
        self.last_sync_t = Some(now);
        Ok(())
    }

    /// Steps elapsed since the last sync. An unsynced twin has seen nothing,
    /// so it lags by `now + 1` steps.
    pub fn staleness(&self, now: u64) -> u64 {
        match self.last_sync_t {
            Some(last) => now.saturating_sub(last),
            None => now.saturating_add(1),
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = self.feature_names.clone();
        names.push(String::from("temperature_c"));
        names.push(String::from("precipitation"));
        let lights = self.context.first().map_or(0, |c| c.lights.len());
        for i in 0..lights {
            for state in ["green", "amber", "red"] {
                names.push(format!("light{i}_{state}"));
            }
        }
        for flag in &self.policy_names {
            names.push(format!("policy_{flag}"));
        }
        names
    }

    /// Fuses telemetry with encoded context over `[start, end)`: weather
    /// as-is, each light one-hot, each policy flag as 0/1.
    pub fn snapshot(&self, start: usize, end: usize) -> Result<LocalDataset> {
        if start >= end {
            return Err(Error::Range {
                start,
                end,
                len: self.mirrored_len(),
            });
        }
        if end > self.mirrored_len() {
            return Err(Error::Staleness {
                requested_end: end,
                mirrored: self.mirrored_len(),
            });
        }
        let names = self.column_names();
        let width = names.len();
        let mut data = Vec::with_capacity((end - start) * width);
        let mut labels = Vec::with_capacity(end - start);
        for (tel, ctx) in self.telemetry[start..end].iter().zip(&self.context[start..end]) {
            data.extend_from_slice(&tel.features);
            data.extend_from_slice(&ctx.weather);
            for light in &ctx.lights {
                let mut group = [0.0; LIGHT_STATES];
                group[light.index()] = 1.0;
                data.extend_from_slice(&group);
            }
            data.extend(ctx.policy_flags.iter().map(|&on| if on { 1.0 } else { 0.0 }));
            labels.push(tel.label.target());
        }
        Ok(LocalDataset {
            vehicle_id: self.vehicle_id.clone(),
            start_t: start as u64,
            rows: NumericMatrix::new(end - start, width, data, names)?,
            labels,
        })
    }
}
