//! Stakeholder anomaly reports and episode-level detection summaries.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::telemetry::{AnomalyKind, Episode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stakeholder {
    User,
    Vendor,
    Device,
}

impl Stakeholder {
    pub const ALL: [Stakeholder; 3] = [Stakeholder::User, Stakeholder::Vendor, Stakeholder::Device];

    pub fn as_str(self) -> &'static str {
        match self {
            Stakeholder::User => "user",
            Stakeholder::Vendor => "vendor",
            Stakeholder::Device => "device",
        }
    }
}

/// Recommended follow-up, picked from the peak probability of a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Peak ≥ 0.95: pattern strong enough to suggest tampering or a fault
    /// the vendor must investigate.
    VendorInvestigation,
    /// Peak ≥ 0.75: warn the driver.
    AlertUser,
    /// Otherwise: run on-board diagnostics and keep monitoring.
    DeviceDiagnostics,
}

impl Action {
    pub fn for_probability(peak: f64) -> Action {
        if peak >= 0.95 {
            Action::VendorInvestigation
        } else if peak >= 0.75 {
            Action::AlertUser
        } else {
            Action::DeviceDiagnostics
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::VendorInvestigation => "vendor_investigation",
            Action::AlertUser => "alert_user",
            Action::DeviceDiagnostics => "device_diagnostics",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One maximal run of consecutive windows classified anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    pub vehicle_id: String,
    /// Window indices `[first, last]` within the vehicle's test set.
    pub first_window: usize,
    pub last_window: usize,
    /// Time steps of the first and last detected windows' final rows.
    pub start_t: u64,
    pub end_t: u64,
    pub peak_probability: f64,
    pub stakeholders: [Stakeholder; 3],
    pub action: Action,
}

/// Window probabilities for one vehicle, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct VehiclePredictions {
    pub vehicle_id: String,
    /// Time step of the last row of window 0.
    pub first_t: u64,
    pub probabilities: Vec<f64>,
}

/// Merges consecutive detections (probability ≥ `threshold`) into one report
/// each and addresses every report to all stakeholders.
pub fn emit_reports(predictions: &[VehiclePredictions], threshold: f64) -> Vec<AnomalyReport> {
    let mut reports = Vec::new();
    for vehicle in predictions {
        let mut run: Option<(usize, f64)> = None;
        let probs = &vehicle.probabilities;
        for i in 0..=probs.len() {
            let hit = probs.get(i).is_some_and(|&p| p >= threshold);
            match (hit, run) {
                (true, None) => run = Some((i, probs[i])),
                (true, Some((start, peak))) => run = Some((start, peak.max(probs[i]))),
                (false, Some((start, peak))) => {
                    reports.push(AnomalyReport {
                        vehicle_id: vehicle.vehicle_id.clone(),
                        first_window: start,
                        last_window: i - 1,
                        start_t: vehicle.first_t + start as u64,
                        end_t: vehicle.first_t + (i - 1) as u64,
                        peak_probability: peak,
                        stakeholders: Stakeholder::ALL,
                        action: Action::for_probability(peak),
                    });
                    run = None;
                }
                (false, None) => {}
            }
        }
    }
    reports
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EventCount {
    pub episodes: usize,
    pub detected: usize,
}

impl EventCount {
    pub fn recall(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.detected as f64 / self.episodes as f64
        }
    }
}

/// Episode-level view: an injected episode counts as detected when any
/// window ending inside it is flagged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventSummary {
    pub by_kind: BTreeMap<AnomalyKind, EventCount>,
    /// Maximal detected runs that end on no anomalous step.
    pub false_alarms: usize,
}

impl EventSummary {
    pub fn total(&self) -> EventCount {
        self.by_kind.values().fold(EventCount::default(), |acc, c| EventCount {
            episodes: acc.episodes + c.episodes,
            detected: acc.detected + c.detected,
        })
    }

    /// Adds one vehicle's test-range episodes and detections.
    pub fn record(&mut self, episodes: &[Episode], vehicle: &VehiclePredictions, threshold: f64) {
        let first = vehicle.first_t as usize;
        let last = first + vehicle.probabilities.len();
        let flagged = |t: usize| t >= first && t < last && vehicle.probabilities[t - first] >= threshold;
        for ep in episodes.iter().filter(|e| e.start >= first && e.end <= last) {
            let count = self.by_kind.entry(ep.kind).or_default();
            count.episodes += 1;
            if (ep.start..ep.end).any(flagged) {
                count.detected += 1;
            }
        }
        let in_episode = |t: usize| episodes.iter().any(|e| (e.start..e.end).contains(&t));
        for report in emit_reports(core::slice::from_ref(vehicle), threshold) {
            if !(report.start_t..=report.end_t).any(|t| in_episode(t as usize)) {
                self.false_alarms += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn vehicle(probabilities: Vec<f64>) -> VehiclePredictions {
        VehiclePredictions {
            vehicle_id: String::from("SV-1"),
            first_t: 100,
            probabilities,
        }
    }

    #[test]
    fn no_detections_no_reports() {
        assert!(emit_reports(&[vehicle(vec![0.1; 10])], 0.5).is_empty());
    }

    #[test]
    fn contiguous_windows_merge() {
        let mut p = vec![0.0; 15];
        for i in [5, 6, 7, 12] {
            p[i] = 0.9;
        }
        p[6] = 0.97;
        let reports = emit_reports(&[vehicle(p)], 0.5);
        assert_eq!(reports.len(), 2);
        assert_eq!((reports[0].first_window, reports[0].last_window), (5, 7));
        assert_eq!((reports[0].start_t, reports[0].end_t), (105, 107));
        assert_eq!(reports[0].action, Action::VendorInvestigation);
        assert_eq!(reports[1].action, Action::AlertUser);
        for r in &reports {
            assert_eq!(r.stakeholders, [Stakeholder::User, Stakeholder::Vendor, Stakeholder::Device]);
        }
    }

    #[test]
    fn run_at_end_is_closed() {
        let reports = emit_reports(&[vehicle(vec![0.0, 0.6, 0.6])], 0.5);
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].last_window, 2);
        assert_eq!(reports[0].action, Action::DeviceDiagnostics);
    }

    #[test]
    fn events_count_detected_episodes() {
        let episodes = [
            Episode { kind: AnomalyKind::Collision, start: 102, end: 105 },
            Episode { kind: AnomalyKind::Congestion, start: 108, end: 110 },
            Episode { kind: AnomalyKind::Collision, start: 10, end: 20 },
        ];
        let mut p = vec![0.0; 12];
        p[3] = 0.9; // t = 103
        p[11] = 0.9; // t = 111, a false alarm
        let mut summary = EventSummary::default();
        summary.record(&episodes, &vehicle(p), 0.5);
        assert_eq!(summary.by_kind[&AnomalyKind::Collision], EventCount { episodes: 1, detected: 1 });
        assert_eq!(summary.by_kind[&AnomalyKind::Congestion], EventCount { episodes: 1, detected: 0 });
        assert_eq!(summary.total().recall(), 0.5);
        assert_eq!(summary.false_alarms, 1);
    }
}
