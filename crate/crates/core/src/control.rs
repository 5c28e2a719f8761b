//! The control layer: per-node drop sensing, EWMA aggregation at the
//! controllers, the proportional replication-degree update, and directive
//! application at every node.
//!
//! Read as a feedback loop, the reference signal is "no congestion", the
//! process output is the aggregated drop count reported by the sensors, and
//! the manipulated variable is the replication degree (RD) applied to newly
//! created messages. The error term is never computed numerically; the
//! controller only compares the aggregated congestion against a drop
//! threshold and picks the increase or decrease branch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Copies, DirectivePayload, DirectiveStamp, Message, MessageId, MetricPayload, NodeId, SimTime,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("alpha must lie in (0, 1], got {0}")]
    Alpha(f64),
    #[error("k must lie in (0, 1], got {0}")]
    Gain(f64),
    #[error("{0}")]
    Invalid(String),
}

/// EWMA weight given to the newest reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(alpha: f64) -> Result<Alpha, ControlError> {
        if alpha > 0.0 && alpha <= 1.0 {
            Ok(Alpha(alpha))
        } else {
            Err(ControlError::Alpha(alpha))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Alpha {
    type Error = ControlError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Alpha::new(v)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// `(1 - alpha) * acc + alpha * reading`; an empty accumulator takes the
/// reading as is.
pub fn ewma(acc: Option<f64>, reading: f64, alpha: Alpha) -> f64 {
    match acc {
        None => reading,
        Some(acc) => (1.0 - alpha.0) * acc + alpha.0 * reading,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub enum UpdateMode {
    /// Multiplicative: decrease to `rd * k`, increase to `rd + rd * k`.
    #[default]
    Algorithm,
    /// Additive: `rd -/+ k * congestion`.
    Equation,
}

/// Tunables of the control layer. Defaults are the reference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    /// Sensor window, seconds.
    pub metric_interval: f64,
    /// Controller window, seconds.
    pub directive_interval: f64,
    pub alpha: Alpha,
    pub k: f64,
    /// Congestion threshold, drops.
    pub threshold: f64,
    pub rd_default: f64,
    pub rd_max: f64,
    pub metric_size: u64,
    pub directive_size: u64,
    pub update_mode: UpdateMode,
    /// Whether metric/directive drops feed the sensor as well.
    pub count_control_drops: bool,
    /// Synthetic drops added to every sensor reading. Zero outside experiments.
    pub injected_drops: u64,
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlParams {
            metric_interval: 60.0,
            directive_interval: 90.0,
            alpha: Alpha(0.8),
            k: 0.2,
            threshold: 10.0,
            rd_default: 10.0,
            rd_max: 64.0,
            metric_size: 21,
            directive_size: 5,
            update_mode: UpdateMode::Algorithm,
            count_control_drops: false,
            injected_drops: 0,
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        Alpha::new(self.alpha.0)?;
        if !(self.k > 0.0 && self.k <= 1.0) {
            return Err(ControlError::Gain(self.k));
        }
        let invalid = |s: &str| Err(ControlError::Invalid(s.to_string()));
        if !(self.metric_interval.is_finite() && self.metric_interval > 0.0) {
            return invalid("metric_interval must be > 0");
        }
        if !(self.directive_interval.is_finite() && self.directive_interval > 0.0) {
            return invalid("directive_interval must be > 0");
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return invalid("threshold must be >= 0");
        }
        if !(self.rd_default.is_finite() && self.rd_default >= 1.0) {
            return invalid("rd_default must be >= 1");
        }
        if !(self.rd_max.is_finite() && self.rd_max >= self.rd_default) {
            return invalid("rd_max must be >= rd_default");
        }
        if self.metric_size == 0 || self.directive_size == 0 {
            return invalid("control message sizes must be > 0");
        }
        Ok(())
    }
}

/// Drop counter of one node for the current sensing window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorState {
    pub drop_count: u64,
    pub window_s: f64,
}

impl SensorState {
    pub fn new(window_s: f64) -> SensorState {
        SensorState {
            drop_count: 0,
            window_s,
        }
    }

    pub fn record_drop(&mut self) {
        self.drop_count += 1;
    }

    /// Closes the window: builds the metric for it and resets the counter.
    /// The metric expires after two windows.
    pub fn close_window(
        &mut self,
        sensor: NodeId,
        now: SimTime,
        current_rd: f64,
        metric_size: u64,
        id: MessageId,
    ) -> Message {
        let payload = MetricPayload {
            drop_count: self.drop_count,
            window_end: now,
            sensor,
        };
        self.drop_count = 0;
        Message::metric(id, payload, metric_size, now, Copies::from_rd(current_rd))
            .with_ttl(Some(2.0 * self.window_s))
    }
}

/// State of one controller across its windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub rd_current: f64,
    pub rd_default: f64,
    pub k: f64,
    pub alpha: Alpha,
    pub threshold: f64,
    pub rd_max: f64,
    pub window_s: f64,
    /// Congestion aggregated over the open window; empty at window start.
    pub congestion: Option<f64>,
    /// RD announced by other controllers during the open window.
    pub rd_from_other_ctrls_avg: Option<f64>,
    pub update_mode: UpdateMode,
}

impl ControllerState {
    pub fn new(params: &ControlParams) -> ControllerState {
        ControllerState {
            rd_current: params.rd_default,
            rd_default: params.rd_default,
            k: params.k,
            alpha: params.alpha,
            threshold: params.threshold,
            rd_max: params.rd_max,
            window_s: params.directive_interval,
            congestion: None,
            rd_from_other_ctrls_avg: None,
            update_mode: params.update_mode,
        }
    }

    pub fn on_metric(&mut self, drop_count: f64) {
        self.congestion = Some(ewma(self.congestion, drop_count, self.alpha));
    }

    pub fn on_peer_directive(&mut self, rd: f64) {
        self.rd_from_other_ctrls_avg = Some(ewma(self.rd_from_other_ctrls_avg, rd, self.alpha));
    }

    /// Next replication degree for the given congestion, clamped to
    /// `[1, rd_max]`.
    pub fn rd_update(&self, congestion: f64) -> f64 {
        let rd = self.rd_current;
        let congested = congestion >= self.threshold;
        let next = match (self.update_mode, congested) {
            (UpdateMode::Algorithm, true) => rd * self.k,
            (UpdateMode::Algorithm, false) => rd + rd * self.k,
            (UpdateMode::Equation, true) => rd - self.k * congestion,
            (UpdateMode::Equation, false) => rd + self.k * congestion,
        };
        next.clamp(1.0, self.rd_max)
    }

    /// Ends the window: computes the new RD, folds in what other controllers
    /// announced, resets both accumulators and returns the directive to
    /// broadcast. A window without metrics counts as zero congestion.
    pub fn close_window(
        &mut self,
        controller: NodeId,
        now: SimTime,
        directive_size: u64,
        id: MessageId,
    ) -> Message {
        let congestion = self.congestion.unwrap_or(0.0);
        let mut new_rd = self.rd_update(congestion);
        if let Some(peers) = self.rd_from_other_ctrls_avg {
            new_rd = ewma(Some(new_rd), peers, self.alpha);
        }
        // the peer average is itself >= 1, so the blend stays in range
        new_rd = new_rd.clamp(1.0, self.rd_max);
        self.rd_current = new_rd;
        self.congestion = None;
        self.rd_from_other_ctrls_avg = None;

        let payload = DirectivePayload {
            new_rd,
            issued_at: now,
            controller,
        };
        Message::directive(id, payload, directive_size, now, Copies::from_rd(new_rd))
            .with_ttl(Some(2.0 * self.window_s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectiveOutcome {
    Applied,
    Stale,
}

/// Replication degree a node applies to the messages it creates, plus the
/// freshest directive it has applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationState {
    pub current_rd: f64,
    pub last_applied: Option<DirectiveStamp>,
}

impl ReplicationState {
    pub fn new(rd: f64) -> ReplicationState {
        assert!(rd >= 1.0);
        ReplicationState {
            current_rd: rd,
            last_applied: None,
        }
    }

    pub fn is_fresh(&self, stamp: DirectiveStamp) -> bool {
        self.last_applied.is_none_or(|last| stamp > last)
    }

    /// Applies the directive if it is newer than the last one applied.
    /// Buffered messages keep their budgets; only new messages see the RD.
    pub fn apply_directive(&mut self, d: &DirectivePayload) -> DirectiveOutcome {
        let stamp = d.stamp();
        if !self.is_fresh(stamp) {
            return DirectiveOutcome::Stale;
        }
        self.current_rd = d.new_rd;
        self.last_applied = Some(stamp);
        DirectiveOutcome::Applied
    }
}
