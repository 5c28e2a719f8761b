//! Flat `section.key = value` configuration files.
//!
//! Every knob has a default; a file only lists what it overrides. Unknown
//! keys, repeated keys and out-of-range values are errors that name the key.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::control::{Alpha, UpdateMode};
use crate::engine::{Scenario, SimParams};
use crate::model::{DropPolicy, NodeId};
use crate::routing::StrategyKind;
use crate::trace::ContactTrace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `section.key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Repeated { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {reason}")]
    InvalidValue {
        line: usize,
        key: String,
        reason: String,
    },
}

impl ConfigError {
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Syntax { .. } => None,
            ConfigError::UnknownKey { key, .. }
            | ConfigError::Repeated { key, .. }
            | ConfigError::InvalidValue { key, .. } => Some(key),
        }
    }
}

/// Settings read from a config file; combine with a trace and a seed to get
/// a [`Scenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: SimParams,
    pub strategy: StrategyKind,
    pub controllers: BTreeSet<NodeId>,
    /// Node count override; the trace decides when absent.
    pub nodes: Option<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: SimParams::default(),
            strategy: StrategyKind::Controlled,
            controllers: [NodeId(0)].into(),
            nodes: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "engine.bandwidth",
    "engine.buffer_bytes",
    "engine.drop_policy",
    "engine.nodes",
    "data.size_min",
    "data.size_max",
    "data.interval_min",
    "data.interval_max",
    "data.ttl_s",
    "data.stop_s",
    "routing.strategy",
    "routing.spray_limit",
    "control.metric_interval",
    "control.directive_interval",
    "control.alpha",
    "control.k",
    "control.threshold",
    "control.rd_default",
    "control.rd_max",
    "control.metric_size",
    "control.directive_size",
    "control.update_mode",
    "control.count_control_drops",
    "control.controllers",
    "control.injected_drops",
];

impl RunConfig {
    pub fn scenario(&self, trace: ContactTrace, seed: u64) -> Scenario {
        Scenario {
            node_count: self.nodes.unwrap_or(0).max(trace.node_count),
            trace,
            controllers: self.controllers.clone(),
            strategy: self.strategy,
            params: self.params.clone(),
            seed,
        }
    }

    /// Renders every key with its current value, parseable by
    /// [`parse_config`].
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let c = &p.control;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("engine.bandwidth", p.bandwidth.to_string());
        kv("engine.buffer_bytes", p.buffer_bytes.to_string());
        kv(
            "engine.drop_policy",
            match p.drop_policy {
                DropPolicy::DropOldest => "drop_oldest",
                DropPolicy::DropIncoming => "drop_incoming",
            }
            .into(),
        );
        if let Some(n) = self.nodes {
            kv("engine.nodes", n.to_string());
        }
        kv("data.size_min", p.data_size.0.to_string());
        kv("data.size_max", p.data_size.1.to_string());
        kv("data.interval_min", p.data_interval.0.to_string());
        kv("data.interval_max", p.data_interval.1.to_string());
        if let Some(ttl) = p.data_ttl {
            kv("data.ttl_s", ttl.to_string());
        }
        if let Some(stop) = p.data_stop {
            kv("data.stop_s", stop.to_string());
        }
        let (strategy, limit) = match self.strategy {
            StrategyKind::Epidemic => ("epidemic", None),
            StrategyKind::StaticSpray(l) => ("static_spray", Some(l)),
            StrategyKind::Controlled => ("controlled", None),
        };
        kv("routing.strategy", strategy.into());
        if let Some(l) = limit {
            kv("routing.spray_limit", l.to_string());
        }
        kv("control.metric_interval", c.metric_interval.to_string());
        kv(
            "control.directive_interval",
            c.directive_interval.to_string(),
        );
        kv("control.alpha", c.alpha.get().to_string());
        kv("control.k", c.k.to_string());
        kv("control.threshold", c.threshold.to_string());
        kv("control.rd_default", c.rd_default.to_string());
        kv("control.rd_max", c.rd_max.to_string());
        kv("control.metric_size", c.metric_size.to_string());
        kv("control.directive_size", c.directive_size.to_string());
        kv(
            "control.update_mode",
            match c.update_mode {
                UpdateMode::Algorithm => "algorithm",
                UpdateMode::Equation => "equation",
            }
            .into(),
        );
        kv(
            "control.count_control_drops",
            c.count_control_drops.to_string(),
        );
        let ctls: Vec<String> = self.controllers.iter().map(|n| n.to_string()).collect();
        kv("control.controllers", ctls.join(","));
        kv("control.injected_drops", c.injected_drops.to_string());
        out
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen = HashSet::new();
    let mut spray_limit: Option<u32> = None;
    let mut strategy_name: Option<(usize, String)> = None;
    let mut lines_of = std::collections::HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or(ConfigError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if !key.contains('.') || value.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.into(),
            });
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::Repeated {
                line,
                key: key.into(),
            });
        }
        lines_of.insert(key.to_string(), line);

        let bad = |reason: &str| ConfigError::InvalidValue {
            line,
            key: key.into(),
            reason: reason.into(),
        };
        let p = &mut cfg.params;
        let c = &mut p.control;
        match key {
            "engine.bandwidth" => {
                p.bandwidth = positive_f64(value).ok_or_else(|| bad("expected a number > 0"))?
            }
            "engine.buffer_bytes" => {
                p.buffer_bytes =
                    positive_u64(value).ok_or_else(|| bad("expected an integer > 0"))?
            }
            "engine.drop_policy" => {
                p.drop_policy = match value {
                    "drop_oldest" => DropPolicy::DropOldest,
                    "drop_incoming" => DropPolicy::DropIncoming,
                    _ => return Err(bad("expected drop_oldest or drop_incoming")),
                }
            }
            "engine.nodes" => {
                cfg.nodes = Some(value.parse().map_err(|_| bad("expected a node count"))?)
            }
            "data.size_min" => {
                p.data_size.0 = positive_u64(value).ok_or_else(|| bad("expected an integer > 0"))?
            }
            "data.size_max" => {
                p.data_size.1 = positive_u64(value).ok_or_else(|| bad("expected an integer > 0"))?
            }
            "data.interval_min" => {
                p.data_interval.0 =
                    positive_f64(value).ok_or_else(|| bad("expected seconds > 0"))?
            }
            "data.interval_max" => {
                p.data_interval.1 =
                    positive_f64(value).ok_or_else(|| bad("expected seconds > 0"))?
            }
            "data.ttl_s" => {
                p.data_ttl = Some(positive_f64(value).ok_or_else(|| bad("expected seconds > 0"))?)
            }
            "data.stop_s" => {
                p.data_stop = Some(
                    value
                        .parse::<f64>()
                        .ok()
                        .filter(|s| s.is_finite() && *s >= 0.0)
                        .ok_or_else(|| bad("expected seconds >= 0"))?,
                )
            }
            "routing.strategy" => strategy_name = Some((line, value.to_string())),
            "routing.spray_limit" => {
                spray_limit = Some(
                    value
                        .parse::<u32>()
                        .ok()
                        .filter(|&l| l >= 1)
                        .ok_or_else(|| bad("expected an integer >= 1"))?,
                )
            }
            "control.metric_interval" => {
                c.metric_interval =
                    positive_f64(value).ok_or_else(|| bad("expected seconds > 0"))?
            }
            "control.directive_interval" => {
                c.directive_interval =
                    positive_f64(value).ok_or_else(|| bad("expected seconds > 0"))?
            }
            "control.alpha" => {
                let v: f64 = value.parse().map_err(|_| bad("expected a number"))?;
                c.alpha = Alpha::new(v).map_err(|_| bad("must lie in (0, 1]"))?;
            }
            "control.k" => {
                let v: f64 = value.parse().map_err(|_| bad("expected a number"))?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err(bad("must lie in (0, 1]"));
                }
                c.k = v;
            }
            "control.threshold" => {
                let v: f64 = value.parse().map_err(|_| bad("expected a number"))?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(bad("must be >= 0"));
                }
                c.threshold = v;
            }
            "control.rd_default" => {
                c.rd_default = at_least_one(value).ok_or_else(|| bad("must be >= 1"))?
            }
            "control.rd_max" => {
                c.rd_max = at_least_one(value).ok_or_else(|| bad("must be >= 1"))?
            }
            "control.metric_size" => {
                c.metric_size = positive_u64(value).ok_or_else(|| bad("expected an integer > 0"))?
            }
            "control.directive_size" => {
                c.directive_size =
                    positive_u64(value).ok_or_else(|| bad("expected an integer > 0"))?
            }
            "control.update_mode" => {
                c.update_mode = match value {
                    "algorithm" => UpdateMode::Algorithm,
                    "equation" => UpdateMode::Equation,
                    _ => return Err(bad("expected algorithm or equation")),
                }
            }
            "control.count_control_drops" => {
                c.count_control_drops = value.parse().map_err(|_| bad("expected true or false"))?
            }
            "control.controllers" => {
                cfg.controllers = value
                    .split(',')
                    .map(|s| s.trim().parse::<u32>().map(NodeId))
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("expected comma-separated node ids"))?;
            }
            "control.injected_drops" => {
                c.injected_drops = value.parse().map_err(|_| bad("expected an integer >= 0"))?
            }
            _ => unreachable!("key list and match arms agree"),
        }
    }

    cfg.strategy = match strategy_name {
        None => StrategyKind::Controlled,
        Some((line, name)) => match name.as_str() {
            "epidemic" => StrategyKind::Epidemic,
            "static_spray" => StrategyKind::StaticSpray(spray_limit.unwrap_or(10)),
            "controlled" => StrategyKind::Controlled,
            _ => {
                return Err(ConfigError::InvalidValue {
                    line,
                    key: "routing.strategy".into(),
                    reason: "expected epidemic, static_spray or controlled".into(),
                })
            }
        },
    };

    let cross = |key: &str, reason: &str| ConfigError::InvalidValue {
        line: lines_of.get(key).copied().unwrap_or(0),
        key: key.into(),
        reason: reason.into(),
    };
    let p = &cfg.params;
    if p.data_size.0 > p.data_size.1 {
        return Err(cross("data.size_max", "must be >= data.size_min"));
    }
    if p.data_interval.0 > p.data_interval.1 {
        return Err(cross("data.interval_max", "must be >= data.interval_min"));
    }
    if p.control.rd_max < p.control.rd_default {
        return Err(cross("control.rd_max", "must be >= control.rd_default"));
    }
    if cfg.controllers.is_empty() {
        return Err(cross(
            "control.controllers",
            "needs at least one controller",
        ));
    }
    Ok(cfg)
}

fn positive_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite() && *v > 0.0)
}

fn positive_u64(s: &str) -> Option<u64> {
    s.parse::<u64>().ok().filter(|&v| v > 0)
}

fn at_least_one(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let cfg = parse_config("").unwrap();
        let p = &cfg.params;
        assert_eq!(p.buffer_bytes, 31_457_280);
        assert_eq!(p.bandwidth, 104_857_600.0);
        assert_eq!(p.data_size, (600, 1_048_576));
        assert_eq!(p.data_interval, (25.0, 35.0));
        assert_eq!(p.control.metric_interval, 60.0);
        assert_eq!(p.control.directive_interval, 90.0);
        assert_eq!(p.control.alpha.get(), 0.8);
        assert_eq!(p.control.k, 0.2);
        assert_eq!(p.control.metric_size, 21);
        assert_eq!(p.control.directive_size, 5);
        assert_eq!(p.control.threshold, 10.0);
        assert_eq!(p.control.rd_default, 10.0);
        assert_eq!(cfg.controllers, [NodeId(0)].into());
    }

    #[test]
    fn overrides_and_comments() {
        let cfg = parse_config(
            "# experiment\ncontrol.k = 0.5  # stronger\nengine.buffer_bytes = 1000\n\nrouting.strategy = static_spray\nrouting.spray_limit = 4\ncontrol.controllers = 0, 3\n",
        )
        .unwrap();
        assert_eq!(cfg.params.control.k, 0.5);
        assert_eq!(cfg.params.buffer_bytes, 1000);
        assert_eq!(cfg.strategy, StrategyKind::StaticSpray(4));
        assert_eq!(cfg.controllers, [NodeId(0), NodeId(3)].into());
    }

    #[test]
    fn alpha_out_of_range_names_the_key() {
        let err = parse_config("control.alpha = 1.5").unwrap_err();
        assert_eq!(err.key(), Some("control.alpha"));
    }

    #[test]
    fn unknown_and_repeated_keys() {
        assert!(matches!(
            parse_config("control.gain = 1").unwrap_err(),
            ConfigError::UnknownKey { line: 1, .. }
        ));
        assert!(matches!(
            parse_config("control.k = 0.1\ncontrol.k = 0.2").unwrap_err(),
            ConfigError::Repeated { line: 2, .. }
        ));
        assert!(matches!(
            parse_config("just words").unwrap_err(),
            ConfigError::Syntax { line: 1 }
        ));
    }

    #[test]
    fn cross_key_checks() {
        let err = parse_config("data.size_min = 10\ndata.size_max = 5").unwrap_err();
        assert_eq!(err.key(), Some("data.size_max"));
        let err = parse_config("control.rd_max = 5").unwrap_err();
        assert_eq!(err.key(), Some("control.rd_max"));
    }

    #[test]
    fn rendered_config_parses_back() {
        let mut cfg = parse_config("routing.strategy = static_spray\ndata.ttl_s = 600\ndata.stop_s = 3000\nengine.nodes = 12").unwrap();
        cfg.params.control.update_mode = UpdateMode::Equation;
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
    }
}
