use std::collections::BTreeMap;
use std::sync::Arc;

use super::{ControlError, ControllerGains};
use crate::network::NetworkTopology;

/// Local measurements available to a tank's outflow valve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TankMeasurement {
    pub v_sh: f64,
    pub t_sh: f64,
    pub t_sc: f64,
}

/// Commands the hot-layer outflow of an independent tank.
///
/// Implementations must return non-negative values; the dependent tank is
/// never queried.
pub trait StorageOutflowPolicy: Send + Sync {
    fn name(&self) -> &'static str;

    fn outflow(
        &self,
        tank: usize,
        t: f64,
        gains: &ControllerGains,
        local: &TankMeasurement,
    ) -> f64;
}

/// Piecewise-constant outflows taken from the current schedule, which timed
/// events may replace.
#[derive(Debug, Default, Clone, Copy)]
pub struct ScheduledOutflow;

impl StorageOutflowPolicy for ScheduledOutflow {
    fn name(&self) -> &'static str {
        "schedule"
    }

    fn outflow(&self, tank: usize, _t: f64, gains: &ControllerGains, _local: &TankMeasurement) -> f64 {
        gains.q_st_sched[tank]
    }
}

pub fn storage_outflow(
    policy: &dyn StorageOutflowPolicy,
    topology: &NetworkTopology,
    tank: usize,
    t: f64,
    gains: &ControllerGains,
    local: &TankMeasurement,
) -> Result<f64, ControlError> {
    if tank == topology.dependent_tank() {
        return Err(ControlError::WrongAuthority { tank });
    }
    let value = policy.outflow(tank, t, gains, local);
    if !(value >= 0.0) || !value.is_finite() {
        return Err(ControlError::NegativeOutflow { tank, value });
    }
    Ok(value)
}

/// Outflow policies by name.
pub struct OutflowPolicyRegistry {
    policies: BTreeMap<&'static str, Arc<dyn StorageOutflowPolicy>>,
}

impl OutflowPolicyRegistry {
    pub fn empty() -> Self {
        OutflowPolicyRegistry {
            policies: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(ScheduledOutflow));
        r
    }

    pub fn register(&mut self, policy: Arc<dyn StorageOutflowPolicy>) {
        self.policies.insert(policy.name(), policy);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn StorageOutflowPolicy>> {
        self.policies.get(name).cloned()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.policies.keys().copied().collect()
    }
}

impl Default for OutflowPolicyRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
