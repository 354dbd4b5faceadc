use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Which layers take cached source activations, and for how many steps.
///
/// Layer numbers here are policy ids (the decoder numbering of the full-size
/// UNet); the toy backbone maps its own blocks onto them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPolicy {
    pub qk_layers: BTreeSet<usize>,
    pub feature_layer: usize,
    pub qk_steps: usize,
    pub feature_steps: usize,
    pub enabled: bool,
}

impl Default for InjectionPolicy {
    fn default() -> Self {
        Self {
            qk_layers: (4..=11).collect(),
            feature_layer: 4,
            qk_steps: 25,
            feature_steps: 40,
            enabled: true,
        }
    }
}

impl InjectionPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// Both windows stretched over `steps` sampling steps.
    pub fn full(steps: usize) -> Self {
        Self {
            qk_steps: steps,
            feature_steps: steps,
            ..Self::default()
        }
    }
}

/// `(inject_qk, inject_feature)` for a sampling step and policy layer id.
pub fn apply_injection_policy(
    step_index: usize,
    layer_id: usize,
    policy: &InjectionPolicy,
) -> (bool, bool) {
    if !policy.enabled {
        return (false, false);
    }
    (
        policy.qk_layers.contains(&layer_id) && step_index < policy.qk_steps,
        layer_id == policy.feature_layer && step_index < policy.feature_steps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_windows() {
        let p = InjectionPolicy::default();
        assert_eq!(apply_injection_policy(0, 4, &p), (true, true));
        assert_eq!(apply_injection_policy(30, 4, &p), (false, true));
        for layer in 0..16 {
            assert_eq!(apply_injection_policy(45, layer, &p), (false, false));
        }
        assert_eq!(apply_injection_policy(24, 11, &p), (true, false));
        assert_eq!(apply_injection_policy(0, 3, &p), (false, false));
        assert_eq!(apply_injection_policy(0, 12, &p), (false, false));
    }

    #[test]
    fn disabled_never_injects() {
        let p = InjectionPolicy::disabled();
        assert_eq!(apply_injection_policy(0, 4, &p), (false, false));
    }
}
