//! Seizure-zone study orchestration: a coupled Epileptor run plus the
//! uncoupled (G = 0) rerun, classified into EZ/PZ/HZ.

use super::{run, EngineError, Kernel, MonitorSpec, ParamBindings, Result, SimConfig};
use crate::connectome::SparseCoupling;
use crate::observables::{classify_zones, TimeSeries, Zone};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneStudyConfig {
    /// Fast-variable threshold a region must exceed to count as seizing.
    pub threshold: f64,
    /// Minimum continuous excursion, ms.
    pub min_duration_ms: f64,
    /// Raw-monitor decimation for the recorded fast variable.
    pub monitor_stride: usize,
}

impl Default for ZoneStudyConfig {
    fn default() -> Self {
        // Frozen from the x0/G scan: interictal x1 sits near -1.6, ictal
        // oscillations stay above -1.0.
        ZoneStudyConfig {
            threshold: -0.4,
            min_duration_ms: 50.0,
            monitor_stride: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ZoneStudy {
    pub zones: Vec<Zone>,
    pub coupled: TimeSeries,
    pub isolated: TimeSeries,
}

/// Runs the coupled configuration and its G = 0 twin and classifies each
/// region. Only meaningful for the Epileptor model.
pub fn epileptor_zone_study(
    kernel: &Kernel,
    sc: &SparseCoupling,
    cfg: &SimConfig,
    bindings: &ParamBindings,
    zcfg: &ZoneStudyConfig,
    labels: Option<&[String]>,
) -> Result<ZoneStudy> {
    if kernel.compiled.name != "Epileptor" {
        return Err(EngineError::Config(format!(
            "zone classification requires the Epileptor model, got {}",
            kernel.compiled.name
        )));
    }
    let monitor = MonitorSpec::raw(zcfg.monitor_stride);
    let coupled = run(kernel, sc, cfg.clone(), bindings, &[monitor], labels)?
        .monitors
        .remove(0);
    let mut iso_cfg = cfg.clone();
    iso_cfg.global_coupling = 0.0;
    let isolated = run(kernel, sc, iso_cfg, bindings, &[monitor], labels)?
        .monitors
        .remove(0);
    let zones = classify_zones(&coupled, &isolated, zcfg.threshold, zcfg.min_duration_ms)
        .map_err(|e| EngineError::Summary(e.to_string()))?;
    Ok(ZoneStudy {
        zones,
        coupled,
        isolated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectome::{build_sparse, Connectome};

    #[test]
    fn non_epileptor_model_rejected() {
        let kernel = Kernel::builtin("Kuramoto").unwrap();
        let c = Connectome::new(vec![vec![0.0]], vec![vec![0.0]]).unwrap();
        let sc = build_sparse(&c, 1.0, 0.1, 0.0).unwrap();
        let err = epileptor_zone_study(
            &kernel,
            &sc,
            &SimConfig::default(),
            &ParamBindings::new(),
            &ZoneStudyConfig::default(),
            None,
        )
        .err()
        .unwrap();
        assert!(err.to_string().contains("Epileptor"), "{err}");
    }
}
