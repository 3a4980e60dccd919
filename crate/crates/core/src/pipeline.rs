//! End-to-end analysis: iterative warping, optional period correction,
//! cycle synchronization, clustering and change points.

use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_cycles, ClusterConfig, ClusterResult};
use crate::cycles::{segment_trimmed, synchronize, CycleMatrix, ShiftAssignment};
use crate::error::{Result, WarpError};
use crate::scalar::Real;
use crate::signal_model::Signal;
use crate::warping::{iterate_warp, refine_period, IterationRecord, PeriodRefinement, WarpConfig, WarpOutcome};

/// Grid search settings for the warped-period correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodRefineConfig<T> {
    pub range: (T, T),
    pub n_grid: usize,
}

/// Every tunable of [`analyze`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig<T> {
    pub warp: WarpConfig<T>,
    pub cluster: ClusterConfig<T>,
    /// Align cycles by cyclic-shift synchronization before clustering.
    pub synchronize: bool,
    pub period_refine: Option<PeriodRefineConfig<T>>,
}

impl<T: Real> Default for PipelineConfig<T> {
    fn default() -> Self {
        PipelineConfig {
            warp: WarpConfig::default(),
            cluster: ClusterConfig::default(),
            synchronize: true,
            period_refine: None,
        }
    }
}

impl<T: Real> PipelineConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.warp.validate()?;
        if self.cluster.k_max < 2 {
            return Err(WarpError::invalid("k_max must be at least 2"));
        }
        if self.cluster.replicates == 0 {
            return Err(WarpError::invalid("replicates must be positive"));
        }
        if self.cluster.harmonic_k_max == 0 {
            return Err(WarpError::invalid("harmonic count limit must be positive"));
        }
        if let Some(r) = &self.period_refine {
            if !(r.range.0 > T::zero() && r.range.1 > r.range.0) || r.n_grid < 3 {
                return Err(WarpError::invalid("period refinement needs a positive range and at least 3 grid points"));
            }
        }
        Ok(())
    }
}

/// Clustering of one cycle matrix, with the matrix actually clustered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredCycles<T> {
    pub cycles: CycleMatrix<T>,
    /// Rows after synchronization (a copy of `cycles` when it is off).
    pub aligned: CycleMatrix<T>,
    pub shifts: Option<ShiftAssignment>,
    pub clusters: ClusterResult<T>,
}

/// Synchronizes (when enabled) and clusters a cycle matrix.
pub fn cluster_matrix<T: Real>(cycles: CycleMatrix<T>, config: &PipelineConfig<T>) -> Result<ClusteredCycles<T>> {
    let (aligned, shifts) = if config.synchronize {
        let (a, s) = synchronize(&cycles)?;
        (a, Some(s))
    } else {
        (cycles.clone(), None)
    };
    let clusters = cluster_cycles(
        &cycles,
        &aligned,
        shifts.as_ref().map(|s| s.shifts.as_slice()),
        &config.cluster,
    )?;
    Ok(ClusteredCycles {
        cycles,
        aligned,
        shifts,
        clusters,
    })
}

/// Clusters the cycle matrix of one warping iteration.
pub fn cluster_iteration<T: Real>(record: &IterationRecord<T>, config: &PipelineConfig<T>) -> Result<ClusteredCycles<T>> {
    cluster_matrix(record.cycles.clone(), config)
}

/// Output of [`analyze`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis<T> {
    pub warp: WarpOutcome<T>,
    pub period: Option<PeriodRefinement<T>>,
    pub result: ClusteredCycles<T>,
}

impl<T: Real> Analysis<T> {
    pub fn entropy_trace(&self) -> &[T] {
        &self.warp.entropy_trace
    }
}

/// Runs the whole analysis on one signal.
pub fn analyze<T: Real>(signal: &Signal<T>, config: &PipelineConfig<T>) -> Result<Analysis<T>> {
    config.validate()?;
    let warp = iterate_warp(signal, &config.warp)?;
    let last = warp.final_record();
    let l = config.warp.samples_per_cycle;
    let (period, cycles) = match &config.period_refine {
        Some(r) => {
            let (refinement, rescaled) = refine_period(&last.warped, r.range, r.n_grid, l)?;
            let m = segment_trimmed(&rescaled, l, config.warp.edge_cycles_for(rescaled.signal.len()))?;
            (Some(refinement), m)
        }
        None => (None, last.cycles.clone()),
    };
    let result = cluster_matrix(cycles, config)?;
    Ok(Analysis { warp, period, result })
}
