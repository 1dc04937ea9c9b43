use crate::error::Result;
use crate::kernel::{SampleSet, TimeGrid};
use crate::saddle::{DmftConfig, DmftSolver, DmftState};

/// The DMFT loop with A and B pinned at zero: forward and backward fields are
/// driven by independent Gaussian sources and no sensitivities are propagated.
pub fn gradient_independence_solve(cfg: &DmftConfig, data: &SampleSet, grid: TimeGrid) -> Result<DmftState> {
    DmftSolver::new(cfg, data, grid, false)?.run()
}
