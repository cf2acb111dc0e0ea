//! Fixtures shared by the benchmarks in `benches/`.

use piezosim::{build_system, close_loop, ClosedLoopSystem, Controller, DVector, DiscreteSystem, Grid, ModelSpec};

pub fn reference_system(segments: usize) -> DiscreteSystem {
    let spec = ModelSpec::reference_composite();
    build_system(&spec, &Grid::new(segments, spec.length()).expect("valid grid")).expect("reference assembles")
}

pub fn reference_closed_loop(segments: usize) -> ClosedLoopSystem {
    close_loop(&reference_system(segments), &Controller::VoltageFd { kappa: 10.0 }).expect("voltage law pairs")
}

/// A smooth nonzero state: one sine mode on every field.
pub fn smooth_state(sys: &DiscreteSystem) -> DVector<f64> {
    DVector::from_iterator(
        sys.dim,
        sys.labels.iter().map(|l| (std::f64::consts::PI * l.z / sys.grid.length).sin()),
    )
}
