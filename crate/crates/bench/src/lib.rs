//! Fixtures shared by the benchmarks.

use fht_core::{
    build_default_sketches, fit_snapshot, simulate, DimensionTree, FhtModel, FourierBasis, GridSpec, Potential,
    PotentialKind, SdeConfig, SketchConfig, SketchSet, TrajectoryBatch,
};

/// Desk-scale 2D Ginzburg-Landau setup on an `m x m` lattice.
pub struct Fixture {
    pub potential: Potential,
    pub sde: SdeConfig,
    pub basis: FourierBasis,
    pub sketch: SketchConfig,
    pub grid: GridSpec,
}

impl Fixture {
    pub fn gl2d(m: usize, n_traj: usize) -> Self {
        let grid = GridSpec::new(2, m).expect("power-of-two lattice");
        let potential = Potential::new(PotentialKind::Gl2d, grid, 0.03).expect("valid potential");
        let sde: SdeConfig = serde_json::from_value(serde_json::json!({
            "beta": 0.2, "t_final": 0.3, "dt": 0.003, "n_traj": n_traj,
            "snapshot_times": [0.3], "seed": 7
        }))
        .expect("valid sde section");
        let sketch: SketchConfig = serde_json::from_value(serde_json::json!({"r": 4})).expect("valid sketch");
        Self {
            potential,
            sde,
            basis: FourierBasis::new(2.5, 6).expect("valid basis"),
            sketch,
            grid,
        }
    }

    pub fn tree(&self) -> DimensionTree {
        self.sketch.tree(self.grid.size()).expect("valid tree")
    }

    pub fn sketches(&self, tree: &DimensionTree) -> SketchSet {
        build_default_sketches(tree, &self.basis, &self.grid, &self.sketch).expect("sketches")
    }

    pub fn trajectories(&self) -> TrajectoryBatch {
        simulate(&self.potential, &self.sde).expect("simulation")
    }

    pub fn model(&self, batch: &TrajectoryBatch) -> FhtModel {
        let tree = self.tree();
        let sketches = self.sketches(&tree);
        fit_snapshot(batch.snapshot(0), &tree, &self.basis, &sketches, &self.sketch).expect("fit")
    }
}
