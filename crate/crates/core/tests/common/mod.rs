#![allow(dead_code)]

use std::path::PathBuf;

use fbsde_core::config::RunConfig;
use fbsde_core::grid::Axis;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"))
}

pub fn bundled(name: &str) -> RunConfig {
    RunConfig::load(&config_path(name)).unwrap()
}

/// A bundled problem on a coarse grid, for quick solves.
pub fn coarse(name: &str) -> RunConfig {
    let mut cfg = bundled(name);
    cfg.grid.steps = 20;
    cfg.grid.x = Axis::new(-3.0, 3.0, 61).unwrap();
    for a in &mut cfg.grid.xtilde {
        a.count = 9;
    }
    cfg.grid.quad_nodes = 6;
    cfg.simulate.n_paths = 400;
    cfg
}
