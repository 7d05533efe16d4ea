pub mod error;
pub mod flows;
pub mod dressing;
pub mod grid;
pub mod grid_flow;
pub mod hamiltonian;
pub mod linalg;
pub mod loops;
pub mod models;
pub mod par;
pub mod reduction;
pub mod report;
pub mod series;
pub mod spectral;
pub mod suite;
pub mod vhs;
