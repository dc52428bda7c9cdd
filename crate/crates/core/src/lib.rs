pub mod approx;
pub mod assembly;
pub mod basis;
pub mod cli;
pub mod geomesh;
pub mod linsolve;
pub mod postproc;
pub mod quadrature;
