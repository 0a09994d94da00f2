//! Cell problems: discounted correctors, flatness runs, and effective Hamiltonian tables.

mod corrector;
mod flatness;
mod table;

pub use corrector::{effective_value, solve_approx_corrector, CorrectorMethod, CorrectorOptions, CorrectorSolution};
pub use flatness::{solve_flatness, FlatnessResult, FlatnessSample};
pub use table::{
    build_effective_table, load_or_build_table, table_key, EffectiveHamiltonianTable, TableMetadata, TableOptions,
};
