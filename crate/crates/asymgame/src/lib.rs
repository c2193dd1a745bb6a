pub mod error;
pub mod game_model;
pub mod lp;
pub mod simplex_field;
pub mod hj_primal;
pub mod hj_dual;
pub mod variational_checker;
pub mod chain_sim;
pub mod strategy_engine;
pub mod cli_runner;

pub use error::{Error, Result};

#[doc = include_str!("../../../book/src/introduction.md")]
mod guide_introduction {}
#[doc = include_str!("../../../book/src/games.md")]
mod guide_games {}
#[doc = include_str!("../../../book/src/fields.md")]
mod guide_fields {}
#[doc = include_str!("../../../book/src/primal.md")]
mod guide_primal {}
#[doc = include_str!("../../../book/src/dual.md")]
mod guide_dual {}
#[doc = include_str!("../../../book/src/checking.md")]
mod guide_checking {}
#[doc = include_str!("../../../book/src/simulation.md")]
mod guide_simulation {}
#[doc = include_str!("../../../book/src/strategies.md")]
mod guide_strategies {}
#[doc = include_str!("../../../book/src/cli.md")]
mod guide_cli {}
