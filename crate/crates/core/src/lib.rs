#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN
#![allow(clippy::needless_range_loop)]

pub mod assignment;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod levelset;
pub mod pipeline;
pub mod model;
pub mod plot;
pub mod points;
pub mod resample;
pub mod spatial;
pub mod tomato;
pub mod uncertainty;
pub mod unionfind;
pub mod rng;

pub use error::{Error, Flagged, Result, Warning};
pub use model::{
    CouplingFlowSpec, FitOptions, FitResult, FittedModel, GmmSpec, ModelHandle, ParamVector,
};
pub use points::PointSet;
