//! Classification surrogate for detection: a linear head over reasoned region
//! features, trained with momentum SGD, plus the gradient oracle and the
//! evaluation used by the ablation harness.

mod eval;
mod gradcheck;
mod model;
mod params;
mod runner;
mod sgd;

pub use eval::{evaluate, Metrics};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use model::{backward, build_structure, forward_loss, ModelConfig, Mode, Structure, Tape};
pub use params::Params;
pub use runner::{train, CurvePoint, TrainOutcome};
pub use sgd::{sgd_step, SgdState, TrainConfig};
