//! Training, checkpoints, BER sweeps and reporting.

mod adam;
pub mod checkpoint;
pub mod report;
pub mod sweep;
pub mod train;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use checkpoint::Checkpoint;
pub use report::{SweepRow, SWEEP_HEADER, TRAIN_LOG_HEADER};
pub use sweep::{ber_sweep, ber_sweep_with_hook, measure_latency, Decoder, LatencyReport, SweepPoint};
pub use train::{gen_dataset, make_batch, train, Batch, EpochLog, StepStats, Trainer};
