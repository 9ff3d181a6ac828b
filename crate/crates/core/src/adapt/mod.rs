//! Unsupervised adaptation objectives: gradient reversal, conditional
//! adversarial loss and minimum class confusion.

pub mod cdan;
mod discriminator;
mod embed;
mod grl;
pub mod mcc;
mod objective;

pub use cdan::{cdan_loss, certainty_weights, CdanHead, CdanInputs, CdanOutput, BCE_EPS};
pub use discriminator::{DomainDiscriminator, DEFAULT_HIDDEN};
pub use embed::{JointEmbedder, DEFAULT_RANDOM_DIM, EXACT_LIMIT};
pub use grl::{grl, GrlSchedule};
pub use mcc::{mcc_loss, mcc_value, MccConfig};
pub use objective::{uda_objective, LossBreakdown, SourceBatch, TargetBatch, UdaMethod, UdaTerms, UdaWeights};
