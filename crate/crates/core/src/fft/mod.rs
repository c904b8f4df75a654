//! Serial FFT adapter and distributed real-to-complex 3D transforms.
//!
//! Normalization lives entirely on the inverse: the forward transform is
//! the plain sum `sum_x u(x) exp(-i k.x)` and the inverse divides by `n`
//! per transformed axis.

mod distributed;
mod serial;

pub use distributed::DistributedFft;
pub use serial::{Direction, SerialFft};
