pub mod toy;
pub use toy::{verify_inverse_identity, ToyDgp};
