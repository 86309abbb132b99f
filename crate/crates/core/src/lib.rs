//! Delay-Doppler (OTFS) communications laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`transforms`]: discrete Zak transform, ISFFT/SFFT and the DD/TD kernels.
//! * [`channel`]: path sets, effective channel matrices, closed-form DD relations
//!   and scattering statistics.
//! * [`modem`]: OTFS modulation over the reduced-CP frame, AWGN, constellations.
//! * [`detect`]: symbol-wise MAP / Hybrid-MAP-PIC, cross-domain iterative detection,
//!   state evolution and linear baselines.
//! * [`analysis`]: codeword difference matrices and PEP / coding-gain bounds.
//! * [`coding`]: convolutional codes, BCJR and turbo equalization.
//! * [`isac`]: spatially spread OTFS for sensing and communication.
//! * [`harness`]: seeded Monte Carlo campaigns and result emission.
//!
//! The signal-level layers (`transforms`, `channel`, `modem`) are generic over the
//! scalar through [`Real`]; detection, analysis and the ISAC layer run in `f64`.

pub mod analysis;
pub mod channel;
pub mod coding;
pub mod detect;
pub mod error;
pub mod harness;
pub mod isac;
pub mod linalg;
pub mod modem;
pub mod transforms;

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

pub use error::{Error, Result};

/// Complex sample type.
pub use num_complex::Complex;

/// Floating-point scalar accepted by the signal-level layers.
pub trait Real:
    Float + FloatConst + FromPrimitive + rustfft::FftNum + Default + Display + Debug + Send + Sync
{
    /// Lossy conversion from `f64`, used for constants and frame geometry.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    /// Lossy conversion from `usize`.
    fn of_usize(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize is representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Double-precision complex sample.
pub type C64 = Complex<f64>;
/// Single-precision complex sample.
pub type C32 = Complex<f32>;

pub type DomainVector64 = transforms::DomainVector<f64>;
pub type DomainVector32 = transforms::DomainVector<f32>;
pub type Grid64 = transforms::Grid<f64>;
pub type Grid32 = transforms::Grid<f32>;
pub type PathSet64 = channel::PathSet<f64>;
pub type PathSet32 = channel::PathSet<f32>;

pub use channel::PathSet;
pub use transforms::{Domain, DomainVector, FrameParams, Grid};
