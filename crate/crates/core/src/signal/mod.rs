//! Clean preamble synthesis and the transmitter → channel → receiver
//! impairment chain.

mod capture;
mod impairments;
mod iq;
mod population;
mod preamble;

pub use capture::{
    generate_capture, generate_capture_framed, generate_capture_with_pad, generate_capture_with_pad_limit, MAX_PAD,
};
pub use impairments::{
    apply_channel, apply_receiver, apply_transmitter, convolve_taps, iq_imbalance_coeffs, noise_variance,
    ChannelProfile, ReceiverProfile, TransmitterProfile,
};
pub(crate) use impairments::rotate;
pub use iq::{error_energy, relative_error, IqSignal};
pub use population::{
    sample_channel, sample_receivers, sample_transmitters, ChannelRanges, PopulationSpec, ReceiverRanges, Span,
    TransmitterRanges,
};
pub use preamble::{synth_preamble, PreambleTemplate, ReferenceBin};

#[cfg(test)]
mod proptests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn complex_vec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
        prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0).prop_map(|(a, b)| Complex64::new(a, b)), len)
    }

    proptest! {
        #[test]
        fn noiseless_channel_is_linear(
            x in complex_vec(48),
            z in complex_vec(48),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            g0 in (-1.0f64..1.0, -1.0f64..1.0),
            g1 in (-1.0f64..1.0, -1.0f64..1.0),
        ) {
            let ch = ChannelProfile {
                taps: vec![(0, Complex64::new(1.0 + g0.0, g0.1)), (2, Complex64::new(g1.0, g1.1))],
                snr_db: f64::INFINITY,
            };
            let fs = 1e6;
            let mix: Vec<Complex64> = x.iter().zip(&z).map(|(a, b)| a * alpha + b * beta).collect();
            let lhs = apply_channel(&IqSignal::new(mix, fs).unwrap(), &ch, 0).unwrap();
            let fx = apply_channel(&IqSignal::new(x, fs).unwrap(), &ch, 0).unwrap();
            let fz = apply_channel(&IqSignal::new(z, fs).unwrap(), &ch, 0).unwrap();
            for ((l, a), b) in lhs.samples().iter().zip(fx.samples()).zip(fz.samples()) {
                prop_assert!((l - (a * alpha + b * beta)).norm() < 1e-12);
            }
        }
    }
}
