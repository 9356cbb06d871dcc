//! Physical-channel simulation: SNR bookkeeping, unit-power framing, and
//! AWGN / Rayleigh block-fading transmission with perfect-CSI equalization.
//!
//! The channel applies `y_hat = h * y + n` to a power-normalized symbol
//! frame. Under unit signal power the noise variance for a given SNR is
//! simply `sigma^2 = 10^(-snr_db/10)`, so power normalization is not a
//! nicety -- it is what makes the SNR knob mean what it says. `transmit`
//! therefore rejects frames whose mean-square power strays from 1.
//!
//! Fading is block fading: one real coefficient `h` per frame, drawn as the
//! norm of two independent N(0, 1/2) components, so `E[h^2] = 1` (the fade
//! redistributes power but does not amplify on average) and
//! `E[h] = sqrt(pi/4) ~ 0.8862`. The receiver is assumed to know `h`
//! exactly (perfect CSI) and divides it out; fades below [`SINGULAR_H`]
//! cannot be equalized and surface as an error the caller must count as a
//! dropped frame.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::power_scale;

/// Tolerance on mean-square power for frames entering [`transmit`].
pub const UNIT_POWER_TOL: f64 = 1e-6;

/// Fading coefficients below this cannot be divided out; the frame drops.
pub const SINGULAR_H: f64 = 1e-8;

/// Signal-to-noise ratio in decibels.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SnrDb(pub f64);

impl SnrDb {
    /// Noise variance implied by this SNR under unit signal power:
    /// `sigma^2 = 10^(-snr/10)`.
    pub fn noise_variance(self) -> f64 {
        10f64.powf(-self.0 / 10.0)
    }

    /// Raw decibel value.
    pub fn db(self) -> f64 {
        self.0
    }
}

/// How training (or evaluation) draws its SNR per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum SnrDist {
    /// Every frame sees the same SNR.
    Fixed {
        /// The constant SNR in dB.
        value: f64,
    },
    /// SNR drawn uniformly from `[lo, hi]` dB per frame.
    Uniform {
        /// Lower edge in dB.
        lo: f64,
        /// Upper edge in dB (inclusive).
        hi: f64,
    },
}

impl SnrDist {
    /// Validates bounds; uniform needs `lo <= hi` and finite edges.
    pub fn validate(&self) -> Result<()> {
        match *self {
            SnrDist::Fixed { value } if value.is_finite() => Ok(()),
            SnrDist::Fixed { value } => {
                Err(Error::Contract(format!("fixed SNR must be finite, got {value}")))
            }
            SnrDist::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            SnrDist::Uniform { lo, hi } => {
                Err(Error::Contract(format!("uniform SNR needs finite lo <= hi, got [{lo}, {hi}]")))
            }
        }
    }

    /// Draws one SNR value.
    pub fn sample(&self, rng: &mut impl Rng) -> SnrDb {
        match *self {
            SnrDist::Fixed { value } => SnrDb(value),
            SnrDist::Uniform { lo, hi } => {
                if lo == hi {
                    SnrDb(lo)
                } else {
                    SnrDb(rng.gen_range(lo..=hi))
                }
            }
        }
    }
}

/// Which fading model the link uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    /// Additive white Gaussian noise only (`h = 1`).
    #[default]
    Awgn,
    /// Rayleigh block fading with `E[h^2] = 1`, plus AWGN.
    Rayleigh,
}

/// One frame of real-valued channel symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    symbols: Vec<f64>,
}

impl SymbolFrame {
    /// Wraps a non-empty, finite symbol buffer.
    pub fn new(symbols: Vec<f64>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Degenerate("empty symbol frame".into()));
        }
        if !symbols.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("symbol frame".into()));
        }
        Ok(SymbolFrame { symbols })
    }

    /// Symbol buffer.
    pub fn symbols(&self) -> &[f64] {
        &self.symbols
    }

    /// Number of symbols.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    /// True when the frame holds no symbols (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Mean-square power of the frame.
    pub fn power(&self) -> f64 {
        self.symbols.iter().map(|&v| v * v).sum::<f64>() / self.symbols.len() as f64
    }

    /// Rescales to unit mean-square power, preserving direction.
    ///
    /// Uses the same kernel as the differentiable tape op, so eager and
    /// on-tape normalization agree bit for bit. An all-zero frame carries no
    /// direction to preserve and is rejected.
    pub fn power_normalize(&self) -> Result<SymbolFrame> {
        if self.symbols.iter().all(|&v| v == 0.0) {
            return Err(Error::Degenerate("cannot power-normalize an all-zero frame".into()));
        }
        let s = power_scale(&self.symbols);
        Ok(SymbolFrame { symbols: self.symbols.iter().map(|&v| v * s).collect() })
    }
}

/// The random draw one frame experienced: fading coefficient and the noise
/// variance in force. Kept alongside traces so stages can be re-executed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// Block-fading coefficient (1.0 for AWGN).
    pub h: f64,
    /// Noise variance `sigma^2` applied per symbol.
    pub noise_var: f64,
    /// SNR that produced `noise_var`.
    pub snr: SnrDb,
    /// Fading model in force.
    pub kind: ChannelKind,
}

/// Draws the fading coefficient for one frame.
pub fn draw_fading(kind: ChannelKind, rng: &mut impl Rng) -> f64 {
    match kind {
        ChannelKind::Awgn => 1.0,
        ChannelKind::Rayleigh => {
            // Norm of two independent N(0, 1/2) components: E[h^2] = 1.
            let comp = Normal::new(0.0, (0.5f64).sqrt()).expect("constant std");
            let a: f64 = comp.sample(rng);
            let b: f64 = comp.sample(rng);
            (a * a + b * b).sqrt()
        }
    }
}

/// Draws the per-frame channel state: fading first, then the caller draws
/// noise. The order is part of the seeded-reproducibility contract.
pub fn draw_realization(snr: SnrDb, kind: ChannelKind, rng: &mut impl Rng) -> ChannelRealization {
    ChannelRealization { h: draw_fading(kind, rng), noise_var: snr.noise_variance(), snr, kind }
}

/// Draws a zero-mean Gaussian noise vector with the given variance.
pub fn draw_noise(len: usize, noise_var: f64, rng: &mut impl Rng) -> Vec<f64> {
    let dist = Normal::new(0.0, noise_var.sqrt()).expect("variance is non-negative");
    (0..len).map(|_| dist.sample(rng)).collect()
}

/// Sends a unit-power frame through the channel: `y_hat = h*y + n`.
///
/// Returns the received frame together with the realization needed to
/// equalize it. Frames that are not power-normalized violate the SNR
/// calibration contract and are rejected.
pub fn transmit(
    frame: &SymbolFrame,
    snr: SnrDb,
    kind: ChannelKind,
    rng: &mut impl Rng,
) -> Result<(SymbolFrame, ChannelRealization)> {
    let power = frame.power();
    if (power - 1.0).abs() > UNIT_POWER_TOL {
        return Err(Error::Contract(format!(
            "transmit needs a unit-power frame (power = {power}, tolerance {UNIT_POWER_TOL})"
        )));
    }
    let real = draw_realization(snr, kind, rng);
    let noise = draw_noise(frame.len(), real.noise_var, rng);
    let symbols = frame
        .symbols
        .iter()
        .zip(&noise)
        .map(|(&y, &n)| real.h * y + n)
        .collect();
    Ok((SymbolFrame { symbols }, real))
}

/// Perfect-CSI equalization: divides the known fading coefficient out.
///
/// Deep fades (`|h| < `[`SINGULAR_H`]) cannot be inverted; the frame is
/// reported dropped via [`Error::SingularChannel`] and the caller counts it.
pub fn equalize(frame: &SymbolFrame, real: &ChannelRealization) -> Result<SymbolFrame> {
    if real.h.abs() < SINGULAR_H {
        return Err(Error::SingularChannel { h: real.h });
    }
    Ok(SymbolFrame { symbols: frame.symbols.iter().map(|&v| v / real.h).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RunRng, Stream};
    use proptest::prelude::*;

    fn noise_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        RunRng::new(seed).stream(Stream::Noise)
    }

    #[test]
    fn noise_variance_follows_the_decibel_law() {
        assert!((SnrDb(0.0).noise_variance() - 1.0).abs() < 1e-15);
        assert!((SnrDb(10.0).noise_variance() - 0.1).abs() < 1e-15);
        assert!((SnrDb(-10.0).noise_variance() - 10.0).abs() < 1e-12);
        assert!((SnrDb(60.0).noise_variance() - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn snr_distributions_sample_inside_their_support() {
        let mut rng = noise_rng(1);
        let fixed = SnrDist::Fixed { value: 7.0 };
        assert_eq!(fixed.sample(&mut rng), SnrDb(7.0));
        let uni = SnrDist::Uniform { lo: 0.0, hi: 10.0 };
        uni.validate().unwrap();
        for _ in 0..1000 {
            let s = uni.sample(&mut rng).db();
            assert!((0.0..=10.0).contains(&s));
        }
        assert!(SnrDist::Uniform { lo: 5.0, hi: 1.0 }.validate().is_err());
        assert!(SnrDist::Fixed { value: f64::NAN }.validate().is_err());
    }

    #[test]
    fn power_normalize_keeps_already_unit_frames() {
        let f = SymbolFrame::new(vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        let n = f.power_normalize().unwrap();
        for (a, b) in n.symbols().iter().zip(f.symbols()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn power_normalize_rejects_the_zero_frame() {
        let f = SymbolFrame::new(vec![0.0; 8]).unwrap();
        assert!(matches!(f.power_normalize(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn transmit_rejects_unnormalized_frames() {
        let mut rng = noise_rng(2);
        let f = SymbolFrame::new(vec![3.0, 1.0, -2.0, 0.5]).unwrap();
        assert!(matches!(
            transmit(&f, SnrDb(5.0), ChannelKind::Awgn, &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn awgn_uses_unity_fading() {
        let mut rng = noise_rng(3);
        for _ in 0..32 {
            assert_eq!(draw_fading(ChannelKind::Awgn, &mut rng), 1.0);
        }
    }

    #[test]
    fn empirical_snr_matches_the_dial_on_awgn() {
        // Smaller-n version of the acceptance sweep: estimate SNR from
        // signal and noise power over a few thousand frames.
        let mut rng = noise_rng(4);
        for &snr_db in &[0.0, 5.0, 10.0] {
            let mut sig = 0.0;
            let mut noi = 0.0;
            for _ in 0..2000 {
                let raw = SymbolFrame::new(draw_noise(32, 1.0, &mut rng)).unwrap();
                let frame = raw.power_normalize().unwrap();
                let (rx, real) = transmit(&frame, SnrDb(snr_db), ChannelKind::Awgn, &mut rng).unwrap();
                for (y_hat, y) in rx.symbols().iter().zip(frame.symbols()) {
                    let s = real.h * y;
                    sig += s * s;
                    noi += (y_hat - s) * (y_hat - s);
                }
            }
            let measured = 10.0 * (sig / noi).log10();
            assert!(
                (measured - snr_db).abs() < 0.2,
                "empirical SNR {measured:.3} dB vs dialed {snr_db} dB"
            );
        }
    }

    #[test]
    fn rayleigh_moments_match_theory() {
        let mut rng = noise_rng(5);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let h = draw_fading(ChannelKind::Rayleigh, &mut rng);
            assert!(h > 0.0);
            sum += h;
            sum_sq += h * h;
        }
        let mean = sum / n as f64;
        let mean_sq = sum_sq / n as f64;
        let expect_mean = (std::f64::consts::PI / 4.0).sqrt(); // ~0.8862
        assert!((mean_sq - 1.0).abs() < 0.02, "E[h^2] = {mean_sq}");
        assert!(
            (mean - expect_mean).abs() < 0.01 * expect_mean,
            "E[h] = {mean} vs {expect_mean}"
        );
    }

    #[test]
    fn transmit_then_equalize_is_near_identity_at_high_snr() {
        let mut rng = noise_rng(6);
        let raw = SymbolFrame::new(draw_noise(64, 1.0, &mut rng)).unwrap();
        let frame = raw.power_normalize().unwrap();
        let (rx, real) = transmit(&frame, SnrDb(60.0), ChannelKind::Awgn, &mut rng).unwrap();
        let eq = equalize(&rx, &real).unwrap();
        for (a, b) in eq.symbols().iter().zip(frame.symbols()) {
            assert!((a - b).abs() < 1e-2, "residual {} at 60 dB", (a - b).abs());
        }
    }

    #[test]
    fn equalize_inverts_fading_exactly_without_noise() {
        let mut rng = noise_rng(7);
        let frame = SymbolFrame::new(draw_noise(16, 1.0, &mut rng))
            .unwrap()
            .power_normalize()
            .unwrap();
        let real = ChannelRealization {
            h: draw_fading(ChannelKind::Rayleigh, &mut rng),
            noise_var: 0.0,
            snr: SnrDb(f64::INFINITY),
            kind: ChannelKind::Rayleigh,
        };
        let faded =
            SymbolFrame::new(frame.symbols().iter().map(|&v| real.h * v).collect()).unwrap();
        let eq = equalize(&faded, &real).unwrap();
        for (a, b) in eq.symbols().iter().zip(frame.symbols()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deep_fades_are_reported_as_dropped_frames() {
        let frame = SymbolFrame::new(vec![1.0, -1.0]).unwrap();
        let real = ChannelRealization {
            h: 1e-9,
            noise_var: 0.1,
            snr: SnrDb(10.0),
            kind: ChannelKind::Rayleigh,
        };
        assert!(matches!(equalize(&frame, &real), Err(Error::SingularChannel { .. })));
    }

    #[test]
    fn transmit_is_reproducible_per_seed() {
        let frame = SymbolFrame::new(vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let (rx1, r1) =
            transmit(&frame, SnrDb(3.0), ChannelKind::Rayleigh, &mut noise_rng(8)).unwrap();
        let (rx2, r2) =
            transmit(&frame, SnrDb(3.0), ChannelKind::Rayleigh, &mut noise_rng(8)).unwrap();
        assert_eq!(rx1, rx2);
        assert_eq!(r1.h.to_bits(), r2.h.to_bits());
    }

    proptest! {
        #[test]
        fn power_normalize_always_lands_on_unit_power(
            values in proptest::collection::vec(-100.0f64..100.0, 1..64),
        ) {
            prop_assume!(values.iter().any(|&v| v != 0.0));
            prop_assume!(values.iter().map(|v| v*v).sum::<f64>() > 1e-6);
            let frame = SymbolFrame::new(values).unwrap();
            let n = frame.power_normalize().unwrap();
            prop_assert!((n.power() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn equalize_undoes_pure_fading(h in 0.01f64..3.0, seed in 0u64..1000) {
            let mut rng = noise_rng(seed);
            let frame = SymbolFrame::new(draw_noise(8, 1.0, &mut rng)).unwrap();
            let real = ChannelRealization {
                h, noise_var: 0.0, snr: SnrDb(0.0), kind: ChannelKind::Rayleigh,
            };
            let faded = SymbolFrame::new(
                frame.symbols().iter().map(|&v| h * v).collect(),
            ).unwrap();
            let eq = equalize(&faded, &real).unwrap();
            for (a, b) in eq.symbols().iter().zip(frame.symbols()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
