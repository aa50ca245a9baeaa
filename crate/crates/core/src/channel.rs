//! Path loss, log-normal shadowing and Rayleigh block fading, ideal uplink
//! power control, and additive white Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// Cell radius in meters.
    pub cell_radius: f64,
    pub pathloss_exponent: f64,
    /// Shadowing standard deviation in dB.
    pub shadowing_sigma_db: f64,
    /// Reference SNR at the cell edge, linear.
    pub reference_snr: f64,
    /// Noise variance per real dimension.
    pub noise_variance: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            cell_radius: 1000.0,
            pathloss_exponent: 3.76,
            shadowing_sigma_db: 8.0,
            reference_snr: 1.0,
            noise_variance: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_radius > 0.0) {
            return invalid("cell_radius must be > 0");
        }
        // Zero is accepted so that path loss can be switched off.
        if !(self.pathloss_exponent >= 0.0) {
            return invalid("pathloss_exponent must be >= 0");
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return invalid("shadowing_sigma_db must be >= 0");
        }
        if !(self.reference_snr > 0.0) {
            return invalid("reference_snr must be > 0");
        }
        if !(self.noise_variance > 0.0) {
            return invalid("noise_variance must be > 0");
        }
        Ok(())
    }
}

/// One device's channel for a resource block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceChannel {
    pub distance: f64,
    pub shadowing: f64,
    pub fading: f64,
    /// `shadowing * fading * (distance / r0)^(-alpha)`.
    pub effective_gain: f64,
    /// Transmit amplitude multiplier set by power control.
    pub tx_scale: f64,
}

impl DeviceChannel {
    /// Channel from explicit components, with unit transmit scale.
    pub fn from_components(params: &ChannelParams, distance: f64, shadowing: f64, fading: f64) -> Result<Self> {
        params.validate()?;
        if !(distance > 0.0 && shadowing > 0.0 && fading > 0.0) {
            return invalid("distance and gains must be > 0");
        }
        let effective_gain = shadowing * fading * (distance / params.cell_radius).powf(-params.pathloss_exponent);
        Ok(Self { distance, shadowing, fading, effective_gain, tx_scale: 1.0 })
    }

    /// Received SNR `gamma * |h|^2 * tx_scale^2`.
    pub fn received_snr(&self, gamma: f64) -> f64 {
        gamma * self.effective_gain * self.tx_scale * self.tx_scale
    }

    /// Received amplitude relative to unit noise, `sqrt(received_snr)`.
    pub fn received_amplitude(&self, gamma: f64) -> f64 {
        self.received_snr(gamma).sqrt()
    }
}

/// Samples distance uniformly over the disc area, log-normal shadowing and
/// unit-mean exponential fading.
pub fn sample_channel(params: &ChannelParams, seed: u64) -> Result<DeviceChannel> {
    params.validate()?;
    let mut rng = stream_rng(seed, 0);
    // Open interval keeps the distance strictly positive.
    let u: f64 = 1.0 - rng.random::<f64>();
    let distance = params.cell_radius * u.sqrt();
    let z: f64 = StandardNormal.sample(&mut rng);
    let shadowing = 10f64.powf(params.shadowing_sigma_db * z / 10.0);
    let fading: f64 = Exp1.sample(&mut rng);
    let fading = fading.max(f64::MIN_POSITIVE);
    DeviceChannel::from_components(params, distance, shadowing, fading)
}

/// Inverts the channel so the received SNR equals `gamma0`.
pub fn apply_power_control(ch: &DeviceChannel, gamma: f64, gamma0: f64) -> Result<DeviceChannel> {
    apply_power_control_capped(ch, gamma, gamma0, None)
}

/// Like [`apply_power_control`], with an optional ceiling on the transmit
/// amplitude multiplier. A capped device arrives below `gamma0`.
pub fn apply_power_control_capped(
    ch: &DeviceChannel,
    gamma: f64,
    gamma0: f64,
    max_tx_scale: Option<f64>,
) -> Result<DeviceChannel> {
    if !(gamma > 0.0 && gamma0 > 0.0) {
        return invalid("gamma and gamma0 must be > 0");
    }
    if !(ch.effective_gain > 0.0 && ch.effective_gain.is_finite()) {
        return Err(Error::DegenerateChannel(format!("effective gain {}", ch.effective_gain)));
    }
    let mut tx_scale = (gamma0 / (gamma * ch.effective_gain)).sqrt();
    if let Some(cap) = max_tx_scale {
        tx_scale = tx_scale.min(cap);
    }
    Ok(DeviceChannel { tx_scale, ..*ch })
}

/// Adds i.i.d. `N(0, noise_var)` samples; `noise_var == 0` is the identity.
pub fn add_awgn(symbols: &[f64], noise_var: f64, seed: u64) -> Result<Vec<f64>> {
    if !(noise_var >= 0.0) {
        return invalid("noise variance must be >= 0");
    }
    if noise_var == 0.0 {
        return Ok(symbols.to_vec());
    }
    let normal = Normal::new(0.0, noise_var.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = stream_rng(seed, 0);
    Ok(symbols.iter().map(|&s| s + normal.sample(&mut rng)).collect())
}
