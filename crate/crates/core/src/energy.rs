//! Battery state, the K-factor transform and per-packet transmission cost
//! models.
//!
//! Battery values are dimensionless energy units; a full battery holds
//! `e_max` (15 by default).

use thiserror::Error;

pub const DEFAULT_E_MAX: f64 = 15.0;

/// Header bits are clocked at 6 Mb/s, payload bits at 54 Mb/s.
pub const HEADER_RATE_BPS: f64 = 6.0e6;
pub const PAYLOAD_RATE_BPS: f64 = 54.0e6;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum EnergyError {
    #[error("energy must be positive, got {0}")]
    NonPositive(f64),
    #[error("probability of correct reception must be in (0, 1], got {0}")]
    PcZero(f64),
}

/// K = e_max / e; 1 at full charge and growing as the battery drains.
pub fn k_factor(e: f64, e_max: f64) -> Result<f64, EnergyError> {
    if !(e > 0.0) {
        return Err(EnergyError::NonPositive(e));
    }
    Ok(e_max / e)
}

/// Seconds needed to clock out `header_bits` and `payload_bits`.
pub fn packet_airtime(header_bits: u64, payload_bits: u64) -> f64 {
    header_bits as f64 / HEADER_RATE_BPS + payload_bits as f64 / PAYLOAD_RATE_BPS
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Battery {
    pub level: f64,
    pub e_max: f64,
    pub voltage: f64,
    pub current: f64,
    pub death_threshold: f64,
}

impl Battery {
    pub fn new(level: f64, e_max: f64, death_threshold: f64) -> Self {
        Battery {
            level: level.clamp(0.0, e_max),
            e_max,
            voltage: 1.0,
            current: 1.0,
            death_threshold,
        }
    }

    pub fn is_alive(&self) -> bool {
        self.level >= self.death_threshold
    }

    /// Removes up to `amount`, flooring at zero. Returns what was actually
    /// removed.
    pub fn drain(&mut self, amount: f64) -> f64 {
        debug_assert!(amount >= 0.0);
        let before = self.level;
        self.level = (self.level - amount).max(0.0);
        before - self.level
    }
}

/// Cost `i * v * t_p` of sending one packet.
pub fn tx_energy_time_model(header_bits: u64, payload_bits: u64, bat: &Battery) -> f64 {
    bat.current * bat.voltage * packet_airtime(header_bits, payload_bits)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEnergyParams {
    /// Packet length in bits.
    pub length_bits: f64,
    pub tx_power_w: f64,
    pub rate_bps: f64,
    /// Probability the packet is received correctly.
    pub p_correct: f64,
}

/// Cost `M * P_i / (R * p_c)` of a correct delivery over one link.
pub fn tx_energy_link_model(p: &LinkEnergyParams) -> Result<f64, EnergyError> {
    if !(p.p_correct > 0.0) {
        return Err(EnergyError::PcZero(p.p_correct));
    }
    Ok(p.length_bits * p.tx_power_w / (p.rate_bps * p.p_correct))
}

/// Sum of per-link costs over a node's neighborhood.
pub fn resultant_energy(costs: &[f64]) -> f64 {
    costs.iter().sum()
}

/// How a transmission is charged against the sender's battery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostModel {
    /// `i * v * airtime`, using the battery's own voltage and current.
    Airtime,
    /// Link model with fixed power, rate and reception probability.
    Link {
        tx_power_w: f64,
        rate_bps: f64,
        p_correct: f64,
    },
}

impl CostModel {
    pub fn cost(&self, header_bits: u64, payload_bits: u64, bat: &Battery) -> f64 {
        match *self {
            CostModel::Airtime => tx_energy_time_model(header_bits, payload_bits, bat),
            CostModel::Link {
                tx_power_w,
                rate_bps,
                p_correct,
            } => tx_energy_link_model(&LinkEnergyParams {
                length_bits: (header_bits + payload_bits) as f64,
                tx_power_w,
                rate_bps,
                p_correct,
            })
            // validated when the scenario is built
            .expect("link cost model with p_correct = 0"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn k_factor_examples() {
        assert_eq!(k_factor(2.5, 15.0).unwrap(), 6.0);
        assert_eq!(k_factor(15.0, 15.0).unwrap(), 1.0);
        assert_eq!(k_factor(5.0, 15.0).unwrap(), 3.0);
        assert_eq!(k_factor(0.0, 15.0), Err(EnergyError::NonPositive(0.0)));
        assert!(k_factor(-1.0, 15.0).is_err());
    }

    #[test]
    fn airtime_examples() {
        assert_eq!(packet_airtime(0, 0), 0.0);
        // 65536 / 54e6 = 1.213629629...e-3
        let expected = 65536.0 / 54.0e6;
        assert!(rel(packet_airtime(0, 65536), expected) < 1e-12);
        assert!((packet_airtime(0, 65536) - 1.21363e-3).abs() < 1e-8);
        // 192 / 6e6 = 3.2e-5
        assert!((packet_airtime(192, 65536) - 1.24563e-3).abs() < 1e-8);
    }

    #[test]
    fn time_model() {
        let mut bat = Battery::new(10.0, 15.0, 0.15);
        bat.current = 0.0;
        assert_eq!(tx_energy_time_model(512, 65536, &bat), 0.0);
        bat.current = 1.0;
        bat.voltage = 1.0;
        let e = tx_energy_time_model(0, 65536, &bat);
        assert!((e - 1.21363e-3).abs() < 1e-8);
        assert!(rel(tx_energy_time_model(0, 2 * 65536, &bat), 2.0 * e) < 1e-15);
    }

    #[test]
    fn link_model() {
        let unit = LinkEnergyParams {
            length_bits: 1000.0,
            tx_power_w: 0.3,
            rate_bps: 1000.0,
            p_correct: 1.0,
        };
        assert_eq!(tx_energy_link_model(&unit).unwrap(), 0.3);
        let p = LinkEnergyParams {
            length_bits: 65536.0,
            tx_power_w: 0.1,
            rate_bps: 54.0e6,
            p_correct: 1.0,
        };
        let e = tx_energy_link_model(&p).unwrap();
        assert!((e - 1.21363e-4).abs() < 1e-9);
        let half = LinkEnergyParams { p_correct: 0.5, ..p };
        assert_eq!(tx_energy_link_model(&half).unwrap(), 2.0 * e);
        let zero = LinkEnergyParams { p_correct: 0.0, ..p };
        assert_eq!(tx_energy_link_model(&zero), Err(EnergyError::PcZero(0.0)));
    }

    #[test]
    fn drain_floors_at_zero() {
        let mut bat = Battery::new(1.0, 15.0, 0.15);
        assert_eq!(bat.drain(0.0), 0.0);
        assert_eq!(bat.level, 1.0);
        assert_eq!(bat.drain(2.5), 1.0);
        assert_eq!(bat.level, 0.0);
        assert!(!bat.is_alive());
    }

    #[test]
    fn resultant_energy_sums() {
        assert_eq!(resultant_energy(&[]), 0.0);
        assert_eq!(resultant_energy(&[1.0, 1.0, 1.0]), 3.0);
        // one node sending one HELLO per second for a minute at unit cost
        assert_eq!(resultant_energy(&vec![1.0; 60]), 60.0);
    }

    proptest! {
        #[test]
        fn k_factor_round_trips(e in 0.01f64..=15.0) {
            let k = k_factor(e, 15.0).unwrap();
            prop_assert!(rel(15.0 / k, e) < 1e-9);
        }

        #[test]
        fn k_factor_is_decreasing_in_energy(a in 0.01f64..15.0, b in 0.01f64..15.0) {
            prop_assume!(a != b);
            let (hi, lo) = if a > b { (a, b) } else { (b, a) };
            prop_assert!(k_factor(hi, 15.0).unwrap() < k_factor(lo, 15.0).unwrap());
        }

        #[test]
        fn cost_models_are_homogeneous(h in 0u64..4096, d in 0u64..100_000, s in 1u64..8) {
            let bat = Battery::new(10.0, 15.0, 0.15);
            let base = tx_energy_time_model(h, d, &bat);
            let scaled = tx_energy_time_model(h * s, d * s, &bat);
            prop_assert!((scaled - s as f64 * base).abs() <= 1e-12 * scaled.max(1e-300));
            let link = CostModel::Link { tx_power_w: 0.5, rate_bps: 2.0e6, p_correct: 0.8 };
            let lb = link.cost(h, d, &bat);
            let ls = link.cost(h * s, d * s, &bat);
            prop_assert!((ls - s as f64 * lb).abs() <= 1e-12 * ls.max(1e-300));
        }
    }
}
