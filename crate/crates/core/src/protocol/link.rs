//! Lossy single-FIFO radio link.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub loss_prob: f64,
    pub latency_ms: f64,
    /// Uniform extra delay in `[0, jitter_ms]`.
    pub jitter_ms: f64,
    pub seed: u64,
}

impl Default for LinkConfig {
    /// 20 ± 10 ms, lossless.
    fn default() -> Self {
        Self { loss_prob: 0.0, latency_ms: 10.0, jitter_ms: 20.0, seed: 0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("loss probability {0} outside [0, 1]")]
    Loss(f64),
    #[error("latency and jitter must be finite and non-negative")]
    Delay,
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), LinkError> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(LinkError::Loss(self.loss_prob));
        }
        if !(self.latency_ms >= 0.0 && self.jitter_ms >= 0.0 && (self.latency_ms + self.jitter_ms).is_finite()) {
            return Err(LinkError::Delay);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivered<T> {
    pub sent_ms: u64,
    pub delivered_ms: u64,
    pub item: T,
}

/// Stateful link: frames pushed with a send time come out in order once
/// their delivery time has passed. A late frame holds back those behind it.
#[derive(Debug, Clone)]
pub struct Link<T> {
    cfg: LinkConfig,
    rng: ChaCha8Rng,
    queue: std::collections::VecDeque<Delivered<T>>,
    last_delivery: f64,
    dropped: u64,
}

impl<T> Link<T> {
    pub fn new(cfg: LinkConfig) -> Result<Self, LinkError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            queue: Default::default(),
            last_delivery: f64::NEG_INFINITY,
            dropped: 0,
        })
    }

    pub fn send(&mut self, t_ms: u64, item: T) {
        // draw both numbers for every frame so loss does not shift the jitter stream
        let lost = self.rng.random::<f64>() < self.cfg.loss_prob;
        let jitter = self.rng.random::<f64>() * self.cfg.jitter_ms;
        if lost {
            self.dropped += 1;
            return;
        }
        let at = (t_ms as f64 + self.cfg.latency_ms + jitter).max(self.last_delivery);
        self.last_delivery = at;
        self.queue.push_back(Delivered { sent_ms: t_ms, delivered_ms: at.ceil() as u64, item });
    }

    /// Everything due at or before `now_ms`.
    pub fn poll(&mut self, now_ms: u64) -> Vec<Delivered<T>> {
        let n = self.queue.iter().take_while(|d| d.delivered_ms <= now_ms).count();
        self.queue.drain(..n).collect()
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

/// Passes timestamped frames through a link and returns the survivors with
/// their delivery times (ms, rounded up to the next whole ms).
pub fn link_simulate<T>(frames: Vec<(u64, T)>, cfg: LinkConfig) -> Result<Vec<Delivered<T>>, LinkError> {
    let mut link = Link::new(cfg)?;
    for (t, f) in frames {
        link.send(t, f);
    }
    Ok(link.poll(u64::MAX))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: u64) -> Vec<(u64, u64)> {
        (0..n).map(|i| (i * 10, i)).collect()
    }

    #[test]
    fn lossless_without_jitter_is_a_pure_delay() {
        let cfg = LinkConfig { loss_prob: 0.0, latency_ms: 20.0, jitter_ms: 0.0, seed: 1 };
        let out = link_simulate(frames(100), cfg).unwrap();
        assert_eq!(out.len(), 100);
        for (i, d) in out.iter().enumerate() {
            assert_eq!(d.item, i as u64);
            assert_eq!(d.delivered_ms, d.sent_ms + 20);
        }
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let cfg = LinkConfig { loss_prob: 1.0, ..LinkConfig::default() };
        assert!(link_simulate(frames(1000), cfg).unwrap().is_empty());
    }

    #[test]
    fn loss_count_is_binomial() {
        let (n, p) = (10_000u64, 0.1);
        let cfg = LinkConfig { loss_prob: p, seed: 99, ..LinkConfig::default() };
        let got = link_simulate(frames(n), cfg).unwrap().len() as f64;
        let mean = n as f64 * (1.0 - p);
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((got - mean).abs() <= 3.0 * sd, "{got} vs {mean} ± {sd}");
    }

    #[test]
    fn jitter_keeps_fifo_order() {
        let cfg = LinkConfig { loss_prob: 0.2, latency_ms: 5.0, jitter_ms: 40.0, seed: 3 };
        let out = link_simulate(frames(2000), cfg).unwrap();
        assert!(out.windows(2).all(|w| w[0].item < w[1].item && w[0].delivered_ms <= w[1].delivered_ms));
        assert!(out.iter().all(|d| d.delivered_ms >= d.sent_ms + 5));
    }

    #[test]
    fn rejects_bad_probability() {
        assert_eq!(Link::<u8>::new(LinkConfig { loss_prob: 1.5, ..LinkConfig::default() }).unwrap_err(), LinkError::Loss(1.5));
    }
}
