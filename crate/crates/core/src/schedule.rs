//! Noise schedule with zero-terminal-SNR rescaling, v-parameterization,
//! deterministic DDIM stepping and classifier-free guidance.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(serde::Serialize, serde::Deserialize, Debug, Clone, Copy, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub rescale_zero_terminal: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 0.00085,
            beta_end: 0.012,
            rescale_zero_terminal: true,
        }
    }
}

/// `alphabar[t]` for `t` in `0..=T`, with `alphabar[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphabar: Vec<f64>,
    sqrt_alphabar: Vec<f64>,
    sqrt_one_minus: Vec<f64>,
}

pub fn make_schedule(cfg: &ScheduleConfig) -> Result<NoiseSchedule> {
    let ScheduleConfig {
        steps,
        beta_start,
        beta_end,
        rescale_zero_terminal,
    } = *cfg;
    if steps == 0 {
        return Err(Error::Schedule("T must be at least 1".into()));
    }
    if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
        return Err(Error::Schedule(format!(
            "need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    if rescale_zero_terminal && steps < 2 {
        return Err(Error::Schedule(
            "zero-terminal rescale needs T >= 2 (it pins both t=1 and t=T)".into(),
        ));
    }
    let mut alphabar = Vec::with_capacity(steps + 1);
    alphabar.push(1.0);
    let mut acc = 1.0;
    for s in 1..=steps {
        let frac = if steps == 1 {
            0.0
        } else {
            (s - 1) as f64 / (steps - 1) as f64
        };
        let beta = beta_start + (beta_end - beta_start) * frac;
        acc *= 1.0 - beta;
        alphabar.push(acc);
    }
    if rescale_zero_terminal {
        let sq: Vec<f64> = alphabar.iter().map(|&a| libm::sqrt(a)).collect();
        let (s1, s_last) = (sq[1], sq[steps]);
        let mut out = Vec::with_capacity(steps + 1);
        out.push(1.0);
        for (t, &s) in sq.iter().enumerate().skip(1) {
            // endpoints are the map's exact values: s_1 -> s_1, s_T -> 0
            let mapped = if t == 1 {
                s1
            } else if t == steps {
                0.0
            } else {
                (s - s_last) * s1 / (s1 - s_last)
            };
            out.push(mapped * mapped);
        }
        // s_1^2 may differ from alphabar[1] by rounding; keep the original
        out[1] = alphabar[1];
        alphabar = out;
    }
    Ok(NoiseSchedule::from_alphabar(alphabar))
}

fn check_shapes(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn combine(a: &Tensor, wa: f64, b: &Tensor, wb: f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| wa * x + wb * y)
        .collect();
    Tensor::from_raw(a.shape().to_vec(), data)
}

impl NoiseSchedule {
    pub fn from_alphabar(alphabar: Vec<f64>) -> Self {
        let sqrt_alphabar = alphabar.iter().map(|&a| libm::sqrt(a)).collect();
        let sqrt_one_minus = alphabar.iter().map(|&a| libm::sqrt(1.0 - a)).collect();
        Self {
            alphabar,
            sqrt_alphabar,
            sqrt_one_minus,
        }
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alphabar.len() - 1
    }

    pub fn alphabar(&self) -> &[f64] {
        &self.alphabar
    }

    pub fn alphabar_at(&self, t: usize) -> f64 {
        self.alphabar[t]
    }

    pub fn snr(&self, t: usize) -> f64 {
        let a = self.alphabar[t];
        a / (1.0 - a)
    }

    fn coeffs(&self, t: usize) -> Result<(f64, f64)> {
        if t > self.steps() {
            return Err(Error::Timestep(format!("t={t} exceeds T={}", self.steps())));
        }
        Ok((self.sqrt_alphabar[t], self.sqrt_one_minus[t]))
    }

    /// `z_t = √ᾱ_t z + √(1-ᾱ_t) ε`.
    pub fn forward_diffuse(&self, z: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        check_shapes("forward_diffuse", z, eps)?;
        let (a, b) = self.coeffs(t)?;
        Ok(combine(z, a, eps, b))
    }

    /// `v = √ᾱ_t ε - √(1-ᾱ_t) z`.
    pub fn v_target(&self, z: &Tensor, eps: &Tensor, t: usize) -> Result<Tensor> {
        check_shapes("v_target", z, eps)?;
        let (a, b) = self.coeffs(t)?;
        Ok(combine(eps, a, z, -b))
    }

    /// Inverts the v rotation: returns `(z0_pred, eps_pred)`.
    pub fn from_v(&self, z_t: &Tensor, v: &Tensor, t: usize) -> Result<(Tensor, Tensor)> {
        check_shapes("from_v", z_t, v)?;
        let (a, b) = self.coeffs(t)?;
        Ok((combine(z_t, a, v, -b), combine(z_t, b, v, a)))
    }

    /// Deterministic (η = 0) DDIM update from `t` to `t_prev < t`.
    pub fn ddim_step(
        &self,
        z_t: &Tensor,
        v_pred: &Tensor,
        t: usize,
        t_prev: usize,
    ) -> Result<Tensor> {
        if t_prev >= t {
            return Err(Error::Timestep(format!(
                "ddim_step needs t_prev < t, got t={t}, t_prev={t_prev}"
            )));
        }
        let (z0, eps) = self.from_v(z_t, v_pred, t)?;
        let (a, b) = self.coeffs(t_prev)?;
        Ok(combine(&z0, a, &eps, b))
    }

    /// `sampling_steps` timesteps with uniform stride from `T` downwards,
    /// paired with their successor; the last pair steps to `t = 0`.
    pub fn ddim_timesteps(&self, sampling_steps: usize) -> Result<Vec<(usize, usize)>> {
        let total = self.steps();
        if sampling_steps == 0 || sampling_steps > total {
            return Err(Error::Timestep(format!(
                "sampling steps must be in 1..={total}, got {sampling_steps}"
            )));
        }
        let ts: Vec<usize> = (0..sampling_steps)
            .map(|i| total - i * total / sampling_steps)
            .collect();
        Ok(ts
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, ts.get(i + 1).copied().unwrap_or(0)))
            .collect())
    }
}

/// `v_uncond + scale · (v_cond - v_uncond)`.
pub fn cfg_combine(v_uncond: &Tensor, v_cond: &Tensor, scale: f64) -> Result<Tensor> {
    check_shapes("cfg_combine", v_uncond, v_cond)?;
    let data = v_uncond
        .data()
        .iter()
        .zip(v_cond.data())
        .map(|(u, c)| u + scale * (c - u))
        .collect();
    Ok(Tensor::from_raw(v_uncond.shape().to_vec(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(steps: usize, rescale: bool) -> NoiseSchedule {
        make_schedule(&ScheduleConfig {
            steps,
            rescale_zero_terminal: rescale,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn rejects_bad_betas() {
        for (b0, b1) in [(0.0, 0.1), (0.2, 0.1), (0.1, 1.0), (-0.1, 0.5)] {
            let cfg = ScheduleConfig {
                steps: 10,
                beta_start: b0,
                beta_end: b1,
                rescale_zero_terminal: false,
            };
            assert!(make_schedule(&cfg).is_err());
        }
        let cfg = ScheduleConfig {
            steps: 0,
            ..Default::default()
        };
        assert!(make_schedule(&cfg).is_err());
    }

    #[test]
    fn terminal_alphabar_is_zero_and_first_unchanged() {
        for steps in [2, 3, 10, 1000] {
            let raw = sched(steps, false);
            let s = sched(steps, true);
            assert_eq!(s.alphabar_at(steps), 0.0);
            assert_eq!(
                libm::sqrt(s.alphabar_at(1)).to_bits(),
                libm::sqrt(raw.alphabar_at(1)).to_bits()
            );
        }
    }

    #[test]
    fn two_step_linear_betas() {
        let cfg = ScheduleConfig {
            steps: 2,
            beta_start: 0.1,
            beta_end: 0.2,
            rescale_zero_terminal: false,
        };
        let s = make_schedule(&cfg).unwrap();
        assert_eq!(s.alphabar()[0], 1.0);
        assert!((s.alphabar()[1] - 0.9).abs() < 1e-15);
        assert!((s.alphabar()[2] - 0.72).abs() < 1e-15);
        let r = make_schedule(&ScheduleConfig {
            rescale_zero_terminal: true,
            ..cfg
        })
        .unwrap();
        assert!((r.alphabar()[1] - 0.9).abs() < 1e-15);
        assert_eq!(r.alphabar()[2], 0.0);
    }

    #[test]
    fn forward_diffuse_special_cases() {
        let s = NoiseSchedule::from_alphabar(alloc::vec![1.0, 0.25, 0.0]);
        let z = Tensor::new(alloc::vec![2], alloc::vec![1.0, -2.0]).unwrap();
        let e = Tensor::new(alloc::vec![2], alloc::vec![0.5, 3.0]).unwrap();
        assert_eq!(s.forward_diffuse(&z, 0, &e).unwrap(), z);
        assert_eq!(s.forward_diffuse(&z, 2, &e).unwrap(), e);
        let q = s.forward_diffuse(&z, 1, &e).unwrap();
        let b = libm::sqrt(0.75);
        assert_eq!(q.data(), &[0.5 * 1.0 + b * 0.5, 0.5 * -2.0 + b * 3.0]);
        let bad = Tensor::zeros(&[3]);
        assert!(s.forward_diffuse(&z, 1, &bad).is_err());
    }

    #[test]
    fn v_and_from_v_special_cases() {
        let s = NoiseSchedule::from_alphabar(alloc::vec![1.0, 0.0]);
        let z = Tensor::new(alloc::vec![2], alloc::vec![1.0, -2.0]).unwrap();
        let e = Tensor::new(alloc::vec![2], alloc::vec![0.5, 3.0]).unwrap();
        assert_eq!(s.v_target(&z, &e, 0).unwrap(), e);
        assert_eq!(s.v_target(&z, &e, 1).unwrap().data(), &[-1.0, 2.0]);
        let (z0, eps) = s.from_v(&z, &e, 1).unwrap();
        assert_eq!(z0.data(), &[-0.5, -3.0]);
        assert_eq!(eps, z);
        let (z0, eps) = s.from_v(&z, &Tensor::zeros(&[2]), 0).unwrap();
        assert_eq!(z0, z);
        assert_eq!(eps.data(), &[0.0, 0.0]);
    }

    #[test]
    fn ddim_to_zero_returns_z0_pred_and_checks_order() {
        let s = sched(10, true);
        let z = Tensor::from_fn(&[3], |i| i as f64 - 1.0);
        let v = Tensor::from_fn(&[3], |i| 0.3 * i as f64);
        let (z0, _) = s.from_v(&z, &v, 4).unwrap();
        assert_eq!(s.ddim_step(&z, &v, 4, 0).unwrap(), z0);
        assert!(s.ddim_step(&z, &v, 4, 4).is_err());
        assert!(s.ddim_step(&z, &v, 4, 5).is_err());
    }

    #[test]
    fn timestep_spacing() {
        let s = sched(1000, true);
        let ts = s.ddim_timesteps(50).unwrap();
        assert_eq!(ts.len(), 50);
        assert_eq!(ts[0], (1000, 980));
        assert_eq!(ts[49], (20, 0));
        assert!(s.ddim_timesteps(0).is_err());
        assert!(s.ddim_timesteps(1001).is_err());
        assert_eq!(s.ddim_timesteps(1).unwrap(), alloc::vec![(1000, 0)]);
    }

    #[test]
    fn cfg_scales() {
        let u = Tensor::from_fn(&[4], |i| i as f64);
        let c = Tensor::from_fn(&[4], |i| 2.0 * i as f64 - 1.0);
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
        let zero = Tensor::zeros(&[4]);
        let g = cfg_combine(&zero, &c, 7.5).unwrap();
        for (gv, cv) in g.data().iter().zip(c.data()) {
            assert_eq!(*gv, 7.5 * cv);
        }
        assert!(cfg_combine(&u, &Tensor::zeros(&[3]), 1.0).is_err());
    }
}
