//! Classical fourth-order Runge-Kutta stepping.

use crate::error::{Error, Result};

/// State vector operations the integrator needs. Implementations must not
/// allocate.
pub trait OdeVector {
    fn copy_from(&mut self, other: &Self);
    /// `self += a * x`
    fn axpy(&mut self, a: f64, x: &Self);
    /// `self = a * x`
    fn set_scaled(&mut self, a: f64, x: &Self);
    /// `self += delta` with Kahan compensation carried in `carry`.
    fn add_compensated(&mut self, delta: &Self, carry: &mut Self);
    fn all_finite(&self) -> bool;
}

impl OdeVector for f64 {
    fn copy_from(&mut self, other: &Self) {
        *self = *other;
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        *self += a * x;
    }

    fn set_scaled(&mut self, a: f64, x: &Self) {
        *self = a * x;
    }

    fn add_compensated(&mut self, delta: &Self, carry: &mut Self) {
        kahan(self, *delta, carry);
    }

    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl OdeVector for Vec<f64> {
    fn copy_from(&mut self, other: &Self) {
        self.copy_from_slice(other);
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        self.iter_mut().zip(x).for_each(|(s, x)| *s += a * x);
    }

    fn set_scaled(&mut self, a: f64, x: &Self) {
        self.iter_mut().zip(x).for_each(|(s, x)| *s = a * x);
    }

    fn add_compensated(&mut self, delta: &Self, carry: &mut Self) {
        for ((s, d), c) in self.iter_mut().zip(delta).zip(carry.iter_mut()) {
            kahan(s, *d, c);
        }
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// One Kahan summation step, generic over anything with exact-rounding
/// `+` and `-` (complex numbers included).
#[inline]
pub fn kahan<T>(sum: &mut T, delta: T, carry: &mut T)
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    let y = delta - *carry;
    let t = *sum + y;
    *carry = (t - *sum) - y;
    *sum = t;
}

/// Right-hand side `du/dt = f(t, u)`.
pub trait Rhs<S> {
    fn eval(&mut self, t: f64, u: &S, du: &mut S) -> Result<()>;

    /// Combines the per-rank finiteness verdict into a global one. Ranks
    /// must agree, otherwise some would continue into collectives that the
    /// others abandoned.
    fn agree_finite(&mut self, local_ok: bool) -> Result<bool> {
        Ok(local_ok)
    }
}

impl<S, F> Rhs<S> for F
where
    F: FnMut(f64, &S, &mut S) -> Result<()>,
{
    fn eval(&mut self, t: f64, u: &S, du: &mut S) -> Result<()> {
        self(t, u, du)
    }
}

#[derive(Debug, Clone)]
pub struct Rk4State<S> {
    pub u: S,
    /// Solution at the start of the current step.
    u0: S,
    accumulator: S,
    stage_rhs: S,
    /// Low-order bits lost when adding increments to `u`.
    carry: S,
    pub t: f64,
    pub step: u64,
}

impl<S: Clone + OdeVector> Rk4State<S> {
    pub fn new(u: S, t: f64) -> Self {
        let mut carry = u.clone();
        carry.set_scaled(0.0, &u);
        Rk4State {
            carry,
            u0: u.clone(),
            accumulator: u.clone(),
            stage_rhs: u.clone(),
            u,
            t,
            step: 0,
        }
    }

    pub fn into_inner(self) -> S {
        self.u
    }
}

const STAGE_TIME: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
const WEIGHTS: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

/// One classical RK4 step of size `dt`. On non-finite values the state is
/// rolled back to the start of the step and a divergence error is returned.
pub fn rk4_step<S, F>(state: &mut Rk4State<S>, dt: f64, rhs: &mut F) -> Result<()>
where
    S: OdeVector,
    F: Rhs<S> + ?Sized,
{
    let Rk4State { u, u0, accumulator, stage_rhs, carry, t, step } = state;
    u0.copy_from(u);
    for s in 0..4 {
        rhs.eval(*t + STAGE_TIME[s] * dt, u, stage_rhs)?;
        if s == 0 {
            accumulator.set_scaled(WEIGHTS[0] * dt, stage_rhs);
        } else {
            accumulator.axpy(WEIGHTS[s] * dt, stage_rhs);
        }
        if s < 3 {
            u.copy_from(u0);
            u.axpy(STAGE_TIME[s + 1] * dt, stage_rhs);
        }
    }
    // The increment is summed on its own scale and added to the state once,
    // compensated, so long runs do not accumulate rounding of `u`.
    let ok = rhs.agree_finite(accumulator.all_finite())?;
    if !ok {
        u.copy_from(u0);
        return Err(Error::Divergence { step: *step + 1 });
    }
    u.copy_from(u0);
    u.add_compensated(accumulator, carry);
    *step += 1;
    Ok(())
}

/// Number of steps to reach `t_end` with step `dt`, the last one possibly
/// shortened. Ratios within rounding of an integer are not rounded up.
pub fn step_count(t_end: f64, dt: f64) -> u64 {
    if t_end <= 0.0 {
        return 0;
    }
    let ratio = t_end / dt;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as u64
    } else {
        ratio.ceil() as u64
    }
}

/// Step `s` (1-based) of `steps` on the uniform grid `t0 + s dt`; the last
/// step is shortened so that it ends exactly on `t_end`.
pub fn advance_step<S, F>(state: &mut Rk4State<S>, t0: f64, s: u64, steps: u64, dt: f64, t_end: f64, rhs: &mut F) -> Result<()>
where
    S: OdeVector,
    F: Rhs<S> + ?Sized,
{
    let last = s == steps;
    let h = if last { (t_end - t0) - (steps - 1) as f64 * dt } else { dt };
    rk4_step(state, h, rhs)?;
    state.t = if last { t_end } else { t0 + s as f64 * dt };
    Ok(())
}

/// Advances from `state.t` to `t_end`. `hook` fires at the initial state,
/// every `out_every` steps, and at the final step.
pub fn advance<S, F, H>(state: &mut Rk4State<S>, dt: f64, t_end: f64, out_every: usize, rhs: &mut F, mut hook: H) -> Result<()>
where
    S: OdeVector,
    F: Rhs<S> + ?Sized,
    H: FnMut(&Rk4State<S>) -> Result<()>,
{
    let t0 = state.t;
    let steps = step_count(t_end - t0, dt);
    hook(state)?;
    for s in 1..=steps {
        advance_step(state, t0, s, steps, dt, t_end, rhs)?;
        if s % out_every as u64 == 0 || s == steps {
            hook(state)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_decay_matches_rk4_polynomial() {
        let mut st = Rk4State::new(1.0, 0.0);
        let mut f = |_t: f64, u: &f64, du: &mut f64| {
            *du = -u;
            Ok(())
        };
        rk4_step(&mut st, 0.1, &mut f).unwrap();
        let h: f64 = 0.1;
        let poly = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((st.u - poly).abs() < 1e-15);
        assert!((st.u - 0.9048375).abs() < 1e-12);
        assert!((st.u - (-0.1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn compensated_sum_keeps_small_increments() {
        let (mut plain, mut sum, mut carry) = (1.0f64, 1.0f64, 0.0f64);
        for _ in 0..10_000 {
            plain += 1e-16;
            kahan(&mut sum, 1e-16, &mut carry);
        }
        assert_eq!(plain, 1.0);
        assert!((sum - carry - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn zero_and_constant_rhs() {
        let mut st = Rk4State::new(vec![1.5, -2.0], 0.0);
        let mut zero = |_t: f64, _u: &Vec<f64>, du: &mut Vec<f64>| {
            du.iter_mut().for_each(|v| *v = 0.0);
            Ok(())
        };
        rk4_step(&mut st, 0.3, &mut zero).unwrap();
        assert_eq!(st.u, vec![1.5, -2.0]);

        let mut st = Rk4State::new(0.0, 0.0);
        let mut c = |_t: f64, _u: &f64, du: &mut f64| {
            *du = 2.0;
            Ok(())
        };
        rk4_step(&mut st, 0.25, &mut c).unwrap();
        assert!((st.u - 0.5).abs() < 1e-15);
    }

    #[test]
    fn time_dependent_rhs_sees_stage_times() {
        // du/dt = 3 t^2 is integrated exactly by Simpson weights.
        let mut st = Rk4State::new(0.0, 0.0);
        let mut f = |t: f64, _u: &f64, du: &mut f64| {
            *du = 3.0 * t * t;
            Ok(())
        };
        advance(&mut st, 0.5, 2.0, 1, &mut f, |_| Ok(())).unwrap();
        assert!((st.u - 8.0).abs() < 1e-13);
    }

    #[test]
    fn divergence_rolls_back() {
        let mut st = Rk4State::new(1.0, 0.0);
        let mut f = |_t: f64, u: &f64, du: &mut f64| {
            *du = if *u > 1.0 { f64::NAN } else { 1.0 };
            Ok(())
        };
        let err = rk4_step(&mut st, 0.5, &mut f).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1 }));
        assert_eq!(st.u, 1.0);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn step_counts_and_hooks() {
        assert_eq!(step_count(0.0, 1e-3), 0);
        assert_eq!(step_count(0.1, 1e-3), 100);
        assert_eq!(step_count(10.0 * 1e-3, 1e-3), 10);
        assert_eq!(step_count(0.0105, 1e-3), 11);

        let mut f = |_t: f64, _u: &f64, du: &mut f64| {
            *du = 1.0;
            Ok(())
        };
        let mut st = Rk4State::new(0.0, 0.0);
        let mut fired = Vec::new();
        advance(&mut st, 1e-3, 0.0, 3, &mut f, |s| {
            fired.push(s.step);
            Ok(())
        })
        .unwrap();
        assert_eq!(fired, vec![0]);

        let mut st = Rk4State::new(0.0, 0.0);
        let mut fired = Vec::new();
        advance(&mut st, 1e-3, 0.0105, 3, &mut f, |s| {
            fired.push((s.step, s.t));
            Ok(())
        })
        .unwrap();
        let steps: Vec<u64> = fired.iter().map(|f| f.0).collect();
        assert_eq!(steps, vec![0, 3, 6, 9, 11]);
        assert_eq!(fired.last().unwrap().1, 0.0105);
        assert_eq!(fired[1].1, 3.0 * 1e-3);
        // Constant rate integrates exactly, including the short last step.
        assert!((st.u - 0.0105).abs() < 1e-15);
    }
}
