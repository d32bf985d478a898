//! Dormand–Prince 5(4) with Hairer's continuous extension of order 4.

use super::{FieldError, OdeConfig, OdeError, OdeStats, Trajectory};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

struct Stepper<'a, F> {
    field: F,
    cfg: &'a OdeConfig,
    work: Vec<f64>,
    stats: OdeStats,
}

impl<F> Stepper<'_, F>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), FieldError>,
{
    fn eval(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<(), OdeError> {
        self.work.copy_from_slice(y);
        if self.cfg.clamp_negative {
            let atol = self.cfg.atol;
            for v in self.work.iter_mut() {
                if *v < 0.0 && *v > -atol {
                    *v = 0.0;
                }
            }
        }
        self.stats.evaluations += 1;
        (self.field)(t, &self.work, out).map_err(|source| OdeError::Field { t, source })?;
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite {
                t,
                component: i,
                state: y.to_vec(),
            });
        }
        Ok(())
    }
}

fn initial_step<F>(s: &mut Stepper<'_, F>, t0: f64, y0: &[f64], f0: &[f64], span: f64) -> Result<f64, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), FieldError>,
{
    let n = y0.len();
    let (rtol, atol) = (s.cfg.rtol, s.cfg.atol);
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for i in 0..n {
        let sc = atol + rtol * y0[i].abs();
        d0 = d0.max((y0[i] / sc).abs());
        d1 = d1.max((f0[i] / sc).abs());
    }
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(s.cfg.max_step).min(span);
    let y1: Vec<f64> = (0..n).map(|i| y0[i] + h * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    s.eval(t0 + h, &y1, &mut f1)?;
    let mut d2: f64 = 0.0;
    for i in 0..n {
        let sc = atol + rtol * y0[i].abs();
        d2 = d2.max(((f1[i] - f0[i]) / sc).abs());
    }
    d2 /= h;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h).min(h1).min(s.cfg.max_step).min(span))
}

pub(super) fn integrate<F>(field: F, y0: &[f64], t0: f64, t_end: f64, cfg: &OdeConfig) -> Result<Trajectory, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), FieldError>,
{
    let n = y0.len();
    let mut traj = Trajectory::new(n, t0, y0);
    if t_end == t0 {
        return Ok(traj);
    }
    let mut s = Stepper {
        field,
        cfg,
        work: vec![0.0; n],
        stats: OdeStats::default(),
    };
    let span = t_end - t0;

    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ys = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut rc = vec![0.0; 5 * n];

    s.eval(t0, &y, &mut k1)?;
    let mut h = match cfg.h0 {
        Some(h) => h.min(span),
        None => initial_step(&mut s, t0, &y, &k1, span)?,
    };
    let mut t = t0;
    let mut err_old: f64 = 1e-4;
    let mut last_rejected = false;

    loop {
        if s.stats.accepted + s.stats.rejected >= cfg.max_steps {
            return Err(OdeError::TooManySteps {
                t,
                steps: cfg.max_steps,
            });
        }
        let last = t + h >= t_end || (t_end - (t + h)) <= 1e-12 * t_end.abs().max(1.0);
        if last {
            h = t_end - t;
        }
        if h.abs() <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(OdeError::StepUnderflow { t, h, state: y.clone() });
        }

        for i in 0..n {
            ys[i] = y[i] + h * A21 * k1[i];
        }
        s.eval(t + C2 * h, &ys, &mut k2)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        s.eval(t + C3 * h, &ys, &mut k3)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        s.eval(t + C4 * h, &ys, &mut k4)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        s.eval(t + C5 * h, &ys, &mut k5)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let tph = if last { t_end } else { t + h };
        s.eval(tph, &ys, &mut k6)?;
        for i in 0..n {
            ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        s.eval(tph, &ynew, &mut k7)?;

        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = cfg.atol + cfg.rtol * y[i].abs().max(ynew[i].abs());
            err = err.max((e / sc).abs());
        }
        if !err.is_finite() {
            err = 1e10;
        }

        if err <= 1.0 {
            s.stats.accepted += 1;
            for i in 0..n {
                let dy = ynew[i] - y[i];
                let bspl = h * k1[i] - dy;
                rc[i] = y[i];
                rc[n + i] = dy;
                rc[2 * n + i] = bspl;
                rc[3 * n + i] = dy - h * k7[i] - bspl;
                rc[4 * n + i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            traj.push(tph, &ynew, &rc);
            t = tph;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            if last {
                break;
            }
            let err_c = err.max(1e-10);
            let mut fac = SAFETY * err_c.powf(-0.2 + 0.75 * BETA) * err_old.powf(-BETA);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            err_old = err_c;
            last_rejected = false;
            h = (h * fac).min(cfg.max_step);
        } else {
            s.stats.rejected += 1;
            last_rejected = true;
            let fac = (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0);
            h *= fac;
        }
    }
    traj.stats = s.stats;
    Ok(traj)
}

/// Evaluates the continuous extension on one step.
pub(super) fn dense_eval(rc: &[f64], n: usize, theta: f64, out: &mut [f64]) {
    let theta1 = 1.0 - theta;
    for i in 0..n {
        out[i] =
            rc[i] + theta * (rc[n + i] + theta1 * (rc[2 * n + i] + theta * (rc[3 * n + i] + theta1 * rc[4 * n + i])));
    }
}
