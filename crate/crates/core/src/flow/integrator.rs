//! Dormand–Prince 8(5,3) integrator.
//!
//! Steps are clipped so that every requested output time is hit exactly,
//! which gives grid output at full step accuracy without an interpolant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// States whose guarded part exceeds this norm are treated as divergent.
pub const DIVERGENCE_GUARD: f64 = 1e4;

const MAX_STEPS_PER_CALL: usize = 10_000_000;

/// Mixed relative/absolute error tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    pub fn new(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rtol > 0.0 && self.atol > 0.0 && self.rtol.is_finite() && self.atol.is_finite() {
            Ok(())
        } else {
            Err(Error::Input(format!("tolerance must be positive, got {self:?}")))
        }
    }
}

impl From<f64> for Tolerance {
    fn from(tol: f64) -> Self {
        Self::new(tol)
    }
}

/// Right-hand side of an autonomous ODE, possibly augmented.
pub(crate) trait Rhs {
    fn eval(&self, y: &[f64], dy: &mut [f64]);

    /// Norm checked against the divergence guard.
    fn guard_norm(&self, y: &[f64]) -> f64;

    /// Per-component error scales for a step from `y_old` to `y_new`.
    fn scales(&self, tol: &Tolerance, y_old: &[f64], y_new: &[f64], sc: &mut [f64]) {
        for i in 0..sc.len() {
            sc[i] = tol.atol + tol.rtol * y_old[i].abs().max(y_new[i].abs());
        }
    }
}

/// Reusable DOP853 workspace. The step size suggestion carries over between
/// calls to [`Dop853::advance`].
pub(crate) struct Dop853 {
    tol: Tolerance,
    k: [Vec<f64>; 12],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    sc: Vec<f64>,
    h: f64,
    have_k1: bool,
    pub steps: usize,
    pub rejected: usize,
}

impl Dop853 {
    pub fn new(n: usize, tol: Tolerance) -> Self {
        Self {
            tol,
            k: std::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
            ynew: vec![0.0; n],
            sc: vec![0.0; n],
            h: 0.0,
            have_k1: false,
            steps: 0,
            rejected: 0,
        }
    }

    /// Forget the cached derivative (call after modifying `y` externally).
    pub fn invalidate(&mut self) {
        self.have_k1 = false;
    }

    fn initial_step<R: Rhs>(&mut self, rhs: &R, y: &[f64], dir: f64) -> f64 {
        let n = y.len();
        let (k1, rest) = self.k.split_at_mut(1);
        let k1 = &k1[0];
        let k2 = &mut rest[0];
        rhs.scales(&self.tol, y, y, &mut self.sc);
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..n {
            d0 += (y[i] / self.sc[i]).powi(2);
            d1 += (k1[i] / self.sc[i]).powi(2);
        }
        d0 = (d0 / n as f64).sqrt();
        d1 = (d1 / n as f64).sqrt();
        let mut h0 = if d0 < 1e-10 || d1 < 1e-10 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h0 = h0.min(1.0);
        for i in 0..n {
            self.ytmp[i] = y[i] + dir * h0 * k1[i];
        }
        rhs.eval(&self.ytmp, k2);
        let mut d2 = 0.0;
        for i in 0..n {
            d2 += ((k2[i] - k1[i]) / self.sc[i]).powi(2);
        }
        d2 = (d2 / n as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 8.0)
        };
        (100.0 * h0).min(h1).min(1.0)
    }

    /// Integrate `y` from `*t` to `t_end` (either direction). On success
    /// `*t == t_end` exactly.
    pub fn advance<R: Rhs>(&mut self, rhs: &R, y: &mut [f64], t: &mut f64, t_end: f64) -> Result<()> {
        let span = t_end - *t;
        if span == 0.0 {
            return Ok(());
        }
        let dir = span.signum();
        if !self.have_k1 {
            let (k1, _) = self.k.split_at_mut(1);
            rhs.eval(y, &mut k1[0]);
            self.have_k1 = true;
        }
        if self.h == 0.0 || self.h.signum() != dir {
            self.h = dir * self.initial_step(rhs, y, dir);
        }
        let mut last_rejected = false;
        let mut count = 0usize;
        loop {
            let remaining = t_end - *t;
            if remaining * dir <= 0.0 {
                *t = t_end;
                return Ok(());
            }
            count += 1;
            if count > MAX_STEPS_PER_CALL {
                return Err(Error::StepSize { time: *t });
            }
            let clipped = self.h.abs() >= remaining.abs();
            let h = if clipped { remaining } else { self.h };
            if h.abs() <= 1e-14 * t.abs().max(1.0) && !clipped {
                return Err(Error::StepSize { time: *t });
            }
            let err = self.try_step(rhs, y, h);
            // Step-size controller (Hairer's DOP853 defaults).
            let fac11 = err.powf(0.125);
            let fac = (1.0 / 6.0_f64).max(3.0_f64.min(fac11 / 0.9));
            let mut h_new = h / fac;
            if err <= 1.0 && err.is_finite() {
                self.steps += 1;
                let g = rhs.guard_norm(&self.ynew);
                if !g.is_finite() || g > DIVERGENCE_GUARD {
                    return Err(Error::Divergence { last_valid_time: *t });
                }
                y.copy_from_slice(&self.ynew);
                // k4 holds f(ynew) after try_step's FSAL evaluation.
                let (first, rest) = self.k.split_at_mut(1);
                first[0].copy_from_slice(&rest[2]);
                *t = if clipped { t_end } else { *t + h };
                if last_rejected {
                    h_new = if dir > 0.0 { h_new.min(h) } else { h_new.max(h) };
                }
                last_rejected = false;
                // A clipped step should not shrink the next suggestion.
                if clipped {
                    if h_new.abs() > self.h.abs() {
                        self.h = h_new;
                    }
                } else {
                    self.h = h_new;
                }
            } else {
                self.rejected += 1;
                last_rejected = true;
                let shrink = if err.is_finite() {
                    h / 3.0_f64.min(fac11 / 0.9)
                } else {
                    h * 0.1
                };
                self.h = shrink;
            }
        }
    }

    /// One DOP853 step of size `h` from `y` (k[0] must hold f(y)).
    /// Writes the candidate into `ynew`, f(ynew) into k[3], returns the
    /// scaled error norm.
    fn try_step<R: Rhs>(&mut self, rhs: &R, y: &[f64], h: f64) -> f64 {
        let n = y.len();
        let [k1, k2, k3, k4, k5, k6, k7, k8, k9, k10, k11, k12] = &mut self.k;
        let yt = &mut self.ytmp;

        for i in 0..n {
            yt[i] = y[i] + h * A21 * k1[i];
        }
        rhs.eval(yt, k2);
        for i in 0..n {
            yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs.eval(yt, k3);
        for i in 0..n {
            yt[i] = y[i] + h * (A41 * k1[i] + A43 * k3[i]);
        }
        rhs.eval(yt, k4);
        for i in 0..n {
            yt[i] = y[i] + h * (A51 * k1[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs.eval(yt, k5);
        for i in 0..n {
            yt[i] = y[i] + h * (A61 * k1[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs.eval(yt, k6);
        for i in 0..n {
            yt[i] = y[i] + h * (A71 * k1[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs.eval(yt, k7);
        for i in 0..n {
            yt[i] = y[i]
                + h * (A81 * k1[i] + A84 * k4[i] + A85 * k5[i] + A86 * k6[i] + A87 * k7[i]);
        }
        rhs.eval(yt, k8);
        for i in 0..n {
            yt[i] = y[i]
                + h * (A91 * k1[i]
                    + A94 * k4[i]
                    + A95 * k5[i]
                    + A96 * k6[i]
                    + A97 * k7[i]
                    + A98 * k8[i]);
        }
        rhs.eval(yt, k9);
        for i in 0..n {
            yt[i] = y[i]
                + h * (A101 * k1[i]
                    + A104 * k4[i]
                    + A105 * k5[i]
                    + A106 * k6[i]
                    + A107 * k7[i]
                    + A108 * k8[i]
                    + A109 * k9[i]);
        }
        rhs.eval(yt, k10);
        for i in 0..n {
            yt[i] = y[i]
                + h * (A111 * k1[i]
                    + A114 * k4[i]
                    + A115 * k5[i]
                    + A116 * k6[i]
                    + A117 * k7[i]
                    + A118 * k8[i]
                    + A119 * k9[i]
                    + A1110 * k10[i]);
        }
        rhs.eval(yt, k11);
        for i in 0..n {
            yt[i] = y[i]
                + h * (A121 * k1[i]
                    + A124 * k4[i]
                    + A125 * k5[i]
                    + A126 * k6[i]
                    + A127 * k7[i]
                    + A128 * k8[i]
                    + A129 * k9[i]
                    + A1210 * k10[i]
                    + A1211 * k11[i]);
        }
        rhs.eval(yt, k12);

        let ynew = &mut self.ynew;
        // Increment and both error estimators.
        let mut err = 0.0;
        let mut err2 = 0.0;
        for i in 0..n {
            let inc = B1 * k1[i]
                + B6 * k6[i]
                + B7 * k7[i]
                + B8 * k8[i]
                + B9 * k9[i]
                + B10 * k10[i]
                + B11 * k11[i]
                + B12 * k12[i];
            ynew[i] = y[i] + h * inc;
            // Stash the increment for the second estimator.
            yt[i] = inc;
        }
        rhs.scales(&self.tol, y, ynew, &mut self.sc);
        for i in 0..n {
            let sk = self.sc[i];
            let e2 = yt[i] - BHH1 * k1[i] - BHH2 * k9[i] - BHH3 * k12[i];
            err2 += (e2 / sk).powi(2);
            let e = ER1 * k1[i]
                + ER6 * k6[i]
                + ER7 * k7[i]
                + ER8 * k8[i]
                + ER9 * k9[i]
                + ER10 * k10[i]
                + ER11 * k11[i]
                + ER12 * k12[i];
            err += (e / sk).powi(2);
        }
        let mut deno = err + 0.01 * err2;
        if deno <= 0.0 {
            deno = 1.0;
        }
        let err = h.abs() * err * (1.0 / (deno * n as f64)).sqrt();
        if err <= 1.0 && err.is_finite() {
            rhs.eval(ynew, k4);
        }
        err
    }
}

// Butcher tableau and error weights of DOP853 (Hairer, Nørsett & Wanner).
const A21: f64 = 5.26001519587677318785587544488E-2;
const A31: f64 = 1.97250569845378994544595329183E-2;
const A32: f64 = 5.91751709536136983633785987549E-2;
const A41: f64 = 2.95875854768068491816892993775E-2;
const A43: f64 = 8.87627564304205475450678981324E-2;
const A51: f64 = 2.41365134159266685502369798665E-1;
const A53: f64 = -8.84549479328286085344864962717E-1;
const A54: f64 = 9.24834003261792003115737966543E-1;
const A61: f64 = 3.7037037037037037037037037037E-2;
const A64: f64 = 1.70828608729473871279604482173E-1;
const A65: f64 = 1.25467687566822425016691814123E-1;
const A71: f64 = 3.7109375E-2;
const A74: f64 = 1.70252211019544039314978060272E-1;
const A75: f64 = 6.02165389804559606850219397283E-2;
const A76: f64 = -1.7578125E-2;
const A81: f64 = 3.70920001185047927108779319836E-2;
const A84: f64 = 1.70383925712239993810214054705E-1;
const A85: f64 = 1.07262030446373284651809199168E-1;
const A86: f64 = -1.53194377486244017527936158236E-2;
const A87: f64 = 8.27378916381402288758473766002E-3;
const A91: f64 = 6.24110958716075717114429577812E-1;
const A94: f64 = -3.36089262944694129406857109825E0;
const A95: f64 = -8.68219346841726006818189891453E-1;
const A96: f64 = 2.75920996994467083049415600797E1;
const A97: f64 = 2.01540675504778934086186788979E1;
const A98: f64 = -4.34898841810699588477366255144E1;
const A101: f64 = 4.77662536438264365890433908527E-1;
const A104: f64 = -2.48811461997166764192642586468E0;
const A105: f64 = -5.90290826836842996371446475743E-1;
const A106: f64 = 2.12300514481811942347288949897E1;
const A107: f64 = 1.52792336328824235832596922938E1;
const A108: f64 = -3.32882109689848629194453265587E1;
const A109: f64 = -2.03312017085086261358222928593E-2;
const A111: f64 = -9.3714243008598732571704021658E-1;
const A114: f64 = 5.18637242884406370830023853209E0;
const A115: f64 = 1.09143734899672957818500254654E0;
const A116: f64 = -8.14978701074692612513997267357E0;
const A117: f64 = -1.85200656599969598641566180701E1;
const A118: f64 = 2.27394870993505042818970056734E1;
const A119: f64 = 2.49360555267965238987089396762E0;
const A1110: f64 = -3.0467644718982195003823669022E0;
const A121: f64 = 2.27331014751653820792359768449E0;
const A124: f64 = -1.05344954667372501984066689879E1;
const A125: f64 = -2.00087205822486249909675718444E0;
const A126: f64 = -1.79589318631187989172765950534E1;
const A127: f64 = 2.79488845294199600508499808837E1;
const A128: f64 = -2.85899827713502369474065508674E0;
const A129: f64 = -8.87285693353062954433549289258E0;
const A1210: f64 = 1.23605671757943030647266201528E1;
const A1211: f64 = 6.43392746015763530355970484046E-1;

const B1: f64 = 5.42937341165687622380535766363E-2;
const B6: f64 = 4.45031289275240888144113950566E0;
const B7: f64 = 1.89151789931450038304281599044E0;
const B8: f64 = -5.8012039600105847814672114227E0;
const B9: f64 = 3.1116436695781989440891606237E-1;
const B10: f64 = -1.52160949662516078556178806805E-1;
const B11: f64 = 2.01365400804030348374776537501E-1;
const B12: f64 = 4.47106157277725905176885569043E-2;

const BHH1: f64 = 0.244094488188976377952755905512E+00;
const BHH2: f64 = 0.733846688281611857341361741547E+00;
const BHH3: f64 = 0.220588235294117647058823529412E-01;

const ER1: f64 = 0.1312004499419488073250102996E-01;
const ER6: f64 = -0.1225156446376204440720569753E+01;
const ER7: f64 = -0.4957589496572501915214079952E+00;
const ER8: f64 = 0.1664377182454986536961530415E+01;
const ER9: f64 = -0.3503288487499736816886487290E+00;
const ER10: f64 = 0.3341791187130174790297318841E+00;
const ER11: f64 = 0.8192320648511571246570742613E-01;
const ER12: f64 = -0.2235530786388629525884427845E-01;

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl Rhs for Decay {
        fn eval(&self, y: &[f64], dy: &mut [f64]) {
            dy[0] = -y[0];
            dy[1] = 2.0 * y[1];
        }
        fn guard_norm(&self, y: &[f64]) -> f64 {
            y.iter().map(|a| a * a).sum::<f64>().sqrt()
        }
    }

    struct Oscillator;
    impl Rhs for Oscillator {
        fn eval(&self, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
        fn guard_norm(&self, y: &[f64]) -> f64 {
            y[0].abs().max(y[1].abs())
        }
    }

    #[test]
    fn exponential_solution() {
        let mut ig = Dop853::new(2, Tolerance::new(1e-12));
        let mut y = [1.0, 1.0];
        let mut t = 0.0;
        ig.advance(&Decay, &mut y, &mut t, 1.0).unwrap();
        assert_eq!(t, 1.0);
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-11);
        assert!((y[1] - 2.0f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn backward_and_piecewise_calls_agree() {
        let mut ig = Dop853::new(2, Tolerance::new(1e-12));
        let mut y = [1.0, 0.0];
        let mut t = 0.0;
        for k in 1..=10 {
            ig.advance(&Oscillator, &mut y, &mut t, 0.3 * k as f64).unwrap();
        }
        assert!((y[0] - 3.0f64.cos()).abs() < 1e-10);
        ig.invalidate();
        ig.advance(&Oscillator, &mut y, &mut t, 0.0).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10 && y[1].abs() < 1e-10);
    }

    #[test]
    fn divergence_guard_reports_last_time() {
        let mut ig = Dop853::new(2, Tolerance::new(1e-8));
        let mut y = [0.0, 1.0];
        let mut t = 0.0;
        let err = ig.advance(&Decay, &mut y, &mut t, 10.0).unwrap_err();
        match err {
            Error::Divergence { last_valid_time } => {
                // e^{2t} = 1e4 at t = 4.6.
                assert!(last_valid_time > 4.0 && last_valid_time < 4.61);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
