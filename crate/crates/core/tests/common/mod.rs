#![allow(dead_code)]

use lfc_core::{Nonlinearity, Plant, PlantParams, Timing};
use nalgebra::{Matrix4, Vector4};

/// Table I values with the droop raised until the open loop is stable.
pub fn stable_params() -> PlantParams {
    PlantParams {
        r_droop: 2.4,
        ..PlantParams::default()
    }
}

pub fn linear_plant(params: PlantParams) -> Plant {
    Plant::new(params, Nonlinearity::linear()).unwrap()
}

/// State of the linear plant at `t` after a constant load `p_d` applied from rest,
/// via the exponential of the input-augmented system matrix.
pub fn expm_step_response(p: &PlantParams, p_d: f64, t: f64) -> [f64; 3] {
    let two_h = 2.0 * p.h;
    #[rustfmt::skip]
    let m = Matrix4::new(
        -p.d / two_h,             1.0 / two_h,  0.0,          -p_d / two_h,
        0.0,                      -1.0 / p.t_t, 1.0 / p.t_t,  0.0,
        -1.0 / (p.r_droop * p.t_g), 0.0,        -1.0 / p.t_g, 0.0,
        0.0,                      0.0,          0.0,          0.0,
    );
    let x = (m * t).exp() * Vector4::new(0.0, 0.0, 0.0, 1.0);
    [x[0], x[1], x[2]]
}

/// Open-loop RK4 run at step `dt` with a constant load; returns Δf at every step.
pub fn rk4_open_loop(plant: &Plant, p_d: f64, dt: f64, horizon: f64) -> Vec<lfc_core::PlantState> {
    let n = (horizon / dt).round() as usize;
    let mut s = lfc_core::PlantState::ZERO;
    let mut out = vec![s];
    for _ in 0..n {
        s = plant.step(s, 0.0, p_d, dt).unwrap();
        out.push(s);
    }
    out
}

pub fn timing() -> Timing {
    Timing::default()
}
