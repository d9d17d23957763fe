//! Real spherical harmonics up to degree 4, evaluated from Cartesian
//! coordinates of a unit vector.

use crate::math::Vec3;

pub const SH_DEGREE: usize = 4;
pub const SH_COUNT: usize = (SH_DEGREE + 1) * (SH_DEGREE + 1);

/// Writes the 25 basis values for unit direction `d` into `out`.
pub fn eval_into(d: Vec3, out: &mut [f64]) {
    assert!(out.len() >= SH_COUNT);
    let (x, y, z) = (d.x, d.y, d.z);
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[0] = 0.28209479177387814;
    out[1] = -0.48860251190291987 * y;
    out[2] = 0.48860251190291987 * z;
    out[3] = -0.48860251190291987 * x;
    out[4] = 1.0925484305920792 * xy;
    out[5] = -1.0925484305920792 * yz;
    out[6] = 0.94617469575755997 * z2 - 0.31539156525251999;
    out[7] = -1.0925484305920792 * xz;
    out[8] = 0.54627421529603959 * (x2 - y2);
    out[9] = 0.59004358992664352 * y * (-3.0 * x2 + y2);
    out[10] = 2.8906114426405538 * xy * z;
    out[11] = 0.45704579946446572 * y * (1.0 - 5.0 * z2);
    out[12] = 0.3731763325901154 * z * (5.0 * z2 - 3.0);
    out[13] = 0.45704579946446572 * x * (1.0 - 5.0 * z2);
    out[14] = 1.4453057213202769 * z * (x2 - y2);
    out[15] = 0.59004358992664352 * x * (-x2 + 3.0 * y2);
    out[16] = 2.5033429417967046 * xy * (x2 - y2);
    out[17] = 1.7701307697799304 * yz * (-3.0 * x2 + y2);
    out[18] = 0.94617469575756008 * xy * (7.0 * z2 - 1.0);
    out[19] = 0.66904654355728921 * yz * (3.0 - 7.0 * z2);
    out[20] = -3.1735664074561294 * z2 + 3.7024941420321507 * z2 * z2 + 0.31735664074561293;
    out[21] = 0.66904654355728921 * xz * (3.0 - 7.0 * z2);
    out[22] = 0.47308734787878004 * (x2 - y2) * (7.0 * z2 - 1.0);
    out[23] = 1.7701307697799304 * xz * (-x2 + 3.0 * y2);
    out[24] = -3.7550144126950569 * x2 * y2 + 0.62583573544917614 * (x2 * x2 + y2 * y2);
}

pub fn eval(d: Vec3) -> [f64; SH_COUNT] {
    let mut out = [0.0; SH_COUNT];
    eval_into(d, &mut out);
    out
}
