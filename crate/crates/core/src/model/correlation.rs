//! Per-channel valid-mode cross-correlation of detection features with
//! template features (no kernel flip).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

/// Output is `(hx - hz + 1) x (wx - wz + 1) x c`; channel `k` only sees
/// channel `k` of both inputs.
pub fn channelwise_correlate<T: Scalar>(fx: &FeatureMap<T>, fz: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    let (hx, wx, c) = fx.shape();
    let (hz, wz, cz) = fz.shape();
    if c != cz {
        return Err(Error::shape(
            "channelwise_correlate",
            format!("{c} template channels"),
            format!("{cz}"),
        ));
    }
    if hz > hx || wz > wx {
        return Err(Error::shape(
            "channelwise_correlate",
            format!("template no larger than {hx}x{wx}"),
            format!("{hz}x{wz}"),
        ));
    }
    let (oh, ow) = (hx - hz + 1, wx - wz + 1);
    let mut out = FeatureMap::zeros(oh, ow, c);
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = out.pixel_mut(oy, ox);
            for ky in 0..hz {
                for kx in 0..wz {
                    let xp = fx.pixel(oy + ky, ox + kx);
                    let zp = fz.pixel(ky, kx);
                    for k in 0..c {
                        acc[k] += xp[k] * zp[k];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(d fx, d fz)`.
pub fn correlate_backward<T: Scalar>(
    d_out: &FeatureMap<T>,
    fx: &FeatureMap<T>,
    fz: &FeatureMap<T>,
) -> (FeatureMap<T>, FeatureMap<T>) {
    let (hz, wz, c) = fz.shape();
    let (oh, ow, _) = d_out.shape();
    let mut dfx = FeatureMap::zeros(fx.height(), fx.width(), c);
    let mut dfz = FeatureMap::zeros(hz, wz, c);
    for oy in 0..oh {
        for ox in 0..ow {
            let g = d_out.pixel(oy, ox);
            for ky in 0..hz {
                for kx in 0..wz {
                    let zp = fz.pixel(ky, kx);
                    let xp = fx.pixel(oy + ky, ox + kx);
                    let dz = dfz.pixel_mut(ky, kx);
                    for k in 0..c {
                        dz[k] += g[k] * xp[k];
                    }
                    let dxp = dfx.pixel_mut(oy + ky, ox + kx);
                    for k in 0..c {
                        dxp[k] += g[k] * zp[k];
                    }
                }
            }
        }
    }
    (dfx, dfz)
}
