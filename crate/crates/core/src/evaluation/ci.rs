use crate::error::{Error, Result};

/// Two-sided 97.5% quantiles of Student's t for 1 to 30 degrees of freedom.
const T975: [f64; 30] = [
    12.706204736432095,
    4.302652729696142,
    3.182446305284263,
    2.7764451051977987,
    2.570581835636314,
    2.4469118511449692,
    2.3646242515927844,
    2.306004135204166,
    2.2621571628540993,
    2.2281388519649385,
    2.200985160082949,
    2.1788128296634177,
    2.1603686564610127,
    2.1447866879169273,
    2.131449545559323,
    2.1199052992210112,
    2.1098155778331806,
    2.10092204024096,
    2.093024054408263,
    2.0859634472658364,
    2.079613844727662,
    2.0738730679040147,
    2.0686576104190406,
    2.0638985616280205,
    2.059538552753294,
    2.055529438642871,
    2.0518305164802833,
    2.048407141795244,
    2.045229642132703,
    2.0422724563012373,
];

/// 97.5% quantile of the standard normal.
const Z975: f64 = 1.959963984540054;

/// 97.5% quantile of Student's t with `df` degrees of freedom: tabulated up
/// to 30, then the Cornish-Fisher expansion around the normal quantile.
pub fn t_quantile_975(df: usize) -> Result<f64> {
    match df {
        0 => Err(Error::invalid(
            "t quantile needs at least one degree of freedom",
        )),
        1..=30 => Ok(T975[df - 1]),
        _ => {
            let z = Z975;
            let n = df as f64;
            let z3 = z.powi(3);
            let z5 = z.powi(5);
            let z7 = z.powi(7);
            let z9 = z.powi(9);
            let g1 = (z3 + z) / 4.0;
            let g2 = (5.0 * z5 + 16.0 * z3 + 3.0 * z) / 96.0;
            let g3 = (3.0 * z7 + 19.0 * z5 + 17.0 * z3 - 15.0 * z) / 384.0;
            let g4 = (79.0 * z9 + 776.0 * z7 + 1482.0 * z5 - 1920.0 * z3 - 945.0 * z) / 92160.0;
            Ok(z + g1 / n + g2 / n.powi(2) + g3 / n.powi(3) + g4 / n.powi(4))
        }
    }
}

/// Mean and 95% confidence half-width `t · s / √n` using the sample
/// standard deviation.
pub fn ci95_t(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "confidence interval needs at least 2 samples, got {n}"
        )));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half = t_quantile_975(n - 1)? * var.sqrt() / (n as f64).sqrt();
    Ok((mean, half))
}
