//! Split a noisy daily cycle into its smooth trend and residual detail.
//!
//! `cargo run --example wavelet_features`

use std::f64::consts::TAU;

use stam::wavefeat::{dwt, split_low_high, WaveletBasis, WaveletConfig};

fn main() -> stam::Result<()> {
    let x: Vec<f64> = (0..96)
        .map(|t| 100.0 + 30.0 * (TAU * t as f64 / 96.0).sin() + if t % 3 == 0 { 4.0 } else { -2.0 })
        .collect();
    for basis in [WaveletBasis::Haar, WaveletBasis::Db2] {
        let cfg = WaveletConfig { basis, level: 2 };
        let bands = dwt(&x, &cfg)?;
        let (low, high) = split_low_high(&x, &cfg)?;
        let err = x.iter().zip(low.iter().zip(&high)).map(|(v, (l, h))| (v - l - h).abs()).fold(0.0, f64::max);
        let energy = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        println!(
            "{basis:?}: band lengths {:?}, high-band energy {:.1}, reconstruction error {err:.1e}",
            bands.iter().map(Vec::len).collect::<Vec<_>>(),
            energy(&high)
        );
        println!("  first steps  x {:?}", &x[..4].iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>());
        println!("             low {:?}", &low[..4].iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>());
    }
    Ok(())
}
