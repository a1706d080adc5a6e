//! Shows how raw high-level actions turn into bounded commands and gaits.

use gaitnav::decoder::{Decoder, DecoderConfig, HighLevelAction, ACTION_DIM, GAIT_CHANNEL};

fn main() -> gaitnav::Result<()> {
    let decoder = Decoder::new(&DecoderConfig::default())?;
    print!("{}", decoder.probe());

    // Saturation: anything beyond a_max lands on the channel bounds.
    for (label, scale) in [("all -5", -5.0), ("all zero", 0.0), ("all +0.5", 0.5), ("all +5", 5.0)] {
        let c = decoder.decode(&HighLevelAction([scale; ACTION_DIM]))?;
        let v: Vec<String> = c.continuous.iter().map(|x| format!("{x:+.2}")).collect();
        println!("{label:<9} -> gait {:<5} [{}]", c.gait, v.join(" "));
    }

    println!("\ngait channel sweep:");
    for k in -4..=4 {
        let mut a = [0.0; ACTION_DIM];
        a[GAIT_CHANNEL] = k as f64 / 4.0;
        let c = decoder.decode(&HighLevelAction(a))?;
        println!("  x = {:+.2} -> {} {:?}", a[GAIT_CHANNEL], c.gait, c.gait_embedding);
    }
    Ok(())
}
